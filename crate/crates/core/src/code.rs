//! Binary linear codes represented by a parity-check matrix and its Tanner graph.
//!
//! A [`CodeSpec`] is built from an alist file (the standard sparse text format
//! for parity-check matrices) or from a dense 0/1 text matrix, and is immutable
//! afterwards. Besides the row/column adjacency it precomputes a flat edge
//! numbering used by the message-passing decoders: edges are numbered
//! variable-major, i.e. edge ids of variable `v` occupy the contiguous range
//! `var_edge_range(v)` in the order of `var_neighbors(v)`.

use crate::error::{Error, Result};

/// A word of bits, each 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitWord(Vec<u8>);

impl BitWord {
    /// Wrap a bit vector. Panics if any entry is not 0 or 1.
    pub fn new(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "bits must be 0 or 1");
        BitWord(bits)
    }

    /// The all-zero word of length `n`.
    pub fn zeros(n: usize) -> Self {
        BitWord(vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    /// Number of set bits.
    pub fn weight(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }
}

impl From<Vec<u8>> for BitWord {
    fn from(bits: Vec<u8>) -> Self {
        BitWord::new(bits)
    }
}

impl std::ops::Index<usize> for BitWord {
    type Output = u8;
    fn index(&self, i: usize) -> &u8 {
        &self.0[i]
    }
}

/// A binary linear code: parity-check matrix, Tanner graph adjacency and
/// decoder-oriented edge indexing.
#[derive(Debug, Clone)]
pub struct CodeSpec {
    name: String,
    t_h: usize,
    n: usize,
    m: usize,
    k: usize,
    h: Vec<Vec<u8>>,
    edges: Vec<(usize, usize)>,
    var_neighbors: Vec<Vec<usize>>,
    check_neighbors: Vec<Vec<usize>>,
    // Flat variable-major edge indexing.
    var_edge_offset: Vec<usize>,
    edge_var: Vec<usize>,
    check_edge_ids: Vec<Vec<usize>>,
    // Offsets into a per-layer pair-weight tensor: variable v owns the slice
    // [pair_offset[v], pair_offset[v+1]) of length d_v * (d_v - 1).
    pair_offset: Vec<usize>,
}

impl CodeSpec {
    /// Build a code from a dense parity-check matrix (rows are checks).
    pub fn from_h(h: Vec<Vec<u8>>) -> Result<Self> {
        let m = h.len();
        if m == 0 {
            return Err(Error::Config("parity-check matrix has no rows".into()));
        }
        let n = h[0].len();
        if h.iter().any(|row| row.len() != n) {
            return Err(Error::Config(
                "parity-check matrix rows differ in length".into(),
            ));
        }
        if h.iter().any(|row| row.iter().any(|&e| e > 1)) {
            return Err(Error::Config(
                "parity-check matrix entries must be 0 or 1".into(),
            ));
        }
        if m >= n {
            return Err(Error::Config(format!(
                "need more variables than checks, got {m} checks x {n} variables"
            )));
        }

        let mut var_neighbors = vec![Vec::new(); n];
        let mut check_neighbors = vec![Vec::new(); m];
        let mut edges = Vec::new();
        for (c, row) in h.iter().enumerate() {
            for (v, &e) in row.iter().enumerate() {
                if e == 1 {
                    edges.push((c, v));
                    check_neighbors[c].push(v);
                    var_neighbors[v].push(c);
                }
            }
        }
        if check_neighbors.iter().any(|l| l.is_empty()) {
            return Err(Error::Config(
                "parity-check matrix has an all-zero row".into(),
            ));
        }
        if var_neighbors.iter().any(|l| l.is_empty()) {
            return Err(Error::Config(
                "parity-check matrix has an all-zero column".into(),
            ));
        }

        // Variable-major edge numbering.
        let mut var_edge_offset = Vec::with_capacity(n + 1);
        var_edge_offset.push(0);
        for v in 0..n {
            var_edge_offset.push(var_edge_offset[v] + var_neighbors[v].len());
        }
        let num_edges = var_edge_offset[n];
        let mut edge_var = vec![0; num_edges];
        for v in 0..n {
            for id in var_edge_offset[v]..var_edge_offset[v + 1] {
                edge_var[id] = v;
            }
        }
        let mut check_edge_ids = vec![Vec::new(); m];
        for (c, list) in check_neighbors.iter().enumerate() {
            for &v in list {
                let pos = var_neighbors[v].iter().position(|&cc| cc == c).unwrap();
                check_edge_ids[c].push(var_edge_offset[v] + pos);
            }
        }
        let mut pair_offset = Vec::with_capacity(n + 1);
        pair_offset.push(0);
        for v in 0..n {
            let d = var_neighbors[v].len();
            pair_offset.push(pair_offset[v] + d * d.saturating_sub(1));
        }

        Ok(CodeSpec {
            name: format!("code_{n}_{}", n - m),
            t_h: 0,
            n,
            m,
            k: n - m,
            h,
            edges,
            var_neighbors,
            check_neighbors,
            var_edge_offset,
            edge_var,
            check_edge_ids,
            pair_offset,
        })
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Attach the hard-decision correction radius (code metadata, not derived).
    pub fn with_t_h(mut self, t_h: usize) -> Self {
        self.t_h = t_h;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Code length N.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of parity checks (rows of H).
    pub fn num_checks(&self) -> usize {
        self.m
    }

    /// Message length K = N - M.
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn rate(&self) -> f64 {
        self.k as f64 / self.n as f64
    }

    pub fn t_h(&self) -> usize {
        self.t_h
    }

    pub fn h(&self) -> &[Vec<u8>] {
        &self.h
    }

    /// Edges as (check, variable) pairs, row-major.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn var_neighbors(&self, v: usize) -> &[usize] {
        &self.var_neighbors[v]
    }

    pub fn check_neighbors(&self, c: usize) -> &[usize] {
        &self.check_neighbors[c]
    }

    pub fn var_degree(&self, v: usize) -> usize {
        self.var_neighbors[v].len()
    }

    /// Edge-id range owned by variable `v`, aligned with `var_neighbors(v)`.
    pub fn var_edge_range(&self, v: usize) -> std::ops::Range<usize> {
        self.var_edge_offset[v]..self.var_edge_offset[v + 1]
    }

    /// Variable of a given edge id.
    pub fn edge_var(&self, edge: usize) -> usize {
        self.edge_var[edge]
    }

    /// Edge ids incident to check `c`, aligned with `check_neighbors(c)`.
    pub fn check_edge_ids(&self, c: usize) -> &[usize] {
        &self.check_edge_ids[c]
    }

    /// Offset of variable `v` in a per-layer pair-weight tensor.
    pub fn pair_offset(&self, v: usize) -> usize {
        self.pair_offset[v]
    }

    /// Total pair-weight count per layer: sum over v of d_v * (d_v - 1).
    pub fn pair_len(&self) -> usize {
        self.pair_offset[self.n]
    }

    /// Fast syndrome test without allocating.
    pub fn syndrome_is_zero(&self, bits: &[u8]) -> bool {
        self.check_neighbors.iter().all(|list| {
            let mut s = 0u8;
            for &v in list {
                s ^= bits[v];
            }
            s == 0
        })
    }

    /// Structural checksum over (M, N, edge set); used to bind weights files
    /// to the code they were trained on.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over the dimensions and edge list.
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |x: u64| {
            for byte in x.to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.m as u64);
        eat(self.n as u64);
        for &(c, v) in &self.edges {
            eat(((c as u64) << 32) | v as u64);
        }
        hash
    }
}

/// Syndrome of `word` under `code`: component c is the XOR of the word bits in
/// check c's neighborhood. All-zero iff `word` is a codeword.
pub fn syndrome(code: &CodeSpec, word: &BitWord) -> Result<BitWord> {
    if word.len() != code.n() {
        return Err(Error::LengthMismatch {
            expected: code.n(),
            got: word.len(),
        });
    }
    let bits = word.bits();
    let s = (0..code.num_checks())
        .map(|c| {
            code.check_neighbors(c)
                .iter()
                .fold(0u8, |acc, &v| acc ^ bits[v])
        })
        .collect();
    Ok(BitWord::new(s))
}

/// Number of positions where `a` and `b` differ.
pub fn hamming_distance(a: &BitWord, b: &BitWord) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.bits()
        .iter()
        .zip(b.bits())
        .filter(|(x, y)| x != y)
        .count())
}

// ---------------------------------------------------------------------------
// alist ingestion
// ---------------------------------------------------------------------------

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate(),
        }
    }

    /// Next non-blank line as (1-based line number, whitespace tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (idx, line) in self.iter.by_ref() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((idx + 1, tokens));
            }
        }
        None
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next_tokens()
            .ok_or_else(|| Error::parse(0, format!("unexpected end of input, expected {what}")))
    }
}

fn parse_usizes(line: usize, tokens: &[&str]) -> Result<Vec<usize>> {
    tokens
        .iter()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(line, format!("expected an integer, got {t:?}")))
        })
        .collect()
}

/// Parse the standard alist layout: header `N M`, max column/row degrees,
/// per-column and per-row degree lists, then per-column and per-row index
/// lists (1-based, zero padding allowed). Row lists are cross-checked against
/// the column lists.
pub fn parse_alist(text: &str) -> Result<CodeSpec> {
    let mut lines = Lines::new(text);

    let (ln, toks) = lines.expect_tokens("header \"N M\"")?;
    if toks.len() != 2 {
        return Err(Error::parse(ln, "header must be exactly \"N M\""));
    }
    let dims = parse_usizes(ln, &toks)?;
    let (n, m) = (dims[0], dims[1]);
    if n == 0 || m == 0 {
        return Err(Error::parse(ln, "N and M must be positive"));
    }

    let (ln, toks) = lines.expect_tokens("max degrees")?;
    if toks.len() != 2 {
        return Err(Error::parse(
            ln,
            "expected \"max_col_degree max_row_degree\"",
        ));
    }
    let maxdeg = parse_usizes(ln, &toks)?;
    let (max_col, max_row) = (maxdeg[0], maxdeg[1]);

    let (ln, toks) = lines.expect_tokens("column degree list")?;
    let col_deg = parse_usizes(ln, &toks)?;
    if col_deg.len() != n {
        return Err(Error::parse(
            ln,
            format!("expected {n} column degrees, got {}", col_deg.len()),
        ));
    }
    if let Some(d) = col_deg.iter().find(|&&d| d == 0 || d > max_col) {
        return Err(Error::parse(
            ln,
            format!("column degree {d} outside 1..={max_col}"),
        ));
    }

    let (ln, toks) = lines.expect_tokens("row degree list")?;
    let row_deg = parse_usizes(ln, &toks)?;
    if row_deg.len() != m {
        return Err(Error::parse(
            ln,
            format!("expected {m} row degrees, got {}", row_deg.len()),
        ));
    }
    if let Some(d) = row_deg.iter().find(|&&d| d == 0 || d > max_row) {
        return Err(Error::parse(
            ln,
            format!("row degree {d} outside 1..={max_row}"),
        ));
    }

    // One index list per column: the 1-based check indices of that column.
    let mut var_neighbors: Vec<Vec<usize>> = Vec::with_capacity(n);
    for v in 0..n {
        let (ln, toks) = lines.expect_tokens("column index list")?;
        let entries = parse_usizes(ln, &toks)?;
        let nonzero: Vec<usize> = entries.iter().copied().filter(|&e| e != 0).collect();
        if nonzero.len() != col_deg[v] {
            return Err(Error::parse(
                ln,
                format!(
                    "column {} lists {} entries, degree says {}",
                    v + 1,
                    nonzero.len(),
                    col_deg[v]
                ),
            ));
        }
        if entries.len() > max_col {
            return Err(Error::parse(
                ln,
                format!("column {} has more than {max_col} entries", v + 1),
            ));
        }
        let mut checks = Vec::with_capacity(nonzero.len());
        for e in nonzero {
            if e > m {
                return Err(Error::parse(
                    ln,
                    format!("check index {e} out of range 1..={m}"),
                ));
            }
            checks.push(e - 1);
        }
        checks.sort_unstable();
        if checks.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::parse(
                ln,
                format!("column {} repeats a check index", v + 1),
            ));
        }
        var_neighbors.push(checks);
    }

    // One index list per row, cross-checked against the column lists.
    let mut from_rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..m {
        let (ln, toks) = lines.expect_tokens("row index list")?;
        let entries = parse_usizes(ln, &toks)?;
        let nonzero: Vec<usize> = entries.iter().copied().filter(|&e| e != 0).collect();
        if nonzero.len() != row_deg[c] {
            return Err(Error::parse(
                ln,
                format!(
                    "row {} lists {} entries, degree says {}",
                    c + 1,
                    nonzero.len(),
                    row_deg[c]
                ),
            ));
        }
        if entries.len() > max_row {
            return Err(Error::parse(
                ln,
                format!("row {} has more than {max_row} entries", c + 1),
            ));
        }
        for e in nonzero {
            if e > n {
                return Err(Error::parse(
                    ln,
                    format!("variable index {e} out of range 1..={n}"),
                ));
            }
            if !var_neighbors[e - 1].contains(&c) {
                return Err(Error::parse(
                    ln,
                    format!(
                        "row {} lists variable {e} but column {e} does not list row {}",
                        c + 1,
                        c + 1
                    ),
                ));
            }
            from_rows[e - 1].push(c);
        }
    }
    for v in 0..n {
        from_rows[v].sort_unstable();
        if from_rows[v] != var_neighbors[v] {
            return Err(Error::parse(
                0,
                format!("row lists disagree with column lists at column {}", v + 1),
            ));
        }
    }
    if let Some((ln, _)) = lines.next_tokens() {
        return Err(Error::parse(ln, "unexpected trailing content"));
    }

    let mut h = vec![vec![0u8; n]; m];
    for (v, checks) in var_neighbors.iter().enumerate() {
        for &c in checks {
            h[c][v] = 1;
        }
    }
    CodeSpec::from_h(h)
}

/// Serialize back to canonical alist text (entries padded with zeros to the
/// maximum degree). `parse_alist` composed with this function is idempotent.
pub fn to_alist(code: &CodeSpec) -> String {
    let n = code.n();
    let m = code.num_checks();
    let max_col = (0..n).map(|v| code.var_degree(v)).max().unwrap_or(0);
    let max_row = (0..m)
        .map(|c| code.check_neighbors(c).len())
        .max()
        .unwrap_or(0);

    let mut out = String::new();
    out.push_str(&format!("{n} {m}\n"));
    out.push_str(&format!("{max_col} {max_row}\n"));
    let col_degs: Vec<String> = (0..n).map(|v| code.var_degree(v).to_string()).collect();
    out.push_str(&col_degs.join(" "));
    out.push('\n');
    let row_degs: Vec<String> = (0..m)
        .map(|c| code.check_neighbors(c).len().to_string())
        .collect();
    out.push_str(&row_degs.join(" "));
    out.push('\n');
    let pad_line = |indices: &[usize], width: usize| -> String {
        let mut items: Vec<String> = indices.iter().map(|&i| (i + 1).to_string()).collect();
        items.resize(width, "0".to_string());
        items.join(" ")
    };
    for v in 0..n {
        out.push_str(&pad_line(code.var_neighbors(v), max_col));
        out.push('\n');
    }
    for c in 0..m {
        out.push_str(&pad_line(code.check_neighbors(c), max_row));
        out.push('\n');
    }
    out
}

/// Parse the dense fallback format: first line `M N`, then M rows of
/// space-separated 0/1 entries.
pub fn parse_dense(text: &str) -> Result<CodeSpec> {
    let mut lines = Lines::new(text);
    let (ln, toks) = lines.expect_tokens("header \"M N\"")?;
    if toks.len() != 2 {
        return Err(Error::parse(ln, "header must be exactly \"M N\""));
    }
    let dims = parse_usizes(ln, &toks)?;
    let (m, n) = (dims[0], dims[1]);

    let mut h = Vec::with_capacity(m);
    for r in 0..m {
        let (ln, toks) = lines.expect_tokens("matrix row")?;
        if toks.len() != n {
            return Err(Error::parse(
                ln,
                format!("row {} has {} entries, expected {n}", r + 1, toks.len()),
            ));
        }
        let row: Vec<u8> = toks
            .iter()
            .map(|t| match *t {
                "0" => Ok(0u8),
                "1" => Ok(1u8),
                other => Err(Error::parse(
                    ln,
                    format!("matrix entry must be 0 or 1, got {other:?}"),
                )),
            })
            .collect::<Result<_>>()?;
        h.push(row);
    }
    if let Some((ln, _)) = lines.next_tokens() {
        return Err(Error::parse(ln, "unexpected trailing content"));
    }
    CodeSpec::from_h(h)
}
