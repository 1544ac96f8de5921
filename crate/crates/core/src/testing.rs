//! Small codes shared by the unit tests.

use crate::code::CodeSpec;

/// Single parity check over `n` bits: H = [1 1 ... 1].
pub fn spc(n: usize) -> CodeSpec {
    CodeSpec::from_h(vec![vec![1u8; n]])
        .unwrap()
        .with_name(format!("SPC({},{})", n, n - 1))
}

/// The (7,4) Hamming code with the identity in the first three columns.
pub fn hamming_7_4() -> CodeSpec {
    CodeSpec::from_h(vec![
        vec![1, 0, 0, 1, 1, 0, 1],
        vec![0, 1, 0, 1, 0, 1, 1],
        vec![0, 0, 1, 0, 1, 1, 1],
    ])
    .unwrap()
    .with_name("HAMMING(7,4)")
}
