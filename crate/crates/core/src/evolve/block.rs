//! Dense cross-check of the first-order system against `R(z)`.

use nalgebra::DMatrix;

use crate::error::{input, Result};
use crate::sparse::C64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockReport {
    pub z: C64,
    /// Largest entrywise difference, relative to the largest entry.
    pub max_rel_diff: f64,
}

/// Inverts `A - z` with `A = [[0, I], [H, -i a]]` and compares with
/// `[[R(ia + z), R], [I + R(zia + z^2), z R]]`.
pub fn block_resolvent_check(h: &DMatrix<C64>, a: &[f64], z: C64) -> Result<BlockReport> {
    let n = h.nrows();
    if h.ncols() != n || a.len() != n {
        return input("block check needs a square H and a matching absorption");
    }
    if !(z.im > 0.0) {
        return input("z must lie in the upper half plane");
    }
    let i = C64::i();
    let eye = DMatrix::<C64>::identity(n, n);
    let adiag = DMatrix::<C64>::from_diagonal(&nalgebra::DVector::from_iterator(n, a.iter().map(|&v| C64::new(v, 0.0))));

    let mut big = DMatrix::<C64>::zeros(2 * n, 2 * n);
    big.view_mut((0, n), (n, n)).copy_from(&eye);
    big.view_mut((n, 0), (n, n)).copy_from(h);
    big.view_mut((n, n), (n, n)).copy_from(&(&adiag * (-i)));
    for k in 0..2 * n {
        big[(k, k)] -= z;
    }
    let inv = big.lu().try_inverse().ok_or_else(|| crate::LabError::Assembly("singular block matrix".into()))?;

    let m = h - &adiag * (i * z) - &eye * (z * z);
    let r = m.lu().try_inverse().ok_or_else(|| crate::LabError::Assembly("singular resolvent matrix".into()))?;
    let ia_z = &adiag * i + &eye * z;
    let mut formula = DMatrix::<C64>::zeros(2 * n, 2 * n);
    formula.view_mut((0, 0), (n, n)).copy_from(&(&r * &ia_z));
    formula.view_mut((0, n), (n, n)).copy_from(&r);
    formula.view_mut((n, 0), (n, n)).copy_from(&(&eye + &r * (&ia_z * z)));
    formula.view_mut((n, n), (n, n)).copy_from(&(&r * z));

    let scale = inv.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let diff = (&inv - &formula).iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(BlockReport { z, max_rel_diff: diff / scale })
}
