//! Projected commutator `1_J(H) (i[H, A] + beta a) 1_J(H)` by dense eigensolves.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::discretize::{DiscreteOperator, Role};
use crate::error::{input, Result};
use crate::sparse::C64;

pub const DENSE_LIMIT: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CommutatorReport {
    pub window: (f64, f64),
    /// Smallest eigenvalue of the compression to `range 1_J(H)`.
    pub alpha_estimate: f64,
    pub beta_used: f64,
    pub projector_rank: usize,
    pub positive: bool,
}

impl CommutatorReport {
    pub fn csv_header() -> [&'static str; 6] {
        ["j_lo", "j_hi", "beta", "projector_rank", "alpha_estimate", "positive"]
    }

    pub fn csv_row(&self) -> [String; 6] {
        [
            format!("{}", self.window.0),
            format!("{}", self.window.1),
            format!("{}", self.beta_used),
            self.projector_rank.to_string(),
            format!("{:.12e}", self.alpha_estimate),
            self.positive.to_string(),
        ]
    }
}

/// `h` must be Hermitian; `a_gen` is the conjugate operator and `damping`
/// a diagonal multiplier.
pub fn mourre_commutator_check(
    h: &DiscreteOperator,
    a_gen: &DiscreteOperator,
    damping: &DiscreteOperator,
    window: (f64, f64),
    beta: f64,
) -> Result<CommutatorReport> {
    let n = h.matrix.dim();
    if n > DENSE_LIMIT {
        return input(format!("dense commutator check limited to {DENSE_LIMIT} unknowns, got {n}"));
    }
    if !h.hermitian_flag || h.matrix.hermitian_deviation() > 1e-12 {
        return input("commutator check needs a Hermitian operator");
    }
    if a_gen.role != Role::DilationGenerator || a_gen.matrix.dim() != n || damping.matrix.dim() != n {
        return input("commutator check needs a conjugate operator and a multiplier of matching size");
    }
    if window.0 > window.1 || beta < 0.0 {
        return input("window must be ordered and beta non-negative");
    }
    let hd = h.matrix.to_dense();
    let ad = a_gen.matrix.to_dense();
    let eig = SymmetricEigen::new(hd.clone());
    let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] >= window.0 && eig.eigenvalues[k] <= window.1).collect();
    if cols.is_empty() {
        return Ok(CommutatorReport { window, alpha_estimate: 0.0, beta_used: beta, projector_rank: 0, positive: false });
    }
    let phi = DMatrix::from_fn(n, cols.len(), |r, c| eig.eigenvectors[(r, cols[c])]);
    let i = C64::new(0.0, 1.0);
    let comm = (&hd * &ad - &ad * &hd) * i + damping.matrix.to_dense() * C64::new(beta, 0.0);
    let mut m = phi.adjoint() * comm * &phi;
    // Symmetrise away roundoff before the Hermitian eigensolve.
    m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let alpha = SymmetricEigen::new(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CommutatorReport { window, alpha_estimate: alpha, beta_used: beta, projector_rank: cols.len(), positive: alpha > 0.0 })
}
