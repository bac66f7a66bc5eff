//! Smooth dyadic partition of unity on `[0, inf)`.

fn f(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Smooth step: 1 on `[0, 1]`, 0 on `[2, inf)`.
pub fn psi(t: f64) -> f64 {
    let (a, b) = (f(2.0 - t), f(t - 1.0));
    a / (a + b)
}

/// `chi_0(t) = psi(2t)`, `chi_j(t) = chi(t / 2^{j-1})` with `chi(t) = psi(t) - psi(2t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DyadicPartition {
    pub levels: usize,
}

impl DyadicPartition {
    pub fn chi0(&self, t: f64) -> f64 {
        psi(2.0 * t)
    }

    pub fn chi(t: f64) -> f64 {
        psi(t) - psi(2.0 * t)
    }

    /// `chi_j` for `1 <= j <= levels`.
    pub fn level(&self, j: usize, t: f64) -> f64 {
        if j == 0 {
            return self.chi0(t);
        }
        Self::chi(t / 2f64.powi(j as i32 - 1))
    }

    pub fn sum(&self, t: f64) -> f64 {
        (0..=self.levels).map(|j| self.level(j, t)).sum()
    }

    /// Right end of the interval where the truncated sum is 1.
    pub fn coverage(&self) -> f64 {
        2f64.powi(self.levels as i32 - 1)
    }
}

pub fn build_dyadic_partition(levels: usize) -> crate::error::Result<DyadicPartition> {
    if levels == 0 {
        return crate::error::input("dyadic partition needs at least one level");
    }
    Ok(DyadicPartition { levels })
}
