//! Symbolic expansion of `d^n/dz^n R(z)` from `R' = i R a R + 2 z R^2`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};

use crate::error::{input, Result};
use crate::sparse::C64;

/// Exact `re + i im` with overflow checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct GaussInt {
    pub re: i64,
    pub im: i64,
}

impl GaussInt {
    pub const ZERO: Self = Self { re: 0, im: 0 };
    pub const ONE: Self = Self { re: 1, im: 0 };
    pub const I: Self = Self { re: 0, im: 1 };

    pub const fn new(re: i64, im: i64) -> Self {
        Self { re, im }
    }

    pub fn is_zero(&self) -> bool {
        self.re == 0 && self.im == 0
    }

    pub fn to_complex(self) -> C64 {
        C64::new(self.re as f64, self.im as f64)
    }

    pub fn scale(self, s: i64) -> Self {
        Self::new(self.re.checked_mul(s).expect("coefficient overflow"), self.im.checked_mul(s).expect("coefficient overflow"))
    }
}

impl Add for GaussInt {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(
            self.re.checked_add(o.re).expect("coefficient overflow"),
            self.im.checked_add(o.im).expect("coefficient overflow"),
        )
    }
}

impl Mul for GaussInt {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let m = |a: i64, b: i64| a.checked_mul(b).expect("coefficient overflow");
        Self::new(
            m(self.re, o.re).checked_sub(m(self.im, o.im)).expect("coefficient overflow"),
            m(self.re, o.im).checked_add(m(self.im, o.re)).expect("coefficient overflow"),
        )
    }
}

impl fmt::Display for GaussInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.re, self.im) {
            (r, 0) => write!(f, "{r}"),
            (0, i) => write!(f, "{i}i"),
            (r, i) if i < 0 => write!(f, "{r}{i}i"),
            (r, i) => write!(f, "{r}+{i}i"),
        }
    }
}

/// `coeff * z^k * R a^{w_1} R ... a^{w_m} R`
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResolventTerm {
    pub coeff: GaussInt,
    pub k: u32,
    pub word: Vec<u8>,
}

impl ResolventTerm {
    pub fn new(coeff: GaussInt, k: u32, word: Vec<u8>) -> Self {
        Self { coeff, k, word }
    }

    /// Number of resolvent factors minus one.
    pub fn m(&self) -> usize {
        self.word.len()
    }

    /// Derivative order this term can belong to: `2m - k - sum(word)`.
    pub fn order(&self) -> i64 {
        2 * self.m() as i64 - self.k as i64 - self.word.iter().map(|&j| j as i64).sum::<i64>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TermExpansion {
    pub order: usize,
    pub terms: Vec<ResolventTerm>,
}

impl TermExpansion {
    pub fn identity() -> Self {
        Self { order: 0, terms: vec![ResolventTerm::new(GaussInt::ONE, 0, vec![])] }
    }

    pub fn constraint_holds(&self) -> bool {
        self.terms.iter().all(|t| t.order() == self.order as i64)
    }

    pub fn find(&self, k: u32, word: &[u8]) -> Option<&ResolventTerm> {
        self.terms.iter().find(|t| t.k == k && t.word == word)
    }

    /// Product-rule derivative with like terms merged.
    pub fn differentiate(&self) -> Self {
        let mut acc: BTreeMap<(u32, Vec<u8>), GaussInt> = BTreeMap::new();
        let mut push = |c: GaussInt, k: u32, w: Vec<u8>| {
            let e = acc.entry((k, w)).or_insert(GaussInt::ZERO);
            *e = *e + c;
        };
        for t in &self.terms {
            if t.k > 0 {
                push(t.coeff.scale(t.k as i64), t.k - 1, t.word.clone());
            }
            for p in 0..=t.m() {
                let mut w = t.word.clone();
                w.insert(p, 1);
                push(t.coeff * GaussInt::I, t.k, w);
                let mut w = t.word.clone();
                w.insert(p, 0);
                push(t.coeff.scale(2), t.k + 1, w);
            }
        }
        let terms = acc
            .into_iter()
            .filter(|(_, c)| !c.is_zero())
            .map(|((k, word), coeff)| ResolventTerm { coeff, k, word })
            .collect();
        Self { order: self.order + 1, terms }
    }
}

impl fmt::Display for TermExpansion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, t) in self.terms.iter().enumerate() {
            if n > 0 {
                write!(f, " + ")?;
            }
            write!(f, "({}) z^{} R", t.coeff, t.k)?;
            for &j in &t.word {
                write!(f, "{}", if j == 1 { "aR" } else { "R" })?;
            }
        }
        Ok(())
    }
}

pub const MAX_ORDER: usize = 8;

pub fn derivative_terms(n: usize) -> Result<TermExpansion> {
    if n > MAX_ORDER {
        return input(format!("derivative order {n} exceeds {MAX_ORDER}"));
    }
    let mut e = TermExpansion::identity();
    for _ in 0..n {
        e = e.differentiate();
    }
    Ok(e)
}
