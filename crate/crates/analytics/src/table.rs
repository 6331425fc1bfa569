//! 2×2 contingency tables, odds ratios and Fisher's exact test.
//!
//! Rows are the exposure (yes / no), columns the outcome (success / fail):
//!
//! ```text
//!              success  fail
//! exposed         a      b
//! unexposed       c      d
//! ```
//!
//! The two-sided p-value sums the hypergeometric probability of every table
//! sharing the observed margins whose probability does not exceed the
//! observed one. Probabilities are compared as exact big integers with a
//! relative slack of 1e-7 on the `<=`, so ties that differ only by float
//! noise in other implementations are resolved deterministically here.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::StatsError;

/// Slack on the "as or less probable" comparison, as numerator/denominator.
const TIE_SLACK_NUM: u64 = 10_000_001;
const TIE_SLACK_DEN: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable2x2 {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Result<Self, StatsError> {
        if a + b + c + d == 0 {
            return Err(StatsError::EmptyTable);
        }
        Ok(Self { a, b, c, d })
    }

    /// Build a table from per-group `successes/total` counts, the way the
    /// success-rate tables are usually printed.
    pub fn from_rates(
        exposed_success: u64,
        exposed_total: u64,
        other_success: u64,
        other_total: u64,
    ) -> Result<Self, StatsError> {
        if exposed_success > exposed_total || other_success > other_total {
            return Err(StatsError::InvalidCounts);
        }
        Self::new(
            exposed_success,
            exposed_total - exposed_success,
            other_success,
            other_total - other_success,
        )
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn row_totals(&self) -> (u64, u64) {
        (self.a + self.b, self.c + self.d)
    }

    pub fn col_totals(&self) -> (u64, u64) {
        (self.a + self.c, self.b + self.d)
    }

    pub fn has_degenerate_margin(&self) -> bool {
        let (r1, r2) = self.row_totals();
        let (c1, c2) = self.col_totals();
        r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0
    }

    pub fn swap_rows(&self) -> Self {
        Self { a: self.c, b: self.d, c: self.a, d: self.b }
    }

    pub fn swap_cols(&self) -> Self {
        Self { a: self.b, b: self.a, c: self.d, d: self.c }
    }

    pub fn odds_ratio(&self) -> OddsRatio {
        OddsRatio::from_products(
            (self.a as f64) * (self.d as f64),
            (self.b as f64) * (self.c as f64),
        )
    }
}

/// Odds ratio with zero cells reported explicitly instead of corrected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum OddsRatio {
    Finite(f64),
    /// numerator product is zero, denominator positive
    Zero,
    /// denominator product is zero, numerator positive
    Infinite,
    /// both products are zero
    Undefined,
}

impl OddsRatio {
    pub(crate) fn from_products(num: f64, den: f64) -> Self {
        match (num == 0.0, den == 0.0) {
            (true, true) => OddsRatio::Undefined,
            (false, true) => OddsRatio::Infinite,
            (true, false) => OddsRatio::Zero,
            (false, false) => OddsRatio::Finite(num / den),
        }
    }

    pub fn value(&self) -> f64 {
        match *self {
            OddsRatio::Finite(v) => v,
            OddsRatio::Zero => 0.0,
            OddsRatio::Infinite => f64::INFINITY,
            OddsRatio::Undefined => f64::NAN,
        }
    }

    pub fn is_flagged(&self) -> bool {
        !matches!(self, OddsRatio::Finite(_))
    }
}

impl std::fmt::Display for OddsRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OddsRatio::Finite(v) => write!(f, "{v:.2}"),
            OddsRatio::Zero => write!(f, "0 (zero cell)"),
            OddsRatio::Infinite => write!(f, "inf (zero cell)"),
            OddsRatio::Undefined => write!(f, "undefined"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub odds_ratio: OddsRatio,
    pub p_two_sided: f64,
    /// Set when a row or column margin is zero; p is 1 by convention.
    pub degenerate_margins: bool,
}

/// Fisher's exact test, two-sided.
pub fn fisher_exact(t: &ContingencyTable2x2) -> FisherResult {
    let degenerate = t.has_degenerate_margin();
    let p = if degenerate {
        1.0
    } else {
        rational_to_f64(&fisher_p_rational(t))
    };
    FisherResult {
        odds_ratio: t.odds_ratio(),
        p_two_sided: p,
        degenerate_margins: degenerate,
    }
}

/// Exact two-sided p as a reduced rational.
pub fn fisher_p_rational(t: &ContingencyTable2x2) -> BigRational {
    let (r1, r2) = t.row_totals();
    let (c1, _) = t.col_totals();
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);

    // Weight of the table with top-left cell x is C(r1, x) * C(r2, c1 - x);
    // the common denominator C(n, c1) cancels out of the ratio.
    let weights: Vec<BigUint> = (lo..=hi)
        .map(|x| binomial(r1, x) * binomial(r2, c1 - x))
        .collect();
    let observed = &weights[(t.a - lo) as usize];
    let bound = observed * BigUint::from(TIE_SLACK_NUM);

    let mut tail = BigUint::zero();
    let mut total = BigUint::zero();
    for w in &weights {
        if w * BigUint::from(TIE_SLACK_DEN) <= bound {
            tail += w;
        }
        total += w;
    }
    BigRational::new(BigInt::from(tail), BigInt::from(total))
}

pub(crate) fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}
