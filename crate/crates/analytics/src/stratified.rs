//! Stratified 2×2 analysis: Mantel–Haenszel pooled odds ratio and the
//! Cochran–Mantel–Haenszel test (no continuity correction by default).

use serde::{Deserialize, Serialize};

use crate::table::{ContingencyTable2x2, OddsRatio};
use crate::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedTables {
    strata: Vec<ContingencyTable2x2>,
}

impl StratifiedTables {
    pub fn new(strata: Vec<ContingencyTable2x2>) -> Result<Self, StatsError> {
        if strata.is_empty() {
            return Err(StatsError::NoStrata);
        }
        Ok(Self { strata })
    }

    pub fn strata(&self) -> &[ContingencyTable2x2] {
        &self.strata
    }
}

/// Pooled odds ratio: sum(a*d/n) / sum(b*c/n). Strata with a zero product
/// simply contribute zero to the corresponding sum.
pub fn mantel_haenszel_or(s: &StratifiedTables) -> Result<OddsRatio, StatsError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for t in s.strata() {
        let n = t.n() as f64;
        num += (t.a * t.d) as f64 / n;
        den += (t.b * t.c) as f64 / n;
    }
    if num == 0.0 && den == 0.0 {
        return Err(StatsError::AllStrataDegenerate);
    }
    Ok(OddsRatio::from_products(num, den))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmhResult {
    pub statistic: f64,
    pub p_two_sided: f64,
    /// Strata that carried information (n >= 2, non-zero variance).
    pub informative_strata: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CmhOptions {
    /// Subtract 0.5 from |sum(a - E[a])| before squaring. Off by default.
    pub continuity_correction: bool,
}

pub fn cmh_test(s: &StratifiedTables) -> Result<CmhResult, StatsError> {
    cmh_test_with(s, CmhOptions::default())
}

pub fn cmh_test_with(s: &StratifiedTables, opts: CmhOptions) -> Result<CmhResult, StatsError> {
    let mut deviation = 0.0;
    let mut variance = 0.0;
    let mut informative = 0;
    for t in s.strata() {
        let n = t.n() as f64;
        let (r1, r2) = t.row_totals();
        let (c1, c2) = t.col_totals();
        if t.n() < 2 {
            continue;
        }
        let var = (r1 * r2) as f64 * (c1 * c2) as f64 / (n * n * (n - 1.0));
        if var == 0.0 {
            continue;
        }
        informative += 1;
        deviation += t.a as f64 - r1 as f64 * c1 as f64 / n;
        variance += var;
    }
    if informative == 0 {
        return Err(StatsError::AllStrataDegenerate);
    }
    let mut dev = deviation.abs();
    if opts.continuity_correction {
        dev = (dev - 0.5).max(0.0);
    }
    let statistic = dev * dev / variance;
    Ok(CmhResult {
        statistic,
        p_two_sided: chi_square_1df_sf(statistic),
        informative_strata: informative,
    })
}

/// Upper tail of the chi-square distribution with one degree of freedom.
pub fn chi_square_1df_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    statrs::function::erf::erfc((x / 2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(a: u64, b: u64, c: u64, d: u64) -> ContingencyTable2x2 {
        ContingencyTable2x2::new(a, b, c, d).unwrap()
    }

    #[test]
    fn single_stratum_collapses_to_plain_or() {
        let table = t(14, 20, 33, 33);
        let s = StratifiedTables::new(vec![table]).unwrap();
        let pooled = mantel_haenszel_or(&s).unwrap().value();
        assert!((pooled - table.odds_ratio().value()).abs() < 1e-12);
    }

    #[test]
    fn identical_rows_give_zero_statistic() {
        let s = StratifiedTables::new(vec![t(3, 5, 3, 5)]).unwrap();
        let r = cmh_test(&s).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_two_sided, 1.0);
    }

    #[test]
    fn all_degenerate_strata_rejected() {
        let s = StratifiedTables::new(vec![t(0, 4, 0, 3)]).unwrap();
        assert_eq!(mantel_haenszel_or(&s), Err(StatsError::AllStrataDegenerate));
        assert_eq!(cmh_test(&s), Err(StatsError::AllStrataDegenerate));
    }

    #[test]
    fn empty_strata_list_rejected() {
        assert_eq!(StratifiedTables::new(vec![]), Err(StatsError::NoStrata));
    }

    #[test]
    fn chi_square_tail_reference_points() {
        // 3.841459 is the 95th percentile of chi2(1)
        assert!((chi_square_1df_sf(3.841_458_820_694_124) - 0.05).abs() < 1e-9);
        assert!((chi_square_1df_sf(6.634_896_601_021_214) - 0.01).abs() < 1e-9);
    }

    #[test]
    fn continuity_correction_is_opt_in() {
        let s = StratifiedTables::new(vec![t(4, 18, 1, 0), t(29, 31, 13, 2)]).unwrap();
        let plain = cmh_test(&s).unwrap();
        let corrected = cmh_test_with(&s, CmhOptions { continuity_correction: true }).unwrap();
        assert!(corrected.p_two_sided > plain.p_two_sided);
    }
}
