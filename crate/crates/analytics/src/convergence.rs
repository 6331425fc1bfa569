//! Cumulative success under repeated runs.

use std::collections::BTreeSet;

use crate::StatsError;

/// One run set: the cases it executed and which of them succeeded.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunOutcomes {
    pub executed: BTreeSet<String>,
    pub succeeded: BTreeSet<String>,
}

impl RunOutcomes {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, bool)>,
        S: Into<String>,
    {
        let mut out = RunOutcomes::default();
        for (case, ok) in pairs {
            let case = case.into();
            if ok {
                out.succeeded.insert(case.clone());
            }
            out.executed.insert(case);
        }
        out
    }
}

/// `curve[k]` is the number of distinct cases that succeeded in any of the
/// first `k + 1` run sets.
///
/// The first set defines the case universe. Later sets may cover only a
/// subset of it (re-running just the cases that are still failing), but may
/// not introduce cases outside it.
pub fn convergence_curve(run_sets: &[RunOutcomes]) -> Result<Vec<usize>, StatsError> {
    let Some(first) = run_sets.first() else {
        return Err(StatsError::EmptyGroup);
    };
    let universe = &first.executed;
    let mut union = BTreeSet::new();
    let mut curve = Vec::with_capacity(run_sets.len());
    for set in run_sets {
        if !set.succeeded.is_subset(&set.executed) || !set.executed.is_subset(universe) {
            return Err(StatsError::UniverseMismatch);
        }
        union.extend(set.succeeded.iter().cloned());
        curve.push(union.len());
    }
    Ok(curve)
}
