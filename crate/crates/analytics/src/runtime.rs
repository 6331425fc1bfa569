//! Expected runtime when failed cases are charged a fixed timeout.

use crate::StatsError;

/// Mean over all cases, where each of the `n_fail` failures counts as
/// `fail_fill` (same unit as the success durations).
pub fn expected_overall_time(success_durations: &[f64], n_fail: u64, fail_fill: f64) -> Result<f64, StatsError> {
    let n = success_durations.len() as u64 + n_fail;
    if n == 0 {
        return Err(StatsError::EmptyGroup);
    }
    let total: f64 = success_durations.iter().sum::<f64>() + n_fail as f64 * fail_fill;
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_failures_is_plain_mean() {
        assert_eq!(expected_overall_time(&[1.0, 2.0, 3.0], 0, 24.0).unwrap(), 2.0);
    }

    #[test]
    fn no_successes_is_fill() {
        assert_eq!(expected_overall_time(&[], 5, 24.0).unwrap(), 24.0);
    }

    #[test]
    fn nothing_to_average() {
        assert_eq!(expected_overall_time(&[], 0, 24.0), Err(StatsError::EmptyGroup));
    }
}
