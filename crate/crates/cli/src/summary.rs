//! Improvement-rate arithmetic for the summary table.
//!
//! Rates compare the adaptive refinement against a baseline with a fixed
//! sign convention: positive always means the refinement did better. For
//! error metrics (MAE, MAPE, GMSD — lower is better) that is
//! `(baseline − ours) / baseline`; for similarity metrics (CMJS, SSIM —
//! higher is better) it is `(ours − baseline) / baseline`. A 0/0
//! comparison reports 0 (both methods were perfect); a nonzero score
//! against a zero baseline has no meaningful rate and reports NaN.

/// Improvement over a baseline for a lower-is-better metric, as a
/// fraction (0.088 = 8.8%).
pub fn improvement_lower_better(baseline: f64, ours: f64) -> f64 {
    if baseline == 0.0 {
        if ours == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        (baseline - ours) / baseline
    }
}

/// Improvement over a baseline for a higher-is-better metric.
pub fn improvement_higher_better(baseline: f64, ours: f64) -> f64 {
    if baseline == 0.0 {
        if ours == 0.0 {
            0.0
        } else {
            f64::NAN
        }
    } else {
        (ours - baseline) / baseline
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_metric_rates_reward_smaller_values() {
        let rate = improvement_lower_better(3.604, 3.287);
        assert!((rate * 100.0 - 8.80).abs() < 0.05, "{}", rate * 100.0);
        assert!(improvement_lower_better(2.0, 3.0) < 0.0);
    }

    #[test]
    fn similarity_metric_rates_reward_larger_values() {
        let rate = improvement_higher_better(0.862, 0.889);
        assert!((rate * 100.0 - 3.10).abs() < 0.05, "{}", rate * 100.0);
        assert!(improvement_higher_better(0.9, 0.8) < 0.0);
    }

    #[test]
    fn zero_baselines_degrade_gracefully() {
        assert_eq!(improvement_lower_better(0.0, 0.0), 0.0);
        assert_eq!(improvement_higher_better(0.0, 0.0), 0.0);
        assert!(improvement_lower_better(0.0, 1.0).is_nan());
        assert!(improvement_higher_better(0.0, 1.0).is_nan());
    }
}
