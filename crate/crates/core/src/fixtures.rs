//! Reference metrics for six models at odd rounds 1–15, in report layout.
//!
//! These are replayed through `analyze` (locking, dynamics, re-emission)
//! without any model execution.

use std::path::Path;

use crate::error::Result;
use crate::report::{parse_wide_csv, MetricsTable};

pub const HALLUC_CSV: &str = include_str!("../fixtures/halluc_metrics.csv");
pub const DRIFT_CSV: &str = include_str!("../fixtures/drift_metrics.csv");

pub const MODELS: [&str; 6] = [
    "Qwen2.5-7B",
    "Qwen2.5-1.5B",
    "Falcon3-7B",
    "Falcon3-1B",
    "Llama3-8B",
    "Llama3.2-1B",
];

pub const ROUNDS: [u32; 7] = [1, 3, 5, 7, 9, 11, 15];

pub fn halluc_table() -> Result<MetricsTable> {
    parse_wide_csv(HALLUC_CSV, Path::new("fixtures/halluc_metrics.csv"))
}

pub fn drift_table() -> Result<MetricsTable> {
    parse_wide_csv(DRIFT_CSV, Path::new("fixtures/drift_metrics.csv"))
}

/// Both tables merged per model.
pub fn reference_table() -> Result<MetricsTable> {
    let mut t = halluc_table()?;
    t.merge(drift_table()?);
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::Metric;
    use crate::trace::Track;

    #[test]
    fn all_models_and_rounds_present() {
        let t = reference_table().unwrap();
        let names: Vec<&str> = t.models.iter().map(|m| m.model.as_str()).collect();
        assert_eq!(names, MODELS);
        for m in &t.models {
            for metric in Metric::HALLUC.into_iter().chain(Metric::DRIFT) {
                for track in Track::ALL {
                    let rounds: Vec<u32> = m.series(track, metric).iter().map(|p| p.0).collect();
                    assert_eq!(rounds, ROUNDS, "{} {track} {metric}", m.model);
                }
            }
        }
    }

    #[test]
    fn spot_values() {
        let t = reference_table().unwrap();
        let l = t.model("Llama3-8B").unwrap();
        assert_eq!(l.get(Track::Relevant, 1, Metric::CosDrift), Some(0.1925));
        assert_eq!(l.get(Track::Relevant, 15, Metric::EntDrift), Some(1.4643));
        assert_eq!(
            l.get(Track::Irrelevant, 15, Metric::SpearmanDrift),
            Some(-0.0064)
        );
        let q = t.model("Llama3.2-1B").unwrap();
        assert_eq!(q.get(Track::Relevant, 15, Metric::QaHallucRate), Some(0.9));
    }
}
