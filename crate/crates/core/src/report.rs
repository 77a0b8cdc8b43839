//! Experiment artifacts: the per-epoch metrics table and per-configuration
//! summaries with Student-t confidence intervals over replications.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::adversary::Arrival;
use crate::sim::ExperimentMetrics;

pub const METRICS_HEADER: [&str; 13] = [
    "replication",
    "epoch",
    "variant",
    "rmi",
    "rmo",
    "omega",
    "arrival",
    "inferred",
    "accurate",
    "n_banned_honest",
    "n_banned_malicious",
    "mean_rep_honest_idx",
    "mean_rep_malicious_idx",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes the header followed by one row per epoch of every replication,
/// in the order given.
pub fn write_metrics_csv<W: Write>(out: W, runs: &[ExperimentMetrics], header: bool) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(METRICS_HEADER)?;
    }
    for m in runs {
        let fixed = [
            m.replication.to_string(),
            m.variant.label().to_string(),
            m.rmi.to_string(),
            m.rmo.to_string(),
            opt(m.variant.omega()),
            m.arrival.to_string(),
        ];
        for r in &m.rows {
            w.write_record([
                fixed[0].as_str(),
                &r.epoch.to_string(),
                &fixed[1],
                &fixed[2],
                &fixed[3],
                &fixed[4],
                &fixed[5],
                &opt(r.inferred),
                if r.accurate { "1" } else { "0" },
                &r.n_banned_honest.to_string(),
                &r.n_banned_malicious.to_string(),
                &opt(r.mean_rep_honest_idx),
                &opt(r.mean_rep_malicious_idx),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Sample mean with a two-sided 95% interval. With fewer than two samples
/// the interval is absent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
    pub ci95: Option<(f64, f64)>,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Some(Estimate { mean, sd: 0.0, n, ci95: None });
        }
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sd = var.sqrt();
        let t = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive dof").inverse_cdf(0.975);
        let half = t * sd / (n as f64).sqrt();
        Some(Estimate { mean, sd, n, ci95: Some((mean - half, mean + half)) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: String,
    pub omega: Option<f64>,
    pub rmi: f64,
    pub rmo: f64,
    pub arrival: Arrival,
    pub replications: usize,
    pub accuracy_window: usize,
    pub accuracy: Option<Estimate>,
    pub precision: Option<Estimate>,
    pub recall: Option<Estimate>,
    pub rep_honest: Option<Estimate>,
    pub rep_malicious: Option<Estimate>,
}

/// Aggregates the replications of one configuration. All runs must share
/// variant and attack parameters.
pub fn summarize(runs: &[ExperimentMetrics], accuracy_last: usize) -> Option<CellSummary> {
    let first = runs.first()?;
    debug_assert!(runs.iter().all(|m| m.variant == first.variant && m.rmi == first.rmi && m.rmo == first.rmo));
    let col = |f: &dyn Fn(&ExperimentMetrics) -> Option<f64>| {
        let xs: Vec<f64> = runs.iter().filter_map(f).collect();
        Estimate::from_samples(&xs)
    };
    Some(CellSummary {
        variant: first.variant.label().to_string(),
        omega: first.variant.omega(),
        rmi: first.rmi,
        rmo: first.rmo,
        arrival: first.arrival,
        replications: runs.len(),
        accuracy_window: accuracy_last,
        accuracy: col(&|m| Some(m.accuracy_window(accuracy_last))),
        precision: col(&|m| Some(m.final_blacklist().0)),
        recall: col(&|m| Some(m.final_blacklist().1)),
        rep_honest: col(&|m| m.final_reputations().0),
        rep_malicious: col(&|m| m.final_reputations().1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_matches_hand_computation() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(e.mean, 2.5);
        assert!((e.sd - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        // t_{0.975, 3} = 3.182446305284263
        let half = 3.182446305284263 * e.sd / 2.0;
        let (lo, hi) = e.ci95.unwrap();
        assert!((lo - (2.5 - half)).abs() < 1e-9 && (hi - (2.5 + half)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_samples() {
        assert!(Estimate::from_samples(&[]).is_none());
        let one = Estimate::from_samples(&[0.7]).unwrap();
        assert_eq!((one.mean, one.ci95), (0.7, None));
        let flat = Estimate::from_samples(&[0.5, 0.5, 0.5]).unwrap();
        assert_eq!(flat.ci95, Some((0.5, 0.5)));
    }
}
