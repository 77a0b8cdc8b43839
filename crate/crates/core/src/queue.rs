//! M/M/1 capacity model: waiting time, service-rate inversion, regression
//! forecasting of the service rate and the scenario projections built on it.
//!
//! Rates are in requests per second, times in milliseconds at the API
//! boundary. Internally everything is converted to seconds so that
//! `W = 1 / (mu - lambda)` holds without unit juggling.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("service rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("waiting time must be positive, got {0}")]
    NonPositiveWait(f64),
    #[error("need at least {need} observations for a degree-{degree} fit, got {got}")]
    TooFewPoints { degree: usize, need: usize, got: usize },
    #[error("regression is rank deficient")]
    Singular,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("bad sample file: {0}")]
    Samples(String),
}

/// Mean time in system, in seconds, or a marker that the queue grows without bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Wait {
    Stable(f64),
    Unstable,
}

impl Wait {
    pub fn is_stable(&self) -> bool {
        matches!(self, Wait::Stable(_))
    }

    pub fn seconds(&self) -> Option<f64> {
        match *self {
            Wait::Stable(w) => Some(w),
            Wait::Unstable => None,
        }
    }
}

/// `(1/mu) / (1 - lambda/mu)`; unstable once `lambda >= mu`.
pub fn mm1_wait(lambda: f64, mu: f64) -> Result<Wait, QueueError> {
    if !(mu > 0.0) {
        return Err(QueueError::NonPositiveRate(mu));
    }
    if lambda >= mu {
        return Ok(Wait::Unstable);
    }
    // Reduced form of the expression above; it rounds once less.
    Ok(Wait::Stable(1.0 / (mu - lambda)))
}

/// Service rate that produces mean time `w` (seconds) at arrival rate `lambda`.
pub fn service_rate(w: f64, lambda: f64) -> Result<f64, QueueError> {
    if !(w > 0.0) {
        return Err(QueueError::NonPositiveWait(w));
    }
    Ok((1.0 + w * lambda) / w)
}

/// Polynomial in lambda, lowest power first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }
}

/// Ordinary least squares fit of `ys` against powers of `xs`.
pub fn fit_polynomial(xs: &[f64], ys: &[f64], degree: usize) -> Result<Polynomial, QueueError> {
    assert_eq!(xs.len(), ys.len(), "xs and ys differ in length");
    let need = degree + 1;
    if xs.len() < need {
        return Err(QueueError::TooFewPoints { degree, need, got: xs.len() });
    }
    let design = DMatrix::from_fn(xs.len(), need, |r, c| xs[r].powi(c as i32));
    let target = DVector::from_column_slice(ys);
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    if svd.singular_values.min() <= max_sv * 1e-12 {
        return Err(QueueError::Singular);
    }
    let sol = svd.solve(&target, 0.0).map_err(|_| QueueError::Singular)?;
    Ok(Polynomial { coeffs: sol.iter().copied().collect() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioLabel {
    E0,
    P1,
    P2,
    P3,
    P4,
    /// Any other total chain time, in ms.
    Custom(u64),
}

impl ScenarioLabel {
    pub const ALL: [ScenarioLabel; 5] =
        [ScenarioLabel::E0, ScenarioLabel::P1, ScenarioLabel::P2, ScenarioLabel::P3, ScenarioLabel::P4];

    /// Total chain time in ms for the projected scenarios; E0 uses observed totals.
    pub fn chain_ms(self) -> ChainTime {
        match self {
            ScenarioLabel::E0 => ChainTime::Observed,
            ScenarioLabel::P1 => ChainTime::Total(8000.0),
            ScenarioLabel::P2 => ChainTime::Total(4000.0),
            ScenarioLabel::P3 => ChainTime::Total(2000.0),
            ScenarioLabel::P4 => ChainTime::Total(1000.0),
            ScenarioLabel::Custom(ms) => ChainTime::Total(ms as f64),
        }
    }

    /// The named scenario for a chain time, if there is one.
    pub fn for_chain_ms(ms: u64) -> ScenarioLabel {
        match ms {
            8000 => ScenarioLabel::P1,
            4000 => ScenarioLabel::P2,
            2000 => ScenarioLabel::P3,
            1000 => ScenarioLabel::P4,
            other => ScenarioLabel::Custom(other),
        }
    }
}

impl fmt::Display for ScenarioLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioLabel::Custom(ms) => write!(f, "wc{ms}"),
            other => write!(f, "{other:?}"),
        }
    }
}

impl FromStr for ScenarioLabel {
    type Err = QueueError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "E0" => Ok(ScenarioLabel::E0),
            "P1" => Ok(ScenarioLabel::P1),
            "P2" => Ok(ScenarioLabel::P2),
            "P3" => Ok(ScenarioLabel::P3),
            "P4" => Ok(ScenarioLabel::P4),
            other => other
                .strip_prefix("WC")
                .and_then(|ms| ms.parse().ok())
                .map(ScenarioLabel::Custom)
                .ok_or_else(|| QueueError::UnknownScenario(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ChainTime {
    /// Samples already hold the full end-to-end delay.
    Observed,
    /// Constant chain time in ms added to every processing sample.
    Total(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueScenario {
    pub label: ScenarioLabel,
    pub wc: ChainTime,
    /// (lambda req/s, delay ms). Processing time for projected scenarios,
    /// end-to-end delay for `Observed`.
    pub wp_samples: Vec<(f64, f64)>,
    pub lambda_grid: Vec<f64>,
}

impl QueueScenario {
    /// End-to-end delay per observation, in seconds.
    pub fn observed_wait(&self) -> Vec<(f64, f64)> {
        let wc = match self.wc {
            ChainTime::Observed => 0.0,
            ChainTime::Total(ms) => ms,
        };
        self.wp_samples.iter().map(|&(l, wp)| (l, (wp + wc) / 1000.0)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub lambda: f64,
    pub mu_forecast: f64,
    pub wait: Wait,
}

impl ProjectedPoint {
    pub fn wait_ms(&self) -> Option<f64> {
        self.wait.seconds().map(|s| s * 1000.0)
    }
}

/// Compose delays, invert to service rates, regress mu on lambda and map the
/// forecast back through the waiting-time formula.
pub fn project(scenario: &QueueScenario, degree: usize) -> Result<Vec<ProjectedPoint>, QueueError> {
    let obs = scenario.observed_wait();
    let xs: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let mus = obs.iter().map(|&(l, w)| service_rate(w, l)).collect::<Result<Vec<_>, _>>()?;
    let fit = fit_polynomial(&xs, &mus, degree)?;
    scenario
        .lambda_grid
        .iter()
        .map(|&lambda| {
            let mu = fit.eval(lambda);
            // A forecast rate that is not positive is unstable whatever lambda is.
            let wait = if mu > 0.0 { mm1_wait(lambda, mu)? } else { Wait::Unstable };
            Ok(ProjectedPoint { lambda, mu_forecast: mu, wait })
        })
        .collect()
}

/// `from, from+step, ...` up to `to` inclusive (within rounding).
pub fn lambda_grid(from: f64, to: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && to >= from, "bad grid");
    let n = ((to - from) / step + 1e-9).floor() as usize;
    (0..=n).map(|i| from + step * i as f64).collect()
}

/// Bundled measurements. These are SYNTHETIC: they reproduce the qualitative
/// shape of the published curves, not the original testbed numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// (lambda, processing ms).
    pub processing: Vec<(f64, f64)>,
    /// (lambda, end-to-end ms) standing in for the experimental runs.
    pub observed: Vec<(f64, f64)>,
}

pub fn synthetic_dataset() -> SyntheticDataset {
    let lambdas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let processing = lambdas.iter().map(|&l| (l, 500.0 + 400.0 * l)).collect();
    let observed = vec![
        (0.5, 9_900.0),
        (1.0, 11_100.0),
        (1.5, 12_500.0),
        (2.0, 14_300.0),
        (2.5, 16_700.0),
        (3.0, 20_000.0),
        (3.5, 25_000.0),
        (4.0, 33_300.0),
    ];
    SyntheticDataset { processing, observed }
}

/// The five scenarios over the default lambda grid 0.1..=10.
pub fn standard_scenarios(data: &SyntheticDataset) -> Vec<QueueScenario> {
    let grid = lambda_grid(0.1, 10.0, 0.1);
    ScenarioLabel::ALL
        .iter()
        .map(|&label| {
            let wc = label.chain_ms();
            let wp_samples = match wc {
                ChainTime::Observed => data.observed.clone(),
                ChainTime::Total(_) => data.processing.clone(),
            };
            QueueScenario { label, wc, wp_samples, lambda_grid: grid.clone() }
        })
        .collect()
}

/// Reads `(lambda, ms)` pairs from a two-column CSV with a header row.
pub fn read_samples<R: std::io::Read>(input: R) -> Result<Vec<(f64, f64)>, QueueError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| QueueError::Samples(e.to_string()))?;
        if rec.len() != 2 {
            return Err(QueueError::Samples(format!("row {}: expected 2 columns, got {}", line + 1, rec.len())));
        }
        let num = |i: usize| {
            rec[i].parse::<f64>().map_err(|_| QueueError::Samples(format!("row {}: `{}` is not a number", line + 1, &rec[i])))
        };
        out.push((num(0)?, num(1)?));
    }
    if out.is_empty() {
        return Err(QueueError::Samples("no rows".into()));
    }
    Ok(out)
}

/// Single processing server followed by a fixed number of chain writes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    /// Mean exponential processing time per request.
    pub processing_ms: f64,
    pub chain_steps: u32,
    /// Confirmation time of one chain write, independent of load.
    pub step_ms: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel { processing_ms: 200.0, chain_steps: 4, step_ms: 2000.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

/// Per-request end-to-end latencies under Poisson arrivals at `lambda`.
///
/// Arrival gaps and service draws come from the same unit-rate stream for a
/// given seed, so changing `lambda` or the model only rescales them and the
/// Lindley recursion stays pathwise monotone.
pub fn simulate_latencies(model: &LatencyModel, lambda: f64, n: usize, seed: u64) -> Vec<f64> {
    assert!(lambda > 0.0, "lambda must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = model.chain_steps as f64 * model.step_ms;
    let mut out = Vec::with_capacity(n);
    let mut wait = 0.0f64;
    let mut prev_service = 0.0f64;
    for i in 0..n {
        let gap: f64 = Exp1.sample(&mut rng);
        let unit_service: f64 = Exp1.sample(&mut rng);
        let service = unit_service * model.processing_ms;
        if i > 0 {
            wait = (wait + prev_service - gap * 1000.0 / lambda).max(0.0);
        }
        out.push(wait + service + chain);
        prev_service = service;
    }
    out
}

pub fn simulate_latency(model: &LatencyModel, lambda: f64, n: usize, seed: u64) -> LatencySummary {
    let mut xs = simulate_latencies(model, lambda, n, seed);
    assert!(!xs.is_empty(), "need at least one request");
    let mean_ms = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.sort_by(f64::total_cmp);
    let q = |p: f64| xs[((xs.len() - 1) as f64 * p).round() as usize];
    LatencySummary { mean_ms, p50_ms: q(0.5), p95_ms: q(0.95) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn wait_examples() {
        assert_eq!(mm1_wait(1.0, 2.0).unwrap(), Wait::Stable(1.0));
        assert_eq!(mm1_wait(0.0, 4.0).unwrap(), Wait::Stable(0.25));
        assert_eq!(mm1_wait(2.0, 2.0).unwrap(), Wait::Unstable);
        assert_eq!(mm1_wait(3.0, 2.0).unwrap(), Wait::Unstable);
        assert!(mm1_wait(1.0, 0.0).is_err());
        let near = mm1_wait(2.0 - 1e-9, 2.0).unwrap().seconds().unwrap();
        assert!(near > 1e8);
    }

    #[test]
    fn service_rate_examples() {
        assert_eq!(service_rate(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(service_rate(4.0, 0.0).unwrap(), 0.25);
        assert!(service_rate(0.0, 1.0).is_err());
    }

    #[test]
    fn wait_grows_with_load() {
        let mu = 3.0;
        let mut last = 0.0;
        for i in 0..300 {
            let w = mm1_wait(i as f64 * 0.01, mu).unwrap().seconds().unwrap();
            assert!(w > last);
            last = w;
        }
    }

    #[test]
    fn ols_recovers_exact_polynomials() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let lin: Vec<f64> = xs.iter().map(|x| 0.3 + 0.9 * x).collect();
        let p = fit_polynomial(&xs, &lin, 1).unwrap();
        assert!((p.coeffs[0] - 0.3).abs() < 1e-12 && (p.coeffs[1] - 0.9).abs() < 1e-12);
        let quad: Vec<f64> = xs.iter().map(|x| 1.0 - 0.2 * x + 0.05 * x * x).collect();
        let p = fit_polynomial(&xs, &quad, 2).unwrap();
        for (got, want) in p.coeffs.iter().zip([1.0, -0.2, 0.05]) {
            assert!((got - want).abs() < 1e-10);
        }
        assert!(matches!(fit_polynomial(&xs[..2], &lin[..2], 2), Err(QueueError::TooFewPoints { .. })));
        assert_eq!(fit_polynomial(&[1.0, 1.0], &[2.0, 3.0], 1), Err(QueueError::Singular));
    }

    #[test]
    fn ols_matches_closed_form_line() {
        let xs = [0.5, 1.0, 2.0, 3.5, 4.0];
        let ys = [1.1, 1.9, 3.2, 4.1, 5.3];
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let b = sxy / sxx;
        let a = my - b * mx;
        let p = fit_polynomial(&xs, &ys, 1).unwrap();
        assert!(rel(p.coeffs[0], a) < 1e-12 && rel(p.coeffs[1], b) < 1e-12);
    }

    #[test]
    fn grid_is_inclusive() {
        let g = lambda_grid(0.1, 10.0, 0.1);
        assert_eq!(g.len(), 100);
        assert!((g[99] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn scenario_labels_parse() {
        for l in ScenarioLabel::ALL {
            assert_eq!(l.to_string().parse::<ScenarioLabel>().unwrap(), l);
        }
        assert!("P9".parse::<ScenarioLabel>().is_err());
        assert_eq!("wc1500".parse::<ScenarioLabel>().unwrap(), ScenarioLabel::Custom(1500));
        assert_eq!(ScenarioLabel::for_chain_ms(4000), ScenarioLabel::P2);
        assert_eq!(ScenarioLabel::for_chain_ms(1500).to_string(), "wc1500");
    }

    #[test]
    fn sample_files() {
        let rows = read_samples("lambda,wp_ms\n0.5, 1200\n1,1400\n".as_bytes()).unwrap();
        assert_eq!(rows, vec![(0.5, 1200.0), (1.0, 1400.0)]);
        assert!(read_samples("lambda,wp_ms\n".as_bytes()).is_err());
        assert!(read_samples("lambda,wp_ms\n1,x\n".as_bytes()).is_err());
        assert!(read_samples("a,b\n1,2,3\n".as_bytes()).is_err());
    }

    #[test]
    fn latency_is_constant_plus_queue() {
        let m = LatencyModel { processing_ms: 0.0, chain_steps: 3, step_ms: 500.0 };
        let xs = simulate_latencies(&m, 1.0, 50, 1);
        assert!(xs.iter().all(|&x| x == 1500.0));
    }
}
