//! Truth inference, score/deviation matrices, ratings and reputation.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

use crate::gathering::DataMatrix;
use crate::ids::{NodeId, ProducerId, SimTime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RatingError {
    #[error("data matrix has no non-null cell")]
    AllNull,
    #[error("invalid rating parameter: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingParams {
    /// Tolerance on the distance to the inferred truth (°C).
    pub tau_s: f64,
    /// Tolerance on the distance to the producer's column mean (°C).
    pub tau_v: f64,
    /// Acceptable commit delay behind the fastest oracle (ms).
    pub tau_t: f64,
    pub beta_rho: f64,
    pub beta_theta: f64,
    pub delta_rho: f64,
    pub delta_theta: f64,
    /// Ban threshold; nodes whose reputation drops below it are banned.
    pub omega: f64,
}

impl Default for RatingParams {
    fn default() -> Self {
        Self {
            tau_s: 3.0,
            tau_v: 1.5,
            tau_t: 2000.0,
            beta_rho: 0.9,
            beta_theta: 0.25,
            delta_rho: 0.5,
            delta_theta: 0.5,
            omega: -0.6,
        }
    }
}

impl RatingParams {
    pub fn validate(&self) -> Result<(), RatingError> {
        if !(self.tau_s > 0.0 && self.tau_v > 0.0 && self.tau_t > 0.0) {
            return Err(RatingError::InvalidParams("thresholds must be positive"));
        }
        if !(0.0..=1.0).contains(&self.beta_rho) || !(0.0..=1.0).contains(&self.beta_theta) {
            return Err(RatingError::InvalidParams("beta weights must lie in [0, 1]"));
        }
        let open = |d: f64| d > 0.0 && d < 1.0;
        if !open(self.delta_rho) || !open(self.delta_theta) {
            return Err(RatingError::InvalidParams("delta weights must lie in (0, 1)"));
        }
        if !(-1.0..=1.0).contains(&self.omega) {
            return Err(RatingError::InvalidParams("omega must lie in [-1, 1]"));
        }
        Ok(())
    }
}

/// Pluggable aggregation of the data matrix into a single answer.
pub trait TruthInference {
    fn infer(&self, data: &DataMatrix) -> Result<f64, RatingError>;
}

/// Median of every non-null cell; the mean of the middle pair for even counts.
#[derive(Debug, Clone, Copy, Default)]
pub struct MedianInference;

impl TruthInference for MedianInference {
    fn infer(&self, data: &DataMatrix) -> Result<f64, RatingError> {
        let mut values: Vec<f64> = data.non_null().collect();
        median(&mut values).ok_or(RatingError::AllNull)
    }
}

pub fn truth_infer(data: &DataMatrix) -> Result<f64, RatingError> {
    MedianInference.infer(data)
}

/// Median by selection; reorders `values`.
pub fn median(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower_max = lower.iter().copied().max_by(f64::total_cmp).expect("n >= 2");
        Some((lower_max + upper) / 2.0)
    }
}

pub fn distance(a: f64, b: f64) -> f64 {
    (a - b).abs()
}

/// `2 / (1 + (a/τ)²) − 1`, with `+∞ ↦ −1`.
///
/// `τ = 0` takes the limit: 1 when `a = 0`, −1 otherwise.
pub fn constraint(a: f64, tau: f64) -> f64 {
    if a.is_nan() || a.is_infinite() {
        return -1.0;
    }
    if tau <= 0.0 {
        return if a == 0.0 { 1.0 } else { -1.0 };
    }
    let x = a / tau;
    2.0 / (1.0 + x * x) - 1.0
}

/// Score (`S`) and deviation (`V`) matrices. Null data cells map to `+∞` in
/// both, and are excluded from the column means used for `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrices {
    rows: usize,
    cols: usize,
    s: Vec<f64>,
    v: Vec<f64>,
    pub truth: f64,
    pub column_means: Vec<Option<f64>>,
    /// Population standard deviation of the finite entries of each `V` column.
    pub column_sigma: Vec<Option<f64>>,
}

impl ScoreMatrices {
    pub fn compute(data: &DataMatrix, truth: f64) -> Self {
        let (rows, cols) = (data.rows(), data.cols());
        let column_means: Vec<Option<f64>> = (0..cols)
            .map(|j| {
                let (sum, n) = data.column(j).flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
                (n > 0).then(|| sum / n as f64)
            })
            .collect();
        let mut s = Vec::with_capacity(rows * cols);
        let mut v = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                match (data.get(i, j), column_means[j]) {
                    (Some(x), Some(mean)) => {
                        s.push(distance(x, truth));
                        v.push(distance(x, mean));
                    }
                    _ => {
                        s.push(f64::INFINITY);
                        v.push(f64::INFINITY);
                    }
                }
            }
        }
        let column_sigma = (0..cols)
            .map(|j| {
                let finite: Vec<f64> = (0..rows).map(|i| v[i * cols + j]).filter(|x| x.is_finite()).collect();
                population_std(&finite)
            })
            .collect();
        Self { rows, cols, s, v, truth, column_means, column_sigma }
    }

    pub fn s(&self, i: usize, j: usize) -> f64 {
        self.s[i * self.cols + j]
    }

    pub fn v(&self, i: usize, j: usize) -> f64 {
        self.v[i * self.cols + j]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }
}

fn population_std(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Some(var.sqrt())
}

/// Producer rating: accuracy against the inferred truth blended with
/// consistency across oracles. Both means run over all `K_O` rows, so null
/// cells contribute −1.
pub fn rate_producer(j: usize, m: &ScoreMatrices, params: &RatingParams) -> f64 {
    let k = m.rows() as f64;
    if m.rows() == 0 {
        return 0.0;
    }
    let acc: f64 = (0..m.rows()).map(|i| constraint(m.s(i, j), params.tau_s)).sum::<f64>() / k;
    let cons: f64 = (0..m.rows()).map(|i| constraint(m.v(i, j), params.tau_v)).sum::<f64>() / k;
    params.beta_rho * acc + (1.0 - params.beta_rho) * cons
}

/// Unweighted mean of the ratings of the producers `indexer` contributed to
/// this request; `None` if it contributed none.
pub fn rate_indexer(indexer: &NodeId, producers: &[ProducerId], producer_ratings: &[f64], provenance: &BTreeMap<ProducerId, std::collections::BTreeSet<NodeId>>) -> Option<f64> {
    let (sum, n) = producers
        .iter()
        .zip(producer_ratings)
        .filter(|(p, _)| provenance.get(*p).is_some_and(|s| s.contains(indexer)))
        .fold((0.0, 0usize), |(s, n), (_, r)| (s + r, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Oracle-side term for a null cell: `(φ − K_O)/(K_O − 1)` where `φ` is the
/// number of oracles that got a null from this producer. −1 when the oracle
/// was alone, 0 when every oracle got a null.
///
/// Returns `(term, degenerate)`; with `K_O = 1` the ratio is undefined and the
/// term is 0 with `degenerate = true`.
pub fn null_cell_term(nulls_in_column: usize, k_oracles: usize) -> (f64, bool) {
    if k_oracles <= 1 {
        return (0.0, true);
    }
    let phi = nulls_in_column as f64;
    let k = k_oracles as f64;
    (((phi - k) / (k - 1.0)).clamp(-1.0, 0.0), false)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleRating {
    pub rating: f64,
    pub degenerate: bool,
}

/// Oracle rating: speed of the commit relative to the fastest oracle blended
/// with agreement with the other oracles on each producer. `commit_delay` is
/// `None` for an oracle that never committed in time.
pub fn rate_oracle(i: usize, m: &ScoreMatrices, data: &DataMatrix, commit_delay: Option<f64>, params: &RatingParams) -> OracleRating {
    let speed = constraint(commit_delay.unwrap_or(f64::INFINITY), params.tau_t);
    let p = data.cols();
    let mut degenerate = false;
    let agreement = if p == 0 {
        0.0
    } else {
        let sum: f64 = (0..p)
            .map(|j| match data.get(i, j) {
                None => {
                    let (term, flag) = null_cell_term(data.column_nulls(j), data.rows());
                    degenerate |= flag;
                    term
                }
                Some(_) => constraint(m.v(i, j), m.column_sigma[j].unwrap_or(0.0)),
            })
            .sum();
        sum / p as f64
    };
    OracleRating { rating: params.beta_theta * speed + (1.0 - params.beta_theta) * agreement, degenerate }
}

/// Convex blend of the previous reputation and the new rating, kept in `[-1, 1]`.
pub fn update_reputation(prev: f64, rating: f64, delta: f64) -> f64 {
    (delta * prev + (1.0 - delta) * rating).clamp(-1.0, 1.0)
}

pub fn should_ban(reputation: f64, omega: f64) -> bool {
    reputation < omega
}

/// Everything computed for one resolved request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub truth: f64,
    pub producer_ratings: BTreeMap<ProducerId, f64>,
    pub indexer_ratings: BTreeMap<NodeId, f64>,
    pub oracle_ratings: BTreeMap<NodeId, f64>,
    /// Milliseconds behind the fastest confirmed commit; absent if the oracle
    /// did not commit in time.
    pub commit_delays: BTreeMap<NodeId, Option<SimTime>>,
    /// Null cells per oracle row.
    pub row_nulls: BTreeMap<NodeId, usize>,
    /// Oracles whose null-cell term was undefined (single-oracle committee).
    pub degenerate: Vec<NodeId>,
}

/// Rates producers, the given indexers and every oracle row of `data`.
///
/// `commit_times` holds the confirmation time of each oracle's in-time commit.
pub fn rate_request(
    data: &DataMatrix,
    truth: f64,
    commit_times: &BTreeMap<NodeId, SimTime>,
    indexers: &[NodeId],
    params: &RatingParams,
) -> RatingReport {
    let m = ScoreMatrices::compute(data, truth);
    let producer_ratings: Vec<f64> = (0..data.cols()).map(|j| rate_producer(j, &m, params)).collect();
    let indexer_ratings = indexers
        .iter()
        .filter_map(|k| rate_indexer(k, &data.producers, &producer_ratings, &data.provenance).map(|r| (k.clone(), r)))
        .collect();

    let fastest = data.oracles.iter().filter_map(|o| commit_times.get(o)).min().copied();
    let mut oracle_ratings = BTreeMap::new();
    let mut commit_delays = BTreeMap::new();
    let mut row_nulls = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (i, o) in data.oracles.iter().enumerate() {
        let delay = commit_times.get(o).zip(fastest).map(|(t, f)| t - f);
        let r = rate_oracle(i, &m, data, delay.map(|d| d as f64), params);
        if r.degenerate {
            degenerate.push(o.clone());
        }
        oracle_ratings.insert(o.clone(), r.rating);
        commit_delays.insert(o.clone(), delay);
        row_nulls.insert(o.clone(), data.row_nulls(i));
    }

    RatingReport {
        truth,
        producer_ratings: data.producers.iter().cloned().zip(producer_ratings).collect(),
        indexer_ratings,
        oracle_ratings,
        commit_delays,
        row_nulls,
        degenerate,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn matrix(rows: Vec<Vec<Option<f64>>>) -> DataMatrix {
        let k = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        let oracles = (0..k).map(|i| NodeId::new(format!("o{i}"))).collect();
        let producers: Vec<ProducerId> = (0..p).map(|j| ProducerId::new(format!("p{j}"))).collect();
        let provenance = producers.iter().map(|p| (p.clone(), BTreeSet::from([NodeId::new("i0")]))).collect();
        DataMatrix::from_rows(oracles, producers, rows, provenance)
    }

    /// Sort-based reference median used as the independent oracle.
    fn brute_median(mut xs: Vec<f64>) -> Option<f64> {
        if xs.is_empty() {
            return None;
        }
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = xs.len();
        Some(if n % 2 == 1 { xs[n / 2] } else { (xs[n / 2 - 1] + xs[n / 2]) / 2.0 })
    }

    #[test]
    fn median_examples() {
        let d = matrix(vec![vec![Some(25.0); 3]; 4]);
        assert_eq!(truth_infer(&d).unwrap(), 25.0);
        let d = matrix(vec![vec![Some(24.0), Some(25.0)], vec![Some(26.0), Some(100.0)]]);
        assert_eq!(truth_infer(&d).unwrap(), 25.5);
        let d = matrix(vec![vec![None, None]]);
        assert_eq!(truth_infer(&d).unwrap_err(), RatingError::AllNull);
    }

    #[test]
    fn constraint_table() {
        let tau = 3.0;
        assert_eq!(constraint(0.0, tau), 1.0);
        assert_eq!(constraint(tau, tau), 0.0);
        assert!((constraint(3.0 * tau, tau) + 0.8).abs() < 1e-12);
        assert_eq!(constraint(f64::INFINITY, tau), -1.0);
        assert_eq!(constraint(0.0, 0.0), 1.0);
        assert_eq!(constraint(0.1, 0.0), -1.0);
    }

    #[test]
    fn distance_is_symmetric() {
        assert_eq!(distance(3.0, 5.5), 2.5);
        assert_eq!(distance(5.5, 3.0), 2.5);
        assert_eq!(distance(1.0, 1.0), 0.0);
    }

    #[test]
    fn producer_rating_perfect_agreement() {
        let d = matrix(vec![vec![Some(25.0)]; 5]);
        let m = ScoreMatrices::compute(&d, 25.0);
        assert_eq!(rate_producer(0, &m, &RatingParams::default()), 1.0);
    }

    #[test]
    fn producer_rating_at_tolerance() {
        // truth 25, readings 22 and 28: S = 3 everywhere
        let d = matrix(vec![vec![Some(22.0)], vec![Some(28.0)]]);
        let m = ScoreMatrices::compute(&d, 25.0);
        let params = RatingParams { beta_rho: 1.0, ..Default::default() };
        assert_eq!(rate_producer(0, &m, &params), 0.0);
    }

    #[test]
    fn producer_rating_hand_evaluated() {
        // readings 25 and 28 -> S = (0, 3), column mean 26.5 -> V = (1.5, 1.5)
        let d = matrix(vec![vec![Some(25.0)], vec![Some(28.0)]]);
        let m = ScoreMatrices::compute(&d, 25.0);
        assert_eq!((m.s(0, 0), m.s(1, 0)), (0.0, 3.0));
        assert_eq!((m.v(0, 0), m.v(1, 0)), (1.5, 1.5));
        let params = RatingParams { beta_rho: 0.9, tau_s: 3.0, tau_v: 1.5, ..Default::default() };
        let r = rate_producer(0, &m, &params);
        assert!((r - 0.45).abs() < 1e-12, "{r}");
    }

    #[test]
    fn nulls_are_infinite_and_excluded_from_means() {
        let d = matrix(vec![vec![Some(20.0)], vec![None], vec![Some(30.0)]]);
        let m = ScoreMatrices::compute(&d, 25.0);
        assert_eq!(m.column_means[0], Some(25.0));
        assert_eq!(m.s(1, 0), f64::INFINITY);
        assert_eq!(m.v(1, 0), f64::INFINITY);
        assert_eq!(m.v(0, 0), 5.0);
        assert_eq!(m.column_sigma[0], Some(0.0));
    }

    #[test]
    fn indexer_rating_averages_own_producers() {
        let producers = vec![ProducerId::new("a"), ProducerId::new("b"), ProducerId::new("c")];
        let ratings = [0.9, 0.3, -0.6];
        let (i1, i2) = (NodeId::new("i1"), NodeId::new("i2"));
        let provenance = BTreeMap::from([
            (producers[0].clone(), BTreeSet::from([i1.clone()])),
            (producers[1].clone(), BTreeSet::from([i1.clone(), i2.clone()])),
            (producers[2].clone(), BTreeSet::from([i2.clone()])),
        ]);
        assert!((rate_indexer(&i1, &producers, &ratings, &provenance).unwrap() - 0.6).abs() < 1e-12);
        assert!((rate_indexer(&i2, &producers, &ratings, &provenance).unwrap() + 0.15).abs() < 1e-12);
        assert_eq!(rate_indexer(&NodeId::new("i3"), &producers, &ratings, &provenance), None);
    }

    #[test]
    fn fastest_oracle_speed_term() {
        let d = matrix(vec![vec![Some(25.0), Some(24.0)], vec![Some(26.0), Some(25.0)], vec![Some(24.0), Some(26.0)]]);
        let m = ScoreMatrices::compute(&d, 25.0);
        let params = RatingParams::default();
        let agreement_only = rate_oracle(0, &m, &d, Some(f64::INFINITY), &params).rating + params.beta_theta;
        let fastest = rate_oracle(0, &m, &d, Some(0.0), &params).rating;
        assert!((fastest - agreement_only - params.beta_theta).abs() < 1e-12);
    }

    #[test]
    fn null_dichotomy() {
        assert_eq!(null_cell_term(1, 5), (-1.0, false));
        assert_eq!(null_cell_term(5, 5), (0.0, false));
        assert_eq!(null_cell_term(3, 5), (-0.5, false));
        assert_eq!(null_cell_term(1, 1), (0.0, true));
    }

    #[test]
    fn producer_that_nulls_everyone_is_neutral_for_oracles() {
        // column 1 null for all oracles; column 0 identical readings
        let d = matrix(vec![vec![Some(25.0), None]; 5]);
        let m = ScoreMatrices::compute(&d, 25.0);
        let params = RatingParams { beta_theta: 0.0, ..Default::default() };
        for i in 0..5 {
            // column 0: V = 0, sigma = 0 -> c = 1; column 1 -> 0
            assert_eq!(rate_oracle(i, &m, &d, Some(0.0), &params).rating, 0.5);
        }
    }

    #[test]
    fn lone_null_is_punished() {
        let mut rows = vec![vec![Some(25.0)]; 5];
        rows[2][0] = None;
        let d = matrix(rows);
        let m = ScoreMatrices::compute(&d, 25.0);
        let params = RatingParams { beta_theta: 0.0, ..Default::default() };
        assert_eq!(rate_oracle(2, &m, &d, Some(0.0), &params).rating, -1.0);
        assert_eq!(rate_oracle(0, &m, &d, Some(0.0), &params).rating, 1.0);
    }

    #[test]
    fn single_oracle_committee_is_flagged() {
        let d = matrix(vec![vec![None, Some(3.0)]]);
        let m = ScoreMatrices::compute(&d, 3.0);
        let r = rate_oracle(0, &m, &d, Some(0.0), &RatingParams::default());
        assert!(r.degenerate);
    }

    #[test]
    fn reputation_update_examples() {
        assert!((update_reputation(0.6, 0.2, 0.5) - 0.4).abs() < 1e-15);
        assert_eq!(update_reputation(0.3, 0.3, 0.5), 0.3);
        // closed form: rep_n = 1 - 2·δ^n from rep_0 = -1
        let delta = 0.5;
        let mut rep = -1.0;
        for n in 1..=20 {
            let next = update_reputation(rep, 1.0, delta);
            assert!(next > rep);
            assert!((next - (1.0 - 2.0 * delta.powi(n))).abs() < 1e-12);
            rep = next;
        }
    }

    #[test]
    fn ban_threshold_is_strict() {
        assert!(should_ban(-0.61, -0.6));
        assert!(!should_ban(-0.6, -0.6));
    }

    #[test]
    fn report_fields() {
        let mut rows = vec![vec![Some(25.0), Some(25.5)]; 3];
        rows[1] = vec![None, None];
        let d = matrix(rows);
        let times = BTreeMap::from([(NodeId::new("o0"), 3000), (NodeId::new("o2"), 5000)]);
        let rep = rate_request(&d, 25.0, &times, &[NodeId::new("i0")], &RatingParams::default());
        assert_eq!(rep.commit_delays[&NodeId::new("o0")], Some(0));
        assert_eq!(rep.commit_delays[&NodeId::new("o2")], Some(2000));
        assert_eq!(rep.commit_delays[&NodeId::new("o1")], None);
        assert_eq!(rep.row_nulls[&NodeId::new("o1")], 2);
        assert!(rep.indexer_ratings.contains_key(&NodeId::new("i0")));
        let all = rep.producer_ratings.values().chain(rep.indexer_ratings.values()).chain(rep.oracle_ratings.values());
        for r in all {
            assert!((-1.0..=1.0).contains(r));
        }
        let json = serde_json::to_string(&rep).unwrap();
        assert!(json.contains("\"truth\":25.0"));
    }

    #[test]
    fn params_validation() {
        assert!(RatingParams::default().validate().is_ok());
        assert!(RatingParams { tau_s: 0.0, ..Default::default() }.validate().is_err());
        assert!(RatingParams { delta_rho: 1.0, ..Default::default() }.validate().is_err());
        assert!(RatingParams { omega: -1.5, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn median_matches_brute_force_on_small_alphabet() {
        let alphabet = [None, Some(-1.0), Some(0.0), Some(2.5), Some(7.0)];
        let base = alphabet.len();
        for rows in 1..=3usize {
            for cols in 1..=3usize {
                let cells = rows * cols;
                for code in 0..base.pow(cells as u32) {
                    let mut c = code;
                    let mut grid = vec![vec![None; cols]; rows];
                    for cell in grid.iter_mut().flatten() {
                        *cell = alphabet[c % base];
                        c /= base;
                    }
                    let flat: Vec<f64> = grid.iter().flatten().flatten().copied().collect();
                    let d = matrix(grid);
                    match brute_median(flat) {
                        Some(expected) => assert_eq!(truth_infer(&d).unwrap(), expected),
                        None => assert!(truth_infer(&d).is_err()),
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn constraint_range_and_monotone(a in 0.0f64..1e6, b in 0.0f64..1e6, tau in 1e-3f64..100.0) {
            let ca = constraint(a, tau);
            prop_assert!(ca > -1.0 && ca <= 1.0);
            prop_assert_eq!(ca > 0.0, a < tau);
            if a < b {
                prop_assert!(constraint(b, tau) <= ca);
            }
        }

        #[test]
        fn reputation_stays_in_range(
            start in -1.0f64..=1.0,
            ratings in proptest::collection::vec(-1.0f64..=1.0, 0..50),
            delta in 0.01f64..0.99,
        ) {
            let mut rep = start;
            for r in &ratings {
                rep = update_reputation(rep, *r, delta);
                prop_assert!((-1.0..=1.0).contains(&rep));
            }
        }

        #[test]
        fn initial_reputation_weight_decays(start in -1.0f64..=1.0, n in 0i32..30, delta in 0.05f64..0.95) {
            // all-zero ratings isolate the original reputation's weight
            let mut rep = start;
            for _ in 0..n {
                rep = update_reputation(rep, 0.0, delta);
            }
            prop_assert!((rep - start * delta.powi(n)).abs() < 1e-12);
        }

        #[test]
        fn median_within_range_and_permutation_invariant(
            rows in proptest::collection::vec(proptest::collection::vec(proptest::option::of(-40.0f64..60.0), 4), 1..6)
        ) {
            let d = matrix(rows.clone());
            let flat: Vec<f64> = rows.iter().flatten().flatten().copied().collect();
            if let Ok(t) = truth_infer(&d) {
                let lo = flat.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = flat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(t >= lo && t <= hi);
                let mut rev = rows.clone();
                rev.reverse();
                for r in rev.iter_mut() { r.reverse(); }
                prop_assert_eq!(truth_infer(&matrix(rev)).unwrap(), t);
            } else {
                prop_assert!(flat.is_empty());
            }
        }

        #[test]
        fn ratings_in_range(
            rows in proptest::collection::vec(proptest::collection::vec(proptest::option::of(0.0f64..50.0), 3), 1..7),
            delays in proptest::collection::vec(0u64..10_000, 7),
        ) {
            let d = matrix(rows);
            if let Ok(t) = truth_infer(&d) {
                let times = d.oracles.iter().cloned().zip(delays.iter().copied()).collect();
                let rep = rate_request(&d, t, &times, &[NodeId::new("i0")], &RatingParams::default());
                for r in rep.producer_ratings.values().chain(rep.indexer_ratings.values()).chain(rep.oracle_ratings.values()) {
                    prop_assert!((-1.0..=1.0).contains(r), "{}", r);
                }
            }
        }
    }
}
