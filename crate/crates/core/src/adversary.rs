//! Actor behaviour models and population construction for the collusion
//! experiments.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

use crate::gathering::{GeoPoint, ProducerDescriptor};
use crate::ids::{NodeId, ProducerId};

pub const DTYPE: &str = "temperature";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("invalid attack configuration: {0}")]
    InvalidConfig(String),
    #[error("{producers} malicious producers but no malicious indexer to attach them to")]
    NoMaliciousIndexers { producers: usize },
    #[error("{producers} honest producers but no honest indexer to attach them to")]
    NoHonestIndexers { producers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arrival {
    Uniform,
    Bursty,
}

impl std::fmt::Display for Arrival {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arrival::Uniform => "uniform",
            Arrival::Bursty => "bursty",
        })
    }
}

impl std::str::FromStr for Arrival {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Arrival::Uniform),
            "bursty" => Ok(Arrival::Bursty),
            other => Err(format!("unknown arrival `{other}` (expected uniform or bursty)")),
        }
    }
}

/// Disk in which producers live and request centres are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub center: GeoPoint,
    pub radius_km: f64,
}

impl Default for Region {
    fn default() -> Self {
        Self { center: GeoPoint { lat: 44.5, lon: 11.3 }, radius_km: 100.0 }
    }
}

impl Region {
    /// Uniform point in the disk (uniform in area for radii small against
    /// the Earth).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> GeoPoint {
        let d = self.radius_km * rng.random::<f64>().sqrt();
        let bearing = rng.random::<f64>() * std::f64::consts::TAU;
        self.center.destination(bearing, d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub ground_truth: f64,
    pub false_truth: f64,
    pub rmi: f64,
    pub rmo: f64,
    pub arrival: Arrival,
    pub epochs_total: u64,
    pub warmup_epochs: u64,
    /// Epochs over which uniform arrival spreads the spawned producers.
    pub spawn_epochs: u64,
    pub initial_honest_producers: usize,
    pub spawned_producers: usize,
    pub pareto_shape: f64,
    pub n_indexers: usize,
    pub n_oracles: usize,
    /// Upper bound of the uniform law for producer standard deviations.
    pub max_std: f64,
    /// Standard deviation of the noise malicious oracles add to the false truth.
    pub tamper_jitter: f64,
    pub region: Region,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            ground_truth: 25.0,
            false_truth: 10.0,
            rmi: 0.0,
            rmo: 0.0,
            arrival: Arrival::Uniform,
            epochs_total: 3000,
            warmup_epochs: 1000,
            spawn_epochs: 1000,
            initial_honest_producers: 500,
            spawned_producers: 500,
            pareto_shape: 2.0,
            n_indexers: 100,
            n_oracles: 20,
            max_std: 4.0,
            tamper_jitter: 0.5,
            region: Region::default(),
        }
    }
}

/// `⌊ratio · n⌋`, tolerant of ratios like 0.3 that are not exact in binary.
pub fn malicious_count(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        let bad = |m: &str| Err(AdversaryError::InvalidConfig(m.to_string()));
        if !(0.0..=0.5).contains(&self.rmi) {
            return bad("rmi must lie in [0, 0.5]");
        }
        if !(0.0..=1.0).contains(&self.rmo) {
            return bad("rmo must lie in [0, 1]");
        }
        if self.warmup_epochs >= self.epochs_total {
            return bad("warmup_epochs must be below epochs_total");
        }
        if self.arrival == Arrival::Uniform && self.spawn_epochs == 0 {
            return bad("spawn_epochs must be positive for uniform arrival");
        }
        if !(self.pareto_shape > 0.0) {
            return bad("pareto_shape must be positive");
        }
        if self.max_std < 0.0 || self.tamper_jitter < 0.0 {
            return bad("standard deviations must be non-negative");
        }
        if !(self.region.radius_km > 0.0) {
            return bad("region radius must be positive");
        }
        if self.n_indexers == 0 || self.n_oracles == 0 {
            return bad("need at least one indexer and one oracle");
        }
        let mal = self.malicious_producers();
        if mal > self.spawned_producers {
            return bad(&format!("{mal} malicious producers do not fit in {} spawned", self.spawned_producers));
        }
        Ok(())
    }

    pub fn malicious_indexers(&self) -> usize {
        malicious_count(self.rmi, self.n_indexers)
    }

    pub fn malicious_oracles(&self) -> usize {
        malicious_count(self.rmo, self.n_oracles)
    }

    /// Malicious producers make up a fraction RMI of the final population.
    pub fn malicious_producers(&self) -> usize {
        malicious_count(self.rmi, self.initial_honest_producers + self.spawned_producers)
    }

    /// Last epoch (exclusive) at which producers may still spawn.
    pub fn spawn_end(&self) -> u64 {
        match self.arrival {
            Arrival::Uniform => self.warmup_epochs + self.spawn_epochs,
            Arrival::Bursty => self.warmup_epochs + 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProducerModel {
    pub honest: bool,
    pub mean: f64,
    pub std: f64,
}

pub fn sample_reading<R: Rng + ?Sized>(model: &ProducerModel, rng: &mut R) -> f64 {
    let z: f64 = rng.sample(rand_distr::StandardNormal);
    model.mean + model.std * z
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimProducer {
    pub descriptor: ProducerDescriptor,
    pub model: ProducerModel,
    pub spawn_epoch: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub id: NodeId,
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub producers: Vec<SimProducer>,
    pub indexers: Vec<Actor>,
    pub oracles: Vec<Actor>,
}

impl Population {
    pub fn producer_index(&self, id: &ProducerId) -> Option<usize> {
        // ids are zero-padded in creation order
        self.producers.binary_search_by(|p| p.descriptor.id.cmp(id)).ok()
    }
}

fn actors<R: Rng + ?Sized>(prefix: &str, n: usize, malicious: usize, rng: &mut R) -> Vec<Actor> {
    let bad: BTreeSet<usize> = sample(rng, n, malicious).into_iter().collect();
    (0..n)
        .map(|i| Actor { id: NodeId::new(format!("{prefix}-{i:03}")), malicious: bad.contains(&i) })
        .collect()
}

/// Builds the full population. Honest producers attach only to honest
/// indexers and malicious producers only to malicious ones; each producer
/// picks `⌊x⌋` distinct indexers of its class, `x ~ Pareto(1, shape)` (equivalently `⌈x − 1⌉`).
pub fn build_population<R: Rng + ?Sized>(cfg: &AttackConfig, rng: &mut R) -> Result<Population, AdversaryError> {
    cfg.validate()?;
    let indexers = actors("idx", cfg.n_indexers, cfg.malicious_indexers(), rng);
    let oracles = actors("orc", cfg.n_oracles, cfg.malicious_oracles(), rng);
    let honest_idx: Vec<&NodeId> = indexers.iter().filter(|a| !a.malicious).map(|a| &a.id).collect();
    let mal_idx: Vec<&NodeId> = indexers.iter().filter(|a| a.malicious).map(|a| &a.id).collect();

    let n_mal = cfg.malicious_producers();
    let n_honest = cfg.initial_honest_producers + cfg.spawned_producers - n_mal;
    if n_mal > 0 && mal_idx.is_empty() {
        return Err(AdversaryError::NoMaliciousIndexers { producers: n_mal });
    }
    if n_honest > 0 && honest_idx.is_empty() {
        return Err(AdversaryError::NoHonestIndexers { producers: n_honest });
    }

    let mut spawned_malicious = vec![false; cfg.spawned_producers];
    for i in sample(rng, cfg.spawned_producers, n_mal) {
        spawned_malicious[i] = true;
    }
    let pareto = Pareto::new(1.0, cfg.pareto_shape).map_err(|e| AdversaryError::InvalidConfig(e.to_string()))?;
    let std_law = rand_distr::Uniform::new_inclusive(0.0, cfg.max_std).map_err(|e| AdversaryError::InvalidConfig(e.to_string()))?;

    let total = cfg.initial_honest_producers + cfg.spawned_producers;
    let mut producers = Vec::with_capacity(total);
    for n in 0..total {
        let spawned = n >= cfg.initial_honest_producers;
        let honest = !(spawned && spawned_malicious[n - cfg.initial_honest_producers]);
        let spawn_epoch = match (spawned, cfg.arrival) {
            (false, _) => 0,
            (true, Arrival::Bursty) => cfg.warmup_epochs,
            (true, Arrival::Uniform) => rng.random_range(cfg.warmup_epochs..cfg.warmup_epochs + cfg.spawn_epochs),
        };
        let pool = if honest { &honest_idx } else { &mal_idx };
        // x ≥ 1, so ⌈x⌉ would almost never be 1; the floor gives a single
        // indexer with probability P(x < 2).
        let k = (pareto.sample(rng).floor() as usize).clamp(1, pool.len());
        let indexed_by = sample(rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect();
        let id = ProducerId::new(format!("prd-{n:04}"));
        let descriptor = ProducerDescriptor {
            payment_address: format!("pay-{n:04}"),
            id,
            dtype: DTYPE.to_string(),
            location: cfg.region.sample(rng),
            indexed_by,
        };
        let model = ProducerModel {
            honest,
            mean: if honest { cfg.ground_truth } else { cfg.false_truth },
            std: std_law.sample(rng),
        };
        producers.push(SimProducer { descriptor, model, spawn_epoch });
    }
    Ok(Population { producers, indexers, oracles })
}

/// Malicious oracles replace every reading taken from an honest producer
/// with a value near the false truth. Nulls stay null.
pub fn tamper<R: Rng + ?Sized>(
    malicious_oracle: bool,
    readings: &mut [Option<f64>],
    producer_honest: &[bool],
    false_truth: f64,
    jitter: f64,
    rng: &mut R,
) {
    if !malicious_oracle {
        return;
    }
    let noise = Normal::new(0.0, jitter).expect("jitter validated non-negative");
    for (cell, honest) in readings.iter_mut().zip(producer_honest) {
        if *honest && cell.is_some() {
            *cell = Some(false_truth + noise.sample(rng));
        }
    }
}

/// Expected fraction of corrupted cells when a fraction `rmi` of columns
/// and `rmo` of rows are adversarial.
pub fn expected_corruption(rmi: f64, rmo: f64) -> f64 {
    rmo + rmi - rmo * rmi
}
