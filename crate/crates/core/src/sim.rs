//! Epoch loop: one full request resolution per epoch, the Med / Med-R /
//! Med-RB variants, and replicated experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

use crate::adversary::{build_population, sample_reading, tamper, AdversaryError, Arrival, AttackConfig, Population, DTYPE};
use crate::gathering::{
    assemble_matrix, commit_digest, merge_producers, query_producer, GeoFilter, IndexerNode, LatencyModel,
    ProducerDescriptor,
};
use crate::ids::{NodeId, RequestId, SimTime};
use crate::rating::{rate_request, RatingReport, should_ban, truth_infer, update_reputation, RatingParams};
use crate::relaychain::{ChainConfig, ChainError, Ledger, NodeKind, NodeRecord, Request, Transaction};
use crate::selection::{select_indexers, select_oracles, RegistrationWindow};
use crate::vrf::{keygen, vrf_prove, KeyPair, VrfOutput, VrfProof};
use sha2::{Digest, Sha256};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("chain error: {0}")]
    Chain(#[from] ChainError),
    #[error("worker thread panicked")]
    Worker,
}

impl From<AdversaryError> for SimError {
    fn from(e: AdversaryError) -> Self {
        SimError::Config(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Variant {
    /// Median only; reputations never change.
    Med,
    /// Reputation updates, no bans.
    MedR,
    /// Reputation updates and bans below `omega`.
    MedRB { omega: f64 },
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Med => "med",
            Variant::MedR => "medr",
            Variant::MedRB { .. } => "medrb",
        }
    }

    pub fn omega(&self) -> Option<f64> {
        match self {
            Variant::MedRB { omega } => Some(*omega),
            _ => None,
        }
    }

    pub fn updates_reputation(&self) -> bool {
        !matches!(self, Variant::Med)
    }

    /// Parses `med`, `medr` or `medrb`; the latter takes `omega`.
    pub fn parse(name: &str, omega: f64) -> Result<Self, String> {
        match name.to_ascii_lowercase().replace('-', "").as_str() {
            "med" => Ok(Variant::Med),
            "medr" => Ok(Variant::MedR),
            "medrb" => Ok(Variant::MedRB { omega }),
            other => Err(format!("unknown variant `{other}` (expected med, medr or medrb)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum RegistrationMode {
    /// Register iff holding at least `M` producers matching the request.
    ProducerMatch,
    /// As above, and additionally only with probability `p` (data availability).
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum InitialReputation {
    Neutral,
    Gaussian { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub attack: AttackConfig,
    pub rating: RatingParams,
    pub chain: ChainConfig,
    pub k_oracles: usize,
    pub k_indexers: usize,
    /// Producers each selected indexer returns (`M`).
    pub producers_per_indexer: usize,
    pub request_radius_km: f64,
    pub registration: RegistrationMode,
    pub initial_reputation: InitialReputation,
    pub window: RegistrationWindow,
    /// Oracle to producer response latency.
    pub query_latency: LatencyModel,
    /// Node to chain submission latency.
    pub submit_latency: LatencyModel,
    pub query_timeout_ms: SimTime,
    /// Trailing epochs used for the accuracy figure.
    pub accuracy_last: u64,
    /// Produce and verify a VRF proof for every seed. When off, the seed is
    /// a keyed hash of the request and the chain skips verification; the
    /// resulting committees are distributed identically but runs are several
    /// times faster.
    pub seed_proofs: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            attack: AttackConfig::default(),
            rating: RatingParams::default(),
            chain: ChainConfig::default(),
            k_oracles: 5,
            k_indexers: 5,
            producers_per_indexer: 3,
            request_radius_km: 30.0,
            registration: RegistrationMode::ProducerMatch,
            initial_reputation: InitialReputation::Neutral,
            window: RegistrationWindow::Fixed(8000),
            query_latency: LatencyModel::default(),
            submit_latency: LatencyModel { median_ms: 150.0, sigma: 0.5 },
            query_timeout_ms: 2000,
            accuracy_last: 1000,
            seed_proofs: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.attack.validate()?;
        self.rating.validate().map_err(|e| SimError::Config(e.to_string()))?;
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if self.k_oracles == 0 || self.k_indexers == 0 {
            return bad("committee sizes must be positive");
        }
        if self.k_oracles > self.attack.n_oracles {
            return bad("k_oracles exceeds the oracle population");
        }
        if self.producers_per_indexer == 0 {
            return bad("producers_per_indexer must be positive");
        }
        if !(self.request_radius_km >= 0.0) {
            return bad("request radius must be non-negative");
        }
        if let RegistrationMode::Bernoulli { p } = self.registration {
            if !(0.0..=1.0).contains(&p) {
                return bad("registration probability must lie in [0, 1]");
            }
        }
        if let InitialReputation::Gaussian { mean, sd } = self.initial_reputation {
            if !(-1.0..=1.0).contains(&mean) || sd < 0.0 {
                return bad("initial reputation law out of range");
            }
        }
        if let RegistrationWindow::Adaptive(w) = &self.window {
            w.validate().map_err(|e| SimError::Config(e.to_string()))?;
        }
        for l in [&self.query_latency, &self.submit_latency] {
            if !(l.median_ms > 0.0 && l.sigma >= 0.0) {
                return bad("latency models need a positive median and non-negative sigma");
            }
        }
        if self.chain.block_interval_ms == 0 {
            return bad("block interval must be positive");
        }
        if self.accuracy_last == 0 || self.accuracy_last > self.attack.epochs_total {
            return bad("accuracy_last must lie in [1, epochs_total]");
        }
        Ok(())
    }
}

/// Why an epoch produced no value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Failure {
    NotEnoughOracles,
    SeedRejected,
    NoRegistrants,
    AllNull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: u64,
    pub request: RequestId,
    pub inferred: Option<f64>,
    pub accurate: bool,
    pub failure: Option<Failure>,
    pub oracle_committee: Vec<NodeId>,
    pub indexer_committee: Vec<NodeId>,
    pub registrants: usize,
    pub producers: usize,
    pub newly_banned: Vec<NodeId>,
    pub rating: Option<RatingReport>,
    pub started_at: SimTime,
    pub finished_at: SimTime,
}

/// Per-epoch row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u64,
    pub inferred: Option<f64>,
    pub accurate: bool,
    pub n_banned_honest: usize,
    pub n_banned_malicious: usize,
    pub mean_rep_honest_idx: Option<f64>,
    pub mean_rep_malicious_idx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanEvent {
    pub epoch: u64,
    pub node: NodeId,
    pub kind: NodeKind,
    pub malicious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentMetrics {
    pub replication: usize,
    pub seed: u64,
    pub variant: Variant,
    pub rmi: f64,
    pub rmo: f64,
    pub arrival: Arrival,
    pub malicious_indexers: usize,
    pub rows: Vec<EpochRow>,
    pub bans: Vec<BanEvent>,
}

impl ExperimentMetrics {
    /// Fraction of accurate epochs among the last `last_n`.
    pub fn accuracy_window(&self, last_n: usize) -> f64 {
        accuracy_window(&self.rows, last_n)
    }

    /// Indexer blacklisting precision and recall after `epoch`. An empty
    /// blacklist has precision 1; a population without malicious indexers
    /// has recall 1.
    pub fn blacklist_at(&self, epoch: u64) -> (f64, f64) {
        let (mut tp, mut fp) = (0usize, 0usize);
        for b in self.bans.iter().filter(|b| b.kind == NodeKind::Indexer && b.epoch <= epoch) {
            if b.malicious {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        let precision = if tp + fp == 0 { 1.0 } else { tp as f64 / (tp + fp) as f64 };
        let recall = if self.malicious_indexers == 0 { 1.0 } else { tp as f64 / self.malicious_indexers as f64 };
        (precision, recall)
    }

    /// Precision and recall per epoch.
    pub fn blacklist_series(&self) -> Vec<(f64, f64)> {
        self.rows.iter().map(|r| self.blacklist_at(r.epoch)).collect()
    }

    pub fn final_blacklist(&self) -> (f64, f64) {
        self.blacklist_at(u64::MAX)
    }

    pub fn final_reputations(&self) -> (Option<f64>, Option<f64>) {
        self.rows.last().map_or((None, None), |r| (r.mean_rep_honest_idx, r.mean_rep_malicious_idx))
    }
}

pub fn accuracy_window(rows: &[EpochRow], last_n: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(last_n)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().filter(|r| r.accurate).count() as f64 / tail.len() as f64
}

/// Full state of one replication.
pub struct SimState {
    cfg: SimConfig,
    variant: Variant,
    pop: Population,
    ledger: Ledger,
    indexers: BTreeMap<NodeId, IndexerNode>,
    malicious: BTreeSet<NodeId>,
    oracle_keys: BTreeMap<NodeId, KeyPair>,
    spawn_order: Vec<usize>,
    next_spawn: usize,
    window: RegistrationWindow,
    consumer: NodeId,
    epoch: u64,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(cfg: SimConfig, variant: Variant, mut rng: ChaCha8Rng) -> Result<Self, SimError> {
        cfg.validate()?;
        if let Variant::MedRB { omega } = variant {
            if !(-1.0..=1.0).contains(&omega) {
                return Err(SimError::Config("omega must lie in [-1, 1]".into()));
            }
        }
        let pop = build_population(&cfg.attack, &mut rng)?;
        let mut ledger = Ledger::new(cfg.chain).without_record_retention();
        if !cfg.seed_proofs {
            ledger = ledger.without_seed_verification();
        }
        let initial_rep = |rng: &mut ChaCha8Rng| match cfg.initial_reputation {
            InitialReputation::Neutral => 0.0,
            InitialReputation::Gaussian { mean, sd } => {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                (mean + sd * z).clamp(-1.0, 1.0)
            }
        };
        let mut oracle_keys = BTreeMap::new();
        for o in &pop.oracles {
            let keys = keygen(&rng.random());
            let rep = initial_rep(&mut rng);
            ledger.register_node(NodeRecord::new(o.id.clone(), NodeKind::Oracle, rep).with_key(keys.public()))?;
            oracle_keys.insert(o.id.clone(), keys);
        }
        let mut indexers = BTreeMap::new();
        for k in &pop.indexers {
            let rep = initial_rep(&mut rng);
            ledger.register_node(NodeRecord::new(k.id.clone(), NodeKind::Indexer, rep))?;
            indexers.insert(k.id.clone(), IndexerNode::new(k.id.clone()));
        }
        let consumer = NodeId::new("consumer");
        ledger.register_node(NodeRecord::new(consumer.clone(), NodeKind::Consumer, 0.0))?;
        let malicious = pop.indexers.iter().chain(&pop.oracles).filter(|a| a.malicious).map(|a| a.id.clone()).collect();
        let mut spawn_order: Vec<usize> = (0..pop.producers.len()).collect();
        spawn_order.sort_by_key(|&i| (pop.producers[i].spawn_epoch, i));
        Ok(Self {
            window: cfg.window,
            cfg,
            variant,
            pop,
            ledger,
            indexers,
            malicious,
            oracle_keys,
            spawn_order,
            next_spawn: 0,
            consumer,
            epoch: 0,
            rng,
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn is_malicious(&self, id: &NodeId) -> bool {
        self.malicious.contains(id)
    }

    fn reputation(&self, id: &NodeId) -> f64 {
        self.ledger.node(id).map_or(0.0, |n| n.reputation)
    }

    fn spawn_due(&mut self) -> Result<(), SimError> {
        while let Some(&i) = self.spawn_order.get(self.next_spawn) {
            let p = &self.pop.producers[i];
            if p.spawn_epoch > self.epoch {
                break;
            }
            for k in &p.descriptor.indexed_by {
                let idx = self.indexers.get_mut(k).expect("attachments reference known indexers");
                idx.add_producer(p.descriptor.clone()).map_err(|e| SimError::Config(e.to_string()))?;
            }
            self.next_spawn += 1;
        }
        Ok(())
    }

    fn latency(&mut self) -> SimTime {
        let l = self.cfg.submit_latency.sample(&mut self.rng).expect("validated latency model");
        l.ceil() as SimTime
    }

    /// Runs one request resolution end to end.
    pub fn run_epoch(&mut self) -> Result<EpochReport, SimError> {
        self.spawn_due()?;
        for idx in self.indexers.values_mut() {
            idx.clear_cache();
        }
        let epoch = self.epoch;
        self.epoch += 1;
        let t0 = self.ledger.clock();
        let request_id = RequestId::new(format!("req-{epoch:06}"));
        let center = self.cfg.attack.region.sample(&mut self.rng);
        let request = Request {
            id: request_id.clone(),
            dtype: DTYPE.to_string(),
            geo: GeoFilter { center, radius_km: self.cfg.request_radius_km },
            k_oracles: self.cfg.k_oracles,
            k_indexers: self.cfg.k_indexers,
            submit_time: t0,
        };
        let mut report = EpochReport {
            epoch,
            request: request_id.clone(),
            inferred: None,
            accurate: false,
            failure: None,
            oracle_committee: Vec::new(),
            indexer_committee: Vec::new(),
            registrants: 0,
            producers: 0,
            newly_banned: Vec::new(),
            rating: None,
            started_at: t0,
            finished_at: t0,
        };

        let (_, posted) = self.ledger.post_request(self.consumer.clone(), request.clone(), t0)?;

        // Seed race: every eligible oracle evaluates the VRF; the first
        // confirmed write wins. Only the winner's proof is materialised.
        let oracles = self.ledger.eligible(NodeKind::Oracle);
        if oracles.len() < self.cfg.k_oracles {
            report.failure = Some(Failure::NotEnoughOracles);
            report.finished_at = posted;
            return Ok(report);
        }
        let mut arrivals: Vec<(SimTime, NodeId)> = Vec::with_capacity(oracles.len());
        for (id, _) in &oracles {
            let t = posted + self.latency();
            arrivals.push((t, id.clone()));
        }
        arrivals.sort();
        let (seed_at, winner) = arrivals[0].clone();
        let keys = &self.oracle_keys[&winner];
        let output = if self.cfg.seed_proofs {
            vrf_prove(keys, &request.vrf_input())
        } else {
            keyed_seed(keys, &request.vrf_input())
        };
        let v_star = output.value;
        self.ledger.submit(winner, seed_at, Transaction::Seed { request: request_id.clone(), output })?;

        // Registration opens at request confirmation.
        let m = self.cfg.producers_per_indexer;
        let mut registrations = Vec::new();
        for (id, idx) in &self.indexers {
            if self.ledger.node(id).is_some_and(|n| n.banned) || !idx.can_serve(&request, m) {
                continue;
            }
            registrations.push(id.clone());
        }
        for id in registrations {
            if let RegistrationMode::Bernoulli { p } = self.cfg.registration {
                if !self.rng.random_bool(p) {
                    continue;
                }
            }
            let at = posted + self.latency();
            self.ledger.submit(id, at, Transaction::RegisterIndexer { request: request_id.clone() })?;
        }
        let seed_confirm = self.cfg.chain.confirm_time(seed_at);
        self.ledger.advance_to(seed_confirm);
        if self.ledger.seed(&request_id).is_none() {
            report.failure = Some(Failure::SeedRejected);
            report.finished_at = self.ledger.clock();
            return Ok(report);
        }
        let committee = select_oracles(&oracles, &v_star, self.cfg.k_oracles).map_err(|e| SimError::Config(e.to_string()))?;
        report.oracle_committee = committee.clone();

        let close = seed_confirm + self.window.current();
        self.ledger.close_registration(&request_id, close)?;
        self.ledger.advance_to(close);
        let state = self.ledger.request(&request_id).expect("request was posted");
        let t_u = state.registrations.values().max().map_or(0, |t| t.saturating_sub(posted));
        self.window.observe(t_u);
        let registrants: Vec<(NodeId, f64)> =
            state.registrations.keys().map(|id| (id.clone(), self.reputation(id))).collect();
        report.registrants = registrants.len();
        let Ok(selected) = select_indexers(&registrants, &v_star, self.cfg.k_indexers) else {
            report.failure = Some(Failure::NoRegistrants);
            report.finished_at = close;
            return Ok(report);
        };
        report.indexer_committee = selected.members.clone();

        // Producer selection through the indexer committee.
        let mut answers: Vec<(NodeId, Vec<ProducerDescriptor>)> = Vec::new();
        for k in &selected.members {
            let idx = self.indexers.get_mut(k).expect("registrant is a known indexer");
            // a failed answer is logged as a violation on the indexer
            if let Ok(list) = idx.answer(&request, m) {
                answers.push((k.clone(), list));
            }
        }
        let merged = merge_producers(answers.iter().map(|(k, l)| (k, l.as_slice())));
        report.producers = merged.len();
        let models: Vec<_> = merged
            .producers
            .iter()
            .map(|p| {
                let i = self.pop.producer_index(p).expect("indexers only serve known producers");
                self.pop.producers[i].model
            })
            .collect();
        let honest_cols: Vec<bool> = models.iter().map(|m| m.honest).collect();

        // Gathering, commit and reveal. A producer takes one measurement per
        // epoch; every oracle that reaches it in time reads that same value.
        let measured: Vec<f64> = models.iter().map(|model| sample_reading(model, &mut self.rng)).collect();
        let mut rows = Vec::with_capacity(committee.len());
        let mut commit_at = Vec::with_capacity(committee.len());
        for o in &committee {
            let mut row = Vec::with_capacity(models.len());
            let mut slowest = 0;
            for &value in &measured {
                let q = query_producer(
                    |_| value,
                    &self.cfg.query_latency,
                    self.cfg.query_timeout_ms,
                    &mut self.rng,
                )
                .expect("validated latency model");
                slowest = slowest.max(q.elapsed_ms);
                row.push(q.reading);
            }
            tamper(
                self.malicious.contains(o),
                &mut row,
                &honest_cols,
                self.cfg.attack.false_truth,
                self.cfg.attack.tamper_jitter,
                &mut self.rng,
            );
            let at = close + slowest + self.latency();
            self.ledger.submit(o.clone(), at, Transaction::Commit { request: request_id.clone(), digest: commit_digest(&row) })?;
            commit_at.push(at);
            rows.push(row);
        }
        let last_commit = commit_at.iter().map(|t| self.cfg.chain.confirm_time(*t)).max().unwrap_or(close);
        self.ledger.advance_to(last_commit);
        let reveal_from = self.ledger.commit_deadline(&request_id).unwrap_or(last_commit).max(last_commit);
        self.ledger.advance_to(reveal_from);
        for (o, row) in committee.iter().zip(rows) {
            let at = reveal_from + self.latency();
            self.ledger.submit(o.clone(), at, Transaction::Reveal { request: request_id.clone(), readings: row })?;
        }
        if let Some(h) = self.ledger.pending_horizon() {
            self.ledger.advance_to(h);
        }

        let data = assemble_matrix(&committee, &merged, &self.ledger, &request_id);
        let Ok(truth) = truth_infer(&data) else {
            report.failure = Some(Failure::AllNull);
            report.finished_at = self.ledger.clock();
            return Ok(report);
        };
        report.inferred = Some(truth);
        report.accurate = (truth - self.cfg.attack.ground_truth).abs() <= self.cfg.rating.tau_s;
        let final_at = self.ledger.clock() + self.latency();
        self.ledger.submit(committee[0].clone(), final_at, Transaction::FinalizeResult { request: request_id.clone(), value: truth })?;

        if self.variant.updates_reputation() {
            let state = self.ledger.request(&request_id).expect("request was posted");
            let commit_times: BTreeMap<NodeId, SimTime> =
                state.commits.iter().filter(|(_, c)| !c.late).map(|(o, c)| (o.clone(), c.confirm_time)).collect();
            let ratings = rate_request(&data, truth, &commit_times, &selected.members, &self.cfg.rating);
            let p = &self.cfg.rating;
            let updates = ratings
                .indexer_ratings
                .iter()
                .map(|(k, r)| (k, *r, p.delta_rho))
                .chain(ratings.oracle_ratings.iter().map(|(o, r)| (o, *r, p.delta_theta)));
            let mut txs = Vec::new();
            for (node, rating, delta) in updates {
                let reputation = update_reputation(self.reputation(node), rating, delta);
                let ban = self.variant.omega().is_some_and(|w| should_ban(reputation, w));
                if ban {
                    report.newly_banned.push(node.clone());
                }
                txs.push(Transaction::UpdateReputation { node: node.clone(), reputation, ban });
            }
            for tx in txs {
                self.ledger.submit(committee[0].clone(), final_at, tx)?;
            }
            report.rating = Some(ratings);
        }
        let end = self.cfg.chain.confirm_time(final_at);
        self.ledger.advance_to(end);
        report.finished_at = end;
        Ok(report)
    }

    /// Aggregates over the indexer population for the metrics table.
    pub fn row(&self, report: &EpochReport) -> EpochRow {
        let (mut bh, mut bm) = (0, 0);
        let (mut sh, mut nh, mut sm, mut nm) = (0.0, 0usize, 0.0, 0usize);
        for a in &self.pop.indexers {
            let node = self.ledger.node(&a.id).expect("indexers are registered");
            if a.malicious {
                bm += usize::from(node.banned);
                sm += node.reputation;
                nm += 1;
            } else {
                bh += usize::from(node.banned);
                sh += node.reputation;
                nh += 1;
            }
        }
        EpochRow {
            epoch: report.epoch,
            inferred: report.inferred,
            accurate: report.accurate,
            n_banned_honest: bh,
            n_banned_malicious: bm,
            mean_rep_honest_idx: (nh > 0).then(|| sh / nh as f64),
            mean_rep_malicious_idx: (nm > 0).then(|| sm / nm as f64),
        }
    }

    fn ban_events(&self, report: &EpochReport) -> Vec<BanEvent> {
        report
            .newly_banned
            .iter()
            .map(|id| BanEvent {
                epoch: report.epoch,
                node: id.clone(),
                kind: self.ledger.node(id).map_or(NodeKind::Indexer, |n| n.kind),
                malicious: self.malicious.contains(id),
            })
            .collect()
    }
}

fn keyed_seed(keys: &KeyPair, input: &[u8]) -> VrfOutput {
    let value = Sha256::new()
        .chain_update(b"oraclenet-keyed-seed")
        .chain_update(keys.secret_bytes())
        .chain_update(input)
        .finalize()
        .into();
    VrfOutput { value, proof: VrfProof([0; 96]) }
}

/// RNG of replication `r`: ChaCha8 keyed by the base seed, one stream per
/// replication.
pub fn replication_rng(base_seed: u64, replication: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(replication as u64);
    rng
}

pub fn run_replication(cfg: &SimConfig, variant: Variant, base_seed: u64, replication: usize) -> Result<ExperimentMetrics, SimError> {
    let mut state = SimState::new(cfg.clone(), variant, replication_rng(base_seed, replication))?;
    let mut rows = Vec::with_capacity(cfg.attack.epochs_total as usize);
    let mut bans = Vec::new();
    for _ in 0..cfg.attack.epochs_total {
        let report = state.run_epoch()?;
        bans.extend(state.ban_events(&report));
        rows.push(state.row(&report));
    }
    Ok(ExperimentMetrics {
        replication,
        seed: base_seed,
        variant,
        rmi: cfg.attack.rmi,
        rmo: cfg.attack.rmo,
        arrival: cfg.attack.arrival,
        malicious_indexers: cfg.attack.malicious_indexers(),
        rows,
        bans,
    })
}

/// Runs `replications` independent replications on up to `jobs` threads.
/// Results come back in replication order whatever the thread count.
pub fn run_experiment(
    cfg: &SimConfig,
    variant: Variant,
    replications: usize,
    base_seed: u64,
    jobs: usize,
) -> Result<Vec<ExperimentMetrics>, SimError> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ExperimentMetrics, SimError>>>> =
        Mutex::new((0..replications).map(|_| None).collect());
    let workers = jobs.clamp(1, replications.max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let r = next.fetch_add(1, Ordering::Relaxed);
                if r >= replications {
                    break;
                }
                let out = run_replication(cfg, variant, base_seed, r);
                results.lock().expect("no poisoned lock")[r] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .map_err(|_| SimError::Worker)?
        .into_iter()
        .map(|r| r.unwrap_or(Err(SimError::Worker)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rmi: f64, epochs: u64) -> SimConfig {
        let mut cfg = SimConfig::default();
        cfg.attack.rmi = rmi;
        cfg.attack.epochs_total = epochs;
        cfg.attack.warmup_epochs = epochs / 3;
        cfg.attack.spawn_epochs = epochs / 3;
        cfg.accuracy_last = epochs / 3;
        cfg
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(Variant::parse("Med-RB", -0.6).unwrap(), Variant::MedRB { omega: -0.6 });
        assert_eq!(Variant::parse("medr", 0.0).unwrap(), Variant::MedR);
        assert!(Variant::parse("mean", 0.0).is_err());
    }

    #[test]
    fn med_never_moves_reputations() {
        let m = run_replication(&small(0.3, 150), Variant::Med, 4, 0).unwrap();
        for r in &m.rows {
            assert_eq!(r.mean_rep_honest_idx, Some(0.0));
            assert_eq!(r.mean_rep_malicious_idx, Some(0.0));
            assert_eq!(r.n_banned_honest + r.n_banned_malicious, 0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small(0.2, 90);
        let a = run_replication(&cfg, Variant::MedRB { omega: -0.6 }, 9, 1).unwrap();
        let b = run_replication(&cfg, Variant::MedRB { omega: -0.6 }, 9, 1).unwrap();
        assert_eq!(a, b);
        let c = run_replication(&cfg, Variant::MedRB { omega: -0.6 }, 9, 2).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn parallel_matches_serial() {
        let cfg = small(0.2, 60);
        let serial = run_experiment(&cfg, Variant::MedR, 3, 5, 1).unwrap();
        let parallel = run_experiment(&cfg, Variant::MedR, 3, 5, 3).unwrap();
        assert_eq!(serial, parallel);
        assert_eq!(serial.iter().map(|m| m.replication).collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn banned_indexers_stay_out() {
        let mut cfg = small(0.4, 240);
        cfg.rating.omega = -0.6;
        let mut state = SimState::new(cfg, Variant::MedRB { omega: -0.6 }, replication_rng(3, 0)).unwrap();
        let mut banned: BTreeSet<NodeId> = BTreeSet::new();
        for _ in 0..240 {
            let rep = state.run_epoch().unwrap();
            for k in &rep.indexer_committee {
                assert!(!banned.contains(k), "{k} served after its ban");
            }
            for o in &rep.oracle_committee {
                assert!(!banned.contains(o));
            }
            banned.extend(rep.newly_banned.iter().cloned());
        }
        assert!(!banned.is_empty());
    }

    #[test]
    fn committees_and_matrix_bounds() {
        let cfg = small(0.3, 120);
        let mut state = SimState::new(cfg.clone(), Variant::MedR, replication_rng(1, 0)).unwrap();
        for _ in 0..120 {
            let rep = state.run_epoch().unwrap();
            if rep.failure.is_none() {
                assert_eq!(rep.oracle_committee.len(), cfg.k_oracles);
                assert!(rep.indexer_committee.len() <= cfg.k_indexers);
                assert!(rep.producers <= rep.indexer_committee.len() * cfg.producers_per_indexer);
                assert!(rep.finished_at > rep.started_at);
            }
        }
    }

    #[test]
    fn blacklist_metric_edges() {
        let mut m = run_replication(&small(0.0, 30), Variant::MedRB { omega: -0.6 }, 1, 0).unwrap();
        assert_eq!(m.final_blacklist(), (1.0, 1.0));
        m.malicious_indexers = 4;
        m.bans = vec![
            BanEvent { epoch: 3, node: "a".into(), kind: NodeKind::Indexer, malicious: true },
            BanEvent { epoch: 5, node: "b".into(), kind: NodeKind::Indexer, malicious: false },
            BanEvent { epoch: 6, node: "c".into(), kind: NodeKind::Oracle, malicious: true },
        ];
        assert_eq!(m.blacklist_at(2), (1.0, 0.0));
        assert_eq!(m.blacklist_at(4), (1.0, 0.25));
        assert_eq!(m.blacklist_at(10), (0.5, 0.25));
    }

    #[test]
    fn accuracy_window_counts_tail() {
        let row = |epoch, accurate| EpochRow {
            epoch,
            inferred: None,
            accurate,
            n_banned_honest: 0,
            n_banned_malicious: 0,
            mean_rep_honest_idx: None,
            mean_rep_malicious_idx: None,
        };
        let rows: Vec<EpochRow> = (0..10).map(|e| row(e, e >= 6)).collect();
        assert_eq!(accuracy_window(&rows, 4), 1.0);
        assert_eq!(accuracy_window(&rows, 8), 0.5);
        assert_eq!(accuracy_window(&rows, 100), 0.4);
    }
}
