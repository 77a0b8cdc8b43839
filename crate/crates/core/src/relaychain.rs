//! In-process relay chain: an ordered transaction log with block-interval
//! confirmation, the node registry, per-request protocol state and an event
//! feed.
//!
//! Transactions are queued with [`Ledger::submit`] and take effect when the
//! chain clock passes their confirmation time ([`Ledger::advance_to`]).
//! Within a block, transactions apply in lexicographic submitter order, so
//! the outcome of a race (e.g. the seed slot) never depends on the order in
//! which the caller happened to submit.

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};
use thiserror::Error;

use crate::gathering::{commit_digest, GeoFilter};
use crate::ids::{NodeId, RequestId, SimTime};
use crate::vrf::{vrf_verify, PublicKey, VrfOutput, VrfProof};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChainError {
    #[error("request {0} already exists")]
    DuplicateRequest(RequestId),
    #[error("unknown request {0}")]
    UnknownRequest(RequestId),
    #[error("malformed request: {0}")]
    InvalidRequest(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("node {0} is already registered")]
    DuplicateNode(NodeId),
    #[error("node {0} is banned")]
    BannedNode(NodeId),
    #[error("submission at {now} ms is behind the chain clock ({clock} ms)")]
    StaleSubmission { now: SimTime, clock: SimTime },
    #[error("reputation {0} outside [-1, 1]")]
    ReputationOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub block_interval_ms: SimTime,
    pub confirmation_depth: u64,
    /// How long after the first confirmed commit the remaining commits are
    /// still accepted.
    pub hash_window_ms: SimTime,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { block_interval_ms: 1000, confirmation_depth: 0, hash_window_ms: 5000 }
    }
}

impl ChainConfig {
    /// Next block boundary strictly after `submit`, plus the confirmation depth.
    pub fn confirm_time(&self, submit: SimTime) -> SimTime {
        let interval = self.block_interval_ms.max(1);
        (submit / interval + 1 + self.confirmation_depth) * interval
    }
}

/// A consumer query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: RequestId,
    pub dtype: String,
    pub geo: GeoFilter,
    pub k_oracles: usize,
    pub k_indexers: usize,
    pub submit_time: SimTime,
}

impl Request {
    pub fn validate(&self) -> Result<(), ChainError> {
        if self.k_oracles == 0 {
            return Err(ChainError::InvalidRequest("k_oracles must be at least 1".into()));
        }
        if self.k_indexers == 0 {
            return Err(ChainError::InvalidRequest("k_indexers must be at least 1".into()));
        }
        if self.dtype.is_empty() {
            return Err(ChainError::InvalidRequest("empty data type".into()));
        }
        if !(self.geo.radius_km >= 0.0) {
            return Err(ChainError::InvalidRequest("negative geo radius".into()));
        }
        Ok(())
    }

    /// Canonical byte encoding. The submit time is not part of the request
    /// content and is excluded.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.id.as_str().len() + self.dtype.len());
        put_str(&mut out, self.id.as_str());
        put_str(&mut out, &self.dtype);
        out.extend_from_slice(&self.geo.center.lat.to_be_bytes());
        out.extend_from_slice(&self.geo.center.lon.to_be_bytes());
        out.extend_from_slice(&self.geo.radius_km.to_be_bytes());
        out.extend_from_slice(&(self.k_oracles as u32).to_be_bytes());
        out.extend_from_slice(&(self.k_indexers as u32).to_be_bytes());
        out
    }

    /// VRF input: SHA-256 of the canonical encoding.
    pub fn vrf_input(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.canonical_bytes()).into()
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Oracle,
    Indexer,
    Producer,
    Consumer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub kind: NodeKind,
    pub reputation: f64,
    pub banned: bool,
    /// Stored only; there is no stake economics.
    pub stake: u64,
    pub public_key: Option<PublicKey>,
}

impl NodeRecord {
    pub fn new(id: NodeId, kind: NodeKind, reputation: f64) -> Self {
        Self { id, kind, reputation, banned: false, stake: 0, public_key: None }
    }

    pub fn with_key(mut self, pk: PublicKey) -> Self {
        self.public_key = Some(pk);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RecordKind {
    RequestPosted,
    SeedAccepted,
    IndexerRegistered,
    DataCommit,
    DataReveal,
    ResultFinal,
    ReputationUpdate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub kind: RecordKind,
    pub submitter: NodeId,
    pub submit_time: SimTime,
    pub confirm_time: SimTime,
    #[serde(with = "hex_vec")]
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSlot {
    pub request: RequestId,
    pub value: [u8; 32],
    pub proof: VrfProof,
    pub winner: NodeId,
    pub confirm_time: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transaction {
    PostRequest(Request),
    Seed { request: RequestId, output: VrfOutput },
    RegisterIndexer { request: RequestId },
    Commit { request: RequestId, digest: [u8; 32] },
    Reveal { request: RequestId, readings: Vec<Option<f64>> },
    FinalizeResult { request: RequestId, value: f64 },
    UpdateReputation { node: NodeId, reputation: f64, ban: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedOutcome {
    Accepted,
    AlreadySet,
    InvalidProof,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegistrationOutcome {
    Registered,
    WindowClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    Recorded,
    /// Confirmed after the hash window closed; the oracle's row will be null.
    Late,
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RevealStatus {
    Accepted,
    DigestMismatch,
    MissingCommit,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TxOutcome {
    RequestPosted(RequestId),
    Seed(SeedOutcome),
    Registration(RegistrationOutcome),
    Commit(CommitOutcome),
    Reveal(RevealStatus),
    ResultFinal,
    ReputationUpdated,
    Rejected(ChainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxId(u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Receipt {
    pub tx: TxId,
    pub submitter: NodeId,
    pub submit_time: SimTime,
    pub confirm_time: SimTime,
    pub outcome: TxOutcome,
}

#[derive(Debug, Clone)]
struct Pending {
    id: TxId,
    submitter: NodeId,
    submit_time: SimTime,
    confirm_time: SimTime,
    tx: Transaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommitEntry {
    pub digest: [u8; 32],
    pub confirm_time: SimTime,
    pub late: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevealEntry {
    pub status: RevealStatus,
    pub readings: Vec<Option<f64>>,
    pub confirm_time: SimTime,
}

#[derive(Debug, Clone)]
pub struct RequestState {
    pub request: Request,
    pub posted_at: SimTime,
    pub seed: Option<SeedSlot>,
    pub registration_deadline: Option<SimTime>,
    pub registrations: BTreeMap<NodeId, SimTime>,
    pub commits: BTreeMap<NodeId, CommitEntry>,
    pub first_commit: Option<SimTime>,
    pub reveals: BTreeMap<NodeId, RevealEntry>,
    pub result: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainEvent {
    pub seq: usize,
    pub kind: RecordKind,
    pub confirm_time: SimTime,
}

/// Handle returned by [`Ledger::subscribe`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subscription(usize);

/// Single-writer ledger. Not meant to be mutated concurrently; it is `Send`.
#[derive(Debug, Clone)]
pub struct Ledger {
    config: ChainConfig,
    clock: SimTime,
    next_tx: u64,
    pending: Vec<Pending>,
    records: Vec<ChainRecord>,
    retain_records: bool,
    verify_seeds: bool,
    record_count: usize,
    nodes: BTreeMap<NodeId, NodeRecord>,
    requests: BTreeMap<RequestId, RequestState>,
    cursors: Vec<usize>,
}

impl Ledger {
    pub fn new(config: ChainConfig) -> Self {
        Self {
            config,
            clock: 0,
            next_tx: 0,
            pending: Vec::new(),
            records: Vec::new(),
            retain_records: true,
            verify_seeds: true,
            record_count: 0,
            nodes: BTreeMap::new(),
            requests: BTreeMap::new(),
            cursors: Vec::new(),
        }
    }

    /// Drop record payloads after they are applied. Long simulations use
    /// this to keep memory flat; the record counter still advances.
    pub fn without_record_retention(mut self) -> Self {
        self.retain_records = false;
        self
    }

    /// Accept seed writes without checking the VRF proof. Only for
    /// simulations whose seeds come from a trusted source.
    pub fn without_seed_verification(mut self) -> Self {
        self.verify_seeds = false;
        self
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    pub fn records(&self) -> &[ChainRecord] {
        &self.records
    }

    pub fn record_count(&self) -> usize {
        self.record_count
    }

    // ---- registry -------------------------------------------------------

    pub fn register_node(&mut self, record: NodeRecord) -> Result<(), ChainError> {
        if !(-1.0..=1.0).contains(&record.reputation) {
            return Err(ChainError::ReputationOutOfRange(record.reputation));
        }
        if self.nodes.contains_key(&record.id) {
            return Err(ChainError::DuplicateNode(record.id));
        }
        self.nodes.insert(record.id.clone(), record);
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeRecord> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeRecord> {
        self.nodes.values()
    }

    /// Unbanned nodes of `kind` with their reputations, in id order.
    pub fn eligible(&self, kind: NodeKind) -> Vec<(NodeId, f64)> {
        self.nodes
            .values()
            .filter(|n| n.kind == kind && !n.banned)
            .map(|n| (n.id.clone(), n.reputation))
            .collect()
    }

    // ---- requests -------------------------------------------------------

    pub fn request(&self, id: &RequestId) -> Option<&RequestState> {
        self.requests.get(id)
    }

    fn request_mut(&mut self, id: &RequestId) -> Result<&mut RequestState, ChainError> {
        self.requests.get_mut(id).ok_or_else(|| ChainError::UnknownRequest(id.clone()))
    }

    pub fn seed(&self, id: &RequestId) -> Option<&SeedSlot> {
        self.requests.get(id).and_then(|r| r.seed.as_ref())
    }

    /// Registered indexers for a request, in id order.
    pub fn registrations(&self, id: &RequestId) -> Vec<NodeId> {
        self.requests
            .get(id)
            .map(|r| r.registrations.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Instant after which commits for `id` are late, once the first commit
    /// has been confirmed.
    pub fn commit_deadline(&self, id: &RequestId) -> Option<SimTime> {
        self.requests
            .get(id)
            .and_then(|r| r.first_commit)
            .map(|t| t + self.config.hash_window_ms)
    }

    /// Sets the instant after which indexer registrations are refused.
    pub fn close_registration(&mut self, id: &RequestId, at: SimTime) -> Result<(), ChainError> {
        self.request_mut(id)?.registration_deadline = Some(at);
        Ok(())
    }

    // ---- transactions ---------------------------------------------------

    /// Queues a transaction. It takes effect at its confirmation time.
    pub fn submit(&mut self, submitter: NodeId, now: SimTime, tx: Transaction) -> Result<TxId, ChainError> {
        if now < self.clock {
            return Err(ChainError::StaleSubmission { now, clock: self.clock });
        }
        let id = TxId(self.next_tx);
        self.next_tx += 1;
        let confirm_time = self.config.confirm_time(now);
        self.pending.push(Pending { id, submitter, submit_time: now, confirm_time, tx });
        Ok(id)
    }

    /// Confirms every queued transaction whose confirmation time is `<= t`,
    /// in `(confirm_time, submitter, submission order)` order.
    pub fn advance_to(&mut self, t: SimTime) -> Vec<Receipt> {
        let (mut ready, rest): (Vec<_>, Vec<_>) =
            std::mem::take(&mut self.pending).into_iter().partition(|p| p.confirm_time <= t);
        self.pending = rest;
        ready.sort_by(|a, b| {
            (a.confirm_time, &a.submitter, a.id).cmp(&(b.confirm_time, &b.submitter, b.id))
        });
        self.clock = self.clock.max(t);
        ready.into_iter().map(|p| self.apply(p)).collect()
    }

    /// Confirmation time of the latest queued transaction, if any.
    pub fn pending_horizon(&self) -> Option<SimTime> {
        self.pending.iter().map(|p| p.confirm_time).max()
    }

    fn submit_and_confirm(&mut self, submitter: NodeId, now: SimTime, tx: Transaction) -> Result<Receipt, ChainError> {
        let id = self.submit(submitter, now, tx)?;
        let at = self.config.confirm_time(now);
        let receipts = self.advance_to(at);
        Ok(receipts
            .into_iter()
            .find(|r| r.tx == id)
            .expect("submitted transaction is confirmed by its own block"))
    }

    fn append(&mut self, kind: RecordKind, p: &Pending, payload: Vec<u8>) {
        self.record_count += 1;
        if self.retain_records {
            self.records.push(ChainRecord {
                kind,
                submitter: p.submitter.clone(),
                submit_time: p.submit_time,
                confirm_time: p.confirm_time,
                payload,
            });
        }
    }

    fn apply(&mut self, p: Pending) -> Receipt {
        let outcome = match self.apply_inner(&p) {
            Ok(o) => o,
            Err(e) => TxOutcome::Rejected(e),
        };
        Receipt {
            tx: p.id,
            submitter: p.submitter,
            submit_time: p.submit_time,
            confirm_time: p.confirm_time,
            outcome,
        }
    }

    fn apply_inner(&mut self, p: &Pending) -> Result<TxOutcome, ChainError> {
        let at = p.confirm_time;
        match &p.tx {
            Transaction::PostRequest(req) => {
                req.validate()?;
                if self.requests.contains_key(&req.id) {
                    return Err(ChainError::DuplicateRequest(req.id.clone()));
                }
                self.requests.insert(
                    req.id.clone(),
                    RequestState {
                        request: req.clone(),
                        posted_at: at,
                        seed: None,
                        registration_deadline: None,
                        registrations: BTreeMap::new(),
                        commits: BTreeMap::new(),
                        first_commit: None,
                        reveals: BTreeMap::new(),
                        result: None,
                    },
                );
                let payload = if self.retain_records { req.canonical_bytes() } else { Vec::new() };
                self.append(RecordKind::RequestPosted, p, payload);
                Ok(TxOutcome::RequestPosted(req.id.clone()))
            }
            Transaction::Seed { request, output } => {
                let state = self.requests.get(request).ok_or_else(|| ChainError::UnknownRequest(request.clone()))?;
                if state.seed.is_some() {
                    return Ok(TxOutcome::Seed(SeedOutcome::AlreadySet));
                }
                let Some(pk) = self.nodes.get(&p.submitter).and_then(|n| n.public_key) else {
                    return Ok(TxOutcome::Seed(SeedOutcome::InvalidProof));
                };
                let input = state.request.vrf_input();
                if self.verify_seeds && !vrf_verify(&pk, &input, &output.value, &output.proof) {
                    return Ok(TxOutcome::Seed(SeedOutcome::InvalidProof));
                }
                let slot = SeedSlot {
                    request: request.clone(),
                    value: output.value,
                    proof: output.proof,
                    winner: p.submitter.clone(),
                    confirm_time: at,
                };
                self.request_mut(request)?.seed = Some(slot);
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, request.as_str());
                    payload.extend_from_slice(&output.value);
                    payload.extend_from_slice(&output.proof.0);
                }
                self.append(RecordKind::SeedAccepted, p, payload);
                Ok(TxOutcome::Seed(SeedOutcome::Accepted))
            }
            Transaction::RegisterIndexer { request } => {
                let node = self.nodes.get(&p.submitter).ok_or_else(|| ChainError::UnknownNode(p.submitter.clone()))?;
                if node.banned {
                    return Err(ChainError::BannedNode(p.submitter.clone()));
                }
                let state = self.request_mut(request)?;
                if state.registration_deadline.is_some_and(|d| at > d) {
                    return Ok(TxOutcome::Registration(RegistrationOutcome::WindowClosed));
                }
                state.registrations.insert(p.submitter.clone(), at);
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, request.as_str());
                }
                self.append(RecordKind::IndexerRegistered, p, payload);
                Ok(TxOutcome::Registration(RegistrationOutcome::Registered))
            }
            Transaction::Commit { request, digest } => {
                let window = self.config.hash_window_ms;
                let state = self.request_mut(request)?;
                if state.commits.contains_key(&p.submitter) {
                    return Ok(TxOutcome::Commit(CommitOutcome::Duplicate));
                }
                let first = *state.first_commit.get_or_insert(at);
                let late = at > first + window;
                state.commits.insert(p.submitter.clone(), CommitEntry { digest: *digest, confirm_time: at, late });
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, request.as_str());
                    payload.extend_from_slice(digest);
                }
                self.append(RecordKind::DataCommit, p, payload);
                Ok(TxOutcome::Commit(if late { CommitOutcome::Late } else { CommitOutcome::Recorded }))
            }
            Transaction::Reveal { request, readings } => {
                let state = self.request_mut(request)?;
                if state.reveals.contains_key(&p.submitter) {
                    return Ok(TxOutcome::Reveal(RevealStatus::Duplicate));
                }
                let status = match state.commits.get(&p.submitter) {
                    Some(c) if !c.late && c.confirm_time <= at => {
                        if commit_digest(readings) == c.digest {
                            RevealStatus::Accepted
                        } else {
                            RevealStatus::DigestMismatch
                        }
                    }
                    _ => RevealStatus::MissingCommit,
                };
                state.reveals.insert(
                    p.submitter.clone(),
                    RevealEntry { status, readings: readings.clone(), confirm_time: at },
                );
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, request.as_str());
                    payload.extend_from_slice(&crate::gathering::encode_readings(readings));
                }
                self.append(RecordKind::DataReveal, p, payload);
                Ok(TxOutcome::Reveal(status))
            }
            Transaction::FinalizeResult { request, value } => {
                self.request_mut(request)?.result = Some(*value);
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, request.as_str());
                    payload.extend_from_slice(&value.to_be_bytes());
                }
                self.append(RecordKind::ResultFinal, p, payload);
                Ok(TxOutcome::ResultFinal)
            }
            Transaction::UpdateReputation { node, reputation, ban } => {
                if !(-1.0..=1.0).contains(reputation) {
                    return Err(ChainError::ReputationOutOfRange(*reputation));
                }
                let rec = self.nodes.get_mut(node).ok_or_else(|| ChainError::UnknownNode(node.clone()))?;
                rec.reputation = *reputation;
                // bans are permanent
                rec.banned |= *ban;
                let mut payload = Vec::new();
                if self.retain_records {
                    put_str(&mut payload, node.as_str());
                    payload.extend_from_slice(&reputation.to_be_bytes());
                    payload.push(u8::from(*ban));
                }
                self.append(RecordKind::ReputationUpdate, p, payload);
                Ok(TxOutcome::ReputationUpdated)
            }
        }
    }

    // ---- single-transaction conveniences --------------------------------

    /// Posts a request and confirms it. Returns the id and confirmation time.
    pub fn post_request(&mut self, consumer: NodeId, req: Request, now: SimTime) -> Result<(RequestId, SimTime), ChainError> {
        req.validate()?;
        let r = self.submit_and_confirm(consumer, now, Transaction::PostRequest(req))?;
        match r.outcome {
            TxOutcome::RequestPosted(id) => Ok((id, r.confirm_time)),
            TxOutcome::Rejected(e) => Err(e),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    }

    pub fn try_record_seed(
        &mut self,
        request: &RequestId,
        output: VrfOutput,
        submitter: NodeId,
        now: SimTime,
    ) -> Result<SeedOutcome, ChainError> {
        if !self.requests.contains_key(request) {
            return Err(ChainError::UnknownRequest(request.clone()));
        }
        let r = self.submit_and_confirm(submitter, now, Transaction::Seed { request: request.clone(), output })?;
        match r.outcome {
            TxOutcome::Seed(o) => Ok(o),
            TxOutcome::Rejected(e) => Err(e),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    }

    pub fn register_indexer(&mut self, request: &RequestId, indexer: NodeId, now: SimTime) -> Result<RegistrationOutcome, ChainError> {
        let node = self.nodes.get(&indexer).ok_or_else(|| ChainError::UnknownNode(indexer.clone()))?;
        if node.banned {
            return Err(ChainError::BannedNode(indexer));
        }
        let r = self.submit_and_confirm(indexer, now, Transaction::RegisterIndexer { request: request.clone() })?;
        match r.outcome {
            TxOutcome::Registration(o) => Ok(o),
            TxOutcome::Rejected(e) => Err(e),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    }

    pub fn append_commit(&mut self, request: &RequestId, oracle: NodeId, digest: [u8; 32], now: SimTime) -> Result<CommitOutcome, ChainError> {
        let r = self.submit_and_confirm(oracle, now, Transaction::Commit { request: request.clone(), digest })?;
        match r.outcome {
            TxOutcome::Commit(o) => Ok(o),
            TxOutcome::Rejected(e) => Err(e),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    }

    pub fn append_reveal(
        &mut self,
        request: &RequestId,
        oracle: NodeId,
        readings: Vec<Option<f64>>,
        now: SimTime,
    ) -> Result<RevealStatus, ChainError> {
        let r = self.submit_and_confirm(oracle, now, Transaction::Reveal { request: request.clone(), readings })?;
        match r.outcome {
            TxOutcome::Reveal(o) => Ok(o),
            TxOutcome::Rejected(e) => Err(e),
            other => unreachable!("unexpected outcome {other:?}"),
        }
    }

    /// Accepted readings of `oracle` for `request`, or `None` when its row
    /// must be treated as null (no commit in time, mismatch, no reveal).
    pub fn accepted_reveal(&self, request: &RequestId, oracle: &NodeId) -> Option<&[Option<f64>]> {
        let entry = self.requests.get(request)?.reveals.get(oracle)?;
        (entry.status == RevealStatus::Accepted).then_some(entry.readings.as_slice())
    }

    // ---- event feed -----------------------------------------------------

    /// Subscribes to records confirmed from now on.
    pub fn subscribe(&mut self) -> Subscription {
        self.cursors.push(self.records.len());
        Subscription(self.cursors.len() - 1)
    }

    /// Records confirmed since the last poll of this subscription.
    pub fn poll(&mut self, sub: Subscription) -> Vec<ChainEvent> {
        let start = self.cursors[sub.0];
        let events = self.records[start..]
            .iter()
            .enumerate()
            .map(|(i, r)| ChainEvent { seq: start + i, kind: r.kind, confirm_time: r.confirm_time })
            .collect();
        self.cursors[sub.0] = self.records.len();
        events
    }

    /// Writes the log as JSON lines: kind, submitter, submit_time,
    /// confirm_time, payload (hex).
    pub fn dump_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Nodes currently banned, in id order.
    pub fn banned(&self) -> BTreeSet<NodeId> {
        self.nodes.values().filter(|n| n.banned).map(|n| n.id.clone()).collect()
    }
}

mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        hex::decode(String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}
