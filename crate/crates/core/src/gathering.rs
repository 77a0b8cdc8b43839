//! Producer selection through indexers, data retrieval and the data matrix.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use thiserror::Error;

use crate::ids::{NodeId, ProducerId, RequestId, SimTime};
use crate::relaychain::{Ledger, Request};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatheringError {
    #[error("indexer {indexer} holds {have} matching producers, {need} required")]
    InsufficientProducers { indexer: NodeId, have: usize, need: usize },
    #[error("producer descriptor {0} has an empty data type")]
    EmptyDtype(ProducerId),
    #[error("latency model needs a positive median and non-negative sigma")]
    InvalidLatency,
}

const EARTH_RADIUS_KM: f64 = 6371.0088;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    /// Great-circle (haversine) distance in kilometres.
    pub fn distance_km(&self, other: &GeoPoint) -> f64 {
        let (p1, p2) = (self.lat.to_radians(), other.lat.to_radians());
        let dp = p2 - p1;
        let dl = (other.lon - self.lon).to_radians();
        let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
        2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
    }

    /// Point reached by travelling `dist_km` along the great circle leaving
    /// this point at `bearing_rad` (clockwise from north).
    pub fn destination(&self, bearing_rad: f64, dist_km: f64) -> GeoPoint {
        let d = dist_km / EARTH_RADIUS_KM;
        let (p1, l1) = (self.lat.to_radians(), self.lon.to_radians());
        let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * bearing_rad.cos()).asin();
        let l2 = l1 + (bearing_rad.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
        let lon = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
        GeoPoint { lat: p2.to_degrees(), lon }
    }

    /// Position on the unit sphere.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (p, l) = (self.lat.to_radians(), self.lon.to_radians());
        [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFilter {
    pub center: GeoPoint,
    pub radius_km: f64,
}

impl GeoFilter {
    /// Great-circle distance from the centre at most `radius_km`.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        self.prepared().contains_unit(&p.unit_vector())
    }

    pub fn prepared(&self) -> PreparedFilter {
        let angle = (self.radius_km / EARTH_RADIUS_KM).min(std::f64::consts::PI);
        PreparedFilter { center: self.center.unit_vector(), cos_radius: angle.cos() }
    }
}

/// A [`GeoFilter`] reduced to a dot-product test against unit vectors, for
/// scanning many points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreparedFilter {
    center: [f64; 3],
    cos_radius: f64,
}

impl PreparedFilter {
    pub fn contains_unit(&self, u: &[f64; 3]) -> bool {
        let c = &self.center;
        c[0] * u[0] + c[1] * u[1] + c[2] * u[2] >= self.cos_radius
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProducerDescriptor {
    pub id: ProducerId,
    pub dtype: String,
    pub location: GeoPoint,
    pub payment_address: String,
    pub indexed_by: BTreeSet<NodeId>,
}

impl ProducerDescriptor {
    pub fn matches(&self, req: &Request) -> bool {
        self.dtype == req.dtype && req.geo.contains(&self.location)
    }
}

/// An indexer's catalogue of producers plus its per-request answer cache.
#[derive(Debug, Clone)]
pub struct IndexerNode {
    id: NodeId,
    producers: BTreeMap<ProducerId, (ProducerDescriptor, [f64; 3])>,
    cache: HashMap<RequestId, Vec<ProducerDescriptor>>,
    violations: Vec<RequestId>,
}

impl IndexerNode {
    pub fn new(id: NodeId) -> Self {
        Self { id, producers: BTreeMap::new(), cache: HashMap::new(), violations: Vec::new() }
    }

    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn add_producer(&mut self, desc: ProducerDescriptor) -> Result<(), GatheringError> {
        if desc.dtype.is_empty() {
            return Err(GatheringError::EmptyDtype(desc.id));
        }
        let u = desc.location.unit_vector();
        self.producers.insert(desc.id.clone(), (desc, u));
        Ok(())
    }

    pub fn producer_count(&self) -> usize {
        self.producers.len()
    }

    /// Producers matching the request's data type and area, in id order.
    pub fn matching<'a>(&'a self, req: &'a Request) -> impl Iterator<Item = &'a ProducerDescriptor> + 'a {
        let area = req.geo.prepared();
        self.producers
            .values()
            .filter(move |(p, u)| p.dtype == req.dtype && area.contains_unit(u))
            .map(|(p, _)| p)
    }

    /// Whether this indexer may register for the request (holds at least `m`
    /// matching producers).
    pub fn can_serve(&self, req: &Request, m: usize) -> bool {
        self.matching(req).nth(m.saturating_sub(1)).is_some() || m == 0
    }

    /// Requests this indexer registered for without being able to serve.
    pub fn violations(&self) -> &[RequestId] {
        &self.violations
    }

    /// Returns `m` matching producers for the request. The first answer for a
    /// request id is cached and returned verbatim on every later call.
    ///
    /// The sample is uniform without replacement, drawn from an RNG keyed by
    /// `(indexer id, request id)`, and returned in producer id order.
    pub fn answer(&mut self, req: &Request, m: usize) -> Result<Vec<ProducerDescriptor>, GatheringError> {
        if let Some(hit) = self.cache.get(&req.id) {
            return Ok(hit.clone());
        }
        let pool: Vec<&ProducerDescriptor> = self.matching(req).collect();
        if pool.len() < m {
            let have = pool.len();
            self.violations.push(req.id.clone());
            return Err(GatheringError::InsufficientProducers { indexer: self.id.clone(), have, need: m });
        }
        let mut rng = ChaCha8Rng::from_seed(answer_seed(&self.id, &req.id));
        let mut picked = rand::seq::index::sample(&mut rng, pool.len(), m).into_vec();
        picked.sort_unstable();
        let out: Vec<ProducerDescriptor> = picked.into_iter().map(|i| pool[i].clone()).collect();
        self.cache.insert(req.id.clone(), out.clone());
        Ok(out)
    }

    /// Drops cached answers (e.g. between simulation epochs).
    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }
}

fn answer_seed(indexer: &NodeId, request: &RequestId) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((indexer.as_str().len() as u32).to_be_bytes());
    h.update(indexer.as_bytes());
    h.update(request.as_bytes());
    h.finalize().into()
}

/// Union of the indexers' answers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MergedProducers {
    /// Producer ids in ascending order.
    pub producers: Vec<ProducerId>,
    /// Which selected indexers returned each producer.
    pub provenance: BTreeMap<ProducerId, BTreeSet<NodeId>>,
}

impl MergedProducers {
    pub fn len(&self) -> usize {
        self.producers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.producers.is_empty()
    }

    /// Producers contributed by `indexer`.
    pub fn contributed_by<'a>(&'a self, indexer: &'a NodeId) -> impl Iterator<Item = usize> + 'a {
        self.producers
            .iter()
            .enumerate()
            .filter(move |(_, p)| self.provenance[*p].contains(indexer))
            .map(|(j, _)| j)
    }
}

pub fn merge_producers<'a, I>(lists: I) -> MergedProducers
where
    I: IntoIterator<Item = (&'a NodeId, &'a [ProducerDescriptor])>,
{
    let mut provenance: BTreeMap<ProducerId, BTreeSet<NodeId>> = BTreeMap::new();
    for (indexer, list) in lists {
        for d in list {
            provenance.entry(d.id.clone()).or_default().insert(indexer.clone());
        }
    }
    MergedProducers { producers: provenance.keys().cloned().collect(), provenance }
}

/// Response latency between an oracle and a producer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub median_ms: f64,
    pub sigma: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self { median_ms: 200.0, sigma: 0.6 }
    }
}

impl LatencyModel {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, GatheringError> {
        let dist = LogNormal::new(self.median_ms.ln(), self.sigma).map_err(|_| GatheringError::InvalidLatency)?;
        Ok(dist.sample(rng))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    pub reading: Option<f64>,
    pub elapsed_ms: SimTime,
}

/// Queries a producer once. `respond` yields the producer's reading at the
/// query instant; a non-finite value counts as an invalid response. Both an
/// invalid response and a timeout produce a null reading.
pub fn query_producer<R, F>(respond: F, latency: &LatencyModel, timeout_ms: SimTime, rng: &mut R) -> Result<QueryResult, GatheringError>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut R) -> f64,
{
    let delay = latency.sample(rng)?;
    if delay > timeout_ms as f64 {
        return Ok(QueryResult { reading: None, elapsed_ms: timeout_ms });
    }
    let value = respond(rng);
    Ok(QueryResult { reading: value.is_finite().then_some(value), elapsed_ms: delay.ceil() as SimTime })
}

const NULL_TAG: u8 = 0x00;
const VALUE_TAG: u8 = 0x01;

/// Canonical encoding of a row of readings: per cell, `0x00` for null or
/// `0x01` followed by the IEEE-754 big-endian bytes of the value. Cells must
/// already be in producer id order.
pub fn encode_readings(readings: &[Option<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(readings.len() * 9);
    for r in readings {
        match r {
            None => out.push(NULL_TAG),
            Some(x) => {
                out.push(VALUE_TAG);
                out.extend_from_slice(&x.to_be_bytes());
            }
        }
    }
    out
}

/// SHA-256 over [`encode_readings`].
pub fn commit_digest(readings: &[Option<f64>]) -> [u8; 32] {
    Sha256::digest(encode_readings(readings)).into()
}

/// The `K_O × P` grid of possibly-null readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    pub oracles: Vec<NodeId>,
    pub producers: Vec<ProducerId>,
    cells: Vec<Option<f64>>,
    pub provenance: BTreeMap<ProducerId, BTreeSet<NodeId>>,
}

impl DataMatrix {
    /// Builds a matrix from rows. Rows of the wrong width are stored as null.
    pub fn from_rows(
        oracles: Vec<NodeId>,
        producers: Vec<ProducerId>,
        rows: Vec<Vec<Option<f64>>>,
        provenance: BTreeMap<ProducerId, BTreeSet<NodeId>>,
    ) -> Self {
        let p = producers.len();
        let mut cells = Vec::with_capacity(oracles.len() * p);
        for i in 0..oracles.len() {
            match rows.get(i) {
                Some(row) if row.len() == p => cells.extend_from_slice(row),
                _ => cells.extend(std::iter::repeat_n(None, p)),
            }
        }
        Self { oracles, producers, cells, provenance }
    }

    pub fn rows(&self) -> usize {
        self.oracles.len()
    }

    pub fn cols(&self) -> usize {
        self.producers.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.cols() + j]
    }

    pub fn row(&self, i: usize) -> &[Option<f64>] {
        let p = self.cols();
        &self.cells[i * p..(i + 1) * p]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = Option<f64>> + '_ {
        (0..self.rows()).map(move |i| self.get(i, j))
    }

    pub fn non_null(&self) -> impl Iterator<Item = f64> + '_ {
        self.cells.iter().filter_map(|c| *c)
    }

    /// Number of null cells in row `i`.
    pub fn row_nulls(&self, i: usize) -> usize {
        self.row(i).iter().filter(|c| c.is_none()).count()
    }

    /// Number of null cells in column `j`.
    pub fn column_nulls(&self, j: usize) -> usize {
        self.column(j).filter(|c| c.is_none()).count()
    }
}

/// Builds the data matrix from the chain. Rows of oracles without an accepted
/// reveal (missing or late commit, digest mismatch, no reveal) are all-null.
pub fn assemble_matrix(committee: &[NodeId], merged: &MergedProducers, ledger: &Ledger, request: &RequestId) -> DataMatrix {
    let rows = committee
        .iter()
        .map(|o| ledger.accepted_reveal(request, o).map(<[_]>::to_vec).unwrap_or_default())
        .collect();
    DataMatrix::from_rows(committee.to_vec(), merged.producers.clone(), rows, merged.provenance.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(id: &str) -> Request {
        Request {
            id: RequestId::new(id),
            dtype: "temperature".into(),
            geo: GeoFilter { center: GeoPoint { lat: 45.0, lon: 9.0 }, radius_km: 100.0 },
            k_oracles: 5,
            k_indexers: 2,
            submit_time: 0,
        }
    }

    fn producer(id: &str, lat: f64, dtype: &str) -> ProducerDescriptor {
        ProducerDescriptor {
            id: ProducerId::new(id),
            dtype: dtype.into(),
            location: GeoPoint { lat, lon: 9.0 },
            payment_address: format!("addr-{id}"),
            indexed_by: BTreeSet::new(),
        }
    }

    fn indexer_with(id: &str, n: usize) -> IndexerNode {
        let mut idx = IndexerNode::new(NodeId::new(id));
        for k in 0..n {
            idx.add_producer(producer(&format!("{id}-p{k:02}"), 45.0 + 0.01 * k as f64, "temperature")).unwrap();
        }
        idx
    }

    #[test]
    fn haversine_sanity() {
        let bologna = GeoPoint { lat: 44.4949, lon: 11.3426 };
        let milan = GeoPoint { lat: 45.4642, lon: 9.19 };
        let d = bologna.distance_km(&milan);
        assert!((d - 200.9).abs() < 2.0, "{d}");
        assert_eq!(milan.distance_km(&milan), 0.0);
    }

    #[test]
    fn destination_round_trips_distance() {
        let origin = GeoPoint { lat: 45.0, lon: 9.0 };
        for (bearing, dist) in [(0.0, 10.0), (1.3, 250.0), (3.0, 0.5), (5.5, 1200.0)] {
            let p = origin.destination(bearing, dist);
            assert!((origin.distance_km(&p) - dist).abs() < 1e-6 * dist.max(1.0), "{bearing} {dist}");
        }
        let north = origin.destination(0.0, 111.2);
        assert!((north.lat - 46.0).abs() < 0.01 && (north.lon - 9.0).abs() < 1e-9);
    }

    #[test]
    fn matching_respects_dtype_and_area() {
        let mut idx = IndexerNode::new("i".into());
        idx.add_producer(producer("near", 45.1, "temperature")).unwrap();
        idx.add_producer(producer("far", 48.0, "temperature")).unwrap();
        idx.add_producer(producer("humid", 45.0, "humidity")).unwrap();
        let r = req("r");
        let ids: Vec<_> = idx.matching(&r).map(|p| p.id.to_string()).collect();
        assert_eq!(ids, ["near"]);
        assert!(idx.can_serve(&r, 1));
        assert!(!idx.can_serve(&r, 2));
    }

    #[test]
    fn answer_is_cached_per_request() {
        let mut idx = indexer_with("i1", 12);
        let a = idx.answer(&req("r1"), 3).unwrap();
        let b = idx.answer(&req("r1"), 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        // a fresh node with the same catalogue draws the same set
        assert_eq!(indexer_with("i1", 12).answer(&req("r1"), 3).unwrap(), a);
    }

    #[test]
    fn cache_survives_catalogue_changes() {
        let mut idx = indexer_with("i1", 4);
        let a = idx.answer(&req("r1"), 3).unwrap();
        idx.add_producer(producer("zz", 45.0, "temperature")).unwrap();
        assert_eq!(idx.answer(&req("r1"), 3).unwrap(), a);
    }

    #[test]
    fn different_requests_may_differ() {
        let mut idx = indexer_with("i1", 30);
        let answers: BTreeSet<Vec<ProducerId>> = (0..20)
            .map(|k| idx.answer(&req(&format!("r{k}")), 3).unwrap().into_iter().map(|d| d.id).collect())
            .collect();
        assert!(answers.len() > 1);
    }

    #[test]
    fn zero_m_gives_empty_answer() {
        let mut idx = indexer_with("i1", 2);
        assert!(idx.answer(&req("r"), 0).unwrap().is_empty());
    }

    #[test]
    fn insufficient_producers_is_a_violation() {
        let mut idx = indexer_with("i1", 2);
        let err = idx.answer(&req("r"), 3).unwrap_err();
        assert_eq!(err, GatheringError::InsufficientProducers { indexer: "i1".into(), have: 2, need: 3 });
        assert_eq!(idx.violations(), &[RequestId::new("r")]);
    }

    #[test]
    fn merge_disjoint_and_overlapping() {
        let a: Vec<_> = (0..3).map(|k| producer(&format!("a{k}"), 45.0, "t")).collect();
        let b: Vec<_> = (0..3).map(|k| producer(&format!("b{k}"), 45.0, "t")).collect();
        let (ia, ib) = (NodeId::new("ia"), NodeId::new("ib"));
        assert_eq!(merge_producers([(&ia, a.as_slice()), (&ib, b.as_slice())]).len(), 6);

        let mut b2 = b.clone();
        b2[0] = a[1].clone();
        let m = merge_producers([(&ia, a.as_slice()), (&ib, b2.as_slice())]);
        assert_eq!(m.len(), 5);
        assert_eq!(m.provenance[&ProducerId::new("a1")], BTreeSet::from([ia.clone(), ib.clone()]));
        assert_eq!(m.contributed_by(&ib).count(), 3);

        let m = merge_producers([(&ia, a.as_slice()), (&ib, a.as_slice())]);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn timeout_yields_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let slow = LatencyModel { median_ms: 10_000.0, sigma: 0.01 };
        let r = query_producer(|_| 25.0, &slow, 2000, &mut rng).unwrap();
        assert_eq!(r, QueryResult { reading: None, elapsed_ms: 2000 });
        let fast = LatencyModel { median_ms: 10.0, sigma: 0.01 };
        let r = query_producer(|_| 25.0, &fast, 2000, &mut rng).unwrap();
        assert_eq!(r.reading, Some(25.0));
        let r = query_producer(|_| f64::NAN, &fast, 2000, &mut rng).unwrap();
        assert_eq!(r.reading, None);
    }

    #[test]
    fn digest_known_vector() {
        // hashlib.sha256(b"\x01" + struct.pack(">d", 25.0) + b"\x00").hexdigest()
        let d = commit_digest(&[Some(25.0), None]);
        assert_eq!(hex::encode(d), "4cfa36784e84026023c202cdb2540c84bcec1893cb7d96be45f995edcebe285b");
    }

    #[test]
    fn digest_distinguishes_null_zero_and_ulps() {
        let x = 21.5f64;
        let bumped = f64::from_bits(x.to_bits() + 1);
        assert_eq!(commit_digest(&[Some(x)]), commit_digest(&[Some(x)]));
        assert_ne!(commit_digest(&[Some(x)]), commit_digest(&[Some(bumped)]));
        assert_ne!(commit_digest(&[None]), commit_digest(&[Some(0.0)]));
    }

    #[test]
    fn wrong_width_rows_are_null() {
        let m = DataMatrix::from_rows(
            vec!["o1".into(), "o2".into()],
            vec!["p1".into(), "p2".into()],
            vec![vec![Some(1.0), Some(2.0)], vec![Some(1.0)]],
            BTreeMap::new(),
        );
        assert_eq!(m.row(0), &[Some(1.0), Some(2.0)]);
        assert_eq!(m.row(1), &[None, None]);
        assert_eq!(m.row_nulls(1), 2);
        assert_eq!(m.column_nulls(0), 1);
    }

    proptest! {
        #[test]
        fn merged_size_bounded(
            lists in proptest::collection::vec(proptest::collection::btree_set(0u8..40, 3), 1..6)
        ) {
            let named: Vec<(NodeId, Vec<ProducerDescriptor>)> = lists
                .iter()
                .enumerate()
                .map(|(k, set)| (NodeId::new(format!("i{k}")), set.iter().map(|p| producer(&format!("p{p:02}"), 45.0, "t")).collect()))
                .collect();
            let merged = merge_producers(named.iter().map(|(i, l)| (i, l.as_slice())));
            let total: usize = lists.iter().map(|s| s.len()).sum();
            prop_assert!(merged.len() <= total);
            let distinct: BTreeSet<u8> = lists.iter().flatten().copied().collect();
            prop_assert_eq!(merged.len(), distinct.len());
            prop_assert!(merged.producers.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(merged.provenance.values().all(|s| !s.is_empty()));
        }

        #[test]
        fn encoding_is_injective_on_rows(
            a in proptest::collection::vec(proptest::option::of(-50.0f64..50.0), 0..6),
            b in proptest::collection::vec(proptest::option::of(-50.0f64..50.0), 0..6),
        ) {
            let same = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| match (x, y) {
                (Some(x), Some(y)) => x.to_bits() == y.to_bits(),
                (None, None) => true,
                _ => false,
            });
            prop_assert_eq!(encode_readings(&a) == encode_readings(&b), same);
        }
    }
}
