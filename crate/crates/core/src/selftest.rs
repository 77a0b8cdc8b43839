//! Protocol invariant suite shared by the `selftest` command and the test
//! targets. Every check reports how many cases it ran and how many failed.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gathering::{merge_producers, DataMatrix, GeoFilter, GeoPoint, IndexerNode, ProducerDescriptor};
use crate::ids::{NodeId, ProducerId, RequestId};
use crate::rating::{constraint, null_cell_term, truth_infer};
use crate::relaychain::Request;
use crate::selection::{select_indexers, select_oracles};
use crate::vrf::{keygen, vrf_prove, vrf_verify, VrfProof};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub cases: usize,
    pub failures: usize,
    /// First failing case, if any.
    pub first_failure: Option<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.cases > 0
    }
}

struct Tally {
    name: &'static str,
    cases: usize,
    failures: usize,
    first: Option<String>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self { name, cases: 0, failures: 0, first: None }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.cases += 1;
        if !ok {
            self.failures += 1;
            if self.first.is_none() {
                self.first = Some(what());
            }
        }
    }

    fn done(self) -> CheckOutcome {
        CheckOutcome { name: self.name.to_string(), cases: self.cases, failures: self.failures, first_failure: self.first }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSizes {
    pub vrf_cases: usize,
    pub selection_cases: usize,
    pub gathering_rounds: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self { vrf_cases: 10_000, selection_cases: 1_000, gathering_rounds: 1_000 }
    }
}

pub fn run_suite(sizes: SuiteSizes, seed: u64) -> Vec<CheckOutcome> {
    vec![
        constraint_table(),
        vrf_fuzz(sizes.vrf_cases, seed),
        selection_consensus(sizes.selection_cases, seed.wrapping_add(1)),
        null_dichotomy(),
        gathering_bound(sizes.gathering_rounds, seed.wrapping_add(2)),
        median_brute_force(),
    ]
}

pub fn constraint_table() -> CheckOutcome {
    let mut t = Tally::new("constraint table");
    for tau in [1e-3, 0.5, 1.5, 3.0, 7.25, 2000.0, 1e6] {
        for (a, want) in [(0.0, 1.0), (tau, 0.0), (3.0 * tau, -0.8)] {
            let got = constraint(a, tau);
            t.check((got - want).abs() <= 1e-12, || format!("c({a}, {tau}) = {got}, want {want}"));
        }
    }
    t.check(constraint(f64::INFINITY, 3.0) == -1.0, || "c(inf, 3) != -1".into());
    t.done()
}

/// Completeness: honest proofs verify and are deterministic. Binding: the
/// proof rejects any other input, key, value or a single flipped bit.
pub fn vrf_fuzz(cases: usize, seed: u64) -> CheckOutcome {
    let mut t = Tally::new("vrf completeness and binding");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let mut sk = [0u8; 32];
        rng.fill_bytes(&mut sk);
        let keys = keygen(&sk);
        let mut other_sk = [0u8; 32];
        rng.fill_bytes(&mut other_sk);
        let other = keygen(&other_sk).public();
        let len = rng.random_range(0..64);
        let mut input = vec![0u8; len];
        rng.fill_bytes(&mut input);

        let out = vrf_prove(&keys, &input);
        let mut ok = vrf_verify(&keys.public(), &input, &out.value, &out.proof);
        ok &= vrf_prove(&keys, &input) == out;

        let mut wrong_input = input.clone();
        wrong_input.push(rng.random());
        ok &= !vrf_verify(&keys.public(), &wrong_input, &out.value, &out.proof);
        ok &= other == keys.public() || !vrf_verify(&other, &input, &out.value, &out.proof);

        let mut value = out.value;
        value[rng.random_range(0..32)] ^= 1 << rng.random_range(0..8);
        ok &= !vrf_verify(&keys.public(), &input, &value, &out.proof);

        let mut proof = out.proof.0;
        let at = rng.random_range(0..proof.len());
        proof[at] ^= 1 << rng.random_range(0..8);
        ok &= !vrf_verify(&keys.public(), &input, &out.value, &VrfProof(proof));

        t.check(ok, || format!("case {case}: input {}", hex::encode(&input)));
    }
    t.done()
}

/// Re-running selection, with the candidate list in any order, yields the
/// same committee.
pub fn selection_consensus(cases: usize, seed: u64) -> CheckOutcome {
    let mut t = Tally::new("selection consensus");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let n = rng.random_range(1..80);
        let mut nodes: Vec<(NodeId, f64)> =
            (0..n).map(|i| (NodeId::new(format!("n{i:03}")), rng.random_range(-1.0..=1.0))).collect();
        let mut v_star = [0u8; 32];
        rng.fill_bytes(&mut v_star);
        let k = rng.random_range(1..=n);
        let a = select_oracles(&nodes, &v_star, k);
        let ia = select_indexers(&nodes, &v_star, k + rng.random_range(0..3));
        nodes.shuffle(&mut rng);
        let b = select_oracles(&nodes, &v_star, k);
        let ib = select_indexers(&nodes, &v_star, k + rng.random_range(0..3));
        let sized = matches!(&a, Ok(c) if c.len() == k);
        let idx_same = match (&ia, &ib) {
            (Ok(x), Ok(y)) => x.members.iter().zip(&y.members).all(|(p, q)| p == q),
            _ => false,
        };
        t.check(sized && a == b && idx_same, || format!("case {case}: n={n} k={k}"));
    }
    t.done()
}

/// One null in a column costs the oracle −1; a column that is null for
/// every oracle is neutral.
pub fn null_dichotomy() -> CheckOutcome {
    let mut t = Tally::new("null dichotomy");
    for k in 2..=64 {
        let (single, f1) = null_cell_term(1, k);
        let (all, f2) = null_cell_term(k, k);
        t.check(single == -1.0 && all == 0.0 && !f1 && !f2, || format!("K_O={k}: {single}, {all}"));
    }
    let (_, flagged) = null_cell_term(1, 1);
    t.check(flagged, || "K_O=1 not flagged".into());
    t.done()
}

/// Merged producer lists never exceed `K_I · M` and every answer matches the request.
pub fn gathering_bound(rounds: usize, seed: u64) -> CheckOutcome {
    let mut t = Tally::new("gathering bound");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = GeoPoint { lat: 45.0, lon: 9.0 };
    for round in 0..rounds {
        let k_i = rng.random_range(1..8usize);
        let m = rng.random_range(1..6usize);
        let shared: Vec<ProducerDescriptor> = (0..rng.random_range(0..30))
            .map(|j| descriptor(&mut rng, &origin, format!("s{j:03}")))
            .collect();
        let mut indexers: Vec<IndexerNode> = (0..k_i).map(|i| IndexerNode::new(NodeId::new(format!("i{i}")))).collect();
        for (i, node) in indexers.iter_mut().enumerate() {
            for j in 0..rng.random_range(0..40) {
                let _ = node.add_producer(descriptor(&mut rng, &origin, format!("p{i}-{j:03}")));
            }
            for d in &shared {
                if rng.random_bool(0.5) {
                    let _ = node.add_producer(d.clone());
                }
            }
        }
        let request = Request {
            id: RequestId::new(format!("r{round}")),
            dtype: if rng.random_bool(0.9) { "temperature".into() } else { "humidity".into() },
            geo: GeoFilter { center: origin.destination(rng.random_range(0.0..6.28), rng.random_range(0.0..40.0)), radius_km: rng.random_range(1.0..60.0) },
            k_oracles: 1,
            k_indexers: k_i,
            submit_time: 0,
        };
        let mut answers: BTreeMap<NodeId, Vec<ProducerDescriptor>> = BTreeMap::new();
        let mut ok = true;
        for node in &mut indexers {
            if node.can_serve(&request, m) {
                let a = node.answer(&request, m).expect("can_serve implies an answer");
                ok &= a.len() == m && a.iter().all(|d| d.matches(&request));
                answers.insert(node.id().clone(), a);
            } else {
                ok &= node.answer(&request, m).is_err();
            }
        }
        let merged = merge_producers(answers.iter().map(|(k, v)| (k, v.as_slice())));
        ok &= merged.len() <= k_i * m;
        t.check(ok, || format!("round {round}: K_I={k_i} M={m} P={}", merged.len()));
    }
    t.done()
}

fn descriptor(rng: &mut ChaCha8Rng, origin: &GeoPoint, id: String) -> ProducerDescriptor {
    ProducerDescriptor {
        id: ProducerId::new(id),
        dtype: if rng.random_bool(0.8) { "temperature".into() } else { "humidity".into() },
        location: origin.destination(rng.random_range(0.0..6.28), rng.random_range(0.0..80.0)),
        payment_address: String::new(),
        indexed_by: BTreeSet::new(),
    }
}

/// Median over every matrix up to 3×3 on a five-symbol alphabet (null
/// included) against a sort-based reference.
pub fn median_brute_force() -> CheckOutcome {
    let mut t = Tally::new("median brute force");
    let alphabet = [None, Some(-1.0), Some(0.0), Some(2.5), Some(7.0)];
    for rows in 1..=3usize {
        for cols in 1..=3usize {
            let cells = rows * cols;
            for code in 0..alphabet.len().pow(cells as u32) {
                let mut c = code;
                let flat: Vec<Option<f64>> = (0..cells)
                    .map(|_| {
                        let v = alphabet[c % alphabet.len()];
                        c /= alphabet.len();
                        v
                    })
                    .collect();
                let oracles = (0..rows).map(|i| NodeId::new(format!("o{i}"))).collect();
                let producers = (0..cols).map(|j| ProducerId::new(format!("p{j}"))).collect();
                let d = DataMatrix::from_rows(oracles, producers, flat.chunks(cols).map(<[_]>::to_vec).collect(), BTreeMap::new());
                let mut xs: Vec<f64> = flat.iter().flatten().copied().collect();
                xs.sort_by(f64::total_cmp);
                let want = match xs.len() {
                    0 => None,
                    n if n % 2 == 1 => Some(xs[n / 2]),
                    n => Some((xs[n / 2 - 1] + xs[n / 2]) / 2.0),
                };
                let got = truth_infer(&d).ok();
                t.check(got == want, || format!("{rows}x{cols} {flat:?}: {got:?} vs {want:?}"));
            }
        }
    }
    t.done()
}
