//! Verifiable random function over the Ristretto255 group.
//!
//! The construction follows the ECVRF shape: the input is hashed to a group
//! element `H`, the prover publishes `Gamma = x·H` together with a Schnorr-style
//! proof of equal discrete logarithm between `(B, Y)` and `(H, Gamma)`, and the
//! pseudorandom value is a hash of `Gamma`. Anyone holding the public key can
//! check the proof and recompute the value.
//!
//! Proof layout (96 bytes): `Gamma (32) ‖ c (32) ‖ s (32)`, scalars little-endian.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_TABLE;
use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::VartimeMultiscalarMul;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256, Sha512};
use std::fmt;

use crate::ids::NodeId;

const DST_KEYGEN: &[u8] = b"oraclenet-vrf-keygen-v1";
const DST_H2C: &[u8] = b"oraclenet-vrf-h2c-v1";
const DST_NONCE: &[u8] = b"oraclenet-vrf-nonce-v1";
const DST_CHALLENGE: &[u8] = b"oraclenet-vrf-challenge-v1";
const DST_OUTPUT: &[u8] = b"oraclenet-vrf-output-v1";

pub const PROOF_LEN: usize = 96;

/// Compressed Ristretto public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PublicKey(#[serde(with = "hex_bytes")] pub [u8; 32]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(self.0))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    seed: [u8; 32],
    scalar: Scalar,
    public: PublicKey,
}

impl KeyPair {
    pub fn public(&self) -> PublicKey {
        self.public
    }

    /// The 32-byte secret seed this key pair was derived from.
    pub fn secret_bytes(&self) -> &[u8; 32] {
        &self.seed
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrfProof(#[serde(with = "hex_bytes")] pub [u8; PROOF_LEN]);

impl fmt::Debug for VrfProof {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VrfProof({})", hex::encode(self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrfOutput {
    #[serde(with = "hex_bytes")]
    pub value: [u8; 32],
    pub proof: VrfProof,
}

/// Deterministically derives a key pair from a 32-byte seed.
pub fn keygen(seed: &[u8; 32]) -> KeyPair {
    let scalar = Scalar::from_hash(Sha512::new().chain_update(DST_KEYGEN).chain_update(seed));
    let public = PublicKey((&scalar * RISTRETTO_BASEPOINT_TABLE).compress().to_bytes());
    KeyPair { seed: *seed, scalar, public }
}

fn hash_to_point(pk: &PublicKey, input: &[u8]) -> RistrettoPoint {
    let mut data = Vec::with_capacity(DST_H2C.len() + 32 + input.len());
    data.extend_from_slice(DST_H2C);
    data.extend_from_slice(&pk.0);
    data.extend_from_slice(input);
    RistrettoPoint::hash_from_bytes::<Sha512>(&data)
}

fn challenge(
    pk: &PublicKey,
    h: &CompressedRistretto,
    gamma: &CompressedRistretto,
    u: &CompressedRistretto,
    v: &CompressedRistretto,
) -> Scalar {
    Scalar::from_hash(
        Sha512::new()
            .chain_update(DST_CHALLENGE)
            .chain_update(pk.0)
            .chain_update(h.as_bytes())
            .chain_update(gamma.as_bytes())
            .chain_update(u.as_bytes())
            .chain_update(v.as_bytes()),
    )
}

fn output_value(gamma: &CompressedRistretto) -> [u8; 32] {
    Sha256::new()
        .chain_update(DST_OUTPUT)
        .chain_update(gamma.as_bytes())
        .finalize()
        .into()
}

/// Evaluates the VRF on `input`, returning the pseudorandom value and its proof.
pub fn vrf_prove(keys: &KeyPair, input: &[u8]) -> VrfOutput {
    let h = hash_to_point(&keys.public, input);
    let h_c = h.compress();
    let gamma = (keys.scalar * h).compress();
    // Deterministic nonce, RFC 6979 style.
    let k = Scalar::from_hash(
        Sha512::new()
            .chain_update(DST_NONCE)
            .chain_update(keys.seed)
            .chain_update(h_c.as_bytes()),
    );
    let u = (&k * RISTRETTO_BASEPOINT_TABLE).compress();
    let v = (k * h).compress();
    let c = challenge(&keys.public, &h_c, &gamma, &u, &v);
    let s = k + c * keys.scalar;

    let mut proof = [0u8; PROOF_LEN];
    proof[..32].copy_from_slice(gamma.as_bytes());
    proof[32..64].copy_from_slice(c.as_bytes());
    proof[64..].copy_from_slice(s.as_bytes());
    VrfOutput { value: output_value(&gamma), proof: VrfProof(proof) }
}

/// Checks that `(value, proof)` is the VRF evaluation of `input` under `pk`.
pub fn vrf_verify(pk: &PublicKey, input: &[u8], value: &[u8; 32], proof: &VrfProof) -> bool {
    let Some(y) = CompressedRistretto(pk.0).decompress() else {
        return false;
    };
    let gamma_c = CompressedRistretto(proof.0[..32].try_into().expect("32 bytes"));
    let Some(gamma) = gamma_c.decompress() else {
        return false;
    };
    let c_bytes: [u8; 32] = proof.0[32..64].try_into().expect("32 bytes");
    let s_bytes: [u8; 32] = proof.0[64..].try_into().expect("32 bytes");
    let Some(c) = Option::<Scalar>::from(Scalar::from_canonical_bytes(c_bytes)) else {
        return false;
    };
    let Some(s) = Option::<Scalar>::from(Scalar::from_canonical_bytes(s_bytes)) else {
        return false;
    };

    let h = hash_to_point(pk, input);
    let u = RistrettoPoint::vartime_double_scalar_mul_basepoint(&(-c), &y, &s).compress();
    let v = RistrettoPoint::vartime_multiscalar_mul([s, -c], [h, gamma]).compress();
    if challenge(pk, &h.compress(), &gamma_c, &u, &v) != c {
        return false;
    }
    output_value(&gamma_c) == *value
}

/// Per-node pseudorandom in `[0, 1)` derived from the winning seed value.
///
/// `r = u64::from_be_bytes(SHA-256(v* ‖ id)[..8]) / 2^64`. Bit-exact by
/// construction, so every node computing it for every id gets the same vector.
pub fn derive_unit(v_star: &[u8; 32], node: &NodeId) -> f64 {
    let digest = Sha256::new()
        .chain_update(v_star)
        .chain_update(node.as_bytes())
        .finalize();
    let head = u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"));
    // 2^-64 scaling is exact; the f64 rounding of `head` can reach 2^64 only
    // for the top 2^10 values, which we fold back below 1.
    let r = head as f64 * (1.0 / 18_446_744_073_709_551_616.0);
    if r < 1.0 {
        r
    } else {
        f64::from_bits(1.0f64.to_bits() - 1)
    }
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(bytes: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let text = String::deserialize(d)?;
        let raw = hex::decode(text).map_err(serde::de::Error::custom)?;
        raw.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seed(n: u8) -> [u8; 32] {
        [n; 32]
    }

    #[test]
    fn prove_is_deterministic() {
        let kp = keygen(&seed(7));
        assert_eq!(vrf_prove(&kp, b"request"), vrf_prove(&kp, b"request"));
        assert_eq!(keygen(&seed(7)).public(), kp.public());
    }

    #[test]
    fn different_inputs_give_different_values() {
        let kp = keygen(&seed(1));
        let a = vrf_prove(&kp, b"req-1");
        let b = vrf_prove(&kp, b"req-2");
        assert_ne!(a.value, b.value);
    }

    #[test]
    fn different_keys_give_different_values() {
        let a = vrf_prove(&keygen(&seed(1)), b"x");
        let b = vrf_prove(&keygen(&seed(2)), b"x");
        assert_ne!(a.value, b.value);
    }

    #[test]
    fn honest_output_verifies() {
        let kp = keygen(&seed(3));
        let out = vrf_prove(&kp, b"hello");
        assert!(vrf_verify(&kp.public(), b"hello", &out.value, &out.proof));
    }

    #[test]
    fn wrong_key_rejected() {
        let kp = keygen(&seed(3));
        let other = keygen(&seed(4));
        let out = vrf_prove(&kp, b"hello");
        assert!(!vrf_verify(&other.public(), b"hello", &out.value, &out.proof));
    }

    #[test]
    fn non_canonical_scalar_rejected() {
        let kp = keygen(&seed(9));
        let mut out = vrf_prove(&kp, b"m");
        out.proof.0[64..].copy_from_slice(&[0xff; 32]);
        assert!(!vrf_verify(&kp.public(), b"m", &out.value, &out.proof));
    }

    #[test]
    fn derive_unit_is_stable_and_in_range() {
        let v = [0xabu8; 32];
        let id = NodeId::new("oracle-01");
        assert_eq!(derive_unit(&v, &id), derive_unit(&v, &id));
        let r = derive_unit(&v, &id);
        assert!((0.0..1.0).contains(&r));
    }

    #[test]
    fn derive_unit_mean_is_half() {
        let v = [0x5au8; 32];
        let n = 100_000;
        let sum: f64 = (0..n).map(|i| derive_unit(&v, &NodeId::new(format!("n{i}")))).sum();
        let mean = sum / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn derive_unit_known_vector() {
        // SHA-256(0x00*32 ‖ "a")[..8] computed with Python hashlib
        let r = derive_unit(&[0u8; 32], &NodeId::new("a"));
        let expected = 0x41a0_370c_3d9f_4277_u64 as f64 / 2f64.powi(64);
        assert_eq!(r, expected);
    }

    proptest! {
        #[test]
        fn completeness(sk in any::<[u8; 32]>(), input in proptest::collection::vec(any::<u8>(), 0..64)) {
            let kp = keygen(&sk);
            let out = vrf_prove(&kp, &input);
            prop_assert!(vrf_verify(&kp.public(), &input, &out.value, &out.proof));
        }

        #[test]
        fn single_bit_tamper_breaks_verification(
            sk in any::<[u8; 32]>(),
            input in proptest::collection::vec(any::<u8>(), 1..32),
            target in 0usize..4,
            pos in any::<usize>(),
            bit in 0u8..8,
        ) {
            let kp = keygen(&sk);
            let out = vrf_prove(&kp, &input);
            let mut pk = kp.public();
            let mut input = input;
            let mut value = out.value;
            let mut proof = out.proof;
            let mask = 1u8 << bit;
            match target {
                0 => { let i = pos % input.len(); input[i] ^= mask; }
                1 => value[pos % 32] ^= mask,
                2 => proof.0[pos % PROOF_LEN] ^= mask,
                _ => pk.0[pos % 32] ^= mask,
            }
            prop_assert!(!vrf_verify(&pk, &input, &value, &proof));
        }
    }
}
