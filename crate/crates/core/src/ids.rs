//! Identifier newtypes and simulated time.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Simulated milliseconds.
pub type SimTime = u64;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }

            pub fn as_bytes(&self) -> &[u8] {
                self.0.as_bytes()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Identity of an on-chain participant (oracle, indexer, consumer).
    ///
    /// Ordering is lexicographic on the underlying string and is used as the
    /// deterministic tiebreak everywhere a tiebreak is needed.
    NodeId
);

string_id!(
    /// Identity of an off-chain data producer.
    ProducerId
);

string_id!(
    /// Opaque consumer request identifier.
    RequestId
);
