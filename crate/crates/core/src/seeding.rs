//! Keyed, counter-style RNG substreams.
//!
//! Every random stream in the crate is derived from `(seed, key...)` through
//! SHA-256, so a draw depends only on its key and never on how many draws
//! happened before it or on which thread produced it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Domain tags keep streams for different purposes disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    SyntheticAnswer,
    SyntheticCorpus,
    Replication,
    Dominance,
}

impl Stream {
    fn tag(self) -> &'static [u8] {
        match self {
            Stream::SyntheticAnswer => b"mpg/synthetic-answer",
            Stream::SyntheticCorpus => b"mpg/synthetic-corpus",
            Stream::Replication => b"mpg/replication",
            Stream::Dominance => b"mpg/dominance",
        }
    }
}

/// Derive a 32-byte seed from the stream tag, the user seed, and a list of
/// key parts. Parts are length-prefixed so `["ab", "c"]` and `["a", "bc"]`
/// never collide.
pub fn derive_seed(stream: Stream, seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(stream.tag());
    hasher.update(seed.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn substream(stream: Stream, seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(stream, seed, parts))
}
