//! Encoder backbones. The trainable HArch heads sit on top of a pooled
//! sentence-pair representation produced by an [`Encoder`].
//!
//! Pretrained transformer backbones are plugged in through this trait by
//! downstream integrations; the crate ships a deterministic hashing stub
//! that makes the whole pipeline runnable and testable at desk scale.

use std::sync::Arc;

use super::ModelError;

pub trait Encoder: Send + Sync {
    fn identifier(&self) -> &str;
    /// Hidden dimension of the pooled representation.
    fn dim(&self) -> usize;
    /// The backbone's native sentence-pair boundary marker.
    fn pair_boundary(&self) -> &str {
        " [SEP] "
    }
    /// Pooled representation of the pair text; deterministic for fixed
    /// weights and input.
    fn encode(&self, text: &str) -> Vec<f64>;
}

/// Resolves an encoder identifier. `stub-<dim>` builds a [`StubEncoder`];
/// anything else is rejected (real backbones are supplied by callers that
/// implement [`Encoder`] themselves).
pub fn build_encoder(identifier: &str) -> Result<Arc<dyn Encoder>, ModelError> {
    if let Some(dim) = identifier.strip_prefix("stub-") {
        if let Ok(dim) = dim.parse::<usize>() {
            if dim > 0 {
                return Ok(Arc::new(StubEncoder::new(dim)));
            }
        }
    }
    Err(ModelError::UnknownEncoder(identifier.to_string()))
}

/// Deterministic feature-hashing encoder: character trigrams hashed into
/// `dim` buckets with a sign hash, L2-normalized. No trainable weights.
pub struct StubEncoder {
    dim: usize,
    id: String,
}

impl StubEncoder {
    pub fn new(dim: usize) -> StubEncoder {
        StubEncoder {
            dim,
            id: format!("stub-{dim}"),
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Encoder for StubEncoder {
    fn identifier(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        let bytes = text.as_bytes();
        if bytes.len() < 3 {
            let h = fnv1a(bytes);
            v[(h % self.dim as u64) as usize] = 1.0;
            return v;
        }
        for window in bytes.windows(3) {
            let h = fnv1a(window);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_normalized() {
        let e = StubEncoder::new(16);
        let a = e.encode("the cat sat on the mat");
        let b = e.encode("the cat sat on the mat");
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_texts_distinct_vectors() {
        let e = StubEncoder::new(16);
        assert_ne!(e.encode("alpha beta gamma"), e.encode("delta epsilon zeta"));
    }

    #[test]
    fn resolver() {
        assert_eq!(build_encoder("stub-32").unwrap().dim(), 32);
        assert!(build_encoder("stub-0").is_err());
        assert!(build_encoder("roberta-base").is_err());
    }
}
