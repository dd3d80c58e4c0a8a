use std::collections::HashMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingBackend, GatewayError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    let na: f64 = a.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.0.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Embeds `texts`, checking the batch is non-empty, length-preserving,
/// finite and dimension-uniform.
pub async fn embed(backend: &dyn EmbeddingBackend, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::Precondition("nothing to embed".into()));
    }
    let vectors = backend.embed_batch(texts).await?;
    if vectors.len() != texts.len() {
        return Err(GatewayError::Malformed(format!(
            "{} embeddings for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    let expected = vectors[0].dimension();
    if expected == 0 {
        return Err(GatewayError::Malformed("zero-dimensional embedding".into()));
    }
    for v in &vectors {
        if v.dimension() != expected {
            return Err(GatewayError::DimensionMismatch { expected, actual: v.dimension() });
        }
        if v.0.iter().any(|x| !x.is_finite()) {
            return Err(GatewayError::Malformed("non-finite embedding component".into()));
        }
    }
    Ok(vectors)
}

/// Deterministic stand-in embedder: components are drawn from SHA-256 of
/// `(seed, text, block)`, mapped to `[-1, 1)`.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dimension: usize,
    pub seed: u64,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dimension: 64, seed: 0 }
    }
}

impl HashEmbedder {
    pub fn vector(&self, text: &str) -> EmbeddingVector {
        let mut out = Vec::with_capacity(self.dimension);
        let mut block = 0u32;
        while out.len() < self.dimension {
            let mut h = Sha256::new();
            h.update(self.seed.to_le_bytes());
            h.update(block.to_le_bytes());
            h.update(text.as_bytes());
            for chunk in h.finalize().chunks_exact(4) {
                if out.len() == self.dimension {
                    break;
                }
                let x = u32::from_le_bytes(chunk.try_into().unwrap());
                out.push(x as f64 / 2_147_483_648.0 - 1.0);
            }
            block += 1;
        }
        EmbeddingVector(out)
    }
}

#[async_trait]
impl EmbeddingBackend for HashEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// Fixed text → vector table, for tests that need hand-placed embeddings.
#[derive(Debug, Clone, Default)]
pub struct StaticEmbedder {
    pub table: HashMap<String, Vec<f64>>,
}

#[async_trait]
impl EmbeddingBackend for StaticEmbedder {
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .cloned()
                    .map(EmbeddingVector)
                    .ok_or_else(|| GatewayError::Malformed(format!("no embedding for {t:?}")))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[tokio::test]
    async fn identical_texts_identical_vectors() {
        let e = HashEmbedder::default();
        let v = embed(&e, &texts(&["liver normal", "liver normal", "cyst"])).await.unwrap();
        assert_eq!(v.len(), 3);
        assert!(v.iter().all(|x| x.dimension() == 64));
        assert_eq!(v[0], v[1]);
        assert_ne!(v[0], v[2]);
        assert!((cosine_similarity(&v[0], &v[0]) - 1.0).abs() < 1e-9);
    }

    #[tokio::test]
    async fn seed_changes_vectors() {
        let a = HashEmbedder { dimension: 64, seed: 1 }.vector("x");
        let b = HashEmbedder { dimension: 64, seed: 2 }.vector("x");
        assert_ne!(a, b);
        assert!(a.0.iter().all(|c| (-1.0..1.0).contains(c)));
    }

    #[tokio::test]
    async fn empty_batch_rejected() {
        assert!(matches!(
            embed(&HashEmbedder::default(), &[]).await,
            Err(GatewayError::Precondition(_))
        ));
    }

    #[tokio::test]
    async fn ragged_batch_rejected() {
        let mut e = StaticEmbedder::default();
        e.table.insert("a".into(), vec![1.0, 0.0]);
        e.table.insert("b".into(), vec![1.0]);
        assert_eq!(
            embed(&e, &texts(&["a", "b"])).await,
            Err(GatewayError::DimensionMismatch { expected: 2, actual: 1 })
        );
    }
}
