use super::{EmbedError, Embedder, EmbeddingVector};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// Lowercased runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Signed feature hashing: each token adds ±1 at `fnv1a64(token) mod dim`, with the
/// sign taken from the hash's top bit, then the accumulator is L2-normalized.
///
/// If opposite-signed tokens cancel to an all-zero accumulator, the first token's
/// bucket is used on its own.
pub fn hash_embed(text: &str, dim: usize) -> Result<EmbeddingVector, EmbedError> {
    if dim < 2 {
        return Err(EmbedError::InvalidConfig("hash embedding dim must be at least 2".into()));
    }
    let tokens = tokenize(text);
    let first = tokens.first().ok_or(EmbedError::EmptyText { index: 0 })?;
    let bucket = |token: &str| {
        let h = fnv1a64(token.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        ((h % dim as u64) as usize, sign)
    };
    let mut acc = vec![0.0f32; dim];
    for token in &tokens {
        let (idx, sign) = bucket(token);
        acc[idx] += sign;
    }
    if acc.iter().all(|v| *v == 0.0) {
        let (idx, sign) = bucket(first);
        acc[idx] = sign;
    }
    EmbeddingVector::normalized(acc)
}

/// Deterministic offline embedder backed by [`hash_embed`].
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("local_hash/{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts
            .iter()
            .enumerate()
            .map(|(index, t)| {
                hash_embed(t, self.dim).map_err(|e| match e {
                    EmbedError::EmptyText { .. } => EmbedError::EmptyText { index },
                    other => other,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"alpha"), 0x8ac625bb85ed202b);
    }

    #[test]
    fn alpha_beta_dim8() {
        // Indices and signs computed with a standalone FNV-1a script.
        let v = hash_embed("alpha beta", 8).unwrap();
        let h = std::f32::consts::FRAC_1_SQRT_2;
        assert_eq!(v.values(), &[0.0, 0.0, 0.0, -h, 0.0, 0.0, 0.0, h]);
    }

    #[test]
    fn single_token_is_one_hot() {
        for dim in [2, 7, 64, 256] {
            let v = hash_embed("hello", dim).unwrap();
            assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
            assert_eq!(v.norm(), 1.0);
        }
        assert_eq!(hash_embed("hello", 64).unwrap().values()[11], -1.0);
    }

    #[test]
    fn case_folding_and_repetition() {
        assert_eq!(hash_embed("Hello HELLO", 64).unwrap(), hash_embed("hello", 64).unwrap());
        assert_eq!(hash_embed("hello", 256).unwrap(), hash_embed("hello", 256).unwrap());
    }

    #[test]
    fn no_tokens_is_empty_text() {
        assert!(matches!(hash_embed("  --  ", 8), Err(EmbedError::EmptyText { .. })));
        assert!(hash_embed("x", 1).is_err());
    }

    #[test]
    fn tokenizer_splits_on_non_alphanumerics() {
        assert_eq!(tokenize("Sickle-cell HbS, p.Glu6Val!"), ["sickle", "cell", "hbs", "p", "glu6val"]);
    }
}
