//! Error injection for teacher forcing: each subword may be swapped for a
//! close neighbour in edit distance, at a configured rate.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::metrics::levenshtein;
use crate::par::Exec;
use crate::tokenizer::{TokenId, Vocabulary};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("{0}")]
    Domain(String),
    #[error("candidate cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = NoiseError> = std::result::Result<T, E>;

/// Threshold in tenths, so comparisons stay in integers.
fn thresh_tenths(len: usize) -> usize {
    match len {
        0..=2 => 15,
        3 => 7,
        4..=8 => 5,
        _ => 6,
    }
}

/// Maximum CER (exclusive) for a replacement of a subword of this surface.
pub fn thresh_cer(surface: &str) -> Result<f64> {
    match surface.chars().count() {
        0 => Err(NoiseError::Domain("threshold of an empty subword".into())),
        n => Ok(thresh_tenths(n) as f64 / 10.0),
    }
}

/// Levenshtein distance normalised by the length of `x`.
pub fn subword_cer(x: &str, y: &str) -> Result<f64> {
    let a: Vec<char> = x.chars().collect();
    if a.is_empty() {
        return Err(NoiseError::Domain("CER against an empty subword".into()));
    }
    let b: Vec<char> = y.chars().collect();
    Ok(levenshtein(&a, &b) as f64 / a.len() as f64)
}

fn admissible(x: &[char], y: &[char]) -> bool {
    let t = thresh_tenths(x.len());
    let bound = x.len().abs_diff(y.len());
    if 10 * bound >= t * x.len() {
        return false;
    }
    10 * levenshtein(x, y) < t * x.len()
}

/// Replacement candidates per token id. Specials have none and are never
/// candidates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateTable {
    candidates: Vec<Vec<TokenId>>,
    fingerprint: String,
}

impl CandidateTable {
    pub fn build(vocab: &Vocabulary, exec: Exec) -> Self {
        let plain: Vec<(TokenId, Vec<char>)> =
            vocab.plain_ids().map(|id| (id, vocab.entries()[id].surface.chars().collect())).collect();
        let per_plain = exec.map(&plain, |(x_id, x)| {
            plain.iter().filter(|(y_id, y)| y_id != x_id && admissible(x, y)).map(|(y_id, _)| *y_id).collect()
        });
        let mut candidates = vec![Vec::new(); vocab.len()];
        for ((id, _), list) in plain.iter().zip(per_plain) {
            candidates[*id] = list;
        }
        Self { candidates, fingerprint: vocab.fingerprint() }
    }

    pub fn candidates(&self, id: TokenId) -> &[TokenId] {
        self.candidates.get(id).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Tokens that have at least one candidate.
    pub fn eligible(&self) -> usize {
        self.candidates.iter().filter(|c| !c.is_empty()).count()
    }

    pub fn mean_candidates(&self) -> f64 {
        let e = self.eligible();
        if e == 0 {
            0.0
        } else {
            self.candidates.iter().map(Vec::len).sum::<usize>() as f64 / e as f64
        }
    }

    pub fn matches(&self, vocab: &Vocabulary) -> bool {
        self.candidates.len() == vocab.len() && self.fingerprint == vocab.fingerprint()
    }

    const MAGIC: &'static [u8; 4] = b"DNCT";

    /// Binary cache: magic, vocabulary hash, then one length-prefixed list per id.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(Self::MAGIC)?;
        let fp = self.fingerprint.as_bytes();
        w.write_all(&(fp.len() as u32).to_le_bytes())?;
        w.write_all(fp)?;
        w.write_all(&(self.candidates.len() as u32).to_le_bytes())?;
        for list in &self.candidates {
            w.write_all(&(list.len() as u32).to_le_bytes())?;
            for &id in list {
                w.write_all(&(id as u32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a cache and checks it was built from `vocab`.
    pub fn read_from(mut r: impl Read, vocab: &Vocabulary) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(NoiseError::Cache("not a candidate table".into()));
        }
        let fp_len = read_u32(&mut r)?;
        if fp_len > 256 {
            return Err(NoiseError::Cache("corrupt header".into()));
        }
        let mut fp = vec![0u8; fp_len];
        r.read_exact(&mut fp)?;
        let fingerprint = String::from_utf8(fp).map_err(|_| NoiseError::Cache("corrupt header".into()))?;
        if fingerprint != vocab.fingerprint() {
            return Err(NoiseError::Cache("built from a different vocabulary".into()));
        }
        let n = read_u32(&mut r)?;
        if n != vocab.len() {
            return Err(NoiseError::Cache(format!("{n} entries for a vocabulary of {}", vocab.len())));
        }
        let mut candidates = Vec::with_capacity(n);
        for _ in 0..n {
            let k = read_u32(&mut r)?;
            if k > n {
                return Err(NoiseError::Cache("corrupt candidate list".into()));
            }
            let list = (0..k).map(|_| read_u32(&mut r)).collect::<Result<Vec<_>>>()?;
            if list.iter().any(|&id| id >= n) {
                return Err(NoiseError::Cache("candidate id out of range".into()));
            }
            candidates.push(list);
        }
        Ok(Self { candidates, fingerprint })
    }
}

fn read_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub error_rate: f64,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(error_rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&error_rate) {
            return Err(NoiseError::Domain(format!("error rate {error_rate} outside [0,1]")));
        }
        Ok(Self { error_rate, seed })
    }
}

/// Seeded injection; see [`inject_errors_with`].
pub fn inject_errors(ids: &[TokenId], table: &CandidateTable, config: &NoiseConfig) -> Vec<TokenId> {
    inject_errors_with(ids, table, config.error_rate, &mut ChaCha8Rng::seed_from_u64(config.seed))
}

/// Each token with candidates is replaced with probability `rate` by a
/// uniformly drawn candidate. Other tokens pass through.
pub fn inject_errors_with(ids: &[TokenId], table: &CandidateTable, rate: f64, rng: &mut impl Rng) -> Vec<TokenId> {
    ids.iter()
        .map(|&id| {
            let c = table.candidates(id);
            if !c.is_empty() && rng.gen::<f64>() < rate {
                c[rng.gen_range(0..c.len())]
            } else {
                id
            }
        })
        .collect()
}
