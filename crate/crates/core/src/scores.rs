//! Nonconformity scores `s(y, ŷ)`.

use serde::{Deserialize, Serialize};

use crate::error::{GsiError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AbsResidual,
    CosineDissim,
    RougeLDissim,
    /// Scores computed by an external tool; no range is assumed.
    Precomputed,
}

/// A score function together with the range its values live in.
///
/// Generators clamp their draws to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreFnSpec {
    pub kind: ScoreKind,
    #[serde(with = "extended_f64")]
    pub lo: f64,
    #[serde(with = "extended_f64")]
    pub hi: f64,
}

/// JSON has no infinities; unbounded range ends are written as `"inf"` / `"-inf"`.
mod extended_f64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, ser: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            ser.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            ser.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        match Repr::deserialize(de)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse::<f64>().map_err(de::Error::custom),
        }
    }
}

impl ScoreFnSpec {
    pub fn abs_residual() -> Self {
        Self {
            kind: ScoreKind::AbsResidual,
            lo: 0.0,
            hi: f64::INFINITY,
        }
    }

    /// Signed embeddings make the full `[0, 2]` range reachable.
    pub fn cosine_dissim() -> Self {
        Self {
            kind: ScoreKind::CosineDissim,
            lo: 0.0,
            hi: 2.0,
        }
    }

    pub fn rouge_l_dissim() -> Self {
        Self {
            kind: ScoreKind::RougeLDissim,
            lo: 0.0,
            hi: 1.0,
        }
    }

    pub fn precomputed(lo: f64, hi: f64) -> Result<Self> {
        let spec = Self {
            kind: ScoreKind::Precomputed,
            lo,
            hi,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn unbounded() -> Self {
        Self {
            kind: ScoreKind::Precomputed,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || !(self.lo < self.hi) {
            return Err(GsiError::Config(format!(
                "score range must satisfy lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn clamp(&self, s: f64) -> f64 {
        s.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lo && s <= self.hi
    }
}

/// `|y - ŷ|`.
pub fn abs_residual(y: f64, yhat: f64) -> Result<f64> {
    if !y.is_finite() || !yhat.is_finite() {
        return Err(GsiError::Numeric(format!("abs_residual on non-finite input ({y}, {yhat})")));
    }
    Ok((y - yhat).abs())
}

/// `1 - cos(u, v)`.
pub fn cosine_dissimilarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(GsiError::Shape(format!(
            "cosine dissimilarity on vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if !(nu > 0.0 && nv > 0.0) {
        return Err(GsiError::Domain("cosine dissimilarity of a zero vector".into()));
    }
    if !dot.is_finite() || !nu.is_finite() || !nv.is_finite() {
        return Err(GsiError::Numeric("non-finite embedding".into()));
    }
    let cos = (dot / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Normalized word tokens.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TokenSeq {
    tokens: Vec<String>,
}

impl TokenSeq {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl<S: Into<String>> FromIterator<S> for TokenSeq {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self {
            tokens: iter.into_iter().map(Into::into).filter(|t: &String| !t.is_empty()).collect(),
        }
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> TokenSeq {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - ROUGE-L F1`.
pub fn rouge_l_dissimilarity(reference: &TokenSeq, candidate: &TokenSeq) -> f64 {
    if reference.is_empty() || candidate.is_empty() {
        return 1.0;
    }
    let l = lcs_len(reference.tokens(), candidate.tokens());
    if l == 0 {
        return 1.0;
    }
    let precision = l as f64 / candidate.len() as f64;
    let recall = l as f64 / reference.len() as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    (1.0 - f1).clamp(0.0, 1.0)
}

/// Minimum dissimilarity against several references.
pub fn rouge_l_dissimilarity_multi(references: &[TokenSeq], candidate: &TokenSeq) -> f64 {
    references
        .iter()
        .map(|r| rouge_l_dissimilarity(r, candidate))
        .fold(1.0, f64::min)
}
