//! Latent token windows and nearest-neighbour codebook quantization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Which body half (or the whole body, for the unified ablation) a latent encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentPart {
    Upper,
    Lower,
    Full,
}

impl LatentPart {
    pub fn as_str(self) -> &'static str {
        match self {
            LatentPart::Upper => "upper",
            LatentPart::Lower => "lower",
            LatentPart::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "upper" => Some(Self::Upper),
            "lower" => Some(Self::Lower),
            "full" => Some(Self::Full),
            _ => None,
        }
    }
}

/// `n_tokens × dim` row-major latent sequence for one body part.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentWindow<T> {
    pub part: LatentPart,
    pub dim: usize,
    pub tokens: Vec<T>,
}

impl<T: Real> LatentWindow<T> {
    pub fn new(part: LatentPart, dim: usize, tokens: Vec<T>) -> Result<Self> {
        if dim == 0 || !tokens.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!("{} values is not a multiple of {dim}", tokens.len())));
        }
        Ok(Self { part, dim, tokens })
    }

    pub fn zeros(part: LatentPart, n_tokens: usize, dim: usize) -> Self {
        Self { part, dim, tokens: vec![T::zero(); n_tokens * dim] }
    }

    pub fn n_tokens(&self) -> usize {
        self.tokens.len() / self.dim
    }

    pub fn token(&self, i: usize) -> &[T] {
        &self.tokens[i * self.dim..(i + 1) * self.dim]
    }

    pub fn squared_norm(&self) -> T {
        self.tokens.iter().fold(T::zero(), |acc, &v| acc + v * v)
    }
}

/// Token count for a window of `frames` frames at temporal downsampling `rate`.
pub fn token_count(frames: usize, rate: usize) -> Result<usize> {
    if rate == 0 || !frames.is_multiple_of(rate) {
        return Err(Error::LengthMismatch(format!("{frames} frames not divisible by downsampling rate {rate}")));
    }
    Ok(frames / rate)
}

/// `N × D` embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCodebook<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Real> MotionCodebook<T> {
    pub fn new(dim: usize, entries: Vec<T>) -> Result<Self> {
        if dim == 0 || entries.is_empty() || !entries.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch(format!("{} values do not form rows of {dim}", entries.len())));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("codebook entries must be finite".into()));
        }
        Ok(Self { dim, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, j: usize) -> &[T] {
        &self.entries[j * self.dim..(j + 1) * self.dim]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Nearest entry by Euclidean distance; ties go to the lowest index.
    pub fn quantize(&self, h: &[T]) -> (usize, &[T]) {
        assert_eq!(h.len(), self.dim, "query width");
        let mut best = 0;
        let mut best_d = T::infinity();
        for j in 0..self.len() {
            let d = self.entry(j).iter().zip(h).fold(T::zero(), |acc, (&c, &x)| {
                let e = c - x;
                acc + e * e
            });
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        (best, self.entry(best))
    }

    /// Quantizes every token of a window, returning indices and the snapped window.
    pub fn quantize_window(&self, h: &LatentWindow<T>) -> (Vec<usize>, LatentWindow<T>) {
        let mut idx = Vec::with_capacity(h.n_tokens());
        let mut tokens = Vec::with_capacity(h.tokens.len());
        for i in 0..h.n_tokens() {
            let (j, z) = self.quantize(h.token(i));
            idx.push(j);
            tokens.extend_from_slice(z);
        }
        (idx, LatentWindow { part: h.part, dim: h.dim, tokens })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_entry_match() {
        let entries: Vec<f64> = (0..8 * 4).map(|v| v as f64 * 0.1).collect();
        let cb = MotionCodebook::new(4, entries).unwrap();
        let (j, z) = cb.quantize(cb.entry(5));
        assert_eq!(j, 5);
        assert_eq!(z, cb.entry(5));
    }

    #[test]
    fn single_entry_codebook() {
        let cb = MotionCodebook::new(3, vec![1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(cb.quantize(&[-9.0, 0.0, 4.0]).0, 0);
    }

    #[test]
    fn zero_vs_ones_codebook() {
        let d = 384;
        let mut entries = vec![0.0f64; d];
        entries.extend(vec![1.0; d]);
        let cb = MotionCodebook::new(d, entries).unwrap();
        assert_eq!(cb.quantize(&vec![0.2; d]).0, 0);
        assert_eq!(cb.quantize(&vec![0.5; d]).0, 0, "tie goes to lowest index");
        assert_eq!(cb.quantize(&vec![0.51; d]).0, 1);
    }

    #[test]
    fn token_count_requires_divisibility() {
        assert_eq!(token_count(20, 2).unwrap(), 10);
        assert!(token_count(21, 2).is_err());
    }

    #[test]
    fn codebook_rejects_non_finite() {
        assert!(MotionCodebook::new(2, vec![0.0, f64::NAN]).is_err());
    }
}
