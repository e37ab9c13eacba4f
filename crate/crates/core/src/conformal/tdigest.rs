//! Merging t-digest with the arcsine (k₁) scale function.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub const DEFAULT_COMPRESSION: f64 = 100.0;

/// A merge keeps the plain union of centroids until it holds more than this
/// many multiples of the compression, so merging a few client sketches does
/// not depend on the merge order.
const MERGE_BUFFER: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub mean: f64,
    pub weight: u64,
}

/// Centroid sketch with strictly increasing means.
#[derive(Debug, Clone, PartialEq)]
pub struct TDigestSketch {
    centroids: Vec<Centroid>,
    compression: f64,
    total: u64,
    min: f64,
    max: f64,
}

fn k1(q: f64, delta: f64) -> f64 {
    delta / (2.0 * PI) * (2.0 * q - 1.0).clamp(-1.0, 1.0).asin()
}

fn k1_inv(k: f64, delta: f64) -> f64 {
    let x = (2.0 * PI * k / delta).clamp(-PI / 2.0, PI / 2.0);
    (x.sin() + 1.0) / 2.0
}

impl TDigestSketch {
    pub fn empty(compression: f64) -> Self {
        TDigestSketch {
            centroids: Vec::new(),
            compression,
            total: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    /// Builds a sketch from unordered values; the input order does not matter.
    pub fn from_values(values: &[f64], compression: f64) -> Result<Self> {
        if !(compression >= 1.0) {
            return Err(Error::Config(format!("t-digest compression {compression} < 1")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Score("non-finite value inserted into t-digest".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let cs: Vec<Centroid> = sorted.iter().map(|&mean| Centroid { mean, weight: 1 }).collect();
        Ok(Self::compress(cs, compression))
    }

    fn compress(sorted: Vec<Centroid>, delta: f64) -> Self {
        let total: u64 = sorted.iter().map(|c| c.weight).sum();
        let mut out = Self::empty(delta);
        out.total = total;
        if sorted.is_empty() {
            return out;
        }
        out.min = sorted[0].mean;
        out.max = sorted[sorted.len() - 1].mean;
        let w = total as f64;
        let mut merged: Vec<Centroid> = Vec::new();
        let mut before = 0u64;
        let mut cur = sorted[0];
        let mut limit = k1_inv(k1(0.0, delta) + 1.0, delta) * w;
        for &next in &sorted[1..] {
            if ((before + cur.weight + next.weight) as f64) <= limit {
                let cw = cur.weight + next.weight;
                cur.mean += (next.mean - cur.mean) * next.weight as f64 / cw as f64;
                cur.weight = cw;
            } else {
                before += cur.weight;
                merged.push(cur);
                cur = next;
                limit = k1_inv(k1(before as f64 / w, delta) + 1.0, delta) * w;
            }
        }
        merged.push(cur);
        // Equal (or rounding-inverted) neighbouring means collapse into one.
        for c in merged {
            match out.centroids.last_mut() {
                Some(last) if c.mean <= last.mean => {
                    let cw = last.weight + c.weight;
                    last.mean += (c.mean - last.mean) * c.weight as f64 / cw as f64;
                    last.weight = cw;
                }
                _ => out.centroids.push(c),
            }
        }
        out
    }

    /// Union of two sketches; recompressed only past the merge buffer.
    pub fn merge(&self, other: &TDigestSketch) -> TDigestSketch {
        let delta = self.compression.max(other.compression);
        let mut all: Vec<Centroid> = self.centroids.iter().chain(&other.centroids).copied().collect();
        all.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.weight.cmp(&b.weight)));
        let mut out = if all.len() as f64 > MERGE_BUFFER * delta {
            Self::compress(all, delta)
        } else {
            let mut out = Self::empty(delta);
            out.total = all.iter().map(|c| c.weight).sum();
            for c in all {
                match out.centroids.last_mut() {
                    Some(last) if last.mean == c.mean => last.weight += c.weight,
                    _ => out.centroids.push(c),
                }
            }
            out
        };
        out.min = self.min.min(other.min);
        out.max = self.max.max(other.max);
        out
    }

    pub fn centroids(&self) -> &[Centroid] {
        &self.centroids
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    pub fn compression(&self) -> f64 {
        self.compression
    }

    /// Value at quantile level `q ∈ [0, 1]`, interpolating linearly between
    /// centroid centres (and the exact extremes at both ends).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if self.total == 0 {
            return Err(Error::Score("quantile of an empty t-digest".into()));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Score(format!("quantile level {q} outside [0, 1]")));
        }
        let cs = &self.centroids;
        if cs.len() == 1 {
            return Ok(cs[0].mean);
        }
        let t = q * self.total as f64;
        let first = cs[0].weight as f64 / 2.0;
        if t <= first {
            return Ok(lerp(self.min, cs[0].mean, if first > 0.0 { t / first } else { 1.0 }));
        }
        let mut centre = first;
        for pair in cs.windows(2) {
            let step = (pair[0].weight + pair[1].weight) as f64 / 2.0;
            if t <= centre + step {
                return Ok(lerp(pair[0].mean, pair[1].mean, (t - centre) / step));
            }
            centre += step;
        }
        let last = cs[cs.len() - 1];
        let rest = self.total as f64 - centre;
        Ok(lerp(last.mean, self.max, if rest > 0.0 { (t - centre) / rest } else { 1.0 }))
    }
}

fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a + (b - a) * f.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_after_build_and_merge() {
        let a: Vec<f64> = (0..3000).map(|i| ((i * 7919) % 3001) as f64 / 3001.0).collect();
        let b: Vec<f64> = (0..2000).map(|i| (i % 17) as f64).collect();
        let da = TDigestSketch::from_values(&a, DEFAULT_COMPRESSION).unwrap();
        let db = TDigestSketch::from_values(&b, DEFAULT_COMPRESSION).unwrap();
        let m = da.merge(&db);
        for d in [&da, &db, &m] {
            assert!(d.centroids().windows(2).all(|w| w[0].mean < w[1].mean));
            assert_eq!(d.centroids().iter().map(|c| c.weight).sum::<u64>(), d.total_weight());
        }
        assert_eq!(m.total_weight(), 5000);
        assert!(da.centroids().len() < 200);
    }

    #[test]
    fn small_inputs_are_exact() {
        let d = TDigestSketch::from_values(&[3.0, 1.0, 2.0], DEFAULT_COMPRESSION).unwrap();
        assert_eq!(d.quantile(0.0).unwrap(), 1.0);
        assert_eq!(d.quantile(0.5).unwrap(), 2.0);
        assert_eq!(d.quantile(1.0).unwrap(), 3.0);
    }

    #[test]
    fn empty_digest_has_no_quantile() {
        assert!(TDigestSketch::empty(100.0).quantile(0.5).is_err());
    }
}
