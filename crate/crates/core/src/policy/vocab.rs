use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::geometry::Vec2;

/// Polar grid of single-step displacements, expressed in the ego frame
/// (x forward, y left).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    /// Step lengths in meters (one ring per entry).
    pub radii: Vec<f64>,
    /// Displacement directions relative to the current heading, radians.
    pub angles: Vec<f64>,
}

impl Default for VocabSpec {
    fn default() -> Self {
        let radii = (1..=9).map(|i| 0.15 * i as f64).collect();
        let half = [0.005, 0.015, 0.03, 0.05, 0.08, 0.12, 0.18];
        let mut angles: Vec<f64> = half.iter().rev().map(|a| -a).collect();
        angles.extend_from_slice(&half);
        Self { radii, angles }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenVocabulary {
    pub spec: VocabSpec,
    entries: Vec<Vec2>,
}

impl TokenVocabulary {
    pub fn new(spec: VocabSpec) -> Result<Self> {
        if spec.radii.iter().chain(&spec.angles).any(|v| !v.is_finite())
            || spec.radii.iter().any(|&r| r <= 0.0)
        {
            return Err(Error::InvalidInput("vocabulary radii must be positive and finite".into()));
        }
        let mut entries = vec![Vec2::ZERO];
        for &r in &spec.radii {
            for &a in &spec.angles {
                entries.push(Vec2::from_angle(a) * r);
            }
        }
        for i in 0..entries.len() {
            for j in 0..i {
                if entries[i] == entries[j] {
                    return Err(Error::InvalidInput(format!("duplicate vocabulary entries {j} and {i}")));
                }
            }
        }
        Ok(Self { spec, entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Vec2] {
        &self.entries
    }

    pub fn get(&self, index: usize) -> Result<Vec2> {
        self.entries.get(index).copied().ok_or_else(|| {
            Error::InvalidInput(format!("token {index} outside vocabulary of size {}", self.entries.len()))
        })
    }

    /// World-frame displacement of a token issued at `heading`.
    pub fn decode(&self, index: usize, heading: f64) -> Result<Vec2> {
        Ok(self.get(index)?.rotate(heading))
    }

    /// Token with the closest ego-frame displacement; ties go to the lower index.
    pub fn nearest(&self, local: Vec2) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, e) in self.entries.iter().enumerate() {
            let d = e.dist(local);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Largest distance from any point of the covered annulus sector to its nearest token,
    /// estimated on a dense grid. Used as the open-loop quantization floor.
    pub fn quantization_floor(&self) -> f64 {
        let rmax = self.spec.radii.iter().cloned().fold(0.0, f64::max);
        let amax = self.spec.angles.iter().map(|a| a.abs()).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for i in 0..=200 {
            let r = rmax * i as f64 / 200.0;
            for j in 0..=50 {
                let a = -amax + 2.0 * amax * j as f64 / 50.0;
                let p = Vec2::from_angle(a) * r;
                worst = worst.max(self.entries[self.nearest(p)].dist(p));
            }
        }
        worst
    }
}

impl Default for TokenVocabulary {
    fn default() -> Self {
        Self::new(VocabSpec::default()).expect("default vocabulary is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_vocabulary_shape() {
        let v = TokenVocabulary::default();
        assert_eq!(v.len(), 127);
        assert_eq!(v.get(0).unwrap(), Vec2::ZERO);
        assert!(v.get(127).is_err());
        assert!(v.quantization_floor() < 0.1);
    }

    #[test]
    fn nearest_prefers_lower_index_on_ties() {
        let v = TokenVocabulary::new(VocabSpec { radii: vec![1.0], angles: vec![-0.5, 0.5] }).unwrap();
        assert_eq!(v.nearest(Vec2::new(0.5, 0.0)), 0);
        assert_eq!(v.nearest(Vec2::new(2.0, 0.0)), 1);
    }

    #[test]
    fn duplicate_entries_rejected() {
        assert!(TokenVocabulary::new(VocabSpec { radii: vec![1.0, 1.0], angles: vec![0.0] }).is_err());
    }
}
