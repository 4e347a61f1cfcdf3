//! Per-frame feature matrices and the `DCFT` binary file format.
//!
//! Layout (little-endian): `b"DCFT"`, `u32` version (1), `u32` T, `u32` D,
//! `f32` fps, then `T * D` `f32` values row-major. Total length is
//! `20 + 4 * T * D` bytes.

use std::path::Path;

use crate::diffcore::{interp_row, Tensor};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"DCFT";
pub const FEATURE_VERSION: u32 = 1;
pub const FEATURE_HEADER_LEN: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub video_id: String,
    pub fps: f64,
    /// `[T, D]`
    pub matrix: Tensor,
}

impl FeatureSequence {
    pub fn new(video_id: impl Into<String>, fps: f64, matrix: Tensor) -> Result<Self> {
        if matrix.ndim() != 2 {
            return Err(Error::shape(format!("feature matrix must be 2-D, got {:?}", matrix.shape())));
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        if !matrix.is_finite() {
            return Err(Error::invalid("feature matrix has non-finite entries"));
        }
        Ok(FeatureSequence {
            video_id: video_id.into(),
            fps,
            matrix,
        })
    }

    pub fn frames(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Length in seconds implied by the frame count.
    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.fps
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (t, d) = (self.frames(), self.dim());
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * t * d);
        out.extend_from_slice(FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.extend_from_slice(&(t as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.fps as f32).to_le_bytes());
        for v in self.matrix.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(video_id: impl Into<String>, bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FEATURE_HEADER_LEN {
            return Err(Error::Format(format!("feature file truncated: {} bytes", bytes.len())));
        }
        if &bytes[..4] != FEATURE_MAGIC {
            return Err(Error::Format("feature file magic is not DCFT".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FEATURE_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FEATURE_VERSION,
            });
        }
        let (t, d) = (u32_at(8) as usize, u32_at(12) as usize);
        let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap()) as f64;
        if t == 0 || d == 0 {
            return Err(Error::Format(format!("feature file has empty shape {t}x{d}")));
        }
        let expected = t
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(FEATURE_HEADER_LEN))
            .ok_or_else(|| Error::Format("feature shape overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "feature file length {} does not match header ({t}x{d} needs {expected})",
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes[FEATURE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let matrix = Tensor::matrix(t, d, data)?;
        FeatureSequence::new(video_id, fps, matrix).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Loads a feature file; the video id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        Self::from_bytes(id, &bytes)
    }
}

/// Resamples to `target` rows by linear interpolation over evenly spaced
/// positions spanning `[0, T-1]`.
pub fn resample_features(fs: &FeatureSequence, target: usize) -> Result<FeatureSequence> {
    if target == 0 {
        return Err(Error::invalid("resample target must be >= 1"));
    }
    let t = fs.frames();
    if target == t {
        return Ok(fs.clone());
    }
    let span = (t - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..target)
        .map(|i| {
            let pos = if target == 1 {
                span / 2.0
            } else {
                (i as f64 * span) / (target - 1) as f64
            };
            interp_row(&fs.matrix, pos)
        })
        .collect();
    Ok(FeatureSequence {
        video_id: fs.video_id.clone(),
        fps: fs.fps * target as f64 / t as f64,
        matrix: Tensor::from_rows(&rows)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(rows: &[Vec<f64>]) -> FeatureSequence {
        FeatureSequence::new("v", 2.0, Tensor::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn resample_midpoint() {
        let fs = seq(&[vec![1.0, -2.0], vec![3.0, 4.0]]);
        let r = resample_features(&fs, 3).unwrap();
        assert_eq!(r.matrix.data(), &[1.0, -2.0, 2.0, 1.0, 3.0, 4.0]);
    }

    #[test]
    fn resample_identity_is_bitwise() {
        let fs = seq(&[vec![0.1, 0.7], vec![1.0 / 3.0, 2.0], vec![-5.5, 1e-17]]);
        let r = resample_features(&fs, 3).unwrap();
        assert_eq!(r, fs);
    }

    #[test]
    fn resample_single_row_uses_centre() {
        let fs = seq(&[vec![0.0], vec![2.0], vec![4.0], vec![10.0]]);
        let r = resample_features(&fs, 1).unwrap();
        assert_eq!(r.matrix.data(), &[3.0]);
        assert!(resample_features(&fs, 0).is_err());
    }

    #[test]
    fn resample_keeps_ramps_monotone_and_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let t = rng.random_range(1..30);
            let mut acc = rng.random_range(-5.0..5.0);
            let rows: Vec<Vec<f64>> = (0..t)
                .map(|_| {
                    acc += rng.random_range(0.0..1.0);
                    vec![acc, -acc]
                })
                .collect();
            let fs = seq(&rows);
            let target = rng.random_range(1..40);
            let r = resample_features(&fs, target).unwrap();
            let (lo, hi) = (rows[0][0], rows[t - 1][0]);
            for i in 0..target {
                let v = r.matrix.row(i)[0];
                assert!(v >= lo && v <= hi);
                if i > 0 {
                    assert!(v >= r.matrix.row(i - 1)[0]);
                    assert!(r.matrix.row(i)[1] <= r.matrix.row(i - 1)[1]);
                }
            }
        }
    }

    #[test]
    fn file_round_trip_and_validation() {
        let fs = seq(&[vec![0.5, -1.25, 3.0], vec![2.0, 0.0, -0.75]]);
        let bytes = fs.to_bytes();
        assert_eq!(bytes.len(), FEATURE_HEADER_LEN + 4 * 2 * 3);
        let back = FeatureSequence::from_bytes("v", &bytes).unwrap();
        assert_eq!(back, fs);

        assert!(matches!(FeatureSequence::from_bytes("v", &bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(FeatureSequence::from_bytes("v", &bytes[..10]), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureSequence::from_bytes("v", &bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(FeatureSequence::from_bytes("v", &bad), Err(Error::Version { found: 2, .. })));
        let mut bad = bytes.clone();
        bad.extend_from_slice(&[0; 4]);
        assert!(FeatureSequence::from_bytes("v", &bad).is_err());
        let mut bad = bytes;
        bad[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(FeatureSequence::from_bytes("v", &bad).is_err());
    }
}
