//! Latent traversals along one dimension and their period check.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::groupify::GroupModel;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Traversal {
    pub height: usize,
    pub width: usize,
    pub ts: Vec<f64>,
    /// One decoded image in `[0, 1]` per entry of `ts`.
    pub frames: Vec<Vec<f32>>,
    /// Decoded images at `t + n`, aligned with `frames`.
    pub shifted: Vec<Vec<f32>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodReport {
    pub image: usize,
    pub dim: usize,
    pub n: usize,
    pub ts: Vec<f64>,
    /// Per-pixel MSE between the frames at `t` and `t + n`.
    pub per_t: Vec<f64>,
    pub period_mse: f64,
}

/// `t0, t0 + step, ...` up to `t1` inclusive.
pub fn traversal_points(t0: f64, t1: f64, step: f64) -> Result<Vec<f64>> {
    let ok = step > 0.0 && t1 >= t0 && t0.is_finite() && t1.is_finite();
    if !ok {
        return Err(Error::Contract(format!("bad traversal range [{t0}, {t1}] step {step}")));
    }
    let count = ((t1 - t0) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| t0 + i as f64 * step).collect())
}

/// Decodes `μ(o) + t·e_dim` for every `t`, and again at `t + n`.
pub fn traverse<M: GroupModel<f32>>(
    model: &M,
    dataset: &Dataset,
    image: usize,
    dim: usize,
    ts: &[f64],
    n: usize,
) -> Result<Traversal> {
    let d = model.latent_dim();
    if dim >= d {
        return Err(Error::Contract(format!("dim {dim} out of range for latent dim {d}")));
    }
    if image >= dataset.len() {
        return Err(Error::Contract(format!("image {image} out of range")));
    }
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(dataset.batch_tensor(&[image]));
    let mu_var = model.encode_mu(&mut tape, x)?;
    let mu = tape.value(mu_var).data().to_vec();
    let offsets: Vec<f64> = ts.iter().copied().chain(ts.iter().map(|t| t + n as f64)).collect();
    let mut z = Vec::with_capacity(offsets.len() * d);
    for &t in &offsets {
        let mut row = mu.clone();
        row[dim] = (row[dim] as f64 + t) as f32;
        z.extend(row);
    }
    let zv = tape.leaf(Tensor::new(vec![offsets.len(), d], z)?);
    let img = model.decode_image(&mut tape, zv)?;
    tape.check_finite()?;
    let out = tape.value(img);
    let rows: Vec<Vec<f32>> = (0..out.rows()).map(|r| out.row(r).to_vec()).collect();
    let (frames, shifted) = rows.split_at(ts.len());
    let spec = dataset.spec();
    Ok(Traversal {
        height: spec.image_height,
        width: spec.image_width,
        ts: ts.to_vec(),
        frames: frames.to_vec(),
        shifted: shifted.to_vec(),
    })
}

impl Traversal {
    pub fn period_report(&self, image: usize, dim: usize, n: usize) -> PeriodReport {
        let per_t: Vec<f64> = self
            .frames
            .iter()
            .zip(&self.shifted)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(&u, &v)| (u as f64 - v as f64).powi(2))
                    .sum::<f64>()
                    / a.len() as f64
            })
            .collect();
        let period_mse = per_t.iter().sum::<f64>() / per_t.len().max(1) as f64;
        PeriodReport {
            image,
            dim,
            n,
            ts: self.ts.clone(),
            per_t,
            period_mse,
        }
    }

    /// All frames side by side as one 8-bit strip.
    pub fn strip(&self) -> (usize, usize, Vec<u8>) {
        let (h, w, k) = (self.height, self.width, self.frames.len());
        let mut pixels = vec![0u8; h * w * k];
        for (f, frame) in self.frames.iter().enumerate() {
            for r in 0..h {
                for c in 0..w {
                    let v = frame[r * w + c].clamp(0.0, 1.0);
                    pixels[r * w * k + f * w + c] = (v * 255.0).round() as u8;
                }
            }
        }
        (w * k, h, pixels)
    }
}

/// Binary PGM (P5), maxval 255.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height || width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "pgm needs {width}x{height} pixels, got {}",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    Ok(fs::write(path, encode_pgm(width, height, pixels)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FactorSpec;
    use crate::groupify::OracleModel;

    #[test]
    fn points_include_both_ends() {
        assert_eq!(traversal_points(0.0, 18.0, 2.0).unwrap().len(), 10);
        assert_eq!(traversal_points(0.0, 17.0, 2.0).unwrap().last(), Some(&16.0));
        assert!(traversal_points(0.0, 1.0, 0.0).is_err());
        assert!(traversal_points(2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn oracle_traversal_is_periodic_and_starts_at_reconstruction() {
        let ds = Dataset::generate(&FactorSpec::default()).unwrap();
        let oracle = OracleModel::new(&ds, 8).unwrap();
        let ts = traversal_points(0.0, 14.0, 1.0).unwrap();
        let tr = traverse(&oracle, &ds, 100, 2, &ts, 8).unwrap();
        assert_eq!(tr.period_report(100, 2, 8).period_mse, 0.0);
        let original: Vec<f32> = ds.image_u8(100).iter().map(|&p| p as f32 / 255.0).collect();
        assert_eq!(tr.frames[0], original);
        assert_ne!(tr.frames[1], original);
        assert!(traverse(&oracle, &ds, 100, 4, &ts, 8).is_err());
    }

    #[test]
    fn pgm_layout() {
        let bytes = encode_pgm(3, 2, &[0, 1, 2, 3, 4, 5]).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(bytes.len(), 11 + 6);
        assert!(encode_pgm(3, 3, &[0; 6]).is_err());
    }
}
