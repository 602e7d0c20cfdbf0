//! Synthetic sprite dataset with known generative factors.
//!
//! A single filled sprite is rasterized from a factor tuple
//! `(shape, scale, pos_x, pos_y)`. Every image is a pure function of its
//! index, so the whole grid can be regenerated bit-exactly from the spec.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::nn::Rng;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"GVDS";
pub const DATASET_VERSION: u16 = 1;
pub const DEFAULT_GRID_CAP: usize = 65_536;
const SUPERSAMPLE: usize = 4;

/// Factor order is fixed: shape, scale, pos_x, pos_y.
pub const FACTOR_NAMES: [&str; 4] = ["shape", "scale", "pos_x", "pos_y"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Factor {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorSpec {
    pub factors: Vec<Factor>,
    pub image_height: usize,
    pub image_width: usize,
}

/// Rasterization geometry derived from a validated spec.
#[derive(Clone, Copy, Debug)]
struct Layout {
    r_min: f64,
    r_max: f64,
    x0: f64,
    y0: f64,
    step_x: f64,
    step_y: f64,
}

impl Default for FactorSpec {
    fn default() -> Self {
        Self::new(&[3, 6, 8, 8], 16, 16).expect("default spec is valid")
    }
}

impl FactorSpec {
    /// Builds and validates a spec from the four cardinalities
    /// `(shape, scale, pos_x, pos_y)`.
    pub fn new(cardinalities: &[usize], image_height: usize, image_width: usize) -> Result<Self> {
        if cardinalities.len() != FACTOR_NAMES.len() {
            return Err(Error::Config(format!(
                "expected {} factor cardinalities, got {}",
                FACTOR_NAMES.len(),
                cardinalities.len()
            )));
        }
        let spec = Self {
            factors: FACTOR_NAMES
                .iter()
                .zip(cardinalities)
                .map(|(n, &c)| Factor {
                    name: n.to_string(),
                    cardinality: c,
                })
                .collect(),
            image_height,
            image_width,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factors.len() != FACTOR_NAMES.len() {
            return Err(Error::Config("a spec has exactly four factors".into()));
        }
        for (f, expected) in self.factors.iter().zip(FACTOR_NAMES) {
            if f.name != expected {
                return Err(Error::Config(format!(
                    "factor order must be {FACTOR_NAMES:?}, found `{}`",
                    f.name
                )));
            }
            if f.cardinality < 2 {
                return Err(Error::Config(format!(
                    "factor `{}` needs cardinality >= 2, got {}",
                    f.name, f.cardinality
                )));
            }
        }
        if self.factors[0].cardinality > 3 {
            return Err(Error::Config("only three sprite shapes exist".into()));
        }
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::Config("image dimensions must be positive".into()));
        }
        self.layout().map(|_| ())
    }

    fn layout(&self) -> Result<Layout> {
        let side = self.image_height.min(self.image_width) as f64;
        let r_max = 0.25 * side;
        let r_min = 0.1 * side;
        let lattice = |extent: usize, count: usize, axis: &str| -> Result<(f64, f64)> {
            let free = extent as f64 - 2.0 * r_max;
            let step = (free / (count - 1) as f64).floor();
            if step < 1.0 {
                return Err(Error::Config(format!(
                    "{count} {axis} positions do not fit in {extent} pixels without clipping"
                )));
            }
            let start = (extent as f64 - (count - 1) as f64 * step) / 2.0;
            Ok((start, step))
        };
        let (x0, step_x) = lattice(self.image_width, self.factors[2].cardinality, "x")?;
        let (y0, step_y) = lattice(self.image_height, self.factors[3].cardinality, "y")?;
        Ok(Layout {
            r_min,
            r_max,
            x0,
            y0,
            step_x,
            step_y,
        })
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.factors.iter().map(|f| f.cardinality).collect()
    }

    pub fn grid_size(&self) -> usize {
        self.factors.iter().map(|f| f.cardinality).product()
    }

    pub fn pixels(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Lexicographic rank of an index (last factor varies fastest).
    pub fn flat_index(&self, idx: &FactorIndex) -> usize {
        idx.values
            .iter()
            .zip(&self.factors)
            .fold(0, |acc, (&v, f)| acc * f.cardinality + v)
    }

    pub fn unflatten(&self, mut flat: usize) -> FactorIndex {
        let mut values = vec![0; self.factors.len()];
        for (slot, f) in values.iter_mut().zip(&self.factors).rev() {
            *slot = flat % f.cardinality;
            flat /= f.cardinality;
        }
        FactorIndex { values }
    }

    pub fn check_index(&self, idx: &FactorIndex) -> Result<()> {
        if idx.values.len() != self.factors.len()
            || idx
                .values
                .iter()
                .zip(&self.factors)
                .any(|(&v, f)| v >= f.cardinality)
        {
            return Err(Error::Contract(format!(
                "index {:?} is not valid for cardinalities {:?}",
                idx.values,
                self.cardinalities()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactorIndex {
    pub values: Vec<usize>,
}

impl FactorIndex {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }
}

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Observation {
    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| quantize(p)).collect()
    }
}

fn quantize(p: f32) -> u8 {
    (p.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn inside(shape: usize, dx: f64, dy: f64, r: f64) -> bool {
    match shape {
        // square
        0 => dx.abs() <= r && dy.abs() <= r,
        // ellipse, semi-axes r (horizontal) and 0.6·r
        1 => {
            let ry = 0.6 * r;
            dx * dx / (r * r) + dy * dy / (ry * ry) <= 1.0
        }
        // upward triangle with apex (0, -r) and base at y = +r
        _ => {
            if dy < -r || dy > r {
                return false;
            }
            let half_width = r * (dy + r) / (2.0 * r);
            dx.abs() <= half_width
        }
    }
}

/// Rasterizes one sprite with 4×4 supersampling.
pub fn render(spec: &FactorSpec, idx: &FactorIndex) -> Result<Observation> {
    spec.check_index(idx)?;
    let layout = spec.layout()?;
    let [shape, scale, px, py] = [idx.values[0], idx.values[1], idx.values[2], idx.values[3]];
    let scales = spec.factors[1].cardinality;
    let r = layout.r_min + (layout.r_max - layout.r_min) * scale as f64 / (scales - 1) as f64;
    let cx = layout.x0 + px as f64 * layout.step_x;
    let cy = layout.y0 + py as f64 * layout.step_y;
    let (h, w) = (spec.image_height, spec.image_width);
    let mut pixels = Vec::with_capacity(h * w);
    let per = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for row in 0..h {
        for col in 0..w {
            let mut hits = 0u32;
            for a in 0..SUPERSAMPLE {
                for b in 0..SUPERSAMPLE {
                    let sx = col as f64 + (b as f64 + 0.5) / SUPERSAMPLE as f64;
                    let sy = row as f64 + (a as f64 + 0.5) / SUPERSAMPLE as f64;
                    if inside(shape, sx - cx, sy - cy, r) {
                        hits += 1;
                    }
                }
            }
            pixels.push(hits as f32 / per);
        }
    }
    Ok(Observation {
        height: h,
        width: w,
        pixels,
    })
}

/// Every `(index, observation)` pair in lexicographic order.
pub fn enumerate_grid(spec: &FactorSpec, cap: usize) -> Result<Vec<(FactorIndex, Observation)>> {
    spec.validate()?;
    let size = spec.grid_size();
    if size > cap {
        return Err(Error::Config(format!(
            "grid of {size} images exceeds the cap of {cap}"
        )));
    }
    (0..size)
        .map(|flat| {
            let idx = spec.unflatten(flat);
            let obs = render(spec, &idx)?;
            Ok((idx, obs))
        })
        .collect()
}

pub fn sample_index(spec: &FactorSpec, rng: &mut Rng) -> FactorIndex {
    FactorIndex {
        values: spec
            .factors
            .iter()
            .map(|f| rng.gen_range(0..f.cardinality))
            .collect(),
    }
}

/// I.i.d. uniform indices over the full grid.
pub fn sample_batch(spec: &FactorSpec, rng: &mut Rng, batch_size: usize) -> Result<Vec<FactorIndex>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be at least 1".into()));
    }
    Ok((0..batch_size).map(|_| sample_index(spec, rng)).collect())
}

/// Pairs that agree on factor `fixed_k`; every other factor is drawn
/// independently for each member.
pub fn sample_pair_fixed_factor(
    spec: &FactorSpec,
    rng: &mut Rng,
    fixed_k: usize,
    batch_size: usize,
) -> Result<Vec<(FactorIndex, FactorIndex)>> {
    if fixed_k >= spec.num_factors() {
        return Err(Error::Contract(format!(
            "factor {fixed_k} out of range for {} factors",
            spec.num_factors()
        )));
    }
    Ok((0..batch_size)
        .map(|_| {
            let a = sample_index(spec, rng);
            let mut b = sample_index(spec, rng);
            b.values[fixed_k] = a.values[fixed_k];
            (a, b)
        })
        .collect())
}

/// The rendered grid, stored quantized to u8 as on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    spec: FactorSpec,
    pixels: Vec<u8>,
}

impl Dataset {
    pub fn generate(spec: &FactorSpec) -> Result<Self> {
        Self::generate_with_cap(spec, DEFAULT_GRID_CAP)
    }

    pub fn generate_with_cap(spec: &FactorSpec, cap: usize) -> Result<Self> {
        let grid = enumerate_grid(spec, cap)?;
        let mut pixels = Vec::with_capacity(spec.grid_size() * spec.pixels());
        for (_, obs) in &grid {
            pixels.extend(obs.to_u8());
        }
        Ok(Self {
            spec: spec.clone(),
            pixels,
        })
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.spec.grid_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image_u8(&self, flat: usize) -> &[u8] {
        let p = self.spec.pixels();
        &self.pixels[flat * p..(flat + 1) * p]
    }

    pub fn observation(&self, flat: usize) -> Observation {
        Observation {
            height: self.spec.image_height,
            width: self.spec.image_width,
            pixels: self.image_u8(flat).iter().map(|&b| b as f32 / 255.0).collect(),
        }
    }

    /// Stacks the given grid images into a `[B, H·W]` tensor.
    pub fn batch_tensor(&self, flats: &[usize]) -> Tensor<f32> {
        let p = self.spec.pixels();
        let mut data = Vec::with_capacity(flats.len() * p);
        for &f in flats {
            data.extend(self.image_u8(f).iter().map(|&b| b as f32 / 255.0));
        }
        Tensor::new(vec![flats.len(), p], data).expect("batch shape")
    }

    pub fn labels(&self, flat: usize) -> FactorIndex {
        self.spec.unflatten(flat)
    }

    /// Lexicographic indices held out for audits: every 5th grid image.
    pub fn holdout_indices(&self) -> Vec<usize> {
        (0..self.len()).step_by(5).collect()
    }

    pub fn train_indices(&self, exclude_holdout: bool) -> Vec<usize> {
        (0..self.len())
            .filter(|i| !exclude_holdout || i % 5 != 0)
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 64);
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.spec.factors.len() as u32).to_le_bytes());
        for f in &self.spec.factors {
            out.extend_from_slice(&(f.name.len() as u16).to_le_bytes());
            out.extend_from_slice(f.name.as_bytes());
            out.extend_from_slice(&(f.cardinality as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.spec.image_height as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.image_width as u32).to_le_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let version = r.u16()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let m = r.u32()? as usize;
        if m > 64 {
            return Err(Error::Format(format!("implausible factor count {m}")));
        }
        let mut factors = Vec::with_capacity(m);
        for _ in 0..m {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("factor name is not UTF-8".into()))?
                .to_string();
            let cardinality = r.u32()? as usize;
            factors.push(Factor { name, cardinality });
        }
        let image_height = r.u32()? as usize;
        let image_width = r.u32()? as usize;
        let spec = FactorSpec {
            factors,
            image_height,
            image_width,
        };
        spec.validate()
            .map_err(|e| Error::Format(format!("invalid spec in header: {e}")))?;
        let expected = spec.grid_size() * spec.pixels();
        let pixels = r.rest();
        if pixels.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} pixel bytes, found {}",
                pixels.len()
            )));
        }
        Ok(Self {
            spec,
            pixels: pixels.to_vec(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }
}
