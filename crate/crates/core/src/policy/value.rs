//! Value functions over transform batches and the built-in implementations.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::transform::{Mode, TransformBatch, CHANNELS};
use crate::color::{BACKGROUND_RGB, BAG_RGB};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense values, `t x H x W`, one map per batch slice.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueMapBatch {
    pub mode: Mode,
    pub size: usize,
    pub values: Vec<f32>,
}

impl ValueMapBatch {
    pub fn zeros(mode: Mode, size: usize) -> Self {
        ValueMapBatch {
            mode,
            size,
            values: vec![0.0; mode.slice_count() * size * size],
        }
    }

    pub fn len(&self) -> usize {
        self.mode.slice_count()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, slice: usize, row: usize, col: usize) -> f32 {
        self.values[(slice * self.size + row) * self.size + col]
    }

    pub fn unravel(&self, index: usize) -> (usize, usize, usize) {
        let plane = self.size * self.size;
        (index / plane, (index % plane) / self.size, index % self.size)
    }

    /// First index of the largest value.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        self.unravel(best)
    }

    /// Checks the shape against `batch` and that every value is finite.
    pub fn validate(&self, batch: &TransformBatch) -> Result<()> {
        let expected = batch.len() * batch.size * batch.size;
        if self.mode != batch.mode || self.size != batch.size || self.values.len() != expected {
            return Err(Error::ValueFunction(format!(
                "value maps ({} {} values, size {}) do not match the {} batch of {} slices at size {}",
                self.mode,
                self.values.len(),
                self.size,
                batch.mode,
                batch.len(),
                batch.size
            )));
        }
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::ValueFunction(format!("value {i} is not finite")));
        }
        Ok(())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.len(), self.size, self.size],
            data: self.values.clone(),
        }
    }

    pub fn from_tensor(mode: Mode, tensor: Tensor) -> Result<Self> {
        match tensor.dims[..] {
            [t, h, w] if t == mode.slice_count() && h == w => Ok(ValueMapBatch {
                mode,
                size: h,
                values: tensor.data,
            }),
            _ => Err(Error::Format(format!(
                "{mode} value maps must be {}xSxS, got {:?}",
                mode.slice_count(),
                tensor.dims
            ))),
        }
    }
}

pub trait ValueFunction: Send {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch>;
    fn name(&self) -> String;
}

/// Fixed quantities the heuristic value functions need to interpret pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VfContext {
    pub pixel_scale: f64,
    pub base_displacement_px: f64,
    pub lift_min_separation: f64,
    pub lift_max_separation: f64,
}

impl VfContext {
    pub fn from_config(config: &crate::BenchConfig) -> Self {
        VfContext {
            pixel_scale: config.scene.workspace_size / crate::render::IMAGE_SIZE as f64,
            base_displacement_px: config.policy.base_displacement_px,
            lift_min_separation: config.primitives.lift_min_separation,
            lift_max_separation: config.primitives.lift_max_separation,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum PixelClass {
    Background,
    Bag,
    Object(u32, u32, u32),
}

fn classify(px: &[f32]) -> PixelClass {
    let rgb = [px[0], px[1], px[2]];
    if rgb == BACKGROUND_RGB {
        PixelClass::Background
    } else if rgb == BAG_RGB {
        PixelClass::Bag
    } else {
        PixelClass::Object(rgb[0].to_bits(), rgb[1].to_bits(), rgb[2].to_bits())
    }
}

/// Scores each object pixel outside the opening by the visible area of its
/// object outside the opening (objects are told apart by color), weighted
/// by how close the slice's place point lands to the opening centroid.
/// Every other pixel scores zero.
#[derive(Clone, Debug)]
pub struct HeuristicRearrangeVf {
    pub ctx: VfContext,
    /// Falloff of the placement weight, in original-image pixels.
    pub place_sigma_px: f64,
}

impl HeuristicRearrangeVf {
    pub fn new(ctx: VfContext) -> Self {
        HeuristicRearrangeVf {
            ctx,
            place_sigma_px: 20.0,
        }
    }

    fn score_slice(&self, slice: &[f32], size: usize, scale: f64, out: &mut [f32]) {
        let px = |r: usize, c: usize| &slice[(r * size + c) * CHANNELS..(r * size + c + 1) * CHANNELS];
        // Neighbouring pixels mostly share a color, so the last class is
        // checked before the map.
        let mut index: HashMap<PixelClass, u32> = HashMap::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut last: Option<(PixelClass, u32)> = None;
        let mut class_of = vec![u32::MAX; size * size];
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for r in 0..size {
            for c in 0..size {
                let p = px(r, c);
                if p[3] > 0.5 {
                    sr += r as f64 + 0.5;
                    sc += c as f64 + 0.5;
                    n += 1;
                } else if let class @ PixelClass::Object(..) = classify(p) {
                    let k = match last {
                        Some((l, k)) if l == class => k,
                        _ => *index.entry(class).or_insert_with(|| {
                            counts.push(0);
                            counts.len() as u32 - 1
                        }),
                    };
                    last = Some((class, k));
                    counts[k as usize] += 1;
                    class_of[r * size + c] = k;
                }
            }
        }
        out.fill(0.0);
        if n == 0 || counts.is_empty() {
            return;
        }
        let centroid = [sr / n as f64, sc / n as f64];
        let area = (size * size) as f64;
        let d = self.ctx.base_displacement_px;
        for r in 0..size {
            for c in 0..size {
                let k = class_of[r * size + c];
                if k == u32::MAX {
                    continue;
                }
                let volume = counts[k as usize] as f64 * scale * scale / area;
                let dr = r as f64 + 0.5 - centroid[0];
                let dc = c as f64 + 0.5 + d - centroid[1];
                let dist = scale * dr.hypot(dc) / self.place_sigma_px;
                out[r * size + c] = (volume * (-dist * dist).exp()) as f32;
            }
        }
    }
}

impl ValueFunction for HeuristicRearrangeVf {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch> {
        let mut maps = ValueMapBatch::zeros(batch.mode, batch.size);
        let plane = batch.size * batch.size;
        for (i, out) in maps.values.chunks_mut(plane).enumerate() {
            self.score_slice(batch.slice(i), batch.size, batch.slices[i].scale, out);
        }
        Ok(maps)
    }

    fn name(&self) -> String {
        "heuristic-rearrange".into()
    }
}

/// Upper bound of [`HeuristicLiftVf`] scores.
pub const HEURISTIC_LIFT_CEILING: f64 = 0.9;

/// Scores the lift line along each slice row: the boundary pixels within
/// two rows of it that are farthest apart give the lift pair, and a
/// feasible pair scores `0.9 * separation / max_separation` on the pixels
/// between its endpoints. Pairs touching an object pixel are infeasible.
#[derive(Clone, Debug)]
pub struct HeuristicLiftVf {
    pub ctx: VfContext,
}

impl HeuristicLiftVf {
    pub fn new(ctx: VfContext) -> Self {
        HeuristicLiftVf { ctx }
    }

    fn score_slice(&self, slice: &[f32], size: usize, out: &mut [f32]) {
        let inside = |r: usize, c: usize| slice[(r * size + c) * CHANNELS + 3] > 0.5;
        let is_object =
            |r: usize, c: usize| matches!(classify(&slice[(r * size + c) * CHANNELS..]), PixelClass::Object(..));
        // Leftmost and rightmost boundary column per row.
        let mut extent: Vec<Option<(usize, usize)>> = vec![None; size];
        for r in 0..size {
            for c in 0..size {
                if !inside(r, c) {
                    continue;
                }
                let edge = r == 0
                    || c == 0
                    || r + 1 == size
                    || c + 1 == size
                    || !inside(r - 1, c)
                    || !inside(r + 1, c)
                    || !inside(r, c - 1)
                    || !inside(r, c + 1);
                if edge {
                    let e = extent[r].get_or_insert((c, c));
                    e.0 = e.0.min(c);
                    e.1 = e.1.max(c);
                }
            }
        }
        out.fill(0.0);
        for r in 0..size {
            let lo = r.saturating_sub(2);
            let hi = (r + 2).min(size - 1);
            // Endpoints: (row, col) with the smallest and largest column.
            let mut left: Option<(usize, usize)> = None;
            let mut right: Option<(usize, usize)> = None;
            for (rr, e) in extent.iter().enumerate().take(hi + 1).skip(lo) {
                if let Some((a, b)) = *e {
                    if left.is_none_or(|l| a < l.1) {
                        left = Some((rr, a));
                    }
                    if right.is_none_or(|l| b > l.1) {
                        right = Some((rr, b));
                    }
                }
            }
            let (Some(l), Some(rt)) = (left, right) else {
                continue;
            };
            if l == rt || is_object(l.0, l.1) || is_object(rt.0, rt.1) {
                continue;
            }
            let sep = (l.0 as f64 - rt.0 as f64).hypot(l.1 as f64 - rt.1 as f64) * self.ctx.pixel_scale;
            if sep < self.ctx.lift_min_separation || sep > self.ctx.lift_max_separation {
                continue;
            }
            let value = (HEURISTIC_LIFT_CEILING * sep / self.ctx.lift_max_separation) as f32;
            out[r * size + l.1..=r * size + rt.1].fill(value);
        }
    }
}

impl ValueFunction for HeuristicLiftVf {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch> {
        let mut maps = ValueMapBatch::zeros(batch.mode, batch.size);
        let plane = batch.size * batch.size;
        for (i, out) in maps.values.chunks_mut(plane).enumerate() {
            self.score_slice(batch.slice(i), batch.size, out);
        }
        Ok(maps)
    }

    fn name(&self) -> String {
        "heuristic-lift".into()
    }
}

/// Independent uniform values in `[0, 1)`, deterministic in the seed and
/// the number of calls made so far.
#[derive(Clone, Debug)]
pub struct RandomVf {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomVf {
    pub fn new(seed: u64) -> Self {
        RandomVf {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ValueFunction for RandomVf {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch> {
        let mut maps = ValueMapBatch::zeros(batch.mode, batch.size);
        for v in &mut maps.values {
            *v = self.rng.random();
        }
        Ok(maps)
    }

    fn name(&self) -> String {
        format!("random:{}", self.seed)
    }
}

#[derive(Clone, Debug)]
pub struct ConstantVf(pub f32);

impl ValueFunction for ConstantVf {
    fn evaluate(&mut self, batch: &TransformBatch) -> Result<ValueMapBatch> {
        let mut maps = ValueMapBatch::zeros(batch.mode, batch.size);
        maps.values.fill(self.0);
        Ok(maps)
    }

    fn name(&self) -> String {
        format!("constant:{}", self.0)
    }
}

/// A value function named on the command line: `heuristic`,
/// `random:<seed>`, `constant:<v>` or `remote:<host:port>`.
#[derive(Clone, Debug, PartialEq)]
pub enum VfSpec {
    Heuristic,
    Random(u64),
    Constant(f32),
    Remote(String),
}

impl FromStr for VfSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown value function {s:?}"));
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        match (kind, arg) {
            ("heuristic", "") => Ok(VfSpec::Heuristic),
            ("random", seed) => seed.parse().map(VfSpec::Random).map_err(|_| bad()),
            ("constant", v) => match v.parse::<f32>() {
                Ok(v) if v.is_finite() => Ok(VfSpec::Constant(v)),
                _ => Err(bad()),
            },
            ("remote", addr) if !addr.is_empty() => Ok(VfSpec::Remote(addr.to_string())),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for VfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VfSpec::Heuristic => write!(f, "heuristic"),
            VfSpec::Random(seed) => write!(f, "random:{seed}"),
            VfSpec::Constant(v) => write!(f, "constant:{v}"),
            VfSpec::Remote(addr) => write!(f, "remote:{addr}"),
        }
    }
}

impl VfSpec {
    /// Instantiates the value function for one role.
    pub fn build(&self, mode: Mode, ctx: VfContext) -> Result<Box<dyn ValueFunction>> {
        Ok(match (self, mode) {
            (VfSpec::Heuristic, Mode::Rearrange) => Box::new(HeuristicRearrangeVf::new(ctx)),
            (VfSpec::Heuristic, Mode::Lift) => Box::new(HeuristicLiftVf::new(ctx)),
            (VfSpec::Random(seed), _) => Box::new(RandomVf::new(*seed)),
            (VfSpec::Constant(v), _) => Box::new(ConstantVf(*v)),
            (VfSpec::Remote(addr), _) => Box::new(crate::protocol::RemoteVf::connect(addr)?),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_strings() {
        assert_eq!("heuristic".parse::<VfSpec>().unwrap(), VfSpec::Heuristic);
        assert_eq!("random:7".parse::<VfSpec>().unwrap(), VfSpec::Random(7));
        assert_eq!("constant:0.5".parse::<VfSpec>().unwrap(), VfSpec::Constant(0.5));
        assert_eq!(
            "remote:127.0.0.1:9000".parse::<VfSpec>().unwrap(),
            VfSpec::Remote("127.0.0.1:9000".into())
        );
        for bad in ["", "heuristic:1", "random:x", "constant:nan", "remote:", "unet"] {
            assert!(bad.parse::<VfSpec>().is_err(), "{bad}");
        }
        for s in ["heuristic", "random:3", "constant:0.25", "remote:localhost:1"] {
            assert_eq!(s.parse::<VfSpec>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn argmax_takes_first_maximum() {
        let mut m = ValueMapBatch::zeros(Mode::Lift, 4);
        assert_eq!(m.argmax(), (0, 0, 0));
        m.values[20] = 1.0;
        m.values[40] = 1.0;
        assert_eq!(m.argmax(), (1, 1, 0));
    }
}
