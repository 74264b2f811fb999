//! Rotated and scaled copies of an observation, one per action slice.
//!
//! A slice with rotation θ and scale s is the observation rotated by -θ about
//! the image center and shrunk by 1/s. In that frame every rearrange action
//! places along +col at a fixed distance, and every lift line runs along a
//! row.

use serde::{Deserialize, Serialize};

use crate::color::BACKGROUND_RGB;
use crate::error::{Error, Result};
use crate::render::{Observation, Pixel};
use crate::tensor::Tensor;

pub const ROTATIONS: usize = 12;
pub const REARRANGE_SCALES: [f64; 8] = [1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75];
/// RGB plus the filled opening mask.
pub const CHANNELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rearrange,
    Lift,
}

impl Mode {
    pub fn slice_count(self) -> usize {
        match self {
            Mode::Rearrange => ROTATIONS * REARRANGE_SCALES.len(),
            Mode::Lift => ROTATIONS,
        }
    }

    /// Slice parameters in batch order: rotation-major, then scale.
    pub fn slices(self) -> Vec<SliceParams> {
        match self {
            Mode::Rearrange => (0..ROTATIONS)
                .flat_map(|i| {
                    let theta = (-180.0 + 30.0 * i as f64).to_radians();
                    REARRANGE_SCALES.iter().map(move |&scale| SliceParams { theta, scale })
                })
                .collect(),
            Mode::Lift => (0..ROTATIONS)
                .map(|i| SliceParams {
                    theta: (-90.0 + 15.0 * i as f64).to_radians(),
                    scale: 1.0,
                })
                .collect(),
        }
    }

    /// Index of the unrotated, unscaled slice.
    pub fn identity_slice(self) -> usize {
        match self {
            Mode::Rearrange => (ROTATIONS / 2) * REARRANGE_SCALES.len(),
            Mode::Lift => ROTATIONS / 2,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Rearrange => "rearrange",
            Mode::Lift => "lift",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rearrange" => Ok(Mode::Rearrange),
            "lift" => Ok(Mode::Lift),
            other => Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceParams {
    /// Radians, world frame (0 along +x).
    pub theta: f64,
    pub scale: f64,
}

impl SliceParams {
    /// Continuous original-image coordinates `[row, col]` of a point given
    /// in continuous slice coordinates.
    pub fn to_original(&self, size: usize, point: [f64; 2]) -> [f64; 2] {
        self.original_with(self.theta.sin_cos(), size, point)
    }

    fn original_with(&self, (sin, cos): (f64, f64), size: usize, point: [f64; 2]) -> [f64; 2] {
        let c = size as f64 / 2.0;
        let (x, y) = (point[1] - c, c - point[0]);
        let (ox, oy) = (self.scale * (x * cos - y * sin), self.scale * (x * sin + y * cos));
        [c - oy, ox + c]
    }

    /// Inverse of [`SliceParams::to_original`].
    pub fn to_slice(&self, size: usize, point: [f64; 2]) -> [f64; 2] {
        let c = size as f64 / 2.0;
        let (x, y) = (point[1] - c, c - point[0]);
        let (sin, cos) = self.theta.sin_cos();
        let (sx, sy) = ((x * cos + y * sin) / self.scale, (-x * sin + y * cos) / self.scale);
        [c - sy, sx + c]
    }

    /// Original pixel under the center of slice pixel `(row, col)`, if it is
    /// inside the image.
    pub fn source_pixel(&self, size: usize, row: usize, col: usize) -> Option<Pixel> {
        self.source_pixel_with(self.theta.sin_cos(), size, row, col)
    }

    fn source_pixel_with(&self, sin_cos: (f64, f64), size: usize, row: usize, col: usize) -> Option<Pixel> {
        let [r, c] = self.original_with(sin_cos, size, [row as f64 + 0.5, col as f64 + 0.5]);
        let n = size as f64;
        (r >= 0.0 && c >= 0.0 && r < n && c < n).then_some((r as usize, c as usize))
    }
}

/// `t` transformed observations, `t x H x W x 4`, channels-last.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformBatch {
    pub mode: Mode,
    pub size: usize,
    pub slices: Vec<SliceParams>,
    pub data: Vec<f32>,
}

impl TransformBatch {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slice_len(&self) -> usize {
        self.size * self.size * CHANNELS
    }

    pub fn slice(&self, i: usize) -> &[f32] {
        let n = self.slice_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.len(), self.size, self.size, CHANNELS],
            data: self.data.clone(),
        }
    }

    pub fn from_tensor(mode: Mode, tensor: Tensor) -> Result<Self> {
        let t = mode.slice_count();
        match tensor.dims[..] {
            [n, h, w, CHANNELS] if n == t && h == w => Ok(TransformBatch {
                mode,
                size: h,
                slices: mode.slices(),
                data: tensor.data,
            }),
            _ => Err(Error::Format(format!(
                "{mode} batch must be {t}xSxSx{CHANNELS}, got {:?}",
                tensor.dims
            ))),
        }
    }
}

/// The observation's RGB and opening mask as a `H x W x 4` image.
pub fn observation_channels(obs: &Observation) -> Vec<f32> {
    let mask = obs.filled_opening_mask.as_slice();
    let mut out = Vec::with_capacity(obs.color.len() * CHANNELS);
    for (rgb, &m) in obs.color.iter().zip(mask) {
        out.extend_from_slice(rgb);
        out.push(if m { 1.0 } else { 0.0 });
    }
    out
}

fn fill_slice(out: &mut [f32], source: &[f32], size: usize, params: &SliceParams) {
    let background = [BACKGROUND_RGB[0], BACKGROUND_RGB[1], BACKGROUND_RGB[2], 0.0];
    let sin_cos = params.theta.sin_cos();
    for row in 0..size {
        for col in 0..size {
            let dst = (row * size + col) * CHANNELS;
            let value = match params.source_pixel_with(sin_cos, size, row, col) {
                Some((r, c)) => {
                    let src = (r * size + c) * CHANNELS;
                    [source[src], source[src + 1], source[src + 2], source[src + 3]]
                }
                None => background,
            };
            out[dst..dst + CHANNELS].copy_from_slice(&value);
        }
    }
}

/// Nearest-neighbour resampling of the observation for every slice of
/// `mode`. Pixels that fall outside the source image get the background.
pub fn make_transform_batch(obs: &Observation, mode: Mode) -> TransformBatch {
    let size = obs.size;
    let source = observation_channels(obs);
    let slices = mode.slices();
    let n = size * size * CHANNELS;
    let mut data = vec![0.0f32; n * slices.len()];

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(n)
            .zip(slices.par_iter())
            .for_each(|(out, params)| fill_slice(out, &source, size, params));
    }
    #[cfg(not(feature = "parallel"))]
    for (out, params) in data.chunks_mut(n).zip(&slices) {
        fill_slice(out, &source, size, params);
    }

    TransformBatch {
        mode,
        size,
        slices,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let r = Mode::Rearrange.slices();
        assert_eq!(r.len(), 96);
        assert_eq!(r[0].theta, -std::f64::consts::PI);
        assert_eq!(r[7].scale, 2.75);
        let id = r[Mode::Rearrange.identity_slice()];
        assert_eq!((id.theta, id.scale), (0.0, 1.0));
        let l = Mode::Lift.slices();
        assert_eq!(l.len(), 12);
        assert_eq!(l[0].theta, -std::f64::consts::FRAC_PI_2);
        assert_eq!(l[Mode::Lift.identity_slice()].theta, 0.0);
    }

    #[test]
    fn slice_mapping_inverts() {
        for p in Mode::Rearrange.slices() {
            let q = [40.3, 150.9];
            let back = p.to_slice(224, p.to_original(224, q));
            assert!((back[0] - q[0]).abs() < 1e-9 && (back[1] - q[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn quarter_turn_moves_east_to_north() {
        // A world-frame rotation of +90 degrees maps the slice's +col axis
        // (east) to the original's -row axis (north).
        let p = SliceParams {
            theta: std::f64::consts::FRAC_PI_2,
            scale: 1.0,
        };
        let o = p.to_original(224, [112.0, 122.0]);
        assert!((o[0] - 102.0).abs() < 1e-9 && (o[1] - 112.0).abs() < 1e-9);
    }
}
