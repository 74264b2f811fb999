//! PNG output of stored observations with the opening outline and the
//! step's action drawn on top.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use bagbench::bench::{StepRecord, OBSERVATION_CHANNELS};
use bagbench::render::Pixel;
use bagbench::tensor::Tensor;
use bagbench::{Error, Result};

const OUTLINE: [u8; 3] = [255, 40, 40];
const PICK: [u8; 3] = [40, 255, 40];
const PLACE: [u8; 3] = [60, 140, 255];
const LIFT: [u8; 3] = [255, 230, 0];

struct Canvas {
    size: usize,
    rgb: Vec<u8>,
}

impl Canvas {
    fn from_observation(obs: &Tensor) -> Result<Self> {
        let [h, w, c] = obs.dims[..] else {
            return Err(Error::InvalidArgument(format!("expected a rank-3 observation, got {:?}", obs.dims)));
        };
        if h != w || c != OBSERVATION_CHANNELS {
            return Err(Error::InvalidArgument(format!("unexpected observation shape {:?}", obs.dims)));
        }
        let mut rgb = Vec::with_capacity(h * w * 3);
        for px in obs.data.chunks_exact(c) {
            rgb.extend(px[..3].iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        let mut canvas = Canvas { size: h, rgb };
        let inside = |r: usize, col: usize| obs.data[(r * w + col) * c + 4] > 0.5;
        for r in 0..h {
            for col in 0..w {
                let edge = inside(r, col)
                    && (r == 0 || col == 0 || r + 1 == h || col + 1 == w
                        || !inside(r - 1, col)
                        || !inside(r + 1, col)
                        || !inside(r, col - 1)
                        || !inside(r, col + 1));
                if edge {
                    canvas.put(r as i64, col as i64, OUTLINE);
                }
            }
        }
        Ok(canvas)
    }

    fn put(&mut self, r: i64, c: i64, color: [u8; 3]) {
        let n = self.size as i64;
        if (0..n).contains(&r) && (0..n).contains(&c) {
            let k = (r * n + c) as usize * 3;
            self.rgb[k..k + 3].copy_from_slice(&color);
        }
    }

    fn cross(&mut self, p: Pixel, color: [u8; 3]) {
        let (r, c) = (p.0 as i64, p.1 as i64);
        for d in -3..=3 {
            self.put(r + d, c, color);
            self.put(r, c + d, color);
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.size as u32, self.size as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let fail = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        let mut writer = encoder.write_header().map_err(fail)?;
        writer.write_image_data(&self.rgb).map_err(fail)
    }
}

pub fn write_observation(path: &Path, obs: &Tensor) -> Result<()> {
    Canvas::from_observation(obs)?.save(path)
}

pub fn write_step(path: &Path, obs: &Tensor, step: &StepRecord) -> Result<()> {
    let mut canvas = Canvas::from_observation(obs)?;
    if let Some(a) = &step.rearrange {
        canvas.cross(a.pick_pixel, PICK);
        canvas.cross(a.place_pixel, PLACE);
    }
    if let Some(a) = &step.lift {
        canvas.cross(a.l1, LIFT);
        canvas.cross(a.l2, LIFT);
    }
    canvas.save(path)
}
