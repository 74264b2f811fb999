use serde::{Deserialize, Serialize};

/// HSV color with every component in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    pub const fn new(h: f64, s: f64, v: f64) -> Self {
        Hsv { h, s, v }
    }

    pub fn to_rgb(self) -> [f32; 3] {
        let h = self.h.rem_euclid(1.0) * 6.0;
        let sector = h.floor();
        let f = h - sector;
        let v = self.v;
        let p = v * (1.0 - self.s);
        let q = v * (1.0 - self.s * f);
        let t = v * (1.0 - self.s * (1.0 - f));
        let (r, g, b) = match sector as i32 {
            0 => (v, t, p),
            1 => (q, v, p),
            2 => (p, v, t),
            3 => (p, q, v),
            4 => (t, p, v),
            _ => (v, p, q),
        };
        [r as f32, g as f32, b as f32]
    }
}

/// Flat color of the empty workspace surface.
pub const BACKGROUND_RGB: [f32; 3] = [0.0, 0.0, 0.0];

/// The bag is always rendered in this color so that policies can tell it
/// apart from objects, whose colors are sampled.
pub const BAG_RGB: [f32; 3] = [0.35, 0.35, 0.35];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(Hsv::new(0.0, 1.0, 1.0).to_rgb(), [1.0, 0.0, 0.0]);
        assert_eq!(Hsv::new(1.0 / 3.0, 1.0, 1.0).to_rgb(), [0.0, 1.0, 0.0]);
        assert_eq!(Hsv::new(2.0 / 3.0, 1.0, 1.0).to_rgb(), [0.0, 0.0, 1.0]);
        assert_eq!(Hsv::new(0.3, 0.0, 0.5).to_rgb(), [0.5, 0.5, 0.5]);
    }
}
