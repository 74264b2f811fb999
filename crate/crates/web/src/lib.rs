//! Browser demo: builds a seeded scene and draws its top-down view, a
//! perturbed opening at a chosen IoU, and the heuristic lift value map.

use bagbench::mask::{iou, opening_masks, perturb_opening, Mask};
use bagbench::physics::BodyKind;
use bagbench::policy::{best_lift, make_transform_batch, HeuristicLiftVf, Mode, ValueFunction, VfContext};
use bagbench::render::{observe, Camera, Observation, Pixel};
use bagbench::scene::{build_scene, sample_task, Scene};
use bagbench::{BenchConfig, Result};
use wasm_bindgen::prelude::*;

const TRUE_OUTLINE: [u8; 3] = [255, 40, 40];
const PERTURBED_OUTLINE: [u8; 3] = [255, 220, 0];
const LIFT_MARK: [u8; 3] = [40, 255, 255];

/// RGBA image of side `size`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgba {
    pub size: usize,
    pub data: Vec<u8>,
}

impl Rgba {
    fn from_observation(obs: &Observation) -> Self {
        let mut data = Vec::with_capacity(obs.size * obs.size * 4);
        for rgb in &obs.color {
            data.extend(rgb.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
            data.push(255);
        }
        Rgba { size: obs.size, data }
    }

    fn put(&mut self, r: i64, c: i64, color: [u8; 3]) {
        let n = self.size as i64;
        if (0..n).contains(&r) && (0..n).contains(&c) {
            let k = (r * n + c) as usize * 4;
            self.data[k..k + 3].copy_from_slice(&color);
        }
    }

    fn outline(&mut self, mask: &Mask, color: [u8; 3]) {
        let (h, w) = (mask.height, mask.width);
        for (r, c) in mask.pixels() {
            let edge = r == 0
                || c == 0
                || r + 1 == h
                || c + 1 == w
                || !mask.get(r - 1, c)
                || !mask.get(r + 1, c)
                || !mask.get(r, c - 1)
                || !mask.get(r, c + 1);
            if edge {
                self.put(r as i64, c as i64, color);
            }
        }
    }

    fn cross(&mut self, p: Pixel, color: [u8; 3]) {
        for d in -4..=4 {
            self.put(p.0 as i64 + d, p.1 as i64, color);
            self.put(p.0 as i64, p.1 as i64 + d, color);
        }
    }
}

/// Scene state shared by the demo operations; usable without a browser.
pub struct DemoScene {
    scene: Scene,
    camera: Camera,
    config: BenchConfig,
    filled: Mask,
    boundary: Mask,
}

impl DemoScene {
    pub fn build(seed: u64, n_rigid: usize, n_cloth: usize) -> Result<Self> {
        let config = BenchConfig::default();
        let task = sample_task(seed, n_rigid, n_cloth)?;
        let scene = build_scene(&task, &config)?;
        let camera = Camera::new(config.scene.workspace_size);
        let (filled, boundary) = opening_masks(&scene.bag.rim_polygon(&scene.world), &camera)?;
        Ok(DemoScene {
            scene,
            camera,
            config,
            filled,
            boundary,
        })
    }

    fn observation(&self) -> Observation {
        observe(&self.scene.world, &self.camera, &self.filled)
    }

    /// Top-down view with the opening outlined.
    pub fn view(&self) -> Rgba {
        let mut img = Rgba::from_observation(&self.observation());
        img.outline(&self.filled, TRUE_OUTLINE);
        img
    }

    /// True opening and a perturbed one with IoU close to `target`; returns
    /// the image and the IoU reached.
    pub fn perturbed_view(&self, target: f64) -> Result<(Rgba, f64)> {
        let rim = self.scene.bag.rim_polygon(&self.scene.world);
        let p = perturb_opening(&rim, &self.camera, target, self.scene.task.seed)?;
        let mut img = Rgba::from_observation(&self.observation());
        img.outline(&self.filled, TRUE_OUTLINE);
        img.outline(&p.filled, PERTURBED_OUTLINE);
        Ok((img, iou(&self.filled, &p.filled)?))
    }

    /// Heuristic lift values of the unrotated slice as a heat overlay,
    /// with the best feasible lift pair over all rotations marked.
    pub fn lift_value_view(&self) -> Result<Rgba> {
        let obs = self.observation();
        let batch = make_transform_batch(&obs, Mode::Lift);
        let mut vf = HeuristicLiftVf::new(VfContext::from_config(&self.config));
        let maps = vf.evaluate(&batch)?;
        let identity = Mode::Lift.identity_slice();
        let peak = maps.values.iter().copied().fold(0.0f32, f32::max).max(1e-6);
        let mut img = Rgba::from_observation(&obs);
        for r in 0..obs.size {
            for c in 0..obs.size {
                let v = maps.get(identity, r, c) / peak;
                if v > 0.0 {
                    let heat = [(255.0 * v) as u8, (80.0 * (1.0 - v)) as u8, (255.0 * (1.0 - v)) as u8];
                    img.put(r as i64, c as i64, heat);
                }
            }
        }
        img.outline(&self.filled, TRUE_OUTLINE);
        let objects = Mask::from_fn(obs.size, obs.size, |r, c| {
            obs.label(r, c)
                .is_some_and(|b| self.scene.world.body(b).kind != BodyKind::Bag)
        });
        let limits = bagbench::policy::FusedParams::from_config(&self.config).limits;
        if let Some(best) = best_lift(&batch, &maps, &self.boundary, &objects, &limits) {
            img.cross(best.action.l1, LIFT_MARK);
            img.cross(best.action.l2, LIFT_MARK);
        }
        Ok(img)
    }
}

fn js_error(e: bagbench::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Handle exported to JavaScript.
#[wasm_bindgen]
pub struct Demo {
    inner: DemoScene,
    last_iou: f64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, n_rigid: usize, n_cloth: usize) -> std::result::Result<Demo, JsError> {
        let inner = DemoScene::build(u64::from(seed), n_rigid, n_cloth).map_err(js_error)?;
        Ok(Demo { inner, last_iou: 1.0 })
    }

    pub fn size(&self) -> usize {
        self.inner.camera.size
    }

    pub fn view(&self) -> Vec<u8> {
        self.inner.view().data
    }

    #[wasm_bindgen(js_name = perturbedView)]
    pub fn perturbed_view(&mut self, target_iou: f64) -> std::result::Result<Vec<u8>, JsError> {
        let (img, reached) = self.inner.perturbed_view(target_iou).map_err(js_error)?;
        self.last_iou = reached;
        Ok(img.data)
    }

    #[wasm_bindgen(getter, js_name = lastIou)]
    pub fn last_iou(&self) -> f64 {
        self.last_iou
    }

    #[wasm_bindgen(js_name = liftValueView)]
    pub fn lift_value_view(&self) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.lift_value_view().map(|img| img.data).map_err(js_error)
    }
}
