//! Synthetic salient-instance scenes: saturated shapes on a textured grey
//! background, with exact instance, saliency and contour ground truth.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image_io::{save_image, save_labels, save_mask};
use super::manifest::{Manifest, Record, Split};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask};
use crate::selfcheck::seeded;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Ellipse,
    Rectangle,
    Blob,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Instance count range for multi-instance scenes.
    pub min_instances: usize,
    pub max_instances: usize,
    pub shapes: Vec<ShapeKind>,
    /// Probability that each instance after the second overlaps an earlier one
    /// in an occluded scene (the second always does).
    pub occlusion_probability: f64,
    pub texture_seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            height: 64,
            width: 64,
            min_instances: 2,
            max_instances: 4,
            shapes: vec![ShapeKind::Ellipse, ShapeKind::Rectangle, ShapeKind::Blob],
            occlusion_probability: 0.5,
            texture_seed: 7,
        }
    }
}

/// How instances are arranged in a scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// At least two instances, at least one pair overlapping.
    Occluded(usize),
    /// `k` pairwise separated instances (`k` may be 0 or 1).
    Disjoint(usize),
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub image: Tensor<f32>,
    pub instances: LabelMap,
    pub layout: Layout,
}

impl Scene {
    pub fn instance_count(&self) -> usize {
        self.instances.data().iter().copied().max().unwrap_or(0) as usize
    }

    pub fn saliency(&self) -> Mask {
        self.instances.map(|&l| l > 0)
    }

    pub fn instance_mask(&self, id: u16) -> Mask {
        self.instances.map(|&l| l == id)
    }

    pub fn contours(&self) -> Mask {
        instance_boundaries(&self.instances)
    }
}

/// Instance pixels with a 4-neighbour carrying a different label.
pub fn instance_boundaries(labels: &LabelMap) -> Mask {
    let (h, w) = labels.dims();
    Mask::from_fn(h, w, |y, x| {
        let l = labels.at(y, x);
        if l == 0 {
            return false;
        }
        let differs = |yy: usize, xx: usize| labels.at(yy, xx) != l;
        (y > 0 && differs(y - 1, x))
            || (y + 1 < h && differs(y + 1, x))
            || (x > 0 && differs(y, x - 1))
            || (x + 1 < w && differs(y, x + 1))
    })
}

#[derive(Clone, Debug)]
struct Shape2 {
    kind: ShapeKind,
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    angle: f64,
    harmonics: [(f64, f64); 3],
}

impl Shape2 {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = (c * dx + s * dy) / self.rx;
        let v = (-s * dx + c * dy) / self.ry;
        match self.kind {
            ShapeKind::Ellipse => u * u + v * v <= 1.0,
            ShapeKind::Rectangle => u.abs() <= 1.0 && v.abs() <= 1.0,
            ShapeKind::Blob => {
                let t = v.atan2(u);
                let mut r = 1.0;
                for (k, &(a, p)) in self.harmonics.iter().enumerate() {
                    r += a * ((k as f64 + 2.0) * t + p).cos();
                }
                (u * u + v * v).sqrt() <= r
            }
        }
    }

    fn radius(&self) -> f64 {
        let r = self.rx.max(self.ry);
        if self.kind == ShapeKind::Rectangle {
            r * std::f64::consts::SQRT_2
        } else {
            r * 1.35
        }
    }

    fn mask(&self, h: usize, w: usize) -> Mask {
        Mask::from_fn(h, w, |y, x| self.contains(y as f64 + 0.5, x as f64 + 0.5))
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_shape(spec: &SceneSpec, rng: &mut ChaCha8Rng, scale: f64) -> Shape2 {
    let m = spec.height.min(spec.width) as f64;
    let kind = spec.shapes[rng.gen_range(0..spec.shapes.len())];
    let r = m * rng.gen_range(0.12..0.24) * scale;
    let aspect = rng.gen_range(0.65..1.0);
    let (ry, rx) = if rng.gen_bool(0.5) { (r, r * aspect) } else { (r * aspect, r) };
    let harmonics = [0; 3].map(|_| (rng.gen_range(0.0..0.12), rng.gen_range(0.0..std::f64::consts::TAU)));
    Shape2 {
        kind,
        cy: 0.0,
        cx: 0.0,
        ry,
        rx,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
        harmonics,
    }
}

fn place_inside(spec: &SceneSpec, s: &mut Shape2, rng: &mut ChaCha8Rng) -> bool {
    let r = s.radius();
    let (h, w) = (spec.height as f64, spec.width as f64);
    if 2.0 * r + 2.0 >= h || 2.0 * r + 2.0 >= w {
        return false;
    }
    s.cy = rng.gen_range(r + 1.0..h - r - 1.0);
    s.cx = rng.gen_range(r + 1.0..w - r - 1.0);
    true
}

fn in_bounds(spec: &SceneSpec, s: &Shape2) -> bool {
    let r = s.radius();
    s.cy - r >= 1.0 && s.cx - r >= 1.0 && s.cy + r <= spec.height as f64 - 1.0 && s.cx + r <= spec.width as f64 - 1.0
}

fn is_connected(mask: &Mask) -> bool {
    let (h, w) = mask.dims();
    let Some(start) = mask.data().iter().position(|&b| b) else {
        return false;
    };
    let mut seen = vec![false; h * w];
    let mut stack = vec![start];
    seen[start] = true;
    let mut count = 0;
    while let Some(i) = stack.pop() {
        count += 1;
        let (y, x) = (i / w, i % w);
        let mut visit = |j: usize| {
            if mask.data()[j] && !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        };
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
    }
    count == mask.count()
}

fn dilate(mask: &Mask, r: usize) -> Mask {
    let (h, w) = mask.dims();
    Mask::from_fn(h, w, |y, x| {
        let (y0, x0) = (y.saturating_sub(r), x.saturating_sub(r));
        (y0..(y + r + 1).min(h)).any(|yy| (x0..(x + r + 1).min(w)).any(|xx| mask.at(yy, xx)))
    })
}

fn layout_shapes(spec: &SceneSpec, layout: Layout, rng: &mut ChaCha8Rng) -> Option<Vec<Shape2>> {
    let (h, w) = (spec.height, spec.width);
    match layout {
        Layout::Disjoint(k) => {
            let scale = if k <= 2 { 1.0 } else { 0.8 };
            let mut shapes: Vec<Shape2> = Vec::new();
            let mut occupied = Mask::new(h, w, false);
            for _ in 0..k {
                let mut placed = false;
                for _ in 0..200 {
                    let mut s = random_shape(spec, rng, scale);
                    if !place_inside(spec, &mut s, rng) {
                        continue;
                    }
                    let m = s.mask(h, w);
                    if m.count() < 12 || m.intersection_count(&occupied) > 0 {
                        continue;
                    }
                    occupied = occupied.or(&dilate(&m, 3));
                    shapes.push(s);
                    placed = true;
                    break;
                }
                if !placed {
                    return None;
                }
            }
            Some(shapes)
        }
        Layout::Occluded(k) => {
            let mut shapes: Vec<Shape2> = Vec::new();
            for i in 0..k {
                let overlap = i == 1 || (i > 1 && rng.gen_bool(spec.occlusion_probability));
                let mut placed = false;
                for _ in 0..200 {
                    let mut s = random_shape(spec, rng, 1.0);
                    if i == 0 || !overlap {
                        if !place_inside(spec, &mut s, rng) {
                            continue;
                        }
                    } else {
                        let o = &shapes[rng.gen_range(0..shapes.len())];
                        let d = (o.rx.min(o.ry) + s.rx.min(s.ry)) * rng.gen_range(0.55..0.95);
                        let t = rng.gen_range(0.0..std::f64::consts::TAU);
                        s.cy = o.cy + d * t.sin();
                        s.cx = o.cx + d * t.cos();
                        if !in_bounds(spec, &s) {
                            continue;
                        }
                    }
                    let mut trial = shapes.clone();
                    trial.push(s);
                    if acceptable(spec, &trial, i > 0 && !overlap) {
                        shapes = trial;
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    return None;
                }
            }
            Some(shapes)
        }
    }
}

/// Every visible instance is connected and keeps at least 35% of its area;
/// with `last_separate` the newest shape must not touch the others.
fn acceptable(spec: &SceneSpec, shapes: &[Shape2], last_separate: bool) -> bool {
    let (h, w) = (spec.height, spec.width);
    let labels = paint(shapes, h, w);
    let masks: Vec<Mask> = shapes.iter().map(|s| s.mask(h, w)).collect();
    if last_separate {
        let last = dilate(&masks[masks.len() - 1], 3);
        if masks[..masks.len() - 1].iter().any(|m| m.intersection_count(&last) > 0) {
            return false;
        }
    }
    masks.iter().enumerate().all(|(i, full)| {
        let visible = labels.map(|&l| l as usize == i + 1);
        let n = visible.count();
        n >= 12 && n as f64 >= 0.35 * full.count() as f64 && is_connected(&visible)
    })
}

fn paint(shapes: &[Shape2], h: usize, w: usize) -> LabelMap {
    let mut labels = LabelMap::new(h, w, 0);
    for (i, s) in shapes.iter().enumerate() {
        let m = s.mask(h, w);
        for (l, &b) in labels.data_mut().iter_mut().zip(m.data()) {
            if b {
                *l = i as u16 + 1;
            }
        }
    }
    labels
}

fn background(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w) = (spec.height, spec.width);
    let base = rng.gen_range(0.3..0.6);
    let tint = [0; 3].map(|_| rng.gen_range(-0.04..0.04));
    let (gy, gx) = (rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15));
    let g = 6;
    let coarse: Vec<f64> = (0..(g + 1) * (g + 1)).map(|_| rng.gen_range(-0.08..0.08)).collect();
    let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64 * g as f64;
            let fx = x as f64 / w as f64 * g as f64;
            let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - iy as f64, fx - ix as f64);
            let c = |a: usize, b: usize| coarse[a.min(g) * (g + 1) + b.min(g)];
            let noise = (1.0 - ty) * ((1.0 - tx) * c(iy, ix) + tx * c(iy, ix + 1))
                + ty * ((1.0 - tx) * c(iy + 1, ix) + tx * c(iy + 1, ix + 1));
            let v = base + gy * (y as f64 / h as f64 - 0.5) + gx * (x as f64 / w as f64 - 0.5) + noise;
            for ch in 0..3 {
                let px = v + tint[ch] + rng.gen_range(-0.02..0.02);
                t.set(0, ch, y, x, px.clamp(0.0, 1.0) as f32);
            }
        }
    }
    t
}

fn distinct_hues(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let offset = rng.gen_range(0.0..1.0);
    let mut slots: Vec<usize> = (0..6).collect();
    for i in (1..slots.len()).rev() {
        slots.swap(i, rng.gen_range(0..=i));
    }
    (0..n)
        .map(|i| offset + slots[i % 6] as f64 / 6.0 + rng.gen_range(-0.03..0.03))
        .collect()
}

/// Renders one scene. Fails only if no valid arrangement is found, which
/// happens when the image is too small for the requested instance count.
pub fn render_scene(spec: &SceneSpec, layout: Layout, rng: &mut ChaCha8Rng, texture: &mut ChaCha8Rng) -> Result<Scene> {
    if spec.shapes.is_empty() {
        return Err(Error::invalid("render_scene", "shape vocabulary is empty"));
    }
    let (h, w) = (spec.height, spec.width);
    let shapes = (0..50)
        .find_map(|_| layout_shapes(spec, layout, rng))
        .ok_or_else(|| Error::invalid("render_scene", format!("cannot arrange {layout:?} in {h}x{w}")))?;
    let labels = paint(&shapes, h, w);
    let mut image = background(spec, texture);
    let hues = distinct_hues(shapes.len(), rng);
    for (i, hue) in hues.iter().enumerate() {
        let rgb = hsv_to_rgb(*hue, rng.gen_range(0.75..1.0), rng.gen_range(0.75..1.0));
        for y in 0..h {
            for x in 0..w {
                if labels.at(y, x) as usize == i + 1 {
                    for (c, v) in rgb.iter().enumerate() {
                        let px = v + rng.gen_range(-0.03..0.03);
                        image.set(0, c, y, x, px.clamp(0.0, 1.0) as f32);
                    }
                }
            }
        }
    }
    Ok(Scene {
        image,
        instances: labels,
        layout,
    })
}

/// Layout for the `i`-th image: two of every three images are occluded
/// multi-instance scenes; the third has 0 or 1 instance or disjoint ones.
pub fn layout_for(spec: &SceneSpec, i: usize, rng: &mut ChaCha8Rng) -> Layout {
    let lo = spec.min_instances.max(2);
    let hi = spec.max_instances.max(lo);
    if i % 3 != 2 {
        Layout::Occluded(rng.gen_range(lo..=hi))
    } else {
        match rng.gen_range(0..3) {
            0 => Layout::Disjoint(0),
            1 => Layout::Disjoint(1),
            _ => Layout::Disjoint(rng.gen_range(lo..=hi)),
        }
    }
}

/// The `i`-th scene of the dataset with the given seed.
pub fn synthetic_scene(spec: &SceneSpec, seed: u64, i: usize) -> Result<Scene> {
    let mut rng = seeded(seed);
    rng.set_stream(i as u64);
    let mut texture = seeded(spec.texture_seed ^ seed.rotate_left(17));
    texture.set_stream(i as u64);
    let layout = layout_for(spec, i, &mut rng);
    render_scene(spec, layout, &mut rng, &mut texture)
}

/// Writes `n` scenes under `out_dir` with file names `{prefix}{i}` and
/// returns a manifest whose paths are relative to `out_dir`.
pub fn generate_synthetic(
    spec: &SceneSpec,
    n: usize,
    seed: u64,
    split: Split,
    out_dir: impl AsRef<Path>,
    prefix: &str,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::invalid("generate_synthetic", "n must be at least 1"));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let scene = synthetic_scene(spec, seed, i)?;
        let stem = format!("{prefix}{i:04}");
        let r = Record {
            image: format!("{stem}.png").into(),
            saliency: format!("{stem}_sal.png").into(),
            contour: Some(format!("{stem}_con.png").into()),
            instances: Some(format!("{stem}_ins.png").into()),
            split,
        };
        save_image(out.join(&r.image), &scene.image)?;
        save_mask(out.join(&r.saliency), &scene.saliency())?;
        save_mask(out.join(r.contour.as_ref().unwrap()), &scene.contours())?;
        save_labels(out.join(r.instances.as_ref().unwrap()), &scene.instances)?;
        records.push(r);
    }
    Ok(Manifest {
        root: out.to_path_buf(),
        records,
    })
}
