use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{NetworkConfig, RefinementMode, Task};
use crate::dataio::pad::pad_to_multiple;
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Graph, ParamGroup, ParamId, ParamStore, PoolSpec, Scalar, Shape, Tensor, Var};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub spec: ConvSpec,
}

impl ConvLayer {
    fn apply<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        g.conv2d(x, w, Some(b), self.spec)
    }

    fn apply_relu<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let y = self.apply(g, store, x)?;
        g.relu(y)
    }
}

struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    /// He-uniform (fan-in) weights, zero bias.
    fn conv(&mut self, name: &str, group: ParamGroup, out_c: usize, in_c: usize, k: usize, spec: ConvSpec) -> ConvLayer {
        let fan_in = (in_c * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let shape = Shape::new(out_c, in_c, k, k);
        let data = (0..shape.len())
            .map(|_| T::of(self.rng.gen_range(-bound..bound)))
            .collect();
        let w = self
            .store
            .add(format!("{name}.weight"), group, Tensor::from_vec(shape, data).expect("sized"));
        let b = self
            .store
            .add(format!("{name}.bias"), group, Tensor::zeros(Shape::new(1, out_c, 1, 1)));
        ConvLayer { w, b, spec }
    }
}

/// Multiscale refinement network: one shared-weight refined VGG stream per
/// input scale, an attention module producing per-pixel scale weights, and a
/// weighted fusion of the per-scale two-channel probability maps.
#[derive(Clone, Debug)]
pub struct MsrNet<T> {
    config: NetworkConfig,
    task: Task,
    store: ParamStore<T>,
    backbone: Vec<Vec<ConvLayer>>,
    fc: Vec<ConvLayer>,
    laterals: Vec<ConvLayer>,
    refine: Vec<ConvLayer>,
    head: ConvLayer,
    attention: Option<[ConvLayer; 2]>,
}

/// Bottom-up outputs: `top` is F_td^1 (1/8 resolution) and `laterals[i]` is
/// the lateral feature attached to pool `i`.
pub struct BackboneOutput {
    pub top: Var,
    pub laterals: Vec<Var>,
}

pub struct StreamOutput {
    /// Two-channel probability map at the stream's resolution.
    pub probs: Var,
    /// Output of the last refinement module (input to the prediction head).
    pub penultimate: Var,
}

/// Graph handles of a full forward pass; everything is at input resolution.
pub struct MsrOutput {
    pub scale_maps: Vec<Var>,
    pub weights: Var,
    pub fused: Var,
}

/// Materialised forward pass.
#[derive(Clone, Debug)]
pub struct Prediction<T> {
    pub scale_maps: Vec<Tensor<T>>,
    pub weights: Tensor<T>,
    pub fused: Tensor<T>,
}

impl<T: Scalar> Prediction<T> {
    /// Foreground channel (salient / contour) of the fused map.
    pub fn foreground(&self) -> Tensor<T> {
        self.fused.channel(1)
    }
}

impl<T: Scalar> MsrNet<T> {
    pub fn new(config: NetworkConfig, task: Task, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut b = Builder {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let bb = &config.backbone;
        let atrous = bb.atrous_rate_after_penultimate_pool;
        let mut in_c = 3;
        let mut backbone = Vec::new();
        for (si, stage) in bb.stages.iter().enumerate() {
            let out_c = config.ch(stage.channels);
            // convolutions after the penultimate (4th) pool are atrous
            let dil = if si == 4 { atrous } else { 1 };
            let mut layers = Vec::new();
            for ci in 0..stage.num_convs {
                layers.push(b.conv(
                    &format!("conv{}_{}", si + 1, ci + 1),
                    ParamGroup::Backbone,
                    out_c,
                    in_c,
                    3,
                    ConvSpec::same(3, dil),
                ));
                in_c = out_c;
            }
            backbone.push(layers);
        }
        let fc_c = config.ch(bb.fc_channels);
        let fc = vec![
            b.conv("fc6", ParamGroup::Backbone, fc_c, in_c, 1, ConvSpec::default()),
            b.conv("fc7", ParamGroup::Backbone, fc_c, fc_c, 1, ConvSpec::default()),
        ];
        let lat_c = config.ch(config.lateral_channels);
        let laterals = bb
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| {
                b.conv(
                    &format!("lateral{}", i + 1),
                    ParamGroup::NewLayer,
                    lat_c,
                    config.ch(s.channels),
                    3,
                    ConvSpec::same(3, 1),
                )
            })
            .collect();
        let ref_c = config.ch(config.refine_channels);
        let mut td_c = fc_c;
        let mut refine = Vec::new();
        for i in 0..5 {
            refine.push(b.conv(
                &format!("refine{}", i + 1),
                ParamGroup::NewLayer,
                ref_c,
                td_c + lat_c,
                3,
                ConvSpec::same(3, 1),
            ));
            td_c = ref_c;
        }
        let head = b.conv("head", ParamGroup::NewLayer, 2, ref_c, 1, ConvSpec::default());
        let attention = (config.scales.len() > 1).then(|| {
            let att_c = config.ch(config.attention_channels);
            [
                b.conv(
                    "attention1",
                    ParamGroup::NewLayer,
                    att_c,
                    ref_c * config.scales.len(),
                    3,
                    ConvSpec::same(3, 1),
                ),
                b.conv(
                    "attention2",
                    ParamGroup::NewLayer,
                    config.scales.len(),
                    att_c,
                    1,
                    ConvSpec::default(),
                ),
            ]
        });
        Ok(MsrNet {
            config,
            task,
            store,
            backbone,
            fc,
            laterals,
            refine,
            head,
            attention,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn set_task(&mut self, task: Task) {
        self.task = task;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    /// Parameter ids of the attention module's two convolutions (weight, bias).
    pub fn attention_params(&self) -> Option<[(ParamId, ParamId); 2]> {
        self.attention.map(|[a, b]| [(a.w, a.b), (b.w, b.b)])
    }

    /// Same architecture and weights with a different element type.
    pub fn cast<U: Scalar>(&self) -> MsrNet<U> {
        MsrNet {
            config: self.config.clone(),
            task: self.task,
            store: self.store.cast(),
            backbone: self.backbone.clone(),
            fc: self.fc.clone(),
            laterals: self.laterals.clone(),
            refine: self.refine.clone(),
            head: self.head,
            attention: self.attention,
        }
    }

    fn check_divisible(&self, s: Shape) -> Result<()> {
        let r = self.config.backbone.reduction();
        if s.h % r != 0 || s.w % r != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::invalid(
                "backbone_forward",
                format!(
                    "input {}x{} is not divisible by {r}; pad with dataio::pad_to_multiple first",
                    s.h, s.w
                ),
            ));
        }
        if s.c != 3 {
            return Err(Error::ShapeMismatch {
                op: "backbone_forward",
                dim: "input channels",
                expected: 3,
                actual: s.c,
            });
        }
        Ok(())
    }

    pub fn backbone_forward(&self, g: &mut Graph<T>, image: Var) -> Result<BackboneOutput> {
        self.check_divisible(g.shape(image))?;
        let st = &self.store;
        let mut x = image;
        let mut laterals = Vec::with_capacity(5);
        for (i, layers) in self.backbone.iter().enumerate() {
            for l in layers {
                x = l.apply_relu(g, st, x)?;
            }
            let pool = match self.config.backbone.pool_stride(i) {
                1 => PoolSpec::new(3, 1).with_padding(1),
                s => PoolSpec::new(2, s),
            };
            x = g.max_pool2d(x, pool)?;
            laterals.push(self.laterals[i].apply_relu(g, st, x)?);
        }
        for l in &self.fc {
            x = l.apply_relu(g, st, x)?;
        }
        Ok(BackboneOutput { top: x, laterals })
    }

    /// Refinement module `i` (top-down order; module `i` pairs with pool `4 − i`).
    pub fn refine(&self, g: &mut Graph<T>, i: usize, top_down: Var, bottom_up: Var) -> Result<Var> {
        let (a, b) = (g.shape(top_down), g.shape(bottom_up));
        if (a.h, a.w) != (b.h, b.w) {
            return Err(Error::ShapeMismatch {
                op: "refine",
                dim: if a.h != b.h { "height" } else { "width" },
                expected: if a.h != b.h { a.h } else { a.w },
                actual: if a.h != b.h { b.h } else { b.w },
            });
        }
        let x = g.concat(&[top_down, bottom_up])?;
        let x = self.refine[i].apply_relu(g, &self.store, x)?;
        match self.config.refinement_mode(i) {
            RefinementMode::Merge => Ok(x),
            RefinementMode::MergeUpsample => g.resize(x, a.h * 2, a.w * 2),
        }
    }

    /// One refined-VGG stream on an image whose sides are multiples of 8.
    pub fn stream_forward(&self, g: &mut Graph<T>, image: Var) -> Result<StreamOutput> {
        let bb = self.backbone_forward(g, image)?;
        let mut x = bb.top;
        for i in 0..5 {
            x = self.refine(g, i, x, bb.laterals[4 - i])?;
        }
        let logits = self.head.apply(g, &self.store, x)?;
        let probs = g.softmax_channels(logits)?;
        Ok(StreamOutput { probs, penultimate: x })
    }

    /// Per-pixel softmax weights over the scale streams from their
    /// penultimate features (already at a common resolution).
    pub fn attention_forward(&self, g: &mut Graph<T>, features: &[Var]) -> Result<Var> {
        let expected = self.config.scales.len();
        if features.len() != expected {
            return Err(Error::ShapeMismatch {
                op: "attention_forward",
                dim: "stream count",
                expected,
                actual: features.len(),
            });
        }
        let Some([a1, a2]) = &self.attention else {
            let s = g.shape(features[0]);
            return g.input(Tensor::full(Shape::new(s.n, 1, s.h, s.w), T::one()));
        };
        let x = g.concat(features)?;
        let x = a1.apply_relu(g, &self.store, x)?;
        let x = a2.apply(g, &self.store, x)?;
        g.softmax_channels(x)
    }

    /// Full forward pass on an image of any size.
    pub fn forward(&self, g: &mut Graph<T>, image: &Tensor<T>) -> Result<MsrOutput> {
        let s = image.shape();
        if s.c != 3 {
            return Err(Error::ShapeMismatch {
                op: "msrnet_forward",
                dim: "input channels",
                expected: 3,
                actual: s.c,
            });
        }
        let r = self.config.backbone.reduction();
        let mut maps = Vec::new();
        let mut feats = Vec::new();
        for &scale in &self.config.scales {
            let (hs, ws) = scaled_dims(s.h, s.w, scale);
            let scaled = if (hs, ws) == (s.h, s.w) {
                image.clone()
            } else {
                crate::tensor::kernels::resize_forward(image, hs, ws)
            };
            let (padded, rec) = pad_to_multiple(&scaled, r);
            let x = g.input(padded)?;
            let out = self.stream_forward(g, x)?;
            let (mut probs, mut pen) = (out.probs, out.penultimate);
            if !rec.is_identity() {
                probs = g.crop(probs, 0, 0, rec.height, rec.width)?;
                pen = g.crop(pen, 0, 0, rec.height, rec.width)?;
            }
            maps.push(g.resize(probs, s.h, s.w)?);
            feats.push(g.resize(pen, s.h, s.w)?);
        }
        let weights = self.attention_forward(g, &feats)?;
        let fused = fuse(g, &maps, weights)?;
        Ok(MsrOutput {
            scale_maps: maps,
            weights,
            fused,
        })
    }

    /// Inference convenience wrapper.
    pub fn predict(&self, image: &Tensor<T>) -> Result<Prediction<T>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, image)?;
        Ok(Prediction {
            scale_maps: out.scale_maps.iter().map(|&v| g.value(v).clone()).collect(),
            weights: g.value(out.weights).clone(),
            fused: g.value(out.fused).clone(),
        })
    }
}

/// Stream resolution for `scale` (rounded, at least one pixel).
pub fn scaled_dims(h: usize, w: usize, scale: f64) -> (usize, usize) {
    let f = |v: usize| ((v as f64 * scale).round() as usize).max(1);
    (f(h), f(w))
}

/// `F_c = Σ_s W^s ⊙ M_c^s`.
pub fn fuse<T: Scalar>(g: &mut Graph<T>, maps: &[Var], weights: Var) -> Result<Var> {
    let ws = g.shape(weights);
    if ws.c != maps.len() {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            dim: "weight channels",
            expected: maps.len(),
            actual: ws.c,
        });
    }
    let mut acc: Option<Var> = None;
    for (s, &m) in maps.iter().enumerate() {
        let w = g.slice_channels(weights, s, 1)?;
        let term = g.mul_map(m, w)?;
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::invalid("fuse", "no maps"))
}
