use super::TrainConfig;
use crate::error::{Error, Result};
use crate::network::MsrNet;
use crate::tensor::{Graph, ParamGroup, Scalar, Tensor, Var};

/// Weighted cross-entropy of the fused foreground channel against `targets`
/// (`N×1×H×W`, values 0 or 1).
pub fn batch_loss<T: Scalar>(
    model: &MsrNet<T>,
    g: &mut Graph<T>,
    images: &Tensor<T>,
    targets: &Tensor<T>,
    positive_weight: f64,
) -> Result<Var> {
    let out = model.forward(g, images)?;
    let fg = g.slice_channels(out.fused, 1, 1)?;
    g.weighted_cross_entropy(fg, targets, T::of(positive_weight))
}

/// SGD with momentum over gradients accumulated in the model's parameter
/// store.
#[derive(Clone, Debug)]
pub struct Sgd {
    velocity: Vec<Tensor<f32>>,
    pending: usize,
    iterations: usize,
    updates: usize,
}

impl Sgd {
    pub fn new(model: &MsrNet<f32>) -> Self {
        Sgd {
            velocity: model.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            pending: 0,
            iterations: 0,
            updates: 0,
        }
    }

    /// Forward/backward passes accumulated since the last update.
    pub fn pending(&self) -> usize {
        self.pending
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// `v ← μv − lr·(ḡ + wd·θ)`, `θ ← θ + v` with `ḡ` the mean of the
    /// accumulated gradients; the accumulators are zeroed.
    pub fn apply(&mut self, model: &mut MsrNet<f32>, config: &TrainConfig) {
        let k = self.pending.max(1) as f32;
        let mu = config.momentum as f32;
        let wd = config.weight_decay as f32;
        for (p, v) in model.params_mut().iter_mut().zip(&mut self.velocity) {
            let lr = match p.group {
                ParamGroup::Backbone => config.lr_backbone,
                ParamGroup::NewLayer => config.lr_new_layers,
            } as f32;
            let grad = p.grad.data();
            for ((theta, vel), &g) in p.value.data_mut().iter_mut().zip(v.data_mut()).zip(grad) {
                *vel = mu * *vel - lr * (g / k + wd * *theta);
                *theta += *vel;
            }
            p.grad.fill(0.0);
        }
        self.pending = 0;
        self.updates += 1;
    }
}

/// One forward/backward pass over a minibatch. Gradients accumulate in the
/// model; every `accumulate_iters` passes one SGD update is applied.
/// Returns the batch loss.
pub fn train_step(
    model: &mut MsrNet<f32>,
    images: &Tensor<f32>,
    targets: &Tensor<f32>,
    config: &TrainConfig,
    state: &mut Sgd,
) -> Result<f64> {
    let s = images.shape();
    let r = config.train_resolution;
    if s.n != config.minibatch || s.h != r || s.w != r {
        return Err(Error::invalid(
            "train_step",
            format!("expected {} images of {r}x{r}, got {s}", config.minibatch),
        ));
    }
    let mut g = Graph::new();
    let loss = batch_loss(model, &mut g, images, targets, config.positive_class_weight)?;
    let value = g.value(loss).item() as f64;
    state.iterations += 1;
    if !value.is_finite() {
        return Err(Error::Diverged {
            iteration: state.iterations,
            loss: value,
        });
    }
    g.backward_into(loss, model.params_mut())?;
    state.pending += 1;
    if state.pending == config.accumulate_iters {
        state.apply(model, config);
    }
    Ok(value)
}
