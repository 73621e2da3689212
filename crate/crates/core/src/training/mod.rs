//! Two-stage training: a region model from scratch, then a contour model
//! fine-tuned from it. SGD with momentum, gradient accumulation, per-group
//! learning rates and validation-loss model selection.

mod augment;
mod checkpoint;
mod optim;
mod run;

pub use augment::{
    augment_contour, augment_region, contour_variant, flip_image, flip_mask, resize_mask, rotate_image, rotate_mask,
    rotated_crop_dims, CONTOUR_VARIANTS,
};
pub use checkpoint::{Checkpoint, CheckpointManifest, ParamEntry};
pub use optim::{batch_loss, train_step, Sgd};
pub use run::{finetune_contour, train, validation_loss, LogRow, TrainData, TrainOutcome};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{NetworkConfig, Task};

/// Network width preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkPreset {
    Toy,
    Full,
}

impl NetworkPreset {
    pub fn config(self) -> NetworkConfig {
        match self {
            NetworkPreset::Toy => NetworkConfig::toy(),
            NetworkPreset::Full => NetworkConfig::full(),
        }
    }
}

/// Positive-class loss weight of a task.
pub fn positive_weight(task: Task) -> f64 {
    match task {
        Task::Region => 2.0,
        Task::Contour => 10.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub network: NetworkPreset,
    pub minibatch: usize,
    pub accumulate_iters: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_backbone: f64,
    pub lr_new_layers: f64,
    pub total_iters: usize,
    pub validate_every: usize,
    /// Side of the square training crops.
    pub train_resolution: usize,
    pub positive_class_weight: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// Full schedule: 20000 iterations for regions, 10000 for contours, 320×320.
    pub fn full(task: Task) -> Self {
        TrainConfig {
            task,
            network: NetworkPreset::Full,
            minibatch: 6,
            accumulate_iters: 5,
            momentum: 0.9,
            weight_decay: 0.0005,
            lr_backbone: 1e-4,
            lr_new_layers: 1e-3,
            total_iters: match task {
                Task::Region => 20000,
                Task::Contour => 10000,
            },
            validate_every: 500,
            train_resolution: 320,
            positive_class_weight: positive_weight(task),
            seed: 0,
        }
    }

    /// Desk-scale schedule: toy network, 2000 iterations on 64×64 crops, with
    /// learning rates raised for the narrow, randomly initialized backbone.
    pub fn toy(task: Task) -> Self {
        TrainConfig {
            network: NetworkPreset::Toy,
            total_iters: 2000,
            train_resolution: 64,
            lr_backbone: 3e-3,
            lr_new_layers: 3e-2,
            ..Self::full(task)
        }
    }

    /// Flat JSON object of config fields. A `preset` key (`toy` or `full`,
    /// default `full`) and the `task` key (default `region`) pick the base
    /// values; every other key overrides one field.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let serde_json::Value::Object(mut fields) = value else {
            return Err(Error::Parse("train config must be a JSON object".into()));
        };
        let task = match fields.get("task") {
            Some(t) => serde_json::from_value(t.clone())?,
            None => Task::Region,
        };
        let base = match fields.remove("preset") {
            None => Self::full(task),
            Some(serde_json::Value::String(p)) if p == "full" => Self::full(task),
            Some(serde_json::Value::String(p)) if p == "toy" => Self::toy(task),
            Some(other) => return Err(Error::Parse(format!("unknown preset {other}"))),
        };
        let serde_json::Value::Object(mut merged) = serde_json::to_value(&base)? else {
            unreachable!("configs serialize to objects")
        };
        for (k, v) in fields {
            if !merged.contains_key(&k) {
                return Err(Error::Parse(format!("unknown train config field `{k}`")));
            }
            merged.insert(k, v);
        }
        let config: TrainConfig = serde_json::from_value(serde_json::Value::Object(merged))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("train config", m));
        if self.minibatch == 0 || self.accumulate_iters == 0 || self.total_iters == 0 || self.validate_every == 0 {
            return bad("minibatch, accumulate_iters, total_iters and validate_every must be positive".into());
        }
        for (name, v) in [("lr_backbone", self.lr_backbone), ("lr_new_layers", self.lr_new_layers)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let r = self.network.config().backbone.reduction();
        if self.train_resolution == 0 || self.train_resolution % r != 0 {
            return bad(format!("train_resolution must be a positive multiple of {r}"));
        }
        if self.positive_class_weight != positive_weight(self.task) {
            return bad(format!(
                "positive_class_weight for the {} task is {}, got {}",
                self.task,
                positive_weight(self.task),
                self.positive_class_weight
            ));
        }
        Ok(())
    }

    /// Number of validation passes `train` performs, counting iteration 0.
    pub fn validation_count(&self) -> usize {
        self.total_iters / self.validate_every + 1
    }
}
