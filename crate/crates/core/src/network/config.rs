use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One VGG block: `num_convs` 3×3 convolutions followed by a max pool.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub num_convs: usize,
    pub channels: usize,
}

/// Fully convolutional VGG16 backbone with the last two pools made
/// stride-1 and atrous convolutions after the penultimate pool.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub stages: Vec<StageConfig>,
    /// Every stage ends in a pool; kept explicit so configs are self-describing.
    pub pool_after_stage: Vec<bool>,
    /// Zero-based indices of pools that keep resolution (3×3 window, stride 1).
    pub stride_one_pools: Vec<usize>,
    pub atrous_rate_after_penultimate_pool: usize,
    /// Width of the two 1×1 convolutions that replace the fully connected layers.
    pub fc_channels: usize,
    /// Divisor applied to every channel count of the network.
    pub toy_scale_factor: usize,
}

impl BackboneConfig {
    /// Full-width VGG16 layout.
    pub fn vgg16() -> Self {
        BackboneConfig {
            stages: vec![
                StageConfig { num_convs: 2, channels: 64 },
                StageConfig { num_convs: 2, channels: 128 },
                StageConfig { num_convs: 3, channels: 256 },
                StageConfig { num_convs: 3, channels: 512 },
                StageConfig { num_convs: 3, channels: 512 },
            ],
            pool_after_stage: vec![true; 5],
            stride_one_pools: vec![3, 4],
            atrous_rate_after_penultimate_pool: 2,
            fc_channels: 1024,
            toy_scale_factor: 1,
        }
    }

    pub fn scaled(&self, full: usize) -> usize {
        (full / self.toy_scale_factor.max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("backbone config", m));
        if self.stages.len() != 5 || self.pool_after_stage.len() != 5 || !self.pool_after_stage.iter().all(|&p| p) {
            return bad("exactly five stages, each followed by a pooling layer, are required".into());
        }
        if self.stride_one_pools != [3, 4] {
            return bad(format!(
                "the last two pools must be the stride-1 pools, got {:?}",
                self.stride_one_pools
            ));
        }
        if self.atrous_rate_after_penultimate_pool < 2 {
            return bad("atrous rate after the penultimate pool must be >= 2".into());
        }
        if self.stages.iter().any(|s| s.num_convs == 0 || s.channels == 0) || self.fc_channels == 0 {
            return bad("every stage needs at least one convolution and one channel".into());
        }
        if self.toy_scale_factor == 0 {
            return bad("toy_scale_factor must be >= 1".into());
        }
        Ok(())
    }

    /// Stride of pool `i`.
    pub fn pool_stride(&self, i: usize) -> usize {
        if self.stride_one_pools.contains(&i) {
            1
        } else {
            2
        }
    }

    /// Spatial reduction factor of the backbone output.
    pub fn reduction(&self) -> usize {
        (0..5).map(|i| self.pool_stride(i)).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RefinementMode {
    /// Merge without changing resolution.
    #[serde(rename = "R_A")]
    Merge,
    /// Merge then upsample 2×.
    #[serde(rename = "R_B")]
    MergeUpsample,
}

/// What a model is trained to predict.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Region,
    Contour,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Region => "region",
            Task::Contour => "contour",
        })
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "region" => Ok(Task::Region),
            "contour" => Ok(Task::Contour),
            other => Err(Error::invalid("task", format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub backbone: BackboneConfig,
    /// Full-width channel counts; divided by `backbone.toy_scale_factor`.
    pub lateral_channels: usize,
    pub refine_channels: usize,
    pub attention_channels: usize,
    /// Input scales, one stream each. The first must be 1.
    pub scales: Vec<f64>,
}

impl NetworkConfig {
    /// Full-width layout.
    pub fn full() -> Self {
        NetworkConfig {
            backbone: BackboneConfig::vgg16(),
            lateral_channels: 64,
            refine_channels: 64,
            attention_channels: 512,
            scales: vec![1.0, 0.75, 0.5],
        }
    }

    /// Channels divided by 8: stages 8/16/32/64/64, fc 128, laterals and
    /// refinement 8, attention 64.
    pub fn toy() -> Self {
        let mut c = Self::full();
        c.backbone.toy_scale_factor = 8;
        c
    }

    /// Every layer `channels` wide; used for whole-network gradient checks.
    pub fn uniform(channels: usize) -> Self {
        let mut c = Self::full();
        for s in &mut c.backbone.stages {
            s.channels = channels;
        }
        c.backbone.fc_channels = channels;
        c.lateral_channels = channels;
        c.refine_channels = channels;
        c.attention_channels = channels;
        c
    }

    pub fn ch(&self, full: usize) -> usize {
        self.backbone.scaled(full)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.scales.is_empty() || self.scales[0] != 1.0 {
            return Err(Error::invalid("network config", "the first scale must be 1.0"));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::invalid("network config", "scales must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of scalar parameters of the network this config describes,
    /// computed without building it (saturating on overflow).
    pub fn parameter_count(&self) -> u128 {
        let conv = |o: usize, i: usize, k: usize| (o as u128).saturating_mul(i as u128).saturating_mul((k * k) as u128).saturating_add(o as u128);
        let mut total: u128 = 0;
        let mut in_c = 3;
        for s in &self.backbone.stages {
            let o = self.ch(s.channels);
            for _ in 0..s.num_convs {
                total = total.saturating_add(conv(o, in_c, 3));
                in_c = o;
            }
        }
        let fc = self.ch(self.backbone.fc_channels);
        total = total.saturating_add(conv(fc, in_c, 1)).saturating_add(conv(fc, fc, 1));
        let lat = self.ch(self.lateral_channels);
        for s in &self.backbone.stages {
            total = total.saturating_add(conv(lat, self.ch(s.channels), 3));
        }
        let r = self.ch(self.refine_channels);
        let mut td = fc;
        for _ in 0..5 {
            total = total.saturating_add(conv(r, td + lat, 3));
            td = r;
        }
        total = total.saturating_add(conv(2, r, 1));
        let n = self.scales.len();
        if n > 1 {
            let a = self.ch(self.attention_channels);
            total = total.saturating_add(conv(a, r * n, 3)).saturating_add(conv(n, a, 1));
        }
        total
    }

    /// Refinement mode of module `i` in top-down order (module 0 pairs with
    /// the last pool). Modules belonging to the first three pools upsample.
    pub fn refinement_mode(&self, i: usize) -> RefinementMode {
        let pool = 4 - i;
        if self.backbone.pool_stride(pool) == 2 {
            RefinementMode::MergeUpsample
        } else {
            RefinementMode::Merge
        }
    }
}
