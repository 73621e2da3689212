use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::{contour_variant, flip_image, flip_mask, resize_mask, CONTOUR_VARIANTS};
use super::checkpoint::Checkpoint;
use super::optim::{batch_loss, train_step, Sgd};
use super::TrainConfig;
use crate::dataio::Sample;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::network::{MsrNet, Task};
use crate::tensor::{kernels, Graph, Shape, Tensor};

/// Image/target pairs plus the augmentation applied to them. Augmented
/// variants are produced on demand.
#[derive(Clone, Debug)]
pub struct TrainData {
    pairs: Vec<(Tensor<f32>, Mask)>,
    variants: usize,
}

impl TrainData {
    /// Pairs used as they are (validation data).
    pub fn plain(pairs: Vec<(Tensor<f32>, Mask)>) -> Self {
        TrainData { pairs, variants: 1 }
    }

    /// Pairs augmented for `task`: mirrored for regions, rotated and
    /// mirrored for contours.
    pub fn augmented(task: Task, pairs: Vec<(Tensor<f32>, Mask)>) -> Self {
        let variants = match task {
            Task::Region => 2,
            Task::Contour => CONTOUR_VARIANTS,
        };
        TrainData { pairs, variants }
    }

    /// Image and target of each sample for `task`.
    pub fn pairs_for(task: Task, samples: &[Sample]) -> Result<Vec<(Tensor<f32>, Mask)>> {
        samples
            .iter()
            .map(|s| {
                let target = match task {
                    Task::Region => s.saliency.clone(),
                    Task::Contour => s
                        .contour
                        .clone()
                        .ok_or_else(|| Error::Data("contour training needs contour ground truth".into()))?,
                };
                Ok((s.image.clone(), target))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len() * self.variants
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn get(&self, i: usize) -> (Tensor<f32>, Mask) {
        let (image, mask) = &self.pairs[i / self.variants];
        let v = i % self.variants;
        match self.variants {
            1 => (image.clone(), mask.clone()),
            2 if v == 1 => (flip_image(image), flip_mask(mask)),
            2 => (image.clone(), mask.clone()),
            _ => contour_variant(image, mask, v),
        }
    }
}

/// Random `res × res` crop when the pair is large enough, otherwise a resize.
fn fit(image: &Tensor<f32>, mask: &Mask, res: usize, rng: &mut ChaCha8Rng) -> (Tensor<f32>, Mask) {
    let s = image.shape();
    if s.h == res && s.w == res {
        return (image.clone(), mask.clone());
    }
    if s.h >= res && s.w >= res {
        let top = rng.gen_range(0..=s.h - res);
        let left = rng.gen_range(0..=s.w - res);
        let mut out = Tensor::zeros(Shape::new(1, s.c, res, res));
        for c in 0..s.c {
            for y in 0..res {
                for x in 0..res {
                    out.set(0, c, y, x, image.at(0, c, top + y, left + x));
                }
            }
        }
        return (out, Mask::from_fn(res, res, |y, x| mask.at(top + y, left + x)));
    }
    (kernels::resize_forward(image, res, res), resize_mask(mask, res, res))
}

fn target_tensor(mask: &Mask) -> Tensor<f32> {
    mask.to_map().to_tensor()
}

/// Mean per-image loss (weighted as in training) at native resolution.
pub fn validation_loss(model: &MsrNet<f32>, data: &TrainData, positive_weight: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut total = 0.0;
    for i in 0..data.len() {
        let (image, mask) = data.get(i);
        let mut g = Graph::new();
        let loss = batch_loss(model, &mut g, &image, &target_tensor(&mask), positive_weight)?;
        total += g.value(loss).item() as f64;
    }
    Ok(total / data.len() as f64)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub iteration: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

impl fmt::Display for LogRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        write!(f, "{},{},{}", self.iteration, opt(self.train_loss), opt(self.val_loss))
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Lowest validation loss; the earliest wins ties.
    pub best: Checkpoint,
    /// `(iteration, validation loss)` of every validation pass.
    pub validations: Vec<(usize, f64)>,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    /// Mean training loss over consecutive windows of `window` iterations.
    pub fn smoothed_loss(&self, window: usize) -> Vec<f64> {
        let losses: Vec<f64> = self.log.iter().filter_map(|r| r.train_loss).collect();
        losses
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect()
    }
}

struct Output<'a> {
    dir: &'a Path,
    log: std::io::BufWriter<std::fs::File>,
}

impl Output<'_> {
    fn row(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.log, "{row}").map_err(|e| Error::io(self.dir.join("log.csv"), e))
    }

    fn checkpoint(&mut self, c: &Checkpoint, stem: &str) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(self.dir.join("log.csv"), e))?;
        c.save(self.dir, stem).map(|_| ())
    }
}

/// Trains `model` for `config.total_iters` minibatch iterations, validating
/// at iteration 0 and every `validate_every` iterations. With `out_dir`, the
/// config, a CSV log, every validated checkpoint (`iter_NNNNNN`) and the best
/// one (`best`) are written there.
pub fn train(
    mut model: MsrNet<f32>,
    train_set: &TrainData,
    val_set: &TrainData,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.task() != config.task {
        return Err(Error::invalid(
            "train",
            format!("model is a {} model but the config trains {}", model.task(), config.task),
        ));
    }
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let mut out = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let cfg = dir.join("config.json");
            std::fs::write(&cfg, config.to_json()).map_err(|e| Error::io(&cfg, e))?;
            let path = dir.join("log.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut o = Output {
                dir,
                log: std::io::BufWriter::new(file),
            };
            writeln!(o.log, "iter,train_loss,val_loss").map_err(|e| Error::io(&path, e))?;
            Some(o)
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut sgd = Sgd::new(&model);
    let mut log = Vec::with_capacity(config.total_iters + 1);
    let mut validations = Vec::with_capacity(config.validation_count());

    let w = config.positive_class_weight;
    let v0 = validation_loss(&model, val_set, w)?;
    let mut best = Checkpoint {
        model: model.clone(),
        iteration: 0,
        validation_loss: v0,
    };
    validations.push((0, v0));
    let row = LogRow {
        iteration: 0,
        train_loss: None,
        val_loss: Some(v0),
    };
    log.push(row);
    if let Some(o) = out.as_mut() {
        o.row(&row)?;
        o.checkpoint(&best, "iter_000000")?;
    }

    let res = config.train_resolution;
    for it in 1..=config.total_iters {
        let mut images = Vec::with_capacity(config.minibatch);
        let mut targets = Vec::with_capacity(config.minibatch);
        for _ in 0..config.minibatch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (image, mask) = train_set.get(order[cursor]);
            cursor += 1;
            let (image, mask) = fit(&image, &mask, res, &mut rng);
            images.push(image);
            targets.push(target_tensor(&mask));
        }
        let images = Tensor::stack(&images)?;
        let targets = Tensor::stack(&targets)?;
        let loss = train_step(&mut model, &images, &targets, config, &mut sgd)?;
        let mut row = LogRow {
            iteration: it,
            train_loss: Some(loss),
            val_loss: None,
        };
        if it % config.validate_every == 0 {
            let v = validation_loss(&model, val_set, w)?;
            row.val_loss = Some(v);
            validations.push((it, v));
            let snapshot = Checkpoint {
                model: model.clone(),
                iteration: it,
                validation_loss: v,
            };
            if let Some(o) = out.as_mut() {
                o.row(&row)?;
                o.checkpoint(&snapshot, &format!("iter_{it:06}"))?;
            }
            if v < best.validation_loss {
                best = snapshot;
            }
        } else if let Some(o) = out.as_mut() {
            o.row(&row)?;
        }
        log.push(row);
    }
    if let Some(o) = out.as_mut() {
        o.checkpoint(&best, "best")?;
    }
    Ok(TrainOutcome {
        best,
        validations,
        log,
    })
}

/// Duplicates a region checkpoint and fine-tunes the copy for contours.
pub fn finetune_contour(
    region: &Checkpoint,
    train_set: &TrainData,
    val_set: &TrainData,
    config: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if region.model.task() != Task::Region {
        return Err(Error::invalid(
            "finetune_contour",
            format!("expected a region checkpoint, got a {} checkpoint", region.model.task()),
        ));
    }
    if config.task != Task::Contour {
        return Err(Error::invalid("finetune_contour", "the config must train the contour task"));
    }
    let mut model = region.model.clone();
    model.set_task(Task::Contour);
    train(model, train_set, val_set, config, out_dir)
}
