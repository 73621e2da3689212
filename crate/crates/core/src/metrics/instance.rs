use serde::{Deserialize, Serialize};

use super::contour::interpolated_ap;
use crate::error::{Error, Result};
use crate::grid::Mask;

#[derive(Clone, Debug, PartialEq)]
pub struct InstancePrediction {
    pub mask: Mask,
    pub score: f64,
}

/// Predictions and ground-truth instances of one image.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstanceImage {
    pub predictions: Vec<InstancePrediction>,
    pub ground_truth: Vec<Mask>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapR {
    pub iou_threshold: f64,
    pub ap: f64,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truth: usize,
}

/// Mask average precision at one IoU threshold. Predictions from all images
/// are ranked by score, ties broken by larger best IoU, then image order and
/// list order. Each prediction matches the unmatched ground-truth instance
/// of its image with the highest IoU, if that IoU reaches the threshold.
pub fn map_r_at(images: &[InstanceImage], iou_threshold: f64) -> Result<MapR> {
    let total_gt: usize = images.iter().map(|im| im.ground_truth.len()).sum();
    if total_gt == 0 {
        return Err(Error::Data("no ground-truth instances".into()));
    }
    struct Entry {
        score: f64,
        best: f64,
        image: usize,
        index: usize,
        ious: Vec<f64>,
    }
    let mut entries = Vec::new();
    for (ii, im) in images.iter().enumerate() {
        for (pi, p) in im.predictions.iter().enumerate() {
            if !p.score.is_finite() {
                return Err(Error::invalid("map_r", format!("non-finite score in image {ii}")));
            }
            for g in &im.ground_truth {
                p.mask.check_dims(g, "map_r")?;
            }
            let ious: Vec<f64> = im.ground_truth.iter().map(|g| p.mask.iou(g)).collect();
            let best = ious.iter().copied().fold(0.0, f64::max);
            entries.push(Entry {
                score: p.score,
                best,
                image: ii,
                index: pi,
                ious,
            });
        }
    }
    entries.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(b.best.total_cmp(&a.best))
            .then(a.image.cmp(&b.image))
            .then(a.index.cmp(&b.index))
    });
    let mut matched: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(entries.len());
    for (rank, e) in entries.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (gi, &iou) in e.ious.iter().enumerate() {
            if !matched[e.image][gi] && iou >= iou_threshold && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            matched[e.image][gi] = true;
            tp += 1;
        }
        points.push((tp as f64 / (rank + 1) as f64, tp as f64 / total_gt as f64));
    }
    Ok(MapR {
        iou_threshold,
        ap: interpolated_ap(&points),
        true_positives: tp,
        predictions: entries.len(),
        ground_truth: total_gt,
    })
}

/// mAP^r at each threshold (0.5 and 0.7 in the standard report).
pub fn map_r(images: &[InstanceImage], thresholds: &[f64]) -> Result<Vec<MapR>> {
    thresholds.iter().map(|&t| map_r_at(images, t)).collect()
}
