//! The four-stage cascade: salient regions, salient contours, proposal
//! generation and selection, CRF refinement.

use serde::{Deserialize, Serialize};

use crate::crf::{refine_instances, CrfParams};
use crate::dataio::binarize;
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Map, Mask};
use crate::dataio::Sample;
use crate::metrics::{
    contour_benchmark, evaluate_saliency, map_r, ContourEval, InstanceImage, InstancePrediction, MapR, SaliencyEval,
    MATCH_RADIUS,
};
use crate::network::{MsrNet, Task};
use crate::proposals::{
    combine_hierarchies, contour_to_ucm, extract_proposals, screen_by_saliency, subset_select, InstanceSet,
    InstanceSummary, ProposalMask, DEFAULT_PROPOSALS, MIN_SALIENT_FRACTION,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub max_proposals: usize,
    pub min_salient_fraction: f64,
    pub crf: CrfParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_proposals: DEFAULT_PROPOSALS,
            min_salient_fraction: MIN_SALIENT_FRACTION,
            crf: CrfParams::default(),
        }
    }
}

/// Network outputs of one image as foreground maps: the fused map, one map
/// per scale and one attention weight map per scale.
#[derive(Clone, Debug, PartialEq)]
pub struct MapSet {
    pub fused: Map,
    pub scales: Vec<Map>,
    pub weights: Vec<Map>,
}

impl MapSet {
    /// The three per-scale maps followed by the fused map.
    pub fn contour_maps(&self) -> Vec<Map> {
        let mut v = self.scales.clone();
        v.push(self.fused.clone());
        v
    }
}

pub fn infer_maps(model: &MsrNet<f32>, image: &Tensor<f32>) -> Result<MapSet> {
    let p = model.predict(image)?;
    Ok(MapSet {
        fused: Map::from_plane(&p.fused, 0, 1),
        scales: p.scale_maps.iter().map(|m| Map::from_plane(m, 0, 1)).collect(),
        weights: (0..p.weights.shape().c).map(|c| Map::from_plane(&p.weights, 0, c)).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct Segmentation {
    pub salient: Mask,
    /// Size of the ranked proposal pool before screening.
    pub proposals: Vec<ProposalMask>,
    pub screened: usize,
    pub instances: InstanceSet,
    /// 0 is background, `k` the `k`-th selected instance.
    pub labels: LabelMap,
}

impl Segmentation {
    /// Refined instance masks with their selection confidence; instances the
    /// CRF emptied are left out.
    pub fn predictions(&self) -> Vec<InstancePrediction> {
        self.instances
            .instances
            .iter()
            .enumerate()
            .filter_map(|(i, inst)| {
                let mask = self.labels.map(|&l| l as usize == i + 1);
                (mask.count() > 0).then_some(InstancePrediction {
                    mask,
                    score: inst.confidence,
                })
            })
            .collect()
    }

    pub fn summaries(&self) -> Vec<InstanceSummary> {
        self.instances
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let mask = self.labels.map(|&l| l as usize == i + 1);
                InstanceSummary {
                    label: (i + 1) as u16,
                    confidence: inst.confidence,
                    area: mask.count(),
                    bbox: mask.bbox().unwrap_or([0; 4]),
                }
            })
            .collect()
    }
}

/// Ranked proposal pool from the four contour maps.
pub fn propose(contours: &[Map], max_proposals: usize) -> Result<Vec<ProposalMask>> {
    let ucms = contours.iter().map(contour_to_ucm).collect::<Result<Vec<_>>>()?;
    let combined = combine_hierarchies(&ucms)?;
    Ok(extract_proposals(&combined, max_proposals))
}

/// Stages three and four from a saliency map and four contour maps.
pub fn segment_from_maps(
    image: &Tensor<f32>,
    saliency: &Map,
    contours: &[Map],
    config: &PipelineConfig,
) -> Result<Segmentation> {
    let salient = binarize(saliency);
    let proposals = propose(contours, config.max_proposals).map_err(|e| e.in_stage("proposals"))?;
    let screened =
        screen_by_saliency(&proposals, &salient, config.min_salient_fraction).map_err(|e| e.in_stage("screening"))?;
    let instances = subset_select(&screened, &salient).map_err(|e| e.in_stage("selection"))?;
    let labels =
        refine_instances(&salient, &instances.masks(), image, &config.crf).map_err(|e| e.in_stage("refinement"))?;
    Ok(Segmentation {
        salient,
        screened: screened.len(),
        proposals,
        instances,
        labels,
    })
}

/// The full cascade on one image.
pub fn segment_instances(
    region: &MsrNet<f32>,
    contour: &MsrNet<f32>,
    image: &Tensor<f32>,
    config: &PipelineConfig,
) -> Result<Segmentation> {
    if region.task() != Task::Region || contour.task() != Task::Contour {
        return Err(Error::invalid(
            "segment_instances",
            format!("expected region and contour models, got {} and {}", region.task(), contour.task()),
        ));
    }
    let saliency = infer_maps(region, image).map_err(|e| e.in_stage("saliency"))?;
    let contours = infer_maps(contour, image).map_err(|e| e.in_stage("contour"))?;
    segment_from_maps(image, &saliency.fused, &contours.contour_maps(), config)
}

/// Model outputs for one evaluation image; absent parts are not scored.
#[derive(Clone, Debug, Default)]
pub struct ImageOutputs {
    pub saliency: Option<Map>,
    pub contour: Option<Map>,
    pub instances: Option<Vec<InstancePrediction>>,
}

impl ImageOutputs {
    /// Runs whichever models are given on one image.
    pub fn compute(
        region: Option<&MsrNet<f32>>,
        contour: Option<&MsrNet<f32>>,
        image: &Tensor<f32>,
        config: &PipelineConfig,
    ) -> Result<Self> {
        let saliency = region.map(|m| infer_maps(m, image)).transpose().map_err(|e| e.in_stage("saliency"))?;
        let contours = contour.map(|m| infer_maps(m, image)).transpose().map_err(|e| e.in_stage("contour"))?;
        let instances = match (&saliency, &contours) {
            (Some(s), Some(c)) => Some(segment_from_maps(image, &s.fused, &c.contour_maps(), config)?.predictions()),
            _ => None,
        };
        Ok(ImageOutputs {
            saliency: saliency.map(|m| m.fused),
            contour: contours.map(|m| m.fused),
            instances,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub saliency: Option<SaliencyEval>,
    pub contour: Option<ContourEval>,
    pub map_r: Vec<MapR>,
}

/// Ground-truth instance masks of a label map, one per label present.
pub fn instance_masks(labels: &LabelMap) -> Vec<Mask> {
    let mut present: Vec<u16> = labels.data().iter().copied().filter(|&l| l > 0).collect();
    present.sort_unstable();
    present.dedup();
    present.into_iter().map(|l| labels.map(|&v| v == l)).collect()
}

/// Scores outputs against their samples: saliency max-F/MAE, the contour
/// benchmark where samples carry contour ground truth, and mAP^r at 0.5 and
/// 0.7 where they carry instance ground truth.
pub fn evaluate_outputs(outputs: &[ImageOutputs], samples: &[Sample]) -> Result<EvalReport> {
    if outputs.len() != samples.len() {
        return Err(Error::invalid(
            "evaluate_outputs",
            format!("{} outputs for {} samples", outputs.len(), samples.len()),
        ));
    }
    if samples.is_empty() {
        return Err(Error::Data("nothing to evaluate".into()));
    }
    let saliency = match outputs.iter().map(|o| o.saliency.clone()).collect::<Option<Vec<_>>>() {
        Some(maps) => {
            let gts: Vec<Mask> = samples.iter().map(|s| s.saliency.clone()).collect();
            Some(evaluate_saliency(&maps, &gts)?)
        }
        None => None,
    };
    let (mut cmaps, mut cgts) = (Vec::new(), Vec::new());
    for (o, s) in outputs.iter().zip(samples) {
        if let (Some(m), Some(g)) = (&o.contour, &s.contour) {
            cmaps.push(m.clone());
            cgts.push(g.clone());
        }
    }
    let contour = if cmaps.is_empty() {
        None
    } else {
        Some(contour_benchmark(&cmaps, &cgts, MATCH_RADIUS)?)
    };
    let images: Vec<InstanceImage> = outputs
        .iter()
        .zip(samples)
        .filter_map(|(o, s)| {
            Some(InstanceImage {
                predictions: o.instances.clone()?,
                ground_truth: instance_masks(s.instances.as_ref()?),
            })
        })
        .collect();
    let map_r = if images.is_empty() {
        Vec::new()
    } else {
        map_r(&images, &[0.5, 0.7])?
    };
    Ok(EvalReport {
        images: samples.len(),
        saliency,
        contour,
        map_r,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::tensor::Shape;

    fn square_scene() -> (Tensor<f32>, Mask, Mask) {
        let (h, w) = (32, 40);
        let a = Mask::from_fn(h, w, |y, x| (4..14).contains(&y) && (4..16).contains(&x));
        let b = Mask::from_fn(h, w, |y, x| (16..28).contains(&y) && (22..36).contains(&x));
        let mut img = Tensor::full(Shape::new(1, 3, h, w), 0.5f32);
        for y in 0..h {
            for x in 0..w {
                if a.at(y, x) {
                    img.set(0, 0, y, x, 0.95);
                }
                if b.at(y, x) {
                    img.set(0, 2, y, x, 0.95);
                }
            }
        }
        (img, a, b)
    }

    fn outline(m: &Mask) -> Map {
        let (h, w) = m.dims();
        Map::from_fn(h, w, |y, x| {
            let inside = m.at(y, x);
            let edge = [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                let (yy, xx) = (y as isize + dy, x as isize + dx);
                yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize || m.at(yy as usize, xx as usize) != inside
            });
            if inside && edge {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn two_blobs_become_two_instances() {
        let (img, a, b) = square_scene();
        let union = a.or(&b);
        let contour = outline(&a).data().iter().zip(outline(&b).data()).map(|(p, q)| p.max(*q)).collect();
        let contour = Map::from_vec(32, 40, contour).unwrap();
        let s = segment_from_maps(&img, &union.to_map(), &[contour.clone(), contour.clone(), contour.clone(), contour], &PipelineConfig::default())
            .unwrap();
        assert_eq!(s.instances.len(), 2);
        let preds = s.predictions();
        assert_eq!(preds.len(), 2);
        for gt in [&a, &b] {
            let best = preds.iter().map(|p| p.mask.iou(gt)).fold(0.0, f64::max);
            assert!(best >= 0.9, "{best}");
        }
        let max_label = s.labels.data().iter().copied().max().unwrap();
        assert_eq!(max_label as usize, s.instances.len());
        assert_eq!(s.summaries().len(), 2);
    }

    #[test]
    fn blank_saliency_gives_background_only() {
        let (img, _, _) = square_scene();
        let zero = Map::new(32, 40, 0.0);
        let s = segment_from_maps(&img, &zero, &[zero.clone(), zero.clone(), zero.clone(), zero.clone()], &PipelineConfig::default())
            .unwrap();
        assert!(s.instances.is_empty());
        assert!(s.labels.data().iter().all(|&l| l == 0));
        assert!(s.predictions().is_empty());
    }

    #[test]
    fn stage_errors_are_tagged() {
        let (img, _, _) = square_scene();
        let zero = Map::new(32, 40, 0.0);
        let err = segment_from_maps(&img, &zero, &[zero.clone()], &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "proposals", .. }), "{err}");
        let net: MsrNet<f32> = MsrNet::new(NetworkConfig::toy(), Task::Region, 0).unwrap();
        let err = segment_instances(&net, &net, &img, &PipelineConfig::default()).unwrap_err();
        assert!(err.to_string().contains("contour"), "{err}");
    }

    #[test]
    fn evaluation_scores_perfect_outputs() {
        let (img, a, b) = square_scene();
        let union = a.or(&b);
        let labels = LabelMap::from_fn(32, 40, |y, x| if a.at(y, x) { 1 } else if b.at(y, x) { 3 } else { 0 });
        let sample = Sample {
            image: img,
            saliency: union.clone(),
            contour: None,
            instances: Some(labels),
        };
        let out = ImageOutputs {
            saliency: Some(union.to_map()),
            contour: None,
            instances: Some(vec![
                InstancePrediction { mask: a.clone(), score: 0.9 },
                InstancePrediction { mask: b.clone(), score: 0.8 },
            ]),
        };
        let r = evaluate_outputs(&[out], &[sample]).unwrap();
        let s = r.saliency.unwrap();
        assert_eq!((s.max_f, s.mae), (1.0, 0.0));
        assert!(r.contour.is_none());
        assert_eq!(r.map_r.iter().map(|m| m.ap).collect::<Vec<_>>(), [1.0, 1.0]);
        assert!(evaluate_outputs(&[], &[]).is_err());
    }

    #[test]
    fn map_set_exposes_five_maps() {
        let net: MsrNet<f32> = MsrNet::new(NetworkConfig::toy(), Task::Contour, 0).unwrap();
        let (img, _, _) = square_scene();
        let m = infer_maps(&net, &img).unwrap();
        assert_eq!((m.scales.len(), m.weights.len(), m.contour_maps().len()), (3, 3, 4));
        assert_eq!(m.fused.dims(), (32, 40));
    }
}
