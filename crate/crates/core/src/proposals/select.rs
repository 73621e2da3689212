use super::{Instance, InstanceSet, ProposalMask};
use crate::error::Result;
use crate::grid::Mask;

/// Proposals need at least this fraction of salient pixels.
pub const MIN_SALIENT_FRACTION: f64 = 0.8;
/// Selected instances overlap each other by at most this IoU.
pub const SELECT_MAX_IOU: f64 = 0.5;
/// Selection stops when no candidate adds this fraction of the salient area.
pub const MIN_GAIN_FRACTION: f64 = 0.05;

/// Keeps proposals whose fraction of salient pixels is at least
/// `min_fraction` (boundary inclusive).
pub fn screen_by_saliency(proposals: &[ProposalMask], salient: &Mask, min_fraction: f64) -> Result<Vec<ProposalMask>> {
    let mut kept = Vec::new();
    for p in proposals {
        salient.check_dims(&p.mask, "screen_by_saliency")?;
        let inside = p.mask.intersection_count(salient) as f64;
        if inside / p.area() as f64 >= min_fraction {
            kept.push(p.clone());
        }
    }
    Ok(kept)
}

/// Greedy coverage of the salient region. Each step takes, among proposals
/// with IoU ≤ 0.5 against every selected one and covering at least 5% of
/// the salient area not yet covered, the one maximising
/// `score · new salient pixels / area` (ties: higher score, smaller area,
/// earlier first pixel). Stops when no proposal qualifies.
pub fn subset_select(screened: &[ProposalMask], salient: &Mask) -> Result<InstanceSet> {
    for p in screened {
        salient.check_dims(&p.mask, "subset_select")?;
    }
    let total = salient.count();
    let mut set = InstanceSet::default();
    if total == 0 {
        return Ok(set);
    }
    let min_gain = MIN_GAIN_FRACTION * total as f64;
    let mut covered = salient.map(|_| false);
    let mut used = vec![false; screened.len()];
    let firsts: Vec<usize> = screened.iter().map(ProposalMask::first_pixel).collect();
    let areas: Vec<usize> = screened.iter().map(ProposalMask::area).collect();
    loop {
        let mut best: Option<(f64, usize)> = None;
        for (i, p) in screened.iter().enumerate() {
            if used[i] {
                continue;
            }
            let gain = p
                .mask
                .data()
                .iter()
                .zip(salient.data())
                .zip(covered.data())
                .filter(|((&m, &s), &c)| m && s && !c)
                .count();
            if (gain as f64) < min_gain {
                continue;
            }
            if set.instances.iter().any(|s| s.proposal.mask.iou(&p.mask) > SELECT_MAX_IOU) {
                continue;
            }
            let value = p.score * gain as f64 / areas[i] as f64;
            let better = match best {
                None => true,
                Some((bv, j)) => value
                    .total_cmp(&bv)
                    .then(p.score.total_cmp(&screened[j].score))
                    .then(areas[j].cmp(&areas[i]))
                    .then(firsts[j].cmp(&firsts[i]))
                    .is_gt(),
            };
            if better {
                best = Some((value, i));
            }
        }
        let Some((value, i)) = best else { break };
        used[i] = true;
        let p = &screened[i];
        for (c, (&m, &s)) in covered.data_mut().iter_mut().zip(p.mask.data().iter().zip(salient.data())) {
            *c = *c || (m && s);
        }
        set.instances.push(Instance {
            proposal: p.clone(),
            confidence: value,
        });
    }
    Ok(set)
}
