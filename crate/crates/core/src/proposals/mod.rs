//! Salient object proposals: hierarchical segmentation of contour maps,
//! ranked region candidates, saliency screening and subset selection.

mod dump;
mod extract;
mod select;
mod ucm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;

pub use dump::{read_proposals, rle_decode, rle_encode, write_proposals, ProposalRecord};
pub use extract::{extract_proposals, DEDUP_IOU, DEFAULT_PROPOSALS};
pub use select::{screen_by_saliency, subset_select, MIN_GAIN_FRACTION, MIN_SALIENT_FRACTION, SELECT_MAX_IOU};
pub use ucm::{combine_hierarchies, contour_to_ucm, Merge, Ucm};

/// A candidate object region with its objectness score and tight bounding
/// box `[top, left, bottom, right]` (bottom and right exclusive).
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalMask {
    pub mask: Mask,
    pub score: f64,
    pub bbox: [usize; 4],
}

impl ProposalMask {
    pub fn new(mask: Mask, score: f64) -> Result<Self> {
        let bbox = mask
            .bbox()
            .ok_or_else(|| Error::invalid("ProposalMask", "mask is empty"))?;
        if !score.is_finite() {
            return Err(Error::invalid("ProposalMask", "score is not finite"));
        }
        Ok(ProposalMask { mask, score, bbox })
    }

    pub fn area(&self) -> usize {
        self.mask.count()
    }

    /// Index of the first pixel in scanline order.
    pub fn first_pixel(&self) -> usize {
        self.mask.data().iter().position(|&v| v).unwrap_or(usize::MAX)
    }
}

/// A proposal chosen by [`subset_select`] and the value it had when chosen
/// (score × newly covered salient pixels / area), used as its confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub proposal: ProposalMask,
    pub confidence: f64,
}

/// Selected salient instances in selection order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstanceSet {
    pub instances: Vec<Instance>,
}

impl InstanceSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.instances.iter().map(|i| i.proposal.mask.clone()).collect()
    }
}

/// Instance summary written next to label maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub label: u16,
    pub confidence: f64,
    pub area: usize,
    pub bbox: [usize; 4],
}

#[cfg(test)]
mod tests;
