//! JSON-lines proposal dumps with run-length-encoded masks.

use serde::{Deserialize, Serialize};

use super::ProposalMask;
use crate::error::{Error, Result};
use crate::grid::Mask;

/// One line of a proposal dump. `rle` alternates background and
/// foreground run lengths in scanline order, starting with background
/// (possibly a zero-length run).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProposalRecord {
    pub height: usize,
    pub width: usize,
    pub score: f64,
    pub bbox: [usize; 4],
    pub rle: Vec<u64>,
}

/// Largest mask a dump may describe (8192 × 8192 pixels).
pub const MAX_MASK_PIXELS: usize = 1 << 26;

pub fn rle_encode(mask: &Mask) -> Vec<u64> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u64;
    for &v in mask.data() {
        if v != current {
            runs.push(len);
            current = v;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(height: usize, width: usize, runs: &[u64]) -> Result<Mask> {
    let n = height
        .checked_mul(width)
        .ok_or_else(|| Error::Parse(format!("mask size {height}x{width} overflows")))?;
    if n > MAX_MASK_PIXELS {
        return Err(Error::Parse(format!("mask size {height}x{width} exceeds {MAX_MASK_PIXELS} pixels")));
    }
    let total = runs.iter().try_fold(0u64, |a, &r| a.checked_add(r));
    if total != Some(n as u64) {
        return Err(Error::Parse(format!("run lengths do not add up to {height}x{width}")));
    }
    if runs.iter().skip(1).any(|&r| r == 0) {
        return Err(Error::Parse("zero-length run after the first".into()));
    }
    let mut data = Vec::with_capacity(n);
    for (i, &r) in runs.iter().enumerate() {
        data.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    Mask::from_vec(height, width, data)
}

impl ProposalRecord {
    pub fn from_proposal(p: &ProposalMask) -> Self {
        ProposalRecord {
            height: p.mask.height(),
            width: p.mask.width(),
            score: p.score,
            bbox: p.bbox,
            rle: rle_encode(&p.mask),
        }
    }

    /// Decodes the mask and checks that it is nonempty and that the stored
    /// bounding box is the tight one.
    pub fn to_proposal(&self) -> Result<ProposalMask> {
        let mask = rle_decode(self.height, self.width, &self.rle)?;
        let p = ProposalMask::new(mask, self.score).map_err(|e| Error::Parse(e.to_string()))?;
        if p.bbox != self.bbox {
            return Err(Error::Parse(format!("bbox {:?} is not the tight box {:?}", self.bbox, p.bbox)));
        }
        Ok(p)
    }
}

pub fn write_proposals(proposals: &[ProposalMask]) -> String {
    let mut out = String::new();
    for p in proposals {
        out.push_str(&serde_json::to_string(&ProposalRecord::from_proposal(p)).expect("serializable"));
        out.push('\n');
    }
    out
}

/// Parses a dump; blank lines are skipped and errors name the line.
pub fn read_proposals(text: &str) -> Result<Vec<ProposalMask>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let r: ProposalRecord =
                serde_json::from_str(l).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
            r.to_proposal().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))
        })
        .collect()
}
