use std::collections::BTreeMap;

use super::ucm::Ucm;
use super::ProposalMask;
use crate::grid::Mask;

/// Default size of the proposal pool.
pub const DEFAULT_PROPOSALS: usize = 800;
/// Candidates overlapping a better-ranked one above this IoU are dropped.
pub const DEDUP_IOU: f64 = 0.95;

/// A union of at most two runs of leaves in depth-first order.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    runs: [(u32, u32); 2],
    area: u64,
    first: usize,
    score: f64,
}

fn overlap(a: (u32, u32), b: (u32, u32), prefix: &[u64]) -> u64 {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if lo < hi {
        prefix[hi as usize] - prefix[lo as usize]
    } else {
        0
    }
}

fn iou(a: &Candidate, b: &Candidate, prefix: &[u64]) -> f64 {
    let mut inter = 0;
    for ra in a.runs {
        for rb in b.runs {
            inter += overlap(ra, rb, prefix);
        }
    }
    inter as f64 / (a.area + b.area - inter) as f64
}

/// Region statistics over UCM edge values: boundary edges leave the region,
/// interior edges (including those inside leaves, valued 0) stay in it.
#[derive(Clone, Copy, Debug, Default)]
struct Stats {
    boundary_count: f64,
    boundary_sum: f64,
    interior_count: f64,
    interior_sum: f64,
}

impl Stats {
    /// Region contrast (boundary mean minus interior mean, at least 0)
    /// times boundary strength.
    fn score(&self) -> f64 {
        if self.boundary_count == 0.0 {
            return 0.0;
        }
        let b = self.boundary_sum / self.boundary_count;
        let i = if self.interior_count > 0.0 {
            self.interior_sum / self.interior_count
        } else {
            0.0
        };
        (b - i).max(0.0) * b
    }
}

/// Ranked, deduplicated candidate regions of a hierarchy: every region of
/// every level plus the union of every pair of regions that are adjacent at
/// some level. Ranked by score (descending), then area (ascending), then
/// first pixel in scanline order; truncated to `max_n`.
pub fn extract_proposals(ucm: &Ucm, max_n: usize) -> Vec<ProposalMask> {
    let (h, w) = ucm.dims();
    let tree = ucm.tree();
    let leaves = ucm.leaves();
    let nl = ucm.leaf_count();
    let total = nl + ucm.merges().len();
    let root = (total - 1) as u32;

    // depth-first leaf order; every region is a run [lo, hi)
    let mut order = Vec::with_capacity(nl);
    let mut run = vec![(0u32, 0u32); total];
    let mut stack = vec![(root, false)];
    while let Some((v, done)) = stack.pop() {
        match (tree.children[v as usize], done) {
            (None, _) => {
                let at = order.len() as u32;
                order.push(v);
                run[v as usize] = (at, at + 1);
            }
            (Some(_), false) => {
                let (l, r) = tree.children[v as usize].expect("internal");
                stack.push((v, true));
                stack.push((r, false));
                stack.push((l, false));
            }
            (Some((l, r)), true) => run[v as usize] = (run[l as usize].0, run[r as usize].1),
        }
    }
    let mut prefix = vec![0u64; nl + 1];
    for (i, &l) in order.iter().enumerate() {
        prefix[i + 1] = prefix[i] + tree.area[l as usize];
    }

    // leaf edges with their UCM value, accumulated bottom-up: `within`
    // counts edges inside leaves, `cross` edges between two leaves of the
    // region, `incident` edges between leaves once per endpoint in the region
    let mut first = vec![usize::MAX; total];
    let mut within = vec![0.0f64; total];
    let mut cross = vec![(0.0f64, 0.0f64); total];
    let mut incident = vec![(0.0f64, 0.0f64); total];
    let mut pair_edges: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for p in 0..h * w {
        let a = leaves[p];
        first[a as usize] = first[a as usize].min(p);
        let (y, x) = (p / w, p % w);
        for q in [(x + 1 < w).then(|| p + 1), (y + 1 < h).then(|| p + w)].into_iter().flatten() {
            let b = leaves[q];
            if a == b {
                within[a as usize] += 1.0;
            } else {
                *pair_edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
    }
    for (&(a, b), &n) in &pair_edges {
        let (top, _, _) = tree.lca(a, b);
        let v = tree.level[top as usize];
        let n = n as f64;
        for l in [a, b] {
            incident[l as usize].0 += n;
            incident[l as usize].1 += n * v;
        }
        cross[top as usize].0 += n;
        cross[top as usize].1 += n * v;
    }
    for (i, m) in ucm.merges().iter().enumerate() {
        let id = nl + i;
        for c in [m.left as usize, m.right as usize] {
            first[id] = first[id].min(first[c]);
            within[id] += within[c];
            cross[id].0 += cross[c].0;
            cross[id].1 += cross[c].1;
            incident[id].0 += incident[c].0;
            incident[id].1 += incident[c].1;
        }
    }
    let node_stats: Vec<Stats> = (0..total)
        .map(|v| Stats {
            boundary_count: incident[v].0 - 2.0 * cross[v].0,
            boundary_sum: incident[v].1 - 2.0 * cross[v].1,
            interior_count: cross[v].0 + within[v],
            interior_sum: cross[v].1,
        })
        .collect();

    let mut candidates: Vec<Candidate> = (0..total)
        .map(|v| Candidate {
            runs: [run[v], (0, 0)],
            area: tree.area[v],
            first: first[v],
            score: node_stats[v].score(),
        })
        .collect();

    // unions of regions adjacent at some level, found by replaying merges
    let mut adj: Vec<BTreeMap<u32, u64>> = vec![BTreeMap::new(); total];
    for (&(a, b), &n) in &pair_edges {
        adj[a as usize].insert(b, n);
        adj[b as usize].insert(a, n);
    }
    let mut union = |a: u32, b: u32, n: u64| {
        let (sa, sb) = (node_stats[a as usize], node_stats[b as usize]);
        let v = tree.level[tree.lca(a, b).0 as usize];
        let n = n as f64;
        let s = Stats {
            boundary_count: sa.boundary_count + sb.boundary_count - 2.0 * n,
            boundary_sum: sa.boundary_sum + sb.boundary_sum - 2.0 * n * v,
            interior_count: sa.interior_count + sb.interior_count + n,
            interior_sum: sa.interior_sum + sb.interior_sum + n * v,
        };
        candidates.push(Candidate {
            runs: [run[a as usize], run[b as usize]],
            area: tree.area[a as usize] + tree.area[b as usize],
            first: first[a as usize].min(first[b as usize]),
            score: s.score(),
        });
    };
    for (&(a, b), &n) in &pair_edges {
        union(a, b, n);
    }
    for (i, m) in ucm.merges().iter().enumerate() {
        let id = (nl + i) as u32;
        let mut joined = std::mem::take(&mut adj[m.left as usize]);
        for (r, n) in std::mem::take(&mut adj[m.right as usize]) {
            *joined.entry(r).or_insert(0) += n;
        }
        joined.remove(&m.left);
        joined.remove(&m.right);
        for (&r, &n) in &joined {
            let ar = &mut adj[r as usize];
            ar.remove(&m.left);
            ar.remove(&m.right);
            ar.insert(id, n);
            union(r, id, n);
        }
        adj[id as usize] = joined;
    }

    candidates.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.area.cmp(&b.area))
            .then(a.first.cmp(&b.first))
            .then(a.runs.cmp(&b.runs))
    });
    let mut kept: Vec<Candidate> = Vec::new();
    let mut by_area: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for c in candidates {
        if kept.len() >= max_n {
            break;
        }
        let lo = (c.area as f64 * DEDUP_IOU).floor() as u64;
        let hi = (c.area as f64 / DEDUP_IOU).ceil() as u64;
        let duplicate = by_area
            .range(lo..=hi)
            .flat_map(|(_, v)| v.iter())
            .any(|&k| iou(&c, &kept[k], &prefix) > DEDUP_IOU);
        if !duplicate {
            by_area.entry(c.area).or_default().push(kept.len());
            kept.push(c);
        }
    }

    let mut position = vec![0u32; nl];
    for (i, &l) in order.iter().enumerate() {
        position[l as usize] = i as u32;
    }
    kept.iter()
        .map(|c| {
            let mask = Mask::from_fn(h, w, |y, x| {
                let pos = position[leaves[y * w + x] as usize];
                c.runs.iter().any(|&(lo, hi)| pos >= lo && pos < hi)
            });
            ProposalMask::new(mask, c.score).expect("regions are nonempty")
        })
        .collect()
}
