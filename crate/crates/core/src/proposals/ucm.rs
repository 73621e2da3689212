//! Ultrametric contour maps: watershed oversegmentation of a contour map
//! followed by greedy merging of the weakest boundary.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};

use crate::error::{Error, Result};
use crate::grid::Map;

/// Regions `left` and `right` (leaf or earlier merge ids) join at `level`.
/// The new region gets id `leaf_count + index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    pub left: u32,
    pub right: u32,
    pub level: f64,
}

/// Hierarchical segmentation: finest partition (`leaves`) plus the merge
/// sequence, with merge levels non-decreasing. Thresholding at `t` applies
/// every merge with `level <= t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ucm {
    height: usize,
    width: usize,
    leaves: Vec<u32>,
    leaf_count: usize,
    merges: Vec<Merge>,
}

/// Total order on f64 for heap keys.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Key(f64, u32, u32);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1)).then(self.2.cmp(&other.2))
    }
}

fn neighbours(h: usize, w: usize, p: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    [
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
    ]
    .into_iter()
    .flatten()
}

/// Priority-flood watershed from the regional minima (plateaus with no
/// lower neighbour). Returns the basin of every pixel and the basin count.
fn watershed(c: &[f32], h: usize, w: usize) -> (Vec<u32>, usize) {
    let n = h * w;
    let mut label = vec![u32::MAX; n];
    let mut seen = vec![false; n];
    let mut basins = 0u32;
    let mut queue = VecDeque::new();
    let mut plateau = Vec::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        plateau.clear();
        queue.push_back(s);
        let mut minimum = true;
        while let Some(p) = queue.pop_front() {
            plateau.push(p);
            for q in neighbours(h, w, p) {
                if c[q] < c[s] {
                    minimum = false;
                } else if c[q] == c[s] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        if minimum {
            for &p in &plateau {
                label[p] = basins;
            }
            basins += 1;
        }
    }
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<_>, q: usize, l: u32| {
        heap.push(Reverse((Key(c[q] as f64, 0, 0), seq, q as u32, l)));
        seq += 1;
    };
    for p in 0..n {
        if label[p] != u32::MAX {
            for q in neighbours(h, w, p) {
                if label[q] == u32::MAX {
                    push(&mut heap, q, label[p]);
                }
            }
        }
    }
    while let Some(Reverse((_, _, p, l))) = heap.pop() {
        let p = p as usize;
        if label[p] != u32::MAX {
            continue;
        }
        label[p] = l;
        for q in neighbours(h, w, p) {
            if label[q] == u32::MAX {
                push(&mut heap, q, l);
            }
        }
    }
    (label, basins as usize)
}

/// Relabels 4-connected components of equal labels in scanline order.
fn components(labels: &[u32], h: usize, w: usize) -> (Vec<u32>, usize) {
    let mut out = vec![u32::MAX; labels.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for s in 0..labels.len() {
        if out[s] != u32::MAX {
            continue;
        }
        out[s] = next;
        queue.push_back(s);
        while let Some(p) = queue.pop_front() {
            for q in neighbours(h, w, p) {
                if out[q] == u32::MAX && labels[q] == labels[s] {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (out, next as usize)
}

/// Pixel-edge counts between leaves, keyed `(a, b)` with `a < b`; each edge
/// also carries the contour strength `max(c_p, c_q)`.
fn leaf_edges(leaves: &[u32], c: &[f32], h: usize, w: usize) -> BTreeMap<(u32, u32), (u64, f64)> {
    let mut edges = BTreeMap::new();
    let mut add = |p: usize, q: usize| {
        let (a, b) = (leaves[p], leaves[q]);
        if a != b {
            let e = edges.entry((a.min(b), a.max(b))).or_insert((0u64, 0.0f64));
            e.0 += 1;
            e.1 += c[p].max(c[q]) as f64;
        }
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                add(p, p + 1);
            }
            if y + 1 < h {
                add(p, p + w);
            }
        }
    }
    edges
}

/// Repeatedly merges the adjacent pair with the lowest mean boundary
/// strength (ties to the lower ids).
fn greedy_merge(leaf_count: usize, edges: &BTreeMap<(u32, u32), (u64, f64)>) -> Vec<Merge> {
    let total = 2 * leaf_count.max(1) - 1;
    let mut adj: Vec<BTreeMap<u32, (u64, f64)>> = vec![BTreeMap::new(); total];
    let mut heap = BinaryHeap::new();
    for (&(a, b), &(n, s)) in edges {
        adj[a as usize].insert(b, (n, s));
        adj[b as usize].insert(a, (n, s));
        heap.push(Reverse(Key(s / n as f64, a, b)));
    }
    let mut alive = vec![true; total];
    let mut merges = Vec::with_capacity(leaf_count.saturating_sub(1));
    let mut last = 0.0f64;
    while let Some(Reverse(Key(mean, a, b))) = heap.pop() {
        if !alive[a as usize] || !alive[b as usize] {
            continue;
        }
        let id = (leaf_count + merges.len()) as u32;
        last = mean.max(last);
        merges.push(Merge {
            left: a,
            right: b,
            level: last,
        });
        alive[a as usize] = false;
        alive[b as usize] = false;
        let mut joined = std::mem::take(&mut adj[a as usize]);
        for (r, (n, s)) in std::mem::take(&mut adj[b as usize]) {
            let e = joined.entry(r).or_insert((0, 0.0));
            e.0 += n;
            e.1 += s;
        }
        joined.remove(&a);
        joined.remove(&b);
        for (&r, &(n, s)) in &joined {
            let ar = &mut adj[r as usize];
            ar.remove(&a);
            ar.remove(&b);
            ar.insert(id, (n, s));
            heap.push(Reverse(Key(s / n as f64, r.min(id), r.max(id))));
        }
        adj[id as usize] = joined;
    }
    merges
}

/// Parent links, levels and areas of a merge tree, with binary lifting for
/// ancestor queries.
pub(crate) struct Tree {
    pub parent: Vec<u32>,
    pub level: Vec<f64>,
    pub area: Vec<u64>,
    pub children: Vec<Option<(u32, u32)>>,
    depth: Vec<u32>,
    up: Vec<Vec<u32>>,
}

impl Tree {
    pub fn new(leaves: &[u32], leaf_count: usize, merges: &[Merge]) -> Tree {
        let total = leaf_count + merges.len();
        let mut parent = vec![u32::MAX; total];
        let mut level = vec![0.0; total];
        let mut area = vec![0u64; total];
        let mut children = vec![None; total];
        for &l in leaves {
            area[l as usize] += 1;
        }
        for (i, m) in merges.iter().enumerate() {
            let id = leaf_count + i;
            parent[m.left as usize] = id as u32;
            parent[m.right as usize] = id as u32;
            level[id] = m.level;
            area[id] = area[m.left as usize] + area[m.right as usize];
            children[id] = Some((m.left, m.right));
        }
        let mut depth = vec![0u32; total];
        for v in (0..total).rev() {
            if parent[v] != u32::MAX {
                depth[v] = depth[parent[v] as usize] + 1;
            }
        }
        let mut up = vec![parent.iter().map(|&p| if p == u32::MAX { 0 } else { p }).collect::<Vec<u32>>()];
        for v in 0..total {
            if parent[v] == u32::MAX {
                up[0][v] = v as u32;
            }
        }
        let max_depth = depth.iter().copied().max().unwrap_or(0);
        while (1u32 << up.len()) <= max_depth {
            let prev = up.last().expect("nonempty");
            let next = (0..total).map(|v| prev[prev[v] as usize]).collect();
            up.push(next);
        }
        Tree {
            parent,
            level,
            area,
            children,
            depth,
            up,
        }
    }

    /// Lowest common ancestor of two regions, neither an ancestor of the
    /// other, together with the two children of it on the way down to `a`
    /// and `b`.
    pub fn lca(&self, mut a: u32, mut b: u32) -> (u32, u32, u32) {
        let swapped = self.depth[a as usize] < self.depth[b as usize];
        if swapped {
            std::mem::swap(&mut a, &mut b);
        }
        let diff = self.depth[a as usize] - self.depth[b as usize];
        for k in 0..self.up.len() {
            if diff >> k & 1 == 1 {
                a = self.up[k][a as usize];
            }
        }
        debug_assert_ne!(a, b, "one region contains the other");
        for k in (0..self.up.len()).rev() {
            let (ua, ub) = (self.up[k][a as usize], self.up[k][b as usize]);
            if ua != ub {
                a = ua;
                b = ub;
            }
        }
        let top = self.parent[a as usize];
        if swapped {
            (top, b, a)
        } else {
            (top, a, b)
        }
    }
}

/// Moves ridge pixels to the smaller side of the boundary they sit on: a
/// pixel joins a neighbouring leaf whose branch (just below the merge that
/// joins the two) is smaller than its own, provided the neighbour's
/// contour value does not exceed its own. Contour pixels are thereby owned
/// by the enclosed region rather than split by flooding order.
fn assign_ridges(c: &[f32], leaves: &mut [u32], tree: &Tree, h: usize, w: usize) {
    let mut cache: HashMap<(u32, u32), (u64, u64)> = HashMap::new();
    for _ in 0..(h + w) {
        let current = leaves.to_vec();
        let mut changed = false;
        for p in 0..h * w {
            let a = current[p];
            let mut best: Option<(u64, u32)> = None;
            for q in neighbours(h, w, p) {
                let b = current[q];
                if b == a || c[q] > c[p] {
                    continue;
                }
                let (own, other) = *cache.entry((a, b)).or_insert_with(|| {
                    let (_, ca, cb) = tree.lca(a, b);
                    (tree.area[ca as usize], tree.area[cb as usize])
                });
                if other < own && best.is_none_or(|(s, l)| (other, b) < (s, l)) {
                    best = Some((other, b));
                }
            }
            if let Some((_, b)) = best {
                leaves[p] = b;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
}

impl Ucm {
    /// Builds the hierarchy of a contour map with values in `[0, 1]`.
    pub fn from_contours(contours: &Map) -> Result<Ucm> {
        let (h, w) = contours.dims();
        if h == 0 || w == 0 {
            return Err(Error::invalid("contour_to_ucm", "empty contour map"));
        }
        if let Some(v) = contours.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("contour_to_ucm", format!("contour value {v} outside [0, 1]")));
        }
        let c = contours.data();
        let (basins, count) = watershed(c, h, w);
        let first = greedy_merge(count, &leaf_edges(&basins, c, h, w));
        let tree = Tree::new(&basins, count, &first);
        let mut owned = basins;
        assign_ridges(c, &mut owned, &tree, h, w);
        let (leaves, leaf_count) = components(&owned, h, w);
        let merges = greedy_merge(leaf_count, &leaf_edges(&leaves, c, h, w));
        Ok(Ucm {
            height: h,
            width: w,
            leaves,
            leaf_count,
            merges,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Finest-level region of every pixel.
    pub fn leaves(&self) -> &[u32] {
        &self.leaves
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Distinct merge levels in increasing order.
    pub fn levels(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.merges.iter().map(|m| m.level).collect();
        v.dedup();
        v
    }

    pub(crate) fn tree(&self) -> Tree {
        Tree::new(&self.leaves, self.leaf_count, &self.merges)
    }

    /// Region index of every pixel after applying the merges with
    /// `level <= t`; regions are numbered in scanline order of first pixel.
    pub fn labels_at(&self, t: f64) -> Vec<u32> {
        let mut root: Vec<u32> = (0..(self.leaf_count + self.merges.len()) as u32).collect();
        for (i, m) in self.merges.iter().enumerate() {
            if m.level > t {
                break;
            }
            let id = (self.leaf_count + i) as u32;
            root[m.left as usize] = id;
            root[m.right as usize] = id;
        }
        let find = |mut v: u32| {
            while root[v as usize] != v {
                v = root[v as usize];
            }
            v
        };
        let mut ids: HashMap<u32, u32> = HashMap::new();
        self.leaves
            .iter()
            .map(|&l| {
                let r = find(l);
                let next = ids.len() as u32;
                *ids.entry(r).or_insert(next)
            })
            .collect()
    }

    pub fn region_count_at(&self, t: f64) -> usize {
        self.labels_at(t).iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// UCM value of every pixel edge: the level at which the regions on
    /// either side merge, 0 inside a leaf. Returns the `h × (w-1)` edges to
    /// the right and the `(h-1) × w` edges below, row-major.
    pub fn edge_values(&self) -> (Vec<f64>, Vec<f64>) {
        let (h, w) = self.dims();
        let tree = self.tree();
        let value = |p: usize, q: usize| {
            let (a, b) = (self.leaves[p], self.leaves[q]);
            if a == b {
                0.0
            } else {
                tree.level[tree.lca(a, b).0 as usize]
            }
        };
        let right = (0..h).flat_map(|y| (0..w - 1).map(move |x| (y, x))).map(|(y, x)| value(y * w + x, y * w + x + 1));
        let down = (0..h - 1).flat_map(|y| (0..w).map(move |x| (y, x))).map(|(y, x)| value(y * w + x, y * w + x + w));
        (right.collect(), down.collect())
    }

    /// Per-pixel boundary strength: each boundary edge marks the pixel on
    /// the side of the smaller branch (both on a tie) with its value, so
    /// that `from_contours(strength_map())` recovers the same regions.
    pub fn strength_map(&self) -> Map {
        let (h, w) = self.dims();
        let tree = self.tree();
        let mut out = vec![0.0f32; h * w];
        let mut mark = |p: usize, q: usize| {
            let (a, b) = (self.leaves[p], self.leaves[q]);
            if a == b {
                return;
            }
            let (top, ca, cb) = tree.lca(a, b);
            let v = tree.level[top as usize] as f32;
            let (sa, sb) = (tree.area[ca as usize], tree.area[cb as usize]);
            if sa <= sb {
                out[p] = out[p].max(v);
            }
            if sb <= sa {
                out[q] = out[q].max(v);
            }
        };
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                if x + 1 < w {
                    mark(p, p + 1);
                }
                if y + 1 < h {
                    mark(p, p + w);
                }
            }
        }
        Map::from_vec(h, w, out).expect("sized")
    }
}

/// Hierarchical segmentation of one contour map.
pub fn contour_to_ucm(contours: &Map) -> Result<Ucm> {
    Ucm::from_contours(contours)
}

/// Averages the per-pixel strengths of four hierarchies of the same size
/// and rebuilds a single hierarchy from the mean.
pub fn combine_hierarchies(ucms: &[Ucm]) -> Result<Ucm> {
    if ucms.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "combine_hierarchies",
            dim: "hierarchy count",
            expected: 4,
            actual: ucms.len(),
        });
    }
    let (h, w) = ucms[0].dims();
    for u in &ucms[1..] {
        if u.dims() != (h, w) {
            return Err(Error::invalid(
                "combine_hierarchies",
                format!("hierarchies of size {h}x{w} and {}x{}", u.height, u.width),
            ));
        }
    }
    let maps: Vec<Map> = ucms.iter().map(Ucm::strength_map).collect();
    let mean = Map::from_fn(h, w, |y, x| maps.iter().map(|m| m.at(y, x)).sum::<f32>() / 4.0);
    Ucm::from_contours(&mean)
}
