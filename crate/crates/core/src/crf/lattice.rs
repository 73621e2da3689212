//! Permutohedral lattice for high-dimensional Gaussian filtering
//! (splat, blur along the d+1 lattice directions, slice).

use std::collections::HashMap;

/// Lattice built once for a set of feature vectors and reused for any number
/// of value channels.
pub struct Permutohedral {
    d: usize,
    n: usize,
    /// Per pixel, the `d+1` enclosing lattice vertices.
    offsets: Vec<u32>,
    weights: Vec<f64>,
    /// Per vertex and direction, the two blur neighbours (`u32::MAX` if absent).
    neighbours: Vec<[u32; 2]>,
    vertices: usize,
    alpha: f64,
}

impl Permutohedral {
    /// `features` holds `n` points of dimension `d`, already divided by their
    /// standard deviations so the target kernel is `exp(−‖f_i − f_j‖² / 2)`.
    pub fn new(features: &[f64], d: usize) -> Self {
        let mut lattice = Permutohedral::construct(features, d);
        lattice.alpha = 1.0 / isolated_response(d);
        lattice
    }

    fn construct(features: &[f64], d: usize) -> Self {
        assert!(d >= 1 && features.len() % d == 0);
        let n = features.len() / d;
        let dp1 = d + 1;
        let inv_std = (2.0f64 / 3.0).sqrt() * dp1 as f64;
        let scale: Vec<f64> = (0..d)
            .map(|i| inv_std / (((i + 1) * (i + 2)) as f64).sqrt())
            .collect();

        let mut table: HashMap<Vec<i32>, u32> = HashMap::new();
        let mut keys: Vec<i32> = Vec::new();
        let mut offsets = Vec::with_capacity(n * dp1);
        let mut weights = Vec::with_capacity(n * dp1);

        let mut elevated = vec![0.0f64; dp1];
        let mut rem0 = vec![0i32; dp1];
        let mut rank = vec![0i32; dp1];
        let mut bary = vec![0.0f64; d + 2];
        let mut key = vec![0i32; d];
        let down = 1.0 / dp1 as f64;
        for p in 0..n {
            let f = &features[p * d..(p + 1) * d];
            let mut sm = 0.0;
            for i in (1..=d).rev() {
                let cf = f[i - 1] * scale[i - 1];
                elevated[i] = sm - i as f64 * cf;
                sm += cf;
            }
            elevated[0] = sm;

            let mut sum = 0i32;
            for i in 0..dp1 {
                let v = elevated[i] * down;
                let up = (v.ceil() as i32) * dp1 as i32;
                let dn = (v.floor() as i32) * dp1 as i32;
                rem0[i] = if up as f64 - elevated[i] < elevated[i] - dn as f64 { up } else { dn };
                sum += rem0[i];
            }
            let sum = sum / dp1 as i32;

            rank.iter_mut().for_each(|r| *r = 0);
            for i in 0..d {
                let di = elevated[i] - rem0[i] as f64;
                for j in i + 1..dp1 {
                    if di < elevated[j] - rem0[j] as f64 {
                        rank[i] += 1;
                    } else {
                        rank[j] += 1;
                    }
                }
            }
            let dp1i = dp1 as i32;
            if sum > 0 {
                for i in 0..dp1 {
                    if rank[i] >= dp1i - sum {
                        rem0[i] -= dp1i;
                        rank[i] += sum - dp1i;
                    } else {
                        rank[i] += sum;
                    }
                }
            } else if sum < 0 {
                for i in 0..dp1 {
                    if rank[i] < -sum {
                        rem0[i] += dp1i;
                        rank[i] += dp1i + sum;
                    } else {
                        rank[i] += sum;
                    }
                }
            }

            bary.iter_mut().for_each(|b| *b = 0.0);
            for i in 0..dp1 {
                let v = (elevated[i] - rem0[i] as f64) * down;
                bary[d - rank[i] as usize] += v;
                bary[d + 1 - rank[i] as usize] -= v;
            }
            bary[0] += 1.0 + bary[d + 1];

            for r in 0..dp1 {
                for i in 0..d {
                    key[i] = rem0[i] + r as i32;
                    if rank[i] > (d - r) as i32 {
                        key[i] -= dp1i;
                    }
                }
                let next = table.len() as u32;
                let idx = *table.entry(key.clone()).or_insert_with(|| {
                    keys.extend_from_slice(&key);
                    next
                });
                offsets.push(idx);
                weights.push(bary[r]);
            }
        }

        let vertices = table.len();
        let mut neighbours = vec![[u32::MAX; 2]; vertices * dp1];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for v in 0..vertices {
            let k = &keys[v * d..(v + 1) * d];
            for j in 0..dp1 {
                for i in 0..d {
                    n1[i] = k[i] - 1;
                    n2[i] = k[i] + 1;
                }
                if j < d {
                    n1[j] = k[j] + d as i32;
                    n2[j] = k[j] - d as i32;
                }
                neighbours[v * dp1 + j] = [
                    table.get(&n1).copied().unwrap_or(u32::MAX),
                    table.get(&n2).copied().unwrap_or(u32::MAX),
                ];
            }
        }

        Permutohedral {
            d,
            n,
            offsets,
            weights,
            neighbours,
            vertices,
            alpha: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn vertices(&self) -> usize {
        self.vertices
    }

    fn filter_raw(&self, values: &[f64], channels: usize) -> Vec<f64> {
        let dp1 = self.d + 1;
        let mut grid = vec![0.0f64; self.vertices * channels];
        for p in 0..self.n {
            let v = &values[p * channels..(p + 1) * channels];
            for r in 0..dp1 {
                let o = self.offsets[p * dp1 + r] as usize * channels;
                let w = self.weights[p * dp1 + r];
                for c in 0..channels {
                    grid[o + c] += w * v[c];
                }
            }
        }
        let mut next = vec![0.0f64; grid.len()];
        for j in 0..dp1 {
            for v in 0..self.vertices {
                let [a, b] = self.neighbours[v * dp1 + j];
                for c in 0..channels {
                    let mut s = grid[v * channels + c];
                    if a != u32::MAX {
                        s += 0.5 * grid[a as usize * channels + c];
                    }
                    if b != u32::MAX {
                        s += 0.5 * grid[b as usize * channels + c];
                    }
                    next[v * channels + c] = s;
                }
            }
            std::mem::swap(&mut grid, &mut next);
        }
        let mut out = vec![0.0f64; self.n * channels];
        for p in 0..self.n {
            for r in 0..dp1 {
                let o = self.offsets[p * dp1 + r] as usize * channels;
                let w = self.weights[p * dp1 + r];
                for c in 0..channels {
                    out[p * channels + c] += w * grid[o + c];
                }
            }
        }
        out
    }

    /// Rescales the filter so that, over up to `samples` evenly spaced
    /// points, the total of `Σ_j k_ij` matches the exact kernel sums.
    pub fn calibrate(&mut self, features: &[f64], samples: usize) {
        let (d, n) = (self.d, self.n);
        if n == 0 {
            return;
        }
        let approx = self.filter(&vec![1.0; n], 1);
        let step = (n / samples.max(1)).max(1);
        let (mut exact, mut lattice) = (0.0, 0.0);
        for i in (0..n).step_by(step) {
            let fi = &features[i * d..(i + 1) * d];
            exact += features
                .chunks_exact(d)
                .map(|fj| (-fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0).exp())
                .sum::<f64>();
            lattice += approx[i];
        }
        if lattice > 0.0 {
            self.alpha *= exact / lattice;
        }
    }

    /// Approximates `out_i = Σ_j exp(−‖f_i − f_j‖² / 2) · v_j` (including
    /// `j = i`) for `channels` values per point.
    pub fn filter(&self, values: &[f64], channels: usize) -> Vec<f64> {
        assert_eq!(values.len(), self.n * channels);
        let mut out = self.filter_raw(values, channels);
        out.iter_mut().for_each(|v| *v *= self.alpha);
        out
    }
}

/// Mean response of a lone point to itself over a fixed set of positions.
/// The filter is divided by it so an isolated point keeps weight 1, as the
/// exact kernel does.
fn isolated_response(d: usize) -> f64 {
    let samples = 64;
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut total = 0.0;
    for _ in 0..samples {
        let f: Vec<f64> = (0..d)
            .map(|_| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 * 10.0
            })
            .collect();
        total += Permutohedral::construct(&f, d).filter_raw(&[1.0], 1)[0];
    }
    total / samples as f64
}
