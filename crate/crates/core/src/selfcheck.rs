//! Release-gate checks shared by the `selfcheck` command and the test suites:
//! finite-difference gradient checks, CRF fast-vs-exact comparison and the
//! golden metric fixtures.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::dataio::{load_labels, load_map, load_mask};
use crate::error::{Error, Result};
use crate::grid::{LabelMap, Mask};
use crate::metrics::{self, InstanceImage, InstancePrediction};
use crate::network::MsrNet;
use crate::tensor::{Graph, ParamId, ParamStore, Shape, Tensor, Var};

/// Relative error used by gradient checks: `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose `±ε` probe crossed a ReLU or max-pool branch, where
    /// the central difference does not estimate the derivative.
    pub skipped: usize,
}

impl GradCheck {
    fn record(&mut self, analytic: f64, plus: f64, minus: f64, eps: f64, smooth: bool) {
        if !smooth {
            self.skipped += 1;
            return;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        self.max_relative_error = self.max_relative_error.max(relative_error(analytic, numeric));
        self.checked += 1;
    }

    pub fn merge(self, other: GradCheck) -> GradCheck {
        GradCheck {
            max_relative_error: self.max_relative_error.max(other.max_relative_error),
            checked: self.checked + other.checked,
            skipped: self.skipped + other.skipped,
        }
    }
}

/// Compares reverse-mode gradients of `f` with respect to every element of
/// `inputs` against central finite differences of the forward pass alone.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], eps: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = inputs
        .iter()
        .map(|t| g.leaf(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let base = g.branch_signature();
    let eval = |xs: &[Tensor<f64>]| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let vars = xs.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = f(&mut g, &vars)?;
        Ok((g.value(out).item(), g.branch_signature()))
    };
    let mut report = GradCheck::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape());
        let analytic = grads.get(v).unwrap_or(&zero).clone();
        for i in 0..inputs[k].shape().len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let (plus, sp) = eval(&work)?;
            work[k].data_mut()[i] = orig - eps;
            let (minus, sm) = eval(&work)?;
            work[k].data_mut()[i] = orig;
            report.record(analytic.data()[i], plus, minus, eps, sp == base && sm == base);
        }
    }
    Ok(report)
}

/// Finite-difference check of every parameter of a network against the
/// loss `weighted_ce(fused foreground, target)`.
pub fn check_network_gradients(
    net: &MsrNet<f64>,
    image: &Tensor<f64>,
    target: &Tensor<f64>,
    positive_weight: f64,
    eps: f64,
) -> Result<GradCheck> {
    network_check(net, image, target, positive_weight, eps, |_, len| (0..len).collect())
}

/// Like [`check_network_gradients`] but probes only `per_param` randomly
/// chosen coordinates of each parameter tensor.
pub fn check_network_gradients_sampled(
    net: &MsrNet<f64>,
    image: &Tensor<f64>,
    target: &Tensor<f64>,
    positive_weight: f64,
    eps: f64,
    per_param: usize,
    seed: u64,
) -> Result<GradCheck> {
    network_check(net, image, target, positive_weight, eps, |pi, len| {
        let mut rng = seeded(seed ^ (pi as u64).wrapping_mul(0x9E37_79B9));
        rand::seq::index::sample(&mut rng, len, per_param.min(len)).into_vec()
    })
}

fn network_check(
    net: &MsrNet<f64>,
    image: &Tensor<f64>,
    target: &Tensor<f64>,
    positive_weight: f64,
    eps: f64,
    coords: impl Fn(usize, usize) -> Vec<usize>,
) -> Result<GradCheck> {
    let loss_of = |net: &MsrNet<f64>, store: Option<&mut ParamStore<f64>>| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let out = net.forward(&mut g, image)?;
        let p = g.slice_channels(out.fused, 1, 1)?;
        let l = g.weighted_cross_entropy(p, target, positive_weight)?;
        if let Some(store) = store {
            g.backward_into(l, store)?;
        }
        Ok((g.value(l).item(), g.branch_signature()))
    };
    let mut store = net.params().clone();
    store.zero_grad();
    let (_, base) = loss_of(net, Some(&mut store))?;
    let mut work = net.clone();
    let mut report = GradCheck::default();
    for pi in 0..store.len() {
        let id = ParamId(pi);
        for i in coords(pi, store.get(id).value.shape().len()) {
            let orig = net.params().get(id).value.data()[i];
            work.params_mut().get_mut(id).value.data_mut()[i] = orig + eps;
            let (plus, sp) = loss_of(&work, None)?;
            work.params_mut().get_mut(id).value.data_mut()[i] = orig - eps;
            let (minus, sm) = loss_of(&work, None)?;
            work.params_mut().get_mut(id).value.data_mut()[i] = orig;
            let smooth = sp == base && sm == base;
            report.record(store.get(id).grad.data()[i], plus, minus, eps, smooth);
        }
    }
    Ok(report)
}

/// Replaces zero-initialised biases with small random values. At a zero
/// bias a unit fed by dead inputs sits exactly on its ReLU kink, where the
/// one-sided finite difference disagrees with any subgradient.
pub fn randomize_biases(net: &mut MsrNet<f64>, seed: u64) {
    let mut rng = seeded(seed);
    for p in net.params_mut().iter_mut() {
        if p.name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.1..0.1));
        }
    }
}

/// Uniform random tensor in `[lo, hi)`.
pub fn random_tensor(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..shape.len()).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// Random tensor whose entries are pairwise separated by at least
/// `(hi − lo) / len`, so max-pool windows have no near-ties that a
/// finite-difference step could cross.
pub fn distinct_tensor(rng: &mut impl Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.len();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let step = (hi - lo) / n as f64;
    let data = order.iter().map(|&k| lo + step * (k as f64 + 0.5)).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// Sums `x` weighted by a fixed random tensor, so every output element
/// reaches the checked scalar with its own weight.
fn project(g: &mut Graph<f64>, x: Var, seed: u64) -> Result<Var> {
    let w = random_tensor(&mut seeded(seed ^ 0xABCD), g.shape(x), -1.0, 1.0);
    let w = g.input(w)?;
    let y = g.mul(x, w)?;
    g.sum(y)
}

type OpCase = fn(u64) -> Result<GradCheck>;

fn op_cases() -> Vec<(&'static str, OpCase)> {
    use crate::tensor::{ConvSpec, PoolSpec};
    const EPS: f64 = 1e-4;
    vec![
        ("conv2d", |s| {
            let mut rng = seeded(s);
            let x = random_tensor(&mut rng, Shape::new(2, 3, 5, 5), -1.0, 1.0);
            let w = random_tensor(&mut rng, Shape::new(4, 3, 3, 3), -1.0, 1.0);
            let b = random_tensor(&mut rng, Shape::new(1, 4, 1, 1), -1.0, 1.0);
            let spec = [ConvSpec::default(), ConvSpec::new(2, 1, 1), ConvSpec::same(3, 2)][s as usize % 3];
            check_gradients(&[x, w, b], EPS, |g, v| {
                let y = g.conv2d(v[0], v[1], Some(v[2]), spec)?;
                project(g, y, s)
            })
        }),
        ("relu", |s| {
            let x = random_tensor(&mut seeded(s), Shape::new(2, 2, 4, 4), -1.0, 1.0);
            check_gradients(&[x], EPS, |g, v| {
                let y = g.relu(v[0])?;
                project(g, y, s)
            })
        }),
        ("max_pool2d", |s| {
            let x = distinct_tensor(&mut seeded(s), Shape::new(2, 2, 6, 6), -1.0, 1.0);
            let spec = if s % 2 == 0 { PoolSpec::new(2, 2) } else { PoolSpec::new(3, 1).with_padding(1) };
            check_gradients(&[x], EPS, |g, v| {
                let y = g.max_pool2d(v[0], spec)?;
                project(g, y, s)
            })
        }),
        ("resize", |s| {
            let mut rng = seeded(s);
            let x = random_tensor(&mut rng, Shape::new(1, 2, 4, 5), -1.0, 1.0);
            let (h, w) = (rng.gen_range(1..10), rng.gen_range(1..10));
            check_gradients(&[x], EPS, |g, v| {
                let y = g.resize(v[0], h, w)?;
                project(g, y, s)
            })
        }),
        ("concat", |s| {
            let mut rng = seeded(s);
            let a = random_tensor(&mut rng, Shape::new(2, 1, 3, 3), -1.0, 1.0);
            let b = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            check_gradients(&[a, b], EPS, |g, v| {
                let y = g.concat(v)?;
                project(g, y, s)
            })
        }),
        ("slice_channels", |s| {
            let x = random_tensor(&mut seeded(s), Shape::new(2, 4, 3, 3), -1.0, 1.0);
            let start = s as usize % 3;
            check_gradients(&[x], EPS, |g, v| {
                let y = g.slice_channels(v[0], start, 2)?;
                project(g, y, s)
            })
        }),
        ("crop", |s| {
            let x = random_tensor(&mut seeded(s), Shape::new(1, 2, 6, 7), -1.0, 1.0);
            let (top, left) = (s as usize % 3, s as usize % 4);
            check_gradients(&[x], EPS, |g, v| {
                let y = g.crop(v[0], top, left, 3, 3)?;
                project(g, y, s)
            })
        }),
        ("softmax_channels", |s| {
            let x = random_tensor(&mut seeded(s), Shape::new(2, 3, 3, 2), -3.0, 3.0);
            check_gradients(&[x], EPS, |g, v| {
                let y = g.softmax_channels(v[0])?;
                project(g, y, s)
            })
        }),
        ("add", |s| {
            let mut rng = seeded(s);
            let a = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            let b = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            check_gradients(&[a, b], EPS, |g, v| {
                let y = g.add(v[0], v[1])?;
                project(g, y, s)
            })
        }),
        ("mul", |s| {
            let mut rng = seeded(s);
            let a = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            let b = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            check_gradients(&[a, b], EPS, |g, v| {
                let y = g.mul(v[0], v[1])?;
                project(g, y, s)
            })
        }),
        ("mul_map", |s| {
            let mut rng = seeded(s);
            let x = random_tensor(&mut rng, Shape::new(2, 3, 3, 3), -1.0, 1.0);
            let m = random_tensor(&mut rng, Shape::new(2, 1, 3, 3), -1.0, 1.0);
            check_gradients(&[x, m], EPS, |g, v| {
                let y = g.mul_map(v[0], v[1])?;
                project(g, y, s)
            })
        }),
        ("sum", |s| {
            let x = random_tensor(&mut seeded(s), Shape::new(2, 2, 3, 3), -1.0, 1.0);
            check_gradients(&[x], EPS, |g, v| {
                let y = g.sum(v[0])?;
                g.mul(y, y)
            })
        }),
        ("scale", |s| {
            let mut rng = seeded(s);
            let x = random_tensor(&mut rng, Shape::new(2, 2, 3, 3), -1.0, 1.0);
            let f = rng.gen_range(-2.0..2.0);
            check_gradients(&[x], EPS, |g, v| {
                let y = g.scale(v[0], f)?;
                project(g, y, s)
            })
        }),
        ("weighted_cross_entropy", |s| {
            let mut rng = seeded(s);
            let p = random_tensor(&mut rng, Shape::new(2, 1, 3, 3), 0.05, 0.95);
            let t = random_tensor(&mut rng, Shape::new(2, 1, 3, 3), 0.0, 1.0).map(|v| if v > 0.5 { 1.0 } else { 0.0 });
            let w = [1.0, 2.0, 10.0][s as usize % 3];
            check_gradients(&[p], EPS, |g, v| g.weighted_cross_entropy(v[0], &t, w))
        }),
    ]
}

/// Finite-difference check (fp64, ε = 1e-4, tolerance 1e-3) of every
/// differentiable graph op over `seeds` random cases each.
pub fn op_gradient_checks(seeds: usize) -> Result<Vec<Check>> {
    op_cases()
        .into_iter()
        .map(|(name, case)| {
            let mut total = GradCheck::default();
            for s in 0..seeds {
                total = total.merge(case(9000 + s as u64)?);
            }
            Ok(grad_check(&format!("grad.{name}"), seeds, total, total.skipped * 100 <= total.checked))
        })
        .collect()
}

/// Finite-difference check of every parameter of a complete MSRNet (all
/// stages, three streams and attention) at width 2 on 8×8 inputs.
pub fn network_gradient_check(seeds: usize) -> Result<Check> {
    use crate::network::{NetworkConfig, Task};
    let mut total = GradCheck::default();
    let mut skipped_ok = true;
    for seed in 0..seeds as u64 {
        let mut net: MsrNet<f64> = MsrNet::new(NetworkConfig::uniform(2), Task::Region, seed)?;
        randomize_biases(&mut net, 300 + seed);
        let img = random_tensor(&mut seeded(100 + seed), Shape::new(1, 3, 8, 8), 0.0, 1.0);
        let target = random_tensor(&mut seeded(200 + seed), Shape::new(1, 1, 8, 8), 0.0, 1.0).map(|v| (v > 0.6) as u8 as f64);
        let r = check_network_gradients(&net, &img, &target, 2.0, 1e-4)?;
        skipped_ok &= r.skipped * 100 <= r.checked;
        total = total.merge(r);
    }
    Ok(grad_check("grad.msrnet", seeds, total, skipped_ok))
}

/// Finite-difference check of the toy MSRNet on 16×16 inputs: `per_param`
/// sampled coordinates of every parameter tensor, alternating tasks.
pub fn toy_network_gradient_check(seeds: usize, per_param: usize) -> Result<Check> {
    use crate::network::{NetworkConfig, Task};
    let mut total = GradCheck::default();
    for seed in 0..seeds as u64 {
        let task = if seed % 2 == 0 { Task::Region } else { Task::Contour };
        let mut toy: MsrNet<f64> = MsrNet::new(NetworkConfig::toy(), task, seed)?;
        randomize_biases(&mut toy, 400 + seed);
        let img = random_tensor(&mut seeded(500 + seed), Shape::new(1, 3, 16, 16), 0.0, 1.0);
        let target = random_tensor(&mut seeded(600 + seed), Shape::new(1, 1, 16, 16), 0.0, 1.0).map(|v| (v > 0.6) as u8 as f64);
        let w = crate::training::positive_weight(task);
        let r = check_network_gradients_sampled(&toy, &img, &target, w, 1e-4, per_param, 700 + seed)?;
        total = total.merge(r);
    }
    let skipped_ok = total.skipped * 10 <= total.checked;
    Ok(grad_check("grad.msrnet_toy", seeds, total, skipped_ok))
}

fn grad_check(name: &str, seeds: usize, total: GradCheck, skipped_ok: bool) -> Check {
    Check::new(
        name,
        total.max_relative_error <= 1e-3 && skipped_ok && total.checked > 0,
        format!(
            "{seeds} seeds, {} coordinates ({} skipped at branch changes), max relative error {:.2e}",
            total.checked, total.skipped, total.max_relative_error
        ),
    )
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Result of one named release-gate check.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Directory holding the golden fixtures shipped with the crate.
pub fn default_fixture_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures"))
}

#[derive(Deserialize)]
struct GoldenAdaptive {
    threshold: f64,
    tp: u64,
    fp: u64,
    #[serde(rename = "fn")]
    fn_: u64,
    precision: f64,
    recall: f64,
    f: f64,
}

#[derive(Deserialize)]
struct GoldenSaliency {
    counts: Vec<[u64; 3]>,
    gt_empty: bool,
    max_f: f64,
    mae: f64,
    adaptive: GoldenAdaptive,
}

#[derive(Deserialize)]
struct GoldenContour {
    counts: Vec<Vec<[u64; 3]>>,
    ods: f64,
    ods_threshold: f64,
    ois: f64,
    ap: f64,
}

#[derive(Deserialize)]
struct GoldenMetrics {
    beta2: f64,
    radius_fraction: f64,
    scores: Vec<Vec<f64>>,
    saliency: Vec<GoldenSaliency>,
    dataset_max_f: f64,
    contour: GoldenContour,
    map_r: Vec<metrics::MapR>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn masks_of(labels: &LabelMap) -> Vec<Mask> {
    let k = labels.data().iter().copied().max().unwrap_or(0);
    (1..=k).map(|l| labels.map(|&v| v == l)).collect()
}

/// Recomputes every metric on the 5-image golden set in `dir/metrics` and
/// compares with the frozen values: integers exactly, ratios within 1e-9.
pub fn metric_fixture_checks(dir: &Path) -> Result<Vec<Check>> {
    let dir = dir.join("metrics");
    let text = std::fs::read_to_string(dir.join("golden.json")).map_err(|e| Error::io(dir.join("golden.json"), e))?;
    let golden: GoldenMetrics = serde_json::from_str(&text)?;
    let n = golden.saliency.len();
    let file = |stem: &str, i: usize| dir.join(format!("{stem}_{i}.pgm"));
    let mut checks = Vec::new();

    let mut curves = Vec::new();
    let (mut pr_ok, mut f_ok, mut mae_ok, mut ad_ok) = (true, true, true, true);
    let mut detail = Vec::new();
    for (i, g) in golden.saliency.iter().enumerate() {
        let map = load_map(file("sal", i))?;
        let gt = load_mask(file("gt", i))?;
        let c = metrics::pr_curve(&map, &gt)?;
        let counts: Vec<[u64; 3]> = c.counts.iter().map(|c| [c.tp, c.fp, c.fn_]).collect();
        if counts != g.counts || c.gt_empty != g.gt_empty {
            pr_ok = false;
            detail.push(format!("pr counts differ on image {i}"));
        }
        let f = metrics::max_f_measure(&c, golden.beta2);
        if !close(f, g.max_f) {
            f_ok = false;
            detail.push(format!("max-F on image {i}: {f} vs {}", g.max_f));
        }
        let m = metrics::mae(&map, &gt.to_map())?;
        if !close(m, g.mae) {
            mae_ok = false;
            detail.push(format!("MAE on image {i}: {m} vs {}", g.mae));
        }
        let a = metrics::adaptive_prf(&map, &gt)?;
        let ga = &g.adaptive;
        let ints = {
            let t = a.threshold;
            let (mut tp, mut fp, mut fn_) = (0, 0, 0);
            for (&s, &y) in map.data().iter().zip(gt.data()) {
                match (s as f64 > t, y) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            (tp, fp, fn_)
        };
        if ints != (ga.tp, ga.fp, ga.fn_)
            || !close(a.threshold, ga.threshold)
            || !close(a.precision, ga.precision)
            || !close(a.recall, ga.recall)
            || !close(a.f_measure, ga.f)
        {
            ad_ok = false;
            detail.push(format!("adaptive PRF on image {i}"));
        }
        curves.push(c);
    }
    let mean = metrics::mean_curve(&curves)?;
    let df = metrics::max_f_measure(&mean, golden.beta2);
    if !close(df, golden.dataset_max_f) {
        f_ok = false;
        detail.push(format!("dataset max-F {df} vs {}", golden.dataset_max_f));
    }
    let d = detail.join("; ");
    checks.push(Check::new("metrics.pr_curve", pr_ok, if pr_ok { format!("{n} images, 256 thresholds") } else { d.clone() }));
    checks.push(Check::new("metrics.max_f", f_ok, if f_ok { format!("dataset max-F {df:.6}") } else { d.clone() }));
    checks.push(Check::new("metrics.mae", mae_ok, if mae_ok { String::new() } else { d.clone() }));
    checks.push(Check::new("metrics.adaptive_prf", ad_ok, if ad_ok { String::new() } else { d }));

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for i in 0..n {
        preds.push(load_map(file("con", i))?);
        gts.push(load_mask(file("cgt", i))?);
    }
    let mut counts_ok = true;
    for (i, (p, g)) in preds.iter().zip(&gts).enumerate() {
        let c = metrics::image_contour_counts(p, g, golden.radius_fraction)?;
        let c: Vec<[u64; 3]> = c.iter().map(|c| [c.matched, c.predicted, c.ground_truth]).collect();
        if c != golden.contour.counts[i] {
            counts_ok = false;
        }
    }
    let e = metrics::contour_benchmark(&preds, &gts, golden.radius_fraction)?;
    let gc = &golden.contour;
    let ok = counts_ok
        && close(e.ods, gc.ods)
        && close(e.ods_threshold, gc.ods_threshold)
        && close(e.ois, gc.ois)
        && close(e.ap, gc.ap);
    checks.push(Check::new(
        "metrics.contour_benchmark",
        ok,
        format!("ODS {:.6} OIS {:.6} AP {:.6} (expected {:.6} {:.6} {:.6})", e.ods, e.ois, e.ap, gc.ods, gc.ois, gc.ap),
    ));

    let mut images = Vec::new();
    for i in 0..n {
        let gt = load_labels(file("ins", i))?;
        let pred = load_labels(file("ipred", i))?;
        let masks = masks_of(&pred);
        let predictions = masks
            .into_iter()
            .zip(&golden.scores[i])
            .map(|(mask, &score)| InstancePrediction { mask, score })
            .collect();
        images.push(InstanceImage {
            predictions,
            ground_truth: masks_of(&gt),
        });
    }
    let thresholds: Vec<f64> = golden.map_r.iter().map(|m| m.iou_threshold).collect();
    let got = metrics::map_r(&images, &thresholds)?;
    let ok = got.iter().zip(&golden.map_r).all(|(a, b)| {
        a.true_positives == b.true_positives
            && a.predictions == b.predictions
            && a.ground_truth == b.ground_truth
            && close(a.ap, b.ap)
    });
    let d = got.iter().map(|m| format!("@{}: {:.6}", m.iou_threshold, m.ap)).collect::<Vec<_>>().join(" ");
    checks.push(Check::new("metrics.map_r", ok, d));
    Ok(checks)
}

/// A small refinement problem built from a synthetic scene: the ground
/// truth is degraded (instances shifted and grown or shrunk, saliency
/// flipped at random) the way detector output would be.
#[derive(Clone, Debug)]
pub struct CrfCase {
    pub image: Tensor<f32>,
    pub salient: Mask,
    pub instances: Vec<Mask>,
    pub unaries: crate::crf::UnaryField,
}

pub fn crf_case(seed: u64, size: usize, instances: usize) -> Result<CrfCase> {
    use crate::dataio::synthetic::render_scene;
    use crate::dataio::{Layout, SceneSpec};
    let spec = SceneSpec {
        height: size,
        width: size,
        min_instances: instances,
        max_instances: instances,
        ..SceneSpec::default()
    };
    let mut rng = seeded(seed);
    let mut texture = seeded(seed ^ 0x5eed);
    let layout = if instances >= 2 { Layout::Occluded(instances) } else { Layout::Disjoint(instances) };
    let scene = render_scene(&spec, layout, &mut rng, &mut texture)?;
    let degrade = |m: &Mask, rng: &mut ChaCha8Rng| {
        let (dy, dx) = (rng.gen_range(-2i32..=2), rng.gen_range(-2i32..=2));
        let grow = rng.gen_range(-1i32..=1);
        Mask::from_fn(size, size, |y, x| {
            let hit = |y: i32, x: i32| {
                let (sy, sx) = (y - dy, x - dx);
                sy >= 0 && sx >= 0 && (sy as usize) < size && (sx as usize) < size && m.at(sy as usize, sx as usize)
            };
            let (y, x) = (y as i32, x as i32);
            let around = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)].map(|(a, b)| hit(y + a, x + b));
            match grow {
                1 => around.iter().any(|&v| v),
                -1 => around.iter().all(|&v| v),
                _ => around[0],
            }
        })
    };
    let masks: Vec<Mask> = (1..=scene.instance_count() as u16)
        .map(|id| degrade(&scene.instance_mask(id), &mut rng))
        .collect();
    let salient = scene.saliency().map(|&s| s ^ rng.gen_bool(0.05));
    let unaries = crate::crf::build_unaries(&salient, &masks)?;
    Ok(CrfCase {
        image: scene.image,
        salient,
        instances: masks,
        unaries,
    })
}

#[derive(Deserialize)]
struct GoldenUnaries {
    height: usize,
    width: usize,
    labels: usize,
    probabilities: Vec<Vec<f64>>,
}

/// Builds unaries from the 6×6 three-instance fixture in `dir/crf` and
/// compares every probability with the frozen table.
pub fn crf_unary_fixture_check(dir: &Path) -> Result<Check> {
    let dir = dir.join("crf");
    let path = dir.join("golden.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let golden: GoldenUnaries = serde_json::from_str(&text)?;
    let salient = load_mask(dir.join("salient.pgm"))?;
    let instances = (1..golden.labels)
        .map(|k| load_mask(dir.join(format!("instance_{k}.pgm"))))
        .collect::<Result<Vec<_>>>()?;
    let u = crate::crf::build_unaries(&salient, &instances)?;
    let mut bad = Vec::new();
    if u.dims() != (golden.height, golden.width) || u.labels() != golden.labels {
        bad.push(format!("field is {:?} with {} labels", u.dims(), u.labels()));
    } else {
        for (i, want) in golden.probabilities.iter().enumerate() {
            if u.pixel(i).iter().zip(want).any(|(a, b)| !close(*a, *b)) {
                bad.push(format!("pixel {i}: {:?} vs {want:?}", u.pixel(i)));
            }
        }
    }
    let detail = if bad.is_empty() {
        format!("{} pixels x {} labels match", golden.probabilities.len(), golden.labels)
    } else {
        bad.join("; ")
    };
    Ok(Check::new("crf.unary_rules", bad.is_empty(), detail))
}

/// Fast against exact mean-field on `cases` 24×24 three-label problems, and
/// exact agreement of both with the unary argmax when the pairwise weights
/// are zero.
pub fn crf_oracle_checks(cases: usize) -> Result<Vec<Check>> {
    use crate::crf::{meanfield_brute, meanfield_fast, CrfParams};
    let params = CrfParams::default();
    let (mut worst_dq, mut worst_agree) = (0.0f64, 1.0f64);
    let mut zero_ok = true;
    for s in 0..cases {
        let c = crf_case(1000 + s as u64, 24, 2)?;
        let brute = meanfield_brute(&c.unaries, &c.image, &params, params.iterations)?;
        let fast = meanfield_fast(&c.unaries, &c.image, &params, params.iterations)?;
        let q = (brute.marginals.data(), fast.marginals.data());
        let dq = q.0.iter().zip(q.1).map(|(a, b)| (a - b).abs()).sum::<f64>() / q.0.len() as f64;
        let same = brute.labeling.data().iter().zip(fast.labeling.data()).filter(|(a, b)| a == b).count();
        worst_dq = worst_dq.max(dq);
        worst_agree = worst_agree.min(same as f64 / brute.labeling.len() as f64);

        let plain = params.without_pairwise();
        let brute = meanfield_brute(&c.unaries, &c.image, &plain, params.iterations)?;
        let fast = meanfield_fast(&c.unaries, &c.image, &plain, params.iterations)?;
        zero_ok &= brute == fast && brute.labeling == c.unaries.argmax();
    }
    Ok(vec![
        Check::new(
            "crf.oracle_equivalence",
            worst_dq <= 1e-2 && worst_agree >= 0.99,
            format!("{cases} cases: worst mean |dQ| {worst_dq:.2e}, worst label agreement {:.2}%", worst_agree * 100.0),
        ),
        Check::new(
            "crf.no_pairwise_is_unary_argmax",
            zero_ok,
            format!("{cases} cases with w1 = w2 = 0"),
        ),
    ])
}

/// Counts the cases, out of `cases` 24×24 problems with one to four
/// instances, where the refined labeling has no higher energy than the
/// unary argmax.
pub fn crf_energy_check(cases: usize) -> Result<Check> {
    use crate::crf::{refine_instances, total_energy, CrfParams};
    let params = CrfParams::default();
    let mut ok = 0;
    for s in 0..cases {
        let c = crf_case(5000 + s as u64, 24, 1 + s % 4)?;
        let refined = refine_instances(&c.salient, &c.instances, &c.image, &params)?;
        let e = total_energy(&refined, &c.unaries, &c.image, &params)?;
        let e0 = total_energy(&c.unaries.argmax(), &c.unaries, &c.image, &params)?;
        ok += (e <= e0) as usize;
    }
    let need = (cases * 95).div_ceil(100);
    Ok(Check::new(
        "crf.energy_sanity",
        ok >= need,
        format!("{ok}/{cases} refined labelings at or below the unary-argmax energy (need {need})"),
    ))
}

/// Selected instances for a synthetic scene with `k` disjoint instances,
/// using its exact contours and saliency. Returns the instance count and
/// the best IoU of each ground-truth instance against the selection.
pub fn oracle_instances(seed: u64, k: usize, size: usize) -> Result<(usize, Vec<f64>)> {
    use crate::dataio::synthetic::render_scene;
    use crate::dataio::{Layout, SceneSpec};
    use crate::proposals::{contour_to_ucm, extract_proposals, screen_by_saliency, subset_select};
    use crate::proposals::{DEFAULT_PROPOSALS, MIN_SALIENT_FRACTION};
    let spec = SceneSpec {
        height: size,
        width: size,
        ..SceneSpec::default()
    };
    let mut rng = seeded(seed);
    let mut texture = seeded(seed ^ 0x5eed);
    let scene = render_scene(&spec, Layout::Disjoint(k), &mut rng, &mut texture)?;
    let ucm = contour_to_ucm(&scene.contours().to_map())?;
    let salient = scene.saliency();
    let screened = screen_by_saliency(&extract_proposals(&ucm, DEFAULT_PROPOSALS), &salient, MIN_SALIENT_FRACTION)?;
    let set = subset_select(&screened, &salient)?;
    let ious = (1..=scene.instance_count() as u16)
        .map(|id| {
            let g = scene.instance_mask(id);
            set.instances.iter().map(|i| i.proposal.mask.iou(&g)).fold(0.0, f64::max)
        })
        .collect();
    Ok((set.len(), ious))
}

/// Oracle-contour scenes with one to four disjoint instances, `per_k`
/// seeds each: every selection must have exactly `k` instances, each
/// ground-truth instance matched with IoU ≥ 0.9.
pub fn proposal_oracle_check(per_k: usize) -> Result<Check> {
    let mut failures = Vec::new();
    let mut worst = 1.0f64;
    for k in 1..=4 {
        for s in 0..per_k {
            let seed = 700 + (k * 100 + s) as u64;
            let (n, ious) = oracle_instances(seed, k, 64)?;
            let low = ious.iter().copied().fold(1.0, f64::min);
            worst = worst.min(low);
            if n != k || low < 0.9 {
                failures.push(format!("k={k} seed={seed}: {n} instances, min IoU {low:.3}"));
            }
        }
    }
    let detail = if failures.is_empty() {
        format!("{} scenes, worst instance IoU {worst:.3}", 4 * per_k)
    } else {
        failures.join("; ")
    };
    Ok(Check::new("proposals.oracle_instances", failures.is_empty(), detail))
}

/// Refinement check over the merge levels of `ucm`: every region at one
/// level lies inside a single region at the next.
pub fn is_nested(ucm: &crate::proposals::Ucm) -> bool {
    let mut levels = vec![-1.0];
    levels.extend(ucm.levels());
    let parts: Vec<Vec<u32>> = levels.iter().map(|&t| ucm.labels_at(t)).collect();
    parts.windows(2).all(|w| {
        let mut parent = std::collections::HashMap::new();
        w[0].iter().zip(&w[1]).all(|(a, b)| *parent.entry(*a).or_insert(*b) == *b)
    }) && ucm.merges().windows(2).all(|m| m[0].level <= m[1].level)
}

/// Nestedness of `count` hierarchies: half from random quantized contour
/// maps, half combined from four noisy renderings of a synthetic scene's
/// contours.
pub fn ucm_nestedness_check(count: usize) -> Result<Check> {
    use crate::dataio::{synthetic_scene, SceneSpec};
    use crate::grid::Map;
    use crate::proposals::{combine_hierarchies, contour_to_ucm};
    let mut bad = Vec::new();
    let mut levels = 0;
    for i in 0..count {
        let mut rng = seeded(800 + i as u64);
        let ucm = if i % 2 == 0 {
            let (h, w) = (rng.gen_range(8..33), rng.gen_range(8..33));
            let m = Map::from_fn(h, w, |_, _| rng.gen_range(0..6) as f32 / 5.0);
            contour_to_ucm(&m)?
        } else {
            let spec = SceneSpec { height: 32, width: 32, ..SceneSpec::default() };
            let c = synthetic_scene(&spec, 800, i)?.contours();
            let ucms = (0..4)
                .map(|_| {
                    let noisy = c.map(|&v| if v { rng.gen_range(0.5..1.0) } else { rng.gen_range(0.0..0.3) });
                    contour_to_ucm(&noisy)
                })
                .collect::<Result<Vec<_>>>()?;
            combine_hierarchies(&ucms)?
        };
        levels += ucm.levels().len();
        if !is_nested(&ucm) {
            bad.push(i.to_string());
        }
    }
    let detail = if bad.is_empty() {
        format!("{count} hierarchies, {levels} levels")
    } else {
        format!("not nested: {}", bad.join(", "))
    };
    Ok(Check::new("proposals.ucm_nested", bad.is_empty(), detail))
}

/// A 100-pixel proposal with 79 salient pixels is rejected and one with 80
/// is kept.
pub fn screening_boundary_check() -> Result<Check> {
    use crate::proposals::{screen_by_saliency, ProposalMask, MIN_SALIENT_FRACTION};
    let p = ProposalMask::new(Mask::new(1, 100, true), 1.0)?;
    let kept = |k: usize| -> Result<bool> {
        let s = Mask::from_fn(1, 100, |_, x| x < k);
        Ok(screen_by_saliency(std::slice::from_ref(&p), &s, MIN_SALIENT_FRACTION)?.len() == 1)
    };
    let (k79, k80) = (kept(79)?, kept(80)?);
    Ok(Check::new(
        "proposals.screening_boundary",
        !k79 && k80,
        format!("0.79 {}, 0.80 {}", if k79 { "kept" } else { "rejected" }, if k80 { "kept" } else { "rejected" }),
    ))
}
