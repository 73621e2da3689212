use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use salinst::dataio::{
    generate_synthetic, load_image, save_image, save_labels, save_map, Manifest, Sample, SceneSpec, Split,
};
use salinst::grid::LabelMap;
use salinst::network::{MsrNet, Task};
use salinst::pipeline::{
    evaluate_outputs, infer_maps, propose, segment_instances, EvalReport, ImageOutputs, PipelineConfig,
};
use salinst::proposals::write_proposals;
use salinst::selfcheck::{self, Check};
use salinst::tensor::{Shape, Tensor};
use salinst::training::{finetune_contour, train, Checkpoint, TrainConfig, TrainData};

#[derive(Parser)]
#[command(name = "salinst", version, about = "Salient instance segmentation")]
struct Cli {
    /// Seed for every random choice made by the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-image parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON config: training fields for `train`, pipeline fields otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a region model, or a contour model fine-tuned from one.
    Train(TrainArgs),
    /// Write saliency maps (fused, per scale, attention weights).
    InferSaliency(InferArgs),
    /// Write contour maps (fused, per scale, attention weights).
    InferContour(InferArgs),
    /// Write the ranked proposal pool of each image.
    Propose(ProposeArgs),
    /// Run the full cascade and write label maps and instance masks.
    SegmentInstances(SegmentArgs),
    /// Score models on a manifest split.
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with train, val and test splits.
    GenSynthetic(GenArgs),
    /// Gradient checks, CRF oracle comparison and golden metric fixtures.
    Selfcheck(SelfcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    task: Task,
    /// Dataset manifest with train and val records.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Region checkpoint to fine-tune from (contour task).
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct Inputs {
    /// Image files.
    #[arg(long, num_args = 1..)]
    input: Vec<PathBuf>,
    /// Manifest whose images to process (with --split).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProposeArgs {
    #[arg(long)]
    contour: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    region: PathBuf,
    #[arg(long)]
    contour: PathBuf,
    #[command(flatten)]
    inputs: Inputs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    #[arg(long)]
    region: Option<PathBuf>,
    #[arg(long)]
    contour: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    train: usize,
    #[arg(long, default_value_t = 50)]
    val: usize,
    #[arg(long, default_value_t = 50)]
    test: usize,
    /// Image side length.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Directory holding the golden fixtures.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Write the check results as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run only these groups.
    #[arg(long, value_delimiter = ',', value_parser = ["grad", "crf", "metrics", "proposals"])]
    only: Vec<String>,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
    Check(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

impl From<salinst::Error> for Failure {
    fn from(e: salinst::Error) -> Self {
        Failure::Data(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Train(a) => cmd_train(&cli, a),
        Command::InferSaliency(a) => cmd_infer(Task::Region, a),
        Command::InferContour(a) => cmd_infer(Task::Contour, a),
        Command::Propose(a) => cmd_propose(&cli, a),
        Command::SegmentInstances(a) => cmd_segment(&cli, a),
        Command::Evaluate(a) => cmd_evaluate(&cli, a),
        Command::GenSynthetic(a) => cmd_gen(&cli, a),
        Command::Selfcheck(a) => cmd_selfcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    match &cli.config {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
    }
}

fn load_model(path: &Path, task: Task) -> Result<MsrNet<f32>, Failure> {
    let c = Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if c.model.task() != task {
        return Err(usage(format!(
            "{} is a {} checkpoint, expected {task}",
            path.display(),
            c.model.task()
        )));
    }
    Ok(c.model)
}

/// `(stem, image path)` of every input.
fn input_list(inputs: &Inputs) -> Result<Vec<(String, PathBuf)>, Failure> {
    let mut paths = inputs.input.clone();
    if let Some(m) = &inputs.data {
        let manifest = Manifest::read(m)?;
        paths.extend(manifest.split(inputs.split).iter().map(|r| manifest.resolve(&r.image)));
    }
    if paths.is_empty() {
        return Err(usage("no input images (use --input or --data)"));
    }
    let mut seen = std::collections::HashSet::new();
    paths
        .into_iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| usage(format!("{} has no file name", p.display())))?;
            if !seen.insert(stem.clone()) {
                return Err(usage(format!("two inputs share the name {stem}")));
            }
            Ok((stem, p))
        })
        .collect()
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Outcome {
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => "{}".to_string(),
    };
    let mut fields: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| usage(format!("train config: {e}")))?;
    match fields.get("task").and_then(|t| t.as_str()) {
        Some(t) if t != a.task.to_string() => {
            return Err(usage(format!("config trains {t} but --task is {}", a.task)));
        }
        _ => {
            fields.insert("task".into(), a.task.to_string().into());
        }
    }
    if let Some(seed) = cli.seed {
        fields.insert("seed".into(), seed.into());
    }
    let config = TrainConfig::from_json(&serde_json::Value::Object(fields).to_string())
        .and_then(|c| c.validate().map(|_| c))
        .map_err(|e| usage(format!("train config: {e}")))?;

    let manifest = Manifest::read(&a.data)?;
    manifest.validate()?;
    let train_samples = manifest.load_split(Split::Train)?;
    let val_samples = manifest.load_split(Split::Val)?;
    let train_set = TrainData::augmented(a.task, TrainData::pairs_for(a.task, &train_samples)?);
    let val_set = TrainData::plain(TrainData::pairs_for(a.task, &val_samples)?);
    eprintln!(
        "training {} on {} images ({} with augmentation), validating on {}",
        a.task,
        train_samples.len(),
        train_set.len(),
        val_samples.len()
    );
    let outcome = match (&a.init, a.task) {
        (Some(init), Task::Contour) => {
            let region = Checkpoint::load(init).with_context(|| format!("loading {}", init.display()))?;
            finetune_contour(&region, &train_set, &val_set, &config, Some(&a.out))?
        }
        (Some(_), Task::Region) => return Err(usage("--init applies to contour training only")),
        (None, task) => {
            let model = MsrNet::new(config.network.config(), task, config.seed)?;
            train(model, &train_set, &val_set, &config, Some(&a.out))?
        }
    };
    println!(
        "best checkpoint: iteration {} validation loss {:.6} ({})",
        outcome.best.iteration,
        outcome.best.validation_loss,
        a.out.join("best.json").display()
    );
    Ok(())
}

fn cmd_infer(task: Task, a: &InferArgs) -> Outcome {
    let model = load_model(&a.model, task)?;
    let inputs = input_list(&a.inputs)?;
    create_dir(&a.out)?;
    inputs.par_iter().try_for_each(|(stem, path)| -> Outcome {
        let image = load_image(path)?;
        let maps = infer_maps(&model, &image).with_context(|| format!("{}", path.display()))?;
        save_map(a.out.join(format!("{stem}_fused.png")), &maps.fused)?;
        for (k, m) in maps.scales.iter().enumerate() {
            save_map(a.out.join(format!("{stem}_scale{}.png", k + 1)), m)?;
        }
        for (k, m) in maps.weights.iter().enumerate() {
            save_map(a.out.join(format!("{stem}_weight{}.png", k + 1)), m)?;
        }
        Ok(())
    })?;
    println!("wrote maps for {} images to {}", inputs.len(), a.out.display());
    Ok(())
}

fn cmd_propose(cli: &Cli, a: &ProposeArgs) -> Outcome {
    let config = pipeline_config(cli)?;
    let model = load_model(&a.contour, Task::Contour)?;
    let inputs = input_list(&a.inputs)?;
    create_dir(&a.out)?;
    inputs.par_iter().try_for_each(|(stem, path)| -> Outcome {
        let image = load_image(path)?;
        let maps = infer_maps(&model, &image).map_err(|e| e.in_stage("contour"))?;
        let pool = propose(&maps.contour_maps(), config.max_proposals).map_err(|e| e.in_stage("proposals"))?;
        write_file(&a.out.join(format!("{stem}_proposals.jsonl")), write_proposals(&pool))
    })?;
    println!("wrote proposals for {} images to {}", inputs.len(), a.out.display());
    Ok(())
}

const PALETTE: [[f32; 3]; 8] = [
    [0.90, 0.10, 0.10],
    [0.10, 0.60, 0.90],
    [0.10, 0.80, 0.20],
    [0.95, 0.75, 0.10],
    [0.70, 0.20, 0.80],
    [0.10, 0.85, 0.80],
    [0.95, 0.45, 0.10],
    [0.60, 0.60, 0.60],
];

/// The image dimmed, with each instance tinted by its palette colour.
fn visualize(image: &Tensor<f32>, labels: &LabelMap) -> Tensor<f32> {
    let (h, w) = labels.dims();
    let mut out = Tensor::zeros(Shape::new(1, 3, h, w));
    for y in 0..h {
        for x in 0..w {
            let l = labels.at(y, x) as usize;
            for c in 0..3 {
                let v = image.at(0, c.min(image.shape().c - 1), y, x);
                let v = if l == 0 { 0.4 * v } else { 0.4 * v + 0.6 * PALETTE[(l - 1) % PALETTE.len()][c] };
                out.set(0, c, y, x, v);
            }
        }
    }
    out
}

fn cmd_segment(cli: &Cli, a: &SegmentArgs) -> Outcome {
    let config = pipeline_config(cli)?;
    let region = load_model(&a.region, Task::Region)?;
    let contour = load_model(&a.contour, Task::Contour)?;
    let inputs = input_list(&a.inputs)?;
    create_dir(&a.out)?;
    let counts = inputs
        .par_iter()
        .map(|(stem, path)| -> Result<usize, Failure> {
            let image = load_image(path)?;
            let seg = segment_instances(&region, &contour, &image, &config)
                .with_context(|| format!("{}", path.display()))?;
            save_labels(a.out.join(format!("{stem}_labels.png")), &seg.labels)?;
            save_image(a.out.join(format!("{stem}_vis.png")), &visualize(&image, &seg.labels))?;
            write_file(
                &a.out.join(format!("{stem}_instances.jsonl")),
                write_proposals(
                    &seg.predictions()
                        .into_iter()
                        .map(|p| salinst::proposals::ProposalMask::new(p.mask, p.score))
                        .collect::<salinst::Result<Vec<_>>>()?,
                ),
            )?;
            let summary = serde_json::to_string_pretty(&seg.summaries()).context("serializing summary")?;
            write_file(&a.out.join(format!("{stem}_summary.json")), summary)?;
            Ok(seg.instances.len())
        })
        .collect::<Result<Vec<_>, _>>()?;
    for ((stem, _), k) in inputs.iter().zip(&counts) {
        println!("{stem}: {k} instances");
    }
    Ok(())
}

fn metrics_csv(r: &EvalReport) -> String {
    let mut s = String::from("metric,value\n");
    if let Some(e) = &r.saliency {
        for (k, v) in [
            ("max_f", e.max_f),
            ("mae", e.mae),
            ("adaptive_precision", e.adaptive_precision),
            ("adaptive_recall", e.adaptive_recall),
            ("adaptive_f", e.adaptive_f),
        ] {
            let _ = writeln!(s, "{k},{v}");
        }
    }
    if let Some(e) = &r.contour {
        for (k, v) in [("ods", e.ods), ("ois", e.ois), ("contour_ap", e.ap)] {
            let _ = writeln!(s, "{k},{v}");
        }
    }
    for m in &r.map_r {
        let _ = writeln!(s, "map_r@{},{}", m.iou_threshold, m.ap);
    }
    s
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Outcome {
    if a.region.is_none() && a.contour.is_none() {
        return Err(usage("give --region, --contour or both"));
    }
    let config = pipeline_config(cli)?;
    let region = a.region.as_deref().map(|p| load_model(p, Task::Region)).transpose()?;
    let contour = a.contour.as_deref().map(|p| load_model(p, Task::Contour)).transpose()?;
    let manifest = Manifest::read(&a.data)?;
    let samples: Vec<Sample> = manifest.load_split(a.split)?;
    let outputs = samples
        .par_iter()
        .map(|s| ImageOutputs::compute(region.as_ref(), contour.as_ref(), &s.image, &config))
        .collect::<salinst::Result<Vec<_>>>()?;
    let report = evaluate_outputs(&outputs, &samples)?;
    create_dir(&a.out)?;
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    write_file(&a.out.join("report.json"), json)?;
    write_file(&a.out.join("metrics.csv"), metrics_csv(&report))?;
    if let Some(e) = &report.saliency {
        let mut s = String::from("threshold,precision,recall\n");
        for p in &e.curve {
            let _ = writeln!(s, "{},{},{}", p.threshold, p.precision, p.recall);
        }
        write_file(&a.out.join("saliency_pr.csv"), s)?;
    }
    if let Some(e) = &report.contour {
        let mut s = String::from("threshold,precision,recall\n");
        for (t, p, r) in &e.curve {
            let _ = writeln!(s, "{t},{p},{r}");
        }
        write_file(&a.out.join("contour_pr.csv"), s)?;
    }
    print!("{}", metrics_csv(&report));
    Ok(())
}

fn cmd_gen(cli: &Cli, a: &GenArgs) -> Outcome {
    if a.size < 16 {
        return Err(usage("--size must be at least 16"));
    }
    let spec = SceneSpec {
        height: a.size,
        width: a.size,
        ..SceneSpec::default()
    };
    let seed = cli.seed.unwrap_or(0);
    let mut manifest = Manifest {
        root: a.out.clone(),
        records: Vec::new(),
    };
    let splits = [(Split::Train, a.train, "train_"), (Split::Val, a.val, "val_"), (Split::Test, a.test, "test_")];
    for (k, (split, n, prefix)) in splits.into_iter().enumerate() {
        if n == 0 {
            continue;
        }
        let part = generate_synthetic(&spec, n, seed.wrapping_mul(3).wrapping_add(k as u64 + 1), split, &a.out, prefix)?;
        manifest.records.extend(part.records);
    }
    if manifest.records.is_empty() {
        return Err(usage("all split sizes are zero"));
    }
    let path = a.out.join("manifest.jsonl");
    manifest.write(&path)?;
    println!("wrote {} records to {}", manifest.records.len(), path.display());
    Ok(())
}

fn run_checks(fixtures: &Path, only: &[String]) -> anyhow::Result<Vec<Check>> {
    let wanted = |g: &str| only.is_empty() || only.iter().any(|o| o == g);
    let mut checks = Vec::new();
    if wanted("grad") {
        checks.extend(selfcheck::op_gradient_checks(10)?);
        checks.push(selfcheck::network_gradient_check(10)?);
        checks.push(selfcheck::toy_network_gradient_check(10, 3)?);
    }
    if wanted("crf") {
        checks.extend(selfcheck::crf_oracle_checks(20)?);
        checks.push(selfcheck::crf_energy_check(100)?);
        checks.push(selfcheck::crf_unary_fixture_check(fixtures)?);
    }
    if wanted("metrics") {
        checks.extend(selfcheck::metric_fixture_checks(fixtures)?);
    }
    if wanted("proposals") {
        checks.push(selfcheck::ucm_nestedness_check(20)?);
        checks.push(selfcheck::screening_boundary_check()?);
        checks.push(selfcheck::proposal_oracle_check(5)?);
    }
    Ok(checks)
}

fn cmd_selfcheck(a: &SelfcheckArgs) -> Outcome {
    let dir = a.fixtures.clone().unwrap_or_else(selfcheck::default_fixture_dir);
    if !dir.is_dir() {
        return Err(usage(format!("fixture directory {} not found", dir.display())));
    }
    let checks = run_checks(&dir, &a.only).map_err(|e| Failure::Check(format!("{e:#}")))?;
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(p) = &a.report {
        let json = serde_json::to_string_pretty(&checks).context("serializing checks")?;
        write_file(p, json)?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        Ok(())
    } else {
        Err(Failure::Check(failed.join(", ")))
    }
}
