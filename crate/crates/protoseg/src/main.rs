use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use protoseg::ablate::{format_table, run_ablation};
use protoseg::bench::{bench, bench_scenes, timed_inference};
use protoseg::checkpoint::{load_model, save_model};
use protoseg::config::{RunConfig, DEFAULT_SEED};
use protoseg::export::{coefficient_histogram, prototype_jsonl};
use protoseg::format::{read_cloud, write_cloud};
use protoseg::report::{reports_csv, write_text, Evaluator, SceneReport};
use protoseg::synth::{generate_scene, SynthConfig};
use protoseg::train::Trainer;
use protoseg::{Error, Result};
use protoseg_core::assembly::attach_orphans;
use protoseg_core::{PointCloud, ProtoSeg};

#[derive(Parser, Debug)]
#[command(
    name = "protoseg",
    version,
    about = "Clustering-free point-cloud instance segmentation"
)]
struct Cli {
    /// Seed for every random choice (defaults to a fixed value).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON file overriding configuration defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate numbered synthetic scenes and a manifest.
    Synth(SynthArgs),
    /// Train a model on a directory of labeled scenes.
    Train(TrainArgs),
    /// Segment one point cloud.
    Infer(InferArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Time each inference stage.
    Bench(BenchArgs),
    /// Train and compare the ablation arms.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: u64,
    /// Index of the first scene.
    #[arg(long, default_value_t = 0)]
    start: u64,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    min_instances: Option<usize>,
    #[arg(long)]
    max_instances: Option<usize>,
    #[arg(long)]
    allow_overlap: bool,
    /// Scene extent in meters: X Y Z.
    #[arg(long, num_args = 3)]
    extent: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Per-step JSON log (stdout when omitted).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Continue from this checkpoint's weights.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Write per-point scores of the prototypes in --prototype-ids as JSON lines.
    #[arg(long)]
    export_prototypes: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    prototype_ids: Vec<usize>,
    /// Write the histogram of retained coefficients as JSON.
    #[arg(long)]
    export_coeff_histogram: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    bins: usize,
    /// Give unlabeled points to the nearest instance.
    #[arg(long)]
    attach_orphans: bool,
    /// Accept a checkpoint whose embedded config differs from --config.
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of ground-truth scenes.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "predictions", required_unless_present = "predictions")]
    checkpoint: Option<PathBuf>,
    /// Directory of labeled clouds named like the scenes in --data.
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Scene reports and the aggregate as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Trained weights; a freshly initialised model otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Scenes to time; synthetic scenes with 2..10 instances otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    scenes: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[arg(long, default_value_t = 200)]
    train_scenes: u64,
    #[arg(long, default_value_t = 50)]
    test_scenes: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 2)]
    min_instances: usize,
    #[arg(long, default_value_t = 6)]
    max_instances: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn base_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pcl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Data(format!("no .pcl files in {}", dir.display())));
    }
    Ok(files)
}

fn read_scenes(files: &[PathBuf]) -> Result<Vec<PointCloud>> {
    files.iter().map(read_cloud).collect()
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loads a checkpoint and reconciles it with the requested configuration.
/// Without `--force` any difference in model settings is an error; with it,
/// inference-only settings follow the request and the architecture follows
/// the checkpoint.
fn load_checked(path: &Path, requested: Option<&RunConfig>, force: bool) -> Result<(ProtoSeg, RunConfig)> {
    let (mut model, stored) = load_model(path)?;
    let Some(req) = requested else {
        return Ok((model, stored));
    };
    let mut a = stored.model.clone();
    let mut b = req.model.clone();
    a.init_seed = 0;
    b.init_seed = 0;
    if a != b {
        if !force {
            return Err(Error::Config(format!(
                "checkpoint {} was trained with a different model config; pass --force to override \
                 (checkpoint: {}, requested: {})",
                path.display(),
                serde_json::to_string(&stored.model)?,
                serde_json::to_string(&req.model)?
            )));
        }
        eprintln!("warning: using checkpoint architecture with requested inference settings");
        model.config.threshold = req.model.threshold;
        model.config.nms_iou = req.model.nms_iou;
        model.config.samples = req.model.samples;
        model.config.sampling = req.model.sampling;
    }
    Ok((model, stored))
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let seed = cli.seed.unwrap_or(DEFAULT_SEED);
    let mut cfg = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    if let Some(n) = a.points {
        cfg.n_points = n;
    }
    if let Some(lo) = a.min_instances {
        cfg.instances_range[0] = lo;
    }
    if let Some(hi) = a.max_instances {
        cfg.instances_range[1] = hi;
    }
    if let Some(e) = &a.extent {
        cfg.extent = [e[0], e[1], e[2]];
    }
    cfg.allow_overlap = a.allow_overlap;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    for i in a.start..a.start + a.count {
        let cloud = generate_scene(&cfg, i)?;
        write_cloud(&cloud, a.out.join(format!("scene_{i:05}.pcl")))?;
    }
    let manifest = json!({ "seed": seed, "count": a.count, "start": a.start, "config": cfg });
    write_text(
        a.out.join("manifest.json"),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    eprintln!("wrote {} scenes to {}", a.count, a.out.display());
    Ok(())
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch {
        cfg.train.batch = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    let scenes = read_scenes(&scene_files(&a.data)?)?;
    let mut trainer = match &a.resume {
        Some(p) => {
            let requested = cli.config.as_ref().map(|_| cfg.clone());
            let (model, stored) = load_checked(p, requested.as_ref(), false)?;
            let mut run = match requested {
                Some(r) => r,
                None => RunConfig {
                    seed: cfg.seed,
                    train: cfg.train.clone(),
                    ..stored
                },
            };
            run.model = model.config.clone();
            Trainer::resume(model, run)
        }
        None => Trainer::new(cfg.clone())?,
    };
    let mut sink: Box<dyn Write> = match &a.log {
        Some(p) => Box::new(fs::File::create(p).map_err(|e| Error::io(p, e))?),
        None => Box::new(std::io::stdout()),
    };
    let mut io_err = None;
    let result = trainer.fit(&scenes, |epoch, log| {
        let line = json!({ "epoch": epoch, "step": log.step, "loss": log.loss,
            "j_pr_gt": log.j_pr_gt, "j_gt_pr": log.j_gt_pr, "skipped_samples": log.skipped_samples });
        if let Err(e) = writeln!(sink, "{line}") {
            io_err.get_or_insert(e);
        }
    });
    if let Err(e) = result {
        if let Error::Numeric(_) = e {
            let _ = save_model(
                &trainer.model,
                &trainer.config,
                a.out.with_extension("failed.ckpt"),
            );
        }
        return Err(e);
    }
    if let Some(e) = io_err {
        return Err(Error::io(a.log.clone().unwrap_or_else(|| "stdout".into()), e));
    }
    save_model(&trainer.model, &trainer.config, &a.out)?;
    eprintln!("saved {}", a.out.display());
    Ok(())
}

fn cmd_infer(cli: &Cli, a: &InferArgs) -> Result<()> {
    let requested = cli.config.as_ref().map(|_| base_config(cli)).transpose()?;
    let (model, _) = load_checked(&a.checkpoint, requested.as_ref(), a.force)?;
    let cloud = read_cloud(&a.input)?;
    let inf = model.infer(&cloud)?;
    let mut labels = inf.labels.clone();
    if a.attach_orphans {
        let semantic = cloud
            .semantic_labels
            .clone()
            .unwrap_or_else(|| vec![0; cloud.len()]);
        labels = attach_orphans(&labels, &cloud.coords(), &semantic);
    }
    let mut out = cloud.clone();
    out.instance_labels = Some(labels);
    write_cloud(&out, &a.output)?;
    let m = model.config.prototypes;
    if let Some(p) = &a.export_prototypes {
        write_text(p, &prototype_jsonl(&inf, m, &cloud, &a.prototype_ids)?)?;
    }
    if let Some(p) = &a.export_coeff_histogram {
        write_text(
            p,
            &serde_json::to_string(&coefficient_histogram(&inf, m, a.bins))?,
        )?;
    }
    eprintln!("{} instances retained", inf.masks.retained.len());
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let files = scene_files(&a.data)?;
    let scenes = read_scenes(&files)?;
    let mut eval = Evaluator::default();
    let mut reports = Vec::with_capacity(scenes.len());
    let mut provenance = None;
    match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let requested = cli.config.as_ref().map(|_| base_config(cli)).transpose()?;
            let (model, stored) = load_checked(ckpt, requested.as_ref(), a.force)?;
            provenance = Some(stored);
            for (f, cloud) in files.iter().zip(&scenes) {
                let run = timed_inference(&model, cloud)?;
                let conf: Vec<f64> = run.masks.retained.iter().map(|r| r.confidence).collect();
                let metrics = eval.add(cloud, &run.labels, Some(&conf))?;
                reports.push(SceneReport {
                    scene_id: stem(f),
                    metrics,
                    timings: Some(run.timings),
                });
            }
        }
        (None, Some(dir)) => {
            for (f, cloud) in files.iter().zip(&scenes) {
                let pred_path = dir.join(f.file_name().expect("listed file has a name"));
                let pred = read_cloud(&pred_path)?;
                let labels = pred
                    .instance_labels
                    .ok_or_else(|| Error::Data(format!("{} has no instance labels", pred_path.display())))?;
                let metrics = eval.add(cloud, &labels, None)?;
                reports.push(SceneReport {
                    scene_id: stem(f),
                    metrics,
                    timings: None,
                });
            }
        }
        (None, None) => return Err(Error::Config("eval needs --checkpoint or --predictions".into())),
    }
    let agg = eval.finish();
    println!(
        "scenes {}  mCov {:.4}  mWCov {:.4}  mPrec {:.4}  mRec {:.4}  mAP@0.5 {:.4}",
        agg.scenes, agg.m_cov, agg.m_wcov, agg.m_prec, agg.m_rec, agg.map50
    );
    if let Some(p) = &a.report {
        let doc = json!({ "config": provenance, "aggregate": agg, "scenes": reports });
        write_text(p, &serde_json::to_string_pretty(&doc)?)?;
    }
    if let Some(p) = &a.csv {
        write_text(p, &reports_csv(&reports))?;
    }
    Ok(())
}

fn cmd_bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let cfg = base_config(cli)?;
    let model = match &a.checkpoint {
        Some(p) => {
            let requested = cli.config.as_ref().map(|_| cfg.clone());
            load_checked(p, requested.as_ref(), a.force)?.0
        }
        None => ProtoSeg::new(cfg.model.clone())?,
    };
    let scenes = match &a.data {
        Some(d) => read_scenes(&scene_files(d)?)?,
        None => bench_scenes(cfg.seed, a.scenes, a.points)?,
    };
    // timing runs on this thread only
    let table = bench(&model, &scenes, a.reps, a.warmup)?;
    println!(
        "Network {:.2} ± {:.2} ms | NMS {:.2} ± {:.2} ms | Total {:.2} ± {:.2} ms \
         (CV {:.2}%, across-scene CV of medians {:.2}%, median {:.2} ms)",
        table.network.mean,
        table.network.std,
        table.nms.mean,
        table.nms.std,
        table.total.mean,
        table.total.std,
        table.total_cv * 100.0,
        table.scene_median_cv * 100.0,
        table.total.median
    );
    println!(
        "pre-NMS op counts identical across equal N: {}",
        table.ops_identical
    );
    if let Some(p) = &a.out {
        write_text(p, &serde_json::to_string_pretty(&table)?)?;
    }
    Ok(())
}

fn cmd_ablate(cli: &Cli, a: &AblateArgs) -> Result<()> {
    let mut cfg = base_config(cli)?;
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch {
        cfg.train.batch = b;
    }
    cfg.validate()?;
    let synth = SynthConfig {
        seed: cfg.seed,
        instances_range: [a.min_instances, a.max_instances],
        ..SynthConfig::default()
    };
    let train: Vec<PointCloud> = (0..a.train_scenes)
        .map(|i| generate_scene(&synth, i))
        .collect::<Result<_>>()?;
    let test: Vec<PointCloud> = (0..a.test_scenes)
        .map(|i| generate_scene(&synth, 1_000_000 + i))
        .collect::<Result<_>>()?;
    let rows = run_ablation(&cfg, &train, &test, |arm, e, loss| {
        eprintln!("{arm} epoch {e} loss {loss:.4}")
    })?;
    print!("{}", format_table(&rows));
    if let Some(p) = &a.out {
        write_text(
            p,
            &serde_json::to_string_pretty(&json!({ "config": cfg, "rows": rows }))?,
        )?;
    }
    if rows.iter().any(|r| !r.finite) {
        return Err(Error::Numeric(
            "an ablation arm produced a non-finite loss".into(),
        ));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let seed = base_config(cli).map_or(cli.seed.unwrap_or(DEFAULT_SEED), |c| c.seed);
    eprintln!("seed {seed}");
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Infer(a) => cmd_infer(cli, a),
        Command::Eval(a) => cmd_eval(cli, a),
        Command::Bench(a) => cmd_bench(cli, a),
        Command::Ablate(a) => cmd_ablate(cli, a),
    }
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
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
