use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pepdpo::analysis::{sweep, write_sweep_csv, SweepPolicy};
use pepdpo::pipeline::{
    entropy_report, eval_stage, generate, load_checkpoint, prepare_prompts, pretrain, read_dataset, save_checkpoint,
    train_variant, write_dataset, OutDir, RunConfig, RunManifest, BASE_CHECKPOINT,
};
use pepdpo::policy::write_checkpoint;
use pepdpo::seeds::Stage;
use pepdpo::train::{write_metrics_csv, Variant};
use pepdpo::{Error, PolicyParams, Result};

#[derive(Parser)]
#[command(name = "pepdpo", version, about = "Preference optimization on a synthetic inverse-folding testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// One dpo_diversity checkpoint per α of the configured grid.
    #[value(name = "alpha_sweep")]
    AlphaSweep,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    /// sft, dpo, dpo_scaled, dpo_diversity, dpo_entropy or dpo_scaled_diversity.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long, conflicts_with = "preset")]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Initial (and reference) checkpoint. Defaults to the dataset's base
    /// checkpoint for sft and to `<out>/sft.ckpt` otherwise.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Decode in identity order instead of random orders.
    #[arg(long)]
    fixed_order: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Repeat for each policy.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    fixed_order: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Prompts, split, data-generating policy and preference records.
    Gen(Common),
    /// SFT or a preference variant from an initial checkpoint.
    Train(TrainArgs),
    /// Held-out TM-score, diversity and recovery.
    Eval(EvalArgs),
    /// Temperature sweep with Pareto flags.
    Sweep(SweepArgs),
    /// Differential entropy over decoding orders and token entropy.
    Entropy(EvalArgs),
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidInput(_) => 2,
        Error::Data(_) | Error::Io(_) | Error::Dimension(_) | Error::InvalidToken(_) => 3,
        Error::NumericAbort { .. } => 4,
        Error::Undefined(_) | Error::StaleCache(_) => 1,
    }
}

fn setup(common: &Common) -> Result<RunConfig> {
    if let Some(n) = common.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn checkpoint_for(cfg: &RunConfig, path: &Path) -> Result<PolicyParams> {
    let params = load_checkpoint(path)?;
    if params.hyper() != cfg.model {
        return Err(Error::Data(format!(
            "checkpoint {} has architecture {:?} but the config's [model] is {:?}",
            path.display(),
            params.hyper(),
            cfg.model
        )));
    }
    Ok(params)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into())
}

fn json_bytes(w: &mut Vec<u8>, value: &serde_json::Value) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::Data(e.to_string()))?;
    w.push(b'\n');
    Ok(())
}

fn cmd_gen(common: &Common) -> Result<()> {
    let t = Instant::now();
    let cfg = setup(common)?;
    let prompts = prepare_prompts(&cfg.dataset, common.seed)?;
    let base = pretrain(&cfg, &prompts, common.seed)?;
    let records = generate(&cfg, &base, &prompts, common.seed)?;
    let mut out = OutDir::create(&common.out, RunManifest::new("gen", &cfg, common.seed))?;
    write_dataset(&mut out, &prompts, &records, &base)?;
    out.emit("config.toml", false, |w| {
        w.extend_from_slice(cfg.to_toml_string().as_bytes());
        Ok(())
    })?;
    for stage in [Stage::Prompts, Stage::Split, Stage::PretrainPrompts, Stage::Init, Stage::Pretrain, Stage::Preferences] {
        out.manifest.seeds.insert(format!("{stage:?}").to_lowercase(), stage.seed(common.seed));
    }
    out.manifest.notes.push("native_in_pairs: false".into());
    let m = out.finish("gen", t.elapsed().as_secs_f64())?;
    eprintln!("gen: {} records, {} pairs -> {}", m.counts["records"], m.counts["pairs"], common.out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let t = Instant::now();
    let common = &args.common;
    let cfg = setup(common)?;
    let variant: Variant = match (&args.variant, args.preset) {
        (Some(v), _) => v.parse()?,
        (None, Some(Preset::AlphaSweep)) => Variant::DpoDiversity,
        (None, None) => Variant::Dpo,
    };
    let alphas: Vec<Option<f64>> = match args.preset {
        Some(Preset::AlphaSweep) => {
            if variant.penalty() == pepdpo::train::Penalty::None {
                return Err(Error::Config(format!("alpha_sweep needs a penalized variant, got {variant}")));
            }
            cfg.eval.alphas.iter().map(|a| Some(*a)).collect()
        }
        None => vec![args.alpha],
    };
    let data = read_dataset(&args.data)?;
    let init_path = args.init.clone().unwrap_or_else(|| {
        if variant == Variant::Sft {
            args.data.join(BASE_CHECKPOINT)
        } else {
            common.out.join("sft.ckpt")
        }
    });
    let init = checkpoint_for(&cfg, &init_path)?;
    let mut out = OutDir::create(&common.out, RunManifest::new("train", &cfg, common.seed))?;
    out.manifest.inputs.push(args.data.display().to_string());
    out.manifest.inputs.push(init_path.display().to_string());
    out.manifest.seeds.insert("train".into(), Stage::Train.seed(common.seed));
    let mut last_name = variant.name().to_string();
    for alpha in alphas {
        let tc = cfg.train_config(variant, alpha, args.beta, common.seed)?;
        let name = match alpha {
            Some(a) => format!("{variant}_a{a}"),
            None => variant.name().to_string(),
        };
        let (params, metrics) = match train_variant(&init, &data.train, &data.records, &tc, variant) {
            Ok(r) => r,
            Err(Error::NumericAbort { message, last_good }) => {
                if let Some(p) = &last_good {
                    let path = common.out.join(format!("{name}.last_good.ckpt"));
                    save_checkpoint(&path, p)?;
                    return Err(Error::NumericAbort {
                        message: format!("{message}; last finite parameters saved to {}", path.display()),
                        last_good,
                    });
                }
                return Err(Error::NumericAbort { message, last_good });
            }
            Err(e) => return Err(e),
        };
        out.emit(&format!("{name}.ckpt"), false, |w| write_checkpoint(w, &params))?;
        out.emit(&format!("{name}.metrics.csv"), true, |w| write_metrics_csv(w, &metrics))?;
        let sidecar = json!({
            "variant": variant.name(),
            "alpha": tc.alpha,
            "beta": tc.beta,
            "init": init_path.display().to_string(),
            "init_checksum": init.checksum(),
            "params_checksum": params.checksum(),
            "final_loss": metrics.last().map(|m| m.loss),
            "config": tc,
        });
        out.emit(&format!("{name}.json"), false, |w| json_bytes(w, &sidecar))?;
        eprintln!("train: {name} -> {}", common.out.join(format!("{name}.ckpt")).display());
        last_name = name;
    }
    let run = if args.preset.is_some() { format!("{variant}_alpha_sweep") } else { last_name };
    out.finish(&run, t.elapsed().as_secs_f64())?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let t = Instant::now();
    let common = &args.common;
    let mut cfg = setup(common)?;
    cfg.eval.fixed_order |= args.fixed_order;
    let data = read_dataset(&args.data)?;
    let params = checkpoint_for(&cfg, &args.checkpoint)?;
    let report = eval_stage(&cfg, &params, &data.test, common.seed)?;
    let name = stem(&args.checkpoint);
    let mut out = OutDir::create(&common.out, RunManifest::new("eval", &cfg, common.seed))?;
    out.manifest.inputs.push(args.checkpoint.display().to_string());
    out.manifest.seeds.insert("eval".into(), Stage::Eval.seed(common.seed));
    out.emit(&format!("{name}.eval.csv"), false, |w| report.write_csv(w))?;
    out.emit(&format!("{name}.eval.json"), false, |w| {
        w.extend_from_slice(report.summary_json().as_bytes());
        w.push(b'\n');
        Ok(())
    })?;
    out.finish(&format!("{name}.eval"), t.elapsed().as_secs_f64())?;
    let s = &report.summary;
    eprintln!(
        "eval {name}: tm {:.4} diversity {:.4} recovery {:.4}",
        s.mean_tm.mean, s.diversity.mean, s.recovery.mean
    );
    Ok(())
}

/// Variant and α from the checkpoint's sidecar, else the file stem and 0.
fn label(path: &Path) -> (String, f64) {
    let sidecar = path.with_extension("json");
    std::fs::read_to_string(sidecar)
        .ok()
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| Some((v.get("variant")?.as_str()?.to_string(), v.get("alpha")?.as_f64()?)))
        .unwrap_or_else(|| (stem(path), 0.0))
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let t = Instant::now();
    let common = &args.common;
    let cfg = setup(common)?;
    let data = read_dataset(&args.data)?;
    let loaded = args
        .checkpoints
        .iter()
        .map(|p| Ok((label(p), checkpoint_for(&cfg, p)?)))
        .collect::<Result<Vec<_>>>()?;
    let policies: Vec<SweepPolicy> = loaded
        .iter()
        .map(|((variant, alpha), params)| SweepPolicy {
            variant,
            alpha: *alpha,
            params,
        })
        .collect();
    let points = sweep(
        &policies,
        &data.test,
        &cfg.eval.sweep_temperatures,
        cfg.eval.n_samples,
        cfg.eval.fixed_order || args.fixed_order,
        Stage::Sweep.seed(common.seed),
    )?;
    let mut out = OutDir::create(&common.out, RunManifest::new("sweep", &cfg, common.seed))?;
    out.manifest.inputs.extend(args.checkpoints.iter().map(|p| p.display().to_string()));
    out.manifest.seeds.insert("sweep".into(), Stage::Sweep.seed(common.seed));
    out.emit("sweep.csv", false, |w| write_sweep_csv(w, &points))?;
    out.finish("sweep", t.elapsed().as_secs_f64())?;
    eprintln!("sweep: {} points", points.len());
    Ok(())
}

fn cmd_entropy(args: &EvalArgs) -> Result<()> {
    let t = Instant::now();
    let common = &args.common;
    let cfg = setup(common)?;
    let data = read_dataset(&args.data)?;
    let params = checkpoint_for(&cfg, &args.checkpoint)?;
    let fixed = cfg.eval.fixed_order || args.fixed_order;
    let report = entropy_report(
        &params,
        &data.test,
        cfg.eval.entropy_orders,
        cfg.eval.token_entropy_samples,
        fixed,
        common.seed,
    )?;
    let name = stem(&args.checkpoint);
    let mut out = OutDir::create(&common.out, RunManifest::new("entropy", &cfg, common.seed))?;
    out.manifest.inputs.push(args.checkpoint.display().to_string());
    out.manifest.seeds.insert("entropy".into(), Stage::Entropy.seed(common.seed));
    out.emit(&format!("{name}.entropy.csv"), false, |w| report.write_csv(w))?;
    let summary = json!({
        "n_orders": report.n_orders,
        "fixed_order": report.fixed_order,
        "n_prompts": report.rows.len(),
        "collapsed": report.rows.iter().filter(|r| r.collapsed).count(),
        // -inf is not JSON; a fully collapsed report stores null
        "mean_diff_entropy": report.mean_diff_entropy.is_finite().then_some(report.mean_diff_entropy),
        "token_entropy": report.token_entropy,
    });
    out.emit(&format!("{name}.entropy.json"), false, |w| json_bytes(w, &summary))?;
    out.finish(&format!("{name}.entropy"), t.elapsed().as_secs_f64())?;
    eprintln!(
        "entropy {name}: mean differential entropy {} token entropy {:.4}",
        report.mean_diff_entropy, report.token_entropy.mean
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Gen(c) => cmd_gen(c),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Entropy(a) => cmd_entropy(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
