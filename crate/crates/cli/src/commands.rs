use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use mipcnet::data::{
    generate_synthetic, load_folder, preprocess, save_folder, split_ids, Dataset, DatasetManifest, SyntheticSpec,
};
use mipcnet::gradcheck::{run_suite, GradCheckConfig, TOLERANCE};
use mipcnet::harness::{self, file_sha256, AblationAxis, AblationSpec, ResultTable};
use mipcnet::metrics::MetricsReport;
use mipcnet::network::checkpoint_info;
use mipcnet::training::{evaluate, train, LrSchedule, TrainConfig, TrainLog};
use mipcnet::{Model, ModelConfig, Scalar};

use crate::config::{self, invalid, FileConfig};
use crate::{AblateArgs, Cli, Command, EvalArgs, GradcheckArgs, PresetArg, ReportArgs, ScheduleArg, SynthArgs, TrainArgs};

/// Written to `<out>/manifests/<command>.json` by every command.
#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    args: Vec<String>,
    config: Value,
    artifacts: Vec<(String, String)>,
}

fn write_manifest(cli: &Cli, command: &str, config: Value, artifacts: &[PathBuf]) -> Result<PathBuf> {
    let dir = cli.out.join(harness::MANIFESTS_DIR);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let artifacts = artifacts
        .iter()
        .map(|p| Ok((p.strip_prefix(&cli.out).unwrap_or(p).display().to_string(), file_sha256(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let m = RunManifest { command, version: env!("CARGO_PKG_VERSION"), args: std::env::args().collect(), config, artifacts };
    let path = dir.join(format!("{command}.json"));
    fs::write(&path, serde_json::to_string_pretty(&m)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::SynthData(a) => synth_data(cli, &file, a),
        Command::Train(a) => train_cmd(cli, &file, a),
        Command::Evaluate(a) => evaluate_cmd(cli, &file, a),
        Command::Ablate(a) => ablate(cli, &file, a),
        Command::Gradcheck(a) => gradcheck(cli, a),
        Command::Report(a) => report(cli, a),
    }
}

fn preset_model(cli: &Cli) -> ModelConfig {
    match cli.preset {
        Some(PresetArg::Paper) => ModelConfig::paper(),
        Some(PresetArg::Tiny) | None => ModelConfig::tiny(),
    }
}

fn model_config(cli: &Cli, file: &FileConfig) -> Result<ModelConfig> {
    let m: ModelConfig = config::overlay("model", &preset_model(cli), file.model.as_ref())?;
    m.validate()?;
    Ok(m)
}

/// Smoke-sized synthetic set shaped for `model`.
fn data_defaults(model: &ModelConfig) -> SyntheticSpec {
    SyntheticSpec {
        num_classes: model.num_classes,
        image_size: model.input_size,
        channels: model.in_channels,
        ..SyntheticSpec::smoke()
    }
}

fn train_defaults(cli: &Cli) -> TrainConfig {
    match cli.preset {
        Some(PresetArg::Paper) => TrainConfig::paper(),
        _ => TrainConfig::default(),
    }
}

fn synth_data(cli: &Cli, file: &FileConfig, a: &SynthArgs) -> Result<()> {
    let model = model_config(cli, file)?;
    let mut spec: SyntheticSpec = config::overlay("data", &data_defaults(&model), file.data.as_ref())?;
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut spec.num_samples, a.num_samples);
    set(&mut spec.num_classes, a.num_classes);
    set(&mut spec.image_size, a.image_size);
    set(&mut spec.channels, a.channels);
    set(&mut spec.shapes_per_class.0, a.shapes_min);
    set(&mut spec.shapes_per_class.1, a.shapes_max);
    if let Some(s) = a.noise_sigma {
        spec.noise_sigma = s;
    }
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    spec.validate()?;
    if !(0.0..=1.0).contains(&a.train_fraction) {
        return Err(invalid(format!("train_fraction: {} outside [0, 1]", a.train_fraction)));
    }
    let ds = generate_synthetic(&spec)?;
    let split = split_ids(&ds.ids(), a.train_fraction, spec.seed)?;
    let dir = cli.out.join("data");
    let manifest = DatasetManifest::describe(&ds, Some(spec.clone()), Some(split));
    save_folder(&ds, &dir, &manifest)?;
    let mut artifacts: Vec<PathBuf> = fs::read_dir(&dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    artifacts.sort();
    write_manifest(cli, "synth-data", json!({ "data": spec, "train_fraction": a.train_fraction }), &artifacts)?;
    println!("wrote {} samples ({} classes, {}px) to {}", ds.len(), spec.num_classes, spec.image_size, dir.display());
    Ok(())
}

/// Loads a folder or generates the configured synthetic set, resized and
/// normalised for `model`.
fn load_data(data: Option<&Path>, model: &ModelConfig, spec: &SyntheticSpec) -> Result<(Dataset, Value)> {
    let (raw, source) = match data {
        Some(dir) => (load_folder(dir, model.num_classes)?, json!({ "folder": dir })),
        None => {
            spec.validate()?;
            if spec.num_classes != model.num_classes {
                return Err(invalid(format!(
                    "data.num_classes: {} does not match model.num_classes {}",
                    spec.num_classes, model.num_classes
                )));
            }
            (generate_synthetic(spec)?, json!({ "synthetic": spec }))
        }
    };
    let mut constant = 0;
    let samples = raw
        .samples
        .iter()
        .map(|s| {
            let p = preprocess(s, model.input_size)?;
            constant += p.constant_image as usize;
            Ok(p.sample)
        })
        .collect::<mipcnet::Result<Vec<_>>>()?;
    if constant > 0 {
        eprintln!("warning: {constant} constant images were mapped to zeros");
    }
    Ok((Dataset::new(raw.num_classes, raw.class_names.clone(), samples)?, source))
}

fn train_cmd(cli: &Cli, file: &FileConfig, a: &TrainArgs) -> Result<()> {
    let model = model_config(cli, file)?;
    let data_spec: SyntheticSpec = config::overlay("data", &data_defaults(&model), file.data.as_ref())?;
    let mut tc: TrainConfig = config::overlay("train", &train_defaults(cli), file.train.as_ref())?;
    if let Some(v) = a.iterations {
        tc.max_iterations = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = a.lr {
        tc.lr = v;
    }
    if let Some(v) = a.eval_every {
        tc.eval_every = v;
    }
    if let Some(s) = a.lr_schedule {
        tc.lr_schedule = match s {
            ScheduleArg::Constant => LrSchedule::Constant,
            ScheduleArg::Poly => LrSchedule::Poly,
        };
    }
    tc.augment |= a.augment;
    if let Some(s) = cli.seed {
        tc.seed = s;
    }
    tc.validate()?;

    let (ds, source) = load_data(a.data.as_deref(), &model, &data_spec)?;
    let (train_set, eval_set, split) = match a.train_fraction {
        Some(f) => {
            let split = split_ids(&ds.ids(), f, tc.seed)?;
            (ds.subset(&split.train), ds.subset(&split.test), Some(split))
        }
        None => (ds.clone(), ds, None),
    };
    if eval_set.is_empty() {
        return Err(invalid("train_fraction: leaves no samples for evaluation"));
    }
    println!("training on {} samples, evaluating on {}", train_set.len(), eval_set.len());
    let ckpt = cli.out.join(harness::CHECKPOINTS_DIR).join("model.safetensors");
    let (log, report) = if a.double {
        fit::<f64>(&model, &tc, &train_set, &eval_set, &ckpt)?
    } else {
        fit::<f32>(&model, &tc, &train_set, &eval_set, &ckpt)?
    };
    let log_path = cli.out.join("train_log.jsonl");
    log.write_jsonl(&log_path)?;
    let report_path = cli.out.join("report.json");
    fs::write(&report_path, report.to_json()?)?;
    print_report(&report);
    println!("{} iterations in {:.1}s, {} skipped", log.iterations_run(), log.wall_time_secs, log.skipped.len());
    let config = json!({
        "model": model,
        "train": tc,
        "data": source,
        "split": split,
        "precision": if a.double { "f64" } else { "f32" },
    });
    write_manifest(cli, "train", config, &[ckpt, log_path, report_path])?;
    Ok(())
}

fn fit<T: Scalar>(
    model: &ModelConfig,
    tc: &TrainConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    ckpt: &Path,
) -> Result<(TrainLog, MetricsReport)> {
    let out = train::<T>(model, tc, train_set, Some(eval_set))?;
    out.model.save(ckpt)?;
    let report = out.log.final_report().cloned().context("training produced no evaluation")?;
    Ok((out.log, report))
}

fn print_report(r: &MetricsReport) {
    println!("class        dice     iou      hd({})", r.hd_unit);
    for c in &r.classes {
        let mark = if c.vacuous { " (vacuous)" } else { "" };
        println!("{:<12} {:.4}   {:.4}   {:.3}{mark}", c.name, c.dice, c.iou, c.hd);
    }
    println!("mean         {:.4}   {:.4}   {:.3}   over {} cases", r.mean_dice, r.mean_iou, r.mean_hd, r.case_count);
}

fn evaluate_cmd(cli: &Cli, file: &FileConfig, a: &EvalArgs) -> Result<()> {
    if !a.checkpoint.is_file() {
        return Err(invalid(format!("checkpoint: {} does not exist", a.checkpoint.display())));
    }
    let (dtype, model) = checkpoint_info(&a.checkpoint)?;
    let mut spec: SyntheticSpec = config::overlay("data", &data_defaults(&model), file.data.as_ref())?;
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let (ds, source) = load_data(a.data.as_deref(), &model, &spec)?;
    let report = match dtype.as_str() {
        "f64" => evaluate(&Model::<f64>::load(&a.checkpoint)?, &ds)?,
        _ => evaluate(&Model::<f32>::load(&a.checkpoint)?, &ds)?,
    };
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("report.json");
    fs::write(&path, report.to_json()?)?;
    print_report(&report);
    write_manifest(
        cli,
        "evaluate",
        json!({ "checkpoint": a.checkpoint, "checkpoint_sha256": file_sha256(&a.checkpoint)?, "model": model, "data": source }),
        &[path],
    )?;
    Ok(())
}

fn ablate(cli: &Cli, file: &FileConfig, a: &AblateArgs) -> Result<()> {
    let section = file.ablation.clone().unwrap_or_default();
    let axis_text = if a.axis != "all" || section.axis.is_none() { a.axis.clone() } else { section.axis.clone().unwrap() };
    let axes: Vec<AblationAxis> = if axis_text == "all" { AblationAxis::ALL.to_vec() } else { vec![axis_text.parse()?] };
    let defaults = AblationSpec::tiny(axes[0]);
    let base_model = match cli.preset {
        Some(PresetArg::Paper) => ModelConfig::paper(),
        _ => defaults.model.clone(),
    };
    let model: ModelConfig = config::overlay("model", &base_model, file.model.as_ref())?;
    let default_data = if model == defaults.model { defaults.data.clone() } else { SyntheticSpec { num_samples: 40, ..data_defaults(&model) } };
    let data: SyntheticSpec = config::overlay("data", &default_data, file.data.as_ref())?;
    let mut tc: TrainConfig = config::overlay("train", &defaults.train, file.train.as_ref())?;
    if let Some(v) = a.iterations {
        tc.max_iterations = v;
    }
    if let Some(v) = a.batch_size {
        tc.batch_size = v;
    }
    let seeds = match (&a.seeds, cli.seed) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => vec![s],
        (None, None) => section.seeds.clone().unwrap_or(defaults.seeds.clone()),
    };
    let mut tables: Vec<ResultTable> = Vec::new();
    let mut artifacts = Vec::new();
    let mut specs = Vec::new();
    for axis in axes {
        let spec = AblationSpec {
            axis,
            model: model.clone(),
            train: tc.clone(),
            seeds: seeds.clone(),
            data: data.clone(),
            train_fraction: section.train_fraction.unwrap_or(defaults.train_fraction),
            split_seed: section.split_seed.unwrap_or(defaults.split_seed),
        };
        spec.validate()?;
        eprintln!("{}: {} cells x {} seeds", axis.label(), axis.cells(&spec.model).len(), spec.seeds.len());
        let t = harness::run_ablation(&spec, &cli.out, |line| eprintln!("  {line}"))?;
        println!("{}", harness::markdown_table(&t));
        artifacts.push(harness::manifest_path(&cli.out, axis));
        tables.push(t);
        specs.push(spec);
    }
    let failed: usize = tables.iter().flat_map(|t| &t.rows).filter(|r| r.error.is_some()).count();
    write_manifest(cli, "ablate", json!({ "specs": specs }), &artifacts)?;
    if failed > 0 {
        eprintln!("warning: {failed} cells had failing runs; see the status column");
    }
    Ok(())
}

fn gradcheck(cli: &Cli, a: &GradcheckArgs) -> Result<()> {
    let cfg = GradCheckConfig { seed: cli.seed.unwrap_or(0), ..GradCheckConfig::default() };
    let only = a.only.clone();
    let reports = run_suite(&cfg, |name| only.as_deref().is_none_or(|o| name.contains(o)))?;
    if reports.is_empty() {
        return Err(invalid(format!("only: no check matches `{}`", a.only.as_deref().unwrap_or(""))));
    }
    println!("{:<32} {:>7} {:>6} {:>12} {:>12} {:>8}  result", "check", "checked", "kinks", "max rel err", "max abs err", "time");
    for r in &reports {
        println!(
            "{:<32} {:>7} {:>6} {:>12.3e} {:>12.3e} {:>7.1}s  {}",
            r.name,
            r.checked,
            r.kinks,
            r.max_rel_error,
            r.max_abs_error,
            r.seconds,
            if r.passed(TOLERANCE) { "pass" } else { "FAIL" }
        );
    }
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join("gradcheck.json");
    fs::write(&path, serde_json::to_string_pretty(&reports)?)?;
    write_manifest(cli, "gradcheck", json!({ "gradcheck": cfg, "only": a.only }), &[path])?;
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed(TOLERANCE)).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        println!("all {} checks within {TOLERANCE:e}", reports.len());
        Ok(())
    } else {
        anyhow::bail!("{} checks above {TOLERANCE:e}: {}", failed.len(), failed.join(", "))
    }
}

fn report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let from = a.from.clone().unwrap_or_else(|| cli.out.clone());
    let dir = from.join(harness::TABLES_DIR);
    let mut inputs: Vec<PathBuf> = match fs::read_dir(&dir) {
        Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "json")).collect(),
        Err(e) => return Err(invalid(format!("from: cannot read {}: {e}", dir.display()))),
    };
    inputs.sort();
    if inputs.is_empty() {
        return Err(invalid(format!("from: no result tables in {}", dir.display())));
    }
    let mut artifacts = Vec::new();
    for p in &inputs {
        let text = fs::read_to_string(p)?;
        let t: ResultTable = serde_json::from_str(&text).with_context(|| format!("reading {}", p.display()))?;
        if t.rows.is_empty() {
            return Err(invalid(format!("{}: table has no rows", p.display())));
        }
        let paths = harness::write_outputs(&t, &cli.out)?;
        println!("{}", harness::markdown_table(&t));
        artifacts.extend(paths.all().iter().map(|p| p.to_path_buf()));
    }
    write_manifest(cli, "report", json!({ "from": from, "tables": inputs }), &artifacts)?;
    Ok(())
}
