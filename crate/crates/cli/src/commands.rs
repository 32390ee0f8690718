//! Subcommand implementations.
//!
//! Exit-status contract (stable for CI): 0 success, 1 acceptance-check
//! failure, 2 usage/config error, 3 numeric failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lorasculpt::matrix::Matrix;
use lorasculpt::report::{
    adapter_to_text, base_from_text, base_to_text, eval_csv, fmt_f64, parse_eval_csv, theory_csv,
    trace_csv,
};
use lorasculpt::theory::{monte_carlo_validate, Sampling, SparsitySpec};
use lorasculpt::trainer::{
    evaluate, pretrain_weights, train, EvalReport, TaskSpec, ToyModel, TraceRow, TrainConfig,
};
use lorasculpt::{Result, SculptError};

use crate::config::{parse_config, serialize_config};
use crate::{ModeArg, ReportArgs, SweepArgs, TheoryArgs, TrainArgs, EXIT_CHECK_FAILED, EXIT_OK};

/// Environment variable that overrides the config seed.
pub const SEED_ENV: &str = "SCULPT_SEED";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|e| SculptError::Config(format!("{SEED_ENV}={v:?} is not a valid seed: {e}"))),
        Err(_) => Ok(None),
    }
}

pub fn run_theory(args: &TheoryArgs) -> Result<i32> {
    if args.delta < 0.0 {
        return Err(SculptError::parameter(
            "delta",
            format!("must be nonnegative, got {}", args.delta),
        ));
    }
    if args.window <= 0.0 {
        return Err(SculptError::parameter(
            "window",
            format!("must be positive, got {}", args.window),
        ));
    }
    let sampling = match args.mode {
        ModeArg::Topk => Sampling::ExactTopK,
        _ => Sampling::Bernoulli,
    };
    let mut spec = SparsitySpec::new(args.p, args.q, args.r, args.s_a, args.s_b, sampling)?;
    if matches!(args.mode, ModeArg::Hetero) {
        spec = spec.heterogeneous();
        spec.hetero_halfwidth = args.hetero_width;
    }
    let report = monte_carlo_validate(args.seed, &spec, args.trials, args.delta)?;
    write_file(&args.out.join("theory.csv"), &theory_csv(&report))?;

    // Acceptance: the empirical mean must sit in the window around the law
    // (one-sided for the heterogeneous upper bound) and the violation count
    // must stay within what the deviation bound allows.
    let mean_ok = if matches!(args.mode, ModeArg::Hetero) {
        report.empirical_mean <= report.expected_sparsity + args.window
    } else {
        (report.empirical_mean - report.expected_sparsity).abs() <= args.window
    };
    let allowed = (report.bound * args.trials as f64).ceil() as usize;
    let violations_ok = report.violations <= allowed;
    let verdict = if mean_ok && violations_ok { "PASS" } else { "FAIL" };
    println!(
        "expected={} mean={} std={} violations={}/{} bound={} window={} -> {verdict}",
        fmt_f64(report.expected_sparsity),
        fmt_f64(report.empirical_mean),
        fmt_f64(report.empirical_std),
        report.violations,
        args.trials,
        fmt_f64(report.bound),
        fmt_f64(args.window),
    );
    Ok(if mean_ok && violations_ok {
        EXIT_OK
    } else {
        EXIT_CHECK_FAILED
    })
}

/// Everything one training run produces.
pub struct RunArtifacts {
    pub cfg: TrainConfig,
    pub pre: EvalReport,
    pub post: EvalReport,
    pub trace: Vec<TraceRow>,
    pub model: ToyModel,
    pub base_weights: Vec<Matrix>,
}

/// Pretrains (or reuses cached weights), fine-tunes, and evaluates both
/// states.
pub fn execute_run(cfg: &TrainConfig, base: Option<(Vec<usize>, Vec<Matrix>)>) -> Result<RunArtifacts> {
    cfg.validate()?;
    let task = TaskSpec::generate(cfg);
    let weights = match base {
        Some((dims, weights)) => {
            if dims != cfg.dims {
                return Err(SculptError::Config(format!(
                    "cached base has dims {:?} but the config wants {:?}",
                    dims, cfg.dims
                )));
            }
            weights
        }
        None => pretrain_weights(cfg, &task)?,
    };
    let model = ToyModel::assemble(cfg, weights.clone())?;
    let pre = evaluate(&model, &task);
    let (trained, trace) = train(&model, &task, cfg)?;
    let post = evaluate(&trained, &task);
    Ok(RunArtifacts {
        cfg: cfg.clone(),
        pre,
        post,
        trace,
        model: trained,
        base_weights: weights,
    })
}

pub fn summary_line(report: &EvalReport) -> String {
    format!(
        "Source={} Target={} Avg={}",
        fmt_f64(report.source),
        fmt_f64(report.target),
        fmt_f64(report.avg)
    )
}

fn write_run_artifacts(out: &Path, run: &RunArtifacts) -> Result<()> {
    write_file(&out.join("config.txt"), &serialize_config(&run.cfg))?;
    let weight_refs: Vec<&Matrix> = run.base_weights.iter().collect();
    write_file(&out.join("base.txt"), &base_to_text(&run.cfg.dims, &weight_refs))?;
    write_file(&out.join("eval_pre.csv"), &eval_csv(&run.pre))?;
    write_file(&out.join("trace.csv"), &trace_csv(&run.trace))?;
    write_file(&out.join("eval_report.csv"), &eval_csv(&run.post))?;
    for (i, layer) in run.model.layers.iter().enumerate() {
        write_file(
            &out.join(format!("adapter_layer{i}.txt")),
            &adapter_to_text(&layer.adapter),
        )?;
    }
    Ok(())
}

pub fn run_train(args: &TrainArgs) -> Result<i32> {
    if let Some(path) = &args.dump_config {
        write_file(path, &serialize_config(&TrainConfig::default()))?;
        println!("wrote default config to {}", path.display());
        return Ok(EXIT_OK);
    }
    let config_path = args.config.as_ref().ok_or_else(|| {
        SculptError::Config("--config is required (or use --dump-config)".to_string())
    })?;
    let mut cfg = parse_config(&fs::read_to_string(config_path)?)?;
    if let Some(seed) = seed_from_env()? {
        cfg.seed = seed;
    }
    let base = match &args.base {
        Some(path) => Some(base_from_text(&fs::read_to_string(path)?)?),
        None => None,
    };
    let run = execute_run(&cfg, base)?;
    write_run_artifacts(&args.out, &run)?;
    println!("{}", summary_line(&run.post));
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepParam {
    RetainedDensity,
    Alpha,
    Omega,
    Beta,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(SweepParam::RetainedDensity),
            "alpha" => Ok(SweepParam::Alpha),
            "omega" => Ok(SweepParam::Omega),
            "beta" => Ok(SweepParam::Beta),
            other => Err(SculptError::parameter(
                "param",
                format!("expected s|alpha|omega|beta, got {other}"),
            )),
        }
    }

    fn apply(&self, cfg: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::RetainedDensity => cfg.retained_density = value,
            SweepParam::Alpha => cfg.alpha = value,
            SweepParam::Omega => cfg.omega = value,
            SweepParam::Beta => cfg.beta = value,
        }
    }
}

pub fn run_sweep(args: &SweepArgs) -> Result<i32> {
    let param = SweepParam::parse(&args.param)?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| SculptError::parameter("values", format!("bad value {t:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() || args.seeds == 0 {
        return Err(SculptError::parameter(
            "values/seeds",
            "need at least one value and one seed".to_string(),
        ));
    }
    if args.jobs == 0 {
        return Err(SculptError::parameter("jobs", "must be at least 1".to_string()));
    }
    let mut base_cfg = parse_config(&fs::read_to_string(&args.config)?)?;
    if let Some(seed) = seed_from_env()? {
        base_cfg.seed = seed;
    }

    // Grid points, each an isolated deterministic run.
    let mut points: Vec<(f64, u64)> = Vec::new();
    for &value in &values {
        for i in 0..args.seeds {
            points.push((value, base_cfg.seed + i as u64));
        }
    }
    // Validate all configs up front so bad grid values fail before work starts.
    for &(value, seed) in &points {
        let mut cfg = base_cfg.clone();
        param.apply(&mut cfg, value);
        cfg.seed = seed;
        cfg.validate()?;
    }

    let results: Mutex<Vec<Option<(f64, u64, f64, f64, f64)>>> =
        Mutex::new(vec![None; points.len()]);
    let next: Mutex<usize> = Mutex::new(0);
    let worker_error: Mutex<Option<SculptError>> = Mutex::new(None);
    std::thread::scope(|scope| {
        for _ in 0..args.jobs.min(points.len()) {
            scope.spawn(|| loop {
                let idx = {
                    let mut guard = next.lock().unwrap();
                    if *guard >= points.len() {
                        return;
                    }
                    let idx = *guard;
                    *guard += 1;
                    idx
                };
                let (value, seed) = points[idx];
                let mut cfg = base_cfg.clone();
                param.apply(&mut cfg, value);
                cfg.seed = seed;
                match execute_run(&cfg, None) {
                    Ok(run) => {
                        results.lock().unwrap()[idx] =
                            Some((value, seed, run.post.source, run.post.target, run.post.avg));
                    }
                    Err(e) => {
                        worker_error.lock().unwrap().get_or_insert(e);
                        return;
                    }
                }
            });
        }
    });
    if let Some(e) = worker_error.into_inner().unwrap() {
        return Err(e);
    }

    let mut rows: Vec<(f64, u64, f64, f64, f64)> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("all grid points completed"))
        .collect();
    rows.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .expect("finite values")
            .then(a.1.cmp(&b.1))
    });
    let mut csv = String::from("param_value,seed,source,target,avg\n");
    for (value, seed, source, target, avg) in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(*value),
            seed,
            fmt_f64(*source),
            fmt_f64(*target),
            fmt_f64(*avg)
        ));
    }
    write_file(&args.out.join("sweep.csv"), &csv)?;
    println!("{} grid points -> {}", rows.len(), args.out.join("sweep.csv").display());
    Ok(EXIT_OK)
}

pub fn run_report(args: &ReportArgs) -> Result<i32> {
    let eval_path = args.input.join("eval_report.csv");
    if !eval_path.is_file() {
        return Err(SculptError::Config(format!(
            "no eval_report.csv in {} (not a finished run directory)",
            args.input.display()
        )));
    }
    let parsed = parse_eval_csv(&fs::read_to_string(&eval_path)?)?;
    let out_dir: PathBuf = args.out.clone().unwrap_or_else(|| args.input.clone());

    let mut table = String::from("layer_idx,structural_sparsity,expected_sparsity\n");
    for (idx, actual, expected) in &parsed.layers {
        table.push_str(&format!("{idx},{},{}\n", fmt_f64(*actual), fmt_f64(*expected)));
    }
    write_file(&out_dir.join("report.csv"), &table)?;

    let mut summary = String::new();
    summary.push_str(&format!(
        "Source={} Target={} Avg={}\n",
        fmt_f64(parsed.source),
        fmt_f64(parsed.target),
        fmt_f64(parsed.avg)
    ));
    summary.push_str("per-layer delta sparsity (actual vs expected, ceiling = expected + 0.1):\n");
    for (idx, actual, expected) in &parsed.layers {
        let status = if *actual <= expected + 0.1 { "within" } else { "above" };
        summary.push_str(&format!(
            "  layer {idx}: actual={} expected={} [{status} ceiling]\n",
            fmt_f64(*actual),
            fmt_f64(*expected)
        ));
    }
    write_file(&out_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(EXIT_OK)
}
