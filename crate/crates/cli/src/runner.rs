use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use lyapunov_frames::dynamics::SharedField;
use lyapunov_frames::perturbation::{build_reduced_perturbation, counterexample_with, persistence_experiment, probe_bounds, PerturbationSpec, SearchConfig};
use lyapunov_frames::pipeline::{forward_stage, reduced_pipeline, ForwardStage, PipelineConfig, ReducedPipeline, Selection};
use lyapunov_frames::spectrum::{classify_zero, find_t_star, window_deviation_stats, WindowParams};
use lyapunov_frames::SolverConfig;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{Experiment, ExperimentConfig, LMode, LoadedConfig, PerturbDef};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("output directory {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct Failure {
    pub experiment: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub toolkit_version: String,
    pub artifacts: Vec<ArtifactEntry>,
    /// Wall-clock milliseconds per experiment.
    pub timings_ms: BTreeMap<String, f64>,
    pub failures: Vec<Failure>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }
}

struct Writer {
    dir: PathBuf,
    entries: Vec<ArtifactEntry>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<(), String> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| format!("writing {}: {e}", path.display()))?;
        self.entries.push(ArtifactEntry { path: name.to_string(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 });
        Ok(())
    }
}

type Shared<T> = OnceLock<Result<Arc<T>, String>>;

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    hash: &'a str,
    field: SharedField<f64>,
    x0: Vec<f64>,
    keep_frames: bool,
    forward: Shared<ForwardStage<f64>>,
    reduced: Shared<ReducedPipeline<f64>>,
    writer: Mutex<Writer>,
}

fn err_str(e: impl std::fmt::Display) -> String {
    e.to_string()
}

impl Ctx<'_> {
    fn pipeline_config(&self) -> PipelineConfig<f64> {
        let mut p = PipelineConfig::new(self.cfg.t, self.cfg.burn_in(), self.cfg.frame_seed);
        if let Some(pad) = self.cfg.backward_pad {
            p.backward_pad = pad;
        }
        p.solver = self.cfg.solver.clone();
        p.frames = self.cfg.frames;
        p.frames.keep_frames |= self.keep_frames;
        p.selection = match &self.cfg.l_mode {
            LMode::Auto { epsilon_zero } => Selection::Auto(*epsilon_zero),
            LMode::Explicit { indices } => Selection::Explicit(indices.iter().map(|i| i - 1).collect()),
        };
        p
    }

    fn forward(&self) -> Result<Arc<ForwardStage<f64>>, String> {
        self.forward
            .get_or_init(|| {
                let mut p = self.pipeline_config();
                p.frames.keep_frames = self.cfg.frames.keep_frames;
                forward_stage(self.field.as_ref(), &self.x0, &p).map(Arc::new).map_err(err_str)
            })
            .clone()
    }

    fn reduced(&self) -> Result<Arc<ReducedPipeline<f64>>, String> {
        self.reduced
            .get_or_init(|| {
                let fwd = (*self.forward()?).clone();
                reduced_pipeline(self.field.as_ref(), &self.x0, &self.pipeline_config(), Some(fwd)).map(Arc::new).map_err(err_str)
            })
            .clone()
    }

    fn header(&self, artifact: &str, kind: &str) -> Value {
        json!({
            "config_hash": self.hash,
            "toolkit_version": TOOLKIT_VERSION,
            "artifact": artifact,
            "experiment": kind,
            "field": self.cfg.field.label(),
            "frame_seed": self.cfg.frame_seed,
        })
    }

    fn write_json(&self, name: &str, kind: &str, body: Value) -> Result<(), String> {
        let mut doc = json!({ "header": self.header(name, kind) });
        if let (Value::Object(d), Value::Object(b)) = (&mut doc, body) {
            d.extend(b);
        }
        let mut bytes = serde_json::to_vec_pretty(&doc).map_err(err_str)?;
        bytes.push(b'\n');
        self.writer.lock().expect("writer poisoned").put(name, &bytes)
    }

    /// CSV plus a `.meta.json` sidecar carrying the header.
    fn write_csv(&self, name: &str, kind: &str, bytes: Vec<u8>) -> Result<(), String> {
        let meta = format!("{}.meta.json", name.trim_end_matches(".csv"));
        let mut m = serde_json::to_vec_pretty(&json!({ "header": self.header(name, kind) })).map_err(err_str)?;
        m.push(b'\n');
        let mut w = self.writer.lock().expect("writer poisoned");
        w.put(name, &bytes)?;
        w.put(&meta, &m)
    }
}

fn f64s(v: &[f64]) -> Value {
    json!(v)
}

fn one_based(v: &[usize]) -> Vec<usize> {
    v.iter().map(|i| i + 1).collect()
}

fn run_spectrum(ctx: &Ctx, name: &str) -> Result<(), String> {
    let fwd = ctx.forward()?;
    let eps = match ctx.cfg.l_mode {
        LMode::Auto { epsilon_zero: Some(e) } => e,
        _ => fwd.estimate.epsilon_zero,
    };
    let classification = match classify_zero(&fwd.estimate, eps) {
        Ok(c) => json!({
            "ell": c.ell,
            "selected": one_based(&c.selected),
            "epsilon_zero": c.epsilon_zero,
            "warnings": c.warnings,
        }),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let log_zeta = fwd.run.final_state.log_zeta.clone();
    ctx.write_json(
        &format!("{name}.json"),
        "spectrum",
        json!({
            "estimate": fwd.estimate.to_json(),
            "classification": classification,
            "final_log_zeta": log_zeta,
            "reorth_count": fwd.run.reorth_count,
            "max_drift": fwd.run.max_drift,
        }),
    )
}

fn run_reduced(ctx: &Ctx, name: &str, stride: usize) -> Result<(), String> {
    let p = ctx.reduced()?;
    let mut csv = Vec::new();
    p.reduced.write_csv_strided(&mut csv, stride).map_err(err_str)?;
    ctx.write_csv(&format!("{name}_tape.csv"), "reduced", csv)?;
    ctx.write_json(
        &format!("{name}.json"),
        "reduced",
        json!({
            "selected_descending": one_based(&p.selected_descending),
            "selected_frame": one_based(&p.selected_frame),
            "x_start": f64s(&p.x_start),
            "horizon": p.horizon,
            "reduced_exponents": f64s(&p.reduced_exponents),
            "spectrum_selected": f64s(&p.spectrum_selected),
            "max_mismatch": p.max_mismatch(),
            "classification_warnings": p.classification.warnings,
            "tape": p.reduced.header_json(),
            "tape_csv_stride": stride,
        }),
    )
}

fn build_perturbation(ctx: &Ctx, p: &ReducedPipeline<f64>, def: &PerturbDef, seed: u64) -> Result<PerturbationSpec<f64>, String> {
    let ell = p.reduced.ell();
    let check = |v: &Vec<f64>, what: &str| {
        if v.len() == ell {
            Ok(())
        } else {
            Err(format!("{what} has {} entries but the reduced system has {ell}", v.len()))
        }
    };
    match def {
        PerturbDef::Constant { a, bound } => match (a, bound) {
            (Some(a), _) => check(a, "a").map(|_| PerturbationSpec::constant(a.clone())),
            (None, Some(l)) => PerturbationSpec::with_bound("constant", *l, ell).map_err(err_str),
            _ => Err("constant perturbation needs 'a' or 'bound'".into()),
        },
        PerturbDef::Sinusoid { amplitude, frequency, phase, bound } => match (amplitude, bound) {
            (Some(amp), _) => {
                check(amp, "amplitude")?;
                let freq = frequency.clone().ok_or("missing frequency")?;
                check(&freq, "frequency")?;
                let ph = phase.clone().unwrap_or_else(|| vec![0.0; ell]);
                check(&ph, "phase")?;
                PerturbationSpec::sinusoid(amp.clone(), freq, ph).map_err(err_str)
            }
            (None, Some(l)) => PerturbationSpec::with_bound("sinusoid", *l, ell).map_err(err_str),
            _ => Err("sinusoid perturbation needs 'amplitude' or 'bound'".into()),
        },
        PerturbDef::Saturating { b, gain, bound } => match (b, bound) {
            (Some(b), _) => check(b, "b").map(|_| PerturbationSpec::saturating(b.clone(), *gain)),
            (None, Some(l)) => {
                let c = l / (ell as f64).sqrt();
                Ok(PerturbationSpec::saturating(vec![c; ell], *gain))
            }
            _ => Err("saturating perturbation needs 'b' or 'bound'".into()),
        },
        PerturbDef::FieldDifference { field, radius } => {
            let x = field.build().map_err(err_str)?;
            build_reduced_perturbation(ctx.field.clone(), x, &p.backward, &p.selected_frame, *radius, seed).map_err(err_str)
        }
    }
}

fn run_perturb(ctx: &Ctx, name: &str, defs: &[PerturbDef], search: &Option<SearchConfig>, horizon: Option<f64>) -> Result<(), String> {
    let p = ctx.reduced()?;
    let mut search = search.clone().unwrap_or_else(|| SearchConfig { seed: ctx.cfg.frame_seed, ..SearchConfig::default() });
    if search.solver == SearchConfig::default().solver {
        search.solver = SolverConfig { sample_stride: ctx.cfg.solver.step, ..ctx.cfg.solver.clone() };
    }
    let t = horizon.unwrap_or(p.horizon).min(p.horizon);
    let mut errors = Vec::new();
    let mut summary = Vec::new();
    for (i, def) in defs.iter().enumerate() {
        let file = format!("{name}_{i}_{}.json", def.kind());
        let outcome = build_perturbation(ctx, &p, def, search.seed).and_then(|f| {
            let probe = probe_bounds(&f, (0.0, t), 1.0, 2000, search.seed);
            let report = persistence_experiment(&p.reduced, &f, &p.spectrum_selected, t, &search).map_err(err_str)?;
            summary.push(json!({
                "file": file,
                "kind": def.kind(),
                "bound": f.bound,
                "achieved": report.records.iter().map(|r| r.achieved).collect::<Vec<_>>(),
                "success": report.records.iter().map(|r| r.success).collect::<Vec<_>>(),
            }));
            ctx.write_json(&file, "perturb", json!({ "probe": probe, "report": report }))
        });
        if let Err(e) = outcome {
            errors.push(format!("perturbation {i} ({}): {e}", def.kind()));
        }
    }
    ctx.write_json(
        &format!("{name}.json"),
        "perturb",
        json!({ "horizon": t, "targets": f64s(&p.spectrum_selected), "runs": summary, "errors": errors }),
    )?;
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors.join("; "))
    }
}

fn run_counterexample(ctx: &Ctx, name: &str, lambda: f64, a: f64, t: Option<f64>) -> Result<(), String> {
    let t = t.unwrap_or(ctx.cfg.t);
    let cfg = SolverConfig { sample_stride: 0.1f64.max(ctx.cfg.solver.step), ..ctx.cfg.solver.clone() };
    let r = counterexample_with(lambda, a, t, &cfg).map_err(err_str)?;
    let mut csv = Vec::new();
    r.write_csv(&mut csv).map_err(err_str)?;
    ctx.write_csv(&format!("{name}.csv"), "counterexample", csv)?;
    ctx.write_json(&format!("{name}.json"), "counterexample", serde_json::to_value(&r).map_err(err_str)?)
}

#[allow(clippy::too_many_arguments)]
fn run_diagnostics(
    ctx: &Ctx,
    name: &str,
    targets: &Option<Vec<f64>>,
    delta: i8,
    offsets: &Option<Vec<i64>>,
    l_max: usize,
    eta: f64,
    max_power: u32,
) -> Result<(), String> {
    let fwd = ctx.forward()?;
    let targets = targets.clone().unwrap_or_else(|| fwd.estimate.per_direction.clone());
    let offsets = offsets.clone().unwrap_or_else(|| [0, 1, 2, 4, 8].iter().map(|s| s * delta as i64).collect());
    let params = WindowParams { targets: targets.clone(), t_window: 1.0, delta, offsets, l_max, eta, origin: None };
    let report = find_t_star(&fwd.run.tape, &params, max_power).map_err(err_str)?;
    let shown = report.t_star.unwrap_or_else(|| report.tried.last().map(|t| t.0).unwrap_or(1.0));
    let stats = window_deviation_stats(&fwd.run.tape, &WindowParams { t_window: shown, ..params.clone() }).map_err(err_str)?;
    let mut csv = Vec::new();
    stats.write_csv(&mut csv).map_err(err_str)?;
    ctx.write_csv(&format!("{name}_windows.csv"), "diagnostics", csv)?;
    ctx.write_json(
        &format!("{name}.json"),
        "diagnostics",
        json!({
            "targets": targets,
            "delta": delta,
            "offsets": params.offsets,
            "t_star": report,
            "windows_t": shown,
            "aggregate": stats.aggregate,
            "below_eta": stats.below_eta,
        }),
    )
}

fn run_experiment(ctx: &Ctx, name: &str, e: &Experiment) -> Result<(), String> {
    match e {
        Experiment::Spectrum {} => run_spectrum(ctx, name),
        Experiment::Reduced { tape_stride } => run_reduced(ctx, name, tape_stride.unwrap_or(10)),
        Experiment::Perturb { perturbations, search, horizon } => run_perturb(ctx, name, perturbations, search, *horizon),
        Experiment::Counterexample { lambda, a, t } => run_counterexample(ctx, name, *lambda, *a, *t),
        Experiment::Diagnostics { targets, delta, offsets, l_max, eta, max_power } => {
            run_diagnostics(ctx, name, targets, *delta, offsets, *l_max, *eta, *max_power)
        }
    }
}

fn experiment_names(list: &[Experiment]) -> Vec<String> {
    list.iter()
        .enumerate()
        .map(|(i, e)| {
            let k = e.kind();
            if list.iter().filter(|o| o.kind() == k).count() > 1 {
                format!("{k}_{i}")
            } else {
                k.to_string()
            }
        })
        .collect()
}

/// Runs every experiment of `loaded` into `out`, writing `manifest.json` last.
pub fn run(loaded: &LoadedConfig, out: &Path, threads: Option<usize>) -> Result<RunManifest, RunError> {
    let cfg = &loaded.config;
    std::fs::create_dir_all(out).map_err(|source| RunError::Output { path: out.to_path_buf(), source })?;
    let field = cfg.field.build().map_err(|e| RunError::Config(format!("/field: {e}")))?;
    let x0 = cfg.initial_point(&field);
    let keep_frames = cfg.experiments.iter().any(|e| match e {
        Experiment::Perturb { perturbations, .. } => perturbations.iter().any(|p| matches!(p, PerturbDef::FieldDifference { .. })),
        _ => false,
    });
    let ctx = Ctx {
        cfg,
        hash: &loaded.hash,
        field,
        x0,
        keep_frames,
        forward: OnceLock::new(),
        reduced: OnceLock::new(),
        writer: Mutex::new(Writer { dir: out.to_path_buf(), entries: Vec::new() }),
    };
    let names = experiment_names(&cfg.experiments);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| RunError::Config(format!("thread pool: {e}")))?;
    let results: Vec<(String, f64, Result<(), String>)> = pool.install(|| {
        cfg.experiments
            .par_iter()
            .zip(names.par_iter())
            .map(|(e, name)| {
                let start = Instant::now();
                let r = run_experiment(&ctx, name, e);
                (name.clone(), start.elapsed().as_secs_f64() * 1e3, r)
            })
            .collect()
    });
    let mut manifest = RunManifest {
        config_hash: loaded.hash.clone(),
        toolkit_version: TOOLKIT_VERSION.to_string(),
        artifacts: Vec::new(),
        timings_ms: BTreeMap::new(),
        failures: Vec::new(),
    };
    for (name, ms, r) in results {
        manifest.timings_ms.insert(name.clone(), ms);
        if let Err(error) = r {
            manifest.failures.push(Failure { experiment: name, error });
        }
    }
    ctx.write_json("config.json", "config", json!({ "config": loaded.raw })).map_err(RunError::Config)?;
    let mut writer = ctx.writer.into_inner().expect("writer poisoned");
    writer.entries.sort_by(|a, b| a.path.cmp(&b.path));
    manifest.artifacts = writer.entries;
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(out.join("manifest.json"), bytes).map_err(|source| RunError::Output { path: out.join("manifest.json"), source })?;
    Ok(manifest)
}
