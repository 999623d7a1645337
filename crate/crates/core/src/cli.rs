//! Command-line front end: configuration, orchestration and report files.
//!
//! Each run reads one JSON document; `--set key=value` replaces a top-level
//! key (the value is parsed as JSON, falling back to a string). The output
//! directory comes from `--out`, else `MRSPDE_OUT_DIR`, else the config's
//! `output_dir`, else `out`. Every run writes `manifest.json` listing each
//! produced file with its SHA-256; wall-clock timings live in the manifest's
//! `timings` section only.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::constants::{log_c1, log_c2, ConstantEnv};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::kernel::{kernel_suite, HeatKernelConfig, KernelSuiteReport, KernelSuiteSettings};
use crate::noise::{DriftField, NoiseLayout};
use crate::reflect::{ObstacleSpec, DEFAULT_BISECTION_TOL};
use crate::solver::{solve_mean_reflected, CoefficientSpec, SolveSettings, Trajectory};
use crate::transport::{concentration_profile, run_coupling, CouplingSettings};

pub const OUT_DIR_ENV: &str = "MRSPDE_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "mrspde", version, about = "Mean-reflected stochastic heat equation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the particle solver and write K, snapshots and diagnostics.
    Simulate(RunArgs),
    /// Run the Girsanov coupling and check the transportation chain.
    Couple(RunArgs),
    /// Evaluate log C1 (and log C2 when c_h, C_h are given).
    Constants(ConstantArgs),
    /// Sweep the heat kernel bounds and identities.
    KernelCheck(RunArgs),
    /// Tail profile of particle sup-norms.
    Concentration(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a top-level config key, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    /// Run even when dt > dx^2/2.
    #[arg(long)]
    pub allow_unstable: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConstantArgs {
    #[arg(long = "T")]
    pub t_end: f64,
    #[arg(long = "c-t")]
    pub c_t: f64,
    #[arg(long = "m-sigma")]
    pub m_sigma: f64,
    #[arg(long = "c-h")]
    pub c_h: Option<f64>,
    #[arg(long = "C-h")]
    pub big_c_h: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Grid descriptor: `nt` explicit, or the smallest `nt` with `dt <= cfl dx^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(rename = "T")]
    pub t_end: f64,
    pub nx: usize,
    #[serde(default)]
    pub nt: Option<usize>,
    #[serde(default)]
    pub cfl: Option<f64>,
}

impl GridSpec {
    pub fn build(&self) -> Result<SpaceTimeGrid> {
        match (self.nt, self.cfl) {
            (Some(_), Some(_)) => Err(Error::Config("grid: give either nt or cfl, not both".into())),
            (Some(nt), None) => SpaceTimeGrid::new(self.t_end, nt, self.nx),
            (None, ratio) => SpaceTimeGrid::with_cfl(self.t_end, self.nx, ratio.unwrap_or(0.5)),
        }
    }
}

fn default_tol() -> f64 {
    DEFAULT_BISECTION_TOL
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub obstacle: ObstacleSpec,
    #[serde(default)]
    pub drift: Option<Value>,
    pub n_particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Snapshot times; each must be a grid time.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub keep_fields: bool,
    #[serde(default)]
    pub noise: NoiseLayout,
    #[serde(default = "default_tol")]
    pub bisection_tol: f64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub allow_unstable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalSpec {
    pub t: f64,
    pub x: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleConfig {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub obstacle: ObstacleSpec,
    pub drift: Value,
    pub n_pairs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub marginal: Option<MarginalSpec>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub allow_unstable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationConfig {
    pub grid: GridSpec,
    pub coefficients: CoefficientSpec,
    pub obstacle: ObstacleSpec,
    pub n_particles: usize,
    pub eps: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub noise: NoiseLayout,
    #[serde(default = "default_tol")]
    pub bisection_tol: f64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub allow_unstable: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCheckConfig {
    #[serde(default)]
    pub kernel: Option<HeatKernelConfig>,
    #[serde(default)]
    pub sample: KernelSuiteSettings,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// One file written by a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub files: Vec<FileEntry>,
    /// Seconds per stage; the only non-reproducible section.
    pub timings: Map<String, Value>,
}

struct Output {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Output {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn finish(self, command: &str, config: Value, timings: Map<String, Value>) -> Result<()> {
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            files: self.files,
            timings,
        };
        let path = self.dir.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        s.push('\n');
        std::fs::write(&path, s).map_err(|e| Error::io(&path, e))
    }
}

/// Shortest round-trip decimal.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn csv(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn load_config(args: &RunArgs, required: bool) -> Result<Value> {
    let mut value = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        None if required => return Err(Error::Config("--config is required for this subcommand".into())),
        None => Value::Object(Map::new()),
    };
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config: top level must be a JSON object".into()))?;
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got `{kv}`")))?;
        let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        obj.insert(k.to_string(), parsed);
    }
    if let Some(seed) = args.seed {
        obj.insert("seed".into(), json!(seed));
    }
    if let Some(w) = args.workers {
        obj.insert("workers".into(), json!(w));
    }
    if args.allow_unstable {
        obj.insert("allow_unstable".into(), json!(true));
    }
    Ok(value)
}

fn parse<T: DeserializeOwned>(value: &Value) -> Result<T> {
    serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("config: {e}")))
}

fn output_dir(args_out: Option<&Path>, config_out: Option<&Path>) -> PathBuf {
    if let Some(p) = args_out {
        return p.to_path_buf();
    }
    if let Ok(p) = std::env::var(OUT_DIR_ENV) {
        if !p.is_empty() {
            return PathBuf::from(p);
        }
    }
    config_out.map_or_else(|| PathBuf::from("out"), Path::to_path_buf)
}

/// Drift descriptor: a [`DriftField`], or `{"kind": "csv", "path": ...}`.
fn parse_drift(value: &Value, grid: &SpaceTimeGrid, base: Option<&Path>) -> Result<DriftField> {
    let kind = value.get("kind").and_then(Value::as_str).unwrap_or_default();
    match kind {
        "csv" => {
            let path = value
                .get("path")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Config("drift: csv descriptor needs `path`".into()))?;
            let mut p = PathBuf::from(path);
            if p.is_relative() {
                if let Some(dir) = base.and_then(Path::parent) {
                    p = dir.join(p);
                }
            }
            DriftField::from_csv(&p, grid)
        }
        "random" | "adapted" | "stochastic" => Err(Error::Config(format!(
            "drift: kind `{kind}` is unsupported; only deterministic drifts can be coupled"
        ))),
        _ => {
            let g: DriftField = serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("drift: {e}")))?;
            g.validate(grid)?;
            Ok(g)
        }
    }
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let n = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if n == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("workers: {e}")))?;
    pool.install(f)
}

fn snapshot_steps(grid: &SpaceTimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    times
        .iter()
        .map(|&t| {
            if !(0.0..=grid.t_end() * (1.0 + 1e-12)).contains(&t) {
                return Err(Error::Config(format!("snapshots: time {t} is outside [0, T]")));
            }
            let n = grid.step_of(t);
            if (grid.time(n) - t).abs() > 1e-9 * grid.t_end() {
                return Err(Error::Config(format!(
                    "snapshots: time {t} is not a grid time (nearest is {})",
                    grid.time(n)
                )));
            }
            Ok(n)
        })
        .collect()
}

fn env_for(grid: &SpaceTimeGrid, coeffs: &CoefficientSpec, obstacle: &ObstacleSpec) -> ConstantEnv {
    let env = ConstantEnv::new(grid.t_end(), coeffs.c_t, coeffs.m_sigma);
    match *obstacle {
        ObstacleSpec::General { c_h, big_c_h, .. } => env.with_bi_lipschitz(c_h, big_c_h),
        ObstacleSpec::Linear { .. } => env,
    }
}

fn check_model(grid: &SpaceTimeGrid, coeffs: &CoefficientSpec, obstacle: &ObstacleSpec, allow_unstable: bool) -> Result<()> {
    if !allow_unstable && !grid.cfl_ok() {
        let r = grid.cfl_report();
        return Err(Error::Config(format!(
            "grid: CFL condition violated, dt = {} > dx^2/2 = {}; refine nt or pass --allow-unstable",
            r.dt,
            0.5 * r.dx * r.dx
        )));
    }
    coeffs.validate(grid.t_end())?;
    obstacle.validate(grid.t_end())
}

fn trajectory_files(out: &mut Output, tr: &Trajectory) -> Result<()> {
    let grid = &tr.grid;
    let m = grid.nx() - 1;
    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((1..=m).map(|j| format!("x{j}")));
    let k_csv = csv(
        &header,
        (0..grid.nt()).map(|n| {
            let mut r = vec![(n + 1).to_string(), num(grid.time(n + 1))];
            r.extend(tr.k.row(n).iter().map(|v| num(*v)));
            r
        }),
    );
    out.write("k_increments.csv", k_csv.as_bytes())?;

    let mut header = vec!["step".to_string(), "time".to_string()];
    header.extend((0..=grid.nx()).map(|j| format!("x{j}")));
    let mean_csv = csv(
        &header,
        tr.snapshots.iter().map(|s| {
            let mut r = vec![s.step.to_string(), num(s.time)];
            r.extend(s.mean.iter().map(|v| num(*v)));
            r
        }),
    );
    out.write("snapshot_mean.csv", mean_csv.as_bytes())?;

    let sup_csv = csv(
        &["step".into(), "time".into(), "particle".into(), "sup".into()],
        tr.snapshots
            .iter()
            .flat_map(|s| s.sup.iter().enumerate().map(move |(i, v)| vec![s.step.to_string(), num(s.time), i.to_string(), num(*v)])),
    );
    out.write("snapshot_sup.csv", sup_csv.as_bytes())?;

    let norms = csv(
        &["particle".into(), "sup".into()],
        tr.sup_norms.iter().enumerate().map(|(i, v)| vec![i.to_string(), num(*v)]),
    );
    out.write("sup_norms.csv", norms.as_bytes())?;

    for s in &tr.snapshots {
        if let Some(fields) = &s.fields {
            let mut header = vec!["particle".to_string()];
            header.extend((0..=grid.nx()).map(|j| format!("x{j}")));
            let body = csv(
                &header,
                fields.chunks_exact(grid.n_nodes()).enumerate().map(|(i, row)| {
                    let mut r = vec![i.to_string()];
                    r.extend(row.iter().map(|v| num(*v)));
                    r
                }),
            );
            out.write(&format!("fields_step{}.csv", s.step), body.as_bytes())?;
        }
    }
    Ok(())
}

fn simulate(args: &RunArgs) -> Result<()> {
    let t0 = Instant::now();
    let raw = load_config(args, true)?;
    let cfg: SimulateConfig = parse(&raw)?;
    let grid = cfg.grid.build()?;
    check_model(&grid, &cfg.coefficients, &cfg.obstacle, cfg.allow_unstable)?;
    let drift = cfg
        .drift
        .as_ref()
        .map(|d| parse_drift(d, &grid, args.config.as_deref()))
        .transpose()?;
    let mut settings = SolveSettings::new(cfg.n_particles, cfg.seed);
    settings.snapshots = snapshot_steps(&grid, &cfg.snapshots)?;
    settings.keep_fields = cfg.keep_fields;
    settings.bisection_tol = cfg.bisection_tol;
    settings.noise = cfg.noise;
    settings.allow_unstable = cfg.allow_unstable;
    let mut out = Output::new(output_dir(args.out.as_deref(), cfg.output_dir.as_deref()))?;
    let t_setup = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let tr = with_pool(cfg.workers, || {
        solve_mean_reflected(&grid, &cfg.coefficients, &cfg.obstacle, &settings, drift.as_ref(), None)
    })?;
    let t_solve = t1.elapsed().as_secs_f64();

    let floor_compatible = cfg.obstacle.check_compatibility().is_ok();
    let d = &tr.diagnostics;
    let summary = json!({
        "grid": grid,
        "n_particles": tr.n_particles,
        "seed": tr.seed,
        "snapshot_steps": settings.snapshots,
        "floor_compatible": floor_compatible,
        "constraint_tolerance": d.constraint_tolerance(),
        "constraint_ok": d.constraint_ok(),
        "flatness_ok": d.flatness_ok(),
        "diagnostics": d,
    });
    trajectory_files(&mut out, &tr)?;
    out.write_json("summary.json", &summary)?;
    let mut timings = Map::new();
    timings.insert("setup".into(), json!(t_setup));
    timings.insert("solve".into(), json!(t_solve));
    out.finish("simulate", raw, timings)?;
    println!(
        "simulate: K mass {}, min constraint {}, flatness residual {}",
        d.k_mass, d.min_constraint, d.flatness_residual
    );
    // K is only asserted when it was computed from the constraint
    if drift.is_none() && !(d.constraint_ok() && d.flatness_ok() && d.min_dk >= 0.0) {
        return Err(Error::Assertion(format!(
            "flat-solution check failed: min constraint {} (tolerance {}), flatness residual {}, min dK {}",
            d.min_constraint,
            d.constraint_tolerance(),
            d.flatness_residual,
            d.min_dk
        )));
    }
    Ok(())
}

fn couple(args: &RunArgs) -> Result<()> {
    let t0 = Instant::now();
    let raw = load_config(args, true)?;
    let cfg: CoupleConfig = parse(&raw)?;
    let grid = cfg.grid.build()?;
    check_model(&grid, &cfg.coefficients, &cfg.obstacle, cfg.allow_unstable)?;
    let g = parse_drift(&cfg.drift, &grid, args.config.as_deref())?;
    let env = env_for(&grid, &cfg.coefficients, &cfg.obstacle);
    let mut settings = CouplingSettings::new(&grid, cfg.n_pairs, cfg.seed);
    if let Some(m) = cfg.marginal {
        if !(0.0..=grid.t_end()).contains(&m.t) || !(0.0..=1.0).contains(&m.x) {
            return Err(Error::Config(format!("marginal: ({}, {}) is outside [0, T] x [0, 1]", m.t, m.x)));
        }
        settings.marginal_t = m.t;
        settings.marginal_x = m.x;
    }
    settings.allow_unstable = cfg.allow_unstable;
    let mut out = Output::new(output_dir(args.out.as_deref(), cfg.output_dir.as_deref()))?;
    let t_setup = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let report = with_pool(cfg.workers, || run_coupling(&grid, &cfg.coefficients, &cfg.obstacle, &g, &settings, &env))?;
    let t_run = t1.elapsed().as_secs_f64();
    out.write_json("coupling_report.json", &report)?;
    let mut timings = Map::new();
    timings.insert("setup".into(), json!(t_setup));
    timings.insert("coupling".into(), json!(t_run));
    out.finish("couple", raw, timings)?;

    println!(
        "couple: H = {}, dist_sq = {} (se {}), 2 C H = {}, w2_sq = {}",
        report.entropy_h,
        report.dist_sq,
        report.dist_sq_bootstrap_se,
        report.coupling_vs_entropy.bound,
        report.marginal.w2_sq
    );
    if !report.all_pass() {
        return Err(Error::Assertion("transportation chain check failed; see coupling_report.json".into()));
    }
    Ok(())
}

fn constants(args: &ConstantArgs) -> Result<()> {
    let mut env = ConstantEnv::new(args.t_end, args.c_t, args.m_sigma);
    match (args.c_h, args.big_c_h) {
        (Some(lo), Some(hi)) => env = env.with_bi_lipschitz(lo, hi),
        (None, None) => {}
        _ => return Err(Error::Config("--c-h and --C-h must be given together".into())),
    }
    env.validate()?;
    let c1 = log_c1(&env)?;
    let mut doc = json!({ "env": env, "log_c1": c1.log_value, "c1": c1, });
    if env.c_h.is_some() {
        let c2 = log_c2(&env)?;
        doc["log_c2"] = json!(c2.log_value);
        doc["c2"] = json!(c2);
    }
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Data(e.to_string()))?;
    println!("{text}");
    if let Some(dir) = &args.out {
        let mut out = Output::new(dir.clone())?;
        out.write_json("constants.json", &doc)?;
        out.finish("constants", json!({ "env": env }), Map::new())?;
    }
    Ok(())
}

/// Thresholds applied by `kernel-check`.
pub fn kernel_check_verdicts(r: &KernelSuiteReport) -> Vec<(&'static str, f64, f64, bool)> {
    vec![
        ("nonnegativity", -r.min_value, 1e-12, r.min_value >= -1e-12),
        ("symmetry", r.max_asymmetry, 1e-12, r.max_asymmetry <= 1e-12),
        ("free_kernel_bound", r.free_kernel_excess, 1e-10, r.free_kernel_excess <= 1e-10),
        ("l2_bound", r.l2_excess, 1e-6, r.l2_excess <= 1e-6),
        ("semigroup", r.semigroup_error, 1e-6, r.semigroup_error <= 1e-6),
        ("series_agreement", r.series_gap, 1e-10, r.series_gap <= 1e-10),
    ]
}

fn kernel_check(args: &RunArgs) -> Result<()> {
    let t0 = Instant::now();
    let raw = load_config(args, false)?;
    let cfg: KernelCheckConfig = parse(&raw)?;
    let kcfg = cfg.kernel.unwrap_or_default();
    let mut out = Output::new(output_dir(args.out.as_deref(), cfg.output_dir.as_deref()))?;
    let report = with_pool(cfg.workers, || kernel_suite(&kcfg, &cfg.sample))?;
    let verdicts = kernel_check_verdicts(&report);
    let checks: Vec<Value> = verdicts
        .iter()
        .map(|(name, value, limit, pass)| json!({ "check": name, "worst": value, "limit": limit, "pass": pass }))
        .collect();
    let doc = json!({
        "kernel": kcfg,
        "sample": cfg.sample,
        "report": report,
        "checks": checks,
        // reported, not asserted: the (2 pi t)^(-1/2) exp(-d^2/2t) form is
        // exceeded by the kernel of u_t = u_xx away from the diagonal
        "nash_aronson_2pi_form_excess": report.nash_aronson_excess,
    });
    out.write_json("kernel_check.json", &doc)?;
    let mut timings = Map::new();
    timings.insert("suite".into(), json!(t0.elapsed().as_secs_f64()));
    out.finish("kernel-check", raw, timings)?;
    let mut line = String::new();
    for (name, value, limit, pass) in &verdicts {
        let _ = writeln!(line, "{} {name}: worst {value:e} (limit {limit:e})", if *pass { "PASS" } else { "FAIL" });
    }
    print!("{line}");
    if verdicts.iter().any(|v| !v.3) {
        return Err(Error::Assertion("kernel-check: a kernel property failed".into()));
    }
    Ok(())
}

fn concentration(args: &RunArgs) -> Result<()> {
    let t0 = Instant::now();
    let raw = load_config(args, true)?;
    let cfg: ConcentrationConfig = parse(&raw)?;
    let grid = cfg.grid.build()?;
    check_model(&grid, &cfg.coefficients, &cfg.obstacle, cfg.allow_unstable)?;
    let mut settings = SolveSettings::new(cfg.n_particles, cfg.seed);
    settings.noise = cfg.noise;
    settings.bisection_tol = cfg.bisection_tol;
    settings.allow_unstable = cfg.allow_unstable;
    let mut out = Output::new(output_dir(args.out.as_deref(), cfg.output_dir.as_deref()))?;
    let tr = with_pool(cfg.workers, || {
        solve_mean_reflected(&grid, &cfg.coefficients, &cfg.obstacle, &settings, None, None)
    })?;
    let profile = concentration_profile(&tr.sup_norms, &cfg.eps)?;
    let table = csv(
        &["eps".into(), "tail".into(), "se".into()],
        profile.rows.iter().map(|r| vec![num(r.eps), num(r.tail), num(r.se)]),
    );
    out.write("tail.csv", table.as_bytes())?;
    out.write_json("concentration.json", &profile)?;
    let mut timings = Map::new();
    timings.insert("total".into(), json!(t0.elapsed().as_secs_f64()));
    out.finish("concentration", raw, timings)?;
    match profile.slope {
        Some(s) => println!("concentration: median {}, log-tail slope {s}", profile.median),
        None => println!("concentration: median {}, too few positive tails for a slope", profile.median),
    }
    Ok(())
}

/// Execute one command; errors carry the exit status.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Couple(a) => couple(a),
        Command::Constants(a) => constants(a),
        Command::KernelCheck(a) => kernel_check(a),
        Command::Concentration(a) => concentration(a),
    }
}

/// Parse `argv`, run, and return the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
