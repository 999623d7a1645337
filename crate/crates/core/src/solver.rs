//! Particle solver for the mean-reflected stochastic heat equation
//! `u_t - u_xx + f(u) = sigma(u) W' + K'` on `[0, 1]` with Dirichlet data.
//!
//! Each particle carries the free field `z_i`; the reflected part `zbar` and
//! the measure `K` are shared. A particle's solution is `u_i = z_i + zbar`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CflReport, SpaceTimeGrid};
use crate::kernel::{HeatKernelConfig, KernelMatrix, QuadRule};
use crate::noise::{DriftField, NoiseLayout, NoiseSheet, RowSource};
use crate::reflect::{flatness_residual, general_push, linear_push, ObstacleSpec, ReflectionMeasure, DEFAULT_BISECTION_TOL};
use crate::stats::{max_abs, pairwise_mean, pairwise_row_mean};

/// Pointwise coefficient `(t, x, u) -> real`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoefficientFn {
    #[default]
    Zero,
    Constant { c: f64 },
    /// `a * u`.
    Linear { a: f64 },
    /// `c + b * sin(u)`.
    SineBounded { c: f64, b: f64 },
}

impl CoefficientFn {
    #[inline]
    pub fn eval(&self, _t: f64, _x: f64, u: f64) -> f64 {
        match *self {
            CoefficientFn::Zero => 0.0,
            CoefficientFn::Constant { c } => c,
            CoefficientFn::Linear { a } => a * u,
            CoefficientFn::SineBounded { c, b } => c + b * u.sin(),
        }
    }
}

/// Initial condition `u0`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialField {
    #[default]
    Zero,
    /// `amplitude * sin(pi x)`.
    Sine { amplitude: f64 },
}

impl InitialField {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            InitialField::Zero => 0.0,
            InitialField::Sine { amplitude } => amplitude * (std::f64::consts::PI * x).sin(),
        }
    }

    /// Node values with exact zeros at both ends.
    pub fn sample(&self, grid: &SpaceTimeGrid) -> Vec<f64> {
        let mut v: Vec<f64> = (0..grid.n_nodes()).map(|j| self.value(grid.x(j))).collect();
        v[0] = 0.0;
        v[grid.nx()] = 0.0;
        v
    }
}

/// Drift `f`, diffusion `sigma`, their declared constants and `u0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    #[serde(default)]
    pub f: CoefficientFn,
    pub sigma: CoefficientFn,
    #[serde(rename = "C_T")]
    pub c_t: f64,
    #[serde(rename = "M_T", default)]
    pub m_t: f64,
    #[serde(rename = "M_sigma")]
    pub m_sigma: f64,
    #[serde(default)]
    pub u0: InitialField,
}

impl CoefficientSpec {
    /// `f = 0`, `sigma = s`, `u0 = 0`.
    pub fn additive(s: f64) -> Self {
        Self {
            f: CoefficientFn::Zero,
            sigma: if s == 0.0 { CoefficientFn::Zero } else { CoefficientFn::Constant { c: s } },
            c_t: 0.0,
            m_t: 0.0,
            m_sigma: s.abs(),
            u0: InitialField::Zero,
        }
    }

    /// Spot-check the declared constants on deterministic random samples.
    pub fn validate(&self, t_end: f64) -> Result<()> {
        for (key, v) in [("C_T", self.c_t), ("M_T", self.m_t), ("M_sigma", self.m_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("coefficients.{key} must be finite and >= 0, got {v}")));
            }
        }
        if let InitialField::Sine { amplitude } = self.u0 {
            if !(amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(Error::Config(format!(
                    "coefficients.u0: amplitude must be finite and >= 0, got {amplitude}"
                )));
            }
        }
        let slack = 1.0 + 1e-9;
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ef);
        for _ in 0..1000 {
            let t = rng.random_range(0.0..=t_end);
            let x = rng.random_range(0.0..=1.0);
            let a: f64 = rng.random_range(-10.0..10.0);
            let b: f64 = rng.random_range(-10.0..10.0);
            let (fa, fb) = (self.f.eval(t, x, a), self.f.eval(t, x, b));
            let (sa, sb) = (self.sigma.eval(t, x, a), self.sigma.eval(t, x, b));
            if (fa - fb).abs() + (sa - sb).abs() > self.c_t * (a - b).abs() * slack + 1e-12 {
                return Err(Error::Config(format!(
                    "coefficients.C_T = {} is below the Lipschitz quotient at u = {a}, {b}",
                    self.c_t
                )));
            }
            if fa.abs() > self.m_t * (1.0 + a.abs()) * slack + 1e-12 {
                return Err(Error::Config(format!(
                    "coefficients.M_T = {} is below the growth of f at u = {a}",
                    self.m_t
                )));
            }
            if sa.abs() > self.m_sigma * slack + 1e-12 {
                return Err(Error::Config(format!(
                    "coefficients.M_sigma = {} is below |sigma| = {} at u = {a}",
                    self.m_sigma,
                    sa.abs()
                )));
            }
        }
        Ok(())
    }
}

/// Particle fields, the shared reflected field and the measure so far.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub n_particles: usize,
    /// Row-major `N x (nx + 1)`.
    pub z: Vec<f64>,
    pub zbar: Vec<f64>,
    pub k: ReflectionMeasure,
    pub t_index: usize,
    next: Vec<f64>,
}

impl Ensemble {
    pub fn new(grid: &SpaceTimeGrid, coeffs: &CoefficientSpec, n_particles: usize) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::Config("n_particles must be >= 1".into()));
        }
        let u0 = coeffs.u0.sample(grid);
        let z = u0.repeat(n_particles);
        Ok(Self {
            n_particles,
            next: vec![0.0; z.len()],
            z,
            zbar: vec![0.0; grid.n_nodes()],
            k: ReflectionMeasure::empty(grid.nx()),
            t_index: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.zbar.len()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.z[i * w..(i + 1) * w]
    }

    /// `u_i = z_i + zbar`.
    pub fn solution(&self, i: usize) -> Vec<f64> {
        self.particle(i).iter().zip(&self.zbar).map(|(a, b)| a + b).collect()
    }
}

/// Per-step output: the push and the mean constraint after it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub dk: Vec<f64>,
    pub constraint: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub bisection_tol: f64,
    pub allow_unstable: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { bisection_tol: DEFAULT_BISECTION_TOL, allow_unstable: false }
    }
}

fn check_cfl(grid: &SpaceTimeGrid, allow_unstable: bool) -> Result<()> {
    if !allow_unstable && !grid.cfl_ok() {
        let rep = grid.cfl_report();
        return Err(Error::Config(format!(
            "grid: CFL condition violated, dt = {} > dx^2/2 = {} (dt/dx^2 = {:.6}); refine nt or pass --allow-unstable",
            rep.dt,
            0.5 * rep.dx * rep.dx,
            rep.ratio
        )));
    }
    Ok(())
}

/// Free update of one particle from step `n` to `n + 1`; returns `false`
/// when a non-finite value appears.
#[allow(clippy::too_many_arguments)]
pub(crate) fn particle_update(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    n: usize,
    z: &[f64],
    zbar: &[f64],
    noise: &[f64],
    drift: Option<&[f64]>,
    out: &mut [f64],
) -> bool {
    let nx = grid.nx();
    let (dt, dx, r) = (grid.dt(), grid.dx(), grid.cfl_ratio());
    let t = grid.time(n);
    let mut finite = true;
    out[0] = 0.0;
    out[nx] = 0.0;
    for j in 1..nx {
        let x = grid.x(j);
        let u = z[j] + zbar[j];
        let s = coeffs.sigma.eval(t, x, u);
        let mut v = z[j] + r * (z[j - 1] - 2.0 * z[j] + z[j + 1]) - dt * coeffs.f.eval(t, x, u) + s * noise[j] / dx;
        if let Some(g) = drift {
            v += dt * s * g[j];
        }
        finite &= v.is_finite();
        out[j] = v;
    }
    finite
}

/// Advance the ensemble by one step.
///
/// `noise_rows` is `N x nx` sheet increments; interior node `j` reads cell
/// `j`. `drift_row` holds `g` on the `nx` cells. With `fixed_k_row` the push
/// is taken as given instead of being computed.
#[allow(clippy::too_many_arguments)]
pub fn fd_step(
    ens: &mut Ensemble,
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    obstacle: &ObstacleSpec,
    noise_rows: &[f64],
    drift_row: Option<&[f64]>,
    fixed_k_row: Option<&[f64]>,
    opts: StepOptions,
) -> Result<StepRecord> {
    check_cfl(grid, opts.allow_unstable)?;
    let nx = grid.nx();
    let w = grid.n_nodes();
    let n = ens.t_index;
    if ens.zbar.len() != w || noise_rows.len() != ens.n_particles * nx || n >= grid.nt() {
        return Err(Error::Contract(format!(
            "fd_step: ensemble width {}, {} noise values for {} particles x {} cells, step {} of {}",
            ens.zbar.len(),
            noise_rows.len(),
            ens.n_particles,
            nx,
            n,
            grid.nt()
        )));
    }
    if drift_row.is_some_and(|g| g.len() != nx) || fixed_k_row.is_some_and(|k| k.len() != nx - 1) {
        return Err(Error::Contract("fd_step: drift or K row has the wrong length".into()));
    }

    let zbar = &ens.zbar;
    let bad = ens
        .next
        .par_chunks_mut(w)
        .zip(ens.z.par_chunks(w))
        .zip(noise_rows.par_chunks(nx))
        .enumerate()
        .map(|(i, ((out, z), noise))| {
            if particle_update(grid, coeffs, n, z, zbar, noise, drift_row, out) {
                usize::MAX
            } else {
                i
            }
        })
        .min()
        .unwrap_or(usize::MAX);
    if bad != usize::MAX {
        return Err(Error::BlowUp {
            step: n + 1,
            detail: format!("particle {bad} left the finite range"),
        });
    }

    let t_next = grid.time(n + 1);
    let mut proposal = vec![0.0; w];
    grid.heat_step(&ens.zbar, &mut proposal);
    let interior = 1..nx;
    let mean = if matches!(obstacle, ObstacleSpec::Linear { .. }) {
        pairwise_row_mean(&ens.next, w)
    } else {
        Vec::new()
    };

    let dk = match (fixed_k_row, obstacle) {
        (Some(k), _) => k.to_vec(),
        (None, ObstacleSpec::Linear { y }) => {
            let v: Vec<f64> = interior.clone().map(|j| mean[j] - y.value(t_next, grid.x(j))).collect();
            linear_push(&proposal[interior.clone()], &v)?
        }
        (None, ObstacleSpec::General { .. }) => {
            let m = nx - 1;
            let mut values = vec![0.0; ens.n_particles * m];
            for (dst, src) in values.chunks_exact_mut(m).zip(ens.next.chunks_exact(w)) {
                dst.copy_from_slice(&src[1..nx]);
            }
            let xs: Vec<f64> = interior.clone().map(|j| grid.x(j)).collect();
            general_push(&proposal[interior.clone()], &values, obstacle, t_next, &xs, opts.bisection_tol)?
        }
    };
    for (p, d) in proposal[1..nx].iter_mut().zip(&dk) {
        *p += d;
    }
    proposal[0] = 0.0;
    proposal[nx] = 0.0;
    if let Some(j) = proposal.iter().position(|v| !v.is_finite()) {
        return Err(Error::BlowUp { step: n + 1, detail: format!("reflected field is not finite at node {j}") });
    }

    let constraint: Vec<f64> = match obstacle {
        ObstacleSpec::Linear { y } => interior
            .clone()
            .map(|j| mean[j] + proposal[j] - y.value(t_next, grid.x(j)))
            .collect(),
        ObstacleSpec::General { .. } => interior
            .clone()
            .into_par_iter()
            .map(|j| {
                let x = grid.x(j);
                let vals: Vec<f64> = ens.next.chunks_exact(w).map(|z| obstacle.h(t_next, x, z[j] + proposal[j])).collect();
                pairwise_mean(&vals)
            })
            .collect(),
    };

    std::mem::swap(&mut ens.z, &mut ens.next);
    ens.zbar = proposal;
    ens.k.push_row(&dk);
    ens.t_index = n + 1;
    Ok(StepRecord { dk, constraint })
}

/// Run configuration for [`solve_mean_reflected`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSettings {
    pub n_particles: usize,
    pub seed: u64,
    /// Step indices at which statistics are recorded.
    #[serde(default)]
    pub snapshots: Vec<usize>,
    /// Keep full `N x (nx + 1)` fields at each snapshot.
    #[serde(default)]
    pub keep_fields: bool,
    #[serde(default = "default_tol")]
    pub bisection_tol: f64,
    #[serde(default)]
    pub noise: NoiseLayout,
    #[serde(default)]
    pub allow_unstable: bool,
    /// Stream id of the first particle.
    #[serde(default)]
    pub first_stream: u64,
}

fn default_tol() -> f64 {
    DEFAULT_BISECTION_TOL
}

impl SolveSettings {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            snapshots: Vec::new(),
            keep_fields: false,
            bisection_tol: DEFAULT_BISECTION_TOL,
            noise: NoiseLayout::Native,
            allow_unstable: false,
            first_stream: 0,
        }
    }
}

/// Ensemble statistics at one recorded step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    /// Mean of `u` over particles, on all nodes.
    pub mean: Vec<f64>,
    /// `max_x |u_i(t, x)|` per particle.
    pub sup: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fields: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub flatness_residual: f64,
    pub min_constraint: f64,
    /// Largest `|mean constraint|` seen; sets the constraint tolerance.
    pub constraint_scale: f64,
    pub k_mass: f64,
    pub min_dk: f64,
    pub boundary_mass_fraction: f64,
    /// Set when more than half of the K mass sits on the outermost nodes.
    pub boundary_flag: bool,
    pub cfl: CflReport,
    /// Particle mean of `(sup_{t,x} |u_i|)^2`.
    pub mean_sup_sq: f64,
}

impl Diagnostics {
    pub fn constraint_tolerance(&self) -> f64 {
        1e-8 * (1.0 + self.constraint_scale)
    }

    pub fn constraint_ok(&self) -> bool {
        self.min_constraint >= -self.constraint_tolerance()
    }

    pub fn flatness_ok(&self) -> bool {
        self.flatness_residual <= 1e-8 * (1.0 + self.k_mass)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: SpaceTimeGrid,
    pub n_particles: usize,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    /// `sup_{t,x} |u_i|` per particle.
    pub sup_norms: Vec<f64>,
    pub k: ReflectionMeasure,
    /// `nt x (nx - 1)` mean constraint after each push.
    pub constraint: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn snapshot(ens: &Ensemble, grid: &SpaceTimeGrid, keep: bool) -> Snapshot {
    let w = ens.width();
    let u: Vec<f64> = ens
        .z
        .chunks_exact(w)
        .flat_map(|z| z.iter().zip(&ens.zbar).map(|(a, b)| a + b))
        .collect();
    let sup = u.par_chunks(w).map(max_abs).collect();
    Snapshot {
        step: ens.t_index,
        time: grid.time(ens.t_index),
        mean: pairwise_row_mean(&u, w),
        sup,
        fields: keep.then_some(u),
    }
}

fn update_sup(ens: &Ensemble, sup: &mut [f64]) {
    let w = ens.width();
    let zbar = &ens.zbar;
    sup.par_iter_mut().zip(ens.z.par_chunks(w)).for_each(|(s, z)| {
        for (a, b) in z.iter().zip(zbar) {
            *s = s.max((a + b).abs());
        }
    });
}

/// Run all `nt` steps of the particle scheme.
pub fn solve_mean_reflected(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    obstacle: &ObstacleSpec,
    settings: &SolveSettings,
    drift: Option<&DriftField>,
    fixed_k: Option<&ReflectionMeasure>,
) -> Result<Trajectory> {
    check_cfl(grid, settings.allow_unstable)?;
    if let Some(k) = fixed_k {
        k.check_grid(grid)?;
    }
    if let Some(g) = drift {
        g.validate(grid)?;
    }
    if let Some(&s) = settings.snapshots.iter().find(|&&s| s > grid.nt()) {
        return Err(Error::Config(format!("snapshots: step {s} is beyond nt = {}", grid.nt())));
    }
    let n_particles = settings.n_particles;
    let mut ens = Ensemble::new(grid, coeffs, n_particles)?;
    let mut sources: Vec<Box<dyn RowSource>> = (0..n_particles as u64)
        .map(|i| settings.noise.source(grid, settings.seed, settings.first_stream + i))
        .collect::<Result<_>>()?;
    let nx = grid.nx();
    let opts = StepOptions { bisection_tol: settings.bisection_tol, allow_unstable: settings.allow_unstable };

    let mut noise = vec![0.0; n_particles * nx];
    let mut sup = vec![0.0; n_particles];
    update_sup(&ens, &mut sup);
    let mut snapshots = Vec::new();
    if settings.snapshots.contains(&0) {
        snapshots.push(snapshot(&ens, grid, settings.keep_fields));
    }
    let mut constraint = Vec::with_capacity(grid.nt() * (nx - 1));
    for n in 0..grid.nt() {
        sources
            .par_iter_mut()
            .zip(noise.par_chunks_mut(nx))
            .for_each(|(src, row)| src.next_row(row));
        let g = drift.map(|d| d.row(grid, n));
        let k_row = fixed_k.map(|k| k.row(n));
        let rec = fd_step(&mut ens, grid, coeffs, obstacle, &noise, g.as_deref(), k_row, opts)?;
        constraint.extend_from_slice(&rec.constraint);
        update_sup(&ens, &mut sup);
        if settings.snapshots.contains(&(n + 1)) {
            snapshots.push(snapshot(&ens, grid, settings.keep_fields));
        }
    }

    let k = ens.k;
    let sq: Vec<f64> = sup.iter().map(|s| s * s).collect();
    let boundary_mass_fraction = k.boundary_mass_fraction();
    let diagnostics = Diagnostics {
        flatness_residual: flatness_residual(&constraint, &k.dk),
        min_constraint: constraint.iter().copied().fold(f64::INFINITY, f64::min),
        constraint_scale: max_abs(&constraint),
        k_mass: k.total_mass(),
        min_dk: k.min_increment(),
        boundary_mass_fraction,
        boundary_flag: nx > 4 && boundary_mass_fraction > 0.5,
        cfl: grid.cfl_report(),
        mean_sup_sq: pairwise_mean(&sq),
    };
    Ok(Trajectory {
        grid: *grid,
        n_particles,
        seed: settings.seed,
        snapshots,
        sup_norms: sup,
        k,
        constraint,
        diagnostics,
    })
}

/// Reflected field generated by a given measure: `zbar(0) = 0`, heat step
/// then `+ dK`. Returns the `(nt + 1) x (nx + 1)` history.
pub fn zbar_history(grid: &SpaceTimeGrid, k: &ReflectionMeasure) -> Result<Vec<f64>> {
    k.check_grid(grid)?;
    let w = grid.n_nodes();
    let mut hist = vec![0.0; (grid.nt() + 1) * w];
    for n in 0..grid.nt() {
        let (done, rest) = hist.split_at_mut((n + 1) * w);
        let cur = &done[n * w..];
        let next = &mut rest[..w];
        grid.heat_step(cur, next);
        for (v, d) in next[1..grid.nx()].iter_mut().zip(k.row(n)) {
            *v += d;
        }
    }
    Ok(hist)
}

/// Unreflected finite-difference history of one particle driven by a stored
/// sheet; `(nt + 1) x (nx + 1)`.
pub fn free_fd_history(grid: &SpaceTimeGrid, coeffs: &CoefficientSpec, sheet: &NoiseSheet) -> Result<Vec<f64>> {
    check_cfl(grid, false)?;
    sheet.check_dims(grid)?;
    let w = grid.n_nodes();
    let zero = vec![0.0; w];
    let mut hist = coeffs.u0.sample(grid);
    hist.reserve(grid.nt() * w);
    let mut next = vec![0.0; w];
    for n in 0..grid.nt() {
        let cur = &hist[n * w..(n + 1) * w];
        if !particle_update(grid, coeffs, n, cur, &zero, sheet.row(n), None, &mut next) {
            return Err(Error::BlowUp { step: n + 1, detail: "free path left the finite range".into() });
        }
        hist.extend_from_slice(&next);
    }
    Ok(hist)
}

/// Largest grid accepted by [`mild_solve_small`].
pub const MILD_MAX_NX: usize = 32;
pub const MILD_MAX_NT: usize = 64;

/// Unreflected solution by direct quadrature of the mild formula
/// `z(t_n) = P_{t_n} u0 + sum_{m<n} P_{t_n - t_m} [-f(z_m) dt + sigma(z_m) dW_m / dx]`
/// with the same sheet as the finite-difference scheme.
pub fn mild_solve_small(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    sheet: &NoiseSheet,
    cfg: &HeatKernelConfig,
) -> Result<Vec<f64>> {
    if grid.nx() > MILD_MAX_NX || grid.nt() > MILD_MAX_NT {
        return Err(Error::Config(format!(
            "mild_solve_small: grid {}x{} exceeds {}x{}",
            grid.nt(),
            grid.nx(),
            MILD_MAX_NT,
            MILD_MAX_NX
        )));
    }
    sheet.check_dims(grid)?;
    cfg.validate()?;
    let (nt, nx, w) = (grid.nt(), grid.nx(), grid.n_nodes());
    let (dt, dx) = (grid.dt(), grid.dx());
    let lags: Vec<KernelMatrix> = (1..=nt)
        .map(|l| KernelMatrix::new(nx, l as f64 * dt, cfg, QuadRule::Trapezoid))
        .collect::<Result<_>>()?;
    let u0 = coeffs.u0.sample(grid);
    let mut hist = u0.clone();
    // forcing[m] = -f(z_m) dt + sigma(z_m) dW_m / dx on nodes
    let mut forcing: Vec<Vec<f64>> = Vec::with_capacity(nt);
    for n in 1..=nt {
        let m = n - 1;
        let t = grid.time(m);
        let zm = &hist[m * w..(m + 1) * w];
        let mut row = vec![0.0; w];
        for j in 1..nx {
            let x = grid.x(j);
            row[j] = -dt * coeffs.f.eval(t, x, zm[j]) + coeffs.sigma.eval(t, x, zm[j]) * sheet.row(m)[j] / dx;
        }
        forcing.push(row);
        let mut z = lags[n - 1].apply(&u0);
        for (m, row) in forcing.iter().enumerate() {
            lags[n - m - 1].apply_add(row, 1.0, &mut z);
        }
        z[0] = 0.0;
        z[nx] = 0.0;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: n, detail: "mild solution left the finite range".into() });
        }
        hist.extend_from_slice(&z);
    }
    Ok(hist)
}

/// Paired finite-difference vs mild comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MildComparison {
    pub sup_diff: f64,
    /// `dx + sqrt(dt)`.
    pub scale: f64,
    /// `sup_diff / scale`, the empirical constant of this path.
    pub ratio: f64,
}

pub fn compare_fd_mild(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    sheet: &NoiseSheet,
    cfg: &HeatKernelConfig,
) -> Result<MildComparison> {
    let fd = free_fd_history(grid, coeffs, sheet)?;
    let mild = mild_solve_small(grid, coeffs, sheet, cfg)?;
    let sup_diff = fd.iter().zip(&mild).fold(0.0_f64, |a, (x, y)| a.max((x - y).abs()));
    let scale = grid.dx() + grid.dt().sqrt();
    Ok(MildComparison { sup_diff, scale, ratio: sup_diff / scale })
}
