//! Dirichlet heat kernel on `[0, 1]`.
//!
//! `G_t(x, y)` is the fundamental solution of `u_t = u_xx` with zero boundary
//! values. Two representations are available:
//!
//! * the image-charge series
//!   `(4 pi t)^(-1/2) sum_n [exp(-(x-y+2n)^2/4t) - exp(-(x+y+2n)^2/4t)]`,
//!   which converges in a handful of terms for small `t`;
//! * the eigenfunction series `2 sum_n sin(n pi x) sin(n pi y) exp(-n^2 pi^2 t)`,
//!   which converges fast for large `t`.
//!
//! [`eval_kernel`] switches between them at `t_switch`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponent arguments beyond this underflow to zero in `f64`.
const EXP_UNDERFLOW: f64 = 745.0;

/// Truncation and switching parameters for kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelConfig {
    /// Image terms `n` range over `-n_images..=n_images`.
    pub n_images: usize,
    /// Eigenfunction terms `n` range over `1..=n_modes`.
    pub n_modes: usize,
    /// Below this time the image series is used.
    pub t_switch: f64,
    /// Absolute evaluation tolerance.
    pub tol: f64,
}

impl Default for HeatKernelConfig {
    fn default() -> Self {
        Self {
            n_images: 64,
            n_modes: 64,
            t_switch: 0.05,
            tol: 1e-12,
        }
    }
}

impl HeatKernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images < 1 || self.n_modes < 1 {
            return Err(Error::Config("kernel: n_images and n_modes must be >= 1".into()));
        }
        if !(self.t_switch > 0.0) || !(self.tol > 0.0) {
            return Err(Error::Config("kernel: t_switch and tol must be positive".into()));
        }
        Ok(())
    }
}

/// Quadrature rule on the uniform spatial grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadRule {
    #[default]
    Trapezoid,
    /// Composite Simpson; needs an even number of cells.
    Simpson,
}

impl QuadRule {
    /// Weights for `n_cells + 1` equispaced nodes on `[0, 1]`.
    pub fn weights(self, n_cells: usize) -> Result<Vec<f64>> {
        let h = 1.0 / n_cells as f64;
        match self {
            QuadRule::Trapezoid => {
                let mut w = vec![h; n_cells + 1];
                w[0] = 0.5 * h;
                w[n_cells] = 0.5 * h;
                Ok(w)
            }
            QuadRule::Simpson => {
                if n_cells % 2 != 0 {
                    return Err(Error::Contract(format!(
                        "Simpson rule needs an even cell count, got {n_cells}"
                    )));
                }
                Ok((0..=n_cells)
                    .map(|k| {
                        let c = if k == 0 || k == n_cells {
                            1.0
                        } else if k % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        c * h / 3.0
                    })
                    .collect())
            }
        }
    }
}

fn check_args(t: f64, x: f64, y: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("heat kernel needs t > 0, got {t}")));
    }
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "heat kernel positions must lie in [0, 1], got x={x}, y={y}"
        )));
    }
    Ok(())
}

fn on_boundary(x: f64, y: f64) -> bool {
    x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0
}

#[inline]
fn gauss_term(d: f64, four_t: f64) -> f64 {
    let a = d * d / four_t;
    if a > EXP_UNDERFLOW {
        0.0
    } else {
        (-a).exp()
    }
}

/// Truncated image-charge series, unclamped.
pub fn image_series(t: f64, x: f64, y: f64, n_images: usize) -> f64 {
    let four_t = 4.0 * t;
    let minus = x - y;
    let plus = x + y;
    let mut acc = gauss_term(minus, four_t) - gauss_term(plus, four_t);
    for n in 1..=n_images {
        let s = 2.0 * n as f64;
        let direct = gauss_term(minus + s, four_t) + gauss_term(minus - s, four_t);
        let mirror = gauss_term(plus + s, four_t) + gauss_term(plus - s, four_t);
        if direct == 0.0 && mirror == 0.0 && s * s > (plus.abs() + 2.0).powi(2) {
            break;
        }
        acc += direct - mirror;
    }
    acc / (PI * four_t).sqrt()
}

/// Truncated eigenfunction series, unclamped.
///
/// Written as `sum_n exp(-n^2 pi^2 t) [cos(n pi (x-y)) - cos(n pi (x+y))]`,
/// which is exactly symmetric under `x <-> y`.
pub fn eigen_series(t: f64, x: f64, y: f64, n_modes: usize) -> f64 {
    let mut acc = 0.0;
    for n in 1..=n_modes {
        let k = n as f64 * PI;
        let decay = (-k * k * t).exp();
        if decay < 1e-20 {
            break;
        }
        acc += decay * ((k * (x - y)).cos() - (k * (x + y)).cos());
    }
    acc
}

/// `G_t(x, y)`, clamped to be nonnegative and exactly zero on the boundary.
pub fn eval_kernel(t: f64, x: f64, y: f64, cfg: &HeatKernelConfig) -> Result<f64> {
    check_args(t, x, y)?;
    if on_boundary(x, y) {
        return Ok(0.0);
    }
    let raw = if t < cfg.t_switch {
        image_series(t, x, y, cfg.n_images)
    } else {
        eigen_series(t, x, y, cfg.n_modes)
    };
    debug_assert!(raw >= -cfg.tol.max(1e-9), "kernel series went negative: {raw}");
    Ok(raw.max(0.0))
}

/// Gaussian upper bound `(2 pi t)^(-1/2) exp(-(x-y)^2 / 2t)` quoted as the
/// Nash-Aronson estimate.
pub fn nash_aronson_bound(t: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    (-(d * d) / (2.0 * t)).exp() / (2.0 * PI * t).sqrt()
}

/// Free-space heat kernel of `u_t = u_xx`, `(4 pi t)^(-1/2) exp(-(x-y)^2/4t)`.
///
/// The Dirichlet kernel is dominated by it pointwise.
pub fn free_kernel(t: f64, x: f64, y: f64) -> f64 {
    let d = x - y;
    (-(d * d) / (4.0 * t)).exp() / (4.0 * PI * t).sqrt()
}

/// Per-time bound on `int_0^1 G_t(x, y)^2 dy`.
pub fn l2_bound(t: f64) -> f64 {
    1.0 / (2.0 * PI * t).sqrt()
}

/// `int_0^T (2 pi s)^(-1/2) ds = sqrt(2T / pi)`.
pub fn time_integrated_l2_bound(t_end: f64) -> f64 {
    (2.0 * t_end / PI).sqrt()
}

/// Quadratures of `int G_t(x, y) dy` and `int G_t(x, y)^2 dy`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowIntegrals {
    pub mass: f64,
    pub l2: f64,
}

pub fn kernel_row_integrals(
    t: f64,
    x: f64,
    cfg: &HeatKernelConfig,
    quad_n: usize,
) -> Result<RowIntegrals> {
    check_args(t, x, 0.0)?;
    if quad_n < 64 {
        return Err(Error::Contract(format!("quad_n must be >= 64, got {quad_n}")));
    }
    let w = QuadRule::Trapezoid.weights(quad_n)?;
    let mut mass = 0.0;
    let mut l2 = 0.0;
    for (k, wk) in w.iter().enumerate() {
        let g = eval_kernel(t, x, k as f64 / quad_n as f64, cfg)?;
        mass += wk * g;
        l2 += wk * g * g;
    }
    Ok(RowIntegrals { mass, l2 })
}

/// Dense matrix of `w_k G_t(x_j, x_k)` on an equispaced node set.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    n_nodes: usize,
    entries: Vec<f64>,
}

impl KernelMatrix {
    pub fn new(n_cells: usize, t: f64, cfg: &HeatKernelConfig, rule: QuadRule) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("kernel matrix needs t > 0, got {t}")));
        }
        let w = rule.weights(n_cells)?;
        let n_nodes = n_cells + 1;
        let h = 1.0 / n_cells as f64;
        let mut entries = vec![0.0; n_nodes * n_nodes];
        for j in 0..n_nodes {
            for k in 0..n_nodes {
                entries[j * n_nodes + k] = w[k] * eval_kernel(t, j as f64 * h, k as f64 * h, cfg)?;
            }
        }
        Ok(Self { n_nodes, entries })
    }

    /// Quadrature of `int G_t(x_j, y) field(y) dy` at every node.
    pub fn apply(&self, field: &[f64]) -> Vec<f64> {
        debug_assert_eq!(field.len(), self.n_nodes);
        self.entries
            .chunks_exact(self.n_nodes)
            .map(|row| row.iter().zip(field).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Accumulate `scale * apply(field)` into `out`.
    pub fn apply_add(&self, field: &[f64], scale: f64, out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(self.entries.chunks_exact(self.n_nodes)) {
            let s: f64 = row.iter().zip(field).map(|(a, b)| a * b).sum();
            *o += scale * s;
        }
    }
}

/// One mild-form heat step: `x -> int G_dt(x, y) field(y) dy` by quadrature.
///
/// `field` holds values at `nx + 1` equispaced nodes and must vanish at both ends.
pub fn heat_propagate(
    field: &[f64],
    dt: f64,
    cfg: &HeatKernelConfig,
    rule: QuadRule,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("heat_propagate needs dt > 0, got {dt}")));
    }
    if field.len() < 3 {
        return Err(Error::Contract("heat_propagate needs at least 3 nodes".into()));
    }
    let n = field.len() - 1;
    if field[0] != 0.0 || field[n] != 0.0 {
        return Err(Error::Contract("heat_propagate: field must vanish at the endpoints".into()));
    }
    let m = KernelMatrix::new(n, dt, cfg, rule)?;
    let mut out = m.apply(field);
    out[0] = 0.0;
    out[n] = 0.0;
    Ok(out)
}

/// Sample sizes of [`kernel_suite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelSuiteSettings {
    /// Times, log-spaced on `[t_min, t_max]`.
    pub n_t: usize,
    /// Positions, equispaced on `[0, 1]`, used for both `x` and `y`.
    pub n_x: usize,
    pub t_min: f64,
    pub t_max: f64,
    /// Trapezoid cells for `int G^2`.
    pub l2_cells: usize,
    /// Simpson cells for the semigroup integral.
    pub semigroup_cells: usize,
    /// Positions per axis in the semigroup check.
    pub semigroup_points: usize,
    /// Modes of the eigenfunction series in the agreement check.
    pub agreement_modes: usize,
}

impl Default for KernelSuiteSettings {
    fn default() -> Self {
        Self {
            n_t: 50,
            n_x: 50,
            t_min: 1e-4,
            t_max: 0.5,
            l2_cells: 1024,
            semigroup_cells: 4096,
            semigroup_points: 10,
            agreement_modes: 256,
        }
    }
}

/// Worst cases found by [`kernel_suite`]; every field is a maximum
/// violation (positive means the property failed by that much) except
/// `min_value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSuiteReport {
    pub samples: usize,
    /// Smallest unclamped series value.
    pub min_value: f64,
    pub max_asymmetry: f64,
    /// `max (G - (2 pi t)^(-1/2) exp(-(x-y)^2/2t))`.
    pub nash_aronson_excess: f64,
    /// `max (G - (4 pi t)^(-1/2) exp(-(x-y)^2/4t))`.
    pub free_kernel_excess: f64,
    /// `max (int G^2 dy - (2 pi t)^(-1/2))`.
    pub l2_excess: f64,
    /// `max |int G_{t/2}(x,z) G_{t/2}(z,y) dz - G_t(x,y)|`.
    pub semigroup_error: f64,
    /// `max |image - eigen|` over the sample.
    pub series_gap: f64,
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Property sweep over a `(t, x, y)` sample.
pub fn kernel_suite(cfg: &HeatKernelConfig, settings: &KernelSuiteSettings) -> Result<KernelSuiteReport> {
    cfg.validate()?;
    let s = settings;
    if s.n_t < 1 || s.n_x < 2 || s.semigroup_points < 1 || !(s.t_min > 0.0 && s.t_max >= s.t_min) {
        return Err(Error::Config("kernel-check: need n_t >= 1, n_x >= 2 and 0 < t_min <= t_max".into()));
    }
    let times = log_spaced(s.t_min, s.t_max, s.n_t);
    let xs: Vec<f64> = (0..s.n_x).map(|i| i as f64 / (s.n_x - 1) as f64).collect();
    let sg_pts: Vec<f64> = (1..=s.semigroup_points)
        .map(|i| i as f64 / (s.semigroup_points + 1) as f64)
        .collect();
    let simpson = QuadRule::Simpson.weights(s.semigroup_cells)?;
    let zs: Vec<f64> = (0..=s.semigroup_cells).map(|k| k as f64 / s.semigroup_cells as f64).collect();

    let per_t: Vec<Result<KernelSuiteReport>> = times
        .par_iter()
        .map(|&t| {
            let mut r = KernelSuiteReport {
                samples: 0,
                min_value: f64::INFINITY,
                max_asymmetry: 0.0,
                nash_aronson_excess: f64::NEG_INFINITY,
                free_kernel_excess: f64::NEG_INFINITY,
                l2_excess: f64::NEG_INFINITY,
                semigroup_error: 0.0,
                series_gap: 0.0,
            };
            let raw = |x: f64, y: f64| {
                if t < cfg.t_switch {
                    image_series(t, x, y, cfg.n_images)
                } else {
                    eigen_series(t, x, y, cfg.n_modes)
                }
            };
            for &x in &xs {
                for &y in &xs {
                    r.samples += 1;
                    let v = raw(x, y);
                    r.min_value = r.min_value.min(v);
                    let g = eval_kernel(t, x, y, cfg)?;
                    r.max_asymmetry = r.max_asymmetry.max((g - eval_kernel(t, y, x, cfg)?).abs());
                    r.nash_aronson_excess = r.nash_aronson_excess.max(g - nash_aronson_bound(t, x, y));
                    r.free_kernel_excess = r.free_kernel_excess.max(g - free_kernel(t, x, y));
                    let gap = image_series(t, x, y, cfg.n_images) - eigen_series(t, x, y, s.agreement_modes);
                    r.series_gap = r.series_gap.max(gap.abs());
                }
                let rows = kernel_row_integrals(t, x, cfg, s.l2_cells)?;
                r.l2_excess = r.l2_excess.max(rows.l2 - l2_bound(t));
            }
            let half = 0.5 * t;
            let rows: Vec<Vec<f64>> = sg_pts
                .iter()
                .map(|&x| zs.iter().map(|&z| eval_kernel(half, x, z, cfg)).collect::<Result<_>>())
                .collect::<Result<_>>()?;
            for (a, &x) in sg_pts.iter().enumerate() {
                for (b, &y) in sg_pts.iter().enumerate() {
                    let conv: f64 = rows[a].iter().zip(&rows[b]).zip(&simpson).map(|((p, q), w)| p * q * w).sum();
                    let err = (conv - eval_kernel(t, x, y, cfg)?).abs();
                    r.semigroup_error = r.semigroup_error.max(err);
                }
            }
            Ok(r)
        })
        .collect();
    let mut out = KernelSuiteReport {
        samples: 0,
        min_value: f64::INFINITY,
        max_asymmetry: 0.0,
        nash_aronson_excess: f64::NEG_INFINITY,
        free_kernel_excess: f64::NEG_INFINITY,
        l2_excess: f64::NEG_INFINITY,
        semigroup_error: 0.0,
        series_gap: 0.0,
    };
    for r in per_t {
        let r = r?;
        out.samples += r.samples;
        out.min_value = out.min_value.min(r.min_value);
        out.max_asymmetry = out.max_asymmetry.max(r.max_asymmetry);
        out.nash_aronson_excess = out.nash_aronson_excess.max(r.nash_aronson_excess);
        out.free_kernel_excess = out.free_kernel_excess.max(r.free_kernel_excess);
        out.l2_excess = out.l2_excess.max(r.l2_excess);
        out.semigroup_error = out.semigroup_error.max(r.semigroup_error);
        out.series_gap = out.series_gap.max(r.series_gap);
    }
    Ok(out)
}
