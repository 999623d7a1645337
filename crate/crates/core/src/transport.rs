//! Girsanov coupling, empirical Wasserstein distances and the quadratic
//! transportation chain `W_2(nu, mu)^2 <= E^Q[sup |u - u~|^2] <= 2 C H(nu | mu)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::{log_c1, log_c2, ConstantEnv, LogConstant};
use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::noise::{entropy_of_drift, DriftField, RowSource, SheetStream};
use crate::reflect::{ObstacleSpec, ReflectionMeasure};
use crate::solver::{particle_update, solve_mean_reflected, zbar_history, CoefficientSpec, SolveSettings};
use crate::stats::{median, pairwise_mean, sample_variance, standard_error};

/// Stream ids of coupling sheets start here, clear of the ensemble streams.
pub const PAIR_STREAM_OFFSET: u64 = 1 << 32;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Samples required by [`concentration_profile`].
pub const MIN_CONCENTRATION_SAMPLES: usize = 1000;

/// Samples of a real random variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure1D {
    samples: Vec<f64>,
}

impl EmpiricalMeasure1D {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Contract("empirical measure needs at least one sample".into()));
        }
        if let Some(k) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("empirical measure: sample {k} is not finite")));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn sorted(&self) -> Vec<f64> {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        s
    }
}

/// Quadratic Wasserstein distance of equal-size empirical measures via the
/// sorted coupling.
pub fn w2_quantile_1d(a: &EmpiricalMeasure1D, b: &EmpiricalMeasure1D) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "w2_quantile_1d: sample counts differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    Ok(w2_sq_sorted(&a.sorted(), &b.sorted()).sqrt())
}

fn w2_sq_sorted(a: &[f64], b: &[f64]) -> f64 {
    let sq: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).collect();
    pairwise_mean(&sq)
}

/// Bootstrap standard error of `stat` over resampled indices.
pub fn bootstrap_se(n: usize, seed: u64, stat: impl Fn(&[usize]) -> f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let values: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            for i in idx.iter_mut() {
                *i = rng.random_range(0..n);
            }
            stat(&idx)
        })
        .collect();
    sample_variance(&values).sqrt()
}

/// Coupling run options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingSettings {
    pub n_pairs: usize,
    pub seed: u64,
    /// Marginal `(t*, x*)` for the one-dimensional Wasserstein check.
    pub marginal_t: f64,
    pub marginal_x: f64,
    #[serde(default)]
    pub allow_unstable: bool,
}

impl CouplingSettings {
    /// Marginal at `(T, 1/2)`.
    pub fn new(grid: &SpaceTimeGrid, n_pairs: usize, seed: u64) -> Self {
        Self { n_pairs, seed, marginal_t: grid.t_end(), marginal_x: 0.5, allow_unstable: false }
    }
}

/// One inequality `lhs <= bound + slack` of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainCheck {
    pub lhs: f64,
    pub bound: f64,
    /// Statistical allowance added to the bound.
    pub slack: f64,
    /// `ln(bound) - ln(lhs)`; absent when `lhs` is zero.
    pub log_margin: Option<f64>,
    pub pass: bool,
}

impl ChainCheck {
    pub fn new(lhs: f64, bound: f64, slack: f64) -> Self {
        let log_margin = (lhs > 0.0 && bound > 0.0).then(|| bound.ln() - lhs.ln());
        Self { lhs, bound, slack, log_margin, pass: lhs <= bound + slack }
    }
}

/// Marginal Wasserstein check at one space-time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct T2Check {
    pub t: f64,
    pub x: f64,
    pub w2: f64,
    pub w2_sq: f64,
    /// Bootstrap standard error of `w2_sq`.
    pub w2_sq_se: f64,
    pub vs_entropy: ChainCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub grid: SpaceTimeGrid,
    pub coefficients: CoefficientSpec,
    pub obstacle: ObstacleSpec,
    pub drift: DriftField,
    pub constants_env: ConstantEnv,
    pub n_pairs: usize,
    pub seed: u64,
    pub entropy_h: f64,
    pub dist_sq: f64,
    pub dist_sq_se: f64,
    pub dist_sq_bootstrap_se: f64,
    pub log_c1: LogConstant,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_c2: Option<LogConstant>,
    /// `ln C` of the constant the chain uses (`C_1` linear, `C_2` general).
    pub log_c_chain: f64,
    pub k_mass: f64,
    /// SHA-256 of the little-endian bytes of the reflection increments.
    pub k_digest: String,
    pub marginal: T2Check,
    /// `dist_sq <= 2 C H`.
    pub coupling_vs_entropy: ChainCheck,
    /// `w2_sq <= dist_sq`.
    pub marginal_vs_coupling: ChainCheck,
    /// `min_j mean_i h(T, x_j, u_i)` of the drifted leg; reported only.
    pub u_leg_terminal_constraint_min: f64,
}

impl CouplingReport {
    pub fn all_pass(&self) -> bool {
        self.coupling_vs_entropy.pass && self.marginal_vs_coupling.pass && self.marginal.vs_entropy.pass
    }
}

/// SHA-256 digest of a reflection measure's increments.
pub fn k_digest(k: &ReflectionMeasure) -> String {
    let mut h = Sha256::new();
    for v in &k.dk {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct PairOutcome {
    sup_sq: f64,
    u_marginal: f64,
    ut_marginal: f64,
    u_terminal: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_pair(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    zbar: &[f64],
    drift_rows: &[f64],
    seed: u64,
    pair: usize,
    marginal: (usize, usize),
) -> Result<PairOutcome> {
    let (nx, w) = (grid.nx(), grid.n_nodes());
    let mut src = SheetStream::new(grid, seed, PAIR_STREAM_OFFSET + pair as u64);
    let mut noise = vec![0.0; nx];
    let u0 = coeffs.u0.sample(grid);
    let (mut z, mut zt) = (u0.clone(), u0);
    let (mut zn, mut ztn) = (vec![0.0; w], vec![0.0; w]);
    let mut sup = 0.0_f64;
    let (mut um, mut utm) = (0.0, 0.0);
    let record = |n: usize, z: &[f64], zt: &[f64], um: &mut f64, utm: &mut f64| {
        if n == marginal.0 {
            let zb = zbar[n * w + marginal.1];
            *um = z[marginal.1] + zb;
            *utm = zt[marginal.1] + zb;
        }
    };
    record(0, &z, &zt, &mut um, &mut utm);
    for n in 0..grid.nt() {
        src.next_row(&mut noise);
        let zb = &zbar[n * w..(n + 1) * w];
        let g = &drift_rows[n * nx..(n + 1) * nx];
        if !particle_update(grid, coeffs, n, &z, zb, &noise, Some(g), &mut zn) {
            return Err(Error::BlowUp { step: n + 1, detail: format!("pair {pair}: drifted leg left the finite range") });
        }
        if !particle_update(grid, coeffs, n, &zt, zb, &noise, None, &mut ztn) {
            return Err(Error::BlowUp { step: n + 1, detail: format!("pair {pair}: reference leg left the finite range") });
        }
        std::mem::swap(&mut z, &mut zn);
        std::mem::swap(&mut zt, &mut ztn);
        // the legs share zbar, so u - u~ = z - z~
        for (a, b) in z.iter().zip(&zt) {
            sup = sup.max((a - b).abs());
        }
        record(n + 1, &z, &zt, &mut um, &mut utm);
    }
    let zb = &zbar[grid.nt() * w..];
    let u_terminal = z.iter().zip(zb).map(|(a, b)| a + b).collect();
    Ok(PairOutcome { sup_sq: sup * sup, u_marginal: um, ut_marginal: utm, u_terminal })
}

/// Two-stage Girsanov coupling.
///
/// Stage 1 solves the drift-free system with `n_pairs` particles for the
/// deterministic `K`. Stage 2 drives, for every pair, a reference leg (no
/// drift) and a drifted leg (`+ sigma(u) g`) with one shared fresh sheet and
/// the fixed `K`.
pub fn run_coupling(
    grid: &SpaceTimeGrid,
    coeffs: &CoefficientSpec,
    obstacle: &ObstacleSpec,
    g: &DriftField,
    settings: &CouplingSettings,
    env: &ConstantEnv,
) -> Result<CouplingReport> {
    if settings.n_pairs < 2 {
        return Err(Error::Config("n_pairs must be >= 2".into()));
    }
    if (env.t_end - grid.t_end()).abs() > 1e-12 * grid.t_end() {
        return Err(Error::Config(format!(
            "constants env T = {} does not match grid T = {}",
            env.t_end,
            grid.t_end()
        )));
    }
    g.validate(grid)?;
    let log_c1 = log_c1(env)?;
    let log_c2 = match obstacle {
        ObstacleSpec::General { .. } => Some(log_c2(env)?),
        ObstacleSpec::Linear { .. } => None,
    };
    let log_c_chain = log_c2.as_ref().map_or(log_c1.log_value, |c| c.log_value);
    let entropy_h = entropy_of_drift(g, grid)?;

    let mut s1 = SolveSettings::new(settings.n_pairs, settings.seed);
    s1.allow_unstable = settings.allow_unstable;
    let stage1 = solve_mean_reflected(grid, coeffs, obstacle, &s1, None, None)?;
    let k = stage1.k;
    let zbar = zbar_history(grid, &k)?;

    let drift_rows: Vec<f64> = (0..grid.nt()).flat_map(|n| g.row(grid, n)).collect();
    let marginal = (grid.step_of(settings.marginal_t), grid.node_of(settings.marginal_x));
    let outcomes: Vec<Result<PairOutcome>> = (0..settings.n_pairs)
        .into_par_iter()
        .map(|i| run_pair(grid, coeffs, &zbar, &drift_rows, settings.seed, i, marginal))
        .collect();
    let outcomes: Vec<PairOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let n = outcomes.len();
    let sup_sq: Vec<f64> = outcomes.iter().map(|o| o.sup_sq).collect();
    let dist_sq = pairwise_mean(&sup_sq);
    let dist_sq_se = standard_error(&sup_sq);
    let dist_sq_bootstrap_se = bootstrap_se(n, settings.seed ^ 0xb007, |idx| {
        let v: Vec<f64> = idx.iter().map(|&i| sup_sq[i]).collect();
        pairwise_mean(&v)
    });

    let u_m: Vec<f64> = outcomes.iter().map(|o| o.u_marginal).collect();
    let ut_m: Vec<f64> = outcomes.iter().map(|o| o.ut_marginal).collect();
    let marginal_check = t2_marginal_check(
        &u_m,
        &ut_m,
        log_c_chain,
        entropy_h,
        settings.seed ^ 0x7a2,
        (grid.time(marginal.0), grid.x(marginal.1)),
    )?;

    let bound = 2.0 * log_c_chain.exp() * entropy_h;
    let coupling_vs_entropy = ChainCheck::new(dist_sq, bound, 3.0 * dist_sq_bootstrap_se);
    // relative round-off allowance: both sides can be exact and equal
    let roundoff = 1e-12 * dist_sq.max(marginal_check.w2_sq);
    let marginal_vs_coupling = ChainCheck::new(
        marginal_check.w2_sq,
        dist_sq,
        3.0 * dist_sq_bootstrap_se.max(marginal_check.w2_sq_se) + roundoff,
    );

    let w = grid.n_nodes();
    let t_end = grid.t_end();
    let u_leg_terminal_constraint_min = (1..grid.nx())
        .map(|j| {
            let vals: Vec<f64> = outcomes.iter().map(|o| obstacle.h(t_end, grid.x(j), o.u_terminal[j])).collect();
            pairwise_mean(&vals)
        })
        .fold(f64::INFINITY, f64::min);
    debug_assert!(outcomes.iter().all(|o| o.u_terminal.len() == w));

    Ok(CouplingReport {
        grid: *grid,
        coefficients: *coeffs,
        obstacle: *obstacle,
        drift: g.clone(),
        constants_env: *env,
        n_pairs: settings.n_pairs,
        seed: settings.seed,
        entropy_h,
        dist_sq,
        dist_sq_se,
        dist_sq_bootstrap_se,
        log_c1,
        log_c2,
        log_c_chain,
        k_mass: k.total_mass(),
        k_digest: k_digest(&k),
        marginal: marginal_check,
        coupling_vs_entropy,
        marginal_vs_coupling,
        u_leg_terminal_constraint_min,
    })
}

/// Marginal check `w^2 <= 2 C H + 3 SE`, with `w` the empirical `W_2` of
/// the drifted and reference marginals.
pub fn t2_marginal_check(
    u_samples: &[f64],
    ut_samples: &[f64],
    log_c: f64,
    entropy_h: f64,
    seed: u64,
    at: (f64, f64),
) -> Result<T2Check> {
    let a = EmpiricalMeasure1D::new(u_samples.to_vec())?;
    let b = EmpiricalMeasure1D::new(ut_samples.to_vec())?;
    let w2 = w2_quantile_1d(&a, &b)?;
    let w2_sq = w2 * w2;
    let w2_sq_se = bootstrap_se(a.len(), seed, |idx| {
        let mut x: Vec<f64> = idx.iter().map(|&i| u_samples[i]).collect();
        let mut y: Vec<f64> = idx.iter().map(|&i| ut_samples[i]).collect();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        w2_sq_sorted(&x, &y)
    });
    let bound = 2.0 * log_c.exp() * entropy_h;
    Ok(T2Check {
        t: at.0,
        x: at.1,
        w2,
        w2_sq,
        w2_sq_se,
        vs_entropy: ChainCheck::new(w2_sq, bound, 3.0 * w2_sq_se),
    })
}

/// Empirical tail `P(F > median + eps)` with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub eps: f64,
    pub tail: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationProfile {
    pub n_samples: usize,
    pub median: f64,
    pub rows: Vec<TailRow>,
    /// Least-squares slope of `ln tail` against `eps^2` over rows with a
    /// positive tail; absent with fewer than two such rows.
    pub slope: Option<f64>,
}

pub fn concentration_profile(samples: &[f64], eps_list: &[f64]) -> Result<ConcentrationProfile> {
    if samples.len() < MIN_CONCENTRATION_SAMPLES {
        return Err(Error::Config(format!(
            "concentration: need at least {MIN_CONCENTRATION_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(e) = eps_list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::Config(format!("concentration: eps values must be positive, got {e}")));
    }
    let m = EmpiricalMeasure1D::new(samples.to_vec())?;
    let med = median(m.samples());
    let n = samples.len() as f64;
    let rows: Vec<TailRow> = eps_list
        .iter()
        .map(|&eps| {
            let count = samples.iter().filter(|&&s| s > med + eps).count() as f64;
            let p = count / n;
            TailRow { eps, tail: p, se: (p * (1.0 - p) / n).sqrt() }
        })
        .collect();
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.tail > 0.0).map(|r| (r.eps * r.eps, r.tail.ln())).collect();
    let slope = (pts.len() >= 2).then(|| {
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });
    Ok(ConcentrationProfile { n_samples: samples.len(), median: med, rows, slope })
}
