//! Minimal nonnegative pushes that keep the ensemble mean constraint
//! `mean_i h(t, x, u_i) >= 0` satisfied, and the flatness bookkeeping of the
//! resulting reflection measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::stats::{pairwise_mean, pairwise_sum};

/// Iteration cap of the bisection in [`general_push`].
pub const MAX_BISECTION_ITERS: usize = 200;
/// Default absolute tolerance on a push.
pub const DEFAULT_BISECTION_TOL: f64 = 1e-12;

/// Deterministic floor `y(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FloorField {
    #[default]
    Zero,
    Constant { c: f64 },
    /// `a * t * sin(pi x)`.
    RampSine { a: f64 },
}

impl FloorField {
    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match *self {
            FloorField::Zero => 0.0,
            FloorField::Constant { c } => c,
            FloorField::RampSine { a } => a * t * (std::f64::consts::PI * x).sin(),
        }
    }

    /// `y(0, x) = 0` and `y(t, 0) = y(t, 1) = 0`.
    pub fn is_compatible(&self) -> bool {
        match *self {
            FloorField::Zero | FloorField::RampSine { .. } => true,
            FloorField::Constant { c } => c == 0.0,
        }
    }
}

/// Built-in constraint functions `h(t, x, y) = phi(y - floor(t, x))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
pub enum ConstraintFn {
    /// `phi(r) = slope * r`.
    Affine {
        slope: f64,
        #[serde(default)]
        floor: FloorField,
    },
    /// `phi(r) = c r + b tanh(r)`; bi-Lipschitz with constants `c`, `c + b`.
    TanhPlusLinear {
        c: f64,
        b: f64,
        #[serde(default)]
        floor: FloorField,
    },
    /// `phi(r) = r^3 + r`; only locally Lipschitz from above.
    CubicPlusLinear {
        #[serde(default)]
        floor: FloorField,
    },
    /// `phi(r) = lo * r` for `r < 0`, `hi * r` otherwise.
    Kinked {
        lo: f64,
        hi: f64,
        #[serde(default)]
        floor: FloorField,
    },
}

impl ConstraintFn {
    #[inline]
    pub fn eval(&self, t: f64, x: f64, y: f64) -> f64 {
        match *self {
            ConstraintFn::Affine { slope, floor } => slope * (y - floor.value(t, x)),
            ConstraintFn::TanhPlusLinear { c, b, floor } => {
                let r = y - floor.value(t, x);
                c * r + b * r.tanh()
            }
            ConstraintFn::CubicPlusLinear { floor } => {
                let r = y - floor.value(t, x);
                r * r * r + r
            }
            ConstraintFn::Kinked { lo, hi, floor } => {
                let r = y - floor.value(t, x);
                if r < 0.0 {
                    lo * r
                } else {
                    hi * r
                }
            }
        }
    }
}

/// The mean constraint imposed on the solution law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObstacleSpec {
    /// `E[u(t, x)] >= y(t, x)`.
    Linear { y: FloorField },
    /// `E[h(t, x, u(t, x))] >= 0` with `c_h |a-b| <= |h(a) - h(b)| <= C_h |a-b|`.
    General {
        h: ConstraintFn,
        c_h: f64,
        #[serde(rename = "C_h")]
        big_c_h: f64,
    },
}

impl ObstacleSpec {
    /// `h(t, x, y)`; the linear case is `y - y(t, x)`.
    #[inline]
    pub fn h(&self, t: f64, x: f64, y: f64) -> f64 {
        match self {
            ObstacleSpec::Linear { y: floor } => y - floor.value(t, x),
            ObstacleSpec::General { h, .. } => h.eval(t, x, y),
        }
    }

    /// `(c_h, C_h)`; `(1, 1)` for the linear constraint.
    pub fn lipschitz_bounds(&self) -> (f64, f64) {
        match *self {
            ObstacleSpec::Linear { .. } => (1.0, 1.0),
            ObstacleSpec::General { c_h, big_c_h, .. } => (c_h, big_c_h),
        }
    }

    /// `C_h / c_h`.
    pub fn lipschitz_ratio(&self) -> f64 {
        let (lo, hi) = self.lipschitz_bounds();
        hi / lo
    }

    /// Check the declared constants and spot-check the bi-Lipschitz property
    /// and `h(t, 0, 0) = h(t, 1, 0) = 0` on deterministic random samples.
    pub fn validate(&self, t_end: f64) -> Result<()> {
        let ObstacleSpec::General { h, c_h, big_c_h } = *self else {
            return Ok(());
        };
        if !(c_h > 0.0 && big_c_h >= c_h && big_c_h.is_finite()) {
            return Err(Error::Config(format!(
                "obstacle: need 0 < c_h <= C_h, got c_h={c_h}, C_h={big_c_h}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x0b57_ac1e);
        for _ in 0..1000 {
            let t = rng.random_range(0.0..=t_end);
            let x = rng.random_range(0.0..=1.0);
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            let (y, z) = if a < b { (a, b) } else { (b, a) };
            if z - y < 1e-9 {
                continue;
            }
            let slope = (h.eval(t, x, z) - h.eval(t, x, y)) / (z - y);
            if slope < c_h * (1.0 - 1e-9) || slope > big_c_h * (1.0 + 1e-9) {
                return Err(Error::Config(format!(
                    "obstacle: difference quotient {slope} at (t={t}, x={x}) is outside [c_h, C_h] = [{c_h}, {big_c_h}]"
                )));
            }
            for xb in [0.0, 1.0] {
                if h.eval(t, xb, 0.0).abs() > 1e-12 {
                    return Err(Error::Config(format!("obstacle: h(t, {xb}, 0) must vanish")));
                }
            }
        }
        Ok(())
    }

    /// Boundary/initial compatibility of the linear floor.
    pub fn check_compatibility(&self) -> Result<()> {
        match self {
            ObstacleSpec::Linear { y } if !y.is_compatible() => Err(Error::Config(
                "obstacle: the linear floor must vanish at t = 0 and at x = 0, 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Nonnegative increments `dK` on interior nodes, one row per time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionMeasure {
    pub nx: usize,
    /// Row-major `rows x (nx - 1)`; column `j` is node `j + 1`.
    pub dk: Vec<f64>,
}

impl ReflectionMeasure {
    pub fn empty(nx: usize) -> Self {
        Self { nx, dk: Vec::new() }
    }

    pub fn width(&self) -> usize {
        self.nx - 1
    }

    pub fn n_rows(&self) -> usize {
        self.dk.len() / self.width()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let w = self.width();
        &self.dk[n * w..(n + 1) * w]
    }

    pub fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width());
        self.dk.extend_from_slice(row);
    }

    /// `sum dK dx`, the mass of the measure.
    pub fn total_mass(&self) -> f64 {
        pairwise_sum(&self.dk) / self.nx as f64
    }

    pub fn min_increment(&self) -> f64 {
        self.dk.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Share of the mass sitting on the two outermost interior nodes.
    pub fn boundary_mass_fraction(&self) -> f64 {
        let w = self.width();
        let total = pairwise_sum(&self.dk);
        if total == 0.0 {
            return 0.0;
        }
        let edge: f64 = self
            .dk
            .chunks_exact(w)
            .map(|r| if w == 1 { r[0] } else { r[0] + r[w - 1] })
            .sum();
        edge / total
    }

    /// Contract check against a grid.
    pub fn check_grid(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.nx != grid.nx() || self.dk.len() != grid.nt() * (grid.nx() - 1) {
            return Err(Error::Contract(format!(
                "reflection measure has {} rows over {} cells, grid needs {} rows over {} cells",
                self.dk.len() / self.width().max(1),
                self.nx,
                grid.nt(),
                grid.nx()
            )));
        }
        Ok(())
    }
}

fn check_finite(label: &str, values: &[f64]) -> Result<()> {
    if let Some(k) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("{label}: entry {k} is not finite")));
    }
    Ok(())
}

/// Push for the linear constraint: `dK_j = max(0, -(proposal_j + v_j))`,
/// where `v = mean(z) - y` at the new time.
pub fn linear_push(proposal: &[f64], obstacle_now: &[f64]) -> Result<Vec<f64>> {
    if proposal.len() != obstacle_now.len() {
        return Err(Error::Contract(format!(
            "linear_push: {} proposal values vs {} obstacle values",
            proposal.len(),
            obstacle_now.len()
        )));
    }
    check_finite("linear_push proposal", proposal)?;
    check_finite("linear_push obstacle", obstacle_now)?;
    Ok(proposal
        .iter()
        .zip(obstacle_now)
        .map(|(p, v)| (-(p + v)).max(0.0))
        .collect())
}

/// Push for a general constraint.
///
/// `proposal` and `xs` hold the `m` interior nodes; `particle_values` is
/// `N x m`, row = particle. For each node the smallest `k >= 0` with
/// `mean_i h(t_next, x_j, proposal_j + k + v_ij) >= 0` is bracketed in
/// `[d / C_h, d / c_h]` (`d` the deficit at `k = 0`) and bisected to `tol`.
pub fn general_push(
    proposal: &[f64],
    particle_values: &[f64],
    h: &ObstacleSpec,
    t_next: f64,
    xs: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    let m = proposal.len();
    if m == 0 || xs.len() != m || particle_values.is_empty() || particle_values.len() % m != 0 {
        return Err(Error::Contract(format!(
            "general_push: {} proposal values, {} positions, {} particle values",
            m,
            xs.len(),
            particle_values.len()
        )));
    }
    check_finite("general_push proposal", proposal)?;
    check_finite("general_push particle values", particle_values)?;
    let (c_h, big_c_h) = h.lipschitz_bounds();
    let n = particle_values.len() / m;
    (0..m)
        .into_par_iter()
        .map(|j| {
            let column: Vec<f64> = (0..n).map(|i| particle_values[i * m + j]).collect();
            let mut scratch = vec![0.0; n];
            push_node(proposal[j], &column, &mut scratch, |y| h.h(t_next, xs[j], y), c_h, big_c_h, tol)
                .map_err(|e| match e {
                    Error::Numerical(msg) => Error::Numerical(format!("node {}: {msg}", j + 1)),
                    other => other,
                })
        })
        .collect()
}

/// Bisection for one node; see [`general_push`].
pub(crate) fn push_node(
    p: f64,
    values: &[f64],
    scratch: &mut [f64],
    h: impl Fn(f64) -> f64,
    c_h: f64,
    big_c_h: f64,
    tol: f64,
) -> Result<f64> {
    let mut mean_at = |k: f64| {
        for (s, v) in scratch.iter_mut().zip(values) {
            *s = h(p + k + v);
        }
        pairwise_mean(scratch)
    };
    let m0 = mean_at(0.0);
    if m0 >= 0.0 {
        return Ok(0.0);
    }
    let deficit = -m0;
    let scale = 1.0 + p.abs() + values.iter().fold(0.0_f64, |a, v| a.max(v.abs())) + deficit / c_h;
    // round-off allowance on the sign test of the mean
    let slack = 8.0 * f64::EPSILON * big_c_h * scale;
    let mut feasible = |k: f64| mean_at(k) >= -slack;

    let mut lo = deficit / big_c_h;
    let mut hi = deficit / c_h;
    if feasible(lo) {
        // C_h understated (only locally Lipschitz h): fall back to k = 0
        lo = 0.0;
    }
    if !feasible(hi) {
        if !feasible(hi + tol) {
            return Err(Error::Numerical(format!(
                "mean constraint unsatisfiable at the upper bracket {hi} (deficit {deficit}); h is not bi-Lipschitz with c_h = {c_h}"
            )));
        }
        hi += tol;
    }
    let mut iters = 0;
    while hi - lo > tol {
        if iters == MAX_BISECTION_ITERS {
            return Err(Error::Numerical(format!(
                "bisection did not reach tolerance {tol} in {MAX_BISECTION_ITERS} iterations"
            )));
        }
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        iters += 1;
    }
    Ok(hi)
}

/// Discrete flatness residual `sum_{n,j} max(0, c_{n,j}) dK_{n,j}`, with
/// `c` the constraint value after each push.
pub fn flatness_residual(constraint_after_push: &[f64], dk: &[f64]) -> f64 {
    debug_assert_eq!(constraint_after_push.len(), dk.len());
    let terms: Vec<f64> = constraint_after_push
        .iter()
        .zip(dk)
        .map(|(c, k)| c.max(0.0) * k)
        .collect();
    pairwise_sum(&terms)
}

/// Result of [`evolve_obstacle`].
#[derive(Debug, Clone)]
pub struct ObstacleEvolution {
    /// `(nt + 1) x (nx + 1)` history of the reflected field.
    pub zbar: Vec<f64>,
    pub k: ReflectionMeasure,
}

/// Deterministic obstacle problem `zbar_t = zbar_xx + K` with
/// `h(t, x, zbar + v) >= 0`, driven by a deterministic obstacle process
/// `v(n, j)` given on all nodes; `zbar(0) = 0`.
pub fn evolve_obstacle(
    grid: &SpaceTimeGrid,
    obstacle: &ObstacleSpec,
    v: impl Fn(usize, usize) -> f64,
    tol: f64,
) -> Result<ObstacleEvolution> {
    let nodes = grid.n_nodes();
    let m = grid.n_interior();
    let mut zbar = vec![0.0; nodes];
    let mut next = vec![0.0; nodes];
    let mut history = Vec::with_capacity((grid.nt() + 1) * nodes);
    history.extend_from_slice(&zbar);
    let mut k = ReflectionMeasure::empty(grid.nx());
    let xs: Vec<f64> = (1..grid.nx()).map(|j| grid.x(j)).collect();
    for n in 0..grid.nt() {
        grid.heat_step(&zbar, &mut next);
        let t_next = grid.time(n + 1);
        let proposal = &next[1..grid.nx()];
        let dk = match obstacle {
            ObstacleSpec::Linear { y } => {
                let obs: Vec<f64> = (1..grid.nx())
                    .map(|j| v(n + 1, j) - y.value(t_next, grid.x(j)))
                    .collect();
                linear_push(proposal, &obs)?
            }
            ObstacleSpec::General { .. } => {
                let vals: Vec<f64> = (1..grid.nx()).map(|j| v(n + 1, j)).collect();
                general_push(proposal, &vals, obstacle, t_next, &xs, tol)?
            }
        };
        debug_assert_eq!(dk.len(), m);
        for (z, d) in next[1..grid.nx()].iter_mut().zip(&dk) {
            *z += d;
        }
        k.push_row(&dk);
        std::mem::swap(&mut zbar, &mut next);
        history.extend_from_slice(&zbar);
    }
    Ok(ObstacleEvolution { zbar: history, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn identity() -> ObstacleSpec {
        ObstacleSpec::General {
            h: ConstraintFn::Affine { slope: 1.0, floor: FloorField::Zero },
            c_h: 1.0,
            big_c_h: 1.0,
        }
    }

    #[test]
    fn linear_push_algebra() {
        let dk = linear_push(&[-0.3], &[0.1]).unwrap();
        assert!((dk[0] - 0.2).abs() < 1e-15);
        assert_eq!(linear_push(&[0.5, -0.1], &[0.0, 0.2]).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(linear_push(&[f64::NAN], &[0.0]), Err(Error::Data(_))));
        assert!(matches!(linear_push(&[0.0], &[0.0, 1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn degenerate_bracket_gives_exact_deficit() {
        let spec = ObstacleSpec::General {
            h: ConstraintFn::Affine { slope: 2.5, floor: FloorField::Zero },
            c_h: 2.5,
            big_c_h: 2.5,
        };
        let dk = general_push(&[-0.75], &[0.25, -0.25, 0.0], &spec, 0.1, &[0.5], 1e-12).unwrap();
        // deficit d = 2.5 * 0.75, push = d / 2.5
        assert_eq!(dk[0], 0.75);
    }

    #[test]
    fn cubic_root_matches_scalar_oracle() {
        let spec = ObstacleSpec::General {
            h: ConstraintFn::CubicPlusLinear { floor: FloorField::Zero },
            c_h: 1.0,
            big_c_h: 4.0,
        };
        let dk = general_push(&[-0.5], &[0.0], &spec, 0.0, &[0.5], 1e-12).unwrap();
        assert!((dk[0] - 0.5).abs() <= 1e-10);

        // three particles: root of mean (p + k + v_i)^3 + (p + k + v_i)
        let vals = [0.1, -0.4, 0.25];
        let p = -0.6;
        let dk = general_push(&[p], &vals, &spec, 0.0, &[0.5], 1e-12).unwrap()[0];
        let f = |k: f64| vals.iter().map(|v| (p + k + v).powi(3) + (p + k + v)).sum::<f64>() / 3.0;
        // Newton from the right, in the convex region
        let mut k = 2.0;
        for _ in 0..100 {
            let fp = vals.iter().map(|v| 3.0 * (p + k + v).powi(2) + 1.0).sum::<f64>() / 3.0;
            k -= f(k) / fp;
        }
        assert!((dk - k).abs() <= 1e-10, "{dk} vs {k}");
    }

    #[test]
    fn general_identity_matches_linear() {
        let vals = [0.1, -0.2, 0.3, -0.5, 0.05, 0.0];
        let proposal = [-0.3, 0.4];
        let xs = [0.25, 0.5];
        // 3 particles x 2 nodes
        let g = general_push(&proposal, &vals, &identity(), 0.2, &xs, 1e-12).unwrap();
        let means = [(0.1 + 0.3 + 0.05) / 3.0, (-0.2 - 0.5 + 0.0) / 3.0];
        let l = linear_push(&proposal, &means).unwrap();
        for (a, b) in g.iter().zip(&l) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn unsatisfiable_bracket_is_reported() {
        // declared c_h larger than the true slope: the upper bracket is too short
        let spec = ObstacleSpec::General {
            h: ConstraintFn::Affine { slope: 1.0, floor: FloorField::Zero },
            c_h: 2.0,
            big_c_h: 2.0,
        };
        let r = general_push(&[-1.0], &[0.0], &spec, 0.0, &[0.5], 1e-12);
        assert!(matches!(r, Err(Error::Numerical(_))));
    }

    #[test]
    fn flatness_of_binding_pushes_is_zero() {
        assert_eq!(flatness_residual(&[0.3, 0.0], &[0.0, 0.0]), 0.0);
        assert_eq!(flatness_residual(&[0.0, 0.2], &[0.7, 0.0]), 0.0);
        assert!((flatness_residual(&[0.5, -1.0], &[2.0, 3.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn validation_spots_bad_constants() {
        let ok = ObstacleSpec::General {
            h: ConstraintFn::TanhPlusLinear { c: 1.0, b: 2.0, floor: FloorField::Zero },
            c_h: 1.0,
            big_c_h: 3.0,
        };
        assert!(ok.validate(1.0).is_ok());
        let bad = ObstacleSpec::General {
            h: ConstraintFn::TanhPlusLinear { c: 1.0, b: 2.0, floor: FloorField::Zero },
            c_h: 1.0,
            big_c_h: 2.0,
        };
        assert!(bad.validate(1.0).is_err());
        let kinked = ObstacleSpec::General {
            h: ConstraintFn::Kinked { lo: 0.5, hi: 2.0, floor: FloorField::RampSine { a: 1.0 } },
            c_h: 0.5,
            big_c_h: 2.0,
        };
        assert!(kinked.validate(1.0).is_ok());
        assert!(ObstacleSpec::Linear { y: FloorField::Constant { c: -1.0 } }
            .check_compatibility()
            .is_err());
    }

    #[test]
    fn obstacle_evolution_stays_above_floor() {
        let grid = SpaceTimeGrid::with_cfl(0.1, 16, 0.5).unwrap();
        let spec = ObstacleSpec::Linear { y: FloorField::RampSine { a: 1.0 } };
        let evo = evolve_obstacle(&grid, &spec, |_, _| 0.0, 1e-12).unwrap();
        let nodes = grid.n_nodes();
        for n in 0..=grid.nt() {
            for j in 0..nodes {
                let y = FloorField::RampSine { a: 1.0 }.value(grid.time(n), grid.x(j));
                assert!(evo.zbar[n * nodes + j] - y >= -1e-14);
            }
        }
        assert!(evo.k.min_increment() >= 0.0);
        assert!(evo.k.total_mass() > 0.0);
    }

    #[test]
    fn comparison_with_lipschitz_ratio() {
        let spec = ObstacleSpec::General {
            h: ConstraintFn::Kinked { lo: 0.5, hi: 2.0, floor: FloorField::Zero },
            c_h: 0.5,
            big_c_h: 2.0,
        };
        for nx in [16, 32] {
            let grid = SpaceTimeGrid::with_cfl(0.1, nx, 0.5).unwrap();
            let v1 = |n: usize, j: usize| -grid.time(n) * (std::f64::consts::PI * grid.x(j)).sin();
            let bump = |j: usize| 0.3 * (-(grid.x(j) - 0.4).powi(2) / 0.01).exp();
            let v2 = |n: usize, j: usize| v1(n, j) - bump(j);
            let a = evolve_obstacle(&grid, &spec, v1, 1e-12).unwrap();
            let b = evolve_obstacle(&grid, &spec, v2, 1e-12).unwrap();
            let lhs = a.zbar.iter().zip(&b.zbar).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            let dv = (0..=nx).map(bump).fold(0.0, f64::max);
            assert!(lhs > 0.0);
            assert!(lhs <= spec.lipschitz_ratio() * dv + 10.0 * grid.dx(), "{lhs} vs {dv}");
        }
    }

    fn scalar_push_oracle(p: f64, v: f64) -> f64 {
        if p + v >= 0.0 {
            0.0
        } else {
            -(p + v)
        }
    }

    proptest! {
        #[test]
        fn linear_push_matches_scalar_oracle(rows in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..40)) {
            let p: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let v: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let dk = linear_push(&p, &v).unwrap();
            for ((d, a), b) in dk.iter().zip(&p).zip(&v) {
                prop_assert!(*d >= 0.0);
                prop_assert_eq!(*d, scalar_push_oracle(*a, *b));
                prop_assert!(a + d + b >= -1e-15);
            }
        }

        #[test]
        fn general_push_is_minimal(
            p in -2.0f64..1.0,
            vals in proptest::collection::vec(-1.0f64..1.0, 1..12),
            c in 0.5f64..2.0,
            b in 0.0f64..3.0,
        ) {
            let tol = 1e-12;
            let spec = ObstacleSpec::General {
                h: ConstraintFn::TanhPlusLinear { c, b, floor: FloorField::Zero },
                c_h: c,
                big_c_h: c + b,
            };
            let k = general_push(&[p], &vals, &spec, 0.0, &[0.5], tol).unwrap()[0];
            let mean = |k: f64| vals.iter().map(|v| spec.h(0.0, 0.5, p + k + v)).sum::<f64>() / vals.len() as f64;
            prop_assert!(k >= 0.0);
            prop_assert!(mean(k) >= -1e-12);
            if k > 0.0 {
                prop_assert!(mean(k - 2.0 * tol) < 0.0);
            }
        }

        #[test]
        fn push_is_monotone_in_particle_values(
            p in -2.0f64..1.0,
            vals in proptest::collection::vec(-1.0f64..1.0, 1..12),
            shift in 0.0f64..0.5,
        ) {
            let tol = 1e-12;
            let spec = ObstacleSpec::General {
                h: ConstraintFn::Kinked { lo: 0.5, hi: 2.0, floor: FloorField::Zero },
                c_h: 0.5,
                big_c_h: 2.0,
            };
            let raised: Vec<f64> = vals.iter().map(|v| v + shift).collect();
            let k0 = general_push(&[p], &vals, &spec, 0.0, &[0.5], tol).unwrap()[0];
            let k1 = general_push(&[p], &raised, &spec, 0.0, &[0.5], tol).unwrap()[0];
            prop_assert!(k1 <= k0 + tol);
        }
    }
}
