//! Uniform discretization of `[0, T] x [0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Space-time grid with `nt` time steps and `nx` spatial cells.
///
/// Only `(T, nt, nx)` are stored; `dt` and `dx` are always derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    #[serde(rename = "T")]
    t_end: f64,
    nt: usize,
    nx: usize,
}

/// Stability data of the explicit heat step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CflReport {
    pub dt: f64,
    pub dx: f64,
    /// `dt / dx^2`; the explicit scheme is monotone for values up to 1/2.
    pub ratio: f64,
    pub ok: bool,
}

impl SpaceTimeGrid {
    pub fn new(t_end: f64, nt: usize, nx: usize) -> Result<Self> {
        if !(t_end.is_finite() && t_end > 0.0) {
            return Err(Error::Config(format!("grid: T must be positive, got {t_end}")));
        }
        if nt < 1 {
            return Err(Error::Config("grid: nt must be at least 1".into()));
        }
        if nx < 2 {
            return Err(Error::Config(format!("grid: nx must be at least 2, got {nx}")));
        }
        Ok(Self { t_end, nt, nx })
    }

    /// Smallest `nt` for which `dt <= ratio * dx^2`.
    pub fn with_cfl(t_end: f64, nx: usize, ratio: f64) -> Result<Self> {
        if !(ratio > 0.0) {
            return Err(Error::Config(format!("grid: CFL ratio must be positive, got {ratio}")));
        }
        let dx = 1.0 / nx as f64;
        let target = ratio * dx * dx;
        let mut nt = (t_end / target).ceil().max(1.0) as usize;
        // guard against ceil landing one short after rounding
        while t_end / nt as f64 > target {
            nt += 1;
        }
        Self::new(t_end, nt, nx)
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    /// Time of step index `n` (`n = nt` gives exactly `T`).
    pub fn time(&self, n: usize) -> f64 {
        self.t_end * n as f64 / self.nt as f64
    }

    /// Coordinate of spatial node `j` (`0..=nx`).
    pub fn x(&self, j: usize) -> f64 {
        j as f64 / self.nx as f64
    }

    /// Number of spatial nodes including both boundary nodes.
    pub fn n_nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn n_interior(&self) -> usize {
        self.nx - 1
    }

    pub fn cfl_ratio(&self) -> f64 {
        self.dt() / (self.dx() * self.dx())
    }

    pub fn cfl_ok(&self) -> bool {
        // dt <= dx^2/2, evaluated without the division round-off of cfl_ratio
        2.0 * self.t_end * (self.nx * self.nx) as f64 <= self.nt as f64 * (1.0 + 1e-12)
    }

    pub fn cfl_report(&self) -> CflReport {
        CflReport {
            dt: self.dt(),
            dx: self.dx(),
            ratio: self.cfl_ratio(),
            ok: self.cfl_ok(),
        }
    }

    /// The grid with `rt` times as many steps and `rx` times as many cells.
    pub fn refine(&self, rt: usize, rx: usize) -> Result<Self> {
        Self::new(self.t_end, self.nt * rt, self.nx * rx)
    }

    /// One explicit Euler step of `u_t = u_xx` on the interior nodes;
    /// boundary values of `out` are set to zero.
    pub fn heat_step(&self, field: &[f64], out: &mut [f64]) {
        let r = self.cfl_ratio();
        let n = self.nx;
        out[0] = 0.0;
        out[n] = 0.0;
        for j in 1..n {
            out[j] = field[j] + r * (field[j - 1] - 2.0 * field[j] + field[j + 1]);
        }
    }

    /// Nearest step index to time `t`, clamped to `[0, nt]`.
    pub fn step_of(&self, t: f64) -> usize {
        let n = (t / self.dt()).round();
        n.clamp(0.0, self.nt as f64) as usize
    }

    /// Nearest node index to position `x`, clamped to `[0, nx]`.
    pub fn node_of(&self, x: f64) -> usize {
        (x * self.nx as f64).round().clamp(0.0, self.nx as f64) as usize
    }
}
