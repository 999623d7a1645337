//! Discrete Brownian sheets, Girsanov drift shifts and their densities.
//!
//! A sheet holds the white-noise mass of every grid cell
//! `[t_n, t_{n+1}] x [x_j, x_{j+1}]`, i.i.d. `N(0, dt dx)`.
//!
//! Normals are drawn from a ChaCha8 stream keyed by `(seed, particle_id)`;
//! inside the stream, the normal of cell `(n, j)` sits at a fixed counter
//! position (Box-Muller consumes exactly one 64-bit word per normal), so any
//! row can be regenerated in isolation and parallel schedules cannot change
//! what a particle sees.

use std::f64::consts::PI;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::stats::pairwise_sum;

const TWO_POW_M53: f64 = 1.0 / 9_007_199_254_740_992.0;

/// Standard-normal stream for one particle.
#[derive(Debug, Clone)]
pub struct NormalStream {
    rng: ChaCha8Rng,
    row_words: usize,
}

impl NormalStream {
    /// `row_len` normals per row; rows start at even word offsets.
    pub fn new(seed: u64, particle_id: u64, row_len: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(particle_id);
        Self {
            rng,
            row_words: row_len + row_len % 2,
        }
    }

    /// Position the stream at the start of row `n`.
    pub fn seek_row(&mut self, n: usize) {
        // word_pos counts 32-bit words
        self.rng.set_word_pos(2 * (n as u128) * self.row_words as u128);
    }

    /// Fill `out` with the next row of standard normals times `scale`.
    pub fn fill_row(&mut self, out: &mut [f64], scale: f64) {
        debug_assert!(out.len() <= self.row_words);
        let mut k = 0;
        while k < self.row_words {
            let a = self.rng.next_u64();
            let b = self.rng.next_u64();
            let u1 = ((a >> 11) + 1) as f64 * TWO_POW_M53;
            let u2 = (b >> 11) as f64 * TWO_POW_M53;
            let r = (-2.0 * u1.ln()).sqrt();
            let (s, c) = (2.0 * PI * u2).sin_cos();
            if k < out.len() {
                out[k] = scale * r * c;
            }
            if k + 1 < out.len() {
                out[k + 1] = scale * r * s;
            }
            k += 2;
        }
    }
}

/// A source of successive noise rows (one row = `nx` cell increments).
pub trait RowSource: Send {
    fn next_row(&mut self, out: &mut [f64]);
}

/// Fresh increments on the native grid.
#[derive(Debug, Clone)]
pub struct SheetStream {
    normals: NormalStream,
    scale: f64,
}

impl SheetStream {
    pub fn new(grid: &SpaceTimeGrid, seed: u64, particle_id: u64) -> Self {
        Self {
            normals: NormalStream::new(seed, particle_id, grid.nx()),
            scale: (grid.dt() * grid.dx()).sqrt(),
        }
    }
}

impl RowSource for SheetStream {
    fn next_row(&mut self, out: &mut [f64]) {
        self.normals.fill_row(out, self.scale);
    }
}

/// Increments of a coarse grid built by summing `rt x rx` blocks of a
/// fine-grid stream, so runs on nested grids see the same white noise.
#[derive(Debug, Clone)]
pub struct AggregatedStream {
    fine: SheetStream,
    rt: usize,
    rx: usize,
    buf: Vec<f64>,
}

impl AggregatedStream {
    pub fn new(coarse: &SpaceTimeGrid, rt: usize, rx: usize, seed: u64, particle_id: u64) -> Result<Self> {
        let fine = coarse.refine(rt, rx)?;
        Ok(Self {
            fine: SheetStream::new(&fine, seed, particle_id),
            rt,
            rx,
            buf: vec![0.0; fine.nx()],
        })
    }
}

impl RowSource for AggregatedStream {
    fn next_row(&mut self, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.rt {
            self.fine.next_row(&mut self.buf);
            for (o, block) in out.iter_mut().zip(self.buf.chunks_exact(self.rx)) {
                *o += block.iter().sum::<f64>();
            }
        }
    }
}

/// How particle noise rows are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseLayout {
    #[default]
    Native,
    /// Aggregate a grid refined by `rt` in time and `rx` in space.
    Aggregated { rt: usize, rx: usize },
}

impl NoiseLayout {
    pub fn source(&self, grid: &SpaceTimeGrid, seed: u64, particle_id: u64) -> Result<Box<dyn RowSource>> {
        Ok(match *self {
            NoiseLayout::Native => Box::new(SheetStream::new(grid, seed, particle_id)),
            NoiseLayout::Aggregated { rt, rx } => {
                if rt == 0 || rx == 0 {
                    return Err(Error::Config("noise aggregation factors must be >= 1".into()));
                }
                Box::new(AggregatedStream::new(grid, rt, rx, seed, particle_id)?)
            }
        })
    }
}

/// Cell increments of a discrete Brownian sheet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSheet {
    pub nt: usize,
    pub nx: usize,
    /// Row-major `nt x nx`; row = time index.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub particle_id: u64,
}

impl NoiseSheet {
    pub fn row(&self, n: usize) -> &[f64] {
        &self.increments[n * self.nx..(n + 1) * self.nx]
    }

    /// All-zero sheet, for deterministic runs.
    pub fn zeros(grid: &SpaceTimeGrid) -> Self {
        Self { nt: grid.nt(), nx: grid.nx(), increments: vec![0.0; grid.nt() * grid.nx()], seed: 0, particle_id: 0 }
    }

    pub fn check_dims(&self, grid: &SpaceTimeGrid) -> Result<()> {
        if self.nt != grid.nt() || self.nx != grid.nx() || self.increments.len() != self.nt * self.nx {
            return Err(Error::Contract(format!(
                "noise sheet is {}x{} but the grid is {}x{}",
                self.nt,
                self.nx,
                grid.nt(),
                grid.nx()
            )));
        }
        Ok(())
    }
}

/// Replays the rows of a stored sheet.
#[derive(Debug, Clone)]
pub struct SheetRows {
    sheet: NoiseSheet,
    next: usize,
}

impl SheetRows {
    pub fn new(sheet: NoiseSheet) -> Self {
        Self { sheet, next: 0 }
    }
}

impl RowSource for SheetRows {
    fn next_row(&mut self, out: &mut [f64]) {
        out.copy_from_slice(self.sheet.row(self.next));
        self.next += 1;
    }
}

/// Deterministic sheet for `(grid, seed, particle_id)`.
pub fn sample_sheet(grid: &SpaceTimeGrid, seed: u64, particle_id: u64) -> NoiseSheet {
    let mut stream = SheetStream::new(grid, seed, particle_id);
    let mut increments = vec![0.0; grid.nt() * grid.nx()];
    for row in increments.chunks_exact_mut(grid.nx()) {
        stream.next_row(row);
    }
    NoiseSheet {
        nt: grid.nt(),
        nx: grid.nx(),
        increments,
        seed,
        particle_id,
    }
}

/// Deterministic drift `g(s, x)`, piecewise constant on grid cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftField {
    Constant { c: f64 },
    /// `g(s, y) = a * s * y`, averaged over each cell (the midpoint value).
    Bilinear { a: f64 },
    /// Explicit `nt x nx` cell values, row = time index.
    Grid { nt: usize, nx: usize, values: Vec<f64> },
}

impl DriftField {
    /// Cell value `g_{n,j}`.
    pub fn value(&self, grid: &SpaceTimeGrid, n: usize, j: usize) -> f64 {
        match self {
            DriftField::Constant { c } => *c,
            DriftField::Bilinear { a } => {
                a * (grid.time(n) + 0.5 * grid.dt()) * (grid.x(j) + 0.5 * grid.dx())
            }
            DriftField::Grid { nx, values, .. } => values[n * nx + j],
        }
    }

    pub fn row(&self, grid: &SpaceTimeGrid, n: usize) -> Vec<f64> {
        (0..grid.nx()).map(|j| self.value(grid, n, j)).collect()
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DriftField::Constant { c } => *c == 0.0,
            DriftField::Bilinear { a } => *a == 0.0,
            DriftField::Grid { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }

    /// `lambda * g`.
    pub fn scaled(&self, lambda: f64) -> Self {
        match self {
            DriftField::Constant { c } => DriftField::Constant { c: lambda * c },
            DriftField::Bilinear { a } => DriftField::Bilinear { a: lambda * a },
            DriftField::Grid { nt, nx, values } => DriftField::Grid {
                nt: *nt,
                nx: *nx,
                values: values.iter().map(|v| lambda * v).collect(),
            },
        }
    }

    /// Dimension and finiteness checks against `grid`.
    pub fn validate(&self, grid: &SpaceTimeGrid) -> Result<()> {
        match self {
            DriftField::Constant { c } if !c.is_finite() => {
                Err(Error::Data(format!("drift constant is not finite: {c}")))
            }
            DriftField::Bilinear { a } if !a.is_finite() => {
                Err(Error::Data(format!("drift coefficient is not finite: {a}")))
            }
            DriftField::Grid { nt, nx, values } => {
                if *nt != grid.nt() || *nx != grid.nx() || values.len() != nt * nx {
                    return Err(Error::Contract(format!(
                        "drift grid is {nt}x{nx} ({} values) but the grid is {}x{}",
                        values.len(),
                        grid.nt(),
                        grid.nx()
                    )));
                }
                if let Some(k) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Data(format!(
                        "drift value at row {}, column {} is not finite",
                        k / nx,
                        k % nx
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Read an `nt x nx` CSV (comma separated, one row per time index).
    pub fn from_csv(path: &Path, grid: &SpaceTimeGrid) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::with_capacity(grid.nt() * grid.nx());
        let mut rows = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let before = values.len();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!("{}:{}: not a number: {field:?}", path.display(), i + 1))
                })?;
                values.push(v);
            }
            if values.len() - before != grid.nx() {
                return Err(Error::Contract(format!(
                    "{}:{}: expected {} columns, found {}",
                    path.display(),
                    i + 1,
                    grid.nx(),
                    values.len() - before
                )));
            }
            rows += 1;
        }
        let g = DriftField::Grid {
            nt: rows,
            nx: grid.nx(),
            values,
        };
        g.validate(grid)?;
        Ok(g)
    }
}

/// `1/2 sum_{n,j} g_{n,j}^2 dt dx`, the relative entropy of the shifted law.
pub fn entropy_of_drift(g: &DriftField, grid: &SpaceTimeGrid) -> Result<f64> {
    g.validate(grid)?;
    let rows: Vec<f64> = (0..grid.nt())
        .map(|n| {
            let sq: Vec<f64> = (0..grid.nx()).map(|j| g.value(grid, n, j).powi(2)).collect();
            pairwise_sum(&sq)
        })
        .collect();
    let total = pairwise_sum(&rows);
    if !total.is_finite() {
        return Err(Error::Data("drift energy is not finite".into()));
    }
    Ok(0.5 * total * grid.dt() * grid.dx())
}

/// Add `g dt dx` to every cell: turns a Q-sheet into the matching P-sheet.
pub fn shift_sheet(sheet: &NoiseSheet, g: &DriftField, grid: &SpaceTimeGrid) -> Result<NoiseSheet> {
    sheet.check_dims(grid)?;
    g.validate(grid)?;
    let cell = grid.dt() * grid.dx();
    let mut out = sheet.clone();
    for (n, row) in out.increments.chunks_exact_mut(grid.nx()).enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            *w += g.value(grid, n, j) * cell;
        }
    }
    Ok(out)
}

/// Running log of the exponential martingale at grid times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovDensity {
    /// `log M_{t_n}`, `n = 0..=nt`; `log_m[0] = 0`.
    pub log_m: Vec<f64>,
}

impl GirsanovDensity {
    pub fn terminal_log(&self) -> f64 {
        *self.log_m.last().expect("density has at least one entry")
    }
}

/// `log M_{t_n} = sum_{m<n,j} g dW - 1/2 sum_{m<n,j} g^2 dt dx` for a P-sheet.
pub fn log_density(sheet_p: &NoiseSheet, g: &DriftField, grid: &SpaceTimeGrid) -> Result<GirsanovDensity> {
    sheet_p.check_dims(grid)?;
    g.validate(grid)?;
    let cell = grid.dt() * grid.dx();
    let mut log_m = Vec::with_capacity(grid.nt() + 1);
    log_m.push(0.0);
    let mut acc = 0.0;
    let mut lin = vec![0.0; grid.nx()];
    let mut quad = vec![0.0; grid.nx()];
    for n in 0..grid.nt() {
        for (j, w) in sheet_p.row(n).iter().enumerate() {
            let gv = g.value(grid, n, j);
            lin[j] = gv * w;
            quad[j] = gv * gv;
        }
        acc += pairwise_sum(&lin) - 0.5 * pairwise_sum(&quad) * cell;
        log_m.push(acc);
    }
    Ok(GirsanovDensity { log_m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{pairwise_mean, sample_variance, standard_error};

    fn grid() -> SpaceTimeGrid {
        SpaceTimeGrid::new(0.25, 32, 32).unwrap()
    }

    #[test]
    fn sheets_are_deterministic() {
        let g = grid();
        let a = sample_sheet(&g, 42, 7);
        let b = sample_sheet(&g, 42, 7);
        assert_eq!(a, b);
        assert_ne!(a.increments, sample_sheet(&g, 42, 8).increments);
        assert_ne!(a.increments, sample_sheet(&g, 43, 7).increments);
    }

    #[test]
    fn rows_are_addressable_by_counter() {
        let g = SpaceTimeGrid::new(1.0, 10, 7).unwrap();
        let sheet = sample_sheet(&g, 5, 3);
        let mut s = NormalStream::new(5, 3, 7);
        s.seek_row(6);
        let mut row = vec![0.0; 7];
        s.fill_row(&mut row, (g.dt() * g.dx()).sqrt());
        assert_eq!(row.as_slice(), sheet.row(6));
    }

    #[test]
    fn pooled_variance_is_dt_dx() {
        let g = SpaceTimeGrid::new(0.25, 1000, 100).unwrap();
        let mut pooled = Vec::new();
        for pid in 0..10 {
            pooled.extend(sample_sheet(&g, 11, pid).increments);
        }
        assert_eq!(pooled.len(), 1_000_000);
        let var = sample_variance(&pooled);
        let target = g.dt() * g.dx();
        // 5 standard errors of the variance estimator, inside the 1% budget
        let se = target * (2.0 / pooled.len() as f64).sqrt();
        assert!((var - target).abs() <= 5.0 * se);
        assert!((var - target).abs() / target <= 0.01);
        assert!(pairwise_mean(&pooled).abs() <= 5.0 * target.sqrt() / 1000.0);
    }

    #[test]
    fn particle_streams_are_uncorrelated() {
        let g = SpaceTimeGrid::new(0.25, 1000, 100).unwrap();
        let a = sample_sheet(&g, 3, 0).increments;
        let b = sample_sheet(&g, 3, 1).increments;
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        let corr = pairwise_mean(&prod) / (g.dt() * g.dx());
        let se = 1.0 / (a.len() as f64).sqrt();
        assert!(corr.abs() <= 5.0 * se, "corr = {corr}");
    }

    #[test]
    fn aggregation_preserves_variance_and_matches_fine_sums() {
        let coarse = SpaceTimeGrid::new(0.25, 8, 4).unwrap();
        let fine = coarse.refine(4, 2).unwrap();
        let fine_sheet = sample_sheet(&fine, 9, 2);
        let mut agg = AggregatedStream::new(&coarse, 4, 2, 9, 2).unwrap();
        let mut row = vec![0.0; 4];
        for n in 0..coarse.nt() {
            agg.next_row(&mut row);
            for (j, v) in row.iter().enumerate() {
                let mut s = 0.0;
                for m in 0..4 {
                    s += fine_sheet.row(4 * n + m)[2 * j] + fine_sheet.row(4 * n + m)[2 * j + 1];
                }
                assert!((v - s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn entropy_closed_forms() {
        let g = grid();
        assert_eq!(entropy_of_drift(&DriftField::Constant { c: 0.0 }, &g).unwrap(), 0.0);
        let h = entropy_of_drift(&DriftField::Constant { c: 0.5 }, &g).unwrap();
        assert!((h - 0.5 * 0.25 * 0.25).abs() < 1e-15);
        let bad = DriftField::Grid { nt: 32, nx: 32, values: vec![f64::NAN; 1024] };
        assert!(matches!(entropy_of_drift(&bad, &g), Err(Error::Data(_))));
    }

    #[test]
    fn entropy_converges_under_refinement() {
        // oracle: 512 x 512 midpoint sum; exact value 1/18
        let fine = SpaceTimeGrid::new(1.0, 512, 512).unwrap();
        let mut oracle = 0.0;
        for n in 0..512 {
            for j in 0..512 {
                let s = (n as f64 + 0.5) / 512.0;
                let y = (j as f64 + 0.5) / 512.0;
                oracle += (s * y).powi(2);
            }
        }
        oracle *= 0.5 / (512.0 * 512.0);
        assert!((oracle - 1.0 / 18.0).abs() < 1e-5);
        let coarse = SpaceTimeGrid::new(1.0, 64, 64).unwrap();
        let h = entropy_of_drift(&DriftField::Bilinear { a: 1.0 }, &coarse).unwrap();
        assert!(((h - oracle) / oracle).abs() <= 1e-3);
        let h_fine = entropy_of_drift(&DriftField::Bilinear { a: 1.0 }, &fine).unwrap();
        assert!(((h_fine - oracle) / oracle).abs() <= 1e-10);
    }

    #[test]
    fn shift_round_trips() {
        let g = SpaceTimeGrid::new(1.0, 64, 64).unwrap();
        let s = sample_sheet(&g, 1, 1);
        let zero = shift_sheet(&s, &DriftField::Constant { c: 0.0 }, &g).unwrap();
        assert_eq!(zero, s);
        let there = shift_sheet(&s, &DriftField::Bilinear { a: 3.0 }, &g).unwrap();
        let back = shift_sheet(&there, &DriftField::Bilinear { a: -3.0 }, &g).unwrap();
        for (a, b) in back.increments.iter().zip(&s.increments) {
            assert!((a - b).abs() <= 1e-15);
        }
        let one = shift_sheet(&s, &DriftField::Constant { c: 1.0 }, &g).unwrap();
        assert_eq!(g.dt() * g.dx(), 1.0 / 4096.0);
        for (a, b) in one.increments.iter().zip(&s.increments) {
            assert_eq!(*a, b + 1.0 / 4096.0);
        }
        let other = SpaceTimeGrid::new(1.0, 32, 64).unwrap();
        assert!(matches!(shift_sheet(&s, &DriftField::Constant { c: 1.0 }, &other), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_drift_has_unit_density() {
        let g = grid();
        let s = sample_sheet(&g, 0, 0);
        let d = log_density(&s, &DriftField::Constant { c: 0.0 }, &g).unwrap();
        assert_eq!(d.log_m.len(), g.nt() + 1);
        assert!(d.log_m.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn change_of_measure_identity() {
        // E_P[M_T F(W~)] = E[F(fresh sheet)] = 0 with F = mean of entries
        let g = grid();
        let drift = DriftField::Constant { c: 0.5 };
        let neg = drift.scaled(-1.0);
        let mut weighted = Vec::new();
        for pid in 0..10_000 {
            let w = sample_sheet(&g, 77, pid);
            let m = log_density(&w, &drift, &g).unwrap().terminal_log().exp();
            let tilde = shift_sheet(&w, &neg, &g).unwrap();
            weighted.push(m * pairwise_mean(&tilde.increments));
        }
        let mean = pairwise_mean(&weighted);
        assert!(mean.abs() <= 3.0 * standard_error(&weighted), "mean = {mean}");
    }

    proptest::proptest! {
        #[test]
        fn entropy_is_quadratically_homogeneous(c in -5.0f64..5.0, lambda in -4.0f64..4.0) {
            let g = SpaceTimeGrid::new(0.5, 16, 8).unwrap();
            let drift = DriftField::Bilinear { a: c };
            let h = entropy_of_drift(&drift, &g).unwrap();
            let hl = entropy_of_drift(&drift.scaled(lambda), &g).unwrap();
            proptest::prop_assert!(h >= 0.0);
            proptest::prop_assert!((hl - lambda * lambda * h).abs() <= 1e-15 * hl.abs());
        }
    }
}
