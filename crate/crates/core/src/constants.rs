//! Log-domain evaluation of the transport constants `C_{T,q}`, `C_{T,p,eps}`,
//! `C1` and `C2`.
//!
//! The constants are astronomically large for moderate Lipschitz constants
//! (`log C1` itself can exceed `1e100`), so every quantity is assembled as a
//! natural log and only exponentiated where the result stays representable.
//! Infima are located by a deterministic grid scan followed by golden-section
//! refinement around the best scan point.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower end of the `q` search is `10 + Q_OFFSET`.
pub const Q_OFFSET: f64 = 1e-6;
/// Upper end of the `q` search.
pub const Q_MAX: f64 = 500.0;
const Q_SCAN: usize = 2000;
const EPS_SCAN: usize = 200;
const GOLDEN_ITERS: usize = 200;

/// Inputs of `C1` / `C2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantEnv {
    #[serde(rename = "T")]
    pub t_end: f64,
    /// Joint Lipschitz constant of `f` and `sigma`.
    #[serde(rename = "C_T")]
    pub c_t: f64,
    /// Uniform bound of `sigma`.
    #[serde(rename = "M_sigma")]
    pub m_sigma: f64,
    /// Lower bi-Lipschitz constant of the constraint function.
    #[serde(default)]
    pub c_h: Option<f64>,
    /// Upper bi-Lipschitz constant of the constraint function.
    #[serde(rename = "C_h", default)]
    pub big_c_h: Option<f64>,
}

impl ConstantEnv {
    pub fn new(t_end: f64, c_t: f64, m_sigma: f64) -> Self {
        Self {
            t_end,
            c_t,
            m_sigma,
            c_h: None,
            big_c_h: None,
        }
    }

    pub fn with_bi_lipschitz(mut self, c_h: f64, big_c_h: f64) -> Self {
        self.c_h = Some(c_h);
        self.big_c_h = Some(big_c_h);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::Domain(format!("T must be positive, got {}", self.t_end)));
        }
        if !(self.c_t >= 0.0 && self.c_t.is_finite()) {
            return Err(Error::Domain(format!("C_T must be nonnegative, got {}", self.c_t)));
        }
        if !(self.m_sigma > 0.0 && self.m_sigma.is_finite()) {
            return Err(Error::Domain(format!("M_sigma must be positive, got {}", self.m_sigma)));
        }
        Ok(())
    }

    /// `C_h / c_h`, after checking `0 < c_h <= C_h`.
    pub fn lipschitz_ratio(&self) -> Result<f64> {
        match (self.c_h, self.big_c_h) {
            (Some(lo), Some(hi)) if lo > 0.0 && hi >= lo && hi.is_finite() => Ok(hi / lo),
            (Some(lo), Some(hi)) => Err(Error::Domain(format!(
                "bi-Lipschitz constants need 0 < c_h <= C_h, got c_h={lo}, C_h={hi}"
            ))),
            _ => Err(Error::Domain("c_h and C_h are required for C2".into())),
        }
    }
}

/// Value of a log-domain infimum with the point where it was attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogInfimum {
    pub log_value: f64,
    pub argmin: f64,
}

/// `log C1` or `log C2` with the optimizing `eps` and inner `q`.
///
/// Both are `None` in the `C_T = 0` limit, where no infimum is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogConstant {
    pub log_value: f64,
    pub eps_argmin: Option<f64>,
    pub q_argmin: Option<f64>,
}

/// `log(exp(a) + exp(b))` without overflow.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    if hi == f64::INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Deterministic grid scan of `f` on `nodes`, then golden-section search in
/// the cell pair around the best node. Never returns worse than the scan.
fn scan_then_golden(f: impl Fn(f64) -> f64, nodes: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, &x) in nodes.iter().enumerate() {
        let v = f(x);
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    let mut a = if best == 0 { lo } else { nodes[best - 1] };
    let mut b = if best + 1 == nodes.len() { hi } else { nodes[best + 1] };
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_ITERS {
        if (b - a) <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let (x, v) = if fc <= fd { (c, fc) } else { (d, fd) };
    if v <= best_val {
        (x, v)
    } else {
        (nodes[best], best_val)
    }
}

/// Log of the displayed upper bound on `C_{T,q}`:
/// `q^(q/2) T^(q/4-3/2) (2/pi)^q (2 pi)^(-(q/2+1)/2) ((6q-8)/(q-10))^(3q/2-2)`.
pub fn log_c_tq(t_end: f64, q: f64) -> Result<f64> {
    if !(q > 10.0) {
        return Err(Error::Domain(format!("C_(T,q) needs q > 10, got {q}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("C_(T,q) needs T > 0, got {t_end}")));
    }
    Ok(0.5 * q * q.ln()
        + (0.25 * q - 1.5) * t_end.ln()
        + q * (2.0 / PI).ln()
        - (0.5 * q + 1.0) * 0.5 * (2.0 * PI).ln()
        + (1.5 * q - 2.0) * ((6.0 * q - 8.0) / (q - 10.0)).ln())
}

fn q_nodes() -> Vec<f64> {
    let lo = 10.0 + Q_OFFSET;
    (0..Q_SCAN)
        .map(|i| lo + (Q_MAX - lo) * i as f64 / (Q_SCAN - 1) as f64)
        .collect()
}

fn minimize_over_q(objective: impl Fn(f64) -> f64) -> LogInfimum {
    let (q, v) = scan_then_golden(objective, &q_nodes(), 10.0 + Q_OFFSET, Q_MAX);
    LogInfimum { log_value: v, argmin: q }
}

/// Log of the objective inside the `C_{T,p,eps}` infimum at a given `q`.
pub fn log_c_tpe_objective(t_end: f64, p: f64, eps: f64, q: f64) -> f64 {
    let lctq = match log_c_tq(t_end, q) {
        Ok(v) => v,
        Err(_) => return f64::INFINITY,
    };
    let r = q / p;
    (p / (q - p)).ln() - r * q.ln() + (1.0 - r) * eps.ln() + r * log_add_exp((q - p).ln(), q.ln() + lctq)
}

/// `log C_{T,p,eps} = log inf_{q>10} (p/(q-p)) q^(-q/p) eps^(1-q/p) (q - p + q C_{T,q})^(q/p)`.
pub fn log_c_tpe(t_end: f64, p: f64, eps: f64) -> Result<LogInfimum> {
    if !(p > 0.0 && p <= 10.0) {
        return Err(Error::Domain(format!("C_(T,p,eps) needs 0 < p <= 10, got {p}")));
    }
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("C_(T,p,eps) needs eps > 0, got {eps}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("C_(T,p,eps) needs T > 0, got {t_end}")));
    }
    Ok(minimize_over_q(|q| log_c_tpe_objective(t_end, p, eps, q)))
}

/// `log C_{T,2,eps}` from its own display,
/// `inf_{q>10} 2/(q-2) q^(-q/2) eps^(1-q/2) (q - 2 + q C_{T,q})^(q/2)`.
pub fn log_c_t2e(t_end: f64, eps: f64) -> Result<LogInfimum> {
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("C_(T,2,eps) needs eps > 0, got {eps}")));
    }
    if !(t_end > 0.0) {
        return Err(Error::Domain(format!("C_(T,2,eps) needs T > 0, got {t_end}")));
    }
    Ok(minimize_over_q(|q| {
        let lctq = match log_c_tq(t_end, q) {
            Ok(v) => v,
            Err(_) => return f64::INFINITY,
        };
        (2.0 / (q - 2.0)).ln() - 0.5 * q * q.ln()
            + (1.0 - 0.5 * q) * eps.ln()
            + 0.5 * q * log_add_exp((q - 2.0).ln(), q.ln() + lctq)
    }))
}

/// Objective of the `C1`/`C2` infimum at `s = factor * eps * C_T^2 in (0, 1)`.
///
/// `factor` is 12 for `C1` and `6 (1 + C_h/c_h)` for `C2`.
pub fn log_c_factor_objective(env: &ConstantEnv, factor: f64, s: f64) -> (f64, f64) {
    let root = (2.0 * env.t_end / PI).sqrt();
    let c2 = env.c_t * env.c_t;
    let eps = s / (factor * c2);
    let inner = match log_c_t2e(env.t_end, eps) {
        Ok(v) => v,
        Err(_) => return (f64::INFINITY, f64::NAN),
    };
    let log_one_minus = (-s).ln_1p();
    let prefactor = (factor * root * env.m_sigma * env.m_sigma).ln() - log_one_minus;
    let log_exponent = (factor * c2).ln() - log_one_minus + log_add_exp(root.ln(), inner.log_value);
    (prefactor + log_exponent.exp(), inner.argmin)
}

fn log_c_with_factor(env: &ConstantEnv, factor: f64) -> Result<LogConstant> {
    env.validate()?;
    let root = (2.0 * env.t_end / PI).sqrt();
    if env.c_t == 0.0 {
        return Ok(LogConstant {
            log_value: (factor * root * env.m_sigma * env.m_sigma).ln(),
            eps_argmin: None,
            q_argmin: None,
        });
    }
    let nodes: Vec<f64> = (0..EPS_SCAN).map(|i| (i as f64 + 0.5) / EPS_SCAN as f64).collect();
    let (s, v) = scan_then_golden(|s| log_c_factor_objective(env, factor, s).0, &nodes, 0.0, 1.0);
    let (_, q) = log_c_factor_objective(env, factor, s);
    Ok(LogConstant {
        log_value: v,
        eps_argmin: Some(s / (factor * env.c_t * env.c_t)),
        q_argmin: Some(q),
    })
}

/// `log C1`, the constant of the linear mean reflection.
pub fn log_c1(env: &ConstantEnv) -> Result<LogConstant> {
    log_c_with_factor(env, 12.0)
}

/// `log C2`, the constant of the general bi-Lipschitz mean reflection.
pub fn log_c2(env: &ConstantEnv) -> Result<LogConstant> {
    let l = env.lipschitz_ratio()?;
    log_c_with_factor(env, 6.0 * (1.0 + l))
}
