//! Stability-certificate constants and trajectory monitors.
//!
//! Every norm is the spectral norm (Euclidean length for vectors and for the
//! gain row). The certificate is conservative by construction: `stable`
//! means the sufficient condition `ε < ε*` holds, nothing more.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{matrix_to_rows, solve_lyapunov, spectral_norm, symmetric_eigen_range, Matrix, NORM_LABEL};
use crate::plant::{HistoryView, SwitchedPlant, Trajectory};
use crate::predictor::{AverageSystem, WRecord};

/// Bisection stops once the bracket is this small relative to its upper end.
pub const BISECTION_RTOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 4000;

/// `max_i max{|A_i − Ā|, |B_i − B̄|}`.
pub fn epsilon(plant: &SwitchedPlant, avg: &AverageSystem) -> f64 {
    plant
        .modes()
        .iter()
        .map(|m| spectral_norm(&(&m.a - &avg.a_bar)).max(spectral_norm(&(&m.b - &avg.b_bar))))
        .fold(0.0, f64::max)
}

/// `M_A`, `M_B`, `M_H`: largest norm over the average and every mode, with
/// `H = A + BK̄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub m_a: f64,
    pub m_b: f64,
    pub m_h: f64,
}

pub fn norm_bounds(plant: &SwitchedPlant, avg: &AverageSystem) -> NormBounds {
    let k = &avg.k_bar;
    let mut m_a = spectral_norm(&avg.a_bar);
    let mut m_b = spectral_norm(&avg.b_bar);
    let mut m_h = spectral_norm(&avg.closed_loop());
    for m in plant.modes() {
        m_a = m_a.max(spectral_norm(&m.a));
        m_b = m_b.max(spectral_norm(&m.b));
        m_h = m_h.max(spectral_norm(&(&m.a + &m.b * k)));
    }
    NormBounds { m_a, m_b, m_h }
}

/// Inputs of `λ(ε)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MismatchParams {
    pub delay: f64,
    pub dwell_time: f64,
    pub m_a: f64,
    pub m_b: f64,
}

/// `⌈D/τ_d⌉`, the most switches any window of length `D` can hold. A ratio
/// within round-off of an integer is taken as that integer.
pub fn switch_count_bound(delay: f64, dwell_time: f64) -> f64 {
    let r = delay / dwell_time;
    let near = r.round();
    if (r - near).abs() <= 1e-9 * near.max(1.0) {
        near
    } else {
        r.ceil()
    }
}

/// `δ₁ = ε(⌈D/τ_d⌉+1) D e^{D(M_A+ε)}`.
pub fn delta1(eps: f64, p: &MismatchParams) -> f64 {
    let kk = switch_count_bound(p.delay, p.dwell_time) + 1.0;
    eps * kk * p.delay * (p.delay * (p.m_a + eps)).exp()
}

/// `δ₂ = ε e^{M_A D}(e^{εD} D M_B [1 + e^{M_A D}(⌈D/τ_d⌉+1)] + 1)`.
pub fn delta2(eps: f64, p: &MismatchParams) -> f64 {
    let kk = switch_count_bound(p.delay, p.dwell_time) + 1.0;
    let ead = (p.m_a * p.delay).exp();
    eps * ead * ((eps * p.delay).exp() * p.delay * p.m_b * (1.0 + ead * kk) + 1.0)
}

/// `λ(ε) = max{δ₁, δ₂}`.
pub fn lambda_of(eps: f64, p: &MismatchParams) -> f64 {
    delta1(eps, p).max(delta2(eps, p))
}

/// `2 max{2|K̄|²D e^{2MD}, 1 + 2|K̄|²D² e^{2MD} M_B²}`; `M = M_H` gives `ν₁`,
/// `M = M_A` gives `ν₂`.
pub fn nu(k_norm: f64, delay: f64, m: f64, m_b: f64) -> f64 {
    let k2e = 2.0 * k_norm * k_norm * (2.0 * m * delay).exp();
    2.0 * (k2e * delay).max(1.0 + k2e * delay * delay * m_b * m_b)
}

/// `(ν₁, ν₂)`.
pub fn nu_constants(plant: &SwitchedPlant, avg: &AverageSystem, delay: f64) -> (f64, f64) {
    let nb = norm_bounds(plant, avg);
    let k = spectral_norm(&avg.k_bar);
    (nu(k, delay, nb.m_h, nb.m_b), nu(k, delay, nb.m_a, nb.m_b))
}

/// Smallest `x ≥ 0` with `f(x) ≥ target` for increasing `f`, searched on
/// `[0, hi]`, where `f(hi) ≥ target` is assumed.
fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut hi: f64) -> f64 {
    let mut lo = 0.0;
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `λ⁻¹(y)`: the bracket doubles from 1 until `λ` exceeds `y`.
pub fn lambda_inverse(y: f64, p: &MismatchParams) -> Result<f64> {
    if !y.is_finite() || y < 0.0 {
        return Err(Error::Domain(format!("λ⁻¹ needs a finite nonnegative argument, got {y}")));
    }
    let mut hi = 1.0;
    while lambda_of(hi, p) < y {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Domain("λ⁻¹ bracket diverged".into()));
        }
    }
    Ok(bisect_increasing(|e| lambda_of(e, p), y, hi))
}

/// Which term of the `ε*` minimum is active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonStarBranch {
    /// `λ_min(Q) / (2|P|(1+|K̄|))`
    Feasibility,
    /// `α⁻¹(λ_min(Q)/2)`
    Alpha,
    /// `λ⁻¹(1/(|K̄|√(2e^D D ν₁)))`
    Lambda,
}

/// All three candidates; `None` when a branch imposes no restriction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStar {
    pub value: f64,
    pub active: EpsilonStarBranch,
    pub feasibility: f64,
    pub alpha: Option<f64>,
    pub lambda: Option<f64>,
    pub diagnostics: Vec<String>,
}

/// Problem data shared by every `ε`-dependent constant: the Lyapunov pair,
/// norms, `ν₁, ν₂` and the mismatch parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityData {
    pub p: Matrix,
    pub q: Matrix,
    pub p_norm: f64,
    pub p_eig: (f64, f64),
    pub q_min: f64,
    pub k_norm: f64,
    pub bounds: NormBounds,
    pub nu1: f64,
    pub nu2: f64,
    pub mismatch: MismatchParams,
    pub lyapunov_residual: f64,
}

impl StabilityData {
    /// Solves `(Ā+B̄K̄)ᵀP + P(Ā+B̄K̄) = −Q`; `q = None` means `Q = I`.
    pub fn new(plant: &SwitchedPlant, avg: &AverageSystem, dwell_time: f64, q: Option<&Matrix>) -> Result<Self> {
        let n = plant.state_dim();
        if avg.a_bar.nrows() != n {
            return Err(Error::Dimension("average system and plant state dimensions differ".into()));
        }
        if !(dwell_time > 0.0 && dwell_time.is_finite()) {
            return Err(Error::InvalidInput(format!("dwell time must be positive, got {dwell_time}")));
        }
        let q = q.cloned().unwrap_or_else(|| Matrix::identity(n, n));
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!("Q must be {n}x{n}")));
        }
        let h = avg.closed_loop();
        let p = solve_lyapunov(&h, &q)?;
        let lyapunov_residual = (h.transpose() * &p + &p * &h + &q).amax();
        let delay = plant.delay();
        let bounds = norm_bounds(plant, avg);
        let k_norm = spectral_norm(&avg.k_bar);
        Ok(Self {
            p_norm: spectral_norm(&p),
            p_eig: symmetric_eigen_range(&p),
            q_min: symmetric_eigen_range(&q).0,
            k_norm,
            nu1: nu(k_norm, delay, bounds.m_h, bounds.m_b),
            nu2: nu(k_norm, delay, bounds.m_a, bounds.m_b),
            mismatch: MismatchParams {
                delay,
                dwell_time,
                m_a: bounds.m_a,
                m_b: bounds.m_b,
            },
            bounds,
            p,
            q,
            lyapunov_residual,
        })
    }

    fn delay(&self) -> f64 {
        self.mismatch.delay
    }

    /// `λ_min(Q) / (2|P|(1+|K̄|))`: the Lyapunov-feasibility limit.
    pub fn feasibility_limit(&self) -> f64 {
        self.q_min / (2.0 * self.p_norm * (1.0 + self.k_norm))
    }

    fn margin(&self, eps: f64) -> Result<f64> {
        let m = self.q_min - 2.0 * eps * self.p_norm * (1.0 + self.k_norm);
        if m > 0.0 {
            Ok(m)
        } else {
            Err(Error::LyapunovInfeasible {
                epsilon: eps,
                limit: self.feasibility_limit(),
            })
        }
    }

    pub fn lambda(&self, eps: f64) -> f64 {
        lambda_of(eps, &self.mismatch)
    }

    /// `b(ε) = 2(|P|M_B)² / (λ_min(Q) − 2ε|P|(1+|K̄|))`.
    pub fn b(&self, eps: f64) -> Result<f64> {
        let pb = self.p_norm * self.bounds.m_b;
        Ok(2.0 * pb * pb / self.margin(eps)?)
    }

    /// `α(ε) = ε|P|(1+|K̄|) + λ²(ε)·4(|P|M_B)² e^D |K̄|²(Dν₁+1) / (λ_min(Q) − 2ε|P|(1+|K̄|))`.
    pub fn alpha(&self, eps: f64) -> Result<f64> {
        let d = self.delay();
        let pb = self.p_norm * self.bounds.m_b;
        let l = self.lambda(eps);
        Ok(eps * self.p_norm * (1.0 + self.k_norm)
            + l * l * 4.0 * pb * pb * d.exp() * self.k_norm * self.k_norm * (d * self.nu1 + 1.0) / self.margin(eps)?)
    }

    /// `1/(|K̄|√(2e^D D ν₁))`, the argument of `λ⁻¹` in `ε*`.
    pub fn lambda_target(&self) -> f64 {
        let d = self.delay();
        1.0 / (self.k_norm * (2.0 * d.exp() * d * self.nu1).sqrt())
    }

    /// `α⁻¹(λ_min(Q)/2)` on `[0, feasibility_limit)`; `α` blows up (or
    /// reaches the target) at the limit, so the limit is the bracket.
    pub fn alpha_inverse(&self) -> Result<f64> {
        let target = 0.5 * self.q_min;
        let limit = self.feasibility_limit();
        if !(limit > 0.0 && limit.is_finite()) {
            return Err(Error::Domain("empty α bracket".into()));
        }
        Ok(bisect_increasing(
            |e| self.alpha(e).unwrap_or(f64::INFINITY),
            target,
            limit,
        ))
    }

    pub fn epsilon_star(&self) -> EpsilonStar {
        let mut diagnostics = Vec::new();
        let feasibility = self.feasibility_limit();
        let alpha = match self.alpha_inverse() {
            Ok(v) => Some(v),
            Err(e) => {
                diagnostics.push(format!("α branch dropped: {e}"));
                None
            }
        };
        let target = self.lambda_target();
        let lambda = if target.is_finite() {
            match lambda_inverse(target, &self.mismatch) {
                Ok(v) => Some(v),
                Err(e) => {
                    diagnostics.push(format!("λ branch dropped: {e}"));
                    None
                }
            }
        } else {
            diagnostics.push("|K̄| = 0: λ branch imposes no restriction".into());
            None
        };
        let mut value = feasibility;
        let mut active = EpsilonStarBranch::Feasibility;
        for (cand, branch) in [(alpha, EpsilonStarBranch::Alpha), (lambda, EpsilonStarBranch::Lambda)] {
            if let Some(c) = cand {
                if c < value {
                    value = c;
                    active = branch;
                }
            }
        }
        EpsilonStar {
            value,
            active,
            feasibility,
            alpha,
            lambda,
            diagnostics,
        }
    }

    /// `(μ, μ₁, μ₂)` at `ε`; needs `ε` inside the feasibility limit.
    pub fn mu_constants(&self, eps: f64) -> Result<(f64, f64, f64)> {
        let d = self.delay();
        let b = self.b(eps)?;
        let l = self.lambda(eps);
        let arm1 = 1.0 - 2.0 * d.exp() * self.k_norm * self.k_norm * l * l * d * self.nu1;
        let arm2 = (0.5 * self.q_min - self.alpha(eps)?) / self.p_eig.1;
        let mu1 = self.p_eig.0.min(b);
        let mu2 = self.p_eig.1.max(b * d.exp());
        Ok((arm1.min(arm2), mu1, mu2))
    }
}

/// Every constant of the stability certificate for one plant/average pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub epsilon: f64,
    pub epsilon_star: f64,
    pub epsilon_star_branch: EpsilonStarBranch,
    pub epsilon_star_feasibility: f64,
    pub epsilon_star_alpha: Option<f64>,
    pub epsilon_star_lambda: Option<f64>,
    pub stable: bool,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub lyapunov_residual: f64,
    pub k_bar: Vec<f64>,
    pub k_norm: f64,
    pub p_norm: f64,
    pub m_a: f64,
    pub m_b: f64,
    pub m_h: f64,
    pub delay: f64,
    pub dwell_time: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub lambda_of_epsilon: f64,
    /// `None` when `ε` is outside the Lyapunov-feasibility limit.
    pub b_of_epsilon: Option<f64>,
    pub alpha_of_epsilon: Option<f64>,
    pub nu1: f64,
    pub nu2: f64,
    pub mu: Option<f64>,
    pub mu1: Option<f64>,
    pub mu2: Option<f64>,
    pub kappa: Option<f64>,
    /// `√(2μ₁ν₁ν₂/μ₂)` as printed.
    pub rho: Option<f64>,
    /// `√(2(μ₂/μ₁)ν₁ν₂)`, the dimensionally expected variant.
    pub rho_alt: Option<f64>,
    pub xi: Option<f64>,
    pub norm_label: String,
    pub notes: Vec<String>,
}

/// Builds the certificate; `q = None` means `Q = I`.
pub fn certify(plant: &SwitchedPlant, avg: &AverageSystem, dwell_time: f64, q: Option<&Matrix>) -> Result<Certificate> {
    let data = StabilityData::new(plant, avg, dwell_time, q)?;
    let eps = epsilon(plant, avg);
    let star = data.epsilon_star();
    let mut notes = vec![
        "|PB| read as |P|·M_B".to_string(),
        "rho computed as printed; rho_alt uses mu2/mu1".to_string(),
    ];
    notes.extend(star.diagnostics.iter().cloned());
    let b = data.b(eps).ok();
    if b.is_none() {
        notes.push(format!(
            "epsilon {eps} outside Lyapunov feasibility limit {}; b, alpha, mu undefined",
            data.feasibility_limit()
        ));
    }
    let mu = data.mu_constants(eps).ok();
    Ok(Certificate {
        epsilon: eps,
        epsilon_star: star.value,
        epsilon_star_branch: star.active,
        epsilon_star_feasibility: star.feasibility,
        epsilon_star_alpha: star.alpha,
        epsilon_star_lambda: star.lambda,
        stable: eps < star.value,
        p: matrix_to_rows(&data.p),
        q: matrix_to_rows(&data.q),
        lyapunov_residual: data.lyapunov_residual,
        k_bar: avg.k_bar.iter().copied().collect(),
        k_norm: data.k_norm,
        p_norm: data.p_norm,
        m_a: data.bounds.m_a,
        m_b: data.bounds.m_b,
        m_h: data.bounds.m_h,
        delay: plant.delay(),
        dwell_time,
        delta1: delta1(eps, &data.mismatch),
        delta2: delta2(eps, &data.mismatch),
        lambda_of_epsilon: data.lambda(eps),
        b_of_epsilon: b,
        alpha_of_epsilon: data.alpha(eps).ok(),
        nu1: data.nu1,
        nu2: data.nu2,
        mu: mu.map(|m| m.0),
        mu1: mu.map(|m| m.1),
        mu2: mu.map(|m| m.2),
        kappa: mu.map(|(_, m1, m2)| m2 / m1),
        rho: mu.map(|(_, m1, m2)| (2.0 * m1 * data.nu1 * data.nu2 / m2).sqrt()),
        rho_alt: mu.map(|(_, m1, m2)| (2.0 * (m2 / m1) * data.nu1 * data.nu2).sqrt()),
        xi: mu.map(|m| 0.5 * m.0),
        norm_label: NORM_LABEL.to_string(),
        notes,
    })
}

/// Trapezoid of `f(value)·weight(i)` over the `N` cells of the window ending
/// at trajectory sample `k`; `weight(i)` is evaluated at window node `i`.
fn window_trapezoid(view: HistoryView<'_>, k: usize, n: usize, h: f64, f: impl Fn(f64) -> f64, w: &[f64]) -> f64 {
    (0..n)
        .map(|i| {
            let (l, r) = view.cell_values(k + i);
            0.5 * h * (f(l) * w[i] + f(r) * w[i + 1])
        })
        .sum()
}

fn check_w(traj: &Trajectory, w: &WRecord) -> Result<()> {
    if w.record.len() < traj.history.len() {
        return Err(Error::Dimension(format!(
            "W record has {} nodes, trajectory history {}",
            w.record.len(),
            traj.history.len()
        )));
    }
    Ok(())
}

/// `V(t) = XᵀPX + b∫_{t−D}^{t} e^{θ+D−t} W(θ)² dθ` at every sample.
pub fn lyapunov_along(traj: &Trajectory, cert: &Certificate, w: &WRecord) -> Result<Vec<f64>> {
    let b = cert.b_of_epsilon.ok_or(Error::LyapunovInfeasible {
        epsilon: cert.epsilon,
        limit: cert.epsilon_star_feasibility,
    })?;
    check_w(traj, w)?;
    let p = crate::matops::matrix_from_rows(&cert.p)?;
    let n = traj.samples_per_delay();
    let h = traj.step();
    let weights: Vec<f64> = (0..=n).map(|i| (i as f64 * h).exp()).collect();
    let view = w.record.view();
    Ok((0..traj.len())
        .map(|k| {
            let x = &traj.states[k];
            x.dot(&(&p * x)) + b * window_trapezoid(view, k, n, h, |v| v * v, &weights)
        })
        .collect())
}

/// Both sides of `|W(t)| ≤ |K̄|λ(ε)(|X(t)| + ∫_{t−D}^{t}|U|)` per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MismatchReport {
    pub w_abs: Vec<f64>,
    pub bound: Vec<f64>,
    /// Largest `|W|/bound` over samples with a nonzero bound.
    pub max_ratio: f64,
    pub violations: usize,
}

pub fn mismatch_bound_along(traj: &Trajectory, cert: &Certificate, w: &WRecord) -> Result<MismatchReport> {
    check_w(traj, w)?;
    let n = traj.samples_per_delay();
    let h = traj.step();
    let ones = vec![1.0; n + 1];
    let gain = cert.k_norm * cert.lambda_of_epsilon;
    let view = traj.history.view();
    let mut rep = MismatchReport {
        w_abs: Vec::with_capacity(traj.len()),
        bound: Vec::with_capacity(traj.len()),
        max_ratio: 0.0,
        violations: 0,
    };
    for k in 0..traj.len() {
        let scale = traj.states[k].norm() + window_trapezoid(view, k, n, h, f64::abs, &ones);
        let bound = gain * scale;
        let wk = w.node(n + k).abs();
        // W is itself a difference of computed predictions; allow round-off
        if wk > bound + 1e-11 * scale.max(1.0) * cert.k_norm.max(1.0) {
            rep.violations += 1;
        }
        if bound > 0.0 {
            rep.max_ratio = rep.max_ratio.max(wk / bound);
        }
        rep.w_abs.push(wk);
        rep.bound.push(bound);
    }
    Ok(rep)
}

/// `|X(t)| + √(∫_{t−D}^{t} U²)` at every sample.
pub fn state_input_norm(traj: &Trajectory) -> Vec<f64> {
    let n = traj.samples_per_delay();
    let h = traj.step();
    let ones = vec![1.0; n + 1];
    let view = traj.history.view();
    (0..traj.len())
        .map(|k| traj.states[k].norm() + window_trapezoid(view, k, n, h, |v| v * v, &ones).max(0.0).sqrt())
        .collect()
}

/// Fitted `(ρ̂, ξ̂)` with `s(t) ≈ ρ̂ s(0) e^{−ξ̂t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rho_hat: f64,
    pub xi_hat: f64,
}

/// Least-squares line through `log s(t)` over the second half of the
/// horizon, `s = |X| + √(∫U²)`.
pub fn decay_fit(traj: &Trajectory, delay: f64) -> Result<DecayFit> {
    let horizon = *traj.times.last().ok_or_else(|| Error::Domain("empty trajectory".into()))?;
    if horizon < 5.0 * delay * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "decay fit needs a horizon of at least 5D = {}, got {horizon}",
            5.0 * delay
        )));
    }
    let s = state_input_norm(traj);
    let (mut n, mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, v) in traj.times.iter().zip(&s) {
        if *t < 0.5 * horizon {
            continue;
        }
        let y = v.max(1e-300).ln();
        n += 1.0;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let den = n * stt - st * st;
    if n < 2.0 || den <= 0.0 {
        return Err(Error::Domain("too few samples for a decay fit".into()));
    }
    let slope = (n * sty - st * sy) / den;
    let intercept = (sy - slope * st) / n;
    let s0 = s[0];
    let rho_hat = if s0 > 0.0 { intercept.exp() / s0 } else { intercept.exp() };
    Ok(DecayFit { rho_hat, xi_hat: -slope })
}
