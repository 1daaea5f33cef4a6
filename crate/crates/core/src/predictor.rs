//! Predictor constructions: the average predictor `P̄(t)` used by the
//! controller, the exact predictor `P(t) = X(t+D)` (an oracle that reads
//! the future switching signal), and the backstepping pair `W` / `Π`.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::matops::{expm, is_controllable, is_hurwitz, max_real_eigenvalue, place_poles_single_input, Matrix, Vector};
use crate::plant::{Controller, FohStep, Grid, HistoryView, InputHistory, IntegralKernel, SwitchedPlant, Trajectory};
use crate::switching::SwitchingSignal;

/// Tolerance for deciding that the signal covers `[t, t+D]`.
const COVERAGE_TOL: f64 = 1e-9;

/// `(Ā, B̄, K̄)` with `(Ā, B̄)` controllable and `Ā + B̄K̄` Hurwitz.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageSystem {
    pub a_bar: Matrix,
    pub b_bar: Matrix,
    pub k_bar: Matrix,
}

impl AverageSystem {
    pub fn new(a_bar: Matrix, b_bar: Matrix, k_bar: Matrix) -> Result<Self> {
        let n = a_bar.nrows();
        if !a_bar.is_square() || b_bar.shape() != (n, 1) || k_bar.shape() != (1, n) {
            return Err(Error::Dimension(format!(
                "average system needs Ā {n}x{n}, B̄ {n}x1, K̄ 1x{n}; got {:?}, {:?}, {:?}",
                a_bar.shape(),
                b_bar.shape(),
                k_bar.shape()
            )));
        }
        if !is_controllable(&a_bar, &b_bar)? {
            return Err(Error::NotControllable);
        }
        let h = &a_bar + &b_bar * &k_bar;
        if !is_hurwitz(&h) {
            return Err(Error::NotHurwitz {
                max_real_part: max_real_eigenvalue(&h)?,
            });
        }
        Ok(Self { a_bar, b_bar, k_bar })
    }

    /// Places the eigenvalues of `Ā + B̄K̄` at `poles`.
    pub fn from_poles(a_bar: Matrix, b_bar: Matrix, poles: &[Complex<f64>]) -> Result<Self> {
        let k_bar = place_poles_single_input(&a_bar, &b_bar, poles)?;
        Self::new(a_bar, b_bar, k_bar)
    }

    /// `Ā + B̄K̄`.
    pub fn closed_loop(&self) -> Matrix {
        &self.a_bar + &self.b_bar * &self.k_bar
    }

    pub fn gain_dot(&self, p: &Vector) -> f64 {
        (&self.k_bar * p)[0]
    }
}

/// Element-wise mean of the mode matrices.
pub fn mean_system(plant: &SwitchedPlant) -> (Matrix, Matrix) {
    let k = plant.num_modes() as f64;
    let n = plant.state_dim();
    let (sa, sb) = plant.modes().iter().fold(
        (Matrix::zeros(n, n), Matrix::zeros(n, 1)),
        |(sa, sb), m| (sa + &m.a, sb + &m.b),
    );
    (sa / k, sb / k)
}

/// State prediction `D` ahead from `(t, X(t), U on [t−D, t])`.
pub trait Predict {
    fn predict(&self, hist: HistoryView<'_>, t: f64, x: &Vector) -> Result<Vector>;
}

/// `e^{MD}x + ∫_{t−D}^{t} e^{M(t−θ)} B U(θ) dθ` for a fixed pair `(M, B)`.
///
/// With `(Ā, B̄)` this is the average predictor; with a single mode
/// `(A_i, B_i)` it is the predictor of a controller that assumes the plant
/// never leaves mode `i`.
#[derive(Debug, Clone)]
pub struct LtiPredictor {
    delay: f64,
    phi_delay: Matrix,
    kernel: IntegralKernel,
}

impl LtiPredictor {
    pub fn new(m: &Matrix, b: &Matrix, grid: Grid) -> Result<Self> {
        Ok(Self {
            delay: grid.delay,
            phi_delay: expm(m, grid.delay)?,
            kernel: IntegralKernel::new(m, b, grid.step())?,
        })
    }
}

impl Predict for LtiPredictor {
    fn predict(&self, hist: HistoryView<'_>, t: f64, x: &Vector) -> Result<Vector> {
        let integral = hist.integral(&self.kernel, t, t - self.delay, t)?;
        Ok(&self.phi_delay * x + integral)
    }
}

/// Exact predictor over the true switched plant. Reads `σ` on `[t, t+D]`.
#[derive(Debug, Clone)]
pub struct ExactPredictor<'a> {
    plant: &'a SwitchedPlant,
    signal: &'a SwitchingSignal,
    kernels: Vec<IntegralKernel>,
    phi_delay: Vec<Matrix>,
}

impl<'a> ExactPredictor<'a> {
    pub fn new(plant: &'a SwitchedPlant, signal: &'a SwitchingSignal, grid: Grid) -> Result<Self> {
        signal.validate_for(plant.num_modes())?;
        let kernels = plant
            .modes()
            .iter()
            .map(|m| IntegralKernel::new(&m.a, &m.b, grid.step()))
            .collect::<Result<_>>()?;
        let phi_delay = plant
            .modes()
            .iter()
            .map(|m| expm(&m.a, plant.delay()))
            .collect::<Result<_>>()?;
        Ok(Self { plant, signal, kernels, phi_delay })
    }

    /// `(t−D+s_{n−1}, t−D+s_n, m_n)` for the constant-mode pieces of
    /// `σ` on `[t, t+D]`, shifted back by `D`.
    pub fn intervals(&self, t: f64) -> Result<Vec<(f64, f64, usize)>> {
        let d = self.plant.delay();
        let end = t + d;
        if t < 0.0 || end > self.signal.horizon() + COVERAGE_TOL {
            return Err(Error::OracleUnavailable(format!(
                "switching signal known on [0, {}], prediction at t = {t} needs [t, {end}]",
                self.signal.horizon()
            )));
        }
        let end = end.min(self.signal.horizon());
        Ok(self
            .signal
            .segments(t, end)?
            .into_iter()
            .map(|(a, b, m)| (a - d, b - d, m))
            .collect())
    }
}

impl Predict for ExactPredictor<'_> {
    fn predict(&self, hist: HistoryView<'_>, t: f64, x: &Vector) -> Result<Vector> {
        let pieces = self.intervals(t)?;
        let mut z = x.clone();
        for (i, &(a, b, mode)) in pieces.iter().enumerate() {
            // last piece ends at t exactly; avoid the round-off in (t+D)−D
            let b = if i + 1 == pieces.len() { t } else { b };
            let phi = if pieces.len() == 1 {
                self.phi_delay[mode].clone()
            } else {
                expm(&self.plant.modes()[mode].a, b - a)?
            };
            z = phi * z + hist.integral(&self.kernels[mode], b, a, b)?;
        }
        Ok(z)
    }
}

/// `U(t) = K·pred(t)`, solved for the input at `t` itself: the quadrature
/// over `[t−D, t]` touches the node at `t`, and the prediction is affine in
/// that value.
#[derive(Debug, Clone)]
pub struct PredictorFeedback<P> {
    pub gain: Matrix,
    pub predictor: P,
}

impl<P: Predict> PredictorFeedback<P> {
    pub fn new(gain: Matrix, predictor: P) -> Self {
        Self { gain, predictor }
    }

    fn gain_dot(&self, v: &Vector) -> f64 {
        (&self.gain * v)[0]
    }
}

impl<P: Predict> Controller for PredictorFeedback<P> {
    fn control(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<f64> {
        let p0 = self.predictor.predict(hist.view_with_pending(0.0), t, x)?;
        let p1 = self.predictor.predict(hist.view_with_pending(1.0), t, x)?;
        let kp0 = self.gain_dot(&p0);
        let denom = 1.0 - self.gain_dot(&(p1 - &p0));
        if denom.abs() < 1e-12 {
            return Err(Error::NonFinite(format!("singular implicit control equation at t = {t}")));
        }
        Ok(kp0 / denom)
    }
}

pub type AverageController = PredictorFeedback<LtiPredictor>;
pub type SingleModeController = PredictorFeedback<LtiPredictor>;
pub type ExactOracleController<'a> = PredictorFeedback<ExactPredictor<'a>>;

/// The shipped law `U = K̄P̄`.
pub fn average_controller(avg: &AverageSystem, grid: Grid) -> Result<AverageController> {
    Ok(PredictorFeedback::new(
        avg.k_bar.clone(),
        LtiPredictor::new(&avg.a_bar, &avg.b_bar, grid)?,
    ))
}

/// Comparison law that assumes the plant stays in mode `i` forever.
pub fn single_mode_feedback(plant: &SwitchedPlant, i: usize, k_bar: &Matrix, grid: Grid) -> Result<SingleModeController> {
    let m = plant.mode(i)?;
    Ok(PredictorFeedback::new(k_bar.clone(), LtiPredictor::new(&m.a, &m.b, grid)?))
}

/// Oracle law `U = K̄P` using the exact predictor.
pub fn exact_oracle_controller<'a>(
    plant: &'a SwitchedPlant,
    signal: &'a SwitchingSignal,
    k_bar: &Matrix,
    grid: Grid,
) -> Result<ExactOracleController<'a>> {
    Ok(PredictorFeedback::new(k_bar.clone(), ExactPredictor::new(plant, signal, grid)?))
}

fn evaluate_law<P: Predict>(law: &PredictorFeedback<P>, x: &Vector, hist: &InputHistory, t: f64) -> Result<f64> {
    let h = hist.step();
    let newest = hist.newest_time();
    if newest >= t - 1e-9 * h {
        Ok(law.gain_dot(&law.predictor.predict(hist.view(), t, x)?))
    } else if (newest - (t - h)).abs() <= 1e-9 * h {
        law.control(t, x, hist)
    } else {
        Err(Error::Domain(format!(
            "input history ends at {newest}, cannot evaluate the law at t = {t}"
        )))
    }
}

/// `P̄(t) = e^{ĀD}X(t) + ∫_{t−D}^{t} e^{Ā(t−θ)} B̄ U(θ) dθ`.
pub fn average_predictor(avg: &AverageSystem, x: &Vector, hist: &InputHistory, t: f64) -> Result<Vector> {
    LtiPredictor::new(&avg.a_bar, &avg.b_bar, hist.grid())?.predict(hist.view(), t, x)
}

/// `U(t) = K̄P̄(t)`. If `hist` already records `U(t)` this is a direct
/// evaluation; if it ends one step before `t`, the implicit equation for
/// `U(t)` is solved.
pub fn control_law(avg: &AverageSystem, x: &Vector, hist: &InputHistory, t: f64) -> Result<f64> {
    evaluate_law(&average_controller(avg, hist.grid())?, x, hist, t)
}

/// `U(t) = K̄(e^{A_iD}X(t) + ∫ e^{A_i(t−θ)} B_i U(θ) dθ)`.
pub fn single_mode_controller(
    plant: &SwitchedPlant,
    i: usize,
    k_bar: &Matrix,
    x: &Vector,
    hist: &InputHistory,
    t: f64,
) -> Result<f64> {
    evaluate_law(&single_mode_feedback(plant, i, k_bar, hist.grid())?, x, hist, t)
}

/// Everything the analysis-side constructions need: plant, average system,
/// and oracle access to the future switching signal.
#[derive(Debug, Clone)]
pub struct PredictionContext<'a> {
    pub plant: &'a SwitchedPlant,
    pub avg: &'a AverageSystem,
    pub signal: &'a SwitchingSignal,
    grid: Grid,
    average: LtiPredictor,
    exact: ExactPredictor<'a>,
}

impl<'a> PredictionContext<'a> {
    pub fn new(plant: &'a SwitchedPlant, avg: &'a AverageSystem, signal: &'a SwitchingSignal, grid: Grid) -> Result<Self> {
        if avg.a_bar.nrows() != plant.state_dim() {
            return Err(Error::Dimension("average system and plant state dimensions differ".into()));
        }
        Ok(Self {
            plant,
            avg,
            signal,
            grid,
            average: LtiPredictor::new(&avg.a_bar, &avg.b_bar, grid)?,
            exact: ExactPredictor::new(plant, signal, grid)?,
        })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn average(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<Vector> {
        self.average.predict(hist.view(), t, x)
    }

    pub fn exact(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<Vector> {
        self.exact.predict(hist.view(), t, x)
    }

    pub fn exact_predictor(&self) -> &ExactPredictor<'a> {
        &self.exact
    }

    /// Backstepping variable at `t`: `W(t) = U(t) − K̄P(t)`.
    pub fn backstepping_w(&self, t: f64, x: &Vector, hist: &InputHistory, u_t: f64) -> Result<f64> {
        Ok(u_t - self.avg.gain_dot(&self.exact(t, x, hist)?))
    }

    /// The same quantity through the target-system form `K̄(P̄(t) − P(t))`,
    /// valid when `U(t)` came from the average law.
    pub fn w_from_mismatch(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<f64> {
        let pbar = self.average(t, x, hist)?;
        let p = self.exact(t, x, hist)?;
        Ok(self.avg.gain_dot(&(pbar - p)))
    }

    /// `W(θ)` on every history node of a closed-loop trajectory, from
    /// `θ = −D` to `θ = horizon`.
    ///
    /// For `θ ≥ 0` this is `U(θ) − K̄P(θ)` with the exact predictor; on
    /// `[−D, 0)` it uses `P(θ) = X(θ+D)` read from the recorded states.
    pub fn w_along(&self, traj: &Trajectory) -> Result<WRecord> {
        let n = traj.samples_per_delay();
        let steps = traj.len() - 1;
        if steps < n {
            return Err(Error::Domain("trajectory shorter than one delay interval".into()));
        }
        let hist = &traj.history;
        let mut values = Vec::with_capacity(n + steps + 1);
        for j in 0..n {
            values.push(hist.values()[j] - self.avg.gain_dot(&traj.states[j]));
        }
        let init_left_limit = hist.view().left_limit_at_zero() - self.avg.gain_dot(&traj.states[n]);
        for k in 0..=steps {
            let t = traj.times[k];
            let p = self.exact.predict(hist.view(), t, &traj.states[k])?;
            values.push(traj.inputs[k] - self.avg.gain_dot(&p));
        }
        Ok(WRecord {
            record: InputHistory::from_parts(hist.grid(), values, init_left_limit)?,
        })
    }

    /// `Π` on the window nodes `t−D, t−D+h, …, t` from `X(t)` and the
    /// sampled `W`, with `U = W + K̄Π` taken piecewise linear on the grid
    /// (the input model of the simulation).
    ///
    /// `Π' = A_mΠ + B_m U` is stepped exactly per cell; the cell's right-end
    /// input depends on the right-end `Π`, and `Π` is affine in it, so each
    /// cell solves one scalar equation. Equivalent to
    /// `Π(θ) = e^{H_m(θ−θ₀)}Π(θ₀) + ∫ e^{H_m(θ−s)} B_m W(s) ds`,
    /// `H_m = A_m + B_mK̄`, without interpolating `W` (which is not
    /// piecewise linear). `t` must be a grid instant.
    pub fn inverse_pi(&self, t: f64, x_t: &Vector, w: &WRecord) -> Result<Vec<Vector>> {
        let h = self.grid.step();
        let n = self.grid.samples_per_delay;
        let d = self.grid.delay;
        let k = &self.avg.k_bar;
        let full: Vec<FohStep> = self
            .plant
            .modes()
            .iter()
            .map(|m| FohStep::new(&m.a, &m.b, h))
            .collect::<Result<_>>()?;
        let pieces = self.exact.intervals(t)?;
        let first = self.window_start(t, w)?;
        let view = w.record.view();
        let mut out = Vec::with_capacity(n + 1);
        let mut pi = x_t.clone();
        out.push(pi.clone());
        let mut piece = 0;
        for j in 0..n {
            let theta0 = t - d + j as f64 * h;
            let theta1 = theta0 + h;
            let (wl, wr) = view.cell_values(first + j);
            let ul = wl + (k * &pi)[0];
            // Π = c + g·U_right along the cell
            let mut c = pi.clone();
            let mut g = Vector::zeros(pi.len());
            let mut from = theta0;
            while piece < pieces.len() {
                let (_, end, mode) = pieces[piece];
                let to = end.min(theta1);
                if to > from {
                    let (aa, ab) = ((from - theta0) / h, (to - theta0) / h);
                    let step = if to - from >= h * (1.0 - 1e-12) {
                        full[mode].clone()
                    } else {
                        let m = &self.plant.modes()[mode];
                        FohStep::new(&m.a, &m.b, to - from)?
                    };
                    c = step.apply(&c, (1.0 - aa) * ul, (1.0 - ab) * ul);
                    g = step.apply(&g, aa, ab);
                    from = to;
                }
                if end <= theta1 + 1e-9 * h && piece + 1 < pieces.len() {
                    piece += 1;
                } else {
                    break;
                }
            }
            let denom = 1.0 - (k * &g)[0];
            if denom.abs() < 1e-12 {
                return Err(Error::NonFinite(format!("singular inverse-transform step at θ = {theta1}")));
            }
            let ur = (wr + (k * &c)[0]) / denom;
            pi = c + g * ur;
            out.push(pi.clone());
        }
        Ok(out)
    }

    /// History node index of `t − D` in `w`.
    fn window_start(&self, t: f64, w: &WRecord) -> Result<usize> {
        let h = self.grid.step();
        let k = t / h;
        let kr = k.round();
        if t < 0.0 || (k - kr).abs() > 1e-9 || kr as usize + self.grid.samples_per_delay >= w.record.len() {
            return Err(Error::Domain(format!("t = {t} is not a grid instant covered by the W record")));
        }
        Ok(kr as usize)
    }

    /// Input on the window nodes rebuilt as `U = W + K̄Π`.
    pub fn reconstruct_input(&self, t: f64, x_t: &Vector, w: &WRecord) -> Result<Vec<f64>> {
        let first = self.window_start(t, w)?;
        let pi = self.inverse_pi(t, x_t, w)?;
        Ok(pi
            .iter()
            .enumerate()
            .map(|(i, p)| w.node(first + i) + self.avg.gain_dot(p))
            .collect())
    }

    /// `Π(θ)` for any `θ ∈ [t−D, t]`: nodes from [`Self::inverse_pi`], then
    /// an exact partial step with the rebuilt input.
    pub fn inverse_pi_at(&self, t: f64, theta: f64, x_t: &Vector, w: &WRecord) -> Result<Vector> {
        let h = self.grid.step();
        let d = self.grid.delay;
        if theta < t - d - 1e-9 * h || theta > t + 1e-9 * h {
            return Err(Error::Domain(format!("θ = {theta} outside [{}, {t}]", t - d)));
        }
        let first = self.window_start(t, w)?;
        let pi = self.inverse_pi(t, x_t, w)?;
        let pos = ((theta - (t - d)) / h).clamp(0.0, self.grid.samples_per_delay as f64);
        let j = pos.floor() as usize;
        if pos - j as f64 <= 1e-9 {
            return Ok(pi[j].clone());
        }
        let (wl, wr) = w.record.view().cell_values(first + j);
        let ul = wl + self.avg.gain_dot(&pi[j]);
        let ur = wr + self.avg.gain_dot(&pi[j + 1]);
        let theta0 = t - d + j as f64 * h;
        let mut z = pi[j].clone();
        let mut from = theta0;
        for (_, end, mode) in self.exact.intervals(t)? {
            let to = end.min(theta);
            if to > from {
                let m = &self.plant.modes()[mode];
                let lerp = |s: f64| ul + (s - theta0) / h * (ur - ul);
                z = FohStep::new(&m.a, &m.b, to - from)?.apply(&z, lerp(from), lerp(to));
                from = to;
            }
            if end >= theta {
                break;
            }
        }
        Ok(z)
    }

    /// Literal form of the inverse transform with `W` interpolated linearly
    /// between nodes: marches
    /// `Π(θ) = e^{H_m(θ−θ₀)}Π(θ₀) + ∫_{θ₀}^{θ} e^{H_m(θ−s)} B_m W(s) ds`.
    /// Second-order accurate in `h` against [`Self::inverse_pi`].
    pub fn inverse_pi_interpolated(&self, t: f64, x_t: &Vector, w: &WRecord) -> Result<Vec<Vector>> {
        let h = self.grid.step();
        let hs: Vec<IntegralKernel> = self
            .plant
            .modes()
            .iter()
            .map(|m| IntegralKernel::new(&(&m.a + &m.b * &self.avg.k_bar), &m.b, h))
            .collect::<Result<_>>()?;
        let pieces = self.exact.intervals(t)?;
        let n = self.grid.samples_per_delay;
        let d = self.grid.delay;
        let view = w.record.view();
        let mut out = Vec::with_capacity(n + 1);
        let mut pi = x_t.clone();
        out.push(pi.clone());
        let mut piece = 0;
        for j in 1..=n {
            let theta0 = t - d + (j - 1) as f64 * h;
            let theta1 = t - d + j as f64 * h;
            let mut from = theta0;
            while piece < pieces.len() {
                let (_, end, mode) = pieces[piece];
                let to = end.min(theta1);
                if to > from {
                    let phi = expm(&hs[mode].m, to - from)?;
                    pi = phi * pi + view.integral(&hs[mode], to, from, to)?;
                    from = to;
                }
                if end <= theta1 + 1e-9 * h && piece + 1 < pieces.len() {
                    piece += 1;
                } else {
                    break;
                }
            }
            out.push(pi.clone());
        }
        Ok(out)
    }
}

/// Sampled `W` on the history grid, with the same node layout (and jump at
/// zero) as the input record.
#[derive(Debug, Clone, PartialEq)]
pub struct WRecord {
    pub record: InputHistory,
}

impl WRecord {
    /// `W` at grid node `j` (θ = −D + j·h).
    pub fn node(&self, j: usize) -> f64 {
        self.record.values()[j]
    }

    pub fn value_at(&self, theta: f64) -> Result<f64> {
        self.record.value_at(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::matrix_from_rows;
    use crate::plant::{simulate, Mode};
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn b() -> Matrix {
        m(&[&[0.0], &[1.0]])
    }

    fn example1() -> SwitchedPlant {
        SwitchedPlant::new(
            vec![
                Mode::new(m(&[&[1.0, 1.0], &[1.0, 2.0]]), b()).unwrap(),
                Mode::new(m(&[&[1.01, 0.99], &[1.01, 2.01]]), b()).unwrap(),
            ],
            1.0,
        )
        .unwrap()
    }

    fn poles() -> [Complex<f64>; 2] {
        [Complex::new(-3.0, 0.0), Complex::new(-2.0, 0.0)]
    }

    fn avg1() -> AverageSystem {
        let (a, bb) = mean_system(&example1());
        AverageSystem::from_poles(a, bb, &poles()).unwrap()
    }

    #[test]
    fn mean_system_examples() {
        let (a, bb) = mean_system(&example1());
        let want = m(&[&[1.005, 0.995], &[1.005, 2.005]]);
        assert!((a - want).amax() < 1e-15);
        assert_eq!(bb, b());

        let single = SwitchedPlant::new(vec![example1().modes()[0].clone()], 1.0).unwrap();
        let (a, bb) = mean_system(&single);
        assert_eq!(a, single.modes()[0].a);
        assert_eq!(bb, b());

        let ex2 = SwitchedPlant::new(
            vec![
                example1().modes()[0].clone(),
                Mode::new(m(&[&[1.07, 1.15], &[1.06, 2.09]]), b()).unwrap(),
            ],
            1.0,
        )
        .unwrap();
        let (a, _) = mean_system(&ex2);
        assert!((a - m(&[&[1.035, 1.075], &[1.03, 2.045]])).amax() < 1e-15);
    }

    #[test]
    fn average_system_rejects_bad_gain() {
        let (a, bb) = mean_system(&example1());
        assert!(matches!(
            AverageSystem::new(a.clone(), bb.clone(), Matrix::zeros(1, 2)),
            Err(Error::NotHurwitz { .. })
        ));
        let diag = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 2.0]));
        assert_eq!(
            AverageSystem::new(diag, m(&[&[1.0], &[0.0]]), Matrix::zeros(1, 2)),
            Err(Error::NotControllable)
        );
    }

    #[test]
    fn average_predictor_examples() {
        let grid = Grid::new(1.0, 1000).unwrap();
        let avg = avg1();
        let x = Vector::from_vec(vec![1.0, -1.0]);
        let zero = InputHistory::zero(grid);
        let got = average_predictor(&avg, &x, &zero, 0.0).unwrap();
        let want = expm(&avg.a_bar, 1.0).unwrap() * &x;
        assert!((got - &want).amax() <= 1e-10 * want.amax());

        let integ = AverageSystem {
            a_bar: Matrix::zeros(2, 2),
            b_bar: b(),
            k_bar: m(&[&[-1.0, -2.0]]),
        };
        let ones = InputHistory::new(grid, |_| 1.0).unwrap();
        let got = average_predictor(&integ, &Vector::zeros(2), &ones, 0.0).unwrap();
        assert_relative_eq!(got[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(got[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn control_law_at_zero_is_closed_form() {
        let grid = Grid::new(1.0, 1000).unwrap();
        let avg = avg1();
        let x = Vector::from_vec(vec![1.0, -1.0]);
        let zero = InputHistory::zero(grid);
        let u = control_law(&avg, &x, &zero, 0.0).unwrap();
        let want = avg.gain_dot(&(expm(&avg.a_bar, 1.0).unwrap() * &x));
        assert_relative_eq!(u, want, max_relative = 1e-12);
        assert_eq!(control_law(&avg, &Vector::zeros(2), &zero, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn control_law_small_delay_is_static_feedback() {
        let grid = Grid::new(1e-6, 1).unwrap();
        let avg = avg1();
        let x = Vector::from_vec(vec![0.4, 0.7]);
        let u = control_law(&avg, &x, &InputHistory::zero(grid), 0.0).unwrap();
        assert_relative_eq!(u, avg.gain_dot(&x), max_relative = 1e-4);
    }

    #[test]
    fn implicit_solve_is_consistent_with_explicit_evaluation() {
        let plant = example1();
        let avg = avg1();
        let grid = Grid::new(1.0, 200).unwrap();
        let sig = SwitchingSignal::generate_random(2, 0.3, 4.0, 5, 0.5).unwrap();
        let ctrl = average_controller(&avg, grid).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let tr = simulate(&plant, &sig, &ctrl, &x0, &|_| 0.0, grid, 2.0).unwrap();
        for k in [0usize, 1, 150, 399] {
            let hist = tr.history_until(k);
            let u = control_law(&avg, &tr.states[k], &hist, tr.times[k]).unwrap();
            assert_relative_eq!(u, tr.inputs[k], max_relative = 1e-11);
        }
    }

    #[test]
    fn single_mode_controller_examples() {
        let grid = Grid::new(1.0, 100).unwrap();
        let avg = avg1();
        let same = SwitchedPlant::new(vec![Mode::new(avg.a_bar.clone(), avg.b_bar.clone()).unwrap(); 2], 1.0).unwrap();
        let x = Vector::from_vec(vec![0.3, -0.8]);
        let hist = InputHistory::new(grid, |th| (3.0 * th).sin()).unwrap();
        let a = single_mode_controller(&same, 1, &avg.k_bar, &x, &hist, 0.0).unwrap();
        let b = control_law(&avg, &x, &hist, 0.0).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-13);

        let plant = example1();
        let u = single_mode_controller(&plant, 0, &avg.k_bar, &x, &InputHistory::zero(grid), 0.0).unwrap();
        let want = avg.gain_dot(&(expm(&plant.modes()[0].a, 1.0).unwrap() * &x));
        assert_relative_eq!(u, want, max_relative = 1e-12);
        assert!(matches!(
            single_mode_controller(&plant, 2, &avg.k_bar, &x, &hist, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn exact_predictor_without_switch_is_single_mode_predictor() {
        let plant = example1();
        let grid = Grid::new(1.0, 100).unwrap();
        let sig = SwitchingSignal::constant(1, 0.3, 5.0).unwrap();
        let hist = InputHistory::new(grid, |th| 1.0 + th * th).unwrap();
        let x = Vector::from_vec(vec![0.2, 0.1]);
        let exact = ExactPredictor::new(&plant, &sig, grid).unwrap();
        let single = LtiPredictor::new(&plant.modes()[1].a, &plant.modes()[1].b, grid).unwrap();
        let p = exact.predict(hist.view(), 0.0, &x).unwrap();
        let q = single.predict(hist.view(), 0.0, &x).unwrap();
        assert!((p - q).amax() < 1e-12);
    }

    #[test]
    fn exact_predictor_needs_future_signal() {
        let plant = example1();
        let grid = Grid::new(1.0, 10).unwrap();
        let sig = SwitchingSignal::constant(0, 0.3, 1.5).unwrap();
        let exact = ExactPredictor::new(&plant, &sig, grid).unwrap();
        let hist = InputHistory::zero(grid);
        assert!(exact.predict(hist.view(), 0.0, &Vector::zeros(2)).is_ok());
        let mut hist = hist;
        for _ in 0..=6 {
            hist.push(0.0);
        }
        assert!(matches!(
            exact.predict(hist.view(), 0.6, &Vector::zeros(2)),
            Err(Error::OracleUnavailable(_))
        ));
    }

    #[test]
    fn exact_predictor_matches_forward_simulation() {
        let plant = example1();
        let avg = avg1();
        let grid = Grid::new(1.0, 1000).unwrap();
        let sig = SwitchingSignal::generate_random(2, 0.3, 6.0, 21, 0.4).unwrap();
        let ctrl = average_controller(&avg, grid).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let tr = simulate(&plant, &sig, &ctrl, &x0, &|_| 0.0, grid, 5.0).unwrap();
        let exact = ExactPredictor::new(&plant, &sig, grid).unwrap();
        for k in [0usize, 333, 1000, 2717, 4000] {
            let p = exact.predict(tr.history.view(), tr.times[k], &tr.states[k]).unwrap();
            let future = &tr.states[k + 1000];
            assert!((p - future).amax() <= 1e-6 * future.amax().max(1.0), "k = {k}");
        }
    }

    #[test]
    fn w_vanishes_when_modes_equal_average() {
        let avg = avg1();
        let plant = SwitchedPlant::new(vec![Mode::new(avg.a_bar.clone(), avg.b_bar.clone()).unwrap(); 2], 1.0).unwrap();
        let grid = Grid::new(1.0, 100).unwrap();
        let sig = SwitchingSignal::periodic(2, 0.35, 0.3, 5.0).unwrap();
        let ctx = PredictionContext::new(&plant, &avg, &sig, grid).unwrap();
        let hist = InputHistory::new(grid, |th| th.cos()).unwrap();
        let x = Vector::from_vec(vec![0.5, 0.5]);
        assert!(ctx.w_from_mismatch(0.0, &x, &hist).unwrap().abs() < 1e-10);
    }

    fn short_run(n: usize) -> (SwitchedPlant, AverageSystem, SwitchingSignal, Grid, Trajectory) {
        let plant = example1();
        let avg = avg1();
        let grid = Grid::new(1.0, n).unwrap();
        let sig = SwitchingSignal::generate_random(2, 0.3, 5.0, 11, 0.3).unwrap();
        let ctrl = average_controller(&avg, grid).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let tr = simulate(&plant, &sig, &ctrl, &x0, &|th| 0.2 * th, grid, 4.0).unwrap();
        (plant, avg, sig, grid, tr)
    }

    #[test]
    fn inverse_transform_roundtrip_and_boundary() {
        let (plant, avg, sig, grid, tr) = short_run(100);
        let ctx = PredictionContext::new(&plant, &avg, &sig, grid).unwrap();
        let w = ctx.w_along(&tr).unwrap();
        for k in [0usize, 37, 100, 250, 400] {
            let t = tr.times[k];
            let pi = ctx.inverse_pi(t, &tr.states[k], &w).unwrap();
            assert_eq!(pi[0], tr.states[k]);
            let u = ctx.reconstruct_input(t, &tr.states[k], &w).unwrap();
            for (i, ui) in u.iter().enumerate() {
                assert!((ui - tr.history.values()[k + i]).abs() < 1e-9, "k = {k}, i = {i}");
            }
            // Π(θ) = P(θ): the node at θ = t equals the exact prediction at t
            let p = ctx.exact(t, &tr.states[k], &tr.history).unwrap();
            assert!((&pi[100] - p).amax() < 1e-9);
        }
        assert!(matches!(
            ctx.inverse_pi_at(1.0, -0.5, &tr.states[100], &w),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn inverse_pi_between_nodes_follows_the_state() {
        let (plant, avg, sig, grid, tr) = short_run(100);
        let ctx = PredictionContext::new(&plant, &avg, &sig, grid).unwrap();
        let w = ctx.w_along(&tr).unwrap();
        // for θ ≥ 0, Π(θ) = P(θ) = X(θ + D), and the window [1, 2] ends at t = 2
        let t = 2.0;
        let k = 200;
        let theta = 1.2345;
        let p = ctx.inverse_pi_at(t, theta, &tr.states[k], &w).unwrap();
        let kk = ((theta + 1.0) / grid.step()).floor() as usize;
        let step_x = &tr.states[kk];
        assert!((p - step_x).amax() < 0.05);
        let node = ctx.inverse_pi_at(t, 1.5, &tr.states[k], &w).unwrap();
        assert!((node - &tr.states[250]).amax() < 1e-9);
    }

    #[test]
    fn literal_inverse_converges_at_second_order() {
        let err = |n: usize| {
            let (plant, avg, sig, grid, tr) = short_run(n);
            let ctx = PredictionContext::new(&plant, &avg, &sig, grid).unwrap();
            let w = ctx.w_along(&tr).unwrap();
            let k = 2 * n;
            let a = ctx.inverse_pi(tr.times[k], &tr.states[k], &w).unwrap();
            let b = ctx.inverse_pi_interpolated(tr.times[k], &tr.states[k], &w).unwrap();
            a.iter().zip(&b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
        };
        let ratio = err(100) / err(200);
        assert!((3.0..5.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn w_record_on_negative_times_uses_the_state() {
        let (plant, avg, sig, grid, tr) = short_run(100);
        let ctx = PredictionContext::new(&plant, &avg, &sig, grid).unwrap();
        let w = ctx.w_along(&tr).unwrap();
        for j in [0usize, 50, 99] {
            let theta = -1.0 + j as f64 * 0.01;
            let want = 0.2 * theta - avg.gain_dot(&tr.states[j]);
            assert_relative_eq!(w.node(j), want, epsilon = 1e-12);
        }
        // W jumps at zero together with U
        assert_relative_eq!(w.record.view().left_limit_at_zero(), -avg.gain_dot(&tr.states[100]), epsilon = 1e-12);
    }
}
