//! Delayed switched linear plant `Ẋ = A_σ X + B_σ U(t−D)`: exact
//! sub-step discretization, the input history record, and the closed-loop
//! simulator.
//!
//! The input is represented on a uniform grid of step `h = D/N` and read
//! between nodes by linear interpolation. The plant integrates that
//! piecewise-linear input exactly (first-order hold) through one augmented
//! matrix exponential per sub-step, and the history quadrature below is
//! exact for the same input model, so predictions and simulation agree to
//! rounding.

use std::io::Write;

use crate::error::{Error, Result};
use crate::matops::{check_finite, expm, Matrix, Vector};
use crate::switching::SwitchingSignal;

/// Snap tolerance, in grid units, for deciding that an instant is a node.
const NODE_SNAP: f64 = 1e-9;

/// One `(A_i, B_i)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub a: Matrix,
    pub b: Matrix,
}

impl Mode {
    pub fn new(a: Matrix, b: Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!("A is {}x{}, must be square", a.nrows(), a.ncols())));
        }
        if b.nrows() != a.nrows() || b.ncols() != 1 {
            return Err(Error::Dimension(format!(
                "B must be {}x1, got {}x{}",
                a.nrows(),
                b.nrows(),
                b.ncols()
            )));
        }
        check_finite(&a, "A")?;
        check_finite(&b, "B")?;
        Ok(Self { a, b })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedPlant {
    modes: Vec<Mode>,
    delay: f64,
}

impl SwitchedPlant {
    pub fn new(modes: Vec<Mode>, delay: f64) -> Result<Self> {
        let first = modes
            .first()
            .ok_or_else(|| Error::InvalidInput("plant needs at least one mode".into()))?;
        let n = first.a.nrows();
        if let Some(i) = modes.iter().position(|m| m.a.nrows() != n) {
            return Err(Error::Dimension(format!(
                "mode {i} has state dimension {}, expected {n}",
                modes[i].a.nrows()
            )));
        }
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::InvalidInput(format!("delay must be finite and > 0, got {delay}")));
        }
        Ok(Self { modes, delay })
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> Result<&Mode> {
        self.modes
            .get(i)
            .ok_or_else(|| Error::Domain(format!("mode index {i} out of range (plant has {})", self.modes.len())))
    }

    pub fn num_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn state_dim(&self) -> usize {
        self.modes[0].a.nrows()
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn with_delay(&self, delay: f64) -> Result<Self> {
        Self::new(self.modes.clone(), delay)
    }
}

/// Exact discretization over a duration `tau` of `ẋ = Mx + Bu` with `u`
/// linear from `u0` to `u1`: `x⁺ = Φx + Γ₀u₀ + Γ₁u₁`.
#[derive(Debug, Clone)]
pub struct FohStep {
    pub tau: f64,
    pub phi: Matrix,
    pub gamma0: Vector,
    pub gamma1: Vector,
}

impl FohStep {
    pub fn new(m: &Matrix, b: &Matrix, tau: f64) -> Result<Self> {
        let n = m.nrows();
        if !m.is_square() || b.nrows() != n || b.ncols() != 1 {
            return Err(Error::Dimension(format!(
                "FOH step needs square M and n×1 B, got {}x{} and {}x{}",
                m.nrows(),
                m.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        if tau == 0.0 {
            return Ok(Self {
                tau,
                phi: Matrix::identity(n, n),
                gamma0: Vector::zeros(n),
                gamma1: Vector::zeros(n),
            });
        }
        // z = [x; u; u̇], ż = [[M, B, 0], [0, 0, 1], [0, 0, 0]] z
        let mut aug = Matrix::zeros(n + 2, n + 2);
        aug.view_mut((0, 0), (n, n)).copy_from(m);
        aug.view_mut((0, n), (n, 1)).copy_from(b);
        aug[(n, n + 1)] = 1.0;
        let e = expm(&aug, tau)?;
        let phi = e.view((0, 0), (n, n)).into_owned();
        let f1: Vector = e.view((0, n), (n, 1)).column(0).into_owned();
        let f2: Vector = e.view((0, n + 1), (n, 1)).column(0).into_owned();
        let gamma1 = &f2 / tau;
        let gamma0 = f1 - &gamma1;
        Ok(Self { tau, phi, gamma0, gamma1 })
    }

    pub fn apply(&self, x: &Vector, u0: f64, u1: f64) -> Vector {
        let mut out = &self.phi * x;
        out.axpy(u0, &self.gamma0, 1.0);
        out.axpy(u1, &self.gamma1, 1.0);
        out
    }

    /// `out ← Φ·x + Γ₀u₀ + Γ₁u₁` without allocating.
    pub fn apply_into(&self, x: &Vector, u0: f64, u1: f64, out: &mut Vector) {
        out.gemv(1.0, &self.phi, x, 0.0);
        out.axpy(u0, &self.gamma0, 1.0);
        out.axpy(u1, &self.gamma1, 1.0);
    }
}

/// Exact zero-order-hold step: `e^{Ah}x + (∫₀^h e^{As}ds) B u`.
pub fn step_exact(a: &Matrix, b: &Matrix, x: &Vector, u: f64, h: f64) -> Result<Vector> {
    let n = a.nrows();
    if !a.is_square() || b.nrows() != n || b.ncols() != 1 || x.len() != n {
        return Err(Error::Dimension("step_exact operand sizes disagree".into()));
    }
    if !(h > 0.0) {
        return Err(Error::Domain(format!("step must be > 0, got {h}")));
    }
    let mut aug = Matrix::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(a);
    aug.view_mut((0, n), (n, 1)).copy_from(b);
    let e = expm(&aug, h)?;
    let mut xu = Vector::zeros(n + 1);
    xu.rows_mut(0, n).copy_from(x);
    xu[n] = u;
    Ok((e * xu).rows(0, n).into_owned())
}

/// Uniform time grid aligned with the delay: `h = D/N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub delay: f64,
    pub samples_per_delay: usize,
}

impl Grid {
    pub const DEFAULT_SAMPLES_PER_DELAY: usize = 1000;

    pub fn new(delay: f64, samples_per_delay: usize) -> Result<Self> {
        if samples_per_delay == 0 {
            return Err(Error::InvalidInput("samples per delay must be ≥ 1".into()));
        }
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(Error::InvalidInput(format!("delay must be > 0, got {delay}")));
        }
        Ok(Self { delay, samples_per_delay })
    }

    /// Largest grid step `≤ step` that divides the delay.
    pub fn from_step(delay: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::InvalidInput(format!("step must be > 0, got {step}")));
        }
        let ratio = delay / step;
        let n = if (ratio - ratio.round()).abs() <= 1e-12 * ratio.max(1.0) {
            ratio.round()
        } else {
            ratio.ceil()
        };
        Self::new(delay, n.max(1.0) as usize)
    }

    pub fn step(&self) -> f64 {
        self.delay / self.samples_per_delay as f64
    }
}

/// Full record of the applied input on `[−D, t]` sampled on the grid.
///
/// Node `j` sits at `θ_j = −D + j·h`. Nodes `0..N` come from the initial
/// history; node `N` (θ = 0) onward are controller outputs. The initial
/// history's left limit at 0 is kept separately, so a jump between the
/// initial data and the first control value is represented exactly rather
/// than smeared over a cell. The whole record is retained because post-hoc
/// analysis revisits arbitrary past windows.
#[derive(Debug, Clone, PartialEq)]
pub struct InputHistory {
    grid: Grid,
    values: Vec<f64>,
    init_left_limit: f64,
}

impl InputHistory {
    /// Samples `u_init` at the nodes of `[−D, 0)`; `u_init(0)` is taken as
    /// the left limit at zero.
    pub fn new(grid: Grid, u_init: impl Fn(f64) -> f64) -> Result<Self> {
        let n = grid.samples_per_delay;
        let h = grid.step();
        let values: Vec<f64> = (0..n).map(|j| u_init(-grid.delay + j as f64 * h)).collect();
        let init_left_limit = u_init(0.0);
        if values.iter().any(|v| !v.is_finite()) || !init_left_limit.is_finite() {
            return Err(Error::NonFinite("initial input history".into()));
        }
        Ok(Self { grid, values, init_left_limit })
    }

    /// Record with given node values (starting at θ = −D) and left limit at
    /// zero. Needs at least the `N` initial nodes.
    pub fn from_parts(grid: Grid, values: Vec<f64>, init_left_limit: f64) -> Result<Self> {
        if values.len() < grid.samples_per_delay {
            return Err(Error::Dimension(format!(
                "history needs at least {} nodes, got {}",
                grid.samples_per_delay,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) || !init_left_limit.is_finite() {
            return Err(Error::NonFinite("input history".into()));
        }
        Ok(Self { grid, values, init_left_limit })
    }

    pub fn zero(grid: Grid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.samples_per_delay],
            init_left_limit: 0.0,
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn step(&self) -> f64 {
        self.grid.step()
    }

    pub fn delay(&self) -> f64 {
        self.grid.delay
    }

    /// Time of node `j`.
    pub fn node_time(&self, j: usize) -> f64 {
        let n = self.grid.samples_per_delay;
        if j >= n {
            (j - n) as f64 * self.step()
        } else {
            -self.grid.delay + j as f64 * self.step()
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Latest recorded instant.
    pub fn newest_time(&self) -> f64 {
        self.node_time(self.values.len() - 1)
    }

    pub fn push(&mut self, u: f64) {
        self.values.push(u);
    }

    /// Recorded node values, starting at θ = −D.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn view(&self) -> HistoryView<'_> {
        HistoryView { hist: self, pending: None }
    }

    /// View in which the next, not yet recorded node holds `u`.
    pub fn view_with_pending(&self, u: f64) -> HistoryView<'_> {
        HistoryView { hist: self, pending: Some(u) }
    }

    pub fn value_at(&self, theta: f64) -> Result<f64> {
        self.view().value_at(theta)
    }

    pub fn integral(&self, kernel: &IntegralKernel, c: f64, a: f64, b: f64) -> Result<Vector> {
        self.view().integral(kernel, c, a, b)
    }
}

/// Read access to an [`InputHistory`], optionally extended by one pending
/// node.
#[derive(Debug, Clone, Copy)]
pub struct HistoryView<'a> {
    hist: &'a InputHistory,
    pending: Option<f64>,
}

impl HistoryView<'_> {
    pub fn history(&self) -> &InputHistory {
        self.hist
    }

    fn node_count(&self) -> usize {
        self.hist.values.len() + usize::from(self.pending.is_some())
    }

    fn node(&self, j: usize) -> f64 {
        match self.hist.values.get(j) {
            Some(v) => *v,
            None => self.pending.expect("node index checked against coverage"),
        }
    }

    /// Values at the left and right ends of cell `j` (between nodes `j` and
    /// `j+1`).
    pub fn cell_values(&self, j: usize) -> (f64, f64) {
        let right = if j + 1 == self.hist.grid.samples_per_delay {
            self.hist.init_left_limit
        } else {
            self.node(j + 1)
        };
        (self.node(j), right)
    }

    /// Left limit at θ = 0 of the initial history.
    pub fn left_limit_at_zero(&self) -> f64 {
        self.hist.init_left_limit
    }

    /// Last covered instant.
    pub fn end_time(&self) -> f64 {
        self.hist.node_time(self.node_count() - 1)
    }

    /// Position in grid units, snapped to a node when within tolerance.
    fn grid_pos(&self, theta: f64) -> f64 {
        let x = (theta + self.hist.grid.delay) / self.hist.step();
        let r = x.round();
        if (x - r).abs() <= NODE_SNAP {
            r
        } else {
            x
        }
    }

    fn check_range(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        let xa = self.grid_pos(a);
        let xb = self.grid_pos(b);
        // the initial data alone covers [−D, 0] through its left limit at 0
        let last = (self.node_count() - 1).max(self.hist.grid.samples_per_delay) as f64;
        if xa < 0.0 || xb > last || xa > xb {
            return Err(Error::Domain(format!(
                "interval [{a}, {b}] outside input history coverage [{}, {}]",
                -self.hist.grid.delay,
                self.end_time()
            )));
        }
        Ok((xa, xb))
    }

    /// Right-continuous value of the interpolated input.
    pub fn value_at(&self, theta: f64) -> Result<f64> {
        let (x, _) = self.check_range(theta, theta)?;
        let j = x.floor();
        if j == x {
            if j as usize >= self.node_count() {
                return Err(Error::Domain(format!("input at {theta} not yet recorded")));
            }
            return Ok(self.node(j as usize));
        }
        let (l, r) = self.cell_values(j as usize);
        Ok(l + (x - j) * (r - l))
    }

    /// `∫_a^b e^{M(c−θ)} B U(θ) dθ` for the piecewise-linear input, with
    /// `c ≥ b`. Exact for the interpolated input up to matrix-exponential
    /// accuracy.
    pub fn integral(&self, kernel: &IntegralKernel, c: f64, a: f64, b: f64) -> Result<Vector> {
        if c < b - NODE_SNAP * self.hist.step() {
            return Err(Error::Domain(format!("evaluation instant {c} precedes interval end {b}")));
        }
        let (xa, xb) = self.check_range(a, b)?;
        let n = kernel.b.nrows();
        let mut acc = Vector::zeros(n);
        let mut tmp = Vector::zeros(n);
        let h = self.hist.step();
        let mut x = xa;
        while x < xb {
            let j = x.floor();
            let cell_end = j + 1.0;
            let y = cell_end.min(xb);
            let (l, r) = self.cell_values(j as usize);
            let u0 = l + (x - j) * (r - l);
            let u1 = l + (y - j) * (r - l);
            if x == j && y == cell_end {
                kernel.cell.apply_into(&acc, u0, u1, &mut tmp);
            } else {
                kernel.piece((y - x) * h)?.apply_into(&acc, u0, u1, &mut tmp);
            }
            std::mem::swap(&mut acc, &mut tmp);
            x = y;
        }
        let lag = (c - b).max(0.0);
        if lag > 0.0 {
            acc = expm(&kernel.m, lag)? * acc;
        }
        Ok(acc)
    }
}

/// `(M, B)` pair with its cached full-cell discretization.
#[derive(Debug, Clone)]
pub struct IntegralKernel {
    pub m: Matrix,
    pub b: Matrix,
    cell: FohStep,
}

impl IntegralKernel {
    pub fn new(m: &Matrix, b: &Matrix, h: f64) -> Result<Self> {
        Ok(Self {
            m: m.clone(),
            b: b.clone(),
            cell: FohStep::new(m, b, h)?,
        })
    }

    pub fn cell(&self) -> &FohStep {
        &self.cell
    }

    fn piece(&self, tau: f64) -> Result<FohStep> {
        FohStep::new(&self.m, &self.b, tau)
    }
}

/// `∫_a^b e^{M(c−θ)} Bcol U(θ) dθ` over the recorded history.
pub fn history_integral(hist: &InputHistory, m: &Matrix, bcol: &Matrix, c: f64, a: f64, b: f64) -> Result<Vector> {
    hist.integral(&IntegralKernel::new(m, bcol, hist.step())?, c, a, b)
}

/// Optional per-sample diagnostic columns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Diagnostics {
    pub lyapunov: Option<Vec<f64>>,
    pub w_abs: Option<Vec<f64>>,
    pub w_bound: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<f64>,
    pub mode_trace: Vec<usize>,
    /// Applied input on `[−D, horizon]`, including the initial history.
    pub history: InputHistory,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.history.step()
    }

    pub fn delay(&self) -> f64 {
        self.history.delay()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Grid samples per delay interval.
    pub fn samples_per_delay(&self) -> usize {
        self.history.grid().samples_per_delay
    }

    pub fn final_state(&self) -> &Vector {
        self.states.last().expect("trajectory has at least one sample")
    }

    /// History view truncated at grid index `k` (time `t_k`).
    pub fn history_until(&self, k: usize) -> InputHistory {
        let mut h = self.history.clone();
        h.values.truncate(self.samples_per_delay() + k + 1);
        h
    }

    /// Writes `t,x1,…,xn,u,mode[,V,W_abs,W_bound]` rows with 17 significant
    /// digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.states.first().map_or(0, |x| x.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("u".into());
        header.push("mode".into());
        let d = &self.diagnostics;
        let extra: Vec<(&str, &Vec<f64>)> = [("V", &d.lyapunov), ("W_abs", &d.w_abs), ("W_bound", &d.w_bound)]
            .into_iter()
            .filter_map(|(name, col)| col.as_ref().map(|c| (name, c)))
            .collect();
        header.extend(extra.iter().map(|(name, _)| name.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.times.len() {
            let mut row = vec![fmt17(self.times[k])];
            row.extend(self.states[k].iter().map(|v| fmt17(*v)));
            row.push(fmt17(self.inputs[k]));
            row.push(self.mode_trace[k].to_string());
            row.extend(extra.iter().map(|(_, col)| fmt17(col[k])));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(())
    }
}

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv output: {e}"))
}

/// State-feedback law evaluated at each grid instant.
pub trait Controller {
    /// Input at grid time `t`. `hist` covers `[−D, t)` on the grid; the node
    /// at `t` is not yet recorded (see [`InputHistory::view_with_pending`]).
    fn control(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<f64>;
}

/// `U ≡ 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn control(&self, _t: f64, _x: &Vector, _hist: &InputHistory) -> Result<f64> {
        Ok(0.0)
    }
}

impl<F> Controller for F
where
    F: Fn(f64, &Vector, &InputHistory) -> Result<f64>,
{
    fn control(&self, t: f64, x: &Vector, hist: &InputHistory) -> Result<f64> {
        self(t, x, hist)
    }
}

/// Closed-loop simulation on `[0, horizon]`.
///
/// Each grid step is split at the switch instants it contains; within every
/// sub-step the mode is constant and the delayed input is linear, and the
/// state is advanced exactly. The state is continuous across switches.
pub fn simulate(
    plant: &SwitchedPlant,
    sig: &SwitchingSignal,
    controller: &dyn Controller,
    x0: &Vector,
    u_init: &dyn Fn(f64) -> f64,
    grid: Grid,
    horizon: f64,
) -> Result<Trajectory> {
    let n = plant.state_dim();
    if x0.len() != n {
        return Err(Error::Dimension(format!("x0 has {} entries, plant state is {n}", x0.len())));
    }
    if (grid.delay - plant.delay()).abs() > 1e-12 * plant.delay() {
        return Err(Error::InvalidInput("grid delay differs from plant delay".into()));
    }
    sig.validate_for(plant.num_modes())?;
    let h = grid.step();
    let steps = (horizon / h).round();
    if !(horizon >= 0.0) || (steps * h - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::Domain(format!("horizon {horizon} is not a multiple of the grid step {h}")));
    }
    let steps = steps as usize;
    if horizon + plant.delay() > sig.horizon() + 1e-9 {
        return Err(Error::Domain(format!(
            "horizon {horizon} + delay {} exceeds the signal definition {}",
            plant.delay(),
            sig.horizon()
        )));
    }
    let full: Vec<FohStep> = plant
        .modes()
        .iter()
        .map(|m| FohStep::new(&m.a, &m.b, h))
        .collect::<Result<_>>()?;

    let mut hist = InputHistory::new(grid, u_init)?;
    let mut x = x0.clone();
    let mut next = Vector::zeros(n);
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        mode_trace: Vec::with_capacity(steps + 1),
        history: hist.clone(),
        diagnostics: Diagnostics::default(),
    };
    let n_delay = grid.samples_per_delay;
    for k in 0..=steps {
        let t = k as f64 * h;
        let u = controller.control(t, &x, &hist)?;
        if !u.is_finite() {
            return Err(Error::NonFinite(format!("controller returned {u} at t = {t}")));
        }
        hist.push(u);
        traj.times.push(t);
        traj.states.push(x.clone());
        traj.inputs.push(u);
        traj.mode_trace.push(sig.mode_at(t)?);
        if k == steps {
            break;
        }
        let t_next = (k + 1) as f64 * h;
        // delayed input over [t, t+h] is history cell k
        let view = hist.view();
        let (ul, ur) = view.cell_values(k);
        let segs = sig.segments(t, t_next)?;
        if segs.len() == 1 {
            full[segs[0].2].apply_into(&x, ul, ur, &mut next);
            std::mem::swap(&mut x, &mut next);
        } else {
            for (s0, s1, mode) in segs {
                let f0 = (s0 - t) / h;
                let f1 = (s1 - t) / h;
                let m = &plant.modes()[mode];
                let step = FohStep::new(&m.a, &m.b, s1 - s0)?;
                x = step.apply(&x, ul + f0 * (ur - ul), ul + f1 * (ur - ul));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("state diverged at t = {t_next}")));
        }
        debug_assert_eq!(hist.len(), n_delay + k + 1);
    }
    traj.history = hist;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::matrix_from_rows;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn a1() -> Matrix {
        m(&[&[1.0, 1.0], &[1.0, 2.0]])
    }

    fn b() -> Matrix {
        m(&[&[0.0], &[1.0]])
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn zoh_step_examples() {
        let x = step_exact(&Matrix::zeros(2, 2), &b(), &v(&[1.0, -1.0]), 2.0, 0.1).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(x[1], -0.8, epsilon = 1e-14);

        let x = step_exact(&(-Matrix::identity(2, 2)), &Matrix::zeros(2, 1), &v(&[1.0, 0.0]), 0.0, 1.0).unwrap();
        assert_relative_eq!(x[0], (-1f64).exp(), max_relative = 1e-13);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn zoh_semigroup() {
        let mut x = v(&[1.0, -1.0]);
        for _ in 0..100 {
            x = step_exact(&a1(), &b(), &x, 0.0, 0.01).unwrap();
        }
        let want = expm(&a1(), 1.0).unwrap() * v(&[1.0, -1.0]);
        assert!((x - &want).amax() <= 1e-9 * want.amax());
    }

    #[test]
    fn zoh_dimension_error() {
        assert!(matches!(
            step_exact(&a1(), &b(), &v(&[1.0]), 0.0, 0.1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn foh_with_equal_endpoints_is_zoh() {
        let f = FohStep::new(&a1(), &b(), 0.05).unwrap();
        let x = v(&[0.3, -0.2]);
        let foh = f.apply(&x, 1.7, 1.7);
        let zoh = step_exact(&a1(), &b(), &x, 1.7, 0.05).unwrap();
        assert!((foh - zoh).amax() < 1e-13);
    }

    #[test]
    fn foh_ramp_on_integrator() {
        // ẋ₂ = u, u ramps 0 → 1 over τ = 2 ⇒ Δx₂ = 1
        let f = FohStep::new(&Matrix::zeros(2, 2), &b(), 2.0).unwrap();
        let x = f.apply(&v(&[0.0, 0.0]), 0.0, 1.0);
        assert_relative_eq!(x[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn grid_snapping() {
        assert_eq!(Grid::from_step(1.0, 1e-3).unwrap().samples_per_delay, 1000);
        let g = Grid::from_step(1.0, 0.3).unwrap();
        assert_eq!(g.samples_per_delay, 4);
        assert!(g.step() <= 0.3);
    }

    #[test]
    fn history_values_and_jump() {
        let grid = Grid::new(1.0, 4).unwrap();
        let mut hist = InputHistory::new(grid, |th| th).unwrap();
        assert_eq!(hist.value_at(-1.0).unwrap(), -1.0);
        assert_relative_eq!(hist.value_at(-0.125).unwrap(), -0.125, epsilon = 1e-15);
        // cell [-0.25, 0] ends at the initial function's value at 0, not U(0)
        hist.push(5.0);
        assert_relative_eq!(hist.value_at(-0.1).unwrap(), -0.1, epsilon = 1e-15);
        assert_eq!(hist.value_at(0.0).unwrap(), 5.0);
        assert!(hist.value_at(0.1).is_err());
        hist.push(7.0);
        assert_relative_eq!(hist.value_at(0.125).unwrap(), 6.0, epsilon = 1e-14);
    }

    #[test]
    fn history_integral_examples() {
        let grid = Grid::new(1.0, 1000).unwrap();
        let zero = InputHistory::zero(grid);
        let z = history_integral(&zero, &a1(), &b(), 0.0, -1.0, 0.0).unwrap();
        assert_eq!(z, Vector::zeros(2));

        let ones = InputHistory::new(grid, |_| 1.0).unwrap();
        let i = history_integral(&ones, &Matrix::zeros(2, 2), &b(), 0.0, -1.0, 0.0).unwrap();
        assert_relative_eq!(i[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(i[1], 1.0, epsilon = 1e-12);

        // closed form (∫₀¹ e^{Ās} ds) B̄ through the ZOH step from rest
        let abar = m(&[&[1.005, 0.995], &[1.005, 2.005]]);
        let i = history_integral(&ones, &abar, &b(), 0.0, -1.0, 0.0).unwrap();
        let want = step_exact(&abar, &b(), &Vector::zeros(2), 1.0, 1.0).unwrap();
        assert!((i - &want).amax() <= 1e-6);
    }

    #[test]
    fn history_integral_off_grid_and_lag() {
        let grid = Grid::new(1.0, 10).unwrap();
        let hist = InputHistory::new(grid, |th| 2.0 * th + 3.0).unwrap();
        // M = 0, B = [1]: ∫_a^b (2θ+3) dθ exactly
        let one = Matrix::identity(1, 1);
        let zero = Matrix::zeros(1, 1);
        let (a, bb) = (-0.87, -0.33);
        let got = history_integral(&hist, &zero, &one, -0.2, a, bb).unwrap()[0];
        let want = (bb * bb + 3.0 * bb) - (a * a + 3.0 * a);
        assert_relative_eq!(got, want, epsilon = 1e-13);
        // M = −1 adds the factor e^{−(c−θ)}
        let mone = -Matrix::identity(1, 1);
        let got = history_integral(&hist, &mone, &one, -0.2, a, bb).unwrap()[0];
        let f = |th: f64| (th + 0.2).exp() * (2.0 * th + 1.0);
        assert_relative_eq!(got, f(bb) - f(a), epsilon = 1e-12);
        assert!(matches!(
            history_integral(&hist, &zero, &one, 0.5, -1.2, 0.0),
            Err(Error::Domain(_))
        ));
    }

    fn constant_signal(horizon: f64) -> SwitchingSignal {
        SwitchingSignal::constant(0, 0.3, horizon).unwrap()
    }

    #[test]
    fn zero_control_on_integrator_holds_state() {
        let plant = SwitchedPlant::new(vec![Mode::new(Matrix::zeros(2, 2), b()).unwrap()], 1.0).unwrap();
        let grid = Grid::new(1.0, 100).unwrap();
        let tr = simulate(&plant, &constant_signal(4.0), &ZeroController, &v(&[1.0, -1.0]), &|_| 0.0, grid, 3.0).unwrap();
        assert!(tr.states.iter().all(|x| *x == v(&[1.0, -1.0])));
        assert_eq!(tr.len(), 301);
    }

    #[test]
    fn zero_control_matches_homogeneous_solution() {
        let plant = SwitchedPlant::new(vec![Mode::new(a1(), b()).unwrap()], 1.0).unwrap();
        let grid = Grid::new(1.0, 1000).unwrap();
        let x0 = v(&[1.0, -1.0]);
        let tr = simulate(&plant, &constant_signal(3.0), &ZeroController, &x0, &|_| 0.0, grid, 1.0).unwrap();
        let want = expm(&a1(), 1.0).unwrap() * &x0;
        assert!((tr.final_state() - &want).amax() <= 1e-8 * want.amax());
    }

    #[test]
    fn delayed_input_arrives_exactly_d_later() {
        // integrator plant; impulse-like input at node t = 0.5 only
        let plant = SwitchedPlant::new(vec![Mode::new(Matrix::zeros(1, 1), Matrix::identity(1, 1)).unwrap()], 1.0).unwrap();
        let grid = Grid::new(1.0, 10).unwrap();
        let ctrl = |t: f64, _: &Vector, _: &InputHistory| Ok(if (t - 0.5).abs() < 1e-9 { 1.0 } else { 0.0 });
        let tr = simulate(&plant, &constant_signal(4.0), &ctrl, &v(&[0.0]), &|_| 0.0, grid, 2.5).unwrap();
        let at = |t: f64| tr.states[(t / 0.1f64).round() as usize][0];
        assert_eq!(at(1.4), 0.0);
        // hat function of height 1 and width 0.2 centered at 1.5
        assert_relative_eq!(at(1.5), 0.05, epsilon = 1e-14);
        assert_relative_eq!(at(1.6), 0.1, epsilon = 1e-14);
        assert_relative_eq!(at(2.5), 0.1, epsilon = 1e-14);
    }

    #[test]
    fn switch_inside_step_is_split() {
        let a2 = -Matrix::identity(2, 2);
        let plant = SwitchedPlant::new(
            vec![Mode::new(a1(), b()).unwrap(), Mode::new(a2.clone(), b()).unwrap()],
            1.0,
        )
        .unwrap();
        let sig = SwitchingSignal::new(0, &[0.3333], &[1], 0.3, 3.0, false).unwrap();
        let grid = Grid::new(1.0, 10).unwrap();
        let x0 = v(&[1.0, -1.0]);
        let tr = simulate(&plant, &sig, &ZeroController, &x0, &|_| 0.0, grid, 1.0).unwrap();
        let want = expm(&a2, 1.0 - 0.3333).unwrap() * expm(&a1(), 0.3333).unwrap() * &x0;
        assert!((tr.final_state() - &want).amax() <= 1e-12);
        assert_eq!(tr.mode_trace[3], 0);
        assert_eq!(tr.mode_trace[4], 1);
    }

    #[test]
    fn simulate_rejects_bad_setup() {
        let plant = SwitchedPlant::new(vec![Mode::new(a1(), b()).unwrap()], 1.0).unwrap();
        let grid = Grid::new(1.0, 10).unwrap();
        let x0 = v(&[1.0, -1.0]);
        assert!(matches!(
            simulate(&plant, &constant_signal(3.0), &ZeroController, &x0, &|_| 0.0, grid, 2.5),
            Err(Error::Domain(_))
        ));
        let nan = |_: f64, _: &Vector, _: &InputHistory| Ok(f64::NAN);
        assert!(matches!(
            simulate(&plant, &constant_signal(3.0), &nan, &x0, &|_| 0.0, grid, 1.0),
            Err(Error::NonFinite(_))
        ));
        assert!(simulate(&plant, &constant_signal(3.0), &ZeroController, &v(&[1.0]), &|_| 0.0, grid, 1.0).is_err());
    }

    #[test]
    fn csv_layout() {
        let plant = SwitchedPlant::new(vec![Mode::new(a1(), b()).unwrap()], 1.0).unwrap();
        let grid = Grid::new(1.0, 2).unwrap();
        let mut tr = simulate(&plant, &constant_signal(3.0), &ZeroController, &v(&[1.0, -1.0]), &|_| 0.0, grid, 1.0).unwrap();
        tr.diagnostics.w_abs = Some(vec![0.0; 3]);
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,x1,x2,u,mode,W_abs");
        let first = lines.next().unwrap();
        assert!(first.starts_with("0.0000000000000000e0,1.0000000000000000e0,-1.0000000000000000e0"));
        assert_eq!(text.lines().count(), 4);
    }
}
