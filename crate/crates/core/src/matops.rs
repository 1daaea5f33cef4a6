//! Dense small-matrix numerics: matrix exponential, spectral norm,
//! Lyapunov solve, single-input pole placement and Hurwitz checks.
//!
//! All matrix norms in this crate are the induced 2-norm (largest singular
//! value). Certificate outputs carry the label [`NORM_LABEL`].

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Label attached to every certificate quantity computed from matrix norms.
pub const NORM_LABEL: &str = "spectral";

/// Eigenvalues closer than this to the imaginary axis do not count as stable.
pub const HURWITZ_MARGIN: f64 = 1e-9;

/// Relative singular-value tolerance for the controllability rank test.
pub const CONTROLLABILITY_RTOL: f64 = 1e-9;

/// Builds a matrix from row-major nested rows, rejecting ragged or
/// non-finite input.
pub fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(Error::Dimension("matrix must have at least one row".into()));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(Error::Dimension("matrix must have at least one column".into()));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
        return Err(Error::Dimension(format!(
            "row {i} has {} entries, expected {ncols}",
            r.len()
        )));
    }
    let m = Matrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    check_finite(&m, "matrix entry")?;
    Ok(m)
}

/// Row-major nested representation, the inverse of [`matrix_from_rows`].
pub fn matrix_to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

pub fn check_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn require_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// `e^{M t}` by scaling and squaring with a Padé approximant.
pub fn expm(m: &Matrix, t: f64) -> Result<Matrix> {
    require_square(m, "expm argument")?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Domain(format!("expm duration must be finite and ≥ 0, got {t}")));
    }
    if t == 0.0 {
        return Ok(Matrix::identity(m.nrows(), m.ncols()));
    }
    let e = (m * t).exp();
    check_finite(&e, "matrix exponential")?;
    Ok(e)
}

/// Largest singular value.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>> {
    require_square(m, "eigenvalue argument")?;
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

pub fn max_real_eigenvalue(m: &Matrix) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

/// True iff every eigenvalue has real part below `-HURWITZ_MARGIN`.
/// Non-square input is never Hurwitz.
pub fn is_hurwitz(m: &Matrix) -> bool {
    match max_real_eigenvalue(m) {
        Ok(re) => re < -HURWITZ_MARGIN,
        Err(_) => false,
    }
}

/// (λ_min, λ_max) of a symmetric matrix.
pub fn symmetric_eigen_range(m: &Matrix) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

fn require_spd(q: &Matrix, what: &str) -> Result<()> {
    require_square(q, what)?;
    let scale = q.amax().max(f64::MIN_POSITIVE);
    if (q - q.transpose()).amax() > 1e-12 * scale {
        return Err(Error::InvalidInput(format!("{what} is not symmetric")));
    }
    if symmetric_eigen_range(q).0 <= 0.0 {
        return Err(Error::InvalidInput(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Solves `HᵀP + PH = −Q` for symmetric positive-definite `P`.
///
/// Uses the Kronecker form `(I⊗Hᵀ + Hᵀ⊗I) vec(P) = −vec(Q)`; sizes here are
/// a handful of states, so the n²×n² dense solve is cheap.
pub fn solve_lyapunov(h: &Matrix, q: &Matrix) -> Result<Matrix> {
    require_square(h, "Lyapunov matrix H")?;
    require_spd(q, "Lyapunov weight Q")?;
    if q.nrows() != h.nrows() {
        return Err(Error::Dimension(format!(
            "H is {n}x{n} but Q is {m}x{m}",
            n = h.nrows(),
            m = q.nrows()
        )));
    }
    let max_re = max_real_eigenvalue(h)?;
    if max_re >= -HURWITZ_MARGIN {
        return Err(Error::NotHurwitz { max_real_part: max_re });
    }
    let n = h.nrows();
    let eye = Matrix::identity(n, n);
    let ht = h.transpose();
    let op = eye.kronecker(&ht) + ht.kronecker(&eye);
    let rhs = Vector::from_iterator(n * n, q.iter().map(|v| -v));
    let sol = op
        .lu()
        .solve(&rhs)
        .ok_or(Error::NotHurwitz { max_real_part: max_re })?;
    let p = Matrix::from_column_slice(n, n, sol.as_slice());
    let p = (&p + p.transpose()) * 0.5;
    check_finite(&p, "Lyapunov solution")?;
    Ok(p)
}

/// `[B, AB, …, A^{n−1}B]`.
pub fn controllability_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    require_square(a, "A")?;
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension(format!(
            "B has {} rows, A is {}x{}",
            b.nrows(),
            a.nrows(),
            a.ncols()
        )));
    }
    let n = a.nrows();
    let m = b.ncols();
    let mut c = Matrix::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        c.columns_mut(k * m, m).copy_from(&block);
        block = a * &block;
    }
    Ok(c)
}

pub fn is_controllable(a: &Matrix, b: &Matrix) -> Result<bool> {
    let c = controllability_matrix(a, b)?;
    let sv = c.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return Ok(false);
    }
    let rank = sv.iter().filter(|s| **s > CONTROLLABILITY_RTOL * smax).count();
    Ok(rank == a.nrows())
}

/// Monic real polynomial (highest degree first) with the given roots.
/// Roots must be closed under conjugation.
pub fn poly_from_roots(roots: &[Complex<f64>]) -> Result<Vec<f64>> {
    let mut coeffs = vec![Complex::new(1.0, 0.0)];
    for r in roots {
        let mut next = vec![Complex::new(0.0, 0.0); coeffs.len() + 1];
        for (i, c) in coeffs.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c * r;
        }
        coeffs = next;
    }
    let scale = coeffs.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeffs.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::InvalidInput(
            "poles are not closed under complex conjugation".into(),
        ));
    }
    Ok(coeffs.iter().map(|c| c.re).collect())
}

/// Characteristic polynomial `det(sI − M)`, monic, highest degree first
/// (Faddeev–LeVerrier).
pub fn characteristic_polynomial(m: &Matrix) -> Result<Vec<f64>> {
    require_square(m, "characteristic polynomial argument")?;
    let n = m.nrows();
    let eye = Matrix::identity(n, n);
    let mut coeffs = vec![1.0];
    let mut mk = Matrix::zeros(n, n);
    let mut c = 1.0;
    for k in 1..=n {
        mk = m * &mk + &eye * c;
        c = -(m * &mk).trace() / k as f64;
        coeffs.push(c);
    }
    Ok(coeffs)
}

fn poly_eval_matrix(coeffs: &[f64], a: &Matrix) -> Matrix {
    let n = a.nrows();
    let mut acc = Matrix::zeros(n, n);
    for c in coeffs {
        acc = &acc * a + Matrix::identity(n, n) * *c;
    }
    acc
}

/// Row gain `K` placing the eigenvalues of `A + BK` at `poles` (Ackermann).
pub fn place_poles_single_input(a: &Matrix, b: &Matrix, poles: &[Complex<f64>]) -> Result<Matrix> {
    require_square(a, "A")?;
    let n = a.nrows();
    if b.nrows() != n || b.ncols() != 1 {
        return Err(Error::Dimension(format!(
            "B must be {n}x1, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if poles.len() != n {
        return Err(Error::InvalidInput(format!(
            "expected {n} poles, got {}",
            poles.len()
        )));
    }
    let desired = poly_from_roots(poles)?;
    if !is_controllable(a, b)? {
        return Err(Error::NotControllable);
    }
    let ctrb = controllability_matrix(a, b)?;
    let phi = poly_eval_matrix(&desired, a);
    let mut last = Matrix::zeros(1, n);
    last[(0, n - 1)] = 1.0;
    // last row of C⁻¹ solves Cᵀ y = e_n
    let y = ctrb
        .transpose()
        .lu()
        .solve(&last.transpose())
        .ok_or(Error::NotControllable)?;
    let k = -(y.transpose() * phi);
    check_finite(&k, "pole-placement gain")?;
    Ok(k)
}
