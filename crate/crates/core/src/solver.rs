//! Direct solves, preconditioned conjugate gradients and the measured
//! contraction factor of PCG.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{dot, norm2, Scalar};
use crate::spaces::CoefVec;
use crate::sparse::{Cholesky, SparseSpd};

/// Iterative refinement steps allowed after the Cholesky solve.
const REFINEMENT_STEPS: usize = 3;

fn relative_residual<T: Scalar>(a: &SparseSpd<T>, b: &[T], x: &[T]) -> T {
    let ax = a.mul(x);
    let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let nb = norm2(b);
    if nb == T::zero() {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

/// Solves with a precomputed factor and refines until the relative residual
/// is below [`Scalar::EXACT_SOLVE_TOL`].
pub fn exact_solve_factored<T: Scalar>(a: &SparseSpd<T>, factor: &Cholesky<T>, b: &[T]) -> Result<CoefVec<T>> {
    if b.len() != a.dim() || factor.dim() != a.dim() {
        return Err(Error::Argument(format!(
            "dimension mismatch: matrix {}, factor {}, rhs {}",
            a.dim(),
            factor.dim(),
            b.len()
        )));
    }
    let tol = T::lit(T::EXACT_SOLVE_TOL);
    let mut x = factor.solve(b);
    let mut res = relative_residual(a, b, &x);
    for _ in 0..REFINEMENT_STEPS {
        if res <= tol {
            break;
        }
        let ax = a.mul(&x);
        let r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
        let d = factor.solve(&r);
        for (xi, di) in x.iter_mut().zip(d) {
            *xi += di;
        }
        res = relative_residual(a, b, &x);
    }
    if !(res <= tol) {
        return Err(Error::Solver(format!(
            "direct solve reached relative residual {res}, above {tol}"
        )));
    }
    Ok(CoefVec::from_vec(x))
}

pub fn exact_solve<T: Scalar>(a: &SparseSpd<T>, b: &[T]) -> Result<CoefVec<T>> {
    let factor = Cholesky::factor(a)?;
    exact_solve_factored(a, &factor, b)
}

/// `z = P^{-1} r` for a symmetric positive definite `P`.
pub trait Preconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]);

    /// The diagonal of `P` when `P` is diagonal, used to form the
    /// symmetrically preconditioned operator for condition estimates.
    fn diagonal(&self) -> Option<&[T]>;
}

pub struct IdentityPreconditioner;

impl<T: Scalar> Preconditioner<T> for IdentityPreconditioner {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }

    fn diagonal(&self) -> Option<&[T]> {
        None
    }
}

pub struct JacobiPreconditioner<T> {
    diag: Vec<T>,
}

impl<T: Scalar> JacobiPreconditioner<T> {
    pub fn new(a: &SparseSpd<T>) -> Result<Self> {
        let diag = a.diagonal();
        if let Some(i) = diag.iter().position(|&d| !(d > T::zero())) {
            return Err(Error::Solver(format!(
                "Jacobi preconditioner needs a positive diagonal, entry {i} is {}",
                diag[i]
            )));
        }
        Ok(JacobiPreconditioner { diag })
    }
}

impl<T: Scalar> Preconditioner<T> for JacobiPreconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        for ((zi, &ri), &di) in z.iter_mut().zip(r).zip(&self.diag) {
            *zi = ri / di;
        }
    }

    fn diagonal(&self) -> Option<&[T]> {
        Some(&self.diag)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondKind {
    None,
    #[default]
    Jacobi,
}

pub fn build_preconditioner<T: Scalar>(
    a: &SparseSpd<T>,
    kind: PrecondKind,
) -> Result<Box<dyn Preconditioner<T>>> {
    Ok(match kind {
        PrecondKind::None => Box::new(IdentityPreconditioner),
        PrecondKind::Jacobi => Box::new(JacobiPreconditioner::new(a)?),
    })
}

/// Reference value `eta` in the increment criterion
/// `||x_n - x_{n-1}||_A <= lambda * eta`.
pub enum EtaReference<'a, T> {
    /// A fixed value, e.g. the estimator at the initial guess.
    Fixed(T),
    /// The estimator evaluated at the current iterate.
    Current(&'a dyn Fn(&[T]) -> Result<T>),
}

pub enum StopRule<'a, T> {
    /// Exactly `n` steps.
    Fixed(usize),
    Increment {
        lambda: T,
        eta: EtaReference<'a, T>,
        max_iter: usize,
    },
    /// Relative residual `||b - A x_n|| <= tol ||b||`.
    ResidualTol { tol: T, max_iter: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    IncrementCriterion,
    ResidualTol,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PcgOptions<'a, T> {
    /// Keep every iterate `x_0, ..., x_n`.
    pub keep_iterates: bool,
    /// Exact solution for recording energy errors.
    pub reference: Option<&'a [T]>,
}

#[derive(Clone, Debug)]
pub struct PcgResult<T> {
    pub solution: CoefVec<T>,
    /// `x_0, ..., x_n` when requested.
    pub iterates: Vec<CoefVec<T>>,
    /// `||x* - x_k||_A` for `k = 0..=n` when a reference was supplied.
    pub energy_errors: Option<Vec<T>>,
    pub iterations: usize,
    /// Euclidean residual norms for `k = 0..=n`.
    pub residual_norms: Vec<T>,
    /// `||x_k - x_{k-1}||_A` for `k = 1..=n`.
    pub increments: Vec<T>,
    /// Reference eta of the final increment check, when that rule is used.
    pub final_eta: Option<T>,
    pub stop_reason: StopReason,
}

pub fn pcg_run<T: Scalar>(
    a: &SparseSpd<T>,
    b: &[T],
    precond: PrecondKind,
    x0: &CoefVec<T>,
    stop: &StopRule<'_, T>,
    options: PcgOptions<'_, T>,
) -> Result<PcgResult<T>> {
    let p = build_preconditioner(a, precond)?;
    pcg_with(a, b, p.as_ref(), x0, stop, options)
}

/// Preconditioned conjugate gradients with a caller-supplied preconditioner.
pub fn pcg_with<T: Scalar>(
    a: &SparseSpd<T>,
    b: &[T],
    precond: &dyn Preconditioner<T>,
    x0: &CoefVec<T>,
    stop: &StopRule<'_, T>,
    options: PcgOptions<'_, T>,
) -> Result<PcgResult<T>> {
    let n = a.dim();
    if b.len() != n || x0.len() != n {
        return Err(Error::Argument(format!(
            "dimension mismatch: matrix {n}, rhs {}, initial guess {}",
            b.len(),
            x0.len()
        )));
    }
    let max_iter = match stop {
        StopRule::Fixed(k) => {
            if *k == 0 {
                return Err(Error::Argument("fixed PCG step count must be at least 1".into()));
            }
            *k
        }
        StopRule::Increment { lambda, max_iter, .. } => {
            if !(*lambda > T::zero()) {
                return Err(Error::Argument(format!("lambda must be positive, got {lambda}")));
            }
            *max_iter
        }
        StopRule::ResidualTol { max_iter, .. } => *max_iter,
    };
    if let Some(r) = options.reference {
        if r.len() != n {
            return Err(Error::Argument("reference solution has wrong length".into()));
        }
    }
    let energy_error = |x: &[T]| {
        options.reference.map(|xs| {
            let e: Vec<T> = xs.iter().zip(x).map(|(&s, &v)| s - v).collect();
            a.energy_norm(&e)
        })
    };

    let mut x = x0.values.clone();
    let ax = a.mul(&x);
    let mut r: Vec<T> = b.iter().zip(&ax).map(|(&bi, &ai)| bi - ai).collect();
    let mut z = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let b_norm = norm2(b);

    let mut iterates = Vec::new();
    if options.keep_iterates {
        iterates.push(x0.clone());
    }
    let mut energy_errors = options.reference.map(|_| Vec::new());
    if let (Some(v), Some(e)) = (energy_errors.as_mut(), energy_error(&x)) {
        v.push(e);
    }
    let mut residual_norms = vec![norm2(&r)];
    let mut increments = Vec::new();
    let mut final_eta = None;
    let mut ap = vec![T::zero(); n];
    let mut k = 0;
    let stop_reason = loop {
        if k >= max_iter {
            break StopReason::MaxIter;
        }
        if let StopRule::ResidualTol { tol, .. } = stop {
            if residual_norms[k] <= *tol * b_norm {
                break StopReason::ResidualTol;
            }
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        let alpha = if pap > T::zero() { rz / pap } else { T::zero() };
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        k += 1;
        increments.push(alpha.abs() * pap.max(T::zero()).sqrt());
        residual_norms.push(norm2(&r));
        if options.keep_iterates {
            iterates.push(CoefVec::from_vec(x.clone()));
        }
        if let (Some(v), Some(e)) = (energy_errors.as_mut(), energy_error(&x)) {
            v.push(e);
        }
        if let StopRule::Increment { lambda, eta, .. } = stop {
            let eta = match eta {
                EtaReference::Fixed(v) => *v,
                EtaReference::Current(f) => f(&x)?,
            };
            final_eta = Some(eta);
            if increments[k - 1] <= *lambda * eta {
                break StopReason::IncrementCriterion;
            }
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = if rz > T::zero() { rz_new / rz } else { T::zero() };
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    };
    Ok(PcgResult {
        solution: CoefVec::from_vec(x),
        iterates,
        energy_errors,
        iterations: k,
        residual_norms,
        increments,
        final_eta,
        stop_reason,
    })
}

/// Condition number of the preconditioned operator and the resulting PCG
/// contraction factor `q = (1 - 1/C)^(1/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContractionEstimate<T> {
    pub lambda_min: T,
    pub lambda_max: T,
    pub c_pcg: T,
    pub q_ctr: T,
}

pub fn contraction_factor<T: Scalar>(c_pcg: T) -> T {
    (T::one() - T::one() / c_pcg).max(T::zero()).sqrt()
}

pub const DENSE_EIGEN_MAX: usize = 200;
pub const CONTRACTION_MAX_DIM: usize = 20000;
const LANCZOS_MAX_STEPS: usize = 10_000;

pub fn estimate_pcg_contraction<T: Scalar>(
    a: &SparseSpd<T>,
    precond: PrecondKind,
) -> Result<ContractionEstimate<T>> {
    let n = a.dim();
    if n == 0 {
        return Err(Error::Argument("empty matrix".into()));
    }
    if n > CONTRACTION_MAX_DIM {
        return Err(Error::Argument(format!(
            "condition estimate limited to {CONTRACTION_MAX_DIM} unknowns, got {n}"
        )));
    }
    let s = match precond {
        PrecondKind::None => a.clone(),
        PrecondKind::Jacobi => {
            let p = JacobiPreconditioner::new(a)?;
            a.symmetric_scaled(&p.diag)
        }
    };
    let (lambda_min, lambda_max) = if n <= DENSE_EIGEN_MAX {
        let ev = symmetric_eigenvalues(s.to_dense())?;
        (ev[0], ev[n - 1])
    } else {
        let lmax = lanczos_largest(n, |x, y| s.matvec(x, y))?;
        let factor = Cholesky::factor(&s)?;
        let inv_max = lanczos_largest(n, |x, y| y.copy_from_slice(&factor.solve(x)))?;
        (T::one() / inv_max, lmax)
    };
    if !(lambda_min > T::zero()) {
        return Err(Error::NumericalEstimate(format!(
            "smallest eigenvalue estimate {lambda_min} is not positive"
        )));
    }
    let c_pcg = (lambda_max / lambda_min).max(T::one());
    Ok(ContractionEstimate {
        lambda_min,
        lambda_max,
        c_pcg,
        q_ctr: contraction_factor(c_pcg),
    })
}

/// Eigenvalues of a dense symmetric matrix in ascending order (cyclic
/// Jacobi rotations).
pub fn symmetric_eigenvalues<T: Scalar>(mut a: Vec<Vec<T>>) -> Result<Vec<T>> {
    let n = a.len();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += a[i][i] * a[i][i];
            for j in i + 1..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off <= eps * eps * diag || off == T::zero() {
            let mut ev: Vec<T> = (0..n).map(|i| a[i][i]).collect();
            ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
            return Ok(ev);
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == T::zero() {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    Err(Error::NumericalEstimate("Jacobi eigenvalue sweeps did not converge".into()))
}

/// Largest eigenvalue of a symmetric positive definite operator by Lanczos
/// with full reorthogonalization.
fn lanczos_largest<T: Scalar>(n: usize, op: impl Fn(&[T], &mut [T])) -> Result<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1a2b3c);
    let mut q: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
    let nq = norm2(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    let mut basis: Vec<Vec<T>> = vec![q];
    let mut alphas: Vec<T> = Vec::new();
    let mut betas: Vec<T> = Vec::new();
    let mut w = vec![T::zero(); n];
    let mut previous = T::zero();
    let tol = T::lit(1e-10).max(T::epsilon() * T::lit(100.0));
    let steps = LANCZOS_MAX_STEPS.min(n);
    for j in 0..steps {
        op(&basis[j], &mut w);
        let alpha = dot(&w, &basis[j]);
        alphas.push(alpha);
        // two passes of classical Gram-Schmidt against the whole basis
        for _ in 0..2 {
            for v in &basis {
                let c = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(wi, &vi)| *wi -= c * vi);
            }
        }
        let beta = norm2(&w);
        let check = j + 1 == steps || beta <= tol * alpha.abs() || (j + 1) % 10 == 0;
        if check {
            let top = tridiagonal_largest(&alphas, &betas);
            if beta <= tol * alpha.abs() || j + 1 == steps || (top - previous).abs() <= tol * top {
                return Ok(top);
            }
            previous = top;
        }
        betas.push(beta);
        basis.push(w.iter().map(|&v| v / beta).collect());
    }
    Err(Error::NumericalEstimate(format!(
        "Lanczos iteration did not converge in {steps} steps"
    )))
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal
/// `alpha` and off-diagonal `beta`, by Sturm-sequence bisection.
fn tridiagonal_largest<T: Scalar>(alpha: &[T], beta: &[T]) -> T {
    let m = alpha.len();
    let off = |i: usize| if i < beta.len().min(m.saturating_sub(1)) { beta[i].abs() } else { T::zero() };
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    for i in 0..m {
        let r = off(i) + if i > 0 { off(i - 1) } else { T::zero() };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    // number of eigenvalues below x
    let count_below = |x: T| {
        let mut count = 0;
        let mut d = T::one();
        for i in 0..m {
            let b2 = if i > 0 { off(i - 1) * off(i - 1) } else { T::zero() };
            d = alpha[i] - x - if i > 0 { b2 / d } else { T::zero() };
            if d == T::zero() {
                d = T::epsilon() * (x.abs() + T::min_positive_value());
            }
            if d < T::zero() {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = T::lit(0.5) * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
