//! Built-in least-squares estimator and exact errors in the V norm.

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::problems::{eval_data, eval_operator, ExactSolution, Problem, State};
use crate::quadrature::{quadrature_rule, QuadRule};
use crate::scalar::Scalar;
use crate::spaces::{eval_pair, CoefVec, DofMap, ElementFrame};

/// Per-element indicators `eta_T = ||F - L u_h||_T` and their l2 sum.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorReport<T> {
    pub per_element: Vec<T>,
    pub total: T,
}

impl<T: Scalar> EstimatorReport<T> {
    /// Builds a report from indicators, with `total = (sum eta_T^2)^(1/2)`.
    pub fn from_indicators(per_element: Vec<T>) -> Self {
        let total = per_element.iter().map(|&e| e * e).sum::<T>().sqrt();
        EstimatorReport { per_element, total }
    }

    /// `(sum_{T in set} eta_T^2)^(1/2)`.
    pub fn restricted(&self, elements: impl IntoIterator<Item = usize>) -> T {
        elements
            .into_iter()
            .map(|e| self.per_element[e] * self.per_element[e])
            .sum::<T>()
            .sqrt()
    }

    pub fn len(&self) -> usize {
        self.per_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_element.is_empty()
    }
}

/// Per-element errors and their l2 sum.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorNorms<T> {
    pub per_element: Vec<T>,
    pub total: T,
}

/// Evaluates the discrete state at every quadrature point of an element.
fn for_each_point<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    coef: &[T],
    rule: &QuadRule<T>,
    elem: usize,
    mut f: impl FnMut([T; 2], T, State<T>),
) {
    let frame = ElementFrame::new(mesh, dofmap, elem);
    let dofs = dofmap.element_dofs(mesh, elem);
    for (lambda, &w) in rule.points.iter().zip(&rule.weights) {
        let x = frame.to_physical(*lambda);
        let (u, grad_u, sigma, div_sigma) = eval_pair(&frame, &dofs, coef, *lambda);
        f(
            x,
            w * frame.area,
            State {
                u,
                grad_u,
                sigma,
                div_sigma,
            },
        );
    }
}

pub fn compute_indicators<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    coef: &CoefVec<T>,
    quad_order: usize,
) -> Result<EstimatorReport<T>> {
    coef.check_len(dofmap)?;
    let rule = quadrature_rule::<T>(quad_order)?;
    let per_element = (0..mesh.n_elements())
        .map(|e| {
            let mut sq = T::zero();
            for_each_point(mesh, dofmap, &coef.values, &rule, e, |x, w, s| {
                let r = eval_data(problem, x).sub(&eval_operator(problem, x, &s));
                sq += w * r.norm_sqr();
            });
            sq.sqrt()
        })
        .collect();
    Ok(EstimatorReport::from_indicators(per_element))
}

/// Squared `H1 x H(div)` norm of `reference - discrete`, elementwise.
fn v_norm_sq<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    coef: &[T],
    rule: &QuadRule<T>,
    reference: impl Fn([T; 2]) -> State<T>,
) -> Vec<T> {
    (0..mesh.n_elements())
        .map(|e| {
            let mut sq = T::zero();
            for_each_point(mesh, dofmap, coef, rule, e, |x, w, s| {
                let d = reference(x).scale_add(T::one(), s, -T::one());
                let v = d.u * d.u
                    + d.grad_u[0] * d.grad_u[0]
                    + d.grad_u[1] * d.grad_u[1]
                    + d.sigma[0] * d.sigma[0]
                    + d.sigma[1] * d.sigma[1]
                    + d.div_sigma * d.div_sigma;
                sq += w * v;
            });
            sq
        })
        .collect()
}

fn norms_from_sq<T: Scalar>(sq: Vec<T>) -> ErrorNorms<T> {
    let total = sq.iter().copied().sum::<T>().sqrt();
    ErrorNorms {
        per_element: sq.into_iter().map(|v| v.sqrt()).collect(),
        total,
    }
}

/// `||u* - u_h||_{H1(T)}^2 + ||sigma* - sigma_h||_{H(div,T)}^2` per element.
pub fn compute_error_norms<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    coef: &CoefVec<T>,
    exact: Option<&ExactSolution<T>>,
    quad_order: usize,
) -> Result<ErrorNorms<T>> {
    let exact = exact.ok_or_else(|| Error::Argument("problem has no exact solution".into()))?;
    coef.check_len(dofmap)?;
    let rule = quadrature_rule::<T>(quad_order)?;
    Ok(norms_from_sq(v_norm_sq(mesh, dofmap, &coef.values, &rule, |x| {
        exact.state(x)
    })))
}

/// V norm of a discrete pair, elementwise.
pub fn discrete_v_norms<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    coef: &CoefVec<T>,
    quad_order: usize,
) -> Result<ErrorNorms<T>> {
    coef.check_len(dofmap)?;
    let rule = quadrature_rule::<T>(quad_order)?;
    Ok(norms_from_sq(v_norm_sq(mesh, dofmap, &coef.values, &rule, |_| {
        State::zero()
    })))
}

/// `||L(u* - v_h)||^2` over the domain, with `L u*` taken from the exact
/// state rather than from the load.
pub fn exact_residual_sq<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    coef: &CoefVec<T>,
    quad_order: usize,
) -> Result<T> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Argument("problem has no exact solution".into()))?;
    coef.check_len(dofmap)?;
    let rule = quadrature_rule::<T>(quad_order)?;
    let mut total = T::zero();
    for e in 0..mesh.n_elements() {
        for_each_point(mesh, dofmap, &coef.values, &rule, e, |x, w, s| {
            let d = exact.state(x).scale_add(T::one(), s, -T::one());
            total += w * eval_operator(problem, x, &d).norm_sqr();
        });
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_system;
    use crate::mesh::{builtin_domain, refine_uniform, BuiltinDomain};
    use crate::problems::{make_problem, CoefSpec, Manufactured, ProblemSpec};

    #[test]
    fn zero_coefficients_give_load_norm() {
        let m = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        let dm = DofMap::new(&m);
        let p = make_problem(&ProblemSpec::poisson_load(CoefSpec::Number(1.0))).unwrap();
        let r = compute_indicators(&m, &dm, &p, &CoefVec::zeros(dm.n_total()), 4).unwrap();
        for &eta in &r.per_element {
            assert!((eta - 0.5f64.sqrt()).abs() < 1e-14);
        }
        assert!((r.total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_problem_zero_estimate() {
        let m = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare));
        let dm = DofMap::new(&m);
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Zero)).unwrap();
        let c = CoefVec::zeros(dm.n_total());
        assert_eq!(compute_indicators(&m, &dm, &p, &c, 4).unwrap().total, 0.0);
        let err = compute_error_norms(&m, &dm, &c, p.exact.as_ref(), 4).unwrap();
        assert_eq!(err.total, 0.0);
    }

    #[test]
    fn missing_exact_solution() {
        let m = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
        let dm = DofMap::new(&m);
        assert!(compute_error_norms(&m, &dm, &CoefVec::zeros(dm.n_total()), None, 4).is_err());
    }

    #[test]
    fn additivity_of_totals() {
        let m = refine_uniform(&refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape)));
        let dm = DofMap::new(&m);
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Sine)).unwrap();
        let sys = assemble_system(&m, &dm, &p, 4).unwrap();
        let c = CoefVec::from_vec(sys.factor.solve(&sys.rhs));
        let r = compute_indicators(&m, &dm, &p, &c, 6).unwrap();
        let sum: f64 = r.per_element.iter().map(|e| e * e).sum();
        assert!((r.total * r.total - sum).abs() <= 1e-13 * sum);
        let err = compute_error_norms(&m, &dm, &c, p.exact.as_ref(), 6).unwrap();
        let sum: f64 = err.per_element.iter().map(|e| e * e).sum();
        assert!((err.total * err.total - sum).abs() <= 1e-13 * sum);
    }

    #[test]
    fn estimator_equals_exact_residual() {
        let m = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare));
        let dm = DofMap::new(&m);
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
        let sys = assemble_system(&m, &dm, &p, 4).unwrap();
        let c = CoefVec::from_vec(sys.factor.solve(&sys.rhs));
        let eta = compute_indicators(&m, &dm, &p, &c, 8).unwrap().total;
        let res = exact_residual_sq(&m, &dm, &p, &c, 8).unwrap().sqrt();
        assert!((eta - res).abs() <= 1e-8 * res);
    }
}
