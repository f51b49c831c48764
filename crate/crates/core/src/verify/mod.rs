//! Numerical checks of the identities and assumptions behind the adaptive
//! loop, plus empirical rate fitting.
//!
//! The functions here measure; [`suite`] turns measurements into pass/fail
//! verdicts against the budgets in [`Budgets`].

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::assemble_system;
use crate::driver::AdaptiveHistory;
use crate::error::{Error, Result};
use crate::estimator::{compute_error_norms, compute_indicators, discrete_v_norms, exact_residual_sq, EstimatorReport};
use crate::mesh::{
    builtin_domain, element_geometry, locate_in_coarse, patch_with, refine_uniform, surviving_elements, validate,
    BuiltinDomain, Mesh, Point,
};
use crate::problems::Problem;
use crate::quadrature::quadrature_rule;
use crate::scalar::Scalar;
use crate::solver::exact_solve_factored;
use crate::spaces::{eval_pair, prolongate, rt_interpolant, CoefVec, DofMap, ElementFrame};

pub use suite::{run_all, run_suite, Budgets, Check, CheckResult, Status, Suite, VerificationReport};

/// Least-squares line through `(ln x, ln y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub levels_used: usize,
}

pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<RateFit> {
    if x.len() != y.len() {
        return Err(Error::Argument("abscissae and ordinates differ in length".into()));
    }
    if x.len() < 3 {
        return Err(Error::Argument(format!(
            "rate fit needs at least 3 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Argument("rate fit needs positive finite data".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = ly.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Argument("rate fit needs distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        levels_used: lx.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RateQuantity {
    Eta,
    Error,
}

/// Slope of `ln(quantity)` against `ln(n_dofs)` over the last `tail_levels`
/// levels.
pub fn fit_rate<T: Scalar>(history: &AdaptiveHistory<T>, quantity: RateQuantity, tail_levels: usize) -> Result<RateFit> {
    if tail_levels < 3 || history.len() < tail_levels {
        return Err(Error::Argument(format!(
            "rate fit over {tail_levels} levels needs at least 3 and at most {} levels",
            history.len()
        )));
    }
    let tail = &history.levels[history.len() - tail_levels..];
    let mut x = Vec::with_capacity(tail.len());
    let mut y = Vec::with_capacity(tail.len());
    for l in tail {
        let v = match quantity {
            RateQuantity::Eta => Some(l.eta_total),
            RateQuantity::Error => l.error_v,
        };
        let v = v.ok_or_else(|| Error::Argument(format!("level {} has no error value", l.level)))?;
        x.push(l.n_dofs as f64);
        y.push(v.as_f64());
    }
    fit_loglog(&x, &y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PythagorasReport {
    /// Defect at `v = u*_h`, where the identity reduces to the definition
    /// of the estimator.
    pub defect_at_solution: f64,
    /// Largest defect over the random trials.
    pub max_defect: f64,
    pub trials: usize,
}

/// Checks `||L(u* - v)||^2 = eta(u*_h)^2 + ||L(u*_h - v)||^2` for random
/// discrete `v`. All integrals use the assembly rule, under which the
/// identity is exact up to rounding.
pub fn pythagoras_check<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    trials: usize,
    seed: u64,
    quad_order: usize,
) -> Result<PythagorasReport> {
    if problem.exact.is_none() {
        return Err(Error::Argument("Pythagoras check needs an exact solution".into()));
    }
    let sys = assemble_system(mesh, dofmap, problem, quad_order)?;
    let uh = exact_solve_factored(&sys.matrix, &sys.factor, &sys.rhs)?;
    let eta_sq = compute_indicators(mesh, dofmap, problem, &uh, quad_order)?.total.powi(2);
    let defect = |v: &CoefVec<T>| -> Result<f64> {
        let lhs = exact_residual_sq(mesh, dofmap, problem, v, quad_order)?;
        let w: Vec<T> = uh.values.iter().zip(&v.values).map(|(&a, &b)| a - b).collect();
        let rhs = eta_sq + sys.matrix.quad_form(&w);
        Ok(if lhs == T::zero() && rhs == T::zero() {
            0.0
        } else {
            ((lhs - rhs).abs() / lhs.max(rhs)).as_f64()
        })
    };
    let defect_at_solution = defect(&uh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_defect: f64 = 0.0;
    for _ in 0..trials {
        let v = CoefVec::from_vec(
            (0..dofmap.n_total())
                .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
                .collect(),
        );
        max_defect = max_defect.max(defect(&v)?);
    }
    Ok(PythagorasReport {
        defect_at_solution,
        max_defect,
        trials,
    })
}

/// Ratios `eta / error_V` per level and their spread.
#[derive(Clone, Debug, PartialEq)]
pub struct Sandwich {
    /// `(level, ratio)` for every usable level.
    pub ratios: Vec<(usize, f64)>,
    /// Levels with zero error (0/0 or x/0 ratios are never counted).
    pub skipped: Vec<usize>,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
}

pub fn sandwich_constants<T: Scalar>(history: &AdaptiveHistory<T>, min_dofs: usize) -> Result<Sandwich> {
    let mut ratios = Vec::new();
    let mut skipped = Vec::new();
    for l in history.levels.iter().filter(|l| l.n_dofs >= min_dofs) {
        let err = l
            .error_v
            .ok_or_else(|| Error::Argument(format!("level {} has no error value", l.level)))?
            .as_f64();
        if err > 0.0 {
            ratios.push((l.level, l.eta_total.as_f64() / err));
        } else {
            skipped.push(l.level);
        }
    }
    if ratios.is_empty() {
        return Err(Error::Argument(format!("no level with at least {min_dofs} dofs and nonzero error")));
    }
    let min = ratios.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let max = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok(Sandwich {
        ratios,
        skipped,
        min,
        max,
        spread: max / min,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalEfficiency {
    /// `eta_T / ||u* - u_h||_{V(patch T)}` per element.
    pub ratios: Vec<f64>,
    pub max: f64,
}

pub fn local_efficiency_check<T: Scalar>(
    mesh: &Mesh<T>,
    dofmap: &DofMap,
    problem: &Problem<T>,
    coef: &CoefVec<T>,
    quad_order: usize,
) -> Result<LocalEfficiency> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Argument("local efficiency needs an exact solution".into()))?;
    let eta = compute_indicators(mesh, dofmap, problem, coef, quad_order)?;
    let err = compute_error_norms(mesh, dofmap, coef, Some(exact), quad_order)?;
    let vertex_elements = mesh.vertex_elements();
    let mut ratios = Vec::with_capacity(mesh.n_elements());
    for (e, t) in mesh.elements().iter().enumerate() {
        let patch_err = patch_with(&vertex_elements, t)
            .iter()
            .map(|&p| err.per_element[p].as_f64().powi(2))
            .sum::<f64>()
            .sqrt();
        let eta_t = eta.per_element[e].as_f64();
        ratios.push(if patch_err > 0.0 {
            eta_t / patch_err
        } else if eta_t == 0.0 {
            0.0
        } else {
            return Err(Error::IdentityViolation(format!(
                "element {e}: indicator {eta_t} with zero patch error"
            )));
        });
    }
    let max = ratios.iter().copied().fold(0.0, f64::max);
    Ok(LocalEfficiency { ratios, max })
}

/// A discrete solution on one mesh.
#[derive(Clone, Copy)]
pub struct LevelSolution<'a, T> {
    pub mesh: &'a Mesh<T>,
    pub dofmap: &'a DofMap,
    pub coef: &'a CoefVec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteReliability {
    /// `||u_fine - u_coarse||_V / eta_coarse(R)`; zero when both vanish.
    pub c_drel: f64,
    /// `#R / (#T_fine - #T_coarse)`, absent without refinement.
    pub cardinality_ratio: Option<f64>,
    /// Coarse elements whose patch touches a refined element.
    pub r_set: Vec<usize>,
    pub solution_difference: f64,
    pub eta_r: f64,
}

/// The refined region `R = T_coarse \ N` with `N` the coarse elements whose
/// whole patch survives in the fine mesh.
pub fn refined_region<T: Scalar>(coarse: &Mesh<T>, fine: &Mesh<T>) -> Result<Vec<usize>> {
    locate_in_coarse(coarse, fine)?;
    let survives = surviving_elements(coarse, fine);
    let vertex_elements = coarse.vertex_elements();
    Ok(coarse
        .elements()
        .iter()
        .enumerate()
        .filter(|(_, t)| !patch_with(&vertex_elements, t).iter().all(|&p| survives[p]))
        .map(|(e, _)| e)
        .collect())
}

pub fn discrete_reliability_check<T: Scalar>(
    coarse: LevelSolution<'_, T>,
    coarse_report: &EstimatorReport<T>,
    fine: LevelSolution<'_, T>,
    quad_order: usize,
) -> Result<DiscreteReliability> {
    let r_set = refined_region(coarse.mesh, fine.mesh)?;
    let lifted = prolongate((coarse.mesh, coarse.dofmap), (fine.mesh, fine.dofmap), coarse.coef)?;
    let diff = CoefVec::from_vec(
        fine.coef
            .values
            .iter()
            .zip(&lifted.values)
            .map(|(&a, &b)| a - b)
            .collect(),
    );
    let difference = discrete_v_norms(fine.mesh, fine.dofmap, &diff, quad_order)?.total.as_f64();
    let eta_r = coarse_report.restricted(r_set.iter().copied()).as_f64();
    let c_drel = if eta_r > 0.0 {
        difference / eta_r
    } else if difference <= 1e-12 * fine.coef.values.iter().map(|v| v.abs().as_f64()).fold(1.0, f64::max) {
        0.0
    } else {
        return Err(Error::IdentityViolation(format!(
            "solutions differ by {difference} while the estimator on the refined region vanishes"
        )));
    };
    let added = fine.mesh.n_elements().saturating_sub(coarse.mesh.n_elements());
    Ok(DiscreteReliability {
        c_drel,
        cardinality_ratio: (added > 0).then(|| r_set.len() as f64 / added as f64),
        r_set,
        solution_difference: difference,
        eta_r,
    })
}

/// Largest `|b(u_fine - u_coarse, v)| / (||u_fine||_A ||v||_A)` over random
/// coarse `v`. It vanishes for nested spaces as long as the data
/// are integrated exactly on both meshes; otherwise it measures the
/// quadrature inconsistency between the two right-hand sides.
pub fn galerkin_orthogonality_defect<T: Scalar>(
    coarse: LevelSolution<'_, T>,
    fine: LevelSolution<'_, T>,
    fine_matrix: &crate::sparse::SparseSpd<T>,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    let lift = |c: &CoefVec<T>| prolongate((coarse.mesh, coarse.dofmap), (fine.mesh, fine.dofmap), c);
    let lifted = lift(coarse.coef)?;
    let diff: Vec<T> = fine.coef.values.iter().zip(&lifted.values).map(|(&a, &b)| a - b).collect();
    let mut a_diff = vec![T::zero(); diff.len()];
    fine_matrix.matvec(&diff, &mut a_diff);
    let scale = fine_matrix.energy_norm(&fine.coef.values);
    if scale == T::zero() {
        return Ok(0.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let v = CoefVec::from_vec(
            (0..coarse.dofmap.n_total())
                .map(|_| T::lit(rng.gen_range(-1.0..1.0)))
                .collect(),
        );
        let pv = lift(&v)?;
        let denom = scale * fine_matrix.energy_norm(&pv.values);
        if denom > T::zero() {
            worst = worst.max((crate::scalar::dot(&pv.values, &a_diff).abs() / denom).as_f64());
        }
    }
    Ok(worst)
}

/// `||u - I u||_{H1}` for the continuous piecewise linear interpolant using
/// all vertices (boundary included).
pub fn nodal_interpolation_error<T: Scalar>(
    mesh: &Mesh<T>,
    u: impl Fn(Point<T>) -> T,
    grad_u: impl Fn(Point<T>) -> [T; 2],
    quad_order: usize,
) -> Result<T> {
    let rule = quadrature_rule::<T>(quad_order)?;
    let values: Vec<T> = mesh.vertices().iter().map(|&p| u(p)).collect();
    let empty = DofMap::new(mesh);
    let mut total = T::zero();
    for (e, t) in mesh.elements().iter().enumerate() {
        let frame = ElementFrame::new(mesh, &empty, e);
        // relative to the first vertex so that constants are reproduced exactly
        let base = values[t[0]];
        let d1 = values[t[1]] - base;
        let d2 = values[t[2]] - base;
        let g = &frame.hat_grad;
        let grad = [d1 * g[1][0] + d2 * g[2][0], d1 * g[1][1] + d2 * g[2][1]];
        for (lambda, &w) in rule.points.iter().zip(&rule.weights) {
            let x = frame.to_physical(*lambda);
            let ih = base + d1 * lambda[1] + d2 * lambda[2];
            let g = grad_u(x);
            let d = [u(x) - ih, g[0] - grad[0], g[1] - grad[1]];
            total += w * frame.area * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }
    }
    Ok(total.sqrt())
}

/// `||tau - Pi tau||_{H(div)}` for the lowest-order Raviart-Thomas
/// interpolant built from edge means of the normal flux.
pub fn rt_interpolation_error<T: Scalar>(
    mesh: &Mesh<T>,
    tau: impl Fn(Point<T>) -> [T; 2],
    div_tau: impl Fn(Point<T>) -> T,
    quad_order: usize,
) -> Result<T> {
    let rule = quadrature_rule::<T>(quad_order)?;
    let dofmap = DofMap::new(mesh);
    let coef = rt_interpolant(mesh, &dofmap, &tau, 4);
    let mut total = T::zero();
    for e in 0..mesh.n_elements() {
        let frame = ElementFrame::new(mesh, &dofmap, e);
        let dofs = dofmap.element_dofs(mesh, e);
        for (lambda, &w) in rule.points.iter().zip(&rule.weights) {
            let x = frame.to_physical(*lambda);
            let (_, _, sigma, div) = eval_pair(&frame, &dofs, &coef.values, *lambda);
            let t = tau(x);
            let d = [t[0] - sigma[0], t[1] - sigma[1], div_tau(x) - div];
            total += w * frame.area * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
        }
    }
    Ok(total.sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolationRates {
    /// Largest element diameter per level.
    pub h: Vec<f64>,
    pub h1_errors: Vec<f64>,
    pub hdiv_errors: Vec<f64>,
    pub h1: RateFit,
    pub hdiv: RateFit,
}

/// Interpolation errors of `sin(pi x) sin(pi y)` (nodal, in H1) and of its
/// gradient (Raviart-Thomas, in H(div)) on `levels` successive uniform
/// refinements of the unit square, starting after `skip` refinements.
pub fn interpolation_rate_check<T: Scalar>(skip: usize, levels: usize, quad_order: usize) -> Result<InterpolationRates> {
    if levels < 4 {
        return Err(Error::Argument(format!("need at least 4 levels, got {levels}")));
    }
    let pi = T::lit(std::f64::consts::PI);
    let u = |p: Point<T>| (pi * p[0]).sin() * (pi * p[1]).sin();
    let grad = |p: Point<T>| {
        [
            pi * (pi * p[0]).cos() * (pi * p[1]).sin(),
            pi * (pi * p[0]).sin() * (pi * p[1]).cos(),
        ]
    };
    let div = |p: Point<T>| -T::lit(2.0) * pi * pi * u(p);
    let mut mesh = builtin_domain::<T>(BuiltinDomain::UnitSquare);
    for _ in 0..skip {
        mesh = refine_uniform(&mesh);
    }
    let (mut h, mut h1_errors, mut hdiv_errors) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..levels {
        let hmax = (0..mesh.n_elements())
            .map(|e| element_geometry(&mesh, e).map(|g| g.diam.as_f64()))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        h.push(hmax);
        h1_errors.push(nodal_interpolation_error(&mesh, u, grad, quad_order)?.as_f64());
        hdiv_errors.push(rt_interpolation_error(&mesh, grad, div, quad_order)?.as_f64());
        mesh = refine_uniform(&mesh);
    }
    Ok(InterpolationRates {
        h1: fit_loglog(&h, &h1_errors)?,
        hdiv: fit_loglog(&h, &hdiv_errors)?,
        h,
        h1_errors,
        hdiv_errors,
    })
}

/// Structural properties of one refinement step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RefinementAxioms {
    /// Conformity problems, inverted elements and orphan vertices.
    pub conformity_violations: usize,
    /// Marked elements that reappear unchanged in the fine mesh.
    pub marked_survivors: usize,
    /// Fine elements whose size ratio to their coarse ancestor is not
    /// `2^(-k/2)` with `k >= 1` (or exactly 1 for untouched elements).
    pub contraction_failures: usize,
    pub bisected_children: usize,
}

impl RefinementAxioms {
    pub fn holds(&self) -> bool {
        self.conformity_violations == 0 && self.marked_survivors == 0 && self.contraction_failures == 0
    }

    pub fn accumulate(&mut self, other: &RefinementAxioms) {
        self.conformity_violations += other.conformity_violations;
        self.marked_survivors += other.marked_survivors;
        self.contraction_failures += other.contraction_failures;
        self.bisected_children += other.bisected_children;
    }
}

pub fn refinement_axioms<T: Scalar>(coarse: &Mesh<T>, marked: &[usize], fine: &Mesh<T>) -> Result<RefinementAxioms> {
    let v = validate(fine);
    let survives = surviving_elements(coarse, fine);
    let ancestor = locate_in_coarse(coarse, fine)?;
    let mut out = RefinementAxioms {
        conformity_violations: v.conformity_violations.len() + v.inverted_elements.len() + v.orphan_vertices.len(),
        marked_survivors: marked.iter().filter(|&&m| survives[m]).count(),
        ..Default::default()
    };
    for (fe, &ce) in ancestor.iter().enumerate() {
        let ratio = (fine.area(fe) / coarse.area(ce)).as_f64();
        // h = |T|^(1/2), so halving the area k times contracts h by 2^(-k/2)
        let k = -ratio.log2();
        let kr = k.round();
        let exact = (k - kr).abs() <= 1e-9;
        if survives[ce] {
            if !(exact && kr == 0.0) {
                out.contraction_failures += 1;
            }
        } else {
            out.bisected_children += 1;
            if !(exact && kr >= 1.0) {
                out.contraction_failures += 1;
            }
        }
    }
    Ok(out)
}

/// Minimum angle of the mesh after each of `n` uniform refinements
/// (entry 0 is the initial mesh).
pub fn min_angle_history(domain: BuiltinDomain, n: usize) -> Vec<f64> {
    let mut mesh = builtin_domain::<f64>(domain);
    let mut out = vec![validate(&mesh).min_angle];
    for _ in 0..n {
        mesh = refine_uniform(&mesh);
        out.push(validate(&mesh).min_angle);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::LevelRecord;
    use crate::mesh::refine_nvb;
    use crate::problems::{make_problem, Manufactured, ProblemSpec};

    fn record(level: usize, n_dofs: usize, eta: f64, err: Option<f64>) -> LevelRecord<f64> {
        LevelRecord {
            level,
            n_elements: n_dofs,
            n_dofs,
            eta_total: eta,
            error_v: err,
            marked_count: 1,
            solver_iterations: 0,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn exact_power_law_rate() {
        let levels = (0..6)
            .map(|l| {
                let n = 100 * 4usize.pow(l as u32);
                record(l, n, 100.0 * (n as f64).powf(-0.5), None)
            })
            .collect();
        let fit = fit_rate(&AdaptiveHistory { levels }, RateQuantity::Eta, 5).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert_eq!(fit.levels_used, 5);
    }

    #[test]
    fn rate_fit_needs_three_levels() {
        let h = AdaptiveHistory {
            levels: vec![record(0, 10, 1.0, None), record(1, 20, 0.5, None)],
        };
        assert!(fit_rate(&h, RateQuantity::Eta, 2).is_err());
        assert!(fit_rate(&h, RateQuantity::Eta, 3).is_err());
    }

    #[test]
    fn synthetic_sandwich() {
        let levels = (0..5)
            .map(|l| {
                let e = 1.0 / (l + 1) as f64;
                record(l, 100 + l, 2.0 * e, Some(e))
            })
            .collect();
        let s = sandwich_constants(&AdaptiveHistory { levels }, 100).unwrap();
        assert!(s.ratios.iter().all(|r| (r.1 - 2.0).abs() < 1e-15));
        assert!((s.spread - 1.0).abs() < 1e-15);
        let zero = AdaptiveHistory {
            levels: vec![record(0, 200, 0.0, Some(0.0)), record(1, 300, 1.0, Some(1.0))],
        };
        assert_eq!(sandwich_constants(&zero, 100).unwrap().skipped, vec![0]);
    }

    #[test]
    fn pythagoras_on_refined_square() {
        let m = refine_uniform(&refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare)));
        let dm = DofMap::new(&m);
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
        let r = pythagoras_check(&m, &dm, &p, 20, 7, 4).unwrap();
        assert!(r.defect_at_solution <= 1e-10, "{r:?}");
        assert!(r.max_defect <= 1e-8, "{r:?}");
        let z = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Zero)).unwrap();
        assert_eq!(pythagoras_check(&m, &dm, &z, 0, 7, 4).unwrap().defect_at_solution, 0.0);
    }

    #[test]
    fn local_efficiency_zero_case() {
        let m = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare));
        let dm = DofMap::new(&m);
        let z = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Zero)).unwrap();
        let r = local_efficiency_check(&m, &dm, &z, &CoefVec::zeros(dm.n_total()), 4).unwrap();
        assert!(r.ratios.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn refined_region_under_uniform_refinement_is_everything() {
        let c = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape));
        let f = refine_uniform(&c);
        assert_eq!(refined_region(&c, &f).unwrap().len(), c.n_elements());
        assert!(refined_region(&c, &c).unwrap().is_empty());
        assert!(refined_region(&f, &c).is_err());
    }

    #[test]
    fn refined_region_is_order_independent() {
        let c = refine_uniform(&refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare)));
        let f = refine_nvb(&c, &[0, 5]).unwrap();
        let r = refined_region(&c, &f).unwrap();
        let n = c.n_elements();
        let perm: Vec<usize> = (0..n).rev().collect();
        let permuted = Mesh::new(c.vertices().to_vec(), perm.iter().map(|&e| c.elements()[e]).collect()).unwrap();
        let rp = refined_region(&permuted, &f).unwrap();
        let mut mapped: Vec<usize> = rp.iter().map(|&e| perm[e]).collect();
        mapped.sort_unstable();
        assert_eq!(mapped, r);
    }

    #[test]
    fn unrefined_pair_is_degenerate() {
        let m = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare));
        let dm = DofMap::new(&m);
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
        let sys = assemble_system(&m, &dm, &p, 4).unwrap();
        let u = exact_solve_factored(&sys.matrix, &sys.factor, &sys.rhs).unwrap();
        let rep = compute_indicators(&m, &dm, &p, &u, 6).unwrap();
        let lvl = LevelSolution {
            mesh: &m,
            dofmap: &dm,
            coef: &u,
        };
        let d = discrete_reliability_check(lvl, &rep, lvl, 6).unwrap();
        assert_eq!(d.c_drel, 0.0);
        assert_eq!(d.cardinality_ratio, None);
    }

    #[test]
    fn nested_solutions_are_orthogonal_for_polynomial_data() {
        let c = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::UnitSquare));
        let f = refine_nvb(&c, &[0, 2]).unwrap();
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
        let (cd, fd) = (DofMap::new(&c), DofMap::new(&f));
        let cs = assemble_system(&c, &cd, &p, 4).unwrap();
        let fs = assemble_system(&f, &fd, &p, 4).unwrap();
        let cu = exact_solve_factored(&cs.matrix, &cs.factor, &cs.rhs).unwrap();
        let fu = exact_solve_factored(&fs.matrix, &fs.factor, &fs.rhs).unwrap();
        let coarse = LevelSolution { mesh: &c, dofmap: &cd, coef: &cu };
        let fine = LevelSolution { mesh: &f, dofmap: &fd, coef: &fu };
        let d = galerkin_orthogonality_defect(coarse, fine, &fs.matrix, 10, 3).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn constants_are_interpolated_exactly() {
        let mut m = builtin_domain::<f64>(BuiltinDomain::LShape);
        for _ in 0..3 {
            m = refine_uniform(&m);
            assert_eq!(nodal_interpolation_error(&m, |_| 3.5, |_| [0.0, 0.0], 4).unwrap(), 0.0);
        }
    }

    #[test]
    fn interpolation_is_first_order() {
        let r = interpolation_rate_check::<f64>(3, 7, 6).unwrap();
        assert!((0.85..=1.15).contains(&r.h1.slope), "{r:?}");
        assert!((0.85..=1.15).contains(&r.hdiv.slope), "{r:?}");
    }

    #[test]
    fn nvb_step_satisfies_axioms() {
        let c = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape));
        let f = refine_nvb(&c, &[1, 4]).unwrap();
        let a = refinement_axioms(&c, &[1, 4], &f).unwrap();
        assert!(a.holds(), "{a:?}");
        assert!(a.bisected_children >= 4);
    }
}
