//! The adaptive loop SOLVE, ESTIMATE, MARK, REFINE with exact solves or
//! with a few nested PCG steps per level.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_system, AssembledSystem, DEFAULT_QUAD_ORDER};
use crate::error::{Error, Result};
use crate::estimator::{compute_error_norms, compute_indicators, EstimatorReport};
use crate::marking::{mark, MarkingSpec, MarkingStrategy};
use crate::mesh::{builtin_domain, refine_nvb, refine_uniform, BuiltinDomain, Mesh};
use crate::problems::{make_problem, Manufactured, Problem, ProblemSpec};
use crate::quadrature::MAX_ORDER;
use crate::scalar::Scalar;
use crate::solver::{
    exact_solve_factored, pcg_run, EtaReference, PcgOptions, PcgResult, PrecondKind, StopRule,
};
use crate::spaces::{prolongate, CoefVec, DofMap};

pub const DEFAULT_THETA: f64 = 0.5;
pub const DEFAULT_MAX_NDOF: usize = 50_000;
pub const DEFAULT_PCG_CAP: usize = 500;

fn default_strategy() -> MarkingStrategy {
    MarkingStrategy::Doerfler
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

fn default_max_ndof() -> usize {
    DEFAULT_MAX_NDOF
}

fn default_pcg_cap() -> usize {
    DEFAULT_PCG_CAP
}

fn default_quad_order() -> usize {
    DEFAULT_QUAD_ORDER
}

fn default_true() -> bool {
    true
}

fn default_history_file() -> String {
    "history.csv".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingConfig {
    #[serde(default = "default_strategy")]
    pub strategy: MarkingStrategy,
    #[serde(default = "default_theta")]
    pub theta: f64,
    /// Per-level theta; the last entry repeats. Overrides `theta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_schedule: Option<Vec<f64>>,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        MarkingConfig {
            strategy: default_strategy(),
            theta: DEFAULT_THETA,
            theta_schedule: None,
        }
    }
}

impl MarkingConfig {
    pub fn spec_at(&self, level: usize) -> MarkingSpec {
        let theta = match &self.theta_schedule {
            Some(s) if !s.is_empty() => s[level.min(s.len() - 1)],
            _ => self.theta,
        };
        MarkingSpec {
            strategy: self.strategy,
            theta,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementKind {
    /// Mark by the estimator and refine by newest vertex bisection.
    #[default]
    Adaptive,
    /// Bisect every element once per level (reference runs).
    Uniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Exact,
    Pcg,
}

/// Which estimator value the increment criterion compares against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaVariant {
    /// The estimator at the initial guess of the level, i.e. at the
    /// prolongated final iterate of the previous level.
    Initial,
    /// The estimator at the current iterate.
    #[default]
    Current,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default)]
    pub kind: SolverKind,
    #[serde(default)]
    pub preconditioner: PrecondKind,
    /// Fixed number of PCG steps per level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// Increment criterion `||x_n - x_{n-1}||_A <= lambda * eta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub eta_reference: EtaVariant,
    /// Hard cap on PCG steps per level under the increment criterion.
    #[serde(default = "default_pcg_cap")]
    pub max_iterations: usize,
    /// Start each level from the prolongated previous iterate (otherwise
    /// from zero).
    #[serde(default = "default_true")]
    pub nested: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Exact,
            preconditioner: PrecondKind::Jacobi,
            steps: None,
            lambda: None,
            eta_reference: EtaVariant::Current,
            max_iterations: DEFAULT_PCG_CAP,
            nested: true,
        }
    }
}

impl SolverConfig {
    pub fn pcg_fixed(steps: usize) -> Self {
        SolverConfig {
            kind: SolverKind::Pcg,
            steps: Some(steps),
            ..Default::default()
        }
    }

    pub fn pcg_increment(lambda: f64) -> Self {
        SolverConfig {
            kind: SolverKind::Pcg,
            lambda: Some(lambda),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureConfig {
    #[serde(default = "default_quad_order")]
    pub assembly: usize,
    /// Defaults to `assembly + 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<usize>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            assembly: DEFAULT_QUAD_ORDER,
            estimator: None,
        }
    }
}

impl QuadratureConfig {
    pub fn estimator_order(&self) -> usize {
        self.estimator.unwrap_or((self.assembly + 2).min(MAX_ORDER))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopConfig {
    /// Stop before a refinement would exceed this many unknowns.
    #[serde(default = "default_max_ndof")]
    pub max_ndof: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_tol: Option<f64>,
}

impl Default for StopConfig {
    fn default() -> Self {
        StopConfig {
            max_ndof: DEFAULT_MAX_NDOF,
            max_levels: None,
            eta_tol: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFormat {
    Text,
    VtkLegacy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// History file name inside the output directory.
    #[serde(default = "default_history_file")]
    pub history: String,
    /// Per-level mesh exports, when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_format: Option<MeshFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            history: default_history_file(),
            mesh_format: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveConfig {
    pub domain: BuiltinDomain,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub marking: MarkingConfig,
    #[serde(default)]
    pub refinement: RefinementKind,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl AdaptiveConfig {
    /// Defaults everywhere except domain and problem.
    pub fn new(domain: BuiltinDomain, problem: ProblemSpec) -> Self {
        AdaptiveConfig {
            domain,
            problem,
            marking: MarkingConfig::default(),
            refinement: RefinementKind::Adaptive,
            solver: SolverConfig::default(),
            quadrature: QuadratureConfig::default(),
            stop: StopConfig::default(),
            output: OutputConfig::default(),
        }
    }

    /// Checks every sub-specification; messages name the offending key.
    pub fn validate(&self) -> Result<()> {
        let cfg = |key: &str, msg: String| Error::Config(format!("{key}: {msg}"));

        let check_theta = |key: &str, theta: f64| {
            MarkingSpec::new(self.marking.strategy, theta).map(|_| ()).map_err(|e| match e {
                Error::Config(m) => cfg(key, m),
                other => other,
            })
        };
        check_theta("marking.theta", self.marking.theta)?;
        if let Some(s) = &self.marking.theta_schedule {
            if s.is_empty() {
                return Err(cfg("marking.theta_schedule", "must not be empty".into()));
            }
            for &t in s {
                check_theta("marking.theta_schedule", t)?;
            }
        }

        let s = &self.solver;
        match s.kind {
            SolverKind::Exact => {
                if s.steps.is_some() || s.lambda.is_some() {
                    return Err(cfg(
                        "solver",
                        "`steps` and `lambda` apply only to kind = \"pcg\"".into(),
                    ));
                }
            }
            SolverKind::Pcg => match (s.steps, s.lambda) {
                (Some(0), _) => return Err(cfg("solver.steps", "must be at least 1".into())),
                (Some(_), None) => {}
                (None, Some(l)) if !(l > 0.0) => {
                    return Err(cfg("solver.lambda", format!("must be positive, got {l}")))
                }
                (None, Some(_)) => {}
                _ => {
                    return Err(cfg(
                        "solver",
                        "pcg needs exactly one of `steps` or `lambda`".into(),
                    ))
                }
            },
        }
        if s.max_iterations == 0 {
            return Err(cfg("solver.max_iterations", "must be at least 1".into()));
        }

        let q = &self.quadrature;
        if !(2..=MAX_ORDER).contains(&q.assembly) {
            return Err(cfg(
                "quadrature.assembly",
                format!("order {} outside 2..={MAX_ORDER}", q.assembly),
            ));
        }
        if !(1..=MAX_ORDER).contains(&q.estimator_order()) {
            return Err(cfg(
                "quadrature.estimator",
                format!("order {} outside 1..={MAX_ORDER}", q.estimator_order()),
            ));
        }

        if self.stop.max_ndof == 0 {
            return Err(cfg("stop.max_ndof", "must be positive".into()));
        }
        if self.stop.max_levels == Some(0) {
            return Err(cfg("stop.max_levels", "must be at least 1".into()));
        }
        if let Some(t) = self.stop.eta_tol {
            if !(t > 0.0) {
                return Err(cfg("stop.eta_tol", format!("must be positive, got {t}")));
            }
        }

        make_problem::<f64>(&self.problem).map_err(|e| match e {
            Error::Config(m) => cfg("problem", m),
            other => other,
        })?;
        if self.problem.manufactured == Some(Manufactured::Bubble) && self.domain != BuiltinDomain::UnitSquare {
            return Err(cfg(
                "problem.manufactured",
                "bubble vanishes on the boundary of unit_square only".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the run history.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord<T> {
    pub level: usize,
    pub n_elements: usize,
    pub n_dofs: usize,
    pub eta_total: T,
    pub error_v: Option<T>,
    pub marked_count: usize,
    pub solver_iterations: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdaptiveHistory<T> {
    pub levels: Vec<LevelRecord<T>>,
}

impl<T: Scalar> AdaptiveHistory<T> {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn first(&self) -> Option<&LevelRecord<T>> {
        self.levels.first()
    }

    pub fn last(&self) -> Option<&LevelRecord<T>> {
        self.levels.last()
    }

    pub fn total_solver_iterations(&self) -> usize {
        self.levels.iter().map(|l| l.solver_iterations).sum()
    }
}

/// Everything computed on one level, handed to an observer after the level
/// is complete.
pub struct LevelData<'a, T> {
    pub level: usize,
    pub mesh: &'a Mesh<T>,
    pub dofmap: &'a DofMap,
    pub problem: &'a Problem<T>,
    pub system: &'a AssembledSystem<T>,
    /// Final coefficients of the level (exact solution or last iterate).
    pub solution: &'a CoefVec<T>,
    pub initial_guess: Option<&'a CoefVec<T>>,
    pub pcg: Option<&'a PcgResult<T>>,
    pub report: &'a EstimatorReport<T>,
    pub record: &'a LevelRecord<T>,
    pub marked: Option<&'a [usize]>,
    /// The next mesh, unless the run stops here.
    pub refined: Option<&'a Mesh<T>>,
}

pub type Observer<'a, T> = dyn FnMut(&LevelData<'_, T>) -> Result<()> + 'a;

/// Optional instrumentation of a run.
#[derive(Default)]
pub struct RunHooks<'a, T> {
    pub observer: Option<&'a mut Observer<'a, T>>,
    /// Keep every PCG iterate in [`LevelData::pcg`].
    pub keep_iterates: bool,
}

pub fn run_exact_adaptive<T: Scalar>(config: &AdaptiveConfig) -> Result<AdaptiveHistory<T>> {
    if config.solver.kind != SolverKind::Exact {
        return Err(Error::Config("solver.kind: expected \"exact\"".into()));
    }
    run_adaptive(config, RunHooks::default())
}

pub fn run_inexact_adaptive<T: Scalar>(config: &AdaptiveConfig) -> Result<AdaptiveHistory<T>> {
    if config.solver.kind != SolverKind::Pcg {
        return Err(Error::Config("solver.kind: expected \"pcg\"".into()));
    }
    run_adaptive(config, RunHooks::default())
}

struct Solved<T> {
    coef: CoefVec<T>,
    iterations: usize,
    x0: Option<CoefVec<T>>,
    pcg: Option<PcgResult<T>>,
}

/// Runs the loop with the solver selected in the configuration.
pub fn run_adaptive<T: Scalar>(config: &AdaptiveConfig, mut hooks: RunHooks<'_, T>) -> Result<AdaptiveHistory<T>> {
    config.validate()?;
    let problem = make_problem::<T>(&config.problem)?;
    let q_asm = config.quadrature.assembly;
    let q_est = config.quadrature.estimator_order();
    let mut history = AdaptiveHistory { levels: Vec::new() };
    let mut mesh = builtin_domain::<T>(config.domain);
    let mut dofmap = DofMap::new(&mesh);
    let mut previous: Option<(Mesh<T>, DofMap, CoefVec<T>)> = None;

    for level in 0.. {
        let at = |e: Error| e.at_level(level);
        let start = Instant::now();
        let system = assemble_system(&mesh, &dofmap, &problem, q_asm).map_err(at)?;
        let solved = match config.solver.kind {
            SolverKind::Exact => Solved {
                coef: exact_solve_factored(&system.matrix, &system.factor, &system.rhs).map_err(at)?,
                iterations: 0,
                x0: None,
                pcg: None,
            },
            SolverKind::Pcg => {
                let x0 = match (&previous, config.solver.nested) {
                    (Some((pm, pd, pc)), true) => prolongate((pm, pd), (&mesh, &dofmap), pc).map_err(at)?,
                    _ => CoefVec::zeros(dofmap.n_total()),
                };
                let eta_at = |x: &[T]| -> Result<T> {
                    let c = CoefVec::from_vec(x.to_vec());
                    Ok(compute_indicators(&mesh, &dofmap, &problem, &c, q_est)?.total)
                };
                let s = &config.solver;
                let stop = match (s.steps, s.lambda) {
                    (Some(n), _) => StopRule::Fixed(n),
                    (None, Some(lambda)) => StopRule::Increment {
                        lambda: T::lit(lambda),
                        eta: match s.eta_reference {
                            EtaVariant::Current => EtaReference::Current(&eta_at),
                            EtaVariant::Initial => EtaReference::Fixed(eta_at(&x0.values).map_err(at)?),
                        },
                        max_iter: s.max_iterations,
                    },
                    (None, None) => unreachable!("validated"),
                };
                let options = PcgOptions {
                    keep_iterates: hooks.keep_iterates,
                    reference: None,
                };
                let result = pcg_run(&system.matrix, &system.rhs, s.preconditioner, &x0, &stop, options)
                    .map_err(at)?;
                Solved {
                    coef: result.solution.clone(),
                    iterations: result.iterations,
                    x0: Some(x0),
                    pcg: Some(result),
                }
            }
        };
        let report = compute_indicators(&mesh, &dofmap, &problem, &solved.coef, q_est).map_err(at)?;

        let eta_done = config
            .stop
            .eta_tol
            .is_some_and(|tol| report.total.as_f64() <= tol);
        let levels_done = config.stop.max_levels.is_some_and(|m| level + 1 >= m);
        let mut marked = None;
        let mut refined = None;
        if !eta_done && !levels_done {
            let (m, next) = match config.refinement {
                RefinementKind::Adaptive => {
                    let m = mark(&config.marking.spec_at(level), &report).map_err(at)?;
                    let next = refine_nvb(&mesh, &m).map_err(at)?;
                    (m, next)
                }
                RefinementKind::Uniform => ((0..mesh.n_elements()).collect(), refine_uniform(&mesh)),
            };
            let next_dofmap = DofMap::new(&next);
            if next_dofmap.n_total() <= config.stop.max_ndof {
                refined = Some((next, next_dofmap));
            }
            marked = Some(m);
        }
        let wall_time_s = start.elapsed().as_secs_f64();

        let error_v = match &problem.exact {
            Some(exact) => Some(
                compute_error_norms(&mesh, &dofmap, &solved.coef, Some(exact), q_est)
                    .map_err(at)?
                    .total,
            ),
            None => None,
        };
        let record = LevelRecord {
            level,
            n_elements: mesh.n_elements(),
            n_dofs: dofmap.n_total(),
            eta_total: report.total,
            error_v,
            marked_count: marked.as_ref().map_or(0, |m| m.len()),
            solver_iterations: solved.iterations,
            wall_time_s,
        };
        if let Some(obs) = hooks.observer.as_mut() {
            obs(&LevelData {
                level,
                mesh: &mesh,
                dofmap: &dofmap,
                problem: &problem,
                system: &system,
                solution: &solved.coef,
                initial_guess: solved.x0.as_ref(),
                pcg: solved.pcg.as_ref(),
                report: &report,
                record: &record,
                marked: marked.as_deref(),
                refined: refined.as_ref().map(|(m, _)| m),
            })
            .map_err(at)?;
        }
        history.levels.push(record);

        match refined {
            Some((next, next_dofmap)) => {
                let old_mesh = std::mem::replace(&mut mesh, next);
                let old_dofmap = std::mem::replace(&mut dofmap, next_dofmap);
                previous = Some((old_mesh, old_dofmap, solved.coef));
            }
            None => break,
        }
    }
    Ok(history)
}
