//! The verification campaign: fixed experiments, measured constants and
//! budgets, and a pass/fail verdict per check.

use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    discrete_reliability_check, fit_rate, interpolation_rate_check,
    local_efficiency_check, min_angle_history, pythagoras_check, refinement_axioms, sandwich_constants,
    LevelSolution, RateQuantity, RefinementAxioms,
};
use crate::assembly::assemble_system;
use crate::cli_io::history_row;
use crate::driver::{run_adaptive, AdaptiveConfig, AdaptiveHistory, LevelData, RefinementKind, RunHooks, SolverConfig};
use crate::error::{Error, Result};
use crate::estimator::EstimatorReport;
use crate::marking::{doerfler_bruteforce, mark, verify_marking_axiom, MarkingSpec, MarkingStrategy};
use crate::mesh::{builtin_domain, refine_nvb, refine_uniform, BuiltinDomain, Mesh};
use crate::problems::{make_problem, CoefSpec, Manufactured, ProblemSpec};
use crate::solver::{estimate_pcg_contraction, exact_solve_factored, pcg_run, PcgOptions, PrecondKind, StopRule};
use crate::spaces::{CoefVec, DofMap};

/// Every measured constant is compared against one of these values.
#[derive(Clone, Debug, PartialEq)]
pub struct Budgets {
    pub seed: u64,
    pub max_ndof: usize,
    pub lshape_uniform_max_ndof: usize,
    /// Required `final / initial` reduction of eta and error.
    pub reduction: f64,
    pub plain_runtime_s: f64,
    pub inexact_runtime_s: f64,
    pub sandwich_min_dofs: usize,
    pub sandwich_spread: f64,
    pub helmholtz_spread: f64,
    pub helmholtz_omega: f64,
    pub rate_tail: usize,
    pub smooth_rate: (f64, f64),
    pub uniform_singular_rate: (f64, f64),
    pub adaptive_singular_rate_max: f64,
    pub contraction_max_dofs: usize,
    pub contraction_slack: f64,
    /// Relative residual at which the reference PCG runs stop, well above
    /// the level where rounding dominates the energy error.
    pub contraction_residual_tol: f64,
    pub random_vectors: usize,
    pub random_vector_max_len: usize,
    pub bruteforce_max_len: usize,
    pub uniform_refinements: usize,
    pub pythagoras_trials: usize,
    pub pythagoras_tol: f64,
    pub drel_instances: usize,
    pub drel_level: usize,
    pub drel_max: f64,
    pub drel_spread: f64,
    pub drel_cardinality: f64,
    pub interpolation_skip: usize,
    pub interpolation_levels: usize,
    pub interpolation_rate: (f64, f64),
    pub local_efficiency_variation: f64,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            seed: 20240521,
            max_ndof: 20_000,
            lshape_uniform_max_ndof: 60_000,
            reduction: 0.05,
            plain_runtime_s: 60.0,
            inexact_runtime_s: 120.0,
            sandwich_min_dofs: 100,
            sandwich_spread: 3.0,
            helmholtz_spread: 5.0,
            helmholtz_omega: 3.0,
            rate_tail: 5,
            smooth_rate: (-0.6, -0.4),
            uniform_singular_rate: (-0.40, -0.26),
            adaptive_singular_rate_max: -0.45,
            contraction_max_dofs: 5000,
            contraction_slack: 1e-8,
            contraction_residual_tol: 1e-8,
            random_vectors: 1000,
            random_vector_max_len: 40,
            bruteforce_max_len: 12,
            uniform_refinements: 10,
            pythagoras_trials: 20,
            pythagoras_tol: 1e-8,
            drel_instances: 20,
            drel_level: 4,
            drel_max: 100.0,
            drel_spread: 4.0,
            drel_cardinality: 20.0,
            interpolation_skip: 3,
            interpolation_levels: 7,
            interpolation_rate: (0.85, 1.15),
            local_efficiency_variation: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Check {
    PlainConvergence,
    InexactConvergence,
    Sandwich,
    SmoothRate,
    SingularRate,
    PcgContraction,
    MarkingAxiom,
    DoerflerMinimal,
    MeshAxioms,
    GalerkinPythagoras,
    DiscreteReliability,
    InterpolationRates,
    Helmholtz,
    Determinism,
    LocalEfficiency,
}

impl Check {
    pub const ALL: [Check; 15] = [
        Check::PlainConvergence,
        Check::InexactConvergence,
        Check::Sandwich,
        Check::SmoothRate,
        Check::SingularRate,
        Check::PcgContraction,
        Check::MarkingAxiom,
        Check::DoerflerMinimal,
        Check::MeshAxioms,
        Check::GalerkinPythagoras,
        Check::DiscreteReliability,
        Check::InterpolationRates,
        Check::Helmholtz,
        Check::Determinism,
        Check::LocalEfficiency,
    ];

    /// Acceptance criterion number, if the check is one.
    pub fn criterion(self) -> Option<usize> {
        Check::ALL[..14].iter().position(|&c| c == self).map(|i| i + 1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::PlainConvergence => "plain_convergence",
            Check::InexactConvergence => "inexact_convergence",
            Check::Sandwich => "sandwich",
            Check::SmoothRate => "smooth_rate",
            Check::SingularRate => "singular_rate",
            Check::PcgContraction => "pcg_contraction",
            Check::MarkingAxiom => "marking_axiom",
            Check::DoerflerMinimal => "doerfler_minimal",
            Check::MeshAxioms => "mesh_axioms",
            Check::GalerkinPythagoras => "galerkin_pythagoras",
            Check::DiscreteReliability => "discrete_reliability",
            Check::InterpolationRates => "interpolation_rates",
            Check::Helmholtz => "helmholtz",
            Check::Determinism => "determinism",
            Check::LocalEfficiency => "local_efficiency",
        }
    }

    pub fn suite(self) -> Suite {
        match self {
            Check::MeshAxioms => Suite::Mesh,
            Check::MarkingAxiom | Check::DoerflerMinimal => Suite::Marking,
            Check::InexactConvergence | Check::PcgContraction | Check::Determinism => Suite::Solver,
            Check::GalerkinPythagoras => Suite::Identities,
            Check::Sandwich | Check::DiscreteReliability | Check::LocalEfficiency => Suite::Reliability,
            Check::PlainConvergence
            | Check::SmoothRate
            | Check::SingularRate
            | Check::InterpolationRates
            | Check::Helmholtz => Suite::Rates,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Suite {
    All,
    Mesh,
    Marking,
    Solver,
    Identities,
    Reliability,
    Rates,
}

impl Suite {
    pub fn checks(self) -> Vec<Check> {
        Check::ALL
            .iter()
            .copied()
            .filter(|c| self == Suite::All || c.suite() == self)
            .collect()
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => Suite::All,
            "mesh" => Suite::Mesh,
            "marking" => Suite::Marking,
            "solver" => Suite::Solver,
            "identities" => Suite::Identities,
            "reliability" => Suite::Reliability,
            "rates" => Suite::Rates,
            _ => return Err(Error::Argument(format!("unknown suite \"{s}\""))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skipped => "SKIPPED",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub check: Check,
    pub status: Status,
    /// Measured constants and the budgets they were compared with.
    pub detail: String,
}

impl CheckResult {
    fn verdict(check: Check, ok: bool, detail: String) -> Self {
        Self {
            check,
            status: if ok { Status::Pass } else { Status::Fail },
            detail,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.check.criterion() {
            Some(n) => write!(f, "criterion {n:>2} {:<21}", self.check.name())?,
            None => write!(f, "extra        {:<21}", self.check.name())?,
        }
        write!(f, " {:<7} {}", self.status.to_string(), self.detail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub results: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn get(&self, check: Check) -> Option<&CheckResult> {
        self.results.iter().find(|r| r.check == check)
    }

    pub fn failed(&self) -> Vec<Check> {
        self.results
            .iter()
            .filter(|r| r.status == Status::Fail)
            .map(|r| r.check)
            .collect()
    }

    pub fn all_passed(&self) -> bool {
        self.failed().is_empty()
    }

    /// One line per check.
    pub fn to_text(&self) -> String {
        self.results.iter().map(|r| format!("{r}\n")).collect()
    }
}

pub fn run_all(budgets: &Budgets) -> VerificationReport {
    run_suite(Suite::All, budgets)
}

pub fn run_suite(suite: Suite, budgets: &Budgets) -> VerificationReport {
    let mut campaign = Campaign::new(budgets.clone());
    let results = suite
        .checks()
        .into_iter()
        .map(|check| campaign.evaluate(check))
        .collect();
    VerificationReport { results }
}

/// The experiments behind the checks, each run at most once.
pub struct Campaign {
    budgets: Budgets,
    runs: [Option<Result<RunOutcome>>; RunId::COUNT],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum RunId {
    Plain,
    Inexact,
    LShapeAdaptive,
    LShapeUniform,
    Helmholtz,
    PlainRepeat,
}

impl RunId {
    const COUNT: usize = 6;
    const WITH_REFINEMENT: [RunId; 5] = [
        RunId::Plain,
        RunId::Inexact,
        RunId::LShapeAdaptive,
        RunId::LShapeUniform,
        RunId::Helmholtz,
    ];

    fn name(self) -> &'static str {
        match self {
            RunId::Plain => "smooth exact",
            RunId::Inexact => "smooth pcg",
            RunId::LShapeAdaptive => "lshape adaptive",
            RunId::LShapeUniform => "lshape uniform",
            RunId::Helmholtz => "helmholtz",
            RunId::PlainRepeat => "smooth exact (repeat)",
        }
    }
}

struct Snapshot {
    mesh: Mesh<f64>,
    dofmap: DofMap,
    coef: CoefVec<f64>,
    report: EstimatorReport<f64>,
}

#[derive(Clone, Debug)]
struct ContractionProbe {
    level: usize,
    n_dofs: usize,
    c_pcg: f64,
    q_ctr: f64,
    steps: usize,
    /// Largest `(||e_{n+1}||_A / ||e_n||_A) / q_ctr` over the steps.
    worst: f64,
}

#[derive(Default)]
struct Probes {
    marking_levels: usize,
    marking_failures: Vec<usize>,
    axioms: RefinementAxioms,
    refinements: usize,
    contraction: Vec<ContractionProbe>,
    snapshot: Option<Snapshot>,
    local_efficiency: Vec<(usize, f64)>,
    observer_seconds: f64,
}

#[derive(Clone, Copy, Default)]
struct ProbeOptions {
    contraction_exact: bool,
    contraction_pcg: bool,
    snapshot_level: Option<usize>,
    local_efficiency: bool,
    estimator_order: usize,
}

struct RunOutcome {
    history: AdaptiveHistory<f64>,
    /// Wall time of the run without the observer.
    seconds: f64,
    probes: Probes,
}

fn smooth_config(b: &Budgets) -> AdaptiveConfig {
    let mut c = AdaptiveConfig::new(
        BuiltinDomain::UnitSquare,
        ProblemSpec::poisson_manufactured(Manufactured::Bubble),
    );
    c.stop.max_ndof = b.max_ndof;
    c
}

fn run_config(id: RunId, b: &Budgets) -> AdaptiveConfig {
    match id {
        RunId::Plain | RunId::PlainRepeat => smooth_config(b),
        RunId::Inexact => {
            let mut c = smooth_config(b);
            c.solver = SolverConfig::pcg_fixed(1);
            c
        }
        RunId::LShapeAdaptive | RunId::LShapeUniform => {
            let mut c = AdaptiveConfig::new(BuiltinDomain::LShape, ProblemSpec::poisson_load(CoefSpec::Number(1.0)));
            c.stop.max_ndof = b.max_ndof;
            if id == RunId::LShapeUniform {
                c.refinement = RefinementKind::Uniform;
                c.stop.max_ndof = b.lshape_uniform_max_ndof;
            }
            c
        }
        RunId::Helmholtz => {
            let mut c = AdaptiveConfig::new(
                BuiltinDomain::UnitSquare,
                ProblemSpec::helmholtz(b.helmholtz_omega, None, Some(Manufactured::Sine)),
            );
            c.stop.max_ndof = b.max_ndof;
            c
        }
    }
}

fn probe_options(id: RunId, b: &Budgets) -> ProbeOptions {
    match id {
        RunId::Plain => ProbeOptions {
            contraction_exact: true,
            snapshot_level: Some(b.drel_level),
            local_efficiency: true,
            ..Default::default()
        },
        RunId::Inexact => ProbeOptions {
            contraction_pcg: true,
            ..Default::default()
        },
        _ => ProbeOptions::default(),
    }
}

fn ratio_steps(errors: &[f64], q: f64) -> f64 {
    errors
        .windows(2)
        .filter(|w| w[0] > 0.0)
        .map(|w| w[1] / w[0] / q)
        .fold(0.0, f64::max)
}

fn observe(probes: &mut Probes, opts: ProbeOptions, b: &Budgets, data: &LevelData<'_, f64>) -> Result<()> {
    if let (Some(marked), Some(fine)) = (data.marked, data.refined) {
        probes.marking_levels += 1;
        if !verify_marking_axiom(data.report, marked)? {
            probes.marking_failures.push(data.level);
        }
        probes.axioms.accumulate(&refinement_axioms(data.mesh, marked, fine)?);
        probes.refinements += 1;
    }
    let n = data.dofmap.n_total();
    if (opts.contraction_exact || opts.contraction_pcg) && n <= b.contraction_max_dofs {
        let est = estimate_pcg_contraction(&data.system.matrix, PrecondKind::Jacobi)?;
        let q = est.q_ctr.max(f64::MIN_POSITIVE);
        let (steps, worst) = if opts.contraction_exact {
            let stop = StopRule::ResidualTol {
                tol: b.contraction_residual_tol,
                max_iter: 10 * n + 10,
            };
            let options = PcgOptions {
                keep_iterates: false,
                reference: Some(&data.solution.values),
            };
            let x0 = CoefVec::zeros(n);
            let r = pcg_run(&data.system.matrix, &data.system.rhs, PrecondKind::Jacobi, &x0, &stop, options)?;
            let errors = r.energy_errors.unwrap_or_default();
            (r.iterations, ratio_steps(&errors, q))
        } else {
            let x_star = exact_solve_factored(&data.system.matrix, &data.system.factor, &data.system.rhs)?;
            let x0 = data
                .initial_guess
                .ok_or_else(|| Error::Argument("PCG level without initial guess".into()))?;
            let err = |x: &CoefVec<f64>| {
                let d: Vec<f64> = x_star.values.iter().zip(&x.values).map(|(a, b)| a - b).collect();
                data.system.matrix.energy_norm(&d)
            };
            let steps = data.pcg.map_or(0, |p| p.iterations);
            (steps, ratio_steps(&[err(x0), err(data.solution)], q))
        };
        probes.contraction.push(ContractionProbe {
            level: data.level,
            n_dofs: n,
            c_pcg: est.c_pcg,
            q_ctr: est.q_ctr,
            steps,
            worst,
        });
    }
    if opts.snapshot_level == Some(data.level) {
        probes.snapshot = Some(Snapshot {
            mesh: data.mesh.clone(),
            dofmap: data.dofmap.clone(),
            coef: data.solution.clone(),
            report: data.report.clone(),
        });
    }
    if opts.local_efficiency {
        let eff = local_efficiency_check(data.mesh, data.dofmap, data.problem, data.solution, opts.estimator_order)?;
        probes.local_efficiency.push((data.level, eff.max));
    }
    Ok(())
}

fn fmt_range(r: (f64, f64)) -> String {
    format!("[{}, {}]", r.0, r.1)
}

impl Campaign {
    pub fn new(budgets: Budgets) -> Self {
        Self {
            budgets,
            runs: Default::default(),
        }
    }

    fn run(&mut self, id: RunId) -> std::result::Result<&RunOutcome, String> {
        let slot = &mut self.runs[id as usize];
        if slot.is_none() {
            let b = &self.budgets;
            let config = run_config(id, b);
            let opts = ProbeOptions {
                estimator_order: config.quadrature.estimator_order(),
                ..probe_options(id, b)
            };
            let mut probes = Probes::default();
            let start = Instant::now();
            let history = if id == RunId::PlainRepeat {
                run_adaptive::<f64>(&config, RunHooks::default())
            } else {
                let mut obs = |d: &LevelData<'_, f64>| {
                    let t = Instant::now();
                    let r = observe(&mut probes, opts, b, d);
                    probes.observer_seconds += t.elapsed().as_secs_f64();
                    r
                };
                run_adaptive::<f64>(
                    &config,
                    RunHooks {
                        observer: Some(&mut obs),
                        keep_iterates: false,
                    },
                )
            };
            let elapsed = start.elapsed().as_secs_f64();
            *slot = Some(history.map(|history| RunOutcome {
                history,
                seconds: elapsed - probes.observer_seconds,
                probes,
            }));
        }
        match slot.as_ref().expect("filled above") {
            Ok(o) => Ok(o),
            Err(e) => Err(format!("{} run failed: {e}", id.name())),
        }
    }

    pub fn evaluate(&mut self, check: Check) -> CheckResult {
        match self.measure(check) {
            Ok(r) => r,
            Err(detail) => CheckResult {
                check,
                status: Status::Fail,
                detail,
            },
        }
    }

    fn measure(&mut self, check: Check) -> std::result::Result<CheckResult, String> {
        let b = self.budgets.clone();
        let s = |e: Error| e.to_string();
        Ok(match check {
            Check::PlainConvergence => self.convergence(check, RunId::Plain, b.plain_runtime_s, None)?,
            Check::InexactConvergence => self.convergence(check, RunId::Inexact, b.inexact_runtime_s, None)?,
            Check::Helmholtz => self.convergence(check, RunId::Helmholtz, b.plain_runtime_s, Some(b.helmholtz_spread))?,
            Check::Sandwich => {
                let h = &self.run(RunId::Plain)?.history;
                let sw = sandwich_constants(h, b.sandwich_min_dofs).map_err(s)?;
                CheckResult::verdict(
                    check,
                    sw.spread <= b.sandwich_spread,
                    format!(
                        "eta/error in [{:.4}, {:.4}] over {} levels, spread {:.4} (budget {})",
                        sw.min,
                        sw.max,
                        sw.ratios.len(),
                        sw.spread,
                        b.sandwich_spread
                    ),
                )
            }
            Check::SmoothRate => {
                let h = &self.run(RunId::Plain)?.history;
                let fit = fit_rate(h, RateQuantity::Eta, b.rate_tail).map_err(s)?;
                CheckResult::verdict(
                    check,
                    (b.smooth_rate.0..=b.smooth_rate.1).contains(&fit.slope),
                    format!(
                        "eta rate {:.4} (r2 {:.4}) over last {} levels, budget {}",
                        fit.slope,
                        fit.r_squared,
                        fit.levels_used,
                        fmt_range(b.smooth_rate)
                    ),
                )
            }
            Check::SingularRate => {
                let uni = fit_rate(&self.run(RunId::LShapeUniform)?.history, RateQuantity::Eta, b.rate_tail).map_err(s)?;
                let ada = fit_rate(&self.run(RunId::LShapeAdaptive)?.history, RateQuantity::Eta, b.rate_tail).map_err(s)?;
                let ok = (b.uniform_singular_rate.0..=b.uniform_singular_rate.1).contains(&uni.slope)
                    && ada.slope <= b.adaptive_singular_rate_max
                    && ada.slope < uni.slope;
                CheckResult::verdict(
                    check,
                    ok,
                    format!(
                        "uniform rate {:.4} (budget {}), adaptive rate {:.4} (budget <= {})",
                        uni.slope,
                        fmt_range(b.uniform_singular_rate),
                        ada.slope,
                        b.adaptive_singular_rate_max
                    ),
                )
            }
            Check::PcgContraction => {
                let mut probes: Vec<ContractionProbe> = Vec::new();
                for id in [RunId::Plain, RunId::Inexact] {
                    probes.extend(self.run(id)?.probes.contraction.iter().cloned());
                }
                if probes.is_empty() {
                    return Ok(CheckResult {
                        check,
                        status: Status::Skipped,
                        detail: "no system small enough".into(),
                    });
                }
                let worst = probes.iter().map(|p| p.worst).fold(0.0, f64::max);
                let cmax = probes.iter().map(|p| p.c_pcg).fold(0.0, f64::max);
                let steps: usize = probes.iter().map(|p| p.steps).sum();
                let bad: Vec<String> = probes
                    .iter()
                    .filter(|p| p.worst > 1.0 + b.contraction_slack)
                    .map(|p| format!("level {} ({} dofs, q {:.6})", p.level, p.n_dofs, p.q_ctr))
                    .collect();
                CheckResult::verdict(
                    check,
                    bad.is_empty(),
                    format!(
                        "{} systems, {steps} steps, max C_pcg {cmax:.4e}, max step ratio / q_ctr {worst:.10}{}",
                        probes.len(),
                        if bad.is_empty() {
                            String::new()
                        } else {
                            format!(", violations at {}", bad.join(", "))
                        }
                    ),
                )
            }
            Check::MarkingAxiom => self.marking_axiom(check)?,
            Check::DoerflerMinimal => {
                let mut rng = ChaCha8Rng::seed_from_u64(b.seed ^ 0x8);
                let mut mismatches = 0;
                for _ in 0..b.random_vectors {
                    let (report, theta) = random_indicators(&mut rng, b.bruteforce_max_len);
                    let spec = MarkingSpec::new(MarkingStrategy::Doerfler, theta).map_err(s)?;
                    let greedy = mark(&spec, &report).map_err(s)?.len();
                    let brute = doerfler_bruteforce(&report, theta).map_err(s)?.len();
                    if greedy != brute {
                        mismatches += 1;
                    }
                }
                CheckResult::verdict(
                    check,
                    mismatches == 0,
                    format!(
                        "{mismatches} cardinality mismatches in {} vectors of length <= {}",
                        b.random_vectors, b.bruteforce_max_len
                    ),
                )
            }
            Check::MeshAxioms => {
                let mut total = RefinementAxioms::default();
                let mut refinements = 0;
                for id in RunId::WITH_REFINEMENT {
                    let p = &self.run(id)?.probes;
                    total.accumulate(&p.axioms);
                    refinements += p.refinements;
                }
                let mut angle_drops = Vec::new();
                for domain in [BuiltinDomain::UnitSquare, BuiltinDomain::LShape] {
                    let angles = min_angle_history(domain, b.uniform_refinements);
                    let floor = angles[2.min(angles.len() - 1)];
                    let lowest = angles[2..].iter().copied().fold(f64::INFINITY, f64::min);
                    if lowest < floor * (1.0 - 1e-12) {
                        angle_drops.push(format!("{}: {lowest} < {floor}", domain.name()));
                    }
                }
                CheckResult::verdict(
                    check,
                    total.holds() && angle_drops.is_empty(),
                    format!(
                        "{refinements} refinements, {} bisected children: conformity violations {}, marked survivors {}, \
                         contraction failures {}, min-angle drops {}",
                        total.bisected_children,
                        total.conformity_violations,
                        total.marked_survivors,
                        total.contraction_failures,
                        if angle_drops.is_empty() { "none".to_string() } else { angle_drops.join("; ") }
                    ),
                )
            }
            Check::GalerkinPythagoras => galerkin_pythagoras(check, &b).map_err(s)?,
            Check::DiscreteReliability => self.discrete_reliability(check)?,
            Check::InterpolationRates => {
                let r = interpolation_rate_check::<f64>(b.interpolation_skip, b.interpolation_levels, 6).map_err(s)?;
                let range = b.interpolation_rate.0..=b.interpolation_rate.1;
                CheckResult::verdict(
                    check,
                    range.contains(&r.h1.slope) && range.contains(&r.hdiv.slope),
                    format!(
                        "nodal H1 rate {:.4}, RT H(div) rate {:.4}, budget {}",
                        r.h1.slope,
                        r.hdiv.slope,
                        fmt_range(b.interpolation_rate)
                    ),
                )
            }
            Check::Determinism => {
                let rows = |h: &AdaptiveHistory<f64>| -> Vec<String> { h.levels.iter().map(|r| history_row(r, true)).collect() };
                let first = rows(&self.run(RunId::Plain)?.history);
                let second = rows(&self.run(RunId::PlainRepeat)?.history);
                let differing = first.iter().zip(&second).filter(|(a, b)| a != b).count();
                CheckResult::verdict(
                    check,
                    first == second,
                    format!(
                        "{} vs {} rows, {differing} differing under timing stripping",
                        first.len(),
                        second.len()
                    ),
                )
            }
            Check::LocalEfficiency => {
                let eff = &self.run(RunId::Plain)?.probes.local_efficiency;
                let finite = eff.iter().all(|e| e.1.is_finite());
                let variation = eff
                    .windows(2)
                    .filter(|w| w[0].1 > 0.0 && w[1].1 > 0.0)
                    .map(|w| (w[1].1 / w[0].1).max(w[0].1 / w[1].1))
                    .fold(1.0, f64::max);
                let max = eff.iter().map(|e| e.1).fold(0.0, f64::max);
                CheckResult::verdict(
                    check,
                    finite && variation <= b.local_efficiency_variation,
                    format!(
                        "max C_loc {max:.4} over {} levels, consecutive variation {variation:.4} (budget {})",
                        eff.len(),
                        b.local_efficiency_variation
                    ),
                )
            }
        })
    }

    fn convergence(
        &mut self,
        check: Check,
        id: RunId,
        runtime: f64,
        spread_budget: Option<f64>,
    ) -> std::result::Result<CheckResult, String> {
        let b = self.budgets.clone();
        let o = self.run(id)?;
        let (first, last) = match (o.history.first(), o.history.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err("empty history".into()),
        };
        let eta_ratio = last.eta_total / first.eta_total;
        let mut ok = eta_ratio <= b.reduction && o.seconds <= runtime;
        let mut detail = format!(
            "{} levels to {} dofs: eta {:.5e} -> {:.5e} (ratio {eta_ratio:.4})",
            o.history.len(),
            last.n_dofs,
            first.eta_total,
            last.eta_total
        );
        if let (Some(e0), Some(e1)) = (first.error_v, last.error_v) {
            let err_ratio = e1 / e0;
            ok &= err_ratio <= b.reduction;
            detail += &format!(", error {e0:.5e} -> {e1:.5e} (ratio {err_ratio:.4})");
        }
        detail += &format!(", budget {}, {:.2} s (budget {runtime} s)", b.reduction, o.seconds);
        if check == Check::InexactConvergence {
            detail += &format!(", {} PCG steps", o.history.total_solver_iterations());
        }
        if let Some(budget) = spread_budget {
            match sandwich_constants(&o.history, b.sandwich_min_dofs) {
                Ok(sw) => {
                    ok &= sw.spread <= budget && sw.max.is_finite();
                    detail += &format!(", sandwich spread {:.4} (budget {budget})", sw.spread);
                }
                Err(e) => {
                    ok = false;
                    detail += &format!(", sandwich: {e}");
                }
            }
        }
        Ok(CheckResult::verdict(check, ok, detail))
    }

    fn marking_axiom(&mut self, check: Check) -> std::result::Result<CheckResult, String> {
        let b = self.budgets.clone();
        let s = |e: Error| e.to_string();
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed ^ 0x7);
        let mut random_failures = 0;
        for _ in 0..b.random_vectors {
            let (report, theta) = random_indicators(&mut rng, b.random_vector_max_len);
            for strategy in [MarkingStrategy::Maximum, MarkingStrategy::Equilibration, MarkingStrategy::Doerfler] {
                let spec = MarkingSpec::new(strategy, theta).map_err(s)?;
                if !verify_marking_axiom(&report, &mark(&spec, &report).map_err(s)?).map_err(s)? {
                    random_failures += 1;
                }
            }
        }
        let mut levels = 0;
        let mut level_failures = Vec::new();
        for id in [RunId::Plain, RunId::Inexact, RunId::LShapeAdaptive] {
            let p = &self.run(id)?.probes;
            levels += p.marking_levels;
            level_failures.extend(p.marking_failures.iter().map(|l| format!("{} level {l}", id.name())));
        }
        Ok(CheckResult::verdict(
            check,
            random_failures == 0 && level_failures.is_empty(),
            format!(
                "{random_failures} failures on {} random vectors x 3 strategies; {} failures on {levels} run levels{}",
                b.random_vectors,
                level_failures.len(),
                if level_failures.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", level_failures.join(", "))
                }
            ),
        ))
    }

    fn discrete_reliability(&mut self, check: Check) -> std::result::Result<CheckResult, String> {
        let b = self.budgets.clone();
        let s = |e: Error| e.to_string();
        let config = run_config(RunId::Plain, &b);
        let q_asm = config.quadrature.assembly;
        let q_est = config.quadrature.estimator_order();
        let problem = make_problem::<f64>(&config.problem).map_err(s)?;
        let snap = self
            .run(RunId::Plain)?
            .probes
            .snapshot
            .as_ref()
            .ok_or_else(|| format!("run stopped before level {}", b.drel_level))?;
        let coarse = LevelSolution {
            mesh: &snap.mesh,
            dofmap: &snap.dofmap,
            coef: &snap.coef,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(b.seed ^ 0xd);
        let n = snap.mesh.n_elements();
        let mut constants = Vec::new();
        let mut worst_card: f64 = 0.0;
        let mut degenerate = 0;
        for _ in 0..b.drel_instances {
            let mut all: Vec<usize> = (0..n).collect();
            all.shuffle(&mut rng);
            let k = rng.gen_range(1..=n.div_ceil(2));
            let marked = &all[..k];
            let fine_mesh = refine_nvb(&snap.mesh, marked).map_err(s)?;
            let fine_dm = DofMap::new(&fine_mesh);
            let sys = assemble_system(&fine_mesh, &fine_dm, &problem, q_asm).map_err(s)?;
            let fine_coef = exact_solve_factored(&sys.matrix, &sys.factor, &sys.rhs).map_err(s)?;
            let fine = LevelSolution {
                mesh: &fine_mesh,
                dofmap: &fine_dm,
                coef: &fine_coef,
            };
            let d = discrete_reliability_check(coarse, &snap.report, fine, q_est).map_err(s)?;
            match d.cardinality_ratio {
                Some(c) => worst_card = worst_card.max(c),
                None => degenerate += 1,
            }
            if d.c_drel > 0.0 {
                constants.push(d.c_drel);
            } else {
                degenerate += 1;
            }
        }
        if constants.is_empty() {
            return Ok(CheckResult {
                check,
                status: Status::Skipped,
                detail: "every instance degenerate".into(),
            });
        }
        let cmax = constants.iter().copied().fold(0.0, f64::max);
        let cmin = constants.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = cmax / cmin;
        Ok(CheckResult::verdict(
            check,
            cmax <= b.drel_max && spread <= b.drel_spread && worst_card <= b.drel_cardinality && degenerate == 0,
            format!(
                "{} pairs from a {n}-element level-{} mesh: C_drel in [{cmin:.4}, {cmax:.4}] (budget {}), spread {spread:.4} \
                 (budget {}), max #R/added {worst_card:.4} (budget {}), degenerate {degenerate}",
                constants.len(),
                b.drel_level,
                b.drel_max,
                b.drel_spread,
                b.drel_cardinality
            ),
        ))
    }
}

/// Random indicators with occasional ties and zeros, and a random
/// parameter in `(0, 1]`.
fn random_indicators(rng: &mut ChaCha8Rng, max_len: usize) -> (EstimatorReport<f64>, f64) {
    let len = rng.gen_range(1..=max_len);
    let coarse = rng.gen_bool(0.3);
    let values = (0..len)
        .map(|_| {
            let v: f64 = rng.gen_range(0.0..1.0);
            if coarse {
                (v * 4.0).floor() / 4.0
            } else {
                v
            }
        })
        .collect();
    let theta = 1.0 - rng.gen_range(0.0..1.0);
    (EstimatorReport::from_indicators(values), theta)
}

fn galerkin_pythagoras(check: Check, b: &Budgets) -> Result<CheckResult> {
    let bubble = ProblemSpec::poisson_manufactured(Manufactured::Bubble);
    let sine = ProblemSpec::poisson_manufactured(Manufactured::Sine);
    let helmholtz = ProblemSpec::helmholtz(b.helmholtz_omega, None, Some(Manufactured::Sine));
    let square = builtin_domain::<f64>(BuiltinDomain::UnitSquare);
    let nvb = refine_nvb(&refine_nvb(&refine_uniform(&square), &[0])?, &[0, 3])?;
    let fixtures = [
        ("unit square x2", refine_uniform(&refine_uniform(&square)), bubble),
        (
            "lshape x1",
            refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape)),
            sine,
        ),
        ("nvb unit square", nvb, helmholtz),
    ];
    let q = crate::assembly::DEFAULT_QUAD_ORDER;
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (i, (name, mesh, spec)) in fixtures.iter().enumerate() {
        let problem = make_problem::<f64>(spec)?;
        let dm = DofMap::new(mesh);
        let seed = b.seed.wrapping_add(i as u64);
        let p = pythagoras_check(mesh, &dm, &problem, b.pythagoras_trials, seed, q)?;
        let defect = p.max_defect.max(p.defect_at_solution);
        worst = worst.max(defect);
        parts.push(format!("{name} {defect:.2e}"));
    }
    Ok(CheckResult::verdict(
        check,
        worst <= b.pythagoras_tol,
        format!(
            "max relative defect {worst:.3e} over {} trials on 3 meshes (budget {}); {}",
            b.pythagoras_trials,
            b.pythagoras_tol,
            parts.join(", ")
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Budgets {
        Budgets {
            max_ndof: 2000,
            lshape_uniform_max_ndof: 4000,
            random_vectors: 50,
            drel_instances: 4,
            drel_level: 2,
            ..Budgets::default()
        }
    }

    #[test]
    fn suites_partition_checks() {
        let mut all: Vec<Check> = [
            Suite::Mesh,
            Suite::Marking,
            Suite::Solver,
            Suite::Identities,
            Suite::Reliability,
            Suite::Rates,
        ]
        .iter()
        .flat_map(|s| s.checks())
        .collect();
        all.sort();
        assert_eq!(all, Suite::All.checks());
        assert_eq!(Check::Determinism.criterion(), Some(14));
        assert_eq!(Check::LocalEfficiency.criterion(), None);
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass_on_small_budgets() {
        let b = small();
        for suite in [Suite::Mesh, Suite::Marking, Suite::Identities] {
            let r = run_suite(suite, &b);
            assert!(r.all_passed(), "{}", r.to_text());
        }
    }

    #[test]
    fn report_lists_one_line_per_check() {
        let r = run_suite(Suite::Marking, &small());
        let text = r.to_text();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.starts_with("criterion")));
    }

    #[test]
    fn sine_helmholtz_fixture_is_not_resonant() {
        // 2 pi^2 is the smallest Dirichlet eigenvalue of the unit square
        let omega = Budgets::default().helmholtz_omega;
        assert!(omega * omega < 2.0 * std::f64::consts::PI.powi(2));
    }
}
