use lsafem::cli_io::{parse_history, write_history, HISTORY_HEADER};
use lsafem::driver::{run_adaptive, AdaptiveConfig, EtaVariant, RunHooks, SolverConfig};
use lsafem::mesh::BuiltinDomain;
use lsafem::problems::{CoefSpec, Manufactured, ProblemSpec};

fn smooth(max_ndof: usize) -> AdaptiveConfig {
    let mut c = AdaptiveConfig::new(
        BuiltinDomain::UnitSquare,
        ProblemSpec::poisson_manufactured(Manufactured::Bubble),
    );
    c.stop.max_ndof = max_ndof;
    c
}

#[test]
fn lshape_history_round_trips_with_blank_errors() {
    let mut c = AdaptiveConfig::new(BuiltinDomain::LShape, ProblemSpec::poisson_load(CoefSpec::Number(1.0)));
    c.stop.max_ndof = 800;
    let h = run_adaptive::<f64>(&c, RunHooks::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    write_history(&h, &path, false).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with(HISTORY_HEADER));
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(4) == Some("")));
    let back = parse_history(&text).unwrap();
    assert_eq!(back.len(), h.len());
    for (a, b) in back.levels.iter().zip(&h.levels) {
        assert_eq!(a.eta_total, b.eta_total);
        assert_eq!(a.error_v, None);
        assert_eq!(a.n_dofs, b.n_dofs);
    }
}

#[test]
fn increment_criterion_tracks_exact_solves() {
    let exact = run_adaptive::<f64>(&smooth(3000), RunHooks::default()).unwrap();
    for variant in [EtaVariant::Current, EtaVariant::Initial] {
        let mut c = smooth(3000);
        c.solver = SolverConfig::pcg_increment(1e-3);
        c.solver.eta_reference = variant;
        let h = run_adaptive::<f64>(&c, RunHooks::default()).unwrap();
        let (a, b) = (h.last().unwrap(), exact.last().unwrap());
        assert!(h.total_solver_iterations() > 0);
        assert!(a.eta_total <= 1.2 * b.eta_total, "{variant:?}: {} vs {}", a.eta_total, b.eta_total);
    }
}

#[test]
fn more_pcg_steps_reduce_the_estimator() {
    let eta = |steps| {
        let mut c = smooth(3000);
        c.solver = SolverConfig::pcg_fixed(steps);
        run_adaptive::<f64>(&c, RunHooks::default()).unwrap().last().unwrap().eta_total
    };
    let (one, many) = (eta(1), eta(50));
    assert!(many < one, "{many} vs {one}");
}
