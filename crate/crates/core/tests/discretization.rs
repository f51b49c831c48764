use lsafem::assembly::assemble_system;
use lsafem::estimator::compute_indicators;
use lsafem::mesh::{builtin_domain, refine_nvb, refine_uniform, BuiltinDomain, Mesh};
use lsafem::problems::{make_problem, CoefSpec, Manufactured, ProblemSpec};
use lsafem::solver::exact_solve;
use lsafem::spaces::{prolongate, CoefVec, DofMap};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(seed: u64) -> Mesh<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mesh = refine_uniform(&builtin_domain::<f64>(BuiltinDomain::LShape));
    for _ in 0..3 {
        let n = mesh.n_elements();
        let marked: Vec<usize> = (0..3).map(|_| rng.gen_range(0..n)).collect();
        mesh = refine_nvb(&mesh, &marked).unwrap();
    }
    mesh
}

fn random_coef(dm: &DofMap, seed: u64) -> CoefVec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CoefVec::from_vec((0..dm.n_total()).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// With zero data the squared estimator is the energy norm.
    #[test]
    fn estimator_of_zero_data_is_energy_norm(seed in 0u64..10_000) {
        let mesh = fixture(seed);
        let dm = DofMap::new(&mesh);
        let p = make_problem::<f64>(&ProblemSpec::poisson_load(CoefSpec::Number(0.0))).unwrap();
        let sys = assemble_system(&mesh, &dm, &p, 4).unwrap();
        let v = random_coef(&dm, seed + 1);
        let eta = compute_indicators(&mesh, &dm, &p, &v, 4).unwrap().total;
        let energy = sys.matrix.quad_form(&v.values);
        prop_assert!((eta * eta - energy).abs() <= 1e-11 * energy);
    }

    /// Renumbering elements changes no physical quantity.
    #[test]
    fn estimator_is_permutation_invariant(seed in 0u64..10_000) {
        let mesh = fixture(seed);
        let n = mesh.n_elements();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let permuted = Mesh::new(mesh.vertices().to_vec(), perm.iter().map(|&e| mesh.elements()[e]).collect()).unwrap();
        let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Sine)).unwrap();
        let solve = |m: &Mesh<f64>| {
            let dm = DofMap::new(m);
            let sys = assemble_system(m, &dm, &p, 4).unwrap();
            let u = exact_solve(&sys.matrix, &sys.rhs).unwrap();
            compute_indicators(m, &dm, &p, &u, 6).unwrap()
        };
        let a = solve(&mesh);
        let b = solve(&permuted);
        prop_assert!((a.total - b.total).abs() <= 1e-10 * a.total);
        for (k, &e) in perm.iter().enumerate() {
            prop_assert!((b.per_element[k] - a.per_element[e]).abs() <= 1e-9 * a.total);
        }
    }

    /// Prolongation to a refined mesh preserves the energy of zero-data
    /// problems, since the coarse function is reproduced exactly.
    #[test]
    fn prolongation_preserves_energy(seed in 0u64..10_000) {
        let coarse = fixture(seed);
        let fine = refine_nvb(&coarse, &[0, coarse.n_elements() / 2]).unwrap();
        let (cd, fd) = (DofMap::new(&coarse), DofMap::new(&fine));
        let p = make_problem::<f64>(&ProblemSpec::poisson_load(CoefSpec::Number(0.0))).unwrap();
        let v = random_coef(&cd, seed);
        let pv = prolongate((&coarse, &cd), (&fine, &fd), &v).unwrap();
        let ec = assemble_system(&coarse, &cd, &p, 4).unwrap().matrix.quad_form(&v.values);
        let ef = assemble_system(&fine, &fd, &p, 4).unwrap().matrix.quad_form(&pv.values);
        prop_assert!((ec - ef).abs() <= 1e-11 * ec);
    }
}

/// Polynomial data are integrated exactly by the default rule, so a much
/// higher order changes nothing.
#[test]
fn polynomial_data_is_integrated_exactly() {
    let mesh = fixture(3);
    let dm = DofMap::new(&mesh);
    let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Bubble)).unwrap();
    let low = assemble_system(&mesh, &dm, &p, 4).unwrap();
    let high = assemble_system(&mesh, &dm, &p, 8).unwrap();
    for (a, b) in low.rhs.iter().zip(&high.rhs) {
        assert!((a - b).abs() <= 1e-13);
    }
    let diff = low.matrix.to_dense().iter().zip(high.matrix.to_dense()).flat_map(|(r, s)| {
        r.iter().zip(s).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>()
    }).fold(0.0, f64::max);
    assert!(diff <= 1e-11);
}

/// Smooth non-polynomial data: orders 6 and 8 agree far below the
/// discretization error.
#[test]
fn quadrature_orders_agree_for_smooth_data() {
    let mesh = fixture(5);
    let dm = DofMap::new(&mesh);
    let p = make_problem::<f64>(&ProblemSpec::poisson_manufactured(Manufactured::Sine)).unwrap();
    let a = assemble_system(&mesh, &dm, &p, 6).unwrap();
    let b = assemble_system(&mesh, &dm, &p, 8).unwrap();
    let scale = b.rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
    for (x, y) in a.rhs.iter().zip(&b.rhs) {
        assert!((x - y).abs() <= 1e-3 * scale);
    }
}

/// Single and double precision runs of the same small problem agree to
/// single-precision accuracy.
#[test]
fn f32_and_f64_agree() {
    let mesh64 = fixture(1);
    let mesh32 = Mesh::<f32>::new(
        mesh64.vertices().iter().map(|p| [p[0] as f32, p[1] as f32]).collect(),
        mesh64.elements().to_vec(),
    )
    .unwrap();
    let spec = ProblemSpec::poisson_manufactured(Manufactured::Sine);
    let eta64 = {
        let dm = DofMap::new(&mesh64);
        let p = make_problem::<f64>(&spec).unwrap();
        let sys = assemble_system(&mesh64, &dm, &p, 4).unwrap();
        let u = exact_solve(&sys.matrix, &sys.rhs).unwrap();
        compute_indicators(&mesh64, &dm, &p, &u, 6).unwrap().total
    };
    let eta32 = {
        let dm = DofMap::new(&mesh32);
        let p = make_problem::<f32>(&spec).unwrap();
        let sys = assemble_system(&mesh32, &dm, &p, 4).unwrap();
        let u = exact_solve(&sys.matrix, &sys.rhs).unwrap();
        compute_indicators(&mesh32, &dm, &p, &u, 6).unwrap().total
    };
    assert!((f64::from(eta32) - eta64).abs() <= 1e-3 * eta64, "{eta32} vs {eta64}");
}
