use lsafem::mesh::{
    builtin_domain, locate_in_coarse, refine_nvb, refine_uniform, surviving_elements, validate, BuiltinDomain, Mesh,
};
use proptest::prelude::*;

fn refine_sequence(domain: BuiltinDomain, picks: &[Vec<usize>]) -> Vec<(Mesh<f64>, Vec<usize>)> {
    let mut mesh = refine_uniform(&builtin_domain::<f64>(domain));
    let mut out = Vec::new();
    for p in picks {
        let n = mesh.n_elements();
        let mut marked: Vec<usize> = p.iter().map(|&i| i % n).collect();
        marked.sort_unstable();
        marked.dedup();
        out.push((mesh.clone(), marked.clone()));
        mesh = refine_nvb(&mesh, &marked).unwrap();
    }
    out.push((mesh, Vec::new()));
    out
}

fn domain() -> impl Strategy<Value = BuiltinDomain> {
    prop_oneof![
        Just(BuiltinDomain::UnitSquare),
        Just(BuiltinDomain::LShape),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn nvb_keeps_meshes_conforming(d in domain(), picks in prop::collection::vec(prop::collection::vec(0usize..1000, 1..6), 1..6)) {
        let seq = refine_sequence(d, &picks);
        let total: f64 = (0..seq[0].0.n_elements()).map(|e| seq[0].0.area(e)).sum();
        for w in seq.windows(2) {
            let (coarse, marked) = (&w[0].0, &w[0].1);
            let fine = &w[1].0;
            let report = validate(fine);
            prop_assert!(report.is_valid(), "{report:?}");
            let area: f64 = (0..fine.n_elements()).map(|e| fine.area(e)).sum();
            prop_assert!((area - total).abs() <= 1e-12 * total);
            let survives = surviving_elements(coarse, fine);
            prop_assert!(marked.iter().all(|&m| !survives[m]));
            let ancestor = locate_in_coarse(coarse, fine).unwrap();
            for (fe, &ce) in ancestor.iter().enumerate() {
                let c = fine.centroid(fe);
                let lambda = coarse.barycentric(ce, c);
                prop_assert!(lambda.iter().all(|&l| l >= -1e-12));
            }
        }
    }

    #[test]
    fn text_format_round_trips(d in domain(), picks in prop::collection::vec(prop::collection::vec(0usize..1000, 1..4), 0..4)) {
        let mesh = refine_sequence(d, &picks).pop().unwrap().0;
        let back = Mesh::<f64>::from_text(&mesh.to_text()).unwrap();
        prop_assert_eq!(back.vertices(), mesh.vertices());
        prop_assert_eq!(back.elements(), mesh.elements());
    }

    #[test]
    fn refinement_is_deterministic(d in domain(), picks in prop::collection::vec(prop::collection::vec(0usize..1000, 1..6), 1..5)) {
        let a = refine_sequence(d, &picks).pop().unwrap().0;
        let b = refine_sequence(d, &picks).pop().unwrap().0;
        prop_assert!(a == b);
    }
}

#[test]
fn uniform_refinement_doubles_elements_and_keeps_angles() {
    for d in [BuiltinDomain::UnitSquare, BuiltinDomain::LShape] {
        let mut mesh = builtin_domain::<f64>(d);
        let floor = validate(&refine_uniform(&refine_uniform(&mesh))).min_angle;
        for _ in 0..8 {
            let next = refine_uniform(&mesh);
            assert_eq!(next.n_elements(), 2 * mesh.n_elements());
            assert!(validate(&next).min_angle >= floor * (1.0 - 1e-12));
            mesh = next;
        }
    }
}
