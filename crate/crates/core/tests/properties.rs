//! Randomized invariants across the modules.

mod common;

use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use nlup::coarse_solver::TraceProvider;
use nlup::config::RunConfig;
use nlup::downscale::{DownscaleConfig, ExactTraceProvider, LocalProblem};
use nlup::fields::FineField;
use nlup::fine_solver::{boundary_outflow, step_fine, NewtonConfig};
use nlup::mesh::MeshHierarchy;
use nlup::physics::FluxFunction;
use nlup::surrogate::{MlpModel, TrainingSet};

use common::*;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig { cases, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn fine_cells_partition_coarse_cells(nx in 1usize..7, ny in 1usize..7, refine in 1usize..5) {
        let m = MeshHierarchy::build(nx, ny, refine).unwrap();
        let mut seen = vec![false; m.num_fine()];
        let mut area = 0.0;
        for c in 0..m.num_coarse() {
            let cells = m.fine_of_coarse(c);
            prop_assert_eq!(cells.len(), refine * refine);
            for &f in cells {
                prop_assert!(!std::mem::replace(&mut seen[f], true));
                prop_assert_eq!(m.coarse_of_fine(f), c);
            }
            let sub = cells.len() as f64 * m.fine_area();
            prop_assert!((sub - m.coarse_area()).abs() <= 1e-14);
            area += sub;
        }
        prop_assert!(seen.iter().all(|&s| s));
        prop_assert!((area - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn coarse_edges_partition_coarse_boundary_faces(nx in 1usize..7, ny in 1usize..7, refine in 1usize..5) {
        let m = MeshHierarchy::build(nx, ny, refine).unwrap();
        let on_boundary: BTreeSet<usize> = (0..m.faces.len())
            .filter(|&f| {
                let face = &m.faces[f];
                match (face.owner, face.neighbor) {
                    (Some(a), Some(b)) => m.coarse_of_fine(a) != m.coarse_of_fine(b),
                    _ => true,
                }
            })
            .collect();
        let mut assigned = BTreeSet::new();
        let mut slots = 0;
        for (e, edge) in m.edges.iter().enumerate() {
            prop_assert_eq!(edge.slot_offset, slots);
            slots += edge.faces.len();
            for &f in &edge.faces {
                prop_assert!(assigned.insert(f));
                prop_assert_eq!(m.faces[f].coarse_edge, Some(e));
            }
        }
        prop_assert_eq!(&assigned, &on_boundary);
        prop_assert_eq!(slots, m.num_trace_slots());
        for f in 0..m.faces.len() {
            prop_assert_eq!(m.faces[f].coarse_edge.is_some(), on_boundary.contains(&f));
        }
    }

    #[test]
    fn oversampling_nests_and_clips(
        nx in 1usize..9,
        ny in 1usize..9,
        pick in 0usize..1000,
        plus in 1usize..4,
        plusplus in 1usize..4,
    ) {
        let m = MeshHierarchy::build(nx, ny, 1).unwrap();
        let cell = pick % m.num_coarse();
        let os = m.oversample(cell, plus, plusplus).unwrap();
        prop_assert!(os.plus.contains_rect(&os.own));
        prop_assert!(os.plusplus.contains_rect(&os.plus));
        prop_assert_eq!(os.plus, os.own.grow(plus, nx, ny));
        prop_assert_eq!(os.plusplus, os.plus.grow(plusplus, nx, ny));
        prop_assert!(os.plusplus.i1 <= nx && os.plusplus.j1 <= ny);
        prop_assert!(os.plus_cells(nx).contains(&cell));
    }

    #[test]
    fn flux_derivatives_match_central_differences(s in -2.0f64..2.0) {
        let eps = 1e-6;
        for f in [FluxFunction::Quadratic, FluxFunction::SignedQuadratic, FluxFunction::Linear] {
            let fd = (f.eval(s + eps) - f.eval(s - eps)) / (2.0 * eps);
            prop_assert!((fd - f.deriv(s)).abs() <= 10.0 * eps, "{:?} at {}", f, s);
        }
        let odd = FluxFunction::Quadratic.odd_extension();
        prop_assert_eq!(odd.eval(-s), -odd.eval(s));
        if s >= 0.0 {
            prop_assert_eq!(odd.eval(s), FluxFunction::Quadratic.eval(s));
        }
    }

    #[test]
    fn coarse_residual_telescopes(nx in 1usize..8, refine in 1usize..4, v in 0usize..2, seed in any::<u64>()) {
        let p = problem(nx, nx + 1, refine, VELOCITIES[v]);
        prop_assert!(telescoping_defect(&p, seed) <= 1e-13);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn fine_jacobian_matches_finite_differences(n in 2usize..6, refine in 1usize..3, v in 0usize..2, seed in any::<u64>()) {
        let p = problem(n, n, refine, VELOCITIES[v]);
        prop_assert!(fine_jacobian_error(&p, seed) <= 1e-5);
    }

    #[test]
    fn fine_step_balances_mass_and_stays_in_bounds(n in 2usize..6, refine in 1usize..4, v in 0usize..2, seed in any::<u64>()) {
        let p = problem(n, n, refine, VELOCITIES[v]);
        let previous = FineField(uniform(p.mesh.num_fine(), 0.0, 1.0, seed));
        let (next, _) = step_fine(&p, &previous, &NewtonConfig::default()).unwrap();
        let mass: f64 = next.iter().zip(previous.iter()).map(|(a, b)| a - b).sum::<f64>()
            * p.gamma() * p.mesh.fine_area();
        prop_assert!((mass + boundary_outflow(&p, &next)).abs() <= 1e-9);
        prop_assert!(next.iter().all(|&s| (-1e-10..=1.0 + 1e-10).contains(&s)));
    }

    #[test]
    fn local_jacobian_matches_finite_differences(
        n in 3usize..6,
        pick in 0usize..100,
        plus in 1usize..3,
        plusplus in 1usize..3,
        v in 0usize..2,
        seed in any::<u64>(),
    ) {
        let p = problem(n, n, 2, VELOCITIES[v]);
        let g = local_geometry(&p, pick % p.mesh.num_coarse(), plus, plusplus);
        prop_assert!(local_jacobian_error(&p, &g, seed) <= 1e-5);
    }

    #[test]
    fn local_solves_meet_constraints_with_symmetric_coupling(
        n in 3usize..7,
        refine in 2usize..5,
        pick in 0usize..100,
        plus in 1usize..3,
        plusplus in 1usize..3,
        v in 0usize..2,
        seed in any::<u64>(),
    ) {
        let p = problem(n, n, refine, VELOCITIES[v]);
        let nk = p.mesh.num_coarse();
        let g = local_geometry(&p, pick % nk, plus, plusplus);
        let lp = LocalProblem::build(&p, &g, &uniform(nk, 0.0, 1.0, seed), &uniform(nk, 0.0, 1.0, seed ^ 1));
        let sol = lp.solve(&NewtonConfig::default()).unwrap();
        prop_assert!(lp.constraint_violation(&sol.psi) <= 1e-9);

        let jac = lp.jacobian(&uniform(g.num_unknowns(), 0.0, 1.0, seed ^ 2));
        let nf = g.num_fine();
        for b in 0..g.num_constraints() {
            for j in 0..nf {
                prop_assert_eq!(jac.get(j, nf + b), jac.get(nf + b, j));
            }
        }
    }

    #[test]
    fn downscaled_field_keeps_coarse_means(n in 3usize..6, v in 0usize..2, seed in any::<u64>()) {
        let p = problem(n, n, 3, VELOCITIES[v]);
        let exact = ExactTraceProvider::new(&p, &DownscaleConfig::default()).unwrap();
        let nk = p.mesh.num_coarse();
        let (iterate, previous) = (uniform(nk, 0.0, 1.0, seed), uniform(nk, 0.0, 1.0, seed ^ 3));
        let locals = exact.restricted(&iterate, &previous).unwrap();
        let psi = nlup::downscale::global_downscaling(&p.mesh, &locals).unwrap();
        let means = psi.coarse_averages(&p.mesh);
        for (m, s) in means.iter().zip(&iterate) {
            prop_assert!((m - s).abs() <= 1e-9);
        }
    }

    #[test]
    fn local_solves_are_order_independent(n in 3usize..6, v in 0usize..2, seed in any::<u64>()) {
        let p = problem(n, n, 3, VELOCITIES[v]);
        let exact = ExactTraceProvider::new(&p, &DownscaleConfig::default()).unwrap();
        let nk = p.mesh.num_coarse();
        let (iterate, previous) = (uniform(nk, 0.0, 1.0, seed), uniform(nk, 0.0, 1.0, seed ^ 5));
        let parallel = exact.solve_all(&iterate, &previous).unwrap();
        for (k, g) in exact.geometries().iter().enumerate().rev() {
            let sol = LocalProblem::build(&p, g, &previous, &iterate).solve(&NewtonConfig::default()).unwrap();
            prop_assert_eq!(&sol.psi, &parallel[k].psi);
            prop_assert_eq!(&sol.mu, &parallel[k].mu);
        }
        let traces = exact.traces(&iterate, &previous).unwrap();
        prop_assert_eq!(traces.len(), p.mesh.num_trace_slots());
        prop_assert!(traces.iter().all(|t| t.is_finite()));
        prop_assert_eq!(traces, exact.traces(&iterate, &previous).unwrap());
    }

    #[test]
    fn mlp_gradients_match_finite_differences(hidden in 2usize..7, batch in 1usize..6, seed in any::<u64>()) {
        prop_assert!(mlp_gradient_error(&[3, hidden, hidden + 1, 4], batch, seed) <= 1e-4);
    }
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn batched_forward_matches_single_forward(sizes in prop::collection::vec(1usize..9, 2..5), seed in any::<u64>()) {
        let m = MlpModel::init(&sizes, seed).unwrap();
        let x = Array2::from_shape_vec((3, sizes[0]), uniform(3 * sizes[0], -1.0, 1.0, seed)).unwrap();
        let batch = m.forward_batch(x.view()).unwrap();
        for r in 0..3 {
            let single = m.forward(x.row(r).as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(batch.row(r)) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }

    #[test]
    fn model_files_round_trip_bitwise(sizes in prop::collection::vec(1usize..9, 2..5), seed in any::<u64>(), fp in "[a-z0-9=;.]{0,24}") {
        let mut m = MlpModel::init(&sizes, seed).unwrap();
        m.fingerprint = fp;
        let bytes = m.to_bytes();
        let back = MlpModel::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(back.to_bytes(), bytes);
        let mut cut = m.to_bytes();
        cut.pop();
        prop_assert!(MlpModel::from_bytes(&cut).is_err());
    }

    #[test]
    fn dataset_files_round_trip_bitwise(rows in 1usize..6, w_in in 1usize..5, w_out in 1usize..5, seed in any::<u64>()) {
        let set = TrainingSet::from_rows(
            Array2::from_shape_vec((rows, w_in), uniform(rows * w_in, -1.0, 1.0, seed)).unwrap(),
            Array2::from_shape_vec((rows, w_out), uniform(rows * w_out, -1.0, 1.0, seed ^ 7)).unwrap(),
            seed,
            "fp".into(),
        )
        .unwrap();
        let bytes = set.to_bytes();
        let back = TrainingSet::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert!(back == set);
    }

    #[test]
    fn config_overrides_survive_canonical_round_trip(nx in 1usize..50, refine in 1usize..9, seed in 0..=i64::MAX as u64) {
        let overrides = vec![format!("mesh.nx={nx}"), format!("mesh.refine={refine}"), format!("seed={seed}")];
        let cfg = RunConfig::parse("", &overrides, true).unwrap();
        prop_assert_eq!((cfg.mesh.nx, cfg.mesh.refine, cfg.seed), (nx, refine, seed));
        let again = RunConfig::parse(&cfg.canonical(), &[], true).unwrap();
        prop_assert_eq!(again.hash(), cfg.hash());
    }
}
