use proptest::prelude::*;
use satsync::agent::{agent_step, sat, AgentState, PlantDims};
use satsync::graph::{build_laplacian, expand_laplacian, in_graph_set, DegreeBounds, Graph, NetworkMatrices, RootSet};
use satsync::linalg::{kron, lyapunov_residual, min_symmetric_eigenvalue, solve_discrete_lyapunov, spectral_radius, Matrix};
use satsync::protocol::{compute_zeta_bar, compute_zeta_bar_expanded, ZetaBarForm};

/// A rooted network: every node gets a parent among the nodes before it,
/// plus a handful of extra edges, so node 0 reaches everyone.
fn rooted_graph() -> impl Strategy<Value = (Graph, RootSet)> {
    (2usize..9).prop_flat_map(|n| {
        let parents = proptest::collection::vec((any::<prop::sample::Index>(), 0.2f64..3.0), n - 1);
        let extras = proptest::collection::vec((0..n, 0..n, 0.2f64..3.0), 0..2 * n);
        let extra_roots = proptest::collection::vec(0..n, 0..2);
        (Just(n), parents, extras, extra_roots).prop_map(|(n, parents, extras, extra_roots)| {
            let mut edges: Vec<(usize, usize, f64)> = parents
                .into_iter()
                .enumerate()
                .map(|(k, (idx, w))| (idx.index(k + 1), k + 1, w))
                .collect();
            for (from, to, w) in extras {
                if from != to && !edges.iter().any(|&(f, t, _)| f == from && t == to) {
                    edges.push((from, to, w));
                }
            }
            let g = Graph::from_edges(n, &edges).unwrap();
            let roots = RootSet::new(n, std::iter::once(0).chain(extra_roots)).unwrap();
            (g, roots)
        })
    })
}

fn small_matrix(n: usize, scale: f64) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-scale..scale, n * n).prop_map(move |v| Matrix::from_row_slice(n, n, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn laplacian_rows_sum_to_zero((g, _) in rooted_graph()) {
        let l = build_laplacian(&g);
        for i in 0..g.n_nodes() {
            prop_assert!(l.row(i).sum().abs() < 1e-12);
        }
    }

    #[test]
    fn expansion_only_touches_root_diagonal((g, roots) in rooted_graph()) {
        let l = build_laplacian(&g);
        let lbar = expand_laplacian(&l, &roots);
        for i in 0..g.n_nodes() {
            for j in 0..g.n_nodes() {
                let want = if i == j && roots.contains(i) { l[(i, j)] + 1.0 } else { l[(i, j)] };
                prop_assert_eq!(lbar[(i, j)], want);
            }
        }
    }

    #[test]
    fn dbar_is_schur_on_the_graph_set((g, roots) in rooted_graph()) {
        prop_assert!(in_graph_set(&g, &roots));
        let net = NetworkMatrices::new(&g, &roots, &DegreeBounds::tight(&g));
        let rho = spectral_radius(&net.dbar).unwrap();
        prop_assert!(rho < 1.0 - 1e-10, "rho = {}", rho);
    }

    #[test]
    fn loose_degree_bounds_keep_dbar_schur((g, roots) in rooted_graph(), slack in 0.0f64..4.0) {
        let bounds: Vec<f64> = DegreeBounds::tight(&g).as_slice().iter().map(|d| d + slack).collect();
        let bounds = DegreeBounds::new(&g, bounds).unwrap();
        let net = NetworkMatrices::new(&g, &roots, &bounds);
        prop_assert!(spectral_radius(&net.dbar).unwrap() < 1.0);
    }

    #[test]
    fn zeta_bar_routes_agree(
        (g, roots) in rooted_graph(),
        seed_outputs in proptest::collection::vec(-50.0f64..50.0, 9),
        y_r in -50.0f64..50.0,
    ) {
        let n = g.n_nodes();
        let outputs: Vec<Vec<f64>> = seed_outputs[..n].iter().map(|&y| vec![y]).collect();
        let bounds = DegreeBounds::tight(&g);
        let net = NetworkMatrices::new(&g, &roots, &bounds);
        for i in 0..n {
            let direct = compute_zeta_bar(i, &outputs, &[y_r], &g, &roots, &bounds, ZetaBarForm::Normalized);
            let via_lbar = compute_zeta_bar_expanded(i, &outputs, &[y_r], &net.expanded_laplacian, &bounds);
            prop_assert!((direct[0] - via_lbar[0]).abs() < 1e-12 * (1.0 + direct[0].abs()));
        }
    }

    #[test]
    fn kron_spectral_radius_factors(a in small_matrix(3, 1.0), b in small_matrix(2, 1.0)) {
        let lhs = spectral_radius(&kron(&a, &b)).unwrap();
        let rhs = spectral_radius(&a).unwrap() * spectral_radius(&b).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-6 * (1.0 + rhs), "{} vs {}", lhs, rhs);
    }

    #[test]
    fn lyapunov_solution_is_symmetric_positive_definite(m in small_matrix(4, 1.0)) {
        let rho = spectral_radius(&m).unwrap();
        prop_assume!(rho > 1e-9);
        // Rescale to ρ = 0.9 so the equation is well posed.
        let m = m * (0.9 / rho);
        let q = Matrix::identity(4, 4) * 2.0;
        let sol = solve_discrete_lyapunov(&m, &q).unwrap();
        prop_assert!(sol.residual < 1e-8);
        prop_assert!(lyapunov_residual(&m, &sol.p, &q).norm() < 1e-8);
        prop_assert_eq!(&sol.p, &sol.p.transpose());
        prop_assert!(min_symmetric_eigenvalue(&sol.p).unwrap() > 0.0);
    }

    #[test]
    fn saturation_is_idempotent_and_sign_preserving(w in -1e6f64..1e6) {
        let s = sat(w);
        prop_assert_eq!(sat(s), s);
        prop_assert!(s.abs() <= 1.0);
        prop_assert!(s * (w - s) >= 0.0);
    }

    #[test]
    fn plant_is_linear_below_saturation(
        x1 in proptest::collection::vec(-10.0f64..10.0, 4),
        x2 in proptest::collection::vec(-10.0f64..10.0, 4),
        u1 in proptest::collection::vec(-0.5f64..0.5, 2),
        u2 in proptest::collection::vec(-0.5f64..0.5, 2),
    ) {
        let dims = PlantDims::new(2).unwrap();
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p + q).collect::<Vec<_>>();
        let s1 = agent_step(&AgentState::new(dims, x1.clone()).unwrap(), &u1).unwrap();
        let s2 = agent_step(&AgentState::new(dims, x2.clone()).unwrap(), &u2).unwrap();
        let s12 = agent_step(&AgentState::new(dims, sum(&x1, &x2)).unwrap(), &sum(&u1, &u2)).unwrap();
        for (k, v) in s12.x.iter().enumerate() {
            prop_assert!((v - (s1.x[k] + s2.x[k])).abs() < 1e-12);
        }
    }
}

#[test]
fn graph_outside_the_set_is_detected() {
    // Node 3 has no path from the root.
    let g = Graph::from_edges(3, &[(0, 1, 1.0)]).unwrap();
    let roots = RootSet::new(3, [0]).unwrap();
    assert!(!in_graph_set(&g, &roots));
    let net = NetworkMatrices::new(&g, &roots, &DegreeBounds::tight(&g));
    assert!((spectral_radius(&net.dbar).unwrap() - 1.0).abs() < 1e-12);
}
