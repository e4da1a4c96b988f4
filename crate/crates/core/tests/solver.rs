use proptest::prelude::*;
use viscotomo::discretize::{build_grid, classify_boundary, GridFunction, PhaseGrid};
use viscotomo::field::SymmetricTensorField;
use viscotomo::metric::RefractiveModel;
use viscotomo::solve::{assemble, solve_static, BoundaryData, SolverConfig};
use viscotomo::sparse::{norm2, relative_residual, SparseOperator};
use viscotomo::transport::{Attenuation, QuadratureConfig};
use viscotomo::verify::epsilon_sweep;

const TOL: f64 = 1e-10;

fn cfg() -> SolverConfig {
    SolverConfig {
        tol: TOL,
        max_iter: 5000,
        restart: 60,
    }
}

fn setup() -> (RefractiveModel<f64>, PhaseGrid) {
    let m = RefractiveModel::paper4();
    let g = build_grid(&m, 10, 12, 10).unwrap();
    (m, g)
}

fn outflow_data(g: &PhaseGrid, m: &RefractiveModel<f64>, value: impl Fn(usize) -> f64) -> BoundaryData {
    classify_boundary(g, m).outflow_nodes().into_iter().map(|i| (i, value(i))).collect()
}

fn solve(g: &PhaseGrid, m: &RefractiveModel<f64>, f: &SymmetricTensorField<f64>, eps: f64, data: &BoundaryData) -> GridFunction {
    let sys = assemble(g, m, f, &Attenuation::constant(1.0).unwrap(), eps, data).unwrap();
    let (u, rep) = solve_static(&sys, &cfg()).unwrap();
    assert!(rep.converged);
    assert!((relative_residual(&sys.a, &u.values, &sys.b) - rep.final_residual).abs() < 1e-12);
    u
}

#[test]
fn nonnegative_data_gives_nonnegative_solutions() {
    let (m, g) = setup();
    let f = SymmetricTensorField::constant_scalar(2, 0.8).unwrap();
    let data = outflow_data(&g, &m, |i| 0.2 + 0.01 * (i % 7) as f64);
    for eps in [0.0, 1e-6, 1e-3] {
        let u = solve(&g, &m, &f, eps, &data);
        let min = u.values.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(min >= -TOL, "eps {eps}: min {min}");
    }
}

#[test]
fn solutions_are_additive_in_source_and_data() {
    let (m, g) = setup();
    let f1 = SymmetricTensorField::paper4();
    let f2 = SymmetricTensorField::constant_vector(&[0.4, -0.9]).unwrap();
    let d1 = outflow_data(&g, &m, |i| (i as f64 * 0.37).sin());
    let d2 = outflow_data(&g, &m, |i| (i as f64 * 0.11).cos());
    let d12: BoundaryData = d1.iter().map(|(k, v)| (*k, v + d2[k])).collect();
    let u1 = solve(&g, &m, &f1, 1e-3, &d1);
    let u2 = solve(&g, &m, &f2, 1e-3, &d2);
    let u12 = solve(&g, &m, &f1.sum(&f2).unwrap(), 1e-3, &d12);
    let diff: Vec<f64> = (0..g.len()).map(|i| u12.values[i] - u1.values[i] - u2.values[i]).collect();
    assert!(norm2(&diff) / norm2(&u12.values) <= 10.0 * TOL);
}

#[test]
fn sweep_is_deterministic() {
    let (m, g) = setup();
    let f = SymmetricTensorField::paper4();
    let att = Attenuation::constant(1.0).unwrap();
    let q = QuadratureConfig::simpson(1e-2);
    let run = || {
        let res = epsilon_sweep(&m, &f, &att, &g, &[1e-3], &q, &cfg()).unwrap();
        let mut csv = Vec::new();
        res.write_csv(&mut csv).unwrap();
        (csv, res.entries[0].outcome.as_ref().unwrap().solution.values.clone())
    };
    let (a, ua) = run();
    let (b, ub) = run();
    assert_eq!(a, b);
    assert!(ua.iter().zip(&ub).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn dense(a: &SparseOperator) -> Vec<Vec<f64>> {
    (0..a.size()).map(|r| (0..a.size()).map(|c| a.get(r, c)).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sparse_matches_dense(entries in proptest::collection::vec((0usize..8, 0usize..8, -5.0f64..5.0), 1..40), x in proptest::collection::vec(-3.0f64..3.0, 8)) {
        let a = SparseOperator::from_triplets(8, &entries).unwrap();
        let mut d = vec![vec![0.0; 8]; 8];
        for &(r, c, v) in &entries {
            d[r][c] += v;
        }
        let y = a.matvec(&x);
        for r in 0..8 {
            let expect: f64 = (0..8).map(|c| d[r][c] * x[c]).sum();
            prop_assert!((y[r] - expect).abs() < 1e-12);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (r, c, v) in a.triplets() {
            prop_assert!(seen.insert((r, c)));
            prop_assert!(v.is_finite());
        }
        prop_assert_eq!(dense(&a.transpose().transpose()), dense(&a));
        let s = dense(&a.symmetric_part());
        for r in 0..8 {
            for c in 0..8 {
                prop_assert_eq!(s[r][c], s[c][r]);
            }
        }
    }

    #[test]
    fn grid_index_map_is_a_bijection(ni in 3usize..7, nj in 3usize..9, nk in 3usize..9) {
        let g = build_grid(&RefractiveModel::paper4(), ni, nj, nk).unwrap();
        let mut seen = vec![false; g.len()];
        for idx in 0..g.len() {
            let (i, j, k) = g.coords(idx);
            prop_assert_eq!(g.index(i, j, k), idx);
            prop_assert!(!seen[idx]);
            seen[idx] = true;
        }
        let mask = classify_boundary(&g, &RefractiveModel::paper4());
        let outflow = mask.outflow_nodes();
        prop_assert!(outflow.iter().all(|&i| g.is_boundary(i) && g.point(i).normal_component() > 0.0));
    }
}
