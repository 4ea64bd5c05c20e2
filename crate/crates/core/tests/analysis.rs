use std::f64::consts::PI;

use crossdiff::analysis::{convergence_harness, discrete_entropy, stability_predicate, QuadraticForm};
use crossdiff::mesh::build_rectangle_mesh;
use crossdiff::model::{reference_skt2, reference_skt3, skt_model, SktCoefficients};
use crossdiff::scheme::State;
use crossdiff::solver::SolverConfig;

#[test]
fn harness_reports_second_order_for_heat_equation() {
    let coeffs = SktCoefficients::without_sources(vec![1.0, 0.5], vec![vec![1e-12, 0.0], vec![0.0, 1e-12]]);
    let model = skt_model(&coeffs, None).unwrap();
    let init = |_: usize, x: [f64; 2]| 1.0 + 0.4 * (2.0 * x[0]).cos();
    let table =
        convergence_harness(&model, (-PI, PI), &[10, 20, 40, 80, 160], 640, 1e-4, 0.05, init, &SolverConfig::default())
            .unwrap();
    for row in &table.rows[2..] {
        for o in row.orders.iter().flatten() {
            assert!((1.9..2.1).contains(o), "order {o} in {table:?}");
        }
    }
}

#[test]
fn stability_roots_solve_their_quadratic() {
    let c = reference_skt2();
    for form in [QuadraticForm::Printed, QuadraticForm::SignCorrected, QuadraticForm::Dispersion, QuadraticForm::TraceLeading] {
        let r = stability_predicate(&c, [2.0, 0.5], ((0.0, 1.0), (0.0, 1.0)), 20, form).unwrap();
        let [a, b, q] = form.coefficients(&r.d_star, &r.j_star);
        for k in [r.k_minus, r.k_plus].into_iter().flatten() {
            let scale = (a * k * k).abs() + (b * k).abs() + q.abs();
            assert!((a * k * k + b * k + q).abs() <= 1e-12 * scale, "{form:?} root {k}");
        }
    }
}

#[test]
fn entropy_vanishes_only_at_unit_density() {
    let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 3, 3).unwrap();
    let model = skt_model(&SktCoefficients::without_sources(reference_skt3().a0, reference_skt3().a), None).unwrap();
    let ones = State::from_species(&vec![vec![1.0; 9]; 3], 0.0).unwrap();
    assert!(discrete_entropy(&mesh, &model, &ones).abs() < 1e-15);
    let mut u = ones.clone();
    u.set(1, 4, 1.3);
    u.set(2, 0, 0.2);
    assert!(discrete_entropy(&mesh, &model, &u) > 0.0);
}
