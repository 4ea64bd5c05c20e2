use std::f64::consts::PI;

use crossdiff::analysis::{discrete_norm, NormKind};
use crossdiff::mesh::build_interval_mesh;
use crossdiff::model::{skt_model, SktCoefficients};
use crossdiff::scheme::{project_initial, Scheme};
use crossdiff::solver::{advance, SolverConfig};

/// Two decoupled heat equations (vanishing self-diffusion) against the exact
/// cosine mode; the spatial error dominates and must halve twice per
/// refinement.
#[test]
fn heat_equation_is_second_order_in_space() {
    let coeffs = SktCoefficients::without_sources(vec![1.0, 0.5], vec![vec![1e-12, 0.0], vec![0.0, 1e-12]]);
    let model = skt_model(&coeffs, None).unwrap();
    let (t_end, dt) = (0.1, 2e-5);
    let exact = |i: usize, x: f64, t: f64| {
        let d = [1.0, 0.5][i];
        1.0 + 0.4 * (x).cos() * (-d * t).exp()
    };
    let mut errors = Vec::new();
    for cells in [10, 20, 40] {
        let mesh = build_interval_mesh(-PI, PI, cells).unwrap();
        let u0 = project_initial(&mesh, &model, 8, |i, x| exact(i, x[0], 0.0)).unwrap();
        let truth = project_initial(&mesh, &model, 8, |i, x| exact(i, x[0], t_end)).unwrap();
        let scheme = Scheme::new(&mesh, &model);
        let (end, _) = advance(&scheme, &u0, t_end, &SolverConfig::fixed(dt)).unwrap();
        let diff: Vec<f64> = end.species(0).iter().zip(truth.species(0)).map(|(a, b)| a - b).collect();
        errors.push(discrete_norm(&mesh, &diff, NormKind::Lq(2.0)).unwrap());
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((1.85..2.2).contains(&order), "order {order} from {errors:?}");
    }
}
