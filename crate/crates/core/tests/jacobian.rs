use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crossdiff::linalg::{BlockMatrix, BlockPattern};
use crossdiff::mesh::{build_interval_mesh, build_rectangle_mesh, Mesh};
use crossdiff::model::{
    fluid_mixture_model, keller_segel_model, reference_skt2, seawater_model, skt_model, Drift, Model, Potential,
};
use crossdiff::scheme::{Scheme, State};

/// Max-entry deviation between the analytic Jacobian and a central
/// difference of the residual, relative to the largest analytic entry.
fn deviation(mesh: &Mesh, model: &Model, u: &State, old: &State, dt: f64) -> f64 {
    let scheme = Scheme::new(mesh, model);
    let mut jac = BlockMatrix::zeros(Arc::new(BlockPattern::from_mesh(mesh, model.n_species())));
    scheme.jacobian(u, dt, &mut jac).unwrap();
    let dense = jac.to_dense();
    let dim = u.values().len();
    let mut worst: f64 = 0.0;
    for p in 0..dim {
        let h = 1e-6 * u.values()[p].abs().max(1.0);
        let (mut plus, mut minus) = (u.clone(), u.clone());
        plus.values_mut()[p] += h;
        minus.values_mut()[p] -= h;
        let rp = scheme.residual(&plus, old, dt).unwrap();
        let rm = scheme.residual(&minus, old, dt).unwrap();
        for q in 0..dim {
            worst = worst.max(((rp[q] - rm[q]) / (2.0 * h) - dense[q][p]).abs());
        }
    }
    worst / jac.max_abs()
}

fn random_state(rng: &mut ChaCha8Rng, n: usize, cells: usize, signed: &[bool]) -> State {
    let vals = (0..n * cells)
        .map(|p| if signed[p % n] { rng.random_range(-1.0..2.0) } else { rng.random_range(0.2..3.0) })
        .collect();
    State::from_values(n, vals, 0.0).unwrap()
}

fn check(mesh: &Mesh, model: &Model, states: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let signed: Vec<bool> = (0..model.n_species()).map(|i| model.is_signed(i)).collect();
    for _ in 0..states {
        let u = random_state(&mut rng, model.n_species(), mesh.n_cells(), &signed);
        let old = random_state(&mut rng, model.n_species(), mesh.n_cells(), &signed);
        let d = deviation(mesh, model, &u, &old, 0.05);
        assert!(d < 1e-6, "{}: relative deviation {d:e}", model.name());
    }
}

#[test]
fn skt_with_drift_on_rectangle() {
    let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 3, 3).unwrap();
    let drift = Drift {
        coefficients: vec![2.0, 1.0],
        potential: Potential::Gaussian { center: [0.5, 0.5], amplitude: 1.0, rate: 2.0 },
    };
    let model = skt_model(&reference_skt2(), None).unwrap().with_drift(drift).unwrap();
    check(&mesh, &model, 10, 1);
}

#[test]
fn seawater_on_interval() {
    let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
    check(&mesh, &seawater_model(0.3).unwrap(), 10, 2);
}

#[test]
fn keller_segel_on_rectangle() {
    let mesh = build_rectangle_mesh((0.0, 1.0), (0.0, 2.0), 3, 2).unwrap();
    check(&mesh, &keller_segel_model(0.5).unwrap(), 10, 3);
}

#[test]
fn fluid_mixture_on_interval() {
    let mesh = build_interval_mesh(0.0, 1.0, 8).unwrap();
    let model = fluid_mixture_model(vec![0.1, 0.2], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![1.0, 1.0]).unwrap();
    check(&mesh, &model, 10, 4);
}
