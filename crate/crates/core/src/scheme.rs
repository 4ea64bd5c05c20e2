//! Two-point flux finite-volume discretization with entropy-mean edge values.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::BlockMatrix;
use crate::mesh::{EdgeKind, Mesh, Point};
use crate::model::{EntropyComponent, Model};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemeError {
    #[error("species {species} is negative ({value:e}) in cell {cell}")]
    NegativeValue { species: usize, cell: usize, value: f64 },
    #[error("negative argument to an entropy mean: ({0:e}, {1:e})")]
    NegativeMean(f64, f64),
    #[error("non-finite value in species {species}, cell {cell}")]
    NonFinite { species: usize, cell: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("model has no drift term")]
    NoDrift,
    #[error("entropy mean root finding failed for ({0:e}, {1:e})")]
    RootFinding(f64, f64),
}

/// Cell values of all species, stored cell-major: index `K·n + i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct State {
    n_species: usize,
    values: Vec<f64>,
    pub time: f64,
}

impl State {
    pub fn zeros(n_species: usize, n_cells: usize) -> State {
        State { n_species, values: vec![0.0; n_species * n_cells], time: 0.0 }
    }

    pub fn from_values(n_species: usize, values: Vec<f64>, time: f64) -> Result<State, SchemeError> {
        if n_species == 0 || values.len() % n_species != 0 {
            return Err(SchemeError::Dimension(format!("{} values for {n_species} species", values.len())));
        }
        Ok(State { n_species, values, time })
    }

    /// Builds a state from one vector of cell values per species.
    pub fn from_species(species: &[Vec<f64>], time: f64) -> Result<State, SchemeError> {
        let n = species.len();
        let cells = species.first().map_or(0, Vec::len);
        if n == 0 || species.iter().any(|s| s.len() != cells) {
            return Err(SchemeError::Dimension("species vectors differ in length".into()));
        }
        let mut values = vec![0.0; n * cells];
        for (i, s) in species.iter().enumerate() {
            for (k, v) in s.iter().enumerate() {
                values[k * n + i] = *v;
            }
        }
        Ok(State { n_species: n, values, time })
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.n_species
    }

    pub fn get(&self, species: usize, cell: usize) -> f64 {
        self.values[cell * self.n_species + species]
    }

    pub fn set(&mut self, species: usize, cell: usize, v: f64) {
        self.values[cell * self.n_species + species] = v;
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_species..(k + 1) * self.n_species]
    }

    pub fn species(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.n_species).copied().collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `Σ_K m(K) u_{i,K}` per species.
    pub fn masses(&self, mesh: &Mesh) -> Vec<f64> {
        let mut m = vec![0.0; self.n_species];
        for (k, c) in mesh.cells().iter().enumerate() {
            for (i, mi) in m.iter_mut().enumerate() {
                *mi += c.measure * self.get(i, k);
            }
        }
        m
    }

    /// Fails on non-finite values or on negative values of unsigned species.
    pub fn check_admissible(&self, model: &Model) -> Result<(), SchemeError> {
        for k in 0..self.n_cells() {
            for i in 0..self.n_species {
                let v = self.get(i, k);
                if !v.is_finite() {
                    return Err(SchemeError::NonFinite { species: i, cell: k });
                }
                if v < 0.0 && !model.is_signed(i) {
                    return Err(SchemeError::NegativeValue { species: i, cell: k, value: v });
                }
            }
        }
        Ok(())
    }
}

/// Cell averages of `u0(i, x)` computed with the mesh quadrature.
pub fn project_initial<F>(mesh: &Mesh, model: &Model, refine: usize, u0: F) -> Result<State, SchemeError>
where
    F: Fn(usize, Point) -> f64,
{
    let n = model.n_species();
    let mut state = State::zeros(n, mesh.n_cells());
    for (k, cell) in mesh.cells().iter().enumerate() {
        let quad = mesh.cell_quadrature(k, refine);
        for i in 0..n {
            let v = quad.iter().map(|(x, w)| w * u0(i, *x)).sum::<f64>() / cell.measure;
            state.set(i, k, v);
        }
    }
    state.check_admissible(model)?;
    Ok(state)
}

const LOG_MEAN_SERIES: f64 = 1e-8;
const LOG_MEAN_DERIV_SERIES: f64 = 1e-4;

/// Logarithmic mean `(b - a)/(log b - log a)`, zero when either argument is.
pub fn log_mean(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        return 0.0;
    }
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let m = 0.5 * (a + b);
    let d = 0.5 * (b - a);
    if (b - a).abs() <= LOG_MEAN_SERIES * (a + b) {
        let r = d * d / (m * m);
        m * (1.0 - r / 3.0 - 4.0 * r * r / 45.0)
    } else {
        (b - a) / ((b - a) / a).ln_1p()
    }
}

/// `(L, ∂L/∂a, ∂L/∂b)` for the logarithmic mean. Derivatives vanish at zero.
pub fn log_mean_derivatives(a: f64, b: f64) -> (f64, f64, f64) {
    if a <= 0.0 || b <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if a > b {
        let (l, db, da) = log_mean_derivatives(b, a);
        return (l, da, db);
    }
    let l = log_mean(a, b);
    if (b - a).abs() <= LOG_MEAN_DERIV_SERIES * (a + b) {
        let m = 0.5 * (a + b);
        let d = 0.5 * (b - a);
        let p = d / (3.0 * m);
        let q = d * d / (6.0 * m * m);
        (l, 0.5 + p + q, 0.5 - p + q)
    } else {
        let lr = ((b - a) / a).ln_1p();
        (l, (l / a - 1.0) / lr, (1.0 - l / b) / lr)
    }
}

/// Mean `ũ` between `a` and `b` with `h''(ũ)(b - a) = h'(b) - h'(a)`.
pub fn entropy_mean(a: f64, b: f64, h: &EntropyComponent) -> Result<f64, SchemeError> {
    entropy_mean_derivatives(a, b, h).map(|r| r.0)
}

/// `(ũ, ∂ũ/∂a, ∂ũ/∂b)`.
pub fn entropy_mean_derivatives(a: f64, b: f64, h: &EntropyComponent) -> Result<(f64, f64, f64), SchemeError> {
    match h {
        EntropyComponent::Quadratic { .. } => Ok((0.5 * (a + b), 0.5, 0.5)),
        _ if a < 0.0 || b < 0.0 || a.is_nan() || b.is_nan() => Err(SchemeError::NegativeMean(a, b)),
        EntropyComponent::Boltzmann { .. } => Ok(log_mean_derivatives(a, b)),
        EntropyComponent::Power { .. } => generic_mean(a, b, h),
    }
}

fn generic_mean(a: f64, b: f64, h: &EntropyComponent) -> Result<(f64, f64, f64), SchemeError> {
    if a == 0.0 || b == 0.0 {
        let u = root_mean(a, b, h)?;
        return Ok((u, 0.0, 0.0));
    }
    if (b - a).abs() <= 1e-6 * (a + b) {
        // the midpoint is accurate to O((b - a)²) here
        return Ok((0.5 * (a + b), 0.5, 0.5));
    }
    let u = root_mean(a, b, h)?;
    let den = h.deriv3(u) * (b - a);
    if den == 0.0 {
        return Ok((u, 0.5, 0.5));
    }
    Ok((u, -(h.deriv2(a) - h.deriv2(u)) / den, -(h.deriv2(u) - h.deriv2(b)) / den))
}

/// Bracketed Newton iteration with bisection fallback on
/// `G(s) = h''(s)(b - a) - (h'(b) - h'(a))`.
fn root_mean(a: f64, b: f64, h: &EntropyComponent) -> Result<f64, SchemeError> {
    let (lo0, hi0) = if a < b { (a, b) } else { (b, a) };
    if hi0 == 0.0 {
        return Ok(0.0);
    }
    let target = (h.deriv(hi0) - h.deriv(lo0)) / (hi0 - lo0);
    let g = |s: f64| h.deriv2(s) - target;
    let (mut lo, mut hi) = (lo0, hi0);
    let rising = h.deriv3(0.5 * (lo + hi)) > 0.0;
    let mut s = 0.5 * (lo + hi);
    for _ in 0..200 {
        let gs = g(s);
        if gs == 0.0 {
            return Ok(s);
        }
        // h'' is monotone, so the sign of g tells which side the root is on
        if (gs > 0.0) != rising {
            lo = s;
        } else {
            hi = s;
        }
        if hi - lo <= 1e-15 * hi {
            return Ok(0.5 * (lo + hi));
        }
        let newton = s - gs / h.deriv3(s);
        s = if newton > lo && newton < hi && newton.is_finite() { newton } else { 0.5 * (lo + hi) };
    }
    Err(SchemeError::RootFinding(a, b))
}

/// Entropy means on every interior edge, indexed `edge·n + i`.
#[derive(Debug, Clone)]
pub struct EdgeMeans {
    n_species: usize,
    values: Vec<f64>,
}

impl EdgeMeans {
    pub fn get(&self, edge: usize, species: usize) -> f64 {
        self.values[edge * self.n_species + species]
    }

    pub fn edge(&self, edge: usize) -> &[f64] {
        &self.values[edge * self.n_species..(edge + 1) * self.n_species]
    }
}

/// Discretization of one model on one mesh.
#[derive(Debug, Clone)]
pub struct Scheme<'a> {
    mesh: &'a Mesh,
    model: &'a Model,
    potential: Vec<f64>,
}

impl<'a> Scheme<'a> {
    pub fn new(mesh: &'a Mesh, model: &'a Model) -> Scheme<'a> {
        let potential = match model.drift() {
            Some(d) => (0..mesh.n_cells())
                .map(|k| {
                    let q = mesh.cell_quadrature(k, 2);
                    q.iter().map(|(x, w)| w * d.potential.eval(*x)).sum::<f64>() / mesh.cells()[k].measure
                })
                .collect(),
            None => Vec::new(),
        };
        Scheme { mesh, model, potential }
    }

    pub fn mesh(&self) -> &'a Mesh {
        self.mesh
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    /// Cell averages of the potential; empty without drift.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    fn neighbors(&self, edge: usize) -> Option<(usize, usize)> {
        match self.mesh.edges()[edge].kind {
            EdgeKind::Interior { k, l } => Some((k, l)),
            EdgeKind::Boundary { .. } => None,
        }
    }

    pub fn assemble_edge_means(&self, u: &State) -> Result<EdgeMeans, SchemeError> {
        let n = self.model.n_species();
        let mut values = vec![0.0; self.mesh.edges().len() * n];
        for &e in self.mesh.interior_edges() {
            let (k, l) = self.neighbors(e).unwrap();
            for i in 0..n {
                values[e * n + i] = entropy_mean(u.get(i, k), u.get(i, l), &self.model.entropy()[i])?;
            }
        }
        Ok(EdgeMeans { n_species: n, values })
    }

    /// Diffusive flux `F_{i,K,σ}` out of the first cell of `edge`; zero on
    /// boundary edges.
    pub fn flux(&self, u: &State, means: &EdgeMeans, edge: usize, species: usize) -> f64 {
        let Some((k, l)) = self.neighbors(edge) else { return 0.0 };
        let n = self.model.n_species();
        let a = self.model.diffusion_matrix(means.edge(edge));
        let tau = self.mesh.edges()[edge].transmissibility;
        -tau * (0..n).map(|j| a[species * n + j] * (u.get(j, l) - u.get(j, k))).sum::<f64>()
    }

    /// Diffusive plus drift flux.
    pub fn drift_flux(&self, u: &State, means: &EdgeMeans, edge: usize, species: usize) -> Result<f64, SchemeError> {
        let drift = self.model.drift().ok_or(SchemeError::NoDrift)?;
        let Some((k, l)) = self.neighbors(edge) else { return Ok(0.0) };
        let tau = self.mesh.edges()[edge].transmissibility;
        let dphi = self.potential[l] - self.potential[k];
        Ok(self.flux(u, means, edge, species)
            + tau * drift.coefficients[species] * means.get(edge, species) * dphi)
    }

    /// `R_{i,K} = m(K)(u - u_old)/Δt + Σ_σ F_{i,K,σ} - m(K) f_i(u_K)`.
    pub fn residual(&self, new: &State, old: &State, dt: f64) -> Result<Vec<f64>, SchemeError> {
        let n = self.model.n_species();
        let terms = self.model.terms();
        let mut r = vec![0.0; new.values().len()];
        let mut f = vec![0.0; n];
        for (k, cell) in self.mesh.cells().iter().enumerate() {
            terms.source(new.cell(k), &mut f);
            for i in 0..n {
                r[k * n + i] = cell.measure * ((new.get(i, k) - old.get(i, k)) / dt - f[i]);
            }
        }
        let drift = self.model.drift();
        let mut mean = vec![0.0; n];
        let mut a = vec![0.0; n * n];
        for &e in self.mesh.interior_edges() {
            let (k, l) = self.neighbors(e).unwrap();
            let tau = self.mesh.edges()[e].transmissibility;
            for i in 0..n {
                mean[i] = entropy_mean(new.get(i, k), new.get(i, l), &self.model.entropy()[i])?;
            }
            terms.diffusion(&mean, &mut a);
            for i in 0..n {
                let mut flux = -tau * (0..n).map(|j| a[i * n + j] * (new.get(j, l) - new.get(j, k))).sum::<f64>();
                if let Some(d) = drift {
                    flux += tau * d.coefficients[i] * mean[i] * (self.potential[l] - self.potential[k]);
                }
                r[k * n + i] += flux;
                r[l * n + i] -= flux;
            }
        }
        Ok(r)
    }

    /// Analytic Jacobian of [`Scheme::residual`] with respect to the new state.
    pub fn jacobian(&self, new: &State, dt: f64, jac: &mut BlockMatrix) -> Result<(), SchemeError> {
        let n = self.model.n_species();
        let terms = self.model.terms();
        jac.clear();
        let mut df = vec![0.0; n * n];
        for (k, cell) in self.mesh.cells().iter().enumerate() {
            terms.source_jacobian(new.cell(k), &mut df);
            let b = jac.block_mut(jac.pattern().diag(k));
            for i in 0..n {
                for j in 0..n {
                    b[i * n + j] -= cell.measure * df[i * n + j];
                }
                b[i * n + i] += cell.measure / dt;
            }
        }
        let drift = self.model.drift();
        let mut mean = vec![0.0; n];
        let mut pa = vec![0.0; n];
        let mut pb = vec![0.0; n];
        let mut a = vec![0.0; n * n];
        let mut da = vec![0.0; n * n];
        let mut ja = vec![0.0; n * n];
        let mut jb = vec![0.0; n * n];
        for &e in self.mesh.interior_edges() {
            let (k, l) = self.neighbors(e).unwrap();
            let tau = self.mesh.edges()[e].transmissibility;
            for i in 0..n {
                let (m, x, y) = entropy_mean_derivatives(new.get(i, k), new.get(i, l), &self.model.entropy()[i])?;
                mean[i] = m;
                pa[i] = x;
                pb[i] = y;
            }
            terms.diffusion(&mean, &mut a);
            for i in 0..n * n {
                ja[i] = tau * a[i];
                jb[i] = -tau * a[i];
            }
            for j in 0..n {
                terms.diffusion_derivative(&mean, j, &mut da);
                for i in 0..n {
                    let s: f64 = (0..n).map(|q| da[i * n + q] * (new.get(q, l) - new.get(q, k))).sum();
                    ja[i * n + j] -= tau * s * pa[j];
                    jb[i * n + j] -= tau * s * pb[j];
                }
            }
            if let Some(d) = drift {
                let dphi = self.potential[l] - self.potential[k];
                for i in 0..n {
                    ja[i * n + i] += tau * d.coefficients[i] * dphi * pa[i];
                    jb[i * n + i] += tau * d.coefficients[i] * dphi * pb[i];
                }
            }
            let [pkl, plk] = jac.pattern().edge_blocks(e).unwrap();
            let (dk, dl) = (jac.pattern().diag(k), jac.pattern().diag(l));
            for (pos, src, sign) in [(dk, &ja, 1.0), (pkl, &jb, 1.0), (plk, &ja, -1.0), (dl, &jb, -1.0)] {
                let b = jac.block_mut(pos);
                for (x, y) in b.iter_mut().zip(src.iter()) {
                    *x += sign * y;
                }
            }
        }
        Ok(())
    }

    /// Central finite-difference Jacobian, for testing.
    pub fn jacobian_fd(
        &self,
        new: &State,
        old: &State,
        dt: f64,
        eps: f64,
        jac: &mut BlockMatrix,
    ) -> Result<(), SchemeError> {
        let n = self.model.n_species();
        jac.clear();
        let dim = new.values().len();
        let mut plus = new.clone();
        let mut minus = new.clone();
        for p in 0..dim {
            let x = new.values()[p];
            let mut h = eps * x.abs().max(1.0);
            let signed = self.model.is_signed(p % n);
            let central = signed || x - h >= 0.0;
            if !central {
                h = h.min(x.max(0.0)).max(eps * 1e-3);
            }
            plus.values_mut()[p] = x + h;
            minus.values_mut()[p] = if central { x - h } else { x };
            let rp = self.residual(&plus, old, dt)?;
            let rm = self.residual(&minus, old, dt)?;
            let width = if central { 2.0 * h } else { h };
            plus.values_mut()[p] = x;
            minus.values_mut()[p] = x;
            let cell = p / n;
            for row in 0..dim {
                if jac.pattern().position(row / n, cell).is_some() {
                    jac.add(row, p, (rp[row] - rm[row]) / width);
                }
            }
        }
        Ok(())
    }
}
