//! Discrete norms and entropies, convergence and decay studies, and the
//! Turing-instability predicate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{build_interval_mesh, EdgeKind, Mesh, MeshError, Point};
use crate::model::{EntropyComponent, Model, SktCoefficients};
use crate::scheme::{project_initial, Scheme, SchemeError, State};
use crate::solver::{advance, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("norm exponent q = {0} must be at least 1")]
    Exponent(f64),
    #[error("field has {got} values, mesh has {expected} cells")]
    Dimension { expected: usize, got: usize },
    #[error("reference state ū must be positive")]
    NonPositiveReference,
    #[error("approximate gradient needs a two-dimensional mesh")]
    OneDimensional,
    #[error("det(D*) = 0, the instability quadratic degenerates")]
    DegenerateQuadratic,
    #[error("u* is not an equilibrium: |f(u*)| = {0:e}")]
    NotEquilibrium(f64),
    #[error("stability analysis needs two species")]
    SpeciesCount,
    #[error("cell counts must increase and stay below the reference resolution")]
    CellCounts,
    #[error("entropy trace has nonpositive values, the decay fit is impossible")]
    NonPositiveEntropy,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Discrete `L^q`, `W^{1,q}` seminorm and `W^{1,q}` norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormKind {
    Lq(f64),
    W1qSeminorm(f64),
    W1qNorm(f64),
}

fn check_len(mesh: &Mesh, v: &[f64]) -> Result<(), AnalysisError> {
    if v.len() != mesh.n_cells() {
        return Err(AnalysisError::Dimension { expected: mesh.n_cells(), got: v.len() });
    }
    Ok(())
}

fn lq_pow(mesh: &Mesh, v: &[f64], q: f64) -> f64 {
    mesh.cells().iter().zip(v).map(|(c, x)| c.measure * x.abs().powf(q)).sum()
}

fn seminorm_pow(mesh: &Mesh, v: &[f64], q: f64) -> f64 {
    mesh.interior_edges()
        .iter()
        .map(|&e| {
            let edge = &mesh.edges()[e];
            let EdgeKind::Interior { k, l } = edge.kind else { unreachable!() };
            edge.measure * edge.distance * ((v[l] - v[k]) / edge.distance).abs().powf(q)
        })
        .sum()
}

pub fn discrete_norm(mesh: &Mesh, v: &[f64], kind: NormKind) -> Result<f64, AnalysisError> {
    check_len(mesh, v)?;
    let q = match kind {
        NormKind::Lq(q) | NormKind::W1qSeminorm(q) | NormKind::W1qNorm(q) => q,
    };
    if !(q >= 1.0) || !q.is_finite() {
        return Err(AnalysisError::Exponent(q));
    }
    let p = match kind {
        NormKind::Lq(_) => lq_pow(mesh, v, q),
        NormKind::W1qSeminorm(_) => seminorm_pow(mesh, v, q),
        NormKind::W1qNorm(_) => lq_pow(mesh, v, q) + seminorm_pow(mesh, v, q),
    };
    Ok(p.powf(1.0 / q))
}

/// `Σ_i Σ_σ τ_σ (D_σ u_i)²` over interior edges.
pub fn gradient_seminorm_sq(mesh: &Mesh, u: &State) -> f64 {
    let n = u.n_species();
    mesh.interior_edges()
        .iter()
        .map(|&e| {
            let edge = &mesh.edges()[e];
            let EdgeKind::Interior { k, l } = edge.kind else { unreachable!() };
            edge.transmissibility * (0..n).map(|i| (u.get(i, l) - u.get(i, k)).powi(2)).sum::<f64>()
        })
        .sum()
}

/// `H[u] = Σ_K m(K) h(u_K)`.
pub fn discrete_entropy(mesh: &Mesh, model: &Model, u: &State) -> f64 {
    mesh.cells().iter().enumerate().map(|(k, c)| c.measure * model.entropy_density(u.cell(k))).sum()
}

/// `φ(s) = s log s - s + 1`, evaluated as a series near `s = 1`.
fn boltzmann_phi(s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let r = s - 1.0;
    if r.abs() < 1e-3 {
        let mut term = r * r;
        let mut sum = 0.0;
        for k in 2..12 {
            let kf = k as f64;
            sum += term / (kf * (kf - 1.0)) * if k % 2 == 0 { 1.0 } else { -1.0 };
            term *= r;
        }
        sum
    } else {
        s * s.ln() - s + 1.0
    }
}

/// Bregman distance `h(u) - h(ū) - h'(ū)(u - ū)` of one component.
fn relative_density(h: &EntropyComponent, u: f64, ubar: f64) -> f64 {
    match *h {
        EntropyComponent::Boltzmann { weight } => weight * ubar * boltzmann_phi(u / ubar),
        EntropyComponent::Quadratic { delta } => (u - ubar).powi(2) / (2.0 * delta),
        EntropyComponent::Power { .. } => (h.eval(u) - h.eval(ubar) - h.deriv(ubar) * (u - ubar)).max(0.0),
    }
}

/// `H[u|ū] = Σ_i Σ_K m(K) π_i (u log(u/ū_i) + ū_i - u)` for Boltzmann
/// components, and the Bregman distance of `h_i` otherwise.
pub fn relative_entropy(mesh: &Mesh, model: &Model, u: &State, ubar: &[f64]) -> Result<f64, AnalysisError> {
    if ubar.len() != model.n_species() || ubar.iter().any(|&x| !(x > 0.0)) {
        return Err(AnalysisError::NonPositiveReference);
    }
    let h = model.entropy();
    Ok(mesh
        .cells()
        .iter()
        .enumerate()
        .map(|(k, c)| c.measure * (0..ubar.len()).map(|i| relative_density(&h[i], u.get(i, k), ubar[i])).sum::<f64>())
        .sum())
}

/// `c_A Δt Σ_i Σ_σ τ_σ (D_σ u_i)²` at `next`.
pub fn entropy_dissipation(mesh: &Mesh, _prev: &State, next: &State, dt: f64, c_a: f64) -> f64 {
    c_a * dt * gradient_seminorm_sq(mesh, next)
}

/// `∇^D v = (m(σ)/m(T_σ)) D_σ v ν_σ` on each diamond; zero on boundary edges.
/// Indexed by edge id.
pub fn approximate_gradient(mesh: &Mesh, v: &[f64]) -> Result<Vec<[f64; 2]>, AnalysisError> {
    if mesh.dimension() != 2 {
        return Err(AnalysisError::OneDimensional);
    }
    check_len(mesh, v)?;
    Ok(mesh
        .edges()
        .iter()
        .map(|e| match e.kind {
            EdgeKind::Interior { k, l } => {
                let s = e.measure / e.dual_measure * (v[l] - v[k]);
                [s * e.normal[0], s * e.normal[1]]
            }
            EdgeKind::Boundary { .. } => [0.0, 0.0],
        })
        .collect())
}

/// `‖∇^D v‖²_{L²} = Σ_σ m(T_σ) |∇^D v|²`.
pub fn approximate_gradient_l2_sq(mesh: &Mesh, grad: &[[f64; 2]]) -> f64 {
    mesh.edges().iter().zip(grad).map(|(e, g)| e.dual_measure * (g[0] * g[0] + g[1] * g[1])).sum()
}

/// Quadratic whose roots give the instability band `[k₋, k₊]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum QuadraticForm {
    /// `det D k² + (det J + det D) k + det J`.
    #[default]
    Printed,
    /// `det D k² - (det J + det D) k + det J`.
    SignCorrected,
    /// `det(k D - J) = 0`, the classical Turing dispersion relation.
    Dispersion,
    /// `trace D k² - (det J + trace D) k + det J`.
    TraceLeading,
}

impl QuadraticForm {
    pub fn coefficients(&self, d: &[[f64; 2]; 2], j: &[[f64; 2]; 2]) -> [f64; 3] {
        let det_d = det2(d);
        let det_j = det2(j);
        let tr_d = d[0][0] + d[1][1];
        match self {
            QuadraticForm::Printed => [det_d, det_j + det_d, det_j],
            QuadraticForm::SignCorrected => [det_d, -(det_j + det_d), det_j],
            QuadraticForm::Dispersion => {
                [det_d, -(d[0][0] * j[1][1] + d[1][1] * j[0][0] - d[0][1] * j[1][0] - d[1][0] * j[0][1]), det_j]
            }
            QuadraticForm::TraceLeading => [tr_d, -(det_j + tr_d), det_j],
        }
    }
}

fn det2(m: &[[f64; 2]; 2]) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Real roots in increasing order, computed without cancellation.
fn quadratic_roots(c: [f64; 3]) -> Option<(f64, f64)> {
    let [a, b, c] = c;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a == 0.0 {
        return None;
    }
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q / a, c / q) };
    Some((r1.min(r2), r1.max(r2)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub form: QuadraticForm,
    pub d_star: [[f64; 2]; 2],
    pub j_star: [[f64; 2]; 2],
    pub trace_d: f64,
    pub det_d: f64,
    pub trace_j: f64,
    pub det_j: f64,
    pub k_minus: Option<f64>,
    pub k_plus: Option<f64>,
    /// `(p₁, p₂, μ_p)` with `0 < k₋ ≤ μ_p ≤ k₊`.
    pub matched_modes: Vec<(usize, usize, f64)>,
    pub conditions: [bool; 4],
    pub unstable: bool,
    pub coexistence: bool,
}

/// Instability test for a constant equilibrium of the two-species SKT
/// system on a rectangle with Neumann boundary conditions.
pub fn stability_predicate(
    coeffs: &SktCoefficients,
    ustar: [f64; 2],
    domain: ((f64, f64), (f64, f64)),
    mode_cap: usize,
    form: QuadraticForm,
) -> Result<StabilityReport, AnalysisError> {
    use crate::model::ModelTerms;
    if coeffs.n() != 2 || coeffs.a.len() != 2 || coeffs.b.len() != 2 || coeffs.b0.len() != 2 {
        return Err(AnalysisError::SpeciesCount);
    }
    let (a, a0) = (&coeffs.a, &coeffs.a0);
    let [u1, u2] = ustar;
    let mut f = [0.0; 2];
    coeffs.source(&ustar, &mut f);
    let fnorm = f[0].abs().max(f[1].abs());
    if fnorm > 1e-10 {
        return Err(AnalysisError::NotEquilibrium(fnorm));
    }
    let d_star = [
        [a0[0] + 2.0 * a[0][0] * u1 + a[0][1] * u2, a[0][1] * u1],
        [a[1][0] * u2, a0[1] + a[1][0] * u1 + 2.0 * a[1][1] * u2],
    ];
    let mut jf = [0.0; 4];
    coeffs.source_jacobian(&ustar, &mut jf);
    let j_star = [[jf[0], jf[1]], [jf[2], jf[3]]];
    let det_d = det2(&d_star);
    if det_d == 0.0 {
        return Err(AnalysisError::DegenerateQuadratic);
    }
    let det_j = det2(&j_star);
    let trace_d = d_star[0][0] + d_star[1][1];
    let trace_j = j_star[0][0] + j_star[1][1];
    let roots = quadratic_roots(form.coefficients(&d_star, &j_star));
    let (lx, ly) = (domain.0 .1 - domain.0 .0, domain.1 .1 - domain.1 .0);
    let mut matched_modes = Vec::new();
    if let Some((km, kp)) = roots {
        for p1 in 0..=mode_cap {
            for p2 in 0..=mode_cap {
                let mu = (p1 as f64 * std::f64::consts::PI / lx).powi(2) + (p2 as f64 * std::f64::consts::PI / ly).powi(2);
                if mu > 0.0 && km > 0.0 && km <= mu && mu <= kp {
                    matched_modes.push((p1, p2, mu));
                }
            }
        }
    }
    let conditions = [trace_d > 0.0, det_d > 0.0, det_d + det_j > 0.0, !matched_modes.is_empty()];
    let b = &coeffs.b;
    let b0 = &coeffs.b0;
    let coexistence = b0[0] / b[0][0] < b0[1] / b[1][0] && b0[1] / b[1][1] < b0[0] / b[0][1];
    Ok(StabilityReport {
        form,
        d_star,
        j_star,
        trace_d,
        det_d,
        trace_j,
        det_j,
        k_minus: roots.map(|r| r.0),
        k_plus: roots.map(|r| r.1),
        matched_modes,
        conditions,
        unstable: conditions.iter().all(|&c| c),
        coexistence,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub cells: usize,
    pub h: f64,
    /// `‖u_i - P u_ref,i‖_{0,2}` per species.
    pub errors: Vec<f64>,
    /// Observed order against the previous row.
    pub orders: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub reference_cells: usize,
    pub dt: f64,
    pub t_end: f64,
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceTable {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.rows.first().map_or(0, |r| r.errors.len());
        let mut header = vec!["cells".to_string()];
        for i in 1..=n {
            header.push(format!("error_u{i}"));
            header.push(format!("order_u{i}"));
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.cells.to_string()];
            for i in 0..n {
                rec.push(format!("{:.4e}", r.errors[i]));
                rec.push(r.orders[i].map_or(String::new(), |o| format!("{o:.2}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mass-weighted average of a 1D fine field over the cells of a coarse
/// interval mesh (exact for nested meshes, overlap-weighted otherwise).
pub fn project_to_coarse(fine: &Mesh, state: &State, coarse: &Mesh) -> State {
    let n = state.n_species();
    let bounds = |m: &Mesh, k: usize| {
        let c = &m.cells()[k];
        (c.center[0] - 0.5 * c.measure, c.center[0] + 0.5 * c.measure)
    };
    let mut out = State::zeros(n, coarse.n_cells());
    out.time = state.time;
    let mut f = 0;
    for c in 0..coarse.n_cells() {
        let (lo, hi) = bounds(coarse, c);
        while f > 0 && bounds(fine, f).0 > lo {
            f -= 1;
        }
        let mut acc = vec![0.0; n];
        let mut k = f;
        while k < fine.n_cells() {
            let (a, b) = bounds(fine, k);
            if a >= hi {
                break;
            }
            let w = (b.min(hi) - a.max(lo)).max(0.0);
            for (i, s) in acc.iter_mut().enumerate() {
                *s += w * state.get(i, k);
            }
            if b <= hi {
                f = k + 1;
            }
            k += 1;
        }
        for (i, s) in acc.iter().enumerate() {
            out.set(i, c, s / (hi - lo));
        }
    }
    out
}

/// Spatial convergence study on an interval: every resolution (and the
/// reference) runs with the same fixed step, in parallel.
#[allow(clippy::too_many_arguments)]
pub fn convergence_harness<F>(
    model: &Model,
    domain: (f64, f64),
    cell_counts: &[usize],
    reference_cells: usize,
    dt: f64,
    t_end: f64,
    initial: F,
    config: &SolverConfig,
) -> Result<ConvergenceTable, AnalysisError>
where
    F: Fn(usize, Point) -> f64 + Sync,
{
    if cell_counts.is_empty()
        || cell_counts.windows(2).any(|w| w[0] >= w[1])
        || *cell_counts.last().unwrap() >= reference_cells
    {
        return Err(AnalysisError::CellCounts);
    }
    if cell_counts.iter().any(|&c| reference_cells % c != 0) {
        log::info!("non-nested resolutions; projecting by overlap-weighted averaging");
    }
    let cfg = SolverConfig { dt_init: dt, dt_min: dt, dt_max: dt, adaptive: false, ..config.clone() };
    let mut all: Vec<usize> = cell_counts.to_vec();
    all.push(reference_cells);
    let runs: Vec<Result<(Mesh, State), AnalysisError>> = all
        .par_iter()
        .map(|&cells| {
            let mesh = build_interval_mesh(domain.0, domain.1, cells)?;
            let u0 = project_initial(&mesh, model, 8, &initial)?;
            let scheme = Scheme::new(&mesh, model);
            let (end, _) = advance(&scheme, &u0, t_end, &cfg)?;
            Ok((mesh, end))
        })
        .collect();
    let mut runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (ref_mesh, ref_state) = runs.pop().unwrap();
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for ((mesh, state), &cells) in runs.iter().zip(cell_counts) {
        let proj = project_to_coarse(&ref_mesh, &ref_state, mesh);
        let errors: Vec<f64> = (0..model.n_species())
            .map(|i| {
                let diff: Vec<f64> = state.species(i).iter().zip(proj.species(i)).map(|(a, b)| a - b).collect();
                discrete_norm(mesh, &diff, NormKind::Lq(2.0)).unwrap()
            })
            .collect();
        let orders = match rows.last() {
            Some(prev) => errors
                .iter()
                .zip(&prev.errors)
                .map(|(e, p)| Some((p / e).ln() / (cells as f64 / prev.cells as f64).ln()))
                .collect(),
            None => vec![None; errors.len()],
        };
        rows.push(ConvergenceRow { cells, h: (domain.1 - domain.0) / cells as f64, errors, orders });
    }
    Ok(ConvergenceTable { reference_cells, dt, t_end, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayReport {
    pub ubar: Vec<f64>,
    pub times: Vec<f64>,
    pub relative_entropy: Vec<f64>,
    /// `Σ_i π_i ‖u_i - ū_i‖²_{0,1}`.
    pub weighted_l1_sq: Vec<f64>,
    pub fitted_lambda: Option<f64>,
    pub r_squared: Option<f64>,
    pub strictly_decreasing: bool,
    /// `C₃ = 2 max_i ū_i m(Ω)`.
    pub c3: f64,
    pub kappa_bound_ok: bool,
}

impl DecayReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "H", "weighted_L1_sq"])?;
        for k in 0..self.times.len() {
            w.write_record(&[
                format!("{}", self.times[k]),
                format!("{:e}", self.relative_entropy[k]),
                format!("{:e}", self.weighted_l1_sq[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Accumulates relative-entropy traces along a source-free run.
#[derive(Debug, Clone)]
pub struct DecayTrace {
    ubar: Vec<f64>,
    times: Vec<f64>,
    entropy: Vec<f64>,
    l1: Vec<f64>,
}

impl DecayTrace {
    pub fn new(ubar: Vec<f64>) -> Result<DecayTrace, AnalysisError> {
        if ubar.iter().any(|&x| !(x > 0.0)) {
            return Err(AnalysisError::NonPositiveReference);
        }
        Ok(DecayTrace { ubar, times: Vec::new(), entropy: Vec::new(), l1: Vec::new() })
    }

    /// `ū_i = (1/m(Ω)) Σ_K m(K) u_{i,K}`.
    pub fn from_initial(mesh: &Mesh, u0: &State) -> Result<DecayTrace, AnalysisError> {
        let omega: f64 = mesh.measures().iter().sum();
        DecayTrace::new(u0.masses(mesh).iter().map(|m| m / omega).collect())
    }

    pub fn ubar(&self) -> &[f64] {
        &self.ubar
    }

    pub fn record(&mut self, mesh: &Mesh, model: &Model, u: &State) -> Result<(), AnalysisError> {
        self.times.push(u.time);
        self.entropy.push(relative_entropy(mesh, model, u, &self.ubar)?);
        let pi = model.pi();
        let l1: f64 = (0..self.ubar.len())
            .map(|i| {
                let d: Vec<f64> = u.species(i).iter().map(|x| x - self.ubar[i]).collect();
                pi[i] * discrete_norm(mesh, &d, NormKind::Lq(1.0)).unwrap().powi(2)
            })
            .sum();
        self.l1.push(l1);
        Ok(())
    }

    pub fn finish(self, mesh: &Mesh) -> Result<DecayReport, AnalysisError> {
        decay_analysis(mesh, self.ubar, self.times, self.entropy, self.l1)
    }
}

/// Fits `log H ≈ c - λt` on the second half of the time window and checks
/// `Σ_i π_i ‖u_i - ū_i‖²_{0,1} ≤ C₃ H[u|ū]` at every recorded step.
pub fn decay_analysis(
    mesh: &Mesh,
    ubar: Vec<f64>,
    times: Vec<f64>,
    relative_entropy: Vec<f64>,
    weighted_l1_sq: Vec<f64>,
) -> Result<DecayReport, AnalysisError> {
    let omega = mesh.domain_measure();
    let c3 = 2.0 * ubar.iter().copied().fold(0.0, f64::max) * omega;
    let kappa_bound_ok = weighted_l1_sq
        .iter()
        .zip(&relative_entropy)
        .all(|(l, h)| *l <= c3 * h * (1.0 + 1e-9) + 1e-14);
    let strictly_decreasing = relative_entropy.windows(2).all(|w| w[1] < w[0]);
    let t_last = times.last().copied().unwrap_or(0.0);
    let t0 = times.first().copied().unwrap_or(0.0);
    let window: Vec<(f64, f64)> = times
        .iter()
        .zip(&relative_entropy)
        .filter(|(t, _)| **t >= t0 + 0.5 * (t_last - t0))
        .map(|(t, h)| (*t, *h))
        .collect();
    let (fitted_lambda, r_squared) = if relative_entropy.iter().all(|&h| h == 0.0) || window.len() < 2 {
        (None, None)
    } else if window.iter().any(|(_, h)| *h <= 0.0) {
        return Err(AnalysisError::NonPositiveEntropy);
    } else {
        let m = window.len() as f64;
        let tm = window.iter().map(|p| p.0).sum::<f64>() / m;
        let ym = window.iter().map(|p| p.1.ln()).sum::<f64>() / m;
        let sxx: f64 = window.iter().map(|p| (p.0 - tm).powi(2)).sum();
        let sxy: f64 = window.iter().map(|p| (p.0 - tm) * (p.1.ln() - ym)).sum();
        let slope = sxy / sxx;
        let ss_tot: f64 = window.iter().map(|p| (p.1.ln() - ym).powi(2)).sum();
        let ss_res: f64 = window.iter().map(|p| (p.1.ln() - ym - slope * (p.0 - tm)).powi(2)).sum();
        let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
        (Some(-slope), Some(r2))
    };
    Ok(DecayReport {
        ubar,
        times,
        relative_entropy,
        weighted_l1_sq,
        fitted_lambda,
        r_squared,
        strictly_decreasing,
        c3,
        kappa_bound_ok,
    })
}
