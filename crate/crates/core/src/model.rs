//! Cross-diffusion models with additively separable entropy densities.
//!
//! A [`Model`] bundles the diffusion matrix `A(u)`, the reaction terms
//! `f(u)`, the per-species entropy densities `h_i` and the structural
//! constants (`c_A`, `C_f`, ...) used by the entropy monitor. The four
//! systems provided are the n-species SKT model, the fluid-mixture model,
//! the seawater-intrusion model and a Keller–Segel system with additional
//! cross-diffusion.

use std::fmt::Debug;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::Point;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("coefficient dimensions do not match: {0}")]
    Dimension(String),
    #[error("invalid coefficient: {0}")]
    Coefficient(String),
    #[error("detailed balance fails on pair ({i}, {j}): π_i a_ij = {lhs}, π_j a_ji = {rhs}")]
    DetailedBalance { i: usize, j: usize, lhs: f64, rhs: f64 },
    #[error("matrix (π_i a_ij) is not positive definite (smallest eigenvalue {0})")]
    NotPositiveDefinite(f64),
    #[error("parameter out of range: {0}")]
    Parameter(String),
}

/// One summand `h_i` of the entropy density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntropyComponent {
    /// `w (s (log s - 1) + 1)`.
    Boltzmann { weight: f64 },
    /// `w (s^m - m s + m - 1) / (m (m - 1))` for `1 < m < 2`.
    Power { exponent: f64, weight: f64 },
    /// `s² / (2δ)`, defined on all of ℝ. Species using it may change sign.
    Quadratic { delta: f64 },
}

impl EntropyComponent {
    pub fn eval(&self, s: f64) -> f64 {
        match *self {
            EntropyComponent::Boltzmann { weight } => {
                if s <= 0.0 {
                    weight
                } else {
                    weight * (s * (s.ln() - 1.0) + 1.0)
                }
            }
            EntropyComponent::Power { exponent: m, weight } => {
                weight * (s.max(0.0).powf(m) - m * s + m - 1.0) / (m * (m - 1.0))
            }
            EntropyComponent::Quadratic { delta } => s * s / (2.0 * delta),
        }
    }

    pub fn deriv(&self, s: f64) -> f64 {
        match *self {
            EntropyComponent::Boltzmann { weight } => weight * s.ln(),
            EntropyComponent::Power { exponent: m, weight } => weight * (s.powf(m - 1.0) - 1.0) / (m - 1.0),
            EntropyComponent::Quadratic { delta } => s / delta,
        }
    }

    pub fn deriv2(&self, s: f64) -> f64 {
        match *self {
            EntropyComponent::Boltzmann { weight } => weight / s,
            EntropyComponent::Power { exponent: m, weight } => weight * s.powf(m - 2.0),
            EntropyComponent::Quadratic { delta } => 1.0 / delta,
        }
    }

    pub fn deriv3(&self, s: f64) -> f64 {
        match *self {
            EntropyComponent::Boltzmann { weight } => -weight / (s * s),
            EntropyComponent::Power { exponent: m, weight } => weight * (m - 2.0) * s.powf(m - 3.0),
            EntropyComponent::Quadratic { .. } => 0.0,
        }
    }

    /// `(h')^{-1}(w)`, or `None` outside the range of `h'`.
    pub fn deriv_inverse(&self, w: f64) -> Option<f64> {
        match *self {
            EntropyComponent::Boltzmann { weight } => Some((w / weight).exp()),
            EntropyComponent::Power { exponent: m, weight } => {
                let base = 1.0 + (m - 1.0) * w / weight;
                (base > 0.0).then(|| base.powf(1.0 / (m - 1.0)))
            }
            EntropyComponent::Quadratic { delta } => Some(w * delta),
        }
    }

    /// Affine minorant `h(s) ≥ slope · s - offset`, returned as `(slope, offset)`.
    pub fn lower_bound(&self) -> (f64, f64) {
        match *self {
            // tangent at s = 2: s log 2 - 1 ≤ g(s)
            EntropyComponent::Boltzmann { weight } => (weight * 2f64.ln(), weight),
            EntropyComponent::Power { .. } | EntropyComponent::Quadratic { .. } => {
                let s = 2.0;
                let slope = self.deriv(s);
                (slope, slope * s - self.eval(s))
            }
        }
    }

    /// True when the species may take negative values.
    pub fn is_signed(&self) -> bool {
        matches!(self, EntropyComponent::Quadratic { .. })
    }

    /// The weight multiplying the Boltzmann density, if this is one.
    pub fn boltzmann_weight(&self) -> Option<f64> {
        match *self {
            EntropyComponent::Boltzmann { weight } => Some(weight),
            _ => None,
        }
    }
}

/// The nonlinear terms of a model. Matrices are row-major `n × n`.
pub trait ModelTerms: Debug + Send + Sync {
    fn n_species(&self) -> usize;
    /// `A(u)`.
    fn diffusion(&self, u: &[f64], out: &mut [f64]);
    /// `∂A/∂u_k (u)`.
    fn diffusion_derivative(&self, u: &[f64], k: usize, out: &mut [f64]);
    /// `f(u)`.
    fn source(&self, u: &[f64], out: &mut [f64]);
    /// `∇_u f(u)`, entry `(i, j) = ∂f_i/∂u_j`.
    fn source_jacobian(&self, u: &[f64], out: &mut [f64]);
    fn has_source(&self) -> bool;
}

/// SKT coefficients: `A_ij = δ_ij (a_i0 + Σ_k a_ik u_k) + a_ij u_i`,
/// `f_i = u_i (b_i0 - Σ_j b_ij u_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SktCoefficients {
    pub a0: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b0: Vec<f64>,
    #[serde(default)]
    pub b: Vec<Vec<f64>>,
}

impl SktCoefficients {
    pub fn n(&self) -> usize {
        self.a0.len()
    }

    /// Source-free coefficients (`b ≡ 0`).
    pub fn without_sources(a0: Vec<f64>, a: Vec<Vec<f64>>) -> Self {
        let n = a0.len();
        SktCoefficients { a0, a, b0: vec![0.0; n], b: vec![vec![0.0; n]; n] }
    }

    /// Fills empty `b0`/`b` with zeros and checks shapes and signs.
    fn normalized(&self) -> Result<Self, ModelError> {
        let n = self.n();
        let mut c = self.clone();
        if c.b0.is_empty() {
            c.b0 = vec![0.0; n];
        }
        if c.b.is_empty() {
            c.b = vec![vec![0.0; n]; n];
        }
        if n == 0 {
            return Err(ModelError::Dimension("at least one species is required".into()));
        }
        let square = |m: &Vec<Vec<f64>>| m.len() == n && m.iter().all(|r| r.len() == n);
        if !square(&c.a) || !square(&c.b) || c.b0.len() != n {
            return Err(ModelError::Dimension(format!("expected {n} species in every coefficient")));
        }
        for i in 0..n {
            if !(c.a0[i] >= 0.0) {
                return Err(ModelError::Coefficient(format!("a_{}0 = {} must be nonnegative", i + 1, c.a0[i])));
            }
            for j in 0..n {
                if !(c.a[i][j] >= 0.0) || !(c.b[i][j] >= 0.0) {
                    return Err(ModelError::Coefficient(format!(
                        "a_{0}{1} and b_{0}{1} must be nonnegative",
                        i + 1,
                        j + 1
                    )));
                }
            }
            if !c.b0[i].is_finite() {
                return Err(ModelError::Coefficient(format!("b_{}0 is not finite", i + 1)));
            }
        }
        Ok(c)
    }

    /// Full sign check: nonnegative coefficients, `a_ii > 0`, and `b_ii > 0`
    /// unless the model is source-free.
    pub fn validate(&self) -> Result<(), ModelError> {
        let c = self.normalized()?;
        let source_free = c.b0.iter().all(|&x| x == 0.0) && c.b.iter().flatten().all(|&x| x == 0.0);
        for i in 0..c.n() {
            if !(c.a[i][i] > 0.0) {
                return Err(ModelError::Coefficient(format!("a_{0}{0} must be positive", i + 1)));
            }
            if !source_free && !(c.b[i][i] > 0.0) {
                return Err(ModelError::Coefficient(format!("b_{0}{0} must be positive", i + 1)));
            }
        }
        Ok(())
    }
}

impl ModelTerms for SktCoefficients {
    fn n_species(&self) -> usize {
        self.n()
    }

    fn diffusion(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let self_diff: f64 = self.a[i].iter().zip(u).map(|(a, u)| a * u).sum();
            for j in 0..n {
                out[i * n + j] = self.a[i][j] * u[i];
            }
            out[i * n + i] += self.a0[i] + self_diff;
        }
    }

    fn diffusion_derivative(&self, _u: &[f64], k: usize, out: &mut [f64]) {
        let n = self.n();
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            out[i * n + i] += self.a[i][k];
        }
        for j in 0..n {
            out[k * n + j] += self.a[k][j];
        }
    }

    fn source(&self, u: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n()) {
            let comp: f64 = self.b[i].iter().zip(u).map(|(b, u)| b * u).sum();
            *o = u[i] * (self.b0[i] - comp);
        }
    }

    fn source_jacobian(&self, u: &[f64], out: &mut [f64]) {
        let n = self.n();
        for i in 0..n {
            let comp: f64 = self.b[i].iter().zip(u).map(|(b, u)| b * u).sum();
            for j in 0..n {
                out[i * n + j] = -u[i] * self.b[i][j];
            }
            out[i * n + i] += self.b0[i] - comp;
        }
    }

    fn has_source(&self) -> bool {
        self.b0.iter().any(|&x| x != 0.0) || self.b.iter().flatten().any(|&x| x != 0.0)
    }
}

/// `A_ij = δ_ij a_i0 + a_ij u_i`, no sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidMixture {
    pub a0: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

impl ModelTerms for FluidMixture {
    fn n_species(&self) -> usize {
        self.a0.len()
    }

    fn diffusion(&self, u: &[f64], out: &mut [f64]) {
        let n = self.a0.len();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.a[i][j] * u[i];
            }
            out[i * n + i] += self.a0[i];
        }
    }

    fn diffusion_derivative(&self, _u: &[f64], k: usize, out: &mut [f64]) {
        let n = self.a0.len();
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..n {
            out[k * n + j] = self.a[k][j];
        }
    }

    fn source(&self, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }

    fn source_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
    }

    fn has_source(&self) -> bool {
        false
    }
}

/// Seawater intrusion with flat bottom: `A = [[δu₁, δu₁], [δu₂, u₂]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seawater {
    pub delta: f64,
}

impl ModelTerms for Seawater {
    fn n_species(&self) -> usize {
        2
    }

    fn diffusion(&self, u: &[f64], out: &mut [f64]) {
        let d = self.delta;
        out[..4].copy_from_slice(&[d * u[0], d * u[0], d * u[1], u[1]]);
    }

    fn diffusion_derivative(&self, _u: &[f64], k: usize, out: &mut [f64]) {
        let d = self.delta;
        if k == 0 {
            out[..4].copy_from_slice(&[d, d, 0.0, 0.0]);
        } else {
            out[..4].copy_from_slice(&[0.0, 0.0, d, 1.0]);
        }
    }

    fn source(&self, _u: &[f64], out: &mut [f64]) {
        out[..2].fill(0.0);
    }

    fn source_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out[..4].fill(0.0);
    }

    fn has_source(&self) -> bool {
        false
    }
}

/// Keller–Segel with cross-diffusion in the signal equation:
/// `A = [[2u₁, -u₁], [δ, 1]]`, `f = (0, u₁ - u₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KellerSegel {
    pub delta: f64,
}

impl ModelTerms for KellerSegel {
    fn n_species(&self) -> usize {
        2
    }

    fn diffusion(&self, u: &[f64], out: &mut [f64]) {
        out[..4].copy_from_slice(&[2.0 * u[0], -u[0], self.delta, 1.0]);
    }

    fn diffusion_derivative(&self, _u: &[f64], k: usize, out: &mut [f64]) {
        if k == 0 {
            out[..4].copy_from_slice(&[2.0, -1.0, 0.0, 0.0]);
        } else {
            out[..4].fill(0.0);
        }
    }

    fn source(&self, u: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = u[0] - u[1];
    }

    fn source_jacobian(&self, _u: &[f64], out: &mut [f64]) {
        out[..4].copy_from_slice(&[0.0, 0.0, 1.0, -1.0]);
    }

    fn has_source(&self) -> bool {
        true
    }
}

/// Environmental potential `φ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Constant { value: f64 },
    /// `φ(x) = g · x`.
    Linear { gradient: [f64; 2] },
    /// `φ(x) = amplitude · exp(-rate |x - center|²)`.
    Gaussian { center: [f64; 2], amplitude: f64, rate: f64 },
}

impl Potential {
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Potential::Constant { value } => *value,
            Potential::Linear { gradient } => gradient[0] * x[0] + gradient[1] * x[1],
            Potential::Gaussian { center, amplitude, rate } => {
                let r2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
                amplitude * (-rate * r2).exp()
            }
        }
    }
}

/// Drift `-d_i u_i ∇φ` added inside the divergence of species `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Drift {
    pub coefficients: Vec<f64>,
    pub potential: Potential,
}

/// Which structural condition produced the entropy weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    DetailedBalance,
    Dominance,
    /// Constants supplied by the model's own identity.
    Explicit,
    /// Neither condition holds; entropy monitoring is disabled.
    NonEntropic,
}

#[derive(Debug, Clone)]
pub struct Model {
    name: String,
    terms: Arc<dyn ModelTerms>,
    entropy: Vec<EntropyComponent>,
    pi: Vec<f64>,
    c_a: f64,
    c_f: f64,
    c_f_prime: f64,
    lipschitz: f64,
    structure: Structure,
    drift: Option<Drift>,
}

impl Model {
    /// A user-defined model. `c_f = f64::INFINITY` means no finite growth
    /// constant is known.
    pub fn custom(
        name: impl Into<String>,
        terms: Arc<dyn ModelTerms>,
        entropy: Vec<EntropyComponent>,
        c_a: f64,
        c_f: f64,
        c_f_prime: f64,
        lipschitz: f64,
    ) -> Result<Model, ModelError> {
        let n = terms.n_species();
        if entropy.len() != n {
            return Err(ModelError::Dimension(format!("{} entropy components for {n} species", entropy.len())));
        }
        let pi = entropy
            .iter()
            .map(|e| match *e {
                EntropyComponent::Boltzmann { weight } | EntropyComponent::Power { weight, .. } => weight,
                EntropyComponent::Quadratic { delta } => 1.0 / delta,
            })
            .collect();
        Ok(Model {
            name: name.into(),
            terms,
            entropy,
            pi,
            c_a,
            c_f,
            c_f_prime,
            lipschitz,
            structure: if c_a > 0.0 { Structure::Explicit } else { Structure::NonEntropic },
            drift: None,
        })
    }

    pub fn with_drift(mut self, drift: Drift) -> Result<Model, ModelError> {
        if drift.coefficients.len() != self.n_species() {
            return Err(ModelError::Dimension("one drift coefficient per species".into()));
        }
        if drift.coefficients.iter().any(|&d| !(d > 0.0)) {
            return Err(ModelError::Coefficient("drift coefficients must be positive".into()));
        }
        self.drift = Some(drift);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_species(&self) -> usize {
        self.terms.n_species()
    }

    pub fn terms(&self) -> &dyn ModelTerms {
        self.terms.as_ref()
    }

    pub fn entropy(&self) -> &[EntropyComponent] {
        &self.entropy
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn c_a(&self) -> f64 {
        self.c_a
    }

    pub fn c_f(&self) -> f64 {
        self.c_f
    }

    pub fn c_f_prime(&self) -> f64 {
        self.c_f_prime
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn structure(&self) -> Structure {
        self.structure
    }

    /// Entropy inequality monitoring is meaningful.
    pub fn is_entropic(&self) -> bool {
        !matches!(self.structure, Structure::NonEntropic) && self.c_a > 0.0
    }

    pub fn drift(&self) -> Option<&Drift> {
        self.drift.as_ref()
    }

    pub fn is_signed(&self, species: usize) -> bool {
        self.entropy[species].is_signed()
    }

    pub fn has_source(&self) -> bool {
        self.terms.has_source()
    }

    /// `h(u) = Σ_i h_i(u_i)`.
    pub fn entropy_density(&self, u: &[f64]) -> f64 {
        self.entropy.iter().zip(u).map(|(h, &s)| h.eval(s)).sum()
    }

    pub fn diffusion_matrix(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n_species();
        let mut a = vec![0.0; n * n];
        self.terms.diffusion(u, &mut a);
        a
    }

    pub fn source(&self, u: &[f64]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_species()];
        self.terms.source(u, &mut f);
        f
    }

    /// `zᵀ h''(u) A(u) z`.
    pub fn entropy_form(&self, u: &[f64], z: &[f64]) -> f64 {
        let n = self.n_species();
        let a = self.diffusion_matrix(u);
        let mut q = 0.0;
        for i in 0..n {
            let hi = self.entropy[i].deriv2(u[i]);
            for j in 0..n {
                q += z[i] * hi * a[i * n + j] * z[j];
            }
        }
        q
    }
}

/// `π` with `π_i a_ij = π_j a_ji`, normalized so that the first species of
/// each connected block has weight 1.
pub fn detailed_balance_weights(a: &[Vec<f64>]) -> Result<Vec<f64>, ModelError> {
    let n = a.len();
    let mut pi = vec![f64::NAN; n];
    let scale = a.iter().flatten().fold(0.0f64, |m, &x| m.max(x.abs())).max(f64::MIN_POSITIVE);
    for root in 0..n {
        if !pi[root].is_nan() {
            continue;
        }
        pi[root] = 1.0;
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if j == i || !pi[j].is_nan() {
                    continue;
                }
                let (aij, aji) = (a[i][j], a[j][i]);
                if aij == 0.0 && aji == 0.0 {
                    continue;
                }
                if aij == 0.0 || aji == 0.0 {
                    return Err(ModelError::DetailedBalance { i, j, lhs: pi[i] * aij, rhs: 0.0 });
                }
                pi[j] = pi[i] * aij / aji;
                stack.push(j);
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let (lhs, rhs) = (pi[i] * a[i][j], pi[j] * a[j][i]);
            if (lhs - rhs).abs() > 1e-12 * scale * pi[i].max(pi[j]) {
                return Err(ModelError::DetailedBalance { i, j, lhs, rhs });
            }
        }
    }
    Ok(pi)
}

/// `η₀ = min_i (a_ii - ¼ Σ_j (√a_ij - √a_ji)²)`.
pub fn dominance_eta0(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| (a[i][j].sqrt() - a[j][i].sqrt()).powi(2)).sum();
            a[i][i] - 0.25 * s
        })
        .fold(f64::INFINITY, f64::min)
}

/// `C_f = (2 / log 2) max_i (b_i0 + (1/(e π_i)) Σ_j π_j b_ji)`.
pub fn compute_cf(coeffs: &SktCoefficients, pi: &[f64]) -> f64 {
    let n = coeffs.n();
    let b0 = |i: usize| coeffs.b0.get(i).copied().unwrap_or(0.0);
    let b = |i: usize, j: usize| coeffs.b.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0.0);
    let m = (0..n)
        .map(|i| {
            let s: f64 = (0..n).map(|j| pi[j] * b(j, i)).sum();
            b0(i) + s / (std::f64::consts::E * pi[i])
        })
        .fold(f64::NEG_INFINITY, f64::max);
    (2.0 / 2f64.ln() * m).max(0.0)
}

fn skt_lipschitz(c: &SktCoefficients) -> f64 {
    let n = c.n();
    let mut s = 0.0;
    let mut d = vec![0.0; n * n];
    for k in 0..n {
        c.diffusion_derivative(&vec![0.0; n], k, &mut d);
        s += d.iter().map(|x| x * x).sum::<f64>();
    }
    s.sqrt()
}

/// The n-species SKT model with Lotka–Volterra sources.
///
/// Without explicit weights, detailed balance is tried first and the
/// self-diffusion dominance condition second. When neither holds the model is
/// still built, with unit weights, but flagged non-entropic.
pub fn skt_model(coeffs: &SktCoefficients, pi: Option<Vec<f64>>) -> Result<Model, ModelError> {
    let c = coeffs.normalized()?;
    let n = c.n();
    let min_diag = |pi: &[f64]| (0..n).map(|i| pi[i] * c.a[i][i]).fold(f64::INFINITY, f64::min);
    let eta0 = dominance_eta0(&c.a);
    let (pi, structure, c_a) = match pi {
        Some(pi) => {
            if pi.len() != n || pi.iter().any(|&p| !(p > 0.0)) {
                return Err(ModelError::Coefficient("weights π must be positive, one per species".into()));
            }
            let scale = c.a.iter().flatten().fold(0.0f64, |m, &x| m.max(x)).max(f64::MIN_POSITIVE);
            let balanced = (0..n).all(|i| {
                (0..n).all(|j| (pi[i] * c.a[i][j] - pi[j] * c.a[j][i]).abs() <= 1e-12 * scale * pi[i].max(pi[j]))
            });
            if balanced {
                let ca = min_diag(&pi);
                (pi, Structure::DetailedBalance, ca)
            } else if eta0 > 0.0 && pi.iter().all(|&p| p == 1.0) {
                (pi, Structure::Dominance, 2.0 * eta0)
            } else {
                (pi, Structure::NonEntropic, 0.0)
            }
        }
        None => match detailed_balance_weights(&c.a) {
            Ok(pi) => {
                let ca = min_diag(&pi);
                (pi, Structure::DetailedBalance, ca)
            }
            Err(_) if eta0 > 0.0 => (vec![1.0; n], Structure::Dominance, 2.0 * eta0),
            Err(_) => (vec![1.0; n], Structure::NonEntropic, 0.0),
        },
    };
    let structure = if c_a > 0.0 { structure } else { Structure::NonEntropic };
    if structure == Structure::NonEntropic {
        log::warn!("SKT coefficients satisfy neither detailed balance nor dominance; entropy monitoring disabled");
    }
    let c_f = compute_cf(&c, &pi);
    let c_f_prime = c.b0.iter().map(|b| 0.5 * b.abs()).sum::<f64>() + c.b.iter().flatten().sum::<f64>();
    let lipschitz = skt_lipschitz(&c);
    Ok(Model {
        name: format!("skt{n}"),
        entropy: pi.iter().map(|&w| EntropyComponent::Boltzmann { weight: w }).collect(),
        terms: Arc::new(c),
        pi,
        c_a,
        c_f,
        c_f_prime,
        lipschitz,
        structure,
        drift: None,
    })
}

/// Seawater intrusion, `h(u) = g(u₁)/δ + g(u₂)` and `c_A = (1 - δ)/2`.
pub fn seawater_model(delta: f64) -> Result<Model, ModelError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(ModelError::Parameter(format!("δ = {delta} must lie in (0, 1)")));
    }
    Ok(Model {
        name: "seawater".into(),
        terms: Arc::new(Seawater { delta }),
        entropy: vec![
            EntropyComponent::Boltzmann { weight: 1.0 / delta },
            EntropyComponent::Boltzmann { weight: 1.0 },
        ],
        pi: vec![1.0 / delta, 1.0],
        c_a: 0.5 * (1.0 - delta),
        c_f: 0.0,
        c_f_prime: 0.0,
        lipschitz: (2.0 * delta * delta + delta * delta + 1.0).sqrt(),
        structure: Structure::Explicit,
        drift: None,
    })
}

/// Keller–Segel with additional cross-diffusion; the signal species is
/// signed and carries the quadratic entropy `u₂²/(2δ)`.
///
/// No finite `C_f` exists for this entropy (`f₂ h₂'` grows like `u₁²`), so
/// `c_f` is infinite and the entropy inequality monitor never applies.
pub fn keller_segel_model(delta: f64) -> Result<Model, ModelError> {
    if !(delta > 0.0) {
        return Err(ModelError::Parameter(format!("δ = {delta} must be positive")));
    }
    Ok(Model {
        name: "keller_segel".into(),
        terms: Arc::new(KellerSegel { delta }),
        entropy: vec![EntropyComponent::Boltzmann { weight: 1.0 }, EntropyComponent::Quadratic { delta }],
        pi: vec![1.0, 1.0 / delta],
        c_a: 2f64.min(1.0 / delta),
        c_f: f64::INFINITY,
        c_f_prime: 1.0,
        lipschitz: 5f64.sqrt(),
        structure: Structure::Explicit,
        drift: None,
    })
}

/// Fluid mixture `A_ij = δ_ij a_i0 + a_ij u_i` with Boltzmann weights `π`.
pub fn fluid_mixture_model(a0: Vec<f64>, a: Vec<Vec<f64>>, pi: Vec<f64>) -> Result<Model, ModelError> {
    let n = a0.len();
    if n == 0 || a.len() != n || a.iter().any(|r| r.len() != n) || pi.len() != n {
        return Err(ModelError::Dimension(format!("expected {n} species in a, a0 and π")));
    }
    if a0.iter().chain(a.iter().flatten()).any(|&x| !(x >= 0.0)) || pi.iter().any(|&p| !(p > 0.0)) {
        return Err(ModelError::Coefficient("a must be nonnegative and π positive".into()));
    }
    let scale = a.iter().flatten().fold(0.0f64, |m, &x| m.max(x)).max(f64::MIN_POSITIVE);
    for i in 0..n {
        for j in (i + 1)..n {
            let (lhs, rhs) = (pi[i] * a[i][j], pi[j] * a[j][i]);
            if (lhs - rhs).abs() > 1e-12 * scale * pi[i].max(pi[j]) {
                return Err(ModelError::DetailedBalance { i, j, lhs, rhs });
            }
        }
    }
    let b = nalgebra::DMatrix::from_fn(n, n, |i, j| 0.5 * (pi[i] * a[i][j] + pi[j] * a[j][i]));
    let lambda0 = b.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if !(lambda0 > 0.0) {
        return Err(ModelError::NotPositiveDefinite(lambda0));
    }
    let lipschitz = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    Ok(Model {
        name: format!("fluid_mixture{n}"),
        entropy: pi.iter().map(|&w| EntropyComponent::Boltzmann { weight: w }).collect(),
        terms: Arc::new(FluidMixture { a0, a }),
        pi,
        c_a: lambda0,
        c_f: 0.0,
        c_f_prime: 0.0,
        lipschitz,
        structure: Structure::DetailedBalance,
        drift: None,
    })
}

/// Outcome of the randomized hypothesis checks. Failures are collected in
/// `violations`, never raised.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub seed: u64,
    pub convexity_ok: bool,
    pub concavity_ok: bool,
    pub inverse_ok: bool,
    pub lower_bound_ok: bool,
    /// Some `h_i'` is not invertible on `(0, ∞)` (signed species).
    pub invertibility_relaxed: bool,
    /// `min zᵀ h''(u) A(u) z / |z|²` over the samples.
    pub definiteness_margin: f64,
    pub definiteness_ok: bool,
    /// `max Σ_i f_i h_i'(u_i) - C_f (1 + h(u))`.
    pub growth_margin: f64,
    pub growth_ok: bool,
    /// `max Σ_i |f_i| - C_f' (1 + |u|²)`.
    pub growth2_margin: f64,
    pub growth2_ok: bool,
    pub violations: Vec<String>,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// Randomized check of the structural hypotheses on the entropy, the
/// diffusion matrix and the sources. Deterministic for a given seed.
pub fn verify_hypotheses(model: &Model, samples: usize, seed: u64) -> HypothesisReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n_species();
    let mut violations = Vec::new();
    let (mut convex, mut concave, mut inverse, mut lower) = (true, true, true, true);
    let relaxed = model.entropy().iter().any(|h| h.is_signed());

    for (i, h) in model.entropy().iter().enumerate() {
        let (slope, offset) = h.lower_bound();
        for _ in 0..samples {
            let s = log_uniform(&mut rng, 1e-6, 1e6);
            let t = log_uniform(&mut rng, 1e-6, 1e6);
            let (s, t) = if s < t { (s, t) } else { (t, s) };
            if s == t {
                continue;
            }
            if h.deriv(s) > h.deriv(t) {
                convex = false;
            }
            if !h.is_signed() && !(h.deriv2(s) > h.deriv2(t)) {
                concave = false;
            }
            match h.deriv_inverse(h.deriv(s)) {
                Some(r) if (r - s).abs() <= 1e-12 * s.max(1.0) * 10.0 => {}
                _ => inverse = false,
            }
            let x = rng.random_range(0.0..1e6);
            if h.eval(x) < slope * x - offset - 1e-9 * (1.0 + x.abs()) {
                lower = false;
            }
        }
        if !convex {
            violations.push(format!("h_{} is not convex on the samples", i + 1));
        }
        if !concave {
            violations.push(format!("h_{}'' is not strictly decreasing", i + 1));
        }
        if !inverse {
            violations.push(format!("(h_{}')^{{-1}} does not invert h_{}'", i + 1, i + 1));
        }
        if !lower {
            violations.push(format!("h_{} violates its affine lower bound", i + 1));
        }
    }

    let sample_u = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n)
            .map(|i| {
                if model.is_signed(i) {
                    rng.random_range(-1e3..1e3)
                } else {
                    log_uniform(rng, 1e-3, 1e3)
                }
            })
            .collect()
    };

    let mut margin = f64::INFINITY;
    let mut growth = f64::NEG_INFINITY;
    let mut growth2 = f64::NEG_INFINITY;
    for _ in 0..samples {
        let u = sample_u(&mut rng);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z2: f64 = z.iter().map(|x| x * x).sum();
        if z2 > 1e-12 {
            margin = margin.min(model.entropy_form(&u, &z) / z2);
        }
        let f = model.source(&u);
        if model.c_f().is_finite() {
            let lhs: f64 = (0..n).map(|i| f[i] * model.entropy()[i].deriv(u[i])).sum();
            let rhs = model.c_f() * (1.0 + model.entropy_density(&u));
            let slack = 1e-10 * (1.0 + lhs.abs() + rhs.abs());
            growth = growth.max(lhs - rhs - slack);
        }
        let abs: f64 = f.iter().map(|x| x.abs()).sum();
        let u2: f64 = u.iter().map(|x| x * x).sum();
        growth2 = growth2.max(abs - model.c_f_prime() * (1.0 + u2) - 1e-10 * (1.0 + abs));
    }
    let definiteness_ok = model.c_a() > 0.0 && margin >= model.c_a() - 1e-10;
    if !definiteness_ok {
        violations.push(format!(
            "entropy definiteness: margin {margin:e} against c_A = {:e}",
            model.c_a()
        ));
    }
    let growth_ok = growth <= 0.0;
    if !growth_ok {
        violations.push(format!("source growth exceeds C_f(1 + h) by {growth:e}"));
    }
    let growth2_ok = growth2 <= 0.0;
    if !growth2_ok {
        violations.push(format!("|f| exceeds C_f'(1 + |u|²) by {growth2:e}"));
    }
    HypothesisReport {
        samples,
        seed,
        convexity_ok: convex,
        concavity_ok: concave,
        inverse_ok: inverse,
        lower_bound_ok: lower,
        invertibility_relaxed: relaxed,
        definiteness_margin: margin,
        definiteness_ok,
        growth_margin: growth,
        growth_ok,
        growth2_margin: growth2,
        growth2_ok,
        violations,
    }
}

/// The two-species coefficients of the convergence and pattern experiments.
pub fn reference_skt2() -> SktCoefficients {
    SktCoefficients {
        a0: vec![0.05, 0.05],
        a: vec![vec![2.5e-5, 1.025], vec![0.075, 2.5e-5]],
        b0: vec![59.7, 49.75],
        b: vec![vec![24.875, 19.9], vec![19.9, 19.9]],
    }
}

/// The source-free three-species coefficients of the large-time experiment.
pub fn reference_skt3() -> SktCoefficients {
    SktCoefficients::without_sources(
        vec![1.0, 5.0, 7.0],
        vec![vec![1.0, 3.0, 4.0], vec![1.0, 2.0, 4.0 / 3.0], vec![1.0, 1.0, 2.0]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn skt_reference_weights() {
        let m = skt_model(&reference_skt2(), None).unwrap();
        assert_eq!(m.structure(), Structure::DetailedBalance);
        assert_relative_eq!(m.pi()[1] / m.pi()[0], 1.025 / 0.075, max_relative = 1e-14);
        assert_relative_eq!(m.c_a(), 2.5e-5, max_relative = 1e-14);
        assert!(dominance_eta0(&reference_skt2().a) < 0.0);
    }

    #[test]
    fn skt_three_species_weights() {
        let m = skt_model(&reference_skt3(), None).unwrap();
        let pi = m.pi();
        assert_relative_eq!(pi[0], 1.0);
        assert_relative_eq!(pi[1], 3.0, max_relative = 1e-14);
        assert_relative_eq!(pi[2], 4.0, max_relative = 1e-14);
        assert_eq!(m.c_f(), 0.0);
        assert!(!m.has_source());
    }

    #[test]
    fn decoupled_skt_diffusion() {
        let c = SktCoefficients::without_sources(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let m = skt_model(&c, None).unwrap();
        let a = m.diffusion_matrix(&[0.3, 0.7]);
        assert_eq!(a, vec![0.6, 0.0, 0.0, 1.4]);
    }

    #[test]
    fn detailed_balance_cases() {
        let pi = detailed_balance_weights(&[vec![0.0, 1.025], vec![0.075, 0.0]]).unwrap();
        assert_relative_eq!(pi[1], 1.025 / 0.075, max_relative = 1e-15);
        let sym = vec![vec![1.0, 2.0, 3.0], vec![2.0, 1.0, 4.0], vec![3.0, 4.0, 1.0]];
        assert_eq!(detailed_balance_weights(&sym).unwrap(), vec![1.0; 3]);
        let cyc = vec![vec![0.0, 1.0, 2.0], vec![2.0, 0.0, 1.0], vec![1.0, 2.0, 0.0]];
        assert!(matches!(detailed_balance_weights(&cyc), Err(ModelError::DetailedBalance { .. })));
        // one-sided coupling cannot be balanced
        assert!(detailed_balance_weights(&[vec![1.0, 4.0], vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn dominance_cases() {
        let sym = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
        assert_relative_eq!(dominance_eta0(&sym), 1.0);
        // 1 - ¼ (2 - 0)² = 0 for both rows
        assert_relative_eq!(dominance_eta0(&[vec![1.0, 4.0], vec![0.0, 1.0]]), 0.0);
        let m = skt_model(&SktCoefficients::without_sources(vec![0.0; 2], vec![vec![1.0, 4.0], vec![0.0, 1.0]]), None)
            .unwrap();
        assert_eq!(m.structure(), Structure::NonEntropic);
        let m = skt_model(&SktCoefficients::without_sources(vec![0.0; 2], vec![vec![2.0, 1.0], vec![0.0, 2.0]]), None)
            .unwrap();
        assert_eq!(m.structure(), Structure::Dominance);
        assert_relative_eq!(m.c_a(), 2.0 * 1.75);
    }

    #[test]
    fn cf_values() {
        let zero = SktCoefficients::without_sources(vec![1.0, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(compute_cf(&zero, &[1.0, 1.0]), 0.0);
        let one = SktCoefficients { a0: vec![1.0], a: vec![vec![1.0]], b0: vec![1.0], b: vec![vec![0.0]] };
        assert_relative_eq!(compute_cf(&one, &[1.0]), 2.0 / 2f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(compute_cf(&one, &[1.0]), 2.885390081777927, max_relative = 1e-14);
        let c = reference_skt2();
        let pi = [1.0, 1.025 / 0.075];
        // hand evaluation: i = 1 dominates
        let e = std::f64::consts::E;
        let expect = 2.0 / 2f64.ln() * (59.7 + (24.875 + pi[1] * 19.9) / e);
        assert_relative_eq!(compute_cf(&c, &pi), expect, max_relative = 1e-14);
    }

    #[test]
    fn seawater_identity() {
        let m = seawater_model(0.5).unwrap();
        assert_relative_eq!(m.entropy_form(&[1.0, 1.0], &[1.0, -1.0]), 0.5, max_relative = 1e-15);
        assert_eq!(m.diffusion_matrix(&[1.0, 1.0]), vec![0.5, 0.5, 0.5, 1.0]);
        assert_relative_eq!(m.c_a(), 0.25);
        assert!(seawater_model(1.0).is_err());
        assert!(seawater_model(0.0).is_err());
    }

    #[test]
    fn keller_segel_identity() {
        let m = keller_segel_model(1.0).unwrap();
        assert_relative_eq!(m.entropy_form(&[0.7, -3.0], &[1.0, 1.0]), 3.0, max_relative = 1e-15);
        assert_eq!(m.source(&[1.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(keller_segel_model(0.25).unwrap().c_a(), 2.0);
        assert!(m.is_signed(1) && !m.is_signed(0));
    }

    #[test]
    fn fluid_mixture_lambda0() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_relative_eq!(fluid_mixture_model(vec![0.0; 2], id, vec![1.0; 2]).unwrap().c_a(), 1.0);
        let m = fluid_mixture_model(vec![0.0; 2], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![1.0; 2]).unwrap();
        assert_relative_eq!(m.c_a(), 1.0, max_relative = 1e-12);
        let m = fluid_mixture_model(vec![0.1], vec![vec![3.0]], vec![1.0]).unwrap();
        assert_relative_eq!(m.diffusion_matrix(&[2.0])[0], 6.1);
        let indefinite = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(
            fluid_mixture_model(vec![0.0; 2], indefinite, vec![1.0; 2]),
            Err(ModelError::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn boltzmann_minimum_and_bound() {
        let h = EntropyComponent::Boltzmann { weight: 3.0 };
        assert_eq!(h.eval(1.0), 0.0);
        assert_eq!(h.eval(0.0), 3.0);
        let (slope, offset) = h.lower_bound();
        for k in 0..=1000 {
            let s = 1e3 * k as f64;
            assert!(h.eval(s) >= slope * s - offset - 1e-9 * s);
        }
    }

    #[test]
    fn hypotheses_on_provided_models() {
        let models = [
            skt_model(&reference_skt2(), None).unwrap(),
            skt_model(&reference_skt3(), None).unwrap(),
            seawater_model(0.3).unwrap(),
            keller_segel_model(1.0).unwrap(),
            fluid_mixture_model(vec![0.1, 0.2], vec![vec![2.0, 1.0], vec![1.0, 2.0]], vec![1.0, 1.0]).unwrap(),
        ];
        for m in &models {
            let r = verify_hypotheses(m, 10_000, 7);
            assert!(r.passed(), "{}: {:?}", m.name(), r.violations);
        }
        let r = verify_hypotheses(&models[0], 10_000, 7);
        assert!(r.definiteness_margin >= 2.5e-5 - 1e-10);
        let ks = verify_hypotheses(&models[3], 1000, 1);
        assert!(ks.invertibility_relaxed && ks.definiteness_ok);
    }

    #[test]
    fn zero_self_diffusion_fails_definiteness() {
        let c = SktCoefficients::without_sources(vec![0.0, 0.0], vec![vec![0.0, 1.0], vec![1.0, 1.0]]);
        let m = skt_model(&c, None).unwrap();
        let r = verify_hypotheses(&m, 2000, 3);
        assert!(!r.definiteness_ok);
        assert!(c.validate().is_err());
    }

    #[test]
    fn verification_is_deterministic() {
        let m = skt_model(&reference_skt2(), None).unwrap();
        let a = verify_hypotheses(&m, 500, 11);
        let b = verify_hypotheses(&m, 500, 11);
        assert_eq!(a.definiteness_margin.to_bits(), b.definiteness_margin.to_bits());
        assert_eq!(a.growth_margin.to_bits(), b.growth_margin.to_bits());
    }
}
