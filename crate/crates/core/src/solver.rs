//! Newton's method for the implicit Euler step and adaptive time stepping.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

use crate::analysis::{discrete_entropy, gradient_seminorm_sq};
use crate::linalg::{BlockMatrix, BlockPattern, LinearError, LinearSolver};
use crate::scheme::{Scheme, SchemeError, State};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("Newton failed at t = {time}, Δt = {dt:e} after {iterations} iterations: {reason}")]
    NewtonFailed { time: f64, dt: f64, iterations: usize, reason: String },
    #[error("time step fell below Δt_min at t = {time} (Δt = {dt:e})")]
    DtUnderflow { time: f64, dt: f64 },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Linear(#[from] LinearError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NewtonVariables {
    /// Unknowns are the densities; steps are damped to keep them nonnegative.
    #[default]
    Natural,
    /// Unknowns are `w = h'(u)`; positivity is automatic.
    Entropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Quantity whose sup-norm is compared with the Newton tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NewtonNorm {
    /// `R_{i,K}` itself.
    Raw,
    /// `Δt R_{i,K} / m(K)`, in units of the densities.
    #[default]
    Increment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub newton_norm: NewtonNorm,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub adaptive: bool,
    pub variables: NewtonVariables,
    pub jacobian: JacobianMode,
    pub fd_epsilon: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            newton_tol: 1e-8,
            newton_max_iter: 50,
            newton_norm: NewtonNorm::Increment,
            dt_init: 1e-5,
            dt_min: 1e-8,
            dt_max: 1e-2,
            adaptive: true,
            variables: NewtonVariables::Natural,
            jacobian: JacobianMode::Analytic,
            fd_epsilon: 1e-7,
        }
    }
}

impl SolverConfig {
    /// Fixed step `dt` with a tight Newton tolerance, as in the 1D runs.
    pub fn fixed(dt: f64) -> SolverConfig {
        SolverConfig { newton_tol: 1e-10, dt_init: dt, dt_min: dt, dt_max: dt, adaptive: false, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.into()));
        if !(self.newton_tol > 0.0) {
            return bad("newton_tol must be positive");
        }
        if self.newton_max_iter == 0 {
            return bad("newton_max_iter must be at least 1");
        }
        if !(self.dt_init > 0.0) {
            return bad("dt_init must be positive");
        }
        if self.adaptive && !(self.dt_min > 0.0 && self.dt_min <= self.dt_init && self.dt_init <= self.dt_max) {
            return bad("need 0 < dt_min <= dt_init <= dt_max");
        }
        if !(self.fd_epsilon > 0.0) {
            return bad("fd_epsilon must be positive");
        }
        Ok(())
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub newton_iterations: usize,
    pub residual_norm: f64,
    pub halvings: usize,
    pub masses: Vec<f64>,
    pub min_values: Vec<f64>,
    pub entropy: f64,
    /// `c_A Δt Σ_σ τ_σ |D_σ u|²`.
    pub dissipation: f64,
    /// Discrete entropy inequality; `None` when it does not apply.
    pub entropy_inequality: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct NewtonOutcome {
    pub state: State,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn sup_norm(r: &[f64], weights: &[f64], n: usize) -> f64 {
    r.iter()
        .enumerate()
        .fold(0.0, |m, (p, v)| if v.is_nan() { f64::NAN } else { m.max(v.abs() * weights[p / n]) })
}

fn l2_norm(r: &[f64], weights: &[f64], n: usize) -> f64 {
    r.iter().enumerate().map(|(p, v)| (v * weights[p / n]).powi(2)).sum::<f64>().sqrt()
}

/// Newton solver for one implicit Euler step, holding its linear-algebra
/// workspace across calls.
#[derive(Debug)]
pub struct NewtonSolver<'s, 'a> {
    scheme: &'s Scheme<'a>,
    config: SolverConfig,
    jac: BlockMatrix,
    linear: LinearSolver,
}

impl<'s, 'a> NewtonSolver<'s, 'a> {
    pub fn new(scheme: &'s Scheme<'a>, config: SolverConfig) -> Result<Self, SolverError> {
        config.validate()?;
        let pattern = Arc::new(BlockPattern::from_mesh(scheme.mesh(), scheme.model().n_species()));
        Ok(NewtonSolver {
            scheme,
            config,
            jac: BlockMatrix::zeros(pattern),
            linear: LinearSolver::for_mesh(scheme.mesh()),
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    fn norm_weights(&self, dt: f64) -> Vec<f64> {
        match self.config.newton_norm {
            NewtonNorm::Raw => vec![1.0; self.scheme.mesh().n_cells()],
            NewtonNorm::Increment => self.scheme.mesh().cells().iter().map(|c| dt / c.measure).collect(),
        }
    }

    fn assemble(&mut self, u: &State, old: &State, dt: f64) -> Result<(), SchemeError> {
        match self.config.jacobian {
            JacobianMode::Analytic => self.scheme.jacobian(u, dt, &mut self.jac),
            JacobianMode::FiniteDifference => self.scheme.jacobian_fd(u, old, dt, self.config.fd_epsilon, &mut self.jac),
        }
    }

    /// Solves `R(u) = 0` for the state at `old.time + dt`, starting from `old`.
    pub fn solve(&mut self, old: &State, dt: f64) -> Result<NewtonOutcome, SolverError> {
        let fail = |iterations: usize, reason: String| SolverError::NewtonFailed { time: old.time, dt, iterations, reason };
        match self.config.variables {
            NewtonVariables::Natural => self.solve_natural(old, dt).map_err(|(i, r)| fail(i, r)),
            NewtonVariables::Entropy => self.solve_entropy(old, dt).map_err(|(i, r)| fail(i, r)),
        }
    }

    fn solve_natural(&mut self, old: &State, dt: f64) -> Result<NewtonOutcome, (usize, String)> {
        let model = self.scheme.model();
        let n = model.n_species();
        let weights = self.norm_weights(dt);
        let mut u = old.clone();
        u.time = old.time + dt;
        let mut r = self.scheme.residual(&u, old, dt).map_err(|e| (0, e.to_string()))?;
        for iter in 0..=self.config.newton_max_iter {
            let norm = sup_norm(&r, &weights, n);
            if !norm.is_finite() {
                return Err((iter, "non-finite residual".into()));
            }
            if iter > 0 && norm <= self.config.newton_tol {
                return Ok(NewtonOutcome { state: u, iterations: iter, residual_norm: norm });
            }
            if iter == self.config.newton_max_iter {
                return Err((iter, format!("residual {norm:e} above tolerance")));
            }
            self.assemble(&u, old, dt).map_err(|e| (iter, e.to_string()))?;
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = self.linear.solve(&self.jac, &rhs).map_err(|e| (iter, e.to_string()))?;
            // largest α = 2^{-m} keeping unsigned species nonnegative
            let mut alpha = 1.0;
            let vals = u.values();
            for (p, d) in delta.iter().enumerate() {
                if model.is_signed(p % n) {
                    continue;
                }
                while vals[p] + alpha * d < 0.0 {
                    alpha *= 0.5;
                    if alpha < 1e-12 {
                        return Err((iter, "line search could not preserve positivity".into()));
                    }
                }
            }
            // backtrack on the weighted residual
            let merit = l2_norm(&r, &weights, n);
            let mut trial = u.clone();
            let mut halvings = 0;
            let rt = loop {
                for ((t, v), d) in trial.values_mut().iter_mut().zip(u.values()).zip(&delta) {
                    *t = v + alpha * d;
                }
                let rt = self.scheme.residual(&trial, old, dt).map_err(|e| (iter, e.to_string()))?;
                let mt = l2_norm(&rt, &weights, n);
                if mt <= (1.0 - 1e-4 * alpha) * merit || sup_norm(&rt, &weights, n) <= self.config.newton_tol {
                    break rt;
                }
                if halvings == 10 {
                    return Err((iter, "line search stagnated".into()));
                }
                alpha *= 0.5;
                halvings += 1;
            };
            u = trial;
            r = rt;
        }
        unreachable!()
    }

    fn solve_entropy(&mut self, old: &State, dt: f64) -> Result<NewtonOutcome, (usize, String)> {
        let model = self.scheme.model();
        let n = model.n_species();
        let h = model.entropy();
        let to_u = |w: &[f64], time: f64| -> Option<State> {
            let vals: Option<Vec<f64>> = w.iter().enumerate().map(|(p, &x)| h[p % n].deriv_inverse(x)).collect();
            vals.and_then(|v| State::from_values(n, v, time).ok())
        };
        let mut w: Vec<f64> = old
            .values()
            .iter()
            .enumerate()
            .map(|(p, &x)| if model.is_signed(p % n) { h[p % n].deriv(x) } else { h[p % n].deriv(x.max(1e-300)) })
            .collect();
        let time = old.time + dt;
        let weights = self.norm_weights(dt);
        let mut u = to_u(&w, time).ok_or((0, "initial state outside the range of (h')^{-1}".to_string()))?;
        let mut r = self.scheme.residual(&u, old, dt).map_err(|e| (0, e.to_string()))?;
        for iter in 0..=self.config.newton_max_iter {
            let norm = sup_norm(&r, &weights, n);
            if !norm.is_finite() {
                return Err((iter, "non-finite residual".into()));
            }
            if iter > 0 && norm <= self.config.newton_tol {
                return Ok(NewtonOutcome { state: u, iterations: iter, residual_norm: norm });
            }
            if iter == self.config.newton_max_iter {
                return Err((iter, format!("residual {norm:e} above tolerance")));
            }
            self.assemble(&u, old, dt).map_err(|e| (iter, e.to_string()))?;
            // δw = h''(u) δu, which avoids column scaling by 1/h'' → 0
            let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
            let du = self.linear.solve(&self.jac, &rhs).map_err(|e| (iter, e.to_string()))?;
            let delta: Vec<f64> = du.iter().zip(u.values()).enumerate().map(|(p, (d, &x))| h[p % n].deriv2(x) * d).collect();
            // backtrack on the weighted residual
            let merit = l2_norm(&r, &weights, n);
            let mut alpha = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = w.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                if let Some(cand) = to_u(&trial, time) {
                    if let Ok(rc) = self.scheme.residual(&cand, old, dt) {
                        let mt = l2_norm(&rc, &weights, n);
                        let converged = sup_norm(&rc, &weights, n) <= self.config.newton_tol;
                        if mt.is_finite() && (mt <= (1.0 - 1e-4 * alpha) * merit || converged) {
                            break Some((trial, cand, rc));
                        }
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-3 {
                    break None;
                }
            };
            let Some((trial, cand, rc)) = accepted else {
                return Err((iter, "no admissible entropy-variable update".into()));
            };
            w = trial;
            u = cand;
            r = rc;
        }
        unreachable!()
    }
}

/// Diagnostics of an accepted step from `old` to `new`.
fn step_report(scheme: &Scheme<'_>, old: &State, new: &State, step: usize, outcome: &NewtonOutcome, halvings: usize) -> StepReport {
    let mesh = scheme.mesh();
    let model = scheme.model();
    let n = model.n_species();
    let dt = new.time - old.time;
    let h_new = discrete_entropy(mesh, model, new);
    let h_old = discrete_entropy(mesh, model, old);
    let grad2 = gradient_seminorm_sq(mesh, new);
    let c_a = model.c_a();
    let c_f = model.c_f();
    let applies = model.is_entropic() && c_f.is_finite() && c_f * dt < 1.0;
    let entropy_inequality = applies.then(|| {
        let omega = mesh.domain_measure();
        let (lhs, rhs) = match (model.drift(), scheme.potential()) {
            (Some(d), phi) => {
                let phi_state = State::from_values(1, phi.to_vec(), 0.0).expect("one value per cell");
                let dphi = gradient_seminorm_sq(mesh, &phi_state);
                let d2: f64 = d.coefficients.iter().map(|x| x * x).sum();
                (
                    (1.0 - c_f * dt) * h_new + 0.5 * c_a * dt * grad2,
                    h_old + dt / (2.0 * c_a) * d2 * dphi + c_f * dt * omega,
                )
            }
            (None, _) => ((1.0 - c_f * dt) * h_new + c_a * dt * grad2, h_old + c_f * dt * omega),
        };
        let ok = lhs <= rhs + 1e-9 * (1.0 + rhs.abs());
        if !ok {
            log::warn!("discrete entropy inequality violated at t = {}: {lhs:e} > {rhs:e}", new.time);
        }
        ok
    });
    StepReport {
        step,
        time: new.time,
        dt,
        newton_iterations: outcome.iterations,
        residual_norm: outcome.residual_norm,
        halvings,
        masses: new.masses(mesh),
        min_values: (0..n).map(|i| new.species(i).into_iter().fold(f64::INFINITY, f64::min)).collect(),
        entropy: h_new,
        dissipation: c_a * dt * grad2,
        entropy_inequality,
    }
}

/// Implicit Euler time stepping; keeps the current step size between calls
/// so a run can be split at output times.
#[derive(Debug)]
pub struct TimeStepper<'s, 'a> {
    newton: NewtonSolver<'s, 'a>,
    scheme: &'s Scheme<'a>,
    dt: f64,
    step: usize,
}

impl<'s, 'a> TimeStepper<'s, 'a> {
    pub fn new(scheme: &'s Scheme<'a>, config: SolverConfig) -> Result<Self, SolverError> {
        let dt = config.dt_init;
        Ok(TimeStepper { newton: NewtonSolver::new(scheme, config)?, scheme, dt, step: 0 })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Advances `state` to exactly `t_end`, calling `observer` after every
    /// accepted step.
    pub fn advance_to(
        &mut self,
        mut state: State,
        t_end: f64,
        observer: &mut dyn FnMut(&StepReport, &State),
    ) -> Result<State, SolverError> {
        let cfg = self.newton.config().clone();
        let eps = 1e-12 * t_end.abs().max(1.0);
        while state.time < t_end - eps {
            let remaining = t_end - state.time;
            let clipped = self.dt >= remaining - eps;
            let mut dt_try = if clipped { remaining } else { self.dt };
            let mut halvings = 0;
            let outcome = loop {
                match self.newton.solve(&state, dt_try) {
                    Ok(o) => break o,
                    Err(e) if cfg.adaptive => {
                        dt_try *= 0.5;
                        halvings += 1;
                        log::debug!("{e}; halving to {dt_try:e}");
                        if dt_try < cfg.dt_min {
                            return Err(SolverError::DtUnderflow { time: state.time, dt: dt_try });
                        }
                    }
                    Err(e) => return Err(e),
                }
            };
            let mut new = outcome.state.clone();
            new.time = if clipped && halvings == 0 { t_end } else { state.time + dt_try };
            self.step += 1;
            let report = step_report(self.scheme, &state, &new, self.step, &outcome, halvings);
            observer(&report, &new);
            if cfg.adaptive {
                if halvings > 0 {
                    self.dt = dt_try;
                }
                if !(clipped && halvings == 0) {
                    self.dt = (2.0 * self.dt).clamp(cfg.dt_min, cfg.dt_max);
                }
            }
            state = new;
        }
        state.time = t_end;
        Ok(state)
    }
}

/// Runs from `initial` to `t_end` and returns the final state with all step
/// reports.
pub fn advance(
    scheme: &Scheme<'_>,
    initial: &State,
    t_end: f64,
    config: &SolverConfig,
) -> Result<(State, Vec<StepReport>), SolverError> {
    let mut stepper = TimeStepper::new(scheme, config.clone())?;
    let mut reports = Vec::new();
    let end = stepper.advance_to(initial.clone(), t_end, &mut |r, _| reports.push(r.clone()))?;
    Ok((end, reports))
}
