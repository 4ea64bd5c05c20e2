//! Config-driven experiment runner: metadata, step logs, snapshots and the
//! experiment-specific artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::analysis::{
    convergence_harness, discrete_norm, stability_predicate, AnalysisError, ConvergenceTable, DecayReport, DecayTrace,
    NormKind, StabilityReport,
};
use crate::config::{ConfigError, Experiment, Format, MeshSpec, ModelSpec, RunConfig};
use crate::io::{plot_convergence, plot_decay, plot_masses, write_snapshot_csv, write_vtk, IoError, StepLog};
use crate::mesh::Mesh;
use crate::model::{verify_hypotheses, HypothesisReport, Model, Structure};
use crate::scheme::{project_initial, Scheme, SchemeError, State};
use crate::solver::{SolverError, StepReport, TimeStepper};

/// Overrides `output.directory` when set.
pub const OUTPUT_DIR_ENV: &str = "CROSSDIFF_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Unsupported(String),
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Write { path: path.into(), source })
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let text = toml::to_string(value).map_err(|e| RunError::Unsupported(e.to_string()))?;
    write_text(path, &text)
}

/// The run directory: `$CROSSDIFF_OUTPUT_DIR` if set and non-empty,
/// otherwise `output.directory`.
pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => cfg.output.directory.clone(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshInfo {
    pub dimension: usize,
    pub cells: usize,
    pub edges: usize,
    pub interior_edges: usize,
    pub size: f64,
    pub zeta: f64,
    pub domain_measure: f64,
}

impl MeshInfo {
    pub fn of(mesh: &Mesh) -> MeshInfo {
        MeshInfo {
            dimension: mesh.dimension(),
            cells: mesh.n_cells(),
            edges: mesh.edges().len(),
            interior_edges: mesh.interior_edges().len(),
            size: mesh.size(),
            zeta: mesh.zeta(),
            domain_measure: mesh.domain_measure(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelInfo {
    pub name: String,
    pub n_species: usize,
    pub structure: Structure,
    pub entropic: bool,
    pub pi: Vec<f64>,
    pub c_a: f64,
    pub c_f: f64,
    pub c_f_prime: f64,
    pub has_source: bool,
    pub drift: bool,
}

impl ModelInfo {
    pub fn of(model: &Model) -> ModelInfo {
        ModelInfo {
            name: model.name().to_string(),
            n_species: model.n_species(),
            structure: model.structure(),
            entropic: model.is_entropic(),
            pi: model.pi().to_vec(),
            c_a: model.c_a(),
            c_f: model.c_f(),
            c_f_prime: model.c_f_prime(),
            has_source: model.has_source(),
            drift: model.drift().is_some(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct StepInfo {
    dt_init: f64,
    dt_max: f64,
    adaptive: bool,
    inverse_c_f: f64,
    /// Whether every admissible step satisfies `Δt < 1/C_f`.
    dt_below_inverse_c_f: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Metadata {
    experiment: Experiment,
    description: String,
    crate_version: &'static str,
    mesh: MeshInfo,
    model: ModelInfo,
    time_step: StepInfo,
}

#[derive(Debug, Clone, Serialize)]
pub struct NicheReport {
    /// 1-based species index.
    pub species: usize,
    pub time: f64,
    pub center_average: f64,
    pub domain_average: f64,
    pub forms_niche: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PatternReport {
    pub ustar: Vec<f64>,
    pub times: Vec<f64>,
    /// `(Σ_i ‖u_i - u*_i‖²_{0,2})^{1/2}` at each snapshot.
    pub distances: Vec<f64>,
}

impl PatternReport {
    pub fn distance_at(&self, t: f64) -> Option<f64> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0)).map(|k| self.distances[k])
    }
}

#[derive(Debug, Clone, Serialize)]
struct DecaySummary {
    ubar: Vec<f64>,
    fitted_lambda: Option<f64>,
    r_squared: Option<f64>,
    strictly_decreasing: bool,
    c3: f64,
    kappa_bound_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
struct Failure {
    error: String,
    last_accepted_step: usize,
    last_accepted_time: f64,
    dt: f64,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub mesh: MeshInfo,
    pub model: ModelInfo,
    pub final_state: Option<State>,
    pub steps: Vec<StepReport>,
    pub snapshot_times: Vec<f64>,
    pub convergence: Option<ConvergenceTable>,
    pub stability: Option<StabilityReport>,
    pub decay: Option<DecayReport>,
    pub niche: Option<NicheReport>,
    pub pattern: Option<PatternReport>,
}

/// Checks the mesh and model of a config without running it.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub mesh: MeshInfo,
    pub model: ModelInfo,
    pub hypotheses: HypothesisReport,
}

pub fn validate(cfg: &RunConfig) -> Result<ValidationReport, RunError> {
    let (mesh, model) = cfg.build()?;
    Ok(ValidationReport {
        mesh: MeshInfo::of(&mesh),
        model: ModelInfo::of(&model),
        hypotheses: verify_hypotheses(&model, 2000, 0),
    })
}

/// Average of `species` over the disc `|x - center| ≤ radius` and over the
/// whole domain.
pub fn region_averages(mesh: &Mesh, u: &State, species: usize, center: [f64; 2], radius: f64) -> (f64, f64) {
    let (mut num, mut den, mut total, mut omega) = (0.0, 0.0, 0.0, 0.0);
    for (k, c) in mesh.cells().iter().enumerate() {
        let v = u.get(species, k) * c.measure;
        total += v;
        omega += c.measure;
        if (c.center[0] - center[0]).hypot(c.center[1] - center[1]) <= radius {
            num += v;
            den += c.measure;
        }
    }
    (if den > 0.0 { num / den } else { f64::NAN }, total / omega)
}

/// `(Σ_i ‖u_i - c_i‖²_{0,2})^{1/2}`.
pub fn distance_to_constant(mesh: &Mesh, u: &State, c: &[f64]) -> f64 {
    (0..u.n_species())
        .map(|i| {
            let d: Vec<f64> = u.species(i).iter().map(|x| x - c[i]).collect();
            discrete_norm(mesh, &d, NormKind::Lq(2.0)).unwrap().powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn bounding_box(mesh: &Mesh) -> ((f64, f64), (f64, f64)) {
    let mut b = ((f64::INFINITY, f64::NEG_INFINITY), (f64::INFINITY, f64::NEG_INFINITY));
    for p in mesh.vertices() {
        b.0 .0 = b.0 .0.min(p[0]);
        b.0 .1 = b.0 .1.max(p[0]);
        b.1 .0 = b.1 .0.min(p[1]);
        b.1 .1 = b.1 .1.max(p[1]);
    }
    b
}

struct Snapshots<'a> {
    dir: PathBuf,
    mesh: &'a Mesh,
    formats: Vec<Format>,
    index: csv::Writer<fs::File>,
    count: usize,
}

impl<'a> Snapshots<'a> {
    fn new(dir: &Path, mesh: &'a Mesh, formats: &[Format]) -> Result<Self, RunError> {
        let dir = dir.join("snapshots");
        fs::create_dir_all(&dir).map_err(|source| RunError::Write { path: dir.clone(), source })?;
        let mut index = csv::Writer::from_path(dir.join("index.csv")).map_err(IoError::from)?;
        index.write_record(["index", "t", "file"]).map_err(IoError::from)?;
        Ok(Snapshots { dir, mesh, formats: formats.to_vec(), index, count: 0 })
    }

    fn emit(&mut self, u: &State) -> Result<(), RunError> {
        let stem = format!("snapshot_{:04}", self.count);
        let csv_name = format!("{stem}.csv");
        write_snapshot_csv(self.mesh, u, &self.dir.join(&csv_name))?;
        if self.mesh.dimension() == 2 && self.formats.contains(&Format::Vtk) {
            write_vtk(self.mesh, u, &self.dir.join(format!("{stem}.vtk")), &format!("t = {:e}", u.time))?;
        }
        self.index
            .write_record([self.count.to_string(), format!("{:e}", u.time), csv_name])
            .map_err(IoError::from)?;
        self.count += 1;
        Ok(())
    }

    fn finish(mut self) -> Result<(), RunError> {
        self.index.flush().map_err(|e| IoError::Io(e))?;
        Ok(())
    }
}

/// Runs `cfg` into `out_dir`. Solver failures are recorded in
/// `failure.toml` before the error is returned.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary, RunError> {
    fs::create_dir_all(out_dir).map_err(|source| RunError::Write { path: out_dir.into(), source })?;
    let (mesh, model) = cfg.build()?;
    write_text(&out_dir.join("config.toml"), &cfg.to_toml())?;
    let mesh_info = MeshInfo::of(&mesh);
    let model_info = ModelInfo::of(&model);
    let inverse_c_f = 1.0 / model.c_f();
    write_toml(
        &out_dir.join("metadata.toml"),
        &Metadata {
            experiment: cfg.experiment,
            description: cfg.description.clone(),
            crate_version: env!("CARGO_PKG_VERSION"),
            mesh: mesh_info.clone(),
            model: model_info.clone(),
            time_step: StepInfo {
                dt_init: cfg.solver.dt_init,
                dt_max: cfg.solver.dt_max,
                adaptive: cfg.solver.adaptive,
                inverse_c_f,
                dt_below_inverse_c_f: cfg.solver.dt_max.max(cfg.solver.dt_init) < inverse_c_f,
            },
        },
    )?;

    let mut summary = RunSummary {
        out_dir: out_dir.to_path_buf(),
        mesh: mesh_info,
        model: model_info,
        final_state: None,
        steps: Vec::new(),
        snapshot_times: Vec::new(),
        convergence: None,
        stability: None,
        decay: None,
        niche: None,
        pattern: None,
    };

    if let Some(st) = &cfg.stability {
        let ModelSpec::Skt { coefficients, .. } = &cfg.model.spec else {
            return Err(RunError::Unsupported("the stability test needs an SKT model".into()));
        };
        if mesh.dimension() != 2 {
            return Err(RunError::Unsupported("the stability test needs a rectangular 2D domain".into()));
        }
        let report = stability_predicate(coefficients, st.ustar, bounding_box(&mesh), st.mode_cap, st.form)?;
        write_toml(&out_dir.join("stability.toml"), &report)?;
        summary.stability = Some(report);
    }

    if cfg.experiment == Experiment::Convergence {
        let conv = cfg.convergence.as_ref().expect("checked on load");
        let MeshSpec::Interval { a, b, .. } = cfg.mesh else { unreachable!("checked on load") };
        let table = convergence_harness(
            &model,
            (a, b),
            &conv.cell_counts,
            conv.reference_cells,
            conv.dt,
            cfg.time.t_end,
            |i, x| cfg.initial.eval(i, x),
            &cfg.solver,
        )?;
        table.write_csv(&out_dir.join("convergence.csv")).map_err(IoError::from)?;
        plot_convergence(out_dir, &table)?;
        summary.convergence = Some(table);
        return Ok(summary);
    }

    if cfg.experiment == Experiment::Decay && model.has_source() {
        return Err(RunError::Unsupported("decay runs need a source-free model".into()));
    }

    let u0 = project_initial(&mesh, &model, cfg.initial.refine, |i, x| cfg.initial.eval(i, x))?;
    let scheme = Scheme::new(&mesh, &model);
    let mut stepper = TimeStepper::new(&scheme, cfg.solver.clone())?;
    let mut log = StepLog::create(&out_dir.join("steps.csv"), model.n_species())?;
    let mut snaps = Snapshots::new(out_dir, &mesh, &cfg.output.formats)?;
    snaps.emit(&u0)?;
    summary.snapshot_times.push(u0.time);

    let mut decay = match cfg.experiment {
        Experiment::Decay => {
            let mut d = DecayTrace::from_initial(&mesh, &u0)?;
            d.record(&mesh, &model, &u0)?;
            Some(d)
        }
        _ => None,
    };
    let ustar: Option<Vec<f64>> = cfg.stability.as_ref().map(|s| s.ustar.to_vec());
    let mut pattern = ustar.map(|u| PatternReport {
        distances: vec![distance_to_constant(&mesh, &u0, &u)],
        times: vec![0.0],
        ustar: u,
    });

    let every = cfg.output.every_steps;
    let mut state = u0;
    for t in cfg.snapshot_times() {
        let mut pending: Result<(), RunError> = Ok(());
        let mut observer = |r: &StepReport, u: &State| {
            if pending.is_err() {
                return;
            }
            summary.steps.push(r.clone());
            pending = (|| {
                log.write(r)?;
                if let Some(d) = decay.as_mut() {
                    d.record(&mesh, &model, u)?;
                }
                if every > 0 && r.step % every == 0 && (u.time - t).abs() > 1e-12 * t {
                    snaps.emit(u)?;
                }
                Ok(())
            })();
        };
        match stepper.advance_to(state.clone(), t, &mut observer) {
            Ok(next) => state = next,
            Err(e) => {
                let last = summary.steps.last();
                write_toml(
                    &out_dir.join("failure.toml"),
                    &Failure {
                        error: e.to_string(),
                        last_accepted_step: last.map_or(0, |r| r.step),
                        last_accepted_time: last.map_or(0.0, |r| r.time),
                        dt: stepper.dt(),
                    },
                )?;
                let _ = log.finish();
                return Err(e.into());
            }
        }
        pending?;
        snaps.emit(&state)?;
        summary.snapshot_times.push(t);
        if let Some(p) = pattern.as_mut() {
            p.times.push(t);
            p.distances.push(distance_to_constant(&mesh, &state, &p.ustar));
        }
    }
    log.finish()?;
    snaps.finish()?;
    plot_masses(out_dir, &summary.steps)?;

    if let Some(d) = decay {
        let report = d.finish(&mesh)?;
        report.write_csv(&out_dir.join("decay.csv")).map_err(IoError::from)?;
        plot_decay(out_dir, &report)?;
        write_toml(
            &out_dir.join("decay.toml"),
            &DecaySummary {
                ubar: report.ubar.clone(),
                fitted_lambda: report.fitted_lambda,
                r_squared: report.r_squared,
                strictly_decreasing: report.strictly_decreasing,
                c3: report.c3,
                kappa_bound_ok: report.kappa_bound_ok,
            },
        )?;
        summary.decay = Some(report);
    }
    if let Some(p) = pattern {
        let mut w = csv::Writer::from_path(out_dir.join("pattern.csv")).map_err(IoError::from)?;
        w.write_record(["t", "distance"]).map_err(IoError::from)?;
        for (t, d) in p.times.iter().zip(&p.distances) {
            w.write_record([format!("{t:e}"), format!("{d:e}")]).map_err(IoError::from)?;
        }
        w.flush().map_err(IoError::from)?;
        summary.pattern = Some(p);
    }
    if let Some(n) = &cfg.niche {
        if n.species == 0 || n.species > model.n_species() || mesh.dimension() != 2 {
            return Err(RunError::Unsupported("niche tracking needs a valid species on a 2D mesh".into()));
        }
        let (center_average, domain_average) = region_averages(&mesh, &state, n.species - 1, n.center, n.radius);
        let report = NicheReport {
            species: n.species,
            time: state.time,
            center_average,
            domain_average,
            forms_niche: center_average > domain_average,
        };
        write_toml(&out_dir.join("niche.toml"), &report)?;
        summary.niche = Some(report);
    }
    summary.final_state = Some(state);
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"
experiment = "decay"
[model]
type = "skt"
a0 = [1.0, 1.0]
a = [[1.0, 0.5], [0.5, 1.0]]
[mesh]
kind = "rectangle"
x = [0.0, 1.0]
y = [0.0, 1.0]
nx = 4
ny = 4
[initial]
species = [
  { terms = [{ kind = "constant", value = 1.0 }, { kind = "indicator", x = [0.0, 0.5], amplitude = 0.5 }] },
  { terms = [{ kind = "constant", value = 1.0 }] },
]
[solver]
dt_init = 1e-3
dt_max = 5e-2
[time]
t_end = 0.2
geometric_snapshots = 3
[output]
formats = ["csv", "vtk"]
"#;

    #[test]
    fn small_decay_run_writes_artifacts() {
        let cfg = RunConfig::from_toml(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let s = run(&cfg, dir.path()).unwrap();
        for f in ["config.toml", "metadata.toml", "steps.csv", "decay.csv", "decay.gp", "masses.dat", "snapshots/index.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        assert!(dir.path().join("snapshots/snapshot_0000.vtk").exists());
        let d = s.decay.unwrap();
        assert!(d.strictly_decreasing && d.kappa_bound_ok);
        let again = RunConfig::from_toml(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn region_average_of_constant() {
        let mesh = crate::mesh::build_rectangle_mesh((0.0, 1.0), (0.0, 1.0), 4, 4).unwrap();
        let u = State::from_values(1, vec![3.0; 16], 0.0).unwrap();
        let (c, d) = region_averages(&mesh, &u, 0, [0.5, 0.5], 0.3);
        assert!((c - 3.0).abs() < 1e-14 && (d - 3.0).abs() < 1e-14);
    }
}
