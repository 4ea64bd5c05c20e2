//! TOML run configuration, initial-data primitives and the bundled presets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::QuadraticForm;
use crate::mesh::{
    build_interval_mesh, build_rectangle_mesh, import_triangulation, read_triangulation,
    structured_acute_triangulation, Mesh, MeshError, Point,
};
use crate::model::{
    fluid_mixture_model, keller_segel_model, seawater_model, skt_model, Drift, Model, ModelError, SktCoefficients,
};
use crate::solver::SolverConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Convergence,
    Pattern,
    Niche,
    Decay,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Skt {
        #[serde(flatten)]
        coefficients: SktCoefficients,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi: Option<Vec<f64>>,
    },
    Seawater {
        delta: f64,
    },
    KellerSegel {
        delta: f64,
    },
    FluidMixture {
        a0: Vec<f64>,
        a: Vec<Vec<f64>>,
        pi: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(flatten)]
    pub spec: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift: Option<Drift>,
}

impl ModelSection {
    pub fn build(&self) -> Result<Model, ConfigError> {
        let model = match &self.spec {
            ModelSpec::Skt { coefficients, pi } => {
                coefficients.validate()?;
                skt_model(coefficients, pi.clone())?
            }
            ModelSpec::Seawater { delta } => seawater_model(*delta)?,
            ModelSpec::KellerSegel { delta } => keller_segel_model(*delta)?,
            ModelSpec::FluidMixture { a0, a, pi } => fluid_mixture_model(a0.clone(), a.clone(), pi.clone())?,
        };
        Ok(match &self.drift {
            Some(d) => model.with_drift(d.clone())?,
            None => model,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshSpec {
    Interval { a: f64, b: f64, cells: usize },
    Rectangle { x: [f64; 2], y: [f64; 2], nx: usize, ny: usize },
    /// Structured triangulation with all angles acute.
    AcuteTriangulation { x: [f64; 2], y: [f64; 2], nx: usize, ny: usize },
    /// Triangulation text file; relative paths resolve against the config file.
    File { path: PathBuf },
}

impl MeshSpec {
    pub fn build(&self, base: Option<&Path>) -> Result<Mesh, ConfigError> {
        Ok(match self {
            MeshSpec::Interval { a, b, cells } => build_interval_mesh(*a, *b, *cells)?,
            MeshSpec::Rectangle { x, y, nx, ny } => build_rectangle_mesh((x[0], x[1]), (y[0], y[1]), *nx, *ny)?,
            MeshSpec::AcuteTriangulation { x, y, nx, ny } => {
                let (v, t) = structured_acute_triangulation((x[0], x[1]), (y[0], y[1]), *nx, *ny)?;
                import_triangulation(&v, &t)?
            }
            MeshSpec::File { path } => {
                let p = match base {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                if !p.exists() {
                    return Err(ConfigError::Invalid(format!("mesh file {} does not exist", p.display())));
                }
                read_triangulation(&p)?
            }
        })
    }
}

/// One additive term of an initial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant {
        value: f64,
    },
    /// `amplitude · max(1 - sharpness² |x - center|², 0)`.
    Bump {
        center: Vec<f64>,
        amplitude: f64,
        #[serde(default = "default_sharpness")]
        sharpness: f64,
    },
    /// `amplitude · exp(-rate |x - center|²)`.
    Gaussian {
        center: Vec<f64>,
        amplitude: f64,
        rate: f64,
    },
    /// `amplitude` on the open box `x ∈ (x₀, x₁)`, `y ∈ (y₀, y₁)`.
    Indicator {
        x: [f64; 2],
        #[serde(default = "default_y_range")]
        y: [f64; 2],
        amplitude: f64,
    },
}

fn default_sharpness() -> f64 {
    8.0
}

fn default_y_range() -> [f64; 2] {
    [f64::NEG_INFINITY, f64::INFINITY]
}

fn dist2(center: &[f64], x: Point) -> f64 {
    center.iter().zip(x.iter()).map(|(c, x)| (x - c).powi(2)).sum()
}

impl Profile {
    pub fn eval(&self, x: Point) -> f64 {
        match self {
            Profile::Constant { value } => *value,
            Profile::Bump { center, amplitude, sharpness } => {
                amplitude * (1.0 - sharpness * sharpness * dist2(center, x)).max(0.0)
            }
            Profile::Gaussian { center, amplitude, rate } => amplitude * (-rate * dist2(center, x)).exp(),
            Profile::Indicator { x: xr, y: yr, amplitude } => {
                if x[0] > xr[0] && x[0] < xr[1] && x[1] > yr[0] && x[1] < yr[1] {
                    *amplitude
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesInitial {
    pub terms: Vec<Profile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    /// Quadrature subdivisions per cell when averaging the profiles.
    #[serde(default = "default_refine")]
    pub refine: usize,
    pub species: Vec<SpeciesInitial>,
}

fn default_refine() -> usize {
    4
}

impl InitialSection {
    pub fn eval(&self, species: usize, x: Point) -> f64 {
        self.species[species].terms.iter().map(|t| t.eval(x)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    /// Snapshot times; `t_end` is always included.
    #[serde(default)]
    pub snapshots: Vec<f64>,
    /// Adds this many geometrically spaced snapshot times in `(0, t_end]`.
    #[serde(default)]
    pub geometric_snapshots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Vtk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Extra snapshot every this many accepted steps; 0 disables.
    #[serde(default)]
    pub every_steps: usize,
}

fn default_directory() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Vtk]
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: default_directory(), formats: default_formats(), every_steps: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub cell_counts: Vec<usize>,
    pub reference_cells: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    pub ustar: [f64; 2],
    #[serde(default = "default_mode_cap")]
    pub mode_cap: usize,
    #[serde(default)]
    pub form: QuadraticForm,
}

fn default_mode_cap() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NicheSection {
    pub center: [f64; 2],
    pub radius: f64,
    /// Species whose niche is tracked (1-based).
    #[serde(default = "default_niche_species")]
    pub species: usize,
}

fn default_niche_species() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub description: String,
    pub model: ModelSection,
    pub mesh: MeshSpec,
    pub initial: InitialSection,
    #[serde(default)]
    pub solver: SolverConfig,
    pub time: TimeSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub niche: Option<NicheSection>,
    /// Directory of the config file, for relative paths.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg = RunConfig::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs always serialize")
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.time.t_end > 0.0) {
            return bad("time.t_end must be positive".into());
        }
        if self.time.snapshots.iter().any(|&t| !(t > 0.0 && t <= self.time.t_end)) {
            return bad("snapshot times must lie in (0, t_end]".into());
        }
        if self.initial.species.is_empty() {
            return bad("initial.species is empty".into());
        }
        for (i, s) in self.initial.species.iter().enumerate() {
            for t in &s.terms {
                if let Profile::Bump { center, .. } | Profile::Gaussian { center, .. } = t {
                    if center.is_empty() || center.len() > 2 {
                        return bad(format!("species {}: center needs one or two coordinates", i + 1));
                    }
                }
            }
        }
        self.solver.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let need = |present: bool, name: &str| {
            if present {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("experiment needs a [{name}] section")))
            }
        };
        match self.experiment {
            Experiment::Convergence => {
                need(self.convergence.is_some(), "convergence")?;
                if !matches!(self.mesh, MeshSpec::Interval { .. }) {
                    return bad("convergence studies need an interval mesh".into());
                }
            }
            Experiment::Niche => need(self.niche.is_some(), "niche")?,
            _ => {}
        }
        Ok(())
    }

    /// Builds and cross-checks the mesh and model.
    pub fn build(&self) -> Result<(Mesh, Model), ConfigError> {
        let mesh = self.mesh.build(self.base_dir.as_deref())?;
        let model = self.model.build()?;
        if self.initial.species.len() != model.n_species() {
            return Err(ConfigError::Invalid(format!(
                "{} initial profiles for {} species",
                self.initial.species.len(),
                model.n_species()
            )));
        }
        Ok((mesh, model))
    }

    /// Sorted, deduplicated snapshot times ending with `t_end`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        let t_end = self.time.t_end;
        let mut times = self.time.snapshots.clone();
        let g = self.time.geometric_snapshots;
        if g > 0 {
            let t0 = (t_end * 1e-4).max(self.solver.dt_init);
            let ratio = (t_end / t0).powf(1.0 / g.max(2).saturating_sub(1) as f64);
            times.extend((0..g).map(|k| (t0 * ratio.powi(k as i32)).min(t_end)));
        }
        times.push(t_end);
        times.sort_by(f64::total_cmp);
        times.dedup_by(|later, kept| {
            let close = (*later - *kept).abs() <= 1e-12 * t_end;
            if close {
                *kept = *later;
            }
            close
        });
        times
    }
}

/// A preset shipped with the crate.
#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    pub text: &'static str,
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "testcase1",
        summary: "1D two-species SKT, spatial convergence against a 5120-cell reference",
        text: include_str!("../presets/testcase1.toml"),
    },
    Preset {
        name: "testcase2",
        summary: "2D two-species SKT, Turing pattern formation around u* = (2, 0.5)",
        text: include_str!("../presets/testcase2.toml"),
    },
    Preset {
        name: "testcase3",
        summary: "2D two-species SKT with a Gaussian environmental potential (niche)",
        text: include_str!("../presets/testcase3.toml"),
    },
    Preset {
        name: "testcase4",
        summary: "2D three-species source-free SKT, relative entropy decay",
        text: include_str!("../presets/testcase4.toml"),
    },
];

pub fn preset(name: &str) -> Result<RunConfig, ConfigError> {
    let p = PRESETS.iter().find(|p| p.name == name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
    RunConfig::from_toml(p.text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_build() {
        for p in PRESETS {
            let cfg = preset(p.name).unwrap();
            let (_, model) = cfg.build().unwrap();
            assert_eq!(model.n_species(), cfg.initial.species.len(), "{}", p.name);
        }
    }

    #[test]
    fn config_round_trip() {
        let cfg = preset("testcase3").unwrap();
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn bump_profile() {
        let b = Profile::Bump { center: vec![0.25], amplitude: 0.31, sharpness: 8.0 };
        assert!((b.eval([0.25, 0.0]) - 0.31).abs() < 1e-15);
        assert_eq!(b.eval([0.25 + 0.125, 0.0]), 0.0);
        let g = Profile::Bump { center: vec![0.5, 0.5], amplitude: 1.0, sharpness: 8.0 };
        assert!((g.eval([0.5, 0.5 + 1.0 / 16.0]) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn rejects_negative_coefficient() {
        let mut cfg = preset("testcase2").unwrap();
        if let ModelSpec::Skt { coefficients, .. } = &mut cfg.model.spec {
            coefficients.a[0][1] = -1.0;
        }
        assert!(cfg.build().is_err());
    }

    #[test]
    fn geometric_snapshots() {
        let mut cfg = preset("testcase4").unwrap();
        cfg.time.snapshots.clear();
        cfg.time.geometric_snapshots = 5;
        let t = cfg.snapshot_times();
        assert_eq!(*t.last().unwrap(), cfg.time.t_end);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
    }
}
