//! Experiment configuration: a single TOML file naming the command to run and
//! every parameter it needs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viscotomo::transport::{Attenuation, QuadratureConfig, Rule};
use viscotomo::{Field, Model};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Trace,
    TransformTable,
    SolveStatic,
    SolveDynamic,
    Sweep,
    CheckProp1,
    Coercivity,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Trace => "trace",
            Command::TransformTable => "transform-table",
            Command::SolveStatic => "solve-static",
            Command::SolveDynamic => "solve-dynamic",
            Command::Sweep => "sweep",
            Command::CheckProp1 => "check-prop1",
            Command::Coercivity => "coercivity",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every available core.
    #[serde(default)]
    pub workers: usize,
    pub output: PathBuf,
    /// Refractive model spec, e.g. `paper4` or `affine:2,1,0`.
    pub model: String,
    /// Absorption spec, e.g. `constant:1`.
    #[serde(default = "default_alpha")]
    pub alpha: String,
    #[serde(default)]
    pub field: FieldSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic: Option<DynamicSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TraceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<TransformSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop1: Option<Prop1Section>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coercivity: Option<CoercivitySection>,
    #[serde(default)]
    pub export: ExportSection,
}

fn default_alpha() -> String {
    "constant:1".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    pub kind: String,
    #[serde(default)]
    pub switch_on: bool,
}

impl Default for FieldSection {
    fn default() -> Self {
        Self {
            kind: "paper4".into(),
            switch_on: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "I")]
    pub i: usize,
    #[serde(rename = "J")]
    pub j: usize,
    #[serde(rename = "K")]
    pub k: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { i: 30, j: 30, k: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub epsilon: Vec<f64>,
    pub tol: f64,
    /// Total inner iterations; defaults to `⌈20·√N⌉` for `N` grid nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    pub restart: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            epsilon: vec![1e-3],
            tol: 1e-10,
            max_iter: None,
            restart: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSection {
    /// `simpson` or `midpoint`.
    pub rule: String,
    pub step: f64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        Self {
            rule: "simpson".into(),
            step: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicSection {
    pub dt: f64,
    pub t_final: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    /// Number of random interior start points.
    pub count: usize,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSection {
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prop1Section {
    pub n_theta: usize,
    pub n_phi: usize,
    pub points: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoercivitySection {
    /// Random starts for the discrete eigenvalue estimate; 0 skips it.
    pub probes: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    /// Write per-slice PGM heatmaps of solution and error fields.
    #[serde(default)]
    pub heatmaps: bool,
    /// Write grid functions as CSV.
    #[serde(default)]
    pub fields: bool,
    /// Write assembled systems as triplet CSV.
    #[serde(default)]
    pub dump_system: bool,
}

/// Parsed and checked runtime objects.
pub struct Resolved {
    pub model: Model,
    pub field: Field,
    pub alpha: Attenuation<f64>,
    pub quadrature: QuadratureConfig<f64>,
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn grid_nodes(&self) -> usize {
        self.grid.i * self.grid.j * self.grid.k
    }

    pub fn max_iter(&self) -> usize {
        self.solver
            .max_iter
            .unwrap_or_else(|| viscotomo::solve::default_max_iter(self.grid_nodes()))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let model: Model = self.model.parse().map_err(|e| invalid("model", e))?;
        let field = Field::parse(&self.field.kind, model.dim())
            .map_err(|e| invalid("field.kind", e))?
            .with_switch_on(self.field.switch_on);
        let alpha = Attenuation::parse(&self.alpha).map_err(|e| invalid("alpha", e))?;
        let rule = match self.quadrature.rule.as_str() {
            "simpson" => Rule::Simpson,
            "midpoint" => Rule::Midpoint,
            other => return Err(invalid("quadrature.rule", format!("expected `simpson` or `midpoint`, got `{other}`"))),
        };
        let quadrature = QuadratureConfig {
            rule,
            step: self.quadrature.step,
        };
        Ok(Resolved {
            model,
            field,
            alpha,
            quadrature,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.resolve()?;
        let g = &self.grid;
        if g.i < 3 || g.j < 3 || g.k < 3 {
            return Err(invalid("grid", format!("I, J, K must be at least 3, got ({}, {}, {})", g.i, g.j, g.k)));
        }
        let s = &self.solver;
        if s.epsilon.is_empty() {
            return Err(invalid("solver.epsilon", "must list at least one value"));
        }
        if s.epsilon.iter().any(|e| !(*e >= 0.0)) {
            return Err(invalid("solver.epsilon", "values must be nonnegative"));
        }
        if self.command == Command::Sweep {
            if s.epsilon.iter().any(|e| *e == 0.0) {
                return Err(invalid("solver.epsilon", "sweep values must be positive"));
            }
            if s.epsilon.windows(2).any(|w| !(w[0] > w[1])) {
                return Err(invalid("solver.epsilon", "sweep values must be strictly decreasing"));
            }
        }
        if !(s.tol > 0.0) {
            return Err(invalid("solver.tol", "must be positive"));
        }
        if s.restart == 0 {
            return Err(invalid("solver.restart", "must be at least 1"));
        }
        if s.max_iter == Some(0) {
            return Err(invalid("solver.max_iter", "must be at least 1"));
        }
        if !(self.quadrature.step > 0.0) {
            return Err(invalid("quadrature.step", "must be positive"));
        }
        let need = |present: bool, section: &str| {
            if present {
                Ok(())
            } else {
                Err(invalid(section, format!("section is required by `{}`", self.command.name())))
            }
        };
        match self.command {
            Command::SolveDynamic => {
                need(self.dynamic.is_some(), "dynamic")?;
                let d = self.dynamic.as_ref().expect("checked");
                viscotomo::solve::step_count(d.dt, d.t_final).map_err(|e| invalid("dynamic", e))?;
            }
            Command::Trace => {
                need(self.trace.is_some(), "trace")?;
                let t = self.trace.as_ref().expect("checked");
                if !(t.step > 0.0) || t.count == 0 {
                    return Err(invalid("trace", "count must be at least 1 and step positive"));
                }
            }
            Command::TransformTable => need(self.transform.is_some(), "transform")?,
            Command::CheckProp1 => {
                need(self.prop1.is_some(), "prop1")?;
                let p = self.prop1.as_ref().expect("checked");
                if p.n_theta < 4 || p.n_phi < 4 {
                    return Err(invalid("prop1", "quadrature orders must be at least 4"));
                }
                if p.points.iter().any(|x| x.iter().map(|v| v * v).sum::<f64>() >= 1.0) {
                    return Err(invalid("prop1.points", "points must lie strictly inside the unit ball"));
                }
            }
            Command::Coercivity => need(self.coercivity.is_some(), "coercivity")?,
            Command::SolveStatic | Command::Sweep => {}
        }
        if self.workers > 4096 {
            return Err(invalid("workers", "unreasonably large"));
        }
        Ok(())
    }
}
