//! Run configuration read from a sectioned key-value (TOML) file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::FixedPointOptions;
use crate::galerkin::axisymmetric_pairs;
use crate::ns_profile::ProfileOptions;
use crate::parallel::Execution;
use crate::pipeline::{Backend, SolveSettings};
use crate::relaxation::SyntheticSpec;
use crate::velocity_space::check_weight;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Boltzmann,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Built-in synthetic model (`broadwell`, `burgers-closure`) or `custom`.
    #[serde(default = "default_model")]
    pub model: String,
}

fn default_model() -> String {
    "broadwell".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoltzmannSection {
    pub degree: usize,
    pub rho: f64,
    pub temperature: f64,
}

impl Default for BoltzmannSection {
    fn default() -> Self {
        Self {
            degree: 5,
            rho: 1.0,
            temperature: 0.5,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShockSection {
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub nodes: usize,
    pub length_factor: f64,
    pub grading: f64,
    pub richardson: bool,
}

impl Default for GridSection {
    fn default() -> Self {
        let p = ProfileOptions::default();
        Self {
            nodes: p.nodes,
            length_factor: p.length_factor,
            grading: p.grading,
            richardson: p.richardson,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightSection {
    /// Velocity weight exponent.
    pub s: f64,
    /// `δ₀` of the spatial weight `δ = ½ min(δ₀, θ/2)`.
    pub delta0: f64,
}

impl Default for WeightSection {
    fn default() -> Self {
        Self {
            s: 0.5,
            delta0: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
    pub newton_iterations: usize,
    pub estimate_samples: usize,
    pub spectrum_eta: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let fp = FixedPointOptions::default();
        Self {
            fixed_point_tol: fp.tol,
            max_iterations: fp.max_iter,
            newton_iterations: ProfileOptions::default().max_newton,
            estimate_samples: 6,
            spectrum_eta: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendSection,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    pub boltzmann: BoltzmannSection,
    pub shock: ShockSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub weights: WeightSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub rank: Option<usize>,
    pub weight_s: Option<f64>,
}

/// Galerkin degree whose axisymmetric basis has `rank` elements.
pub fn degree_for_rank(rank: usize) -> Result<usize> {
    let valid: Vec<(usize, usize)> = (3..=8).map(|d| (d, axisymmetric_pairs(d).len())).collect();
    valid
        .iter()
        .find(|(_, r)| *r == rank)
        .map(|(d, _)| *d)
        .ok_or_else(|| {
            Error::Config(format!(
                "rank {rank} is not a Galerkin rank; valid ranks are {:?}",
                valid.iter().map(|(_, r)| *r).collect::<Vec<_>>()
            ))
        })
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(out) = &o.out {
            self.output.dir = out.clone();
        }
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(rank) = o.rank {
            self.boltzmann.degree = degree_for_rank(rank)?;
        }
        if let Some(s) = o.weight_s {
            self.weights.s = s;
        }
        self.check()
    }

    pub fn check(&self) -> Result<()> {
        let eps = &self.shock.epsilons;
        if eps.is_empty() {
            return Err(Error::Config("shock.epsilons is empty".into()));
        }
        if let Some(e) = eps.iter().find(|e| **e == 0.0) {
            return Err(Error::Config(format!(
                "degenerate shock: amplitude {e} has no profile"
            )));
        }
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Error::Config(format!(
                "shock amplitudes must be positive, got {eps:?}"
            )));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config(format!(
                "shock.epsilons must be sorted descending, got {eps:?}"
            )));
        }
        let positive = [
            ("grid.length_factor", self.grid.length_factor),
            ("weights.delta0", self.weights.delta0),
            ("solver.fixed_point_tol", self.solver.fixed_point_tol),
            ("solver.spectrum_eta", self.solver.spectrum_eta),
            ("boltzmann.rho", self.boltzmann.rho),
            ("boltzmann.temperature", self.boltzmann.temperature),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grid.grading < 0.0 {
            return Err(Error::Config("grid.grading must be non-negative".into()));
        }
        if self.grid.nodes < 5 || self.grid.nodes.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "grid.nodes must be odd and at least 5, got {}",
                self.grid.nodes
            )));
        }
        if self.solver.max_iterations == 0 || self.solver.newton_iterations == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        check_weight(self.weights.s)?;
        if !(0.5..1.0).contains(&self.weights.s) {
            return Err(Error::Config(format!(
                "weights.s must lie in [0.5, 1), got {}",
                self.weights.s
            )));
        }
        if self.backend.kind == BackendKind::Boltzmann && !(3..=8).contains(&self.boltzmann.degree)
        {
            return Err(Error::Config(format!(
                "boltzmann.degree must lie in 3..=8, got {}",
                self.boltzmann.degree
            )));
        }
        self.synthetic_spec().map(|_| ())
    }

    fn synthetic_spec(&self) -> Result<Option<SyntheticSpec>> {
        if self.backend.kind != BackendKind::Synthetic {
            return Ok(None);
        }
        let spec = match self.backend.model.as_str() {
            "broadwell" => SyntheticSpec::broadwell(),
            "burgers-closure" => SyntheticSpec::burgers_closure(),
            "custom" => self.synthetic.clone().ok_or_else(|| {
                Error::Config("backend.model = \"custom\" needs a [synthetic] section".into())
            })?,
            other => return Err(Error::Config(format!("unknown synthetic model {other:?}"))),
        };
        Ok(Some(spec))
    }

    pub fn backend(&self) -> Result<Backend> {
        Ok(match self.synthetic_spec()? {
            Some(spec) => Backend::Synthetic { spec },
            None => Backend::Boltzmann {
                degree: self.boltzmann.degree,
                rho: self.boltzmann.rho,
                temperature: self.boltzmann.temperature,
            },
        })
    }

    pub fn settings(&self, exec: Execution) -> SolveSettings {
        let profile = ProfileOptions {
            nodes: self.grid.nodes,
            length_factor: self.grid.length_factor,
            grading: self.grid.grading,
            richardson: self.grid.richardson,
            max_newton: self.solver.newton_iterations,
            exec,
        };
        let fixed_point = FixedPointOptions {
            max_iter: self.solver.max_iterations,
            tol: self.solver.fixed_point_tol,
            richardson: self.grid.richardson,
            exec,
            ..FixedPointOptions::default()
        };
        SolveSettings {
            profile,
            fixed_point,
            delta0: self.weights.delta0,
            samples: self.solver.estimate_samples,
            seed: self.seed,
            weight_s: self.weights.s,
            spectrum_eta: self.solver.spectrum_eta,
        }
    }
}

/// Configuration shipped as the synthetic default.
pub const DEFAULT_SYNTHETIC: &str = r#"seed = 1

[backend]
kind = "synthetic"
model = "broadwell"

[shock]
epsilons = [0.1, 0.05, 0.025]
"#;
