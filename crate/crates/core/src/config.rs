//! Run configuration: one JSON document describes the plant, the declared
//! envelope constants, where the gains come from, the controller tuning, the
//! simulation and the outputs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerParams, ControllerTuning};
use crate::error::{Error, Result};
use crate::gains::{synthesize, GainSet, SynthesisOptions};
use crate::model::{build_example, BoundEnvelope, ExampleParams, PlantModel, RatioBound, Sampler};
use crate::sim::SimConfig;

/// Constants the designer declares about the plant. `sigma` must be stated
/// explicitly; the rest default to the example's published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvelopeDecl {
    pub sigma: f64,
    #[serde(default)]
    pub ratio_bounds: Option<Vec<RatioBound>>,
    #[serde(default)]
    pub mu_lower: Option<f64>,
    #[serde(default)]
    pub k_psi_bar: Option<f64>,
    #[serde(default)]
    pub v_psi_lower: Option<f64>,
}

impl EnvelopeDecl {
    fn apply(&self, env: &mut BoundEnvelope) {
        env.sigma = self.sigma;
        if let Some(r) = &self.ratio_bounds {
            env.ratio_bounds = r.clone();
        }
        if let Some(v) = self.mu_lower {
            env.mu_lower = v;
        }
        if let Some(v) = self.k_psi_bar {
            env.k_psi_bar = v;
        }
        if let Some(v) = self.v_psi_lower {
            env.v_psi_lower = v;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GainsSource {
    /// Run the synthesis with these options.
    Synthesize(SynthesisOptions),
    Inline(Box<GainSet>),
    /// A gains artifact written by `synthesize`; relative to the config file.
    Path(PathBuf),
}

impl Default for GainsSource {
    fn default() -> Self {
        GainsSource::Synthesize(SynthesisOptions::default())
    }
}

/// Deliberately broken closed loops for negative controls.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeedbackConfig {
    pub flip_u_tilde: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub tol: f64,
    /// Trajectory CSV to verify; relative to the config file.
    pub trajectory: Option<PathBuf>,
    /// Range and resolution of the gain certificate sweep.
    pub certificate_range: (f64, f64),
    pub certificate_grid: usize,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { tol: 1e-2, trajectory: None, certificate_range: (-20.0, 20.0), certificate_grid: 2001 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub gains: PathBuf,
    pub trajectory: PathBuf,
    pub summary: PathBuf,
    pub verdict: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            gains: "gains.json".into(),
            trajectory: "trajectory.csv".into(),
            summary: "summary.json".into(),
            verdict: "verdict.json".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// The built-in example plant. Plants defined in code go through the
    /// library API instead.
    pub example: ExampleParams,
    pub envelope: EnvelopeDecl,
    #[serde(default)]
    pub gains: GainsSource,
    #[serde(default)]
    pub controller: ControllerTuning,
    #[serde(default)]
    pub feedback: FeedbackConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sampler: Sampler,
    #[serde(default)]
    pub monitor: MonitorConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    /// Seeds every random draw of the run; overrides `sampler.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Directory the relative paths above are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        if let Some(seed) = cfg.seed {
            cfg.sampler.seed = seed;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let GainsSource::Path(p) = &cfg.gains {
            let full = cfg.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("gains artifact {} does not exist", full.display())));
            }
        }
        if let Some(p) = &cfg.monitor.trajectory {
            let full = cfg.resolve(p);
            if !full.is_file() {
                return Err(Error::Config(format!("trajectory {} does not exist", full.display())));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The plant and the envelope with the declared constants applied.
    pub fn plant(&self) -> Result<(PlantModel, BoundEnvelope)> {
        let (model, mut env) = build_example(&self.example).map_err(|e| Error::Config(e.to_string()))?;
        self.envelope.apply(&mut env);
        env.validate(model.n()).map_err(|e| Error::Config(e.to_string()))?;
        Ok((model, env))
    }

    /// Gains from the configured source; synthesis failures pass through.
    pub fn gains(&self, env: &BoundEnvelope, n: usize) -> Result<GainSet> {
        match &self.gains {
            GainsSource::Synthesize(opts) => synthesize(env, n, opts),
            GainsSource::Inline(g) => Ok((**g).clone()),
            GainsSource::Path(p) => read_gains(&self.resolve(p)),
        }
    }

    pub fn controller(&self, model: &PlantModel, env: &BoundEnvelope, gains: GainSet) -> Result<Controller> {
        let params = ControllerParams::derive(self.controller.clone(), &gains, env, model.true_theta)?;
        Controller::new(model.dynamics.clone(), env.clone(), gains, params)
    }
}

pub fn read_gains(path: &Path) -> Result<GainSet> {
    let text = std::fs::read_to_string(path)?;
    let g: GainSet = serde_json::from_str(&text)?;
    g.validate()?;
    Ok(g)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
