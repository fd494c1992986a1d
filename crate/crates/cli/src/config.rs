//! Run configuration files (`schema: "dirflow.run/1"`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dirflow::dynamics::{Batch, GdConfig, IntegratorConfig, RecordStride};
use dirflow::law::RadialLaw;
use dirflow::models::ModelSpec;
use dirflow::plane::PlaneState;
use dirflow::schedule::Schedule;
use nalgebra::Vector2;
use serde::Deserialize;

pub const SCHEMA: &str = "dirflow.run/1";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    pub law: LawBlock,
    pub model: ModelBlock,
    /// Unit target direction.
    pub target: [f64; 2],
    /// One start vector per neuron (one for linear and deep models).
    pub start: Vec<[f64; 2]>,
    pub method: Method,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub slack: Option<f64>,
    #[serde(default)]
    pub stride: Option<RecordStride>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub certify: Vec<CertifyBlock>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawBlock {
    /// `[[r, p], ...]`
    #[serde(default)]
    pub atoms: Option<Vec<(f64, f64)>>,
    #[serde(default)]
    pub gaussian2d: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelBlock {
    Linear,
    DeepLinear {
        depth: usize,
        #[serde(default)]
        widths: Option<Vec<usize>>,
    },
    TwoNeuronRelu,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Flow {
        t_end: f64,
        #[serde(default)]
        step: Option<f64>,
    },
    Gd {
        steps: usize,
        schedule: Schedule,
        #[serde(default)]
        batch: BatchBlock,
    },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BatchBlock {
    #[default]
    Full,
    Minibatch {
        size: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundName {
    LinearFlow,
    Deep,
    DeepNorm,
    ReluFlow,
    GdNegative,
    GdSuff,
    ReluGd,
}

impl BoundName {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundName::LinearFlow => "linear_flow",
            BoundName::Deep => "deep",
            BoundName::DeepNorm => "deep_norm",
            BoundName::ReluFlow => "relu_flow",
            BoundName::GdNegative => "gd_negative",
            BoundName::GdSuff => "gd_suff",
            BoundName::ReluGd => "relu_gd",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyBlock {
    pub bound: BoundName,
    /// Clock value (time for flow, step for GD) of the anchoring record.
    #[serde(default)]
    pub anchor: f64,
    /// Multiplies named curve constants, e.g. `{"A1": 1.5}`.
    #[serde(default)]
    pub scale: BTreeMap<String, f64>,
    /// Overrides named curve constants.
    #[serde(default)]
    pub set: BTreeMap<String, f64>,
    /// Only for `gd_suff`; defaults to 1.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub slack: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        // serde_json messages end with "at line L column C"
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| anyhow!("{e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            bail!("field `schema`: expected \"{SCHEMA}\", got \"{}\"", self.schema);
        }
        self.law()?;
        let model = self.model()?;
        let t = Vector2::from(self.target);
        if ((t.norm() - 1.0).abs()) > 1e-9 {
            bail!("field `target`: must be a unit vector, has norm {}", t.norm());
        }
        if self.start.len() != model.weight_count() {
            bail!(
                "field `start`: {} model needs {} start vector(s), got {}",
                model.name(),
                model.weight_count(),
                self.start.len()
            );
        }
        match &self.method {
            Method::Flow { t_end, step } => {
                if !(*t_end > 0.0 && t_end.is_finite()) {
                    bail!("field `method.t_end`: must be positive, got {t_end}");
                }
                if let Some(h) = step {
                    if !(*h > 0.0 && *h < *t_end) {
                        bail!("field `method.step`: must lie in (0, t_end), got {h}");
                    }
                }
            }
            Method::Gd { steps, schedule, batch } => {
                if *steps == 0 {
                    bail!("field `method.steps`: must be positive");
                }
                schedule.validated().map_err(|e| anyhow!("field `method.schedule`: {e}"))?;
                if let BatchBlock::Minibatch { size: 0 } = batch {
                    bail!("field `method.batch.size`: must be positive");
                }
            }
        }
        if let Some(s) = self.slack {
            if !(s >= 0.0 && s.is_finite()) {
                bail!("field `slack`: must be a nonnegative number, got {s}");
            }
        }
        for (i, c) in self.certify.iter().enumerate() {
            let flow_bound = matches!(
                c.bound,
                BoundName::LinearFlow | BoundName::Deep | BoundName::DeepNorm | BoundName::ReluFlow
            );
            let need = match c.bound {
                BoundName::LinearFlow | BoundName::GdNegative | BoundName::GdSuff => "linear",
                BoundName::Deep | BoundName::DeepNorm => "deep_linear",
                BoundName::ReluFlow | BoundName::ReluGd => "two_neuron_relu",
            };
            if model.name() != need {
                bail!("field `certify[{i}].bound`: {} needs a {need} model", c.bound.as_str());
            }
            if !flow_bound && matches!(self.method, Method::Flow { .. }) {
                bail!("field `certify[{i}].bound`: {} needs a gd run", c.bound.as_str());
            }
            if c.bound == BoundName::ReluGd && c.anchor != 0.0 {
                bail!("field `certify[{i}].anchor`: relu_gd is anchored at step 0");
            }
            if !(c.anchor >= 0.0 && c.anchor.is_finite()) {
                bail!("field `certify[{i}].anchor`: must be nonnegative");
            }
            if c.delta.is_some() && c.bound != BoundName::GdSuff {
                bail!("field `certify[{i}].delta`: only gd_suff takes delta");
            }
            if let Some(d) = c.delta {
                if !(d > 0.0 && d.is_finite()) {
                    bail!("field `certify[{i}].delta`: must be positive, got {d}");
                }
            }
            for (k, x) in c.scale.iter().chain(c.set.iter()) {
                if !x.is_finite() {
                    bail!("field `certify[{i}]`: constant {k} must be finite");
                }
            }
        }
        Ok(())
    }

    pub fn law(&self) -> Result<RadialLaw> {
        match (&self.law.atoms, self.law.gaussian2d) {
            (Some(a), None) => RadialLaw::from_atoms(a.clone()).map_err(|e| anyhow!("field `law.atoms`: {e}")),
            (None, Some(true)) => Ok(RadialLaw::gaussian2d()),
            (None, Some(false)) => bail!("field `law.gaussian2d`: must be true when given"),
            _ => bail!("field `law`: give exactly one of `atoms` or `gaussian2d`"),
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let m = match &self.model {
            ModelBlock::Linear => Ok(ModelSpec::Linear),
            ModelBlock::TwoNeuronRelu => Ok(ModelSpec::TwoNeuronRelu),
            ModelBlock::DeepLinear { depth, widths: None } => ModelSpec::deep(*depth, 2),
            ModelBlock::DeepLinear { depth, widths: Some(w) } => ModelSpec::deep_with_widths(*depth, w.clone()),
        };
        m.map_err(|e| anyhow!("field `model`: {e}"))
    }

    pub fn start_state(&self) -> Result<PlaneState> {
        let ws = self.start.iter().map(|w| Vector2::from(*w)).collect();
        PlaneState::new(Vector2::from(self.target), ws).map_err(|e| anyhow!("field `start`: {e}"))
    }

    pub fn integrator(&self) -> IntegratorConfig {
        let mut c = IntegratorConfig::default();
        if let Method::Flow { step, .. } = self.method {
            c.step = step;
        }
        if let Some(s) = self.stride {
            c.stride = s;
        }
        c
    }

    pub fn gd_config(&self) -> GdConfig {
        let mut c = GdConfig::default();
        if let Some(s) = self.stride {
            c.stride = s;
        }
        c
    }

    pub fn batch(&self) -> Option<Batch> {
        match &self.method {
            Method::Gd { batch: BatchBlock::Full, .. } => Some(Batch::Full),
            Method::Gd {
                batch: BatchBlock::Minibatch { size },
                ..
            } => Some(Batch::Minibatch {
                size: *size,
                seed: self.seed,
            }),
            Method::Flow { .. } => None,
        }
    }
}
