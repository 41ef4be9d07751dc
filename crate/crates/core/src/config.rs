//! Declarative run configuration: JSON with `//` and `/* */` comments.
//!
//! Unknown keys are rejected everywhere and errors carry the JSON path of the
//! offending value. Box bounds use `null` for an infinite bound.

use std::io::Read;
use std::path::{Path, PathBuf};

use json_comments::StripComments;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::equilibria::{BoxSet, TargetSetpoint};
use crate::error::{Error, Result};
use crate::lti::{four_tank, random_minimal, SystemRealization};
use crate::mpc::MpcConfig;
use crate::qp::QpSettings;
use crate::sim::{
    DataSpec, Experiment, ScheduleEntry, DEFAULT_PREDICTION_INSTANTS, DEFAULT_SETTLING_BAND,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub name: String,
    pub plant: PlantConfig,
    /// Initial plant state of the closed-loop run; zero when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Inputs applied before control starts; `n` zero inputs when absent.
    #[serde(default)]
    pub warmup: Option<Vec<Vec<f64>>>,
    pub data: DataConfig,
    pub mpc: MpcSection,
    pub schedule: Vec<TargetEntry>,
    pub sim: SimConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub solver: QpSettings,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    FourTank,
    RandomMinimal {
        n: usize,
        m: usize,
        p: usize,
        seed: u64,
    },
    Matrices {
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        c: Vec<Vec<f64>>,
        #[serde(default)]
        d: Option<Vec<Vec<f64>>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub length: usize,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSection {
    pub horizon: usize,
    pub order: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub t: Vec<Vec<f64>>,
    pub u_box: BoxConfig,
    pub y_box: BoxConfig,
    /// Explicit setpoint boxes; when absent they are `shrink` times the constraint boxes.
    #[serde(default)]
    pub u_s_box: Option<BoxConfig>,
    #[serde(default)]
    pub y_s_box: Option<BoxConfig>,
    #[serde(default = "default_shrink")]
    pub shrink: f64,
    #[serde(default = "default_alpha_reg")]
    pub alpha_reg: f64,
}

fn default_shrink() -> f64 {
    0.99
}

fn default_alpha_reg() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    pub start: usize,
    pub y: Vec<f64>,
    #[serde(default)]
    pub u: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub steps: usize,
    #[serde(default = "default_instants")]
    pub prediction_instants: Vec<usize>,
    #[serde(default = "default_band")]
    pub settling_band: f64,
}

fn default_instants() -> Vec<usize> {
    DEFAULT_PREDICTION_INSTANTS.to_vec()
}

fn default_band() -> f64 {
    DEFAULT_SETTLING_BAND
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

/// Extra runs that differ from the base config only in the data seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub data_seeds: Vec<u64>,
}

impl RunConfig {
    pub fn from_str_named(text: &str, origin: &str) -> Result<Self> {
        let mut stripped = String::new();
        StripComments::new(text.as_bytes())
            .read_to_string(&mut stripped)
            .map_err(|e| parse_error(origin, e.to_string()))?;
        let de = &mut serde_json::Deserializer::from_str(&stripped);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            parse_error(origin, format!("at `{path}`: {inner}"))
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(parse_error(
                origin,
                format!(
                    "at `schema_version`: unsupported version {}, expected {SCHEMA_VERSION}",
                    cfg.schema_version
                ),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn plant(&self) -> Result<SystemRealization> {
        match &self.plant {
            PlantConfig::FourTank => Ok(four_tank()),
            PlantConfig::RandomMinimal { n, m, p, seed } => random_minimal(*n, *m, *p, *seed),
            PlantConfig::Matrices { a, b, c, d } => {
                let a = matrix("plant.a", a)?;
                let b = matrix("plant.b", b)?;
                let c = matrix("plant.c", c)?;
                let d = match d {
                    Some(d) => matrix("plant.d", d)?,
                    None => DMatrix::zeros(c.nrows(), b.ncols()),
                };
                SystemRealization::new(a, b, c, d)
            }
        }
    }

    pub fn data_spec(&self) -> DataSpec {
        DataSpec {
            len: self.data.length,
            lower: DVector::from_vec(self.data.input_lower.clone()),
            upper: DVector::from_vec(self.data.input_upper.clone()),
            seed: self.data.seed,
        }
    }

    pub fn mpc_config(&self) -> Result<MpcConfig> {
        let s = &self.mpc;
        let u_box = boxset("mpc.u_box", &s.u_box)?;
        let y_box = boxset("mpc.y_box", &s.y_box)?;
        let u_s_box = match &s.u_s_box {
            Some(b) => boxset("mpc.u_s_box", b)?,
            None => u_box.scaled(s.shrink)?,
        };
        let y_s_box = match &s.y_s_box {
            Some(b) => boxset("mpc.y_s_box", b)?,
            None => y_box.scaled(s.shrink)?,
        };
        Ok(MpcConfig {
            horizon: s.horizon,
            order: s.order,
            q: matrix("mpc.q", &s.q)?,
            r: matrix("mpc.r", &s.r)?,
            s: matrix("mpc.s", &s.s)?,
            t: matrix("mpc.t", &s.t)?,
            u_box,
            y_box,
            u_s_box,
            y_s_box,
            alpha_reg: s.alpha_reg,
            solver: self.solver.clone(),
        })
    }

    pub fn schedule(&self) -> Vec<ScheduleEntry> {
        self.schedule
            .iter()
            .map(|e| ScheduleEntry {
                start: e.start,
                target: TargetSetpoint {
                    u: e.u.clone().map(DVector::from_vec),
                    y: DVector::from_vec(e.y.clone()),
                },
            })
            .collect()
    }

    pub fn experiment(&self) -> Result<Experiment> {
        let plant = self.plant()?;
        let x0 = match &self.x0 {
            Some(x) => DVector::from_vec(x.clone()),
            None => DVector::zeros(plant.n()),
        };
        Ok(Experiment {
            x0,
            warmup: self
                .warmup
                .as_ref()
                .map(|w| w.iter().map(|u| DVector::from_vec(u.clone())).collect()),
            data: self.data_spec(),
            mpc: self.mpc_config()?,
            schedule: self.schedule(),
            steps: self.sim.steps,
            prediction_instants: self.sim.prediction_instants.clone(),
            settling_band: self.sim.settling_band,
            plant,
        })
    }

    /// The base experiment followed by one per sweep seed, keyed by name.
    pub fn experiments(&self) -> Result<Vec<(String, Experiment)>> {
        let base = self.experiment()?;
        let mut out = vec![(self.name.clone(), base.clone())];
        if let Some(sw) = &self.sweep {
            for &seed in &sw.data_seeds {
                let mut e = base.clone();
                e.data.seed = seed;
                out.push((format!("{}-seed{seed}", self.name), e));
            }
        }
        Ok(out)
    }
}

fn parse_error(origin: &str, message: String) -> Error {
    Error::Parse {
        path: origin.to_string(),
        message,
    }
}

fn matrix(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 || rows.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidArgument(format!(
            "{field}: expected a non-empty rectangular matrix given as rows"
        )));
    }
    Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
}

fn boxset(field: &str, b: &BoxConfig) -> Result<BoxSet> {
    let lower = DVector::from_iterator(
        b.lower.len(),
        b.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)),
    );
    let upper = DVector::from_iterator(
        b.upper.len(),
        b.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)),
    );
    BoxSet::new(lower, upper).map_err(|e| Error::InvalidArgument(format!("{field}: {e}")))
}
