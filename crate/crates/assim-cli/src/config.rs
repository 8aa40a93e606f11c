//! Experiment configuration: a TOML document with `method`, `seed`, and the
//! tables `[model]`, `[params]`, `[data]` and `[output]`.
//!
//! Parsing fills every optional parameter with its default, so the config
//! echoed in a report is the fully resolved one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use assim::models::Benchmark;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "kf")]
    Kf,
    #[serde(rename = "ks")]
    Ks,
    #[serde(rename = "3dvar")]
    ThreeDVar,
    #[serde(rename = "4dvar")]
    FourDVar,
    #[serde(rename = "w4dvar")]
    W4dVar,
    #[serde(rename = "exkf")]
    Exkf,
    #[serde(rename = "enkf")]
    Enkf,
    #[serde(rename = "bpf")]
    Bpf,
    #[serde(rename = "opf")]
    Opf,
    #[serde(rename = "gopf")]
    Gopf,
    #[serde(rename = "mh")]
    Mh,
    #[serde(rename = "pcn")]
    Pcn,
    #[serde(rename = "eki")]
    Eki,
    #[serde(rename = "smc")]
    Smc,
    #[serde(rename = "map")]
    Map,
    #[serde(rename = "gauss-fit")]
    GaussFit,
}

impl Method {
    pub const ALL: [Method; 16] = [
        Method::Kf,
        Method::Ks,
        Method::ThreeDVar,
        Method::FourDVar,
        Method::W4dVar,
        Method::Exkf,
        Method::Enkf,
        Method::Bpf,
        Method::Opf,
        Method::Gopf,
        Method::Mh,
        Method::Pcn,
        Method::Eki,
        Method::Smc,
        Method::Map,
        Method::GaussFit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Kf => "kf",
            Method::Ks => "ks",
            Method::ThreeDVar => "3dvar",
            Method::FourDVar => "4dvar",
            Method::W4dVar => "w4dvar",
            Method::Exkf => "exkf",
            Method::Enkf => "enkf",
            Method::Bpf => "bpf",
            Method::Opf => "opf",
            Method::Gopf => "gopf",
            Method::Mh => "mh",
            Method::Pcn => "pcn",
            Method::Eki => "eki",
            Method::Smc => "smc",
            Method::Map => "map",
            Method::GaussFit => "gauss-fit",
        }
    }

    /// Methods that estimate a state sequence from a state-space model.
    pub fn is_filter_or_smoother(self) -> bool {
        matches!(
            self,
            Method::Kf
                | Method::Ks
                | Method::ThreeDVar
                | Method::FourDVar
                | Method::W4dVar
                | Method::Exkf
                | Method::Enkf
                | Method::Bpf
                | Method::Opf
                | Method::Gopf
        )
    }

    fn required(self) -> &'static [&'static str] {
        match self {
            Method::Enkf | Method::Bpf | Method::Opf | Method::Gopf => &["N"],
            Method::Mh => &["steps"],
            Method::Pcn => &["steps", "beta"],
            Method::Eki => &["N", "steps"],
            Method::Smc => &["N", "beta"],
            _ => &[],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            CliError::Usage(format!("unknown method `{s}` (valid: {})", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Analysis {
    Gain,
    Subspace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(CliError::Usage(format!("unknown format `{s}` (valid: csv, json)"))),
        }
    }
}

/// Linear-Gaussian state-space model given inline. Matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineLinear {
    pub m: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub mean0: Vec<f64>,
    pub cov0: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<InlineLinear>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    /// Observation times; SMC temperatures.
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<usize>,
    /// Ensemble or particle count.
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Chain length (MH, pCN) or iteration count (EKI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    /// pCN step parameter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// EnKF observation perturbation switch, 0 or 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<u8>,
    /// EKI perturbed observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Analysis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_steps: Option<usize>,
    /// Precision of the `N(0, λ⁻¹I)` reference measure in the Gaussian fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Random-walk MH proposal standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    /// Chain steps per report row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segment: Option<usize>,
    /// Simulate the truth without model noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_free: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    /// CSV with columns `step, y_1..y_k`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<String>,
    /// CSV with columns `step, v_1..v_d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub model: ModelSpec,
    #[serde(default)]
    pub params: Params,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// Fills unset optional parameters with their defaults.
    pub fn resolve(&mut self) {
        let p = &mut self.params;
        p.j.get_or_insert(10);
        p.s.get_or_insert(1);
        p.perturb.get_or_insert(false);
        p.analysis.get_or_insert(Analysis::Gain);
        p.tol.get_or_insert(1e-8);
        p.max_iter.get_or_insert(10_000);
        p.mutation_steps.get_or_insert(5);
        p.lambda.get_or_insert(1.0);
        p.step_size.get_or_insert(0.5);
        p.burn_in.get_or_insert(0);
        p.segment.get_or_insert(100);
        p.noise_free.get_or_insert(false);
        self.output.format.get_or_insert(Format::Csv);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.model.benchmark, &self.model.linear) {
            (Some(name), None) => {
                name.parse::<Benchmark>()
                    .map_err(|e| CliError::config("model.benchmark", e.to_string()))?;
            }
            (None, Some(_)) => {}
            _ => {
                return Err(CliError::config(
                    "model",
                    "give exactly one of `benchmark` or `linear`",
                ))
            }
        }
        let p = &self.params;
        for key in self.method.required() {
            let present = match *key {
                "N" => p.n.is_some(),
                "steps" => p.steps.is_some(),
                "beta" => p.beta.is_some(),
                _ => unreachable!("unlisted required key"),
            };
            if !present {
                return Err(CliError::config(
                    format!("params.{key}"),
                    format!("method `{}` requires parameter {key}", self.method),
                ));
            }
        }
        let positive = |key: &str, v: Option<usize>| match v {
            Some(0) => Err(CliError::config(format!("params.{key}"), "must be at least 1")),
            _ => Ok(()),
        };
        positive("J", p.j)?;
        positive("N", p.n)?;
        positive("steps", p.steps)?;
        positive("segment", p.segment)?;
        if let Some(b) = p.beta {
            if !(b > 0.0 && b <= 1.0) {
                return Err(CliError::config("params.beta", format!("{b} outside (0, 1]")));
            }
        }
        if let Some(s) = p.s {
            if s > 1 {
                return Err(CliError::config("params.s", format!("must be 0 or 1, got {s}")));
            }
        }
        for (key, v) in [("tol", p.tol), ("lambda", p.lambda), ("step_size", p.step_size)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::config(format!("params.{key}"), format!("{v} must be positive")));
                }
            }
        }
        Ok(())
    }

    pub fn j(&self) -> usize {
        self.params.j.unwrap_or(10)
    }
}

/// Parses, resolves defaults and validates.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config("<document>", e.to_string().trim()))?;
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        CliError::config(if key == "." { "<document>".into() } else { key }, e.inner().to_string().trim())
    })?;
    cfg.resolve();
    cfg.validate()?;
    Ok(cfg)
}

pub fn emit_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(cfg).expect("config serializes to TOML")
}
