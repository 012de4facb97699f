//! Run configuration files.
//!
//! A configuration is a JSON object. Parse and validation errors name the
//! offending key path, e.g. `observables[1].phi.tensor[0].a`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Mode;
use crate::ensemble::{EnsembleSpec, InitialLaw, ResidualSettings, DEFAULT_MEMORY_CAP};
use crate::kernels::{CollisionKernel, KernelError, KernelFamily, SigmaTable};
use crate::testfn::{TestFunction, Unary};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("config key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelFamily,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_b: Option<f64>,
    /// CSV of `(speed, sigma)` rows, relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table_path: Option<PathBuf>,
}

impl KernelConfig {
    pub fn maxwell() -> Self {
        KernelConfig {
            family: KernelFamily::Maxwell,
            gamma: None,
            c_b: None,
            table_path: None,
        }
    }

    pub fn hard_sphere() -> Self {
        KernelConfig {
            family: KernelFamily::HardSphere,
            ..Self::maxwell()
        }
    }

    pub fn build(&self, base_dir: &Path) -> Result<CollisionKernel, ConfigError> {
        match self.family {
            KernelFamily::Maxwell => Ok(CollisionKernel::Maxwell),
            KernelFamily::HardSphere => Ok(CollisionKernel::HardSphere),
            KernelFamily::BoundedCustom => {
                let path = self
                    .table_path
                    .as_ref()
                    .ok_or_else(|| invalid("kernel.table_path", "required for bounded_custom"))?;
                let gamma = self
                    .gamma
                    .ok_or_else(|| invalid("kernel.gamma", "required for bounded_custom"))?;
                let c_b = self
                    .c_b
                    .ok_or_else(|| invalid("kernel.c_b", "required for bounded_custom"))?;
                let table = SigmaTable::from_csv(&base_dir.join(path))
                    .map_err(|e| invalid("kernel.table_path", e.to_string()))?;
                CollisionKernel::bounded_custom(gamma, c_b, table).map_err(|e| match e {
                    KernelError::InvalidParameter { key, reason } => invalid(key, reason),
                    other => invalid("kernel.table_path", other.to_string()),
                })
            }
        }
    }
}

/// A named test function whose correlations and residuals are reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observable {
    pub id: String,
    /// Optional consistency check against the arity of `phi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<usize>,
    pub phi: TestFunction,
}

fn default_observables() -> Vec<Observable> {
    vec![
        Observable {
            id: "mass".into(),
            ell: Some(1),
            phi: TestFunction::constant(1),
        },
        Observable {
            id: "gauss".into(),
            ell: Some(1),
            phi: TestFunction::unary(Unary::Gaussian {
                a: 0.5,
                c: [0.0; 3],
            }),
        },
    ]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_omega_draws() -> usize {
    ResidualSettings::default().omega_draws
}

fn default_pair_samples() -> usize {
    ResidualSettings::default().pair_samples
}

fn default_memory_cap() -> usize {
    DEFAULT_MEMORY_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kernel: KernelConfig,
    pub alpha: f64,
    pub n0: usize,
    /// Defaults to `n0`.
    #[serde(default)]
    pub lambda: Option<f64>,
    pub t_end: f64,
    /// Snapshots on the uniform grid from 0 to `t_end`, both included.
    /// Defaults to `ceil(32 t_end) + 1`.
    #[serde(default)]
    pub snapshot_count: Option<usize>,
    #[serde(alias = "m")]
    pub ensemble_size: usize,
    pub seed: u64,
    pub init: InitialLaw,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_observables")]
    pub observables: Vec<Observable>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_omega_draws")]
    pub omega_draws: usize,
    #[serde(default = "default_pair_samples")]
    pub pair_samples: usize,
    /// Velocity components kept in memory before spilling to `output_dir/velocities.bin`.
    #[serde(default = "default_memory_cap")]
    pub memory_cap: usize,
    /// Directory that relative paths inside the config refer to.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            ConfigError::Parse {
                key: if key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.resolved()
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.output_dir.is_relative() {
            cfg.output_dir = cfg.base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Fills defaults and validates every field.
    pub fn resolved(mut self) -> Result<Self, ConfigError> {
        if self.n0 == 0 || self.n0 % 2 == 1 {
            return Err(invalid(
                "n0",
                format!("{} must be even and positive", self.n0),
            ));
        }
        let lambda = *self.lambda.get_or_insert(self.n0 as f64);
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", format!("{lambda} must be positive")));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha", format!("{} outside [0, 1]", self.alpha)));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(invalid("t_end", format!("{} must be positive", self.t_end)));
        }
        let count = *self
            .snapshot_count
            .get_or_insert((32.0 * self.t_end).ceil() as usize + 1);
        if count < 2 {
            return Err(invalid(
                "snapshot_count",
                format!("{count} must be at least 2"),
            ));
        }
        if self.ensemble_size == 0 {
            return Err(invalid("ensemble_size", "must be positive"));
        }
        self.init.validate().map_err(|r| invalid("init", r))?;
        if self.omega_draws == 0 {
            return Err(invalid("omega_draws", "must be positive"));
        }
        if self.pair_samples == 0 {
            return Err(invalid("pair_samples", "must be positive"));
        }
        let mut ids = std::collections::BTreeSet::new();
        for (k, obs) in self.observables.iter().enumerate() {
            obs.phi
                .validate()
                .map_err(|e| invalid(format!("observables[{k}].phi"), e.0))?;
            let arity = obs.phi.arity();
            if !(1..=3).contains(&arity) {
                return Err(invalid(
                    format!("observables[{k}].phi"),
                    format!("arity {arity} outside 1..=3"),
                ));
            }
            if obs.ell.is_some_and(|l| l != arity) {
                return Err(invalid(
                    format!("observables[{k}].ell"),
                    format!("does not match arity {arity} of phi"),
                ));
            }
            if obs.id.is_empty() || obs.id.contains([',', '"', '\n']) || !ids.insert(obs.id.clone())
            {
                return Err(invalid(
                    format!("observables[{k}].id"),
                    format!("`{}` must be unique, non-empty and CSV-safe", obs.id),
                ));
            }
        }
        if self.kernel.family != KernelFamily::BoundedCustom
            && (self.kernel.gamma.is_some()
                || self.kernel.c_b.is_some()
                || self.kernel.table_path.is_some())
        {
            return Err(invalid(
                "kernel",
                "gamma, c_b and table_path apply only to bounded_custom",
            ));
        }
        Ok(self)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or(self.n0 as f64)
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let count = self
            .snapshot_count
            .unwrap_or((32.0 * self.t_end).ceil() as usize + 1);
        (0..count)
            .map(|k| self.t_end * k as f64 / (count - 1) as f64)
            .collect()
    }

    pub fn ensemble_spec(&self) -> Result<EnsembleSpec, ConfigError> {
        let kernel = self.kernel.build(&self.base_dir)?;
        let mut spec = EnsembleSpec::new(
            kernel,
            self.alpha,
            self.n0,
            self.init,
            self.snapshot_times(),
        );
        spec.lambda = self.lambda();
        spec.mode = self.mode;
        spec.realizations = self.ensemble_size;
        spec.seed = self.seed;
        spec.memory_cap = self.memory_cap;
        spec.sidecar_dir = Some(self.output_dir.clone());
        Ok(spec)
    }

    pub fn residual_settings(&self) -> ResidualSettings {
        ResidualSettings {
            omega_draws: self.omega_draws,
            pair_samples: self.pair_samples,
            ..ResidualSettings::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "kernel": {"family": "maxwell"},
        "alpha": 0.5, "n0": 20, "t_end": 1.0, "ensemble_size": 4, "seed": 7,
        "init": {"kind": "maxwellian", "t0": 1.0}
    }"#;

    #[test]
    fn defaults_are_resolved() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.lambda, Some(20.0));
        assert_eq!(c.snapshot_count, Some(33));
        assert_eq!(c.mode, Mode::Exact);
        assert_eq!(c.observables.len(), 2);
        let t = c.snapshot_times();
        assert_eq!((t[0], t[32]), (0.0, 1.0));
        let echoed = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&echoed).unwrap(), c);
    }

    fn key_of(text: &str) -> String {
        match RunConfig::from_json(text).unwrap_err() {
            ConfigError::Parse { key, .. } | ConfigError::Invalid { key, .. } => key,
            e => panic!("{e}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(&MINIMAL.replace("\"n0\": 20", "\"n0\": 21")), "n0");
        assert_eq!(
            key_of(&MINIMAL.replace("\"n0\": 20", "\"n0\": \"x\"")),
            "n0"
        );
        assert_eq!(key_of(&MINIMAL.replace("0.5", "1.5")), "alpha");
        assert_eq!(
            key_of(&MINIMAL.replace("maxwell\"", "maxwel\"")),
            "kernel.family"
        );
        assert_eq!(
            key_of(&MINIMAL.replace("\"seed\": 7", "\"seed\": 7, \"bogus\": 1")),
            "bogus"
        );
        let obs = MINIMAL.replace(
            "\"seed\": 7",
            r#""seed": 7, "observables": [{"id": "a", "phi": {"tensor": [{"kind": "constant"}]}},
                {"id": "b", "phi": {"tensor": [{"kind": "gaussian", "a": -1, "c": [0,0,0]}]}}]"#,
        );
        assert_eq!(key_of(&obs), "observables[1].phi");
        let custom = MINIMAL.replace(
            "\"family\": \"maxwell\"",
            "\"family\": \"maxwell\", \"gamma\": 0.5",
        );
        assert_eq!(key_of(&custom), "kernel");
    }

    #[test]
    fn custom_kernel_reads_its_table() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("sigma.csv"),
            "speed,sigma\n0,0\n1,0.8\n4,1.2\n",
        )
        .unwrap();
        let text = MINIMAL.replace(
            "\"family\": \"maxwell\"",
            "\"family\": \"bounded_custom\", \"gamma\": 1.0, \"c_b\": 1.0, \"table_path\": \"sigma.csv\"",
        );
        let path = dir.path().join("run.json");
        std::fs::write(&path, text).unwrap();
        let c = RunConfig::from_path(&path).unwrap();
        let spec = c.ensemble_spec().unwrap();
        assert_eq!(spec.kernel.sup_sigma(), Some(1.2));
        assert_eq!(c.output_dir, dir.path().join("out"));
    }
}
