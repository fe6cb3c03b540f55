//! Flat `section.key = value` experiment configuration.
//!
//! ```text
//! # two moons, 35 degree rotation
//! adapt.method = cd3a
//! adapt.lambda = 0.5
//! data.generator = moons
//! run.seeds = 0, 1, 2
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adversarial::{
    AdaptationConfig, Aggregation, Architecture, CurriculumSchedule, MaskResample, Method,
    DEFAULT_CURRICULUM_RATE, DEFAULT_DROPOUT, DEFAULT_LAMBDA,
};
use crate::error::{Error, Result};
use crate::eval::ProbeConfig;
use crate::experiment::{DataConfig, DataSource};

/// Ordered key-value pairs; later assignments win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1))
            })?;
            let key = k.trim();
            if key.is_empty() || !key.contains('.') {
                return Err(Error::Config(format!(
                    "line {}: key {key:?} must be `section.name`",
                    n + 1
                )));
            }
            entries.insert(key.to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}"))),
        }
    }

    fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key)?.unwrap_or(default))
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) if v.is_empty() => Ok(Some(Vec::new())),
            Some(v) => v
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: cannot parse {x:?} in {v:?}")))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }
}

/// Everything one `run` needs: adaptation settings, data, probe, seeds and output location.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub lambda: f64,
    pub dropout: f64,
    /// Sample count for D3A, cap for CD3A, heads for multi-head; `None` derives it from the class count.
    pub k_samples: Option<usize>,
    pub curriculum_rate: usize,
    pub aggregation: Aggregation,
    pub mask_resample: MaskResample,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub architecture: Architecture,
    pub data: DataConfig,
    pub probe: ProbeConfig,
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = AdaptationConfig::for_method(Method::Cd3a, 2);
        ExperimentConfig {
            method: Method::Cd3a,
            lambda: DEFAULT_LAMBDA,
            dropout: DEFAULT_DROPOUT,
            k_samples: None,
            curriculum_rate: DEFAULT_CURRICULUM_RATE,
            aggregation: base.aggregation,
            mask_resample: base.mask_resample,
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            momentum: base.momentum,
            architecture: base.architecture,
            data: DataConfig::default(),
            probe: ProbeConfig::default(),
            seeds: vec![0],
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = ExperimentConfig::default();
        let method: Method = kv.take_or("adapt.method", d.method)?;
        let generator: String = kv.take_or("data.generator", "moons".to_string())?;
        let defaults = DataConfig::default();
        let source = match generator.as_str() {
            "moons" => DataSource::Moons {
                n_per_class: kv.take_or("data.n_per_class", 250)?,
                noise: kv.take_or("data.noise", 0.1)?,
            },
            "blobs" => DataSource::Blobs {
                n_per_class: kv.take_or("data.n_per_class", 100)?,
                classes: kv.take_or("data.classes", 3)?,
                separation: kv.take_or("data.separation", 3.0)?,
                noise: kv.take_or("data.noise", 0.5)?,
            },
            "csv" => {
                let source: PathBuf = kv
                    .take("data.source_csv")?
                    .ok_or_else(|| Error::Config("data.source_csv is required for csv data".into()))?;
                let target: PathBuf = kv
                    .take("data.target_csv")?
                    .ok_or_else(|| Error::Config("data.target_csv is required for csv data".into()))?;
                DataSource::Csv { source, target }
            }
            other => {
                return Err(Error::Config(format!(
                    "data.generator: unknown generator {other:?} (moons|blobs|csv)"
                )))
            }
        };
        let data = DataConfig {
            source,
            rotations: kv.take_list("data.rotation")?.unwrap_or(defaults.rotations),
            translation: kv.take_list("data.translation")?.unwrap_or_default(),
            shift_noise: kv.take_or("data.shift_noise", 0.0)?,
            source_fraction: kv.take_or("data.source_fraction", 1.0)?,
        };
        let k_samples = match kv.take::<String>("adapt.k_samples")? {
            None => None,
            Some(v) if v == "auto" => None,
            Some(v) => Some(
                v.parse()
                    .map_err(|_| Error::Config(format!("adapt.k_samples: cannot parse {v:?}")))?,
            ),
        };
        let cfg = ExperimentConfig {
            method,
            lambda: kv.take_or("adapt.lambda", d.lambda)?,
            dropout: kv.take_or("adapt.dropout", d.dropout)?,
            k_samples,
            curriculum_rate: kv.take_or("adapt.curriculum_rate", d.curriculum_rate)?,
            aggregation: kv.take_or("adapt.aggregation", d.aggregation)?,
            mask_resample: kv.take_or("adapt.mask_resample", d.mask_resample)?,
            epochs: kv.take_or("train.epochs", d.epochs)?,
            batch_size: kv.take_or("train.batch_size", d.batch_size)?,
            learning_rate: kv.take_or("train.lr", d.learning_rate)?,
            momentum: kv.take_or("train.momentum", d.momentum)?,
            architecture: Architecture {
                feature_hidden: kv
                    .take_list("model.feature_hidden")?
                    .unwrap_or(d.architecture.feature_hidden),
                disc_hidden: kv
                    .take_list("model.disc_hidden")?
                    .unwrap_or(d.architecture.disc_hidden),
            },
            data,
            probe: ProbeConfig {
                epochs: kv.take_or("probe.epochs", d.probe.epochs)?,
                learning_rate: kv.take_or("probe.lr", d.probe.learning_rate)?,
                batch_size: kv.take_or("probe.batch_size", d.probe.batch_size)?,
                seed: 0,
            },
            seeds: kv.take_list("run.seeds")?.unwrap_or(d.seeds),
            out_dir: kv.take("run.out_dir")?,
        };
        if let Some(key) = kv.entries.keys().next() {
            return Err(Error::Config(format!("unknown key {key:?}")));
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::load(path)?)
    }

    fn check(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("run.seeds must be distinct".into()));
        }
        if self.data.num_tasks() == 0 {
            return Err(Error::Config("data.rotation must list at least one angle".into()));
        }
        let f = self.data.source_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("data.source_fraction must be in (0, 1], got {f}")));
        }
        if let DataSource::Csv { source, target } = &self.data.source {
            for p in [source, target] {
                if !p.is_file() {
                    return Err(Error::Config(format!("feature CSV {} does not exist", p.display())));
                }
            }
        }
        if let Some(c) = self.data.declared_classes() {
            self.adaptation(c, 0)?.validate()?;
        }
        Ok(())
    }

    /// Sample count used for a task with `classes` classes.
    pub fn resolved_k(&self, classes: usize) -> usize {
        self.k_samples.unwrap_or(match self.method {
            Method::Cd3a => 2 * classes,
            Method::MultiHead | Method::D3a => classes,
            Method::Grl | Method::SourceOnly => 1,
        })
    }

    /// Training settings for one seed of a task with `classes` classes.
    pub fn adaptation(&self, classes: usize, seed: u64) -> Result<AdaptationConfig> {
        let k = self.resolved_k(classes);
        let schedule = match self.method {
            Method::Cd3a => CurriculumSchedule::Curriculum {
                rate: self.curriculum_rate,
                max_samples: k,
            },
            _ => CurriculumSchedule::Fixed(k),
        };
        let mut cfg = AdaptationConfig {
            method: self.method,
            lambda: self.lambda,
            dropout: self.dropout,
            schedule,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            seed,
            aggregation: self.aggregation,
            mask_resample: self.mask_resample,
            architecture: self.architecture.clone(),
        };
        if matches!(self.method, Method::Grl | Method::MultiHead) {
            cfg.dropout = 0.0;
        }
        if self.method == Method::Grl {
            cfg.schedule = CurriculumSchedule::Fixed(1);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text with every setting spelled out, for a task with `classes` classes.
    pub fn to_text(&self, classes: usize) -> String {
        let list = |v: &[usize]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let flist = |v: &[f64]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        let effective_dropout = match self.method {
            Method::Grl | Method::MultiHead => 0.0,
            _ => self.dropout,
        };
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("adapt.method", self.method.to_string());
        put("adapt.lambda", self.lambda.to_string());
        put("adapt.dropout", effective_dropout.to_string());
        put("adapt.k_samples", self.resolved_k(classes).to_string());
        put("adapt.curriculum_rate", self.curriculum_rate.to_string());
        put("adapt.aggregation", self.aggregation.to_string());
        put("adapt.mask_resample", self.mask_resample.to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.learning_rate.to_string());
        put("train.momentum", self.momentum.to_string());
        put("model.feature_hidden", list(&self.architecture.feature_hidden));
        put("model.disc_hidden", list(&self.architecture.disc_hidden));
        put("data.generator", self.data.source.generator_name().to_string());
        match &self.data.source {
            DataSource::Moons { n_per_class, noise } => {
                put("data.n_per_class", n_per_class.to_string());
                put("data.noise", noise.to_string());
            }
            DataSource::Blobs {
                n_per_class,
                classes,
                separation,
                noise,
            } => {
                put("data.n_per_class", n_per_class.to_string());
                put("data.classes", classes.to_string());
                put("data.separation", separation.to_string());
                put("data.noise", noise.to_string());
            }
            DataSource::Csv { source, target } => {
                put("data.source_csv", source.display().to_string());
                put("data.target_csv", target.display().to_string());
            }
        }
        put("data.rotation", flist(&self.data.rotations));
        put("data.translation", flist(&self.data.translation));
        put("data.shift_noise", self.data.shift_noise.to_string());
        put("data.source_fraction", self.data.source_fraction.to_string());
        put("probe.epochs", self.probe.epochs.to_string());
        put("probe.lr", self.probe.learning_rate.to_string());
        put("probe.batch_size", self.probe.batch_size.to_string());
        put(
            "run.seeds",
            self.seeds.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
        );
        if let Some(out) = &self.out_dir {
            put("run.out_dir", out.display().to_string());
        }
        s
    }
}
