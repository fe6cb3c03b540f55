//! Dataset construction and single-seed runs shared by the CLI and the test suites.

use std::path::PathBuf;

use crate::adversarial::{train_adaptation, AdaptModel, AdaptationConfig};
use crate::data::{
    apply_shift, gen_blobs, gen_two_moons, load_features_csv, reduce_source, Domain,
    DomainDataset, Normalizer, ShiftSpec,
};
use crate::error::{Error, Result};
use crate::eval::{proxy_a_distance, MetricsRecord, ProbeConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Moons {
        n_per_class: usize,
        noise: f64,
    },
    Blobs {
        n_per_class: usize,
        classes: usize,
        separation: f64,
        noise: f64,
    },
    Csv {
        source: PathBuf,
        target: PathBuf,
    },
}

impl DataSource {
    pub fn generator_name(&self) -> &'static str {
        match self {
            DataSource::Moons { .. } => "moons",
            DataSource::Blobs { .. } => "blobs",
            DataSource::Csv { .. } => "csv",
        }
    }
}

/// Where the data comes from and how the target domain is derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DataSource,
    /// One task per rotation angle (synthetic generators only).
    pub rotations: Vec<f64>,
    pub translation: Vec<f64>,
    pub shift_noise: f64,
    /// Fraction of each source class kept.
    pub source_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            source: DataSource::Moons {
                n_per_class: 250,
                noise: 0.1,
            },
            rotations: vec![35.0],
            translation: Vec::new(),
            shift_noise: 0.0,
            source_fraction: 1.0,
        }
    }
}

impl DataConfig {
    pub fn num_tasks(&self) -> usize {
        match self.source {
            DataSource::Csv { .. } => 1,
            _ => self.rotations.len(),
        }
    }

    pub fn task_name(&self, task: usize) -> String {
        match &self.source {
            DataSource::Csv { target, .. } => format!(
                "csv_{}",
                target.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
            ),
            src => format!("{}_rot{}", src.generator_name(), self.rotations[task]),
        }
    }

    /// Class count known without loading data; CSV sources need [`prepare_task`].
    pub fn declared_classes(&self) -> Option<usize> {
        match self.source {
            DataSource::Moons { .. } => Some(2),
            DataSource::Blobs { classes, .. } => Some(classes),
            DataSource::Csv { .. } => None,
        }
    }
}

/// Source and target of one task, z-scored with source statistics.
#[derive(Debug, Clone)]
pub struct PreparedTask {
    pub name: String,
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub normalizer: Normalizer,
}

impl PreparedTask {
    pub fn classes(&self) -> usize {
        self.source.num_classes().unwrap_or(1)
    }
}

/// Independent generator seed for one consumer of a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn prepare_task(data: &DataConfig, task: usize, seed: u64) -> Result<PreparedTask> {
    if task >= data.num_tasks() {
        return Err(Error::Usage(format!("task {task} out of range")));
    }
    let (source, target) = match &data.source {
        DataSource::Csv { source, target } => (
            load_features_csv(source, Domain::Source)?,
            load_features_csv(target, Domain::Target)?,
        ),
        synthetic => {
            let draw = |s: u64| match *synthetic {
                DataSource::Moons { n_per_class, noise } => gen_two_moons(n_per_class, noise, s),
                DataSource::Blobs {
                    n_per_class,
                    classes,
                    separation,
                    noise,
                } => gen_blobs(n_per_class, classes, separation, noise, s),
                DataSource::Csv { .. } => unreachable!(),
            };
            let source = draw(derive_seed(seed, 1))?;
            let shift = ShiftSpec {
                rotation_degrees: data.rotations[task],
                translation: data.translation.clone(),
                noise_sigma: data.shift_noise,
            };
            let target = apply_shift(&draw(derive_seed(seed, 2))?, &shift, derive_seed(seed, 3))?;
            (source, target)
        }
    };
    if source.dim() != target.dim() {
        return Err(Error::dim(
            "source/target features",
            source.features.shape(),
            target.features.shape(),
        ));
    }
    let source = if data.source_fraction < 1.0 {
        reduce_source(&source, data.source_fraction, derive_seed(seed, 4))?
    } else {
        source
    };
    let normalizer = Normalizer::fit(&source);
    Ok(PreparedTask {
        name: data.task_name(task),
        source: normalizer.apply(&source)?,
        target: normalizer.apply(&target)?.with_domain(Domain::Target),
        normalizer,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub model: AdaptModel,
    pub metrics: Vec<MetricsRecord>,
    pub proxy_a_distance: f64,
}

impl SeedRun {
    pub fn last(&self) -> &MetricsRecord {
        self.metrics.last().expect("at least one epoch")
    }

    pub fn target_accuracy(&self) -> Option<f64> {
        self.last().target_accuracy
    }
}

/// Trains one seed on a prepared task and measures the proxy A-distance of the learned features.
pub fn run_seed(
    adapt: &AdaptationConfig,
    probe: &ProbeConfig,
    task: &PreparedTask,
    seed: u64,
) -> Result<SeedRun> {
    let mut cfg = adapt.clone();
    cfg.seed = seed;
    let out = train_adaptation(&cfg, &task.source, &task.target)?;
    let fs = out.model.features(&task.source.features)?;
    let ft = out.model.features(&task.target.features)?;
    let probe = ProbeConfig {
        seed: derive_seed(seed, 5),
        ..probe.clone()
    };
    let d_a = proxy_a_distance(&fs, &ft, &probe)?;
    Ok(SeedRun {
        seed,
        model: out.model,
        metrics: out.metrics,
        proxy_a_distance: d_a,
    })
}
