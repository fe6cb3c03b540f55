use std::fmt;
use std::str::FromStr;

use crate::adversarial::{Aggregation, CurriculumSchedule};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Classifier trained on the source domain only.
    SourceOnly,
    /// One discriminator behind a gradient reversal layer.
    Grl,
    /// Fixed number of dropout-sampled discriminators.
    D3a,
    /// Curriculum over the number of dropout-sampled discriminators.
    Cd3a,
    /// One independent discriminator per class.
    MultiHead,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SourceOnly,
        Method::Grl,
        Method::D3a,
        Method::Cd3a,
        Method::MultiHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SourceOnly => "source_only",
            Method::Grl => "grl",
            Method::D3a => "d3a",
            Method::Cd3a => "cd3a",
            Method::MultiHead => "multi_head",
        }
    }

    pub fn is_adversarial(self) -> bool {
        self != Method::SourceOnly
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?} (source_only|grl|d3a|cd3a|multi_head)"
                ))
            })
    }
}

/// When a fresh mask set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskResample {
    #[default]
    Batch,
    Epoch,
}

impl FromStr for MaskResample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(MaskResample::Batch),
            "epoch" => Ok(MaskResample::Epoch),
            _ => Err(Error::Config(format!("unknown mask resampling {s:?} (batch|epoch)"))),
        }
    }
}

impl fmt::Display for MaskResample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskResample::Batch => "batch",
            MaskResample::Epoch => "epoch",
        })
    }
}

/// Hidden layer widths; input and output widths come from the data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub feature_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            feature_hidden: vec![32, 16],
            disc_hidden: vec![16, 16],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptationConfig {
    pub method: Method,
    pub lambda: f64,
    pub dropout: f64,
    pub schedule: CurriculumSchedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub aggregation: Aggregation,
    pub mask_resample: MaskResample,
    pub architecture: Architecture,
}

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_DROPOUT: f64 = 0.5;
pub const DEFAULT_CURRICULUM_RATE: usize = 10;

impl AdaptationConfig {
    /// Defaults for `method` on a task with `classes` classes, made coherent with [`Self::normalize`].
    pub fn for_method(method: Method, classes: usize) -> Self {
        let mut cfg = AdaptationConfig {
            method,
            lambda: DEFAULT_LAMBDA,
            dropout: DEFAULT_DROPOUT,
            schedule: CurriculumSchedule::Curriculum {
                rate: DEFAULT_CURRICULUM_RATE,
                max_samples: 2 * classes,
            },
            epochs: 100,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.0,
            seed: 0,
            aggregation: Aggregation::Sum,
            mask_resample: MaskResample::Batch,
            architecture: Architecture::default(),
        };
        cfg.normalize(classes);
        cfg
    }

    /// Forces the method-specific settings: GRL and multi-head use no dropout, a single
    /// pass per discriminator, and D3A uses a fixed sample count.
    pub fn normalize(&mut self, classes: usize) {
        match self.method {
            Method::Grl => {
                self.dropout = 0.0;
                self.schedule = CurriculumSchedule::Fixed(1);
            }
            Method::MultiHead => {
                self.dropout = 0.0;
                self.schedule = CurriculumSchedule::Fixed(classes);
            }
            Method::D3a => {
                if let CurriculumSchedule::Curriculum { max_samples, .. } = self.schedule {
                    self.schedule = CurriculumSchedule::Fixed(max_samples);
                }
            }
            Method::Cd3a => {
                if let CurriculumSchedule::Fixed(k) = self.schedule {
                    self.schedule = CurriculumSchedule::Curriculum {
                        rate: DEFAULT_CURRICULUM_RATE,
                        max_samples: k,
                    };
                }
            }
            Method::SourceOnly => {}
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Parameter(format!(
                "dropout rate must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        self.schedule.validate()?;
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be positive".into()));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "batch size must be a positive even number, got {}",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!(
                "need lr > 0 and momentum in [0, 1), got {} and {}",
                self.learning_rate, self.momentum
            )));
        }
        if self.architecture.feature_hidden.is_empty() || self.architecture.feature_hidden.contains(&0) {
            return Err(Error::Spec("feature extractor needs positive hidden widths".into()));
        }
        if self.architecture.disc_hidden.contains(&0) {
            return Err(Error::Spec("discriminator widths must be positive".into()));
        }
        let incoherent = |what: &str| {
            Err(Error::Parameter(format!("method {} requires {what}", self.method)))
        };
        match self.method {
            Method::Grl if self.dropout != 0.0 || self.schedule != CurriculumSchedule::Fixed(1) => {
                incoherent("dropout 0 and a fixed single discriminator")
            }
            Method::MultiHead
                if self.dropout != 0.0 || !matches!(self.schedule, CurriculumSchedule::Fixed(_)) =>
            {
                incoherent("dropout 0 and a fixed head count")
            }
            Method::D3a if !matches!(self.schedule, CurriculumSchedule::Fixed(_)) => {
                incoherent("a fixed sample count")
            }
            Method::Cd3a if !matches!(self.schedule, CurriculumSchedule::Curriculum { .. }) => {
                incoherent("a curriculum schedule")
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("mada".parse::<Method>().is_err());
    }

    #[test]
    fn defaults_follow_method() {
        let cd3a = AdaptationConfig::for_method(Method::Cd3a, 2);
        assert_eq!(cd3a.lambda, 0.5);
        assert_eq!(cd3a.dropout, 0.5);
        assert_eq!(cd3a.schedule, CurriculumSchedule::Curriculum { rate: 10, max_samples: 4 });
        cd3a.validate().unwrap();

        let grl = AdaptationConfig::for_method(Method::Grl, 2);
        assert_eq!((grl.dropout, grl.schedule), (0.0, CurriculumSchedule::Fixed(1)));
        let mh = AdaptationConfig::for_method(Method::MultiHead, 12);
        assert_eq!(mh.schedule, CurriculumSchedule::Fixed(12));
        mh.validate().unwrap();

        let mut bad = AdaptationConfig::for_method(Method::Grl, 2);
        bad.dropout = 0.5;
        assert!(bad.validate().is_err());
        bad = AdaptationConfig::for_method(Method::Cd3a, 2);
        bad.lambda = -0.5;
        assert!(matches!(bad.validate(), Err(Error::Parameter(_))));
    }
}
