use crate::error::{Error, Result};

/// Number of Monte-Carlo sampled discriminators used at each epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurriculumSchedule {
    /// `K(epoch) = min(1 + epoch / rate, max_samples)`
    Curriculum { rate: usize, max_samples: usize },
    Fixed(usize),
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            CurriculumSchedule::Curriculum { rate, max_samples } if rate == 0 || max_samples == 0 => {
                Err(Error::Parameter(format!(
                    "curriculum rate and max samples must be positive, got {rate} and {max_samples}"
                )))
            }
            CurriculumSchedule::Fixed(0) => {
                Err(Error::Parameter("fixed sample count must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn max_samples(&self) -> usize {
        match *self {
            CurriculumSchedule::Curriculum { max_samples, .. } => max_samples,
            CurriculumSchedule::Fixed(k) => k,
        }
    }
}

pub fn curriculum_k(schedule: &CurriculumSchedule, epoch: usize) -> usize {
    match *schedule {
        CurriculumSchedule::Curriculum { rate, max_samples } => {
            (1 + epoch / rate.max(1)).min(max_samples)
        }
        CurriculumSchedule::Fixed(k) => k,
    }
}
