use rand::Rng;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{HiddenDropout, MlpSpec};
use crate::scalar::Scalar;

/// K Bernoulli dropout masks over one discriminator's hidden layers.
///
/// Member `j` is the j-th Monte-Carlo sampled discriminator; its masks are
/// shared by every row of the batch it judges.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet<S> {
    dropout_rate: f64,
    members: Vec<Vec<Tensor<S>>>,
}

impl<S: Scalar> MaskSet<S> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn keep_prob(&self) -> S {
        S::lit(1.0 - self.dropout_rate)
    }

    /// Masks of member `j`, one `[1, width]` row per hidden layer.
    pub fn member(&self, j: usize) -> &[Tensor<S>] {
        &self.members[j]
    }

    pub fn members(&self) -> impl Iterator<Item = &[Tensor<S>]> {
        self.members.iter().map(Vec::as_slice)
    }

    /// Dropout argument for member `j`; `None` when nothing is dropped.
    pub fn hidden_dropout(&self, j: usize) -> Option<HiddenDropout<'_, S>> {
        (self.dropout_rate > 0.0).then(|| HiddenDropout {
            masks: &self.members[j],
            keep_prob: self.keep_prob(),
        })
    }

    /// Fraction of kept units over all members and layers.
    pub fn kept_fraction(&self) -> f64 {
        let (kept, total) = self
            .members
            .iter()
            .flatten()
            .fold((0.0, 0usize), |(k, n), m| (k + m.sum().as_f64(), n + m.numel()));
        kept / total.max(1) as f64
    }
}

/// Draws `k` independent Bernoulli(1 - d) mask sets for the hidden layers of `disc_spec`.
///
/// With `d == 0` every mask is all ones and the generator is left untouched.
pub fn sample_masks<S: Scalar, R: Rng + ?Sized>(
    disc_spec: &MlpSpec,
    k: usize,
    dropout_rate: f64,
    rng: &mut R,
) -> Result<MaskSet<S>> {
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Parameter(format!(
            "dropout rate must lie in [0, 1), got {dropout_rate}"
        )));
    }
    if k == 0 {
        return Err(Error::Parameter("need at least one sampled discriminator".into()));
    }
    let keep = 1.0 - dropout_rate;
    let members = (0..k)
        .map(|_| {
            disc_spec
                .hidden_widths()
                .iter()
                .map(|&w| {
                    if dropout_rate == 0.0 {
                        return Tensor::ones(&[1, w]);
                    }
                    let bits = (0..w)
                        .map(|_| if rng.random_bool(keep) { S::one() } else { S::zero() })
                        .collect();
                    Tensor::new(vec![1, w], bits).expect("mask shape")
                })
                .collect()
        })
        .collect();
    Ok(MaskSet {
        dropout_rate,
        members,
    })
}
