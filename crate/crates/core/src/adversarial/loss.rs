use std::str::FromStr;

use crate::adversarial::MaskSet;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{BoundMlp, Mlp, MlpSpec};
use crate::scalar::Scalar;

/// How the K per-discriminator losses combine into the domain loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::Config(format!("unknown aggregation {s:?} (sum|mean)"))),
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        })
    }
}

/// Runs every sampled discriminator of `masks` over the same features.
pub fn discriminator_forward_k<S: Scalar>(
    tape: &mut Tape<S>,
    disc: &BoundMlp,
    spec: &MlpSpec,
    features: Var,
    masks: &MaskSet<S>,
) -> Result<Vec<Var>> {
    (0..masks.len())
        .map(|j| disc.forward(tape, spec, features, masks.hidden_dropout(j)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DomainLoss {
    pub total: Var,
    pub per_discriminator: Vec<Var>,
}

/// Binary cross entropy of each discriminator against the domain labels, then summed or averaged.
pub fn domain_loss<S: Scalar>(
    tape: &mut Tape<S>,
    outputs: &[Var],
    domain_labels: &Tensor<S>,
    aggregation: Aggregation,
) -> Result<DomainLoss> {
    if outputs.is_empty() {
        return Err(Error::Usage("domain loss needs at least one discriminator output".into()));
    }
    let per_discriminator = outputs
        .iter()
        .map(|&o| tape.binary_cross_entropy(o, domain_labels))
        .collect::<Result<Vec<_>>>()?;
    let mut total = per_discriminator[0];
    for &l in &per_discriminator[1..] {
        total = tape.add(total, l)?;
    }
    if aggregation == Aggregation::Mean && per_discriminator.len() > 1 {
        let inv = S::one() / S::from_usize(per_discriminator.len()).expect("count fits");
        total = tape.scale(total, inv);
    }
    Ok(DomainLoss {
        total,
        per_discriminator,
    })
}

#[derive(Debug, Clone)]
pub struct JointLoss<S> {
    /// `L_c + L_d`: the reverse sweep root. The discriminators descend on `L_d`
    /// while the reversal layer in front of them hands the feature extractor `-lambda * dL_d/df`.
    pub objective: Var,
    pub classification: Var,
    pub domain: Option<DomainLoss>,
    /// Value of the minimax objective `L_c - lambda * L_d`.
    pub minimax_value: S,
}

/// Combines the source classification loss with the domain loss.
///
/// `disc_outputs` must already sit behind a gradient reversal layer built with the same `lambda`;
/// pass `None` for source-only training.
pub fn joint_loss<S: Scalar>(
    tape: &mut Tape<S>,
    class_logits: Var,
    source_labels: &[usize],
    disc_outputs: Option<&[Var]>,
    domain_labels: &Tensor<S>,
    lambda: S,
    aggregation: Aggregation,
) -> Result<JointLoss<S>> {
    if !(lambda >= S::zero()) {
        return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
    }
    if source_labels.is_empty() {
        return Err(Error::Usage("source batch is empty".into()));
    }
    let classification = tape.softmax_cross_entropy(class_logits, source_labels)?;
    let lc = tape.value(classification).item();
    let Some(outputs) = disc_outputs else {
        return Ok(JointLoss {
            objective: classification,
            classification,
            domain: None,
            minimax_value: lc,
        });
    };
    let domain = domain_loss(tape, outputs, domain_labels, aggregation)?;
    let ld = tape.value(domain.total).item();
    let objective = tape.add(classification, domain.total)?;
    Ok(JointLoss {
        objective,
        classification,
        domain: Some(domain),
        minimax_value: lc - lambda * ld,
    })
}

/// Gradient of the domain loss with respect to the discriminator input features.
///
/// With `lambda = Some(l)` the features pass through a reversal layer first, which is
/// what the feature extractor receives during training; `None` gives the raw gradient.
pub fn domain_gradient_at_features<S: Scalar>(
    disc: &Mlp<S>,
    features: &Tensor<S>,
    masks: &MaskSet<S>,
    domain_labels: &Tensor<S>,
    lambda: Option<S>,
    aggregation: Aggregation,
) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape);
    let f = tape.leaf(features.clone());
    let input = match lambda {
        Some(l) => tape.grad_reverse(f, l)?,
        None => f,
    };
    let outputs = discriminator_forward_k(&mut tape, &bound, disc.spec(), input, masks)?;
    let loss = domain_loss(&mut tape, &outputs, domain_labels, aggregation)?;
    let grads = tape.backward(loss.total)?;
    Ok(grads.get_or_zeros(f, features.shape()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adversarial::sample_masks;
    use crate::nn::Head;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn disc_spec() -> MlpSpec {
        MlpSpec::new(vec![3, 6, 6, 1], Head::Sigmoid).unwrap()
    }

    fn feats() -> Tensor<f64> {
        Tensor::from_f64(vec![4, 3], &[0.2, -1.0, 0.5, 1.1, 0.3, -0.7, -0.4, 0.9, 1.5, 0.0, -0.2, 0.8]).unwrap()
    }

    fn domain_targets() -> Tensor<f64> {
        Tensor::from_f64(vec![4, 1], &[0., 0., 1., 1.]).unwrap()
    }

    #[test]
    fn single_sample_without_dropout_is_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let disc: Mlp<f64> = Mlp::init(&disc_spec(), &mut rng);
        let masks = sample_masks(&disc_spec(), 1, 0.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape);
        let f = tape.leaf(feats());
        let outs = discriminator_forward_k(&mut tape, &bound, disc.spec(), f, &masks).unwrap();
        assert_eq!(outs.len(), 1);
        assert_eq!(tape.value(outs[0]), &disc.predict(&feats()).unwrap());
    }

    #[test]
    fn zero_discriminator_outputs_half_for_every_sample() {
        let disc: Mlp<f64> = Mlp::zeros(&disc_spec());
        let masks = sample_masks(&disc_spec(), 5, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape);
        let f = tape.leaf(feats());
        let outs = discriminator_forward_k(&mut tape, &bound, disc.spec(), f, &masks).unwrap();
        assert_eq!(outs.len(), 5);
        for o in outs {
            assert!(tape.value(o).data().iter().all(|&p| p == 0.5));
        }
    }

    #[test]
    fn domain_loss_sum_and_mean() {
        let ln2 = std::f64::consts::LN_2;
        let mut tape = Tape::new();
        let half = Tensor::full(&[4, 1], 0.5);
        let outs: Vec<Var> = (0..3).map(|_| tape.leaf(half.clone())).collect();
        let sum = domain_loss(&mut tape, &outs, &domain_targets(), Aggregation::Sum).unwrap();
        assert!((tape.value(sum.total).item() - 3.0 * ln2).abs() < 1e-12);
        let mean = domain_loss(&mut tape, &outs, &domain_targets(), Aggregation::Mean).unwrap();
        assert!((tape.value(mean.total).item() - ln2).abs() < 1e-12);

        let perfect: Vec<Var> = (0..3).map(|_| tape.leaf(domain_targets())).collect();
        let l = domain_loss(&mut tape, &perfect, &domain_targets(), Aggregation::Sum).unwrap();
        assert!(tape.value(l.total).item() <= 3.0 * 1.7e-7);

        assert!(matches!(
            domain_loss(&mut tape, &[], &domain_targets(), Aggregation::Sum),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn single_output_equals_plain_bce() {
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::from_f64(vec![4, 1], &[0.1, 0.4, 0.7, 0.2]).unwrap());
        let bce = tape.binary_cross_entropy(p, &domain_targets()).unwrap();
        let l = domain_loss(&mut tape, &[p], &domain_targets(), Aggregation::Sum).unwrap();
        assert_eq!(tape.value(l.total).item(), tape.value(bce).item());
    }

    #[test]
    fn source_only_joint_loss_is_classification() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::from_f64(vec![2, 2], &[0.3, -0.1, 0.2, 0.9]).unwrap());
        let j = joint_loss(&mut tape, logits, &[0, 1], None, &domain_targets(), 0.5, Aggregation::Sum).unwrap();
        assert!(j.domain.is_none());
        assert_eq!(j.objective, j.classification);
        assert_eq!(j.minimax_value, tape.value(j.classification).item());
        assert!(joint_loss(&mut tape, logits, &[0, 1], None, &domain_targets(), -1.0, Aggregation::Sum).is_err());
    }

    #[test]
    fn zero_lambda_blocks_domain_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let disc: Mlp<f64> = Mlp::init(&disc_spec(), &mut rng);
        let masks = sample_masks(&disc_spec(), 3, 0.5, &mut rng).unwrap();
        let g = domain_gradient_at_features(&disc, &feats(), &masks, &domain_targets(), Some(0.0), Aggregation::Sum).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reversal_negates_and_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let disc: Mlp<f64> = Mlp::init(&disc_spec(), &mut rng);
        let masks = sample_masks(&disc_spec(), 2, 0.5, &mut rng).unwrap();
        let raw = domain_gradient_at_features(&disc, &feats(), &masks, &domain_targets(), None, Aggregation::Sum).unwrap();
        let rev = domain_gradient_at_features(&disc, &feats(), &masks, &domain_targets(), Some(0.5), Aggregation::Sum).unwrap();
        for (r, w) in rev.data().iter().zip(raw.data()) {
            assert!((r + 0.5 * w).abs() <= 1e-12);
        }
    }

    #[test]
    fn sum_is_k_times_mean_for_identical_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let disc: Mlp<f64> = Mlp::init(&disc_spec(), &mut rng);
        let one = sample_masks(&disc_spec(), 1, 0.5, &mut rng).unwrap();
        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape);
        let f = tape.leaf(feats());
        let out = discriminator_forward_k(&mut tape, &bound, disc.spec(), f, &one).unwrap()[0];
        let outs = vec![out; 4];
        let s = domain_loss(&mut tape, &outs, &domain_targets(), Aggregation::Sum).unwrap();
        let m = domain_loss(&mut tape, &outs, &domain_targets(), Aggregation::Mean).unwrap();
        assert!((tape.value(s.total).item() - 4.0 * tape.value(m.total).item()).abs() <= 1e-12);
    }
}
