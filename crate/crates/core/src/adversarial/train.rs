use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adversarial::{
    curriculum_k, discriminator_forward_k, joint_loss, sample_masks, AdaptationConfig,
    Architecture, MaskResample, MaskSet, Method,
};
use crate::autodiff::{Tape, Tensor};
use crate::data::{batch_iter, DomainDataset};
use crate::error::{Error, Result};
use crate::eval::{accuracy, Classify, MetricsRecord};
use crate::nn::{Head, Mlp, MlpSpec, SgdState};

/// Feature extractor, classifier and the adversarial discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptModel {
    pub feature: Mlp<f64>,
    pub classifier: Mlp<f64>,
    /// Empty for source-only, one per class for multi-head, otherwise one weight set.
    pub discriminators: Vec<Mlp<f64>>,
}

/// Network shapes for a task with `input_dim` features and `classes` classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpecs {
    pub feature: MlpSpec,
    pub classifier: MlpSpec,
    pub discriminator: MlpSpec,
}

impl ModelSpecs {
    pub fn new(arch: &Architecture, input_dim: usize, classes: usize) -> Result<Self> {
        let mut f = vec![input_dim];
        f.extend(&arch.feature_hidden);
        let embed = *f.last().expect("nonempty");
        let feature = MlpSpec::new(f, Head::None)?;
        let classifier = MlpSpec::new(vec![embed, classes], Head::Logits)?;
        let mut d = vec![embed];
        d.extend(&arch.disc_hidden);
        d.push(1);
        let discriminator = MlpSpec::new(d, Head::Sigmoid)?;
        Ok(ModelSpecs {
            feature,
            classifier,
            discriminator,
        })
    }
}

/// Number of discriminator weight sets `cfg` trains.
pub fn discriminator_count(cfg: &AdaptationConfig) -> usize {
    match cfg.method {
        Method::SourceOnly => 0,
        Method::MultiHead => cfg.schedule.max_samples(),
        _ => 1,
    }
}

impl AdaptModel {
    /// Initializes feature extractor, classifier, then discriminators, in that order.
    pub fn init<R: Rng + ?Sized>(specs: &ModelSpecs, discriminators: usize, rng: &mut R) -> Self {
        let feature = Mlp::init(&specs.feature, rng);
        let classifier = Mlp::init(&specs.classifier, rng);
        let discriminators = (0..discriminators)
            .map(|_| Mlp::init(&specs.discriminator, rng))
            .collect();
        AdaptModel {
            feature,
            classifier,
            discriminators,
        }
    }

    pub fn features(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        self.feature.predict(x)
    }

    /// Mean discriminator output over `features`, averaged across heads, without dropout.
    pub fn mean_disc_output(&self, features: &Tensor<f64>) -> Result<Option<f64>> {
        if self.discriminators.is_empty() {
            return Ok(None);
        }
        let mut total = 0.0;
        for d in &self.discriminators {
            total += d.predict(features)?.mean();
        }
        Ok(Some(total / self.discriminators.len() as f64))
    }
}

impl Classify for AdaptModel {
    fn logits(&self, x: &Tensor<f64>) -> Result<Tensor<f64>> {
        let f = self.feature.predict(x)?;
        self.classifier.predict(&f)
    }
}

/// Loss values of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLosses {
    pub classification: f64,
    pub domain: Option<f64>,
    pub per_discriminator: Vec<f64>,
    pub minimax: f64,
}

/// Parameter gradients of one batch, in each network's `w0, b0, ...` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub feature: Vec<Tensor<f64>>,
    pub classifier: Vec<Tensor<f64>>,
    pub discriminators: Vec<Vec<Tensor<f64>>>,
}

/// One forward and one reverse sweep over a balanced batch.
///
/// Source rows feed the classifier; source and target rows both pass the reversal layer
/// into the discriminators. `masks` is required for the dropout methods and ignored otherwise.
pub fn batch_gradients(
    model: &AdaptModel,
    cfg: &AdaptationConfig,
    x_source: &Tensor<f64>,
    source_labels: &[usize],
    x_target: &Tensor<f64>,
    masks: Option<&MaskSet<f64>>,
) -> Result<(BatchLosses, ModelGradients)> {
    let mut tape = Tape::new();
    let f = model.feature.bind(&mut tape);
    let c = model.classifier.bind(&mut tape);
    let discs: Vec<_> = model.discriminators.iter().map(|d| d.bind(&mut tape)).collect();

    let n_source = x_source.rows();
    let adversarial = cfg.method.is_adversarial();
    let x = if adversarial {
        Tensor::vstack(&[x_source, x_target])?
    } else {
        x_source.clone()
    };
    let n = x.rows();
    let xv = tape.leaf(x);
    let feats = f.forward(&mut tape, model.feature.spec(), xv, None)?;
    let src_feats = if adversarial {
        tape.slice_rows(feats, 0, n_source)?
    } else {
        feats
    };
    let logits = c.forward(&mut tape, model.classifier.spec(), src_feats, None)?;

    let domain_labels = Tensor::new(
        vec![n, 1],
        (0..n).map(|i| if i < n_source { 0.0 } else { 1.0 }).collect(),
    )?;
    let outputs = if adversarial {
        let rev = tape.grad_reverse(feats, cfg.lambda)?;
        let outs = match cfg.method {
            Method::MultiHead => discs
                .iter()
                .zip(&model.discriminators)
                .map(|(b, d)| b.forward(&mut tape, d.spec(), rev, None))
                .collect::<Result<Vec<_>>>()?,
            _ => {
                let masks = masks.ok_or_else(|| {
                    Error::Usage(format!("method {} needs a mask set", cfg.method))
                })?;
                let disc = &model.discriminators[0];
                discriminator_forward_k(&mut tape, &discs[0], disc.spec(), rev, masks)?
            }
        };
        Some(outs)
    } else {
        None
    };

    let loss = joint_loss(
        &mut tape,
        logits,
        source_labels,
        outputs.as_deref(),
        &domain_labels,
        cfg.lambda,
        cfg.aggregation,
    )?;
    let grads = tape.backward(loss.objective)?;

    let losses = BatchLosses {
        classification: tape.value(loss.classification).item(),
        domain: loss.domain.as_ref().map(|d| tape.value(d.total).item()),
        per_discriminator: loss
            .domain
            .as_ref()
            .map(|d| d.per_discriminator.iter().map(|&v| tape.value(v).item()).collect())
            .unwrap_or_default(),
        minimax: loss.minimax_value,
    };
    let gradients = ModelGradients {
        feature: f.gradients(&tape, &grads),
        classifier: c.gradients(&tape, &grads),
        discriminators: discs.iter().map(|d| d.gradients(&tape, &grads)).collect(),
    };
    Ok((losses, gradients))
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: AdaptModel,
    pub metrics: Vec<MetricsRecord>,
}

fn check_inputs(source: &DomainDataset, target: &DomainDataset) -> Result<usize> {
    let labels = source
        .labels
        .as_ref()
        .ok_or_else(|| Error::Usage(format!("source dataset {:?} has no labels", source.name)))?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::Usage("source and target must both be nonempty".into()));
    }
    if source.dim() != target.dim() {
        return Err(Error::dim(
            "source/target features",
            source.features.shape(),
            target.features.shape(),
        ));
    }
    Ok(labels.iter().max().map_or(1, |&m| m + 1))
}

/// Trains `cfg.method` on labeled `source` and unlabeled `target`.
///
/// Target labels, when present, are only read by the per-epoch accuracy evaluation.
/// Randomness comes from one generator seeded with `cfg.seed`, consumed by
/// initialization, then per epoch by the batch shuffle and the mask draws.
pub fn train_adaptation(
    cfg: &AdaptationConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainOutput> {
    let classes = check_inputs(source, target)?;
    cfg.validate()?;
    let source_labels = source.labels.as_ref().expect("checked");
    let specs = ModelSpecs::new(&cfg.architecture, source.dim(), classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AdaptModel::init(&specs, discriminator_count(cfg), &mut rng);
    let mut opt_f = SgdState::for_mlp(cfg.learning_rate, cfg.momentum, &model.feature)?;
    let mut opt_c = SgdState::for_mlp(cfg.learning_rate, cfg.momentum, &model.classifier)?;
    let mut opt_d = model
        .discriminators
        .iter()
        .map(|d| SgdState::for_mlp(cfg.learning_rate, cfg.momentum, d))
        .collect::<Result<Vec<_>>>()?;
    let uses_masks = matches!(cfg.method, Method::Grl | Method::D3a | Method::Cd3a);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let k = match cfg.method {
            Method::SourceOnly => 0,
            Method::MultiHead => model.discriminators.len(),
            _ => curriculum_k(&cfg.schedule, epoch),
        };
        let batches = batch_iter(source, target, cfg.batch_size, &mut rng)?;
        if batches.is_empty() {
            return Err(Error::Usage(format!(
                "batch size {} leaves no full batch for {} source / {} target rows",
                cfg.batch_size,
                source.len(),
                target.len()
            )));
        }
        let mut epoch_masks = match (uses_masks, cfg.mask_resample) {
            (true, MaskResample::Epoch) => {
                Some(sample_masks(&specs.discriminator, k, cfg.dropout, &mut rng)?)
            }
            _ => None,
        };

        let mut sum_lc = 0.0;
        let mut sum_ld = 0.0;
        let mut sum_per = vec![0.0; k];
        for batch in &batches {
            let masks = match (uses_masks, cfg.mask_resample) {
                (true, MaskResample::Batch) => {
                    Some(sample_masks(&specs.discriminator, k, cfg.dropout, &mut rng)?)
                }
                _ => epoch_masks.take(),
            };
            let xs = source.features.select_rows(&batch.source);
            let ys: Vec<usize> = batch.source.iter().map(|&i| source_labels[i]).collect();
            let xt = target.features.select_rows(&batch.target);
            let (losses, grads) = batch_gradients(&model, cfg, &xs, &ys, &xt, masks.as_ref())?;
            if cfg.mask_resample == MaskResample::Epoch {
                epoch_masks = masks;
            }

            opt_f.step(model.feature.parameters_mut(), &grads.feature)?;
            opt_c.step(model.classifier.parameters_mut(), &grads.classifier)?;
            for ((d, opt), g) in model
                .discriminators
                .iter_mut()
                .zip(&mut opt_d)
                .zip(&grads.discriminators)
            {
                opt.step(d.parameters_mut(), g)?;
            }

            sum_lc += losses.classification;
            sum_ld += losses.domain.unwrap_or(0.0);
            for (s, v) in sum_per.iter_mut().zip(&losses.per_discriminator) {
                *s += v;
            }
        }

        let nb = batches.len() as f64;
        let src_feats = model.features(&source.features)?;
        let tgt_feats = model.features(&target.features)?;
        metrics.push(MetricsRecord {
            epoch,
            k,
            classification_loss: sum_lc / nb,
            domain_loss: cfg.method.is_adversarial().then_some(sum_ld / nb),
            domain_loss_per_discriminator: sum_per.into_iter().map(|s| s / nb).collect(),
            source_accuracy: accuracy(&model, source)?,
            target_accuracy: match target.labels {
                Some(_) => Some(accuracy(&model, target)?),
                None => None,
            },
            mean_disc_source: model.mean_disc_output(&src_feats)?,
            mean_disc_target: model.mean_disc_output(&tgt_feats)?,
        });
    }
    Ok(TrainOutput { model, metrics })
}

/// One independent discriminator per source class, each receiving the full reversed gradient
/// without any weighting by classifier predictions.
pub fn multi_head_baseline(
    cfg: &AdaptationConfig,
    source: &DomainDataset,
    target: &DomainDataset,
) -> Result<TrainOutput> {
    let classes = check_inputs(source, target)?;
    let mut cfg = cfg.clone();
    cfg.method = Method::MultiHead;
    cfg.normalize(classes);
    train_adaptation(&cfg, source, target)
}
