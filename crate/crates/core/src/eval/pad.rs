use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{Head, Mlp, MlpSpec, SgdState};

/// Logistic domain probe used for the proxy A-distance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 200,
            learning_rate: 0.1,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// `2 (1 - 2 eps)` with the error clamped to at most 0.5.
pub fn proxy_a_distance_from_error(error: f64) -> f64 {
    let eps = error.clamp(0.0, 0.5);
    2.0 * (1.0 - 2.0 * eps)
}

/// Proxy A-distance between two feature sets.
///
/// Each domain is split in half (seeded); a logistic probe learns to tell the
/// domains apart on the training halves and its error on the held-out halves is
/// turned into a distance in `[0, 2]`.
pub fn proxy_a_distance(source: &Tensor<f64>, target: &Tensor<f64>, cfg: &ProbeConfig) -> Result<f64> {
    Ok(proxy_a_distance_from_error(probe_error(source, target, cfg)?))
}

/// Held-out error of the logistic domain probe.
pub fn probe_error(source: &Tensor<f64>, target: &Tensor<f64>, cfg: &ProbeConfig) -> Result<f64> {
    if !source.is_matrix() || !target.is_matrix() || source.cols() != target.cols() {
        return Err(Error::dim("proxy_a_distance", source.shape(), target.shape()));
    }
    if source.rows() < 2 || target.rows() < 2 {
        return Err(Error::Usage("proxy A-distance needs at least 2 rows per domain".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::Parameter("probe needs positive epochs, batch size and lr".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let split = |n: usize, rng: &mut ChaCha8Rng| {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(rng);
        let test = idx.split_off(n / 2);
        (idx, test)
    };
    let (src_train, src_test) = split(source.rows(), &mut rng);
    let (tgt_train, tgt_test) = split(target.rows(), &mut rng);

    let train_x = Tensor::vstack(&[&source.select_rows(&src_train), &target.select_rows(&tgt_train)])?;
    let train_y: Vec<f64> = std::iter::repeat_n(0.0, src_train.len())
        .chain(std::iter::repeat_n(1.0, tgt_train.len()))
        .collect();
    let test_x = Tensor::vstack(&[&source.select_rows(&src_test), &target.select_rows(&tgt_test)])?;
    let test_y: Vec<f64> = std::iter::repeat_n(0.0, src_test.len())
        .chain(std::iter::repeat_n(1.0, tgt_test.len()))
        .collect();

    let (mean, std) = column_stats(&train_x);
    let train_x = standardize(&train_x, &mean, &std);
    let test_x = standardize(&test_x, &mean, &std);

    let spec = MlpSpec::new(vec![train_x.cols(), 1], Head::Sigmoid)?;
    let mut probe: Mlp<f64> = Mlp::init(&spec, &mut rng);
    let mut opt = SgdState::for_mlp(cfg.learning_rate, 0.0, &probe)?;
    let mut order: Vec<usize> = (0..train_x.rows()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = train_x.select_rows(chunk);
            let y = Tensor::new(vec![chunk.len(), 1], chunk.iter().map(|&i| train_y[i]).collect())?;
            let mut tape = Tape::new();
            let bound = probe.bind(&mut tape);
            let xv = tape.leaf(x);
            let p = bound.forward(&mut tape, &spec, xv, None)?;
            let loss = tape.binary_cross_entropy(p, &y)?;
            let grads = tape.backward(loss)?;
            let g = bound.gradients(&tape, &grads);
            opt.step(probe.parameters_mut(), &g)?;
        }
    }

    let pred = probe.predict(&test_x)?;
    let wrong = pred
        .data()
        .iter()
        .zip(&test_y)
        .filter(|(&p, &y)| (p >= 0.5) != (y == 1.0))
        .count();
    Ok(wrong as f64 / test_y.len() as f64)
}

fn column_stats(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let (n, w) = (x.rows() as f64, x.cols());
    let mut mean = vec![0.0; w];
    let mut sq = vec![0.0; w];
    for r in 0..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            mean[c] += v / n;
            sq[c] += v * v / n;
        }
    }
    let std = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| {
            let var = s - m * m;
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn standardize(x: &Tensor<f64>, mean: &[f64], std: &[f64]) -> Tensor<f64> {
    let w = x.cols();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let c = i % w;
        *v = (*v - mean[c]) / std[c];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian_cloud(n: usize, shift: f64, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * 3)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                z + if i % 3 == 0 { shift } else { 0.0 }
            })
            .collect();
        Tensor::new(vec![n, 3], data).unwrap()
    }

    #[test]
    fn formula_endpoints() {
        assert_eq!(proxy_a_distance_from_error(0.5), 0.0);
        assert_eq!(proxy_a_distance_from_error(0.0), 2.0);
        assert_eq!(proxy_a_distance_from_error(0.8), 0.0);
    }

    #[test]
    fn identical_sets_are_close() {
        let a = gaussian_cloud(400, 0.0, 1);
        let d = proxy_a_distance(&a, &a.clone(), &ProbeConfig::default()).unwrap();
        assert!(d <= 0.2, "{d}");
    }

    #[test]
    fn separated_sets_are_far() {
        let a = gaussian_cloud(200, 0.0, 1);
        let b = gaussian_cloud(200, 12.0, 2);
        let d = proxy_a_distance(&a, &b, &ProbeConfig::default()).unwrap();
        assert_eq!(d, 2.0);
    }

    #[test]
    fn width_mismatch() {
        let a = gaussian_cloud(10, 0.0, 1);
        let b = Tensor::zeros(&[10, 2]);
        assert!(matches!(
            proxy_a_distance(&a, &b, &ProbeConfig::default()),
            Err(Error::Dimension { .. })
        ));
    }
}
