//! Labeled source / unlabeled target datasets, synthetic shift generators and batching.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    /// Discriminator target: source is 0, target is 1.
    pub fn label(self) -> f64 {
        match self {
            Domain::Source => 0.0,
            Domain::Target => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: Tensor<f64>,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub name: String,
}

impl DomainDataset {
    pub fn new(
        features: Tensor<f64>,
        labels: Option<Vec<usize>>,
        domain: Domain,
        name: impl Into<String>,
    ) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::dim("dataset features", features.shape(), &[0, 0]));
        }
        if let Some(l) = &labels {
            if l.len() != features.rows() {
                return Err(Error::dim("dataset labels", features.shape(), &[l.len()]));
            }
        }
        if !features.all_finite() {
            return Err(Error::Parameter("dataset features must be finite".into()));
        }
        Ok(DomainDataset {
            features,
            labels,
            domain,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Number of classes implied by the largest label.
    pub fn num_classes(&self) -> Option<usize> {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max().map(|&m| m + 1))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes().unwrap_or(0)];
        for &l in self.labels.iter().flatten() {
            counts[l] += 1;
        }
        counts
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    fn subset(&self, idx: &[usize]) -> Self {
        DomainDataset {
            features: self.features.select_rows(idx),
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            domain: self.domain,
            name: self.name.clone(),
        }
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn check_noise(noise_sigma: f64) -> Result<()> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise sigma must be >= 0, got {noise_sigma}"
        )));
    }
    Ok(())
}

/// Two interleaved half circles of radius 1: class 0 is the upper arc centered at the origin,
/// class 1 the lower arc centered at `(1, 0.5)`.
pub fn gen_two_moons(n_per_class: usize, noise_sigma: f64, seed: u64) -> Result<DomainDataset> {
    if n_per_class == 0 {
        return Err(Error::Parameter("two moons needs at least one point per class".into()));
    }
    check_noise(noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = if n_per_class > 1 {
        PI / (n_per_class - 1) as f64
    } else {
        0.0
    };
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for class in 0..2 {
        for i in 0..n_per_class {
            let t = step * i as f64;
            let (x, y) = if class == 0 {
                (t.cos(), t.sin())
            } else {
                (1.0 - t.cos(), 0.5 - t.sin())
            };
            data.push(x + noise_sigma * gaussian(&mut rng));
            data.push(y + noise_sigma * gaussian(&mut rng));
            labels.push(class);
        }
    }
    DomainDataset::new(
        Tensor::new(vec![2 * n_per_class, 2], data)?,
        Some(labels),
        Domain::Source,
        "two_moons",
    )
}

/// Centers of `classes` clusters spaced evenly on a circle of radius `separation`.
pub fn blob_centers(classes: usize, separation: f64) -> Vec<[f64; 2]> {
    (0..classes)
        .map(|c| {
            let a = 2.0 * PI * c as f64 / classes as f64;
            [separation * a.cos(), separation * a.sin()]
        })
        .collect()
}

pub fn gen_blobs(
    n_per_class: usize,
    classes: usize,
    separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if classes < 2 {
        return Err(Error::Parameter(format!("blobs need at least 2 classes, got {classes}")));
    }
    if n_per_class == 0 {
        return Err(Error::Parameter("blobs need at least one point per class".into()));
    }
    check_noise(noise_sigma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n_per_class * classes);
    let mut labels = Vec::with_capacity(n_per_class * classes);
    for (c, center) in blob_centers(classes, separation).into_iter().enumerate() {
        for _ in 0..n_per_class {
            data.push(center[0] + noise_sigma * gaussian(&mut rng));
            data.push(center[1] + noise_sigma * gaussian(&mut rng));
            labels.push(c);
        }
    }
    DomainDataset::new(
        Tensor::new(vec![n_per_class * classes, 2], data)?,
        Some(labels),
        Domain::Source,
        "blobs",
    )
}

/// Rigid transform plus isotropic Gaussian noise.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShiftSpec {
    /// Counter-clockwise rotation of the first two feature dimensions, about the origin.
    pub rotation_degrees: f64,
    /// Added to the leading feature dimensions; may be shorter than the feature width.
    pub translation: Vec<f64>,
    pub noise_sigma: f64,
}

/// Builds a target-domain copy of `ds` under `spec`. Labels are kept.
pub fn apply_shift(ds: &DomainDataset, spec: &ShiftSpec, seed: u64) -> Result<DomainDataset> {
    check_noise(spec.noise_sigma)?;
    let width = ds.dim();
    if spec.rotation_degrees != 0.0 && width < 2 {
        return Err(Error::Parameter(format!(
            "rotation needs at least 2 feature dims, got {width}"
        )));
    }
    if spec.translation.len() > width {
        return Err(Error::dim("translation", &[width], &[spec.translation.len()]));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = spec.rotation_degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    let mut features = ds.features.clone();
    for row in features.data_mut().chunks_mut(width) {
        if spec.rotation_degrees != 0.0 {
            let (x, y) = (row[0], row[1]);
            row[0] = cos * x - sin * y;
            row[1] = sin * x + cos * y;
        }
        for (v, t) in row.iter_mut().zip(&spec.translation) {
            *v += t;
        }
        if spec.noise_sigma > 0.0 {
            for v in row.iter_mut() {
                *v += spec.noise_sigma * gaussian(&mut rng);
            }
        }
    }
    DomainDataset::new(features, ds.labels.clone(), Domain::Target, ds.name.clone())
}

/// Keeps `ceil(fraction * n_c)` uniformly chosen rows of every class `c`.
pub fn reduce_source(ds: &DomainDataset, fraction: f64, seed: u64) -> Result<DomainDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "source fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let labels = ds
        .labels
        .as_ref()
        .ok_or_else(|| Error::Usage("reduce_source needs a labeled dataset".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for class in 0..ds.num_classes().unwrap_or(0) {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let n_keep = (fraction * members.len() as f64).ceil() as usize;
        members.shuffle(&mut rng);
        keep.extend_from_slice(&members[..n_keep.min(members.len())]);
    }
    keep.sort_unstable();
    Ok(ds.subset(&keep))
}

/// Reads a feature CSV: optional leading `label` column, then `f0..f{F-1}`.
pub fn load_features_csv(path: &Path, domain: Domain) -> Result<DomainDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let fmt = |line: u64, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let header = rdr.headers()?.clone();
    let labeled = header.get(0) == Some("label");
    let offset = usize::from(labeled);
    let width = header.len() - offset;
    if width == 0 {
        return Err(fmt(1, "no feature columns".into()));
    }
    for (i, name) in header.iter().skip(offset).enumerate() {
        if name != format!("f{i}") {
            return Err(fmt(1, format!("unknown header column {name:?}, expected \"f{i}\"")));
        }
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(fmt(
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        if labeled {
            let l: usize = rec[0]
                .parse()
                .map_err(|_| fmt(line, format!("label {:?} is not a nonnegative integer", &rec[0])))?;
            labels.push(l);
        }
        for (i, field) in rec.iter().skip(offset).enumerate() {
            let v: f64 = field
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| fmt(line, format!("f{i} value {field:?} is not a finite number")))?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Usage(format!("{}: no data rows", path.display())));
    }
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    DomainDataset::new(
        Tensor::new(vec![rows, width], data)?,
        labeled.then_some(labels),
        domain,
        name,
    )
}

/// Writes features in the same layout [`load_features_csv`] reads.
pub fn write_features_csv<W: std::io::Write>(
    out: W,
    features: &Tensor<f64>,
    labels: Option<&[usize]>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = labels.iter().map(|_| "label".to_string()).collect();
    header.extend((0..features.cols()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for r in 0..features.rows() {
        let mut rec: Vec<String> = labels.iter().map(|l| l[r].to_string()).collect();
        rec.extend(features.row(r).iter().map(|&v| crate::fmt_sig(v)));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<features>", e))?;
    Ok(())
}

/// Per-feature z-scoring with statistics from the source domain only.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(source: &DomainDataset) -> Self {
        let (n, w) = (source.len() as f64, source.dim());
        let mut mean = vec![0.0; w];
        for r in 0..source.len() {
            for (m, &v) in mean.iter_mut().zip(source.features.row(r)) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; w];
        for r in 0..source.len() {
            for ((s, &v), m) in var.iter_mut().zip(source.features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Normalizer { mean, std }
    }

    pub fn apply(&self, ds: &DomainDataset) -> Result<DomainDataset> {
        if ds.dim() != self.mean.len() {
            return Err(Error::dim("normalize", &[self.mean.len()], &[ds.dim()]));
        }
        let w = ds.dim();
        let mut out = ds.clone();
        for row in out.features.data_mut().chunks_mut(w) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }
}

/// Row indices of one balanced batch: equal source and target counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Shuffles both domains independently and cuts them into balanced batches.
///
/// The epoch length follows the larger domain; the smaller one is reshuffled and
/// cycled as often as needed. Trailing rows that do not fill a batch are dropped.
pub fn batch_iter<R: Rng + ?Sized>(
    source: &DomainDataset,
    target: &DomainDataset,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Batch>> {
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "batch size must be a positive even number, got {batch_size}"
        )));
    }
    if source.is_empty() || target.is_empty() {
        return Err(Error::Usage("both domains need at least one row".into()));
    }
    let half = batch_size / 2;
    let count = source.len().max(target.len()) / half;
    let src = shuffled_stream(source.len(), count * half, rng);
    let tgt = shuffled_stream(target.len(), count * half, rng);
    Ok((0..count)
        .map(|b| Batch {
            source: src[b * half..(b + 1) * half].to_vec(),
            target: tgt[b * half..(b + 1) * half].to_vec(),
        })
        .collect())
}

/// At least `needed` indices from back-to-back permutations of `0..n`.
fn shuffled_stream<R: Rng + ?Sized>(n: usize, needed: usize, rng: &mut R) -> Vec<usize> {
    let mut out = Vec::with_capacity(needed.max(n));
    loop {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(rng);
        out.extend(perm);
        if out.len() >= needed {
            return out;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;
    use std::io::Write as _;

    #[test]
    fn moons_geometry_and_balance() {
        let ds = gen_two_moons(250, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 500);
        assert_eq!(ds.class_counts(), vec![250, 250]);
        let labels = ds.labels.as_ref().unwrap();
        for r in 0..ds.len() {
            let p = ds.features.row(r);
            let (x, y) = if labels[r] == 0 { (p[0], p[1]) } else { (p[0] - 1.0, p[1] - 0.5) };
            assert!((x * x + y * y - 1.0).abs() < 1e-9);
        }
        assert_eq!(gen_two_moons(50, 0.1, 9).unwrap(), gen_two_moons(50, 0.1, 9).unwrap());
        assert!(gen_two_moons(50, -0.1, 9).is_err());
    }

    #[test]
    fn blobs_centers_and_noise_free() {
        let centers = blob_centers(12, 3.0);
        for i in 0..12 {
            for j in i + 1..12 {
                let d = (centers[i][0] - centers[j][0]).hypot(centers[i][1] - centers[j][1]);
                assert!(d > 0.0);
            }
        }
        let ds = gen_blobs(4, 3, 2.0, 0.0, 0).unwrap();
        let c = blob_centers(3, 2.0);
        for r in 0..ds.len() {
            let l = ds.labels.as_ref().unwrap()[r];
            assert_eq!(ds.features.row(r), &c[l]);
        }
        assert!(matches!(gen_blobs(4, 1, 2.0, 0.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn shift_identity_and_rotations() {
        let ds = gen_two_moons(20, 0.1, 0).unwrap();
        let same = apply_shift(&ds, &ShiftSpec::default(), 5).unwrap();
        assert_eq!(same.features, ds.features);
        assert_eq!(same.labels, ds.labels);
        assert_eq!(same.domain, Domain::Target);

        let point = DomainDataset::new(
            Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap(),
            None,
            Domain::Source,
            "p",
        )
        .unwrap();
        let half_turn = ShiftSpec { rotation_degrees: 180.0, ..Default::default() };
        let r = apply_shift(&point, &half_turn, 0).unwrap();
        assert!((r.features.get(0, 0) + 1.0).abs() < 1e-12);
        assert!(r.features.get(0, 1).abs() < 1e-12);

        let full_turn = ShiftSpec { rotation_degrees: 360.0, ..Default::default() };
        let r = apply_shift(&ds, &full_turn, 0).unwrap();
        for (a, b) in r.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() < 1e-9);
        }

        let narrow = DomainDataset::new(Tensor::zeros(&[3, 1]), None, Domain::Source, "n").unwrap();
        let rot = ShiftSpec { rotation_degrees: 10.0, ..Default::default() };
        assert!(matches!(apply_shift(&narrow, &rot, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn reduce_source_per_class() {
        let ds = gen_two_moons(250, 0.1, 0).unwrap();
        assert_eq!(reduce_source(&ds, 1.0, 3).unwrap(), ds);
        let half = reduce_source(&ds, 0.5, 3).unwrap();
        assert_eq!(half.class_counts(), vec![125, 125]);
        let tiny = reduce_source(&ds, 1e-6, 3).unwrap();
        assert_eq!(tiny.class_counts(), vec![1, 1]);
        assert_eq!(reduce_source(&ds, 0.5, 3).unwrap(), half);
        assert!(matches!(
            reduce_source(&ds.clone().without_labels(), 0.5, 3),
            Err(Error::Usage(_))
        ));
        assert!(reduce_source(&ds, 0.0, 3).is_err());
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_labeled_unlabeled_and_errors() {
        let f = write_tmp("label,f0,f1\n0,1.0,2.0\r\n1,3.0,4.0\n0,5,6\n");
        let ds = load_features_csv(f.path(), Domain::Source).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.labels, Some(vec![0, 1, 0]));

        let f = write_tmp("f0,f1,f2\n1,2,3\n");
        let ds = load_features_csv(f.path(), Domain::Target).unwrap();
        assert_eq!(ds.dim(), 3);
        assert!(ds.labels.is_none());

        let f = write_tmp("label,f0,f1\n0,1.0,abc\n");
        let err = load_features_csv(f.path(), Domain::Source).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");

        let f = write_tmp("label,f0,f1\n0,1.0\n");
        assert!(matches!(
            load_features_csv(f.path(), Domain::Source),
            Err(Error::Format { line: 2, .. })
        ));

        let f = write_tmp("label,x,y\n0,1,2\n");
        assert!(matches!(
            load_features_csv(f.path(), Domain::Source),
            Err(Error::Format { line: 1, .. })
        ));
    }

    #[test]
    fn features_csv_round_trip() {
        let ds = gen_two_moons(5, 0.0, 0).unwrap();
        let f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        write_features_csv(std::fs::File::create(f.path()).unwrap(), &ds.features, ds.labels.as_deref()).unwrap();
        let back = load_features_csv(f.path(), Domain::Source).unwrap();
        assert_eq!(back.labels, ds.labels);
        for (a, b) in back.features.data().iter().zip(ds.features.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn batches_are_balanced_and_deterministic() {
        let s = gen_two_moons(250, 0.1, 0).unwrap();
        let t = apply_shift(&gen_two_moons(250, 0.1, 1).unwrap(), &ShiftSpec::default(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batches = batch_iter(&s, &t, 50, &mut rng).unwrap();
        assert_eq!(batches.len(), 20);
        assert!(batches.iter().all(|b| b.source.len() == 25 && b.target.len() == 25));
        let seen: Vec<usize> = batches.iter().flat_map(|b| b.source.clone()).collect();
        let unique: HashSet<_> = seen.iter().collect();
        assert_eq!(unique.len(), seen.len());
        assert!(seen.iter().all(|&i| i < s.len()));

        let again = batch_iter(&s, &t, 50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(again, batches);
        assert!(matches!(batch_iter(&s, &t, 51, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn smaller_domain_is_cycled() {
        let s = reduce_source(&gen_two_moons(250, 0.1, 0).unwrap(), 0.5, 0).unwrap();
        let t = gen_two_moons(250, 0.1, 1).unwrap().with_domain(Domain::Target);
        let batches = batch_iter(&s, &t, 50, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(batches.len(), 20);
        let first: HashSet<usize> = batches[..10].iter().flat_map(|b| b.source.clone()).collect();
        assert_eq!(first.len(), 250);
        let tgt: HashSet<usize> = batches.iter().flat_map(|b| b.target.clone()).collect();
        assert_eq!(tgt.len(), 500);
    }

    #[test]
    fn normalizer_uses_source_statistics() {
        let s = gen_two_moons(100, 0.1, 0).unwrap();
        let norm = Normalizer::fit(&s);
        let z = norm.apply(&s).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..z.len()).map(|r| z.features.get(r, c)).collect();
            let m = col.iter().sum::<f64>() / col.len() as f64;
            assert!(m.abs() < 1e-12);
        }
    }
}
