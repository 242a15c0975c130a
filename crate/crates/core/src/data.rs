//! Synthetic multimodal data with a dial between redundant and complementary
//! class evidence.
//!
//! Each task `j` owns a block of texture templates, one per class. Every
//! sample carries a hidden code per modality per task with
//! `Σ_i code[i][j] ≡ label[j] (mod n_j)`; modality `i` shows
//! `s·T(label) + (1−s)·T(code[i])` summed over tasks, plus Gaussian noise.
//! At `s = 1` any modality reveals the labels; at `s = 0` no single modality
//! carries information about them, only the joint view does.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use drifa_tensor::{derive_stream, RandomStream, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::net::MultimodalBatch;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub modalities: usize,
    pub classes_per_task: Vec<usize>,
    /// Samples per class of the first task.
    pub samples_per_class: usize,
    /// H, W, C_in.
    pub image_size: [usize; 3],
    /// Share of class evidence shown redundantly in every modality.
    pub shared_signal_strength: f64,
    pub noise_sigma: f64,
    /// Confine the evidence to one image quadrant (0 top-left, 1 top-right,
    /// 2 bottom-left, 3 bottom-right); the rest of the image is noise only.
    pub evidence_quadrant: Option<usize>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            modalities: 2,
            classes_per_task: vec![2],
            samples_per_class: 100,
            image_size: [8, 8, 1],
            shared_signal_strength: 1.0,
            noise_sigma: 0.1,
            evidence_quadrant: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidSpec(m));
        if self.modalities == 0 || self.samples_per_class == 0 {
            return bad("modalities and samples_per_class must be positive".into());
        }
        if self.classes_per_task.is_empty() || self.classes_per_task.iter().any(|&n| n < 2) {
            return bad(format!("every task needs at least 2 classes, got {:?}", self.classes_per_task));
        }
        let [h, w, c] = self.image_size;
        if h < 2 || w < 2 || c == 0 {
            return bad(format!("image size {:?} too small", self.image_size));
        }
        if !(0.0..=1.0).contains(&self.shared_signal_strength) {
            return bad(format!("signal strength {} outside [0, 1]", self.shared_signal_strength));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {} must be finite and non-negative", self.noise_sigma));
        }
        if self.evidence_quadrant.is_some_and(|q| q > 3) {
            return bad("evidence quadrant must be 0..=3".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: usize,
    /// One H×W×C image per modality.
    pub images: Vec<Tensor>,
    /// One label per task.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub modalities: usize,
    pub classes_per_task: Vec<usize>,
    pub image_size: [usize; 3],
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            modalities: self.modalities,
            classes_per_task: self.classes_per_task.clone(),
            image_size: self.image_size,
            samples,
        }
    }

    /// Stacks the chosen samples into network inputs.
    pub fn batch(&self, indices: &[usize]) -> MultimodalBatch {
        let picked: Vec<&Sample> = indices.iter().map(|&i| &self.samples[i]).collect();
        self.batch_of(&picked)
    }

    /// Stacks samples that share this dataset's layout into a batch.
    pub fn batch_of(&self, samples: &[&Sample]) -> MultimodalBatch {
        let [h, w, c] = self.image_size;
        let per = h * w * c;
        let inputs = (0..self.modalities)
            .map(|m| {
                let mut data = Vec::with_capacity(samples.len() * per);
                for s in samples {
                    data.extend_from_slice(s.images[m].data());
                }
                Tensor::new(vec![samples.len(), h, w, c], data).expect("images match the dataset shape")
            })
            .collect();
        let labels = (0..self.classes_per_task.len())
            .map(|t| samples.iter().map(|s| s.labels[t]).collect())
            .collect();
        MultimodalBatch { inputs, labels }
    }

    pub fn full_batch(&self) -> MultimodalBatch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Labels of task `t` in sample order.
    pub fn labels(&self, t: usize) -> Vec<usize> {
        self.samples.iter().map(|s| s.labels[t]).collect()
    }

    pub fn class_counts(&self, task: usize) -> Vec<usize> {
        let mut counts = vec![0; self.classes_per_task[task]];
        for s in &self.samples {
            counts[s.labels[task]] += 1;
        }
        counts
    }
}

/// Zero-mean texture number `k` on an H×W grid.
fn texture(k: usize, h: usize, w: usize, bank_rng: &mut RandomStream) -> Vec<f64> {
    let pattern = |f: &dyn Fn(usize, usize) -> bool| -> Vec<f64> {
        (0..h * w).map(|p| if f(p / w, p % w) { 1.0 } else { -1.0 }).collect()
    };
    let raw = match k {
        0 => pattern(&|y, _| y % 2 == 0),
        1 => pattern(&|_, x| x % 2 == 0),
        2 => pattern(&|y, x| (x + y) % 2 == 0),
        3 => pattern(&|y, x| (x + y) % 3 == 0),
        4 => pattern(&|y, x| (x + 2 * h - y) % 3 == 0),
        5 => pattern(&|y, _| y % 4 < 2),
        6 => pattern(&|_, x| x % 4 < 2),
        _ => (0..h * w).map(|_| if bank_rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
    };
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|v| v - mean).collect()
}

/// Class templates for every task, laid out task after task.
fn template_bank(spec: &SyntheticSpec) -> Vec<Vec<f64>> {
    let [h, w, _] = spec.image_size;
    let total: usize = spec.classes_per_task.iter().sum();
    let mut bank_rng = derive_stream(spec.seed, u64::MAX);
    let mask: Vec<bool> = (0..h * w)
        .map(|p| match spec.evidence_quadrant {
            None => true,
            Some(q) => (p / w >= h / 2) == (q >= 2) && (p % w >= w / 2) == (q % 2 == 1),
        })
        .collect();
    (0..total)
        .map(|k| {
            texture(k, h, w, &mut bank_rng)
                .into_iter()
                .zip(&mask)
                .map(|(v, &keep)| if keep { v } else { 0.0 })
                .collect()
        })
        .collect()
}

fn label_codes(labels: &[usize], spec: &SyntheticSpec, rng: &mut RandomStream) -> Vec<Vec<usize>> {
    let m = spec.modalities;
    let mut codes = vec![vec![0; labels.len()]; m];
    for (j, (&y, &n)) in labels.iter().zip(&spec.classes_per_task).enumerate() {
        let mut acc = 0;
        for code in codes.iter_mut().take(m - 1) {
            code[j] = rng.random_range(0..n);
            acc += code[j];
        }
        codes[m - 1][j] = (y + n * m - acc % n) % n;
    }
    codes
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let bank = template_bank(spec);
    let [h, w, c] = spec.image_size;
    let n0 = spec.classes_per_task[0];
    let offsets: Vec<usize> = spec
        .classes_per_task
        .iter()
        .scan(0, |acc, &n| {
            let o = *acc;
            *acc += n;
            Some(o)
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| CoreError::InvalidSpec(e.to_string()))?;
    let s = spec.shared_signal_strength;
    let samples = (0..spec.samples_per_class * n0)
        .into_par_iter()
        .map(|id| {
            let mut rng = derive_stream(spec.seed, id as u64);
            let mut labels = vec![id % n0];
            labels.extend(spec.classes_per_task[1..].iter().map(|&n| rng.random_range(0..n)));
            let codes = label_codes(&labels, spec, &mut rng);
            let images = codes
                .iter()
                .map(|code| {
                    let mut img = Tensor::zeros(vec![h, w, c]);
                    let data = img.data_mut();
                    for (j, &o) in offsets.iter().enumerate() {
                        let (shared, own) = (&bank[o + labels[j]], &bank[o + code[j]]);
                        for p in 0..h * w {
                            let v = s * shared[p] + (1.0 - s) * own[p];
                            for ch in 0..c {
                                data[p * c + ch] += v / (1.0 + ch as f64);
                            }
                        }
                    }
                    if spec.noise_sigma > 0.0 {
                        data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
                    }
                    img
                })
                .collect();
            Sample { id, images, labels }
        })
        .collect();
    Ok(Dataset {
        modalities: spec.modalities,
        classes_per_task: spec.classes_per_task.clone(),
        image_size: spec.image_size,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Rotate90,
    FlipH,
    FlipV,
}

/// Applies one transform to an H×W×C image.
pub fn transform_image(img: &Tensor, op: AugmentOp) -> Result<Tensor> {
    let [h, w, c] = *img.shape() else {
        return Err(CoreError::Dataset(format!("expected an H×W×C image, got {:?}", img.shape())));
    };
    let (oh, ow) = match op {
        AugmentOp::Rotate90 if h != w => return Err(CoreError::NonSquareRotation { height: h, width: w }),
        _ => (h, w),
    };
    Ok(Tensor::from_fn(vec![oh, ow, c], |i| {
        let (y, x) = match op {
            // counter-clockwise: out(y, x) = in(x, w − 1 − y)
            AugmentOp::Rotate90 => (i[1], w - 1 - i[0]),
            AugmentOp::FlipH => (i[0], w - 1 - i[1]),
            AugmentOp::FlipV => (h - 1 - i[0], i[1]),
        };
        img.get(&[y, x, i[2]])
    }))
}

/// Applies the same transforms, in order, to every modality of a sample.
pub fn apply_ops(sample: &Sample, ops: &[AugmentOp]) -> Result<Sample> {
    let mut images = sample.images.clone();
    for &op in ops {
        images = images.iter().map(|img| transform_image(img, op)).collect::<Result<_>>()?;
    }
    Ok(Sample { id: sample.id, images, labels: sample.labels.clone() })
}

/// Applies each allowed op with probability 1/2, identically across modalities.
/// Falls back to a single forced op when the coin flips chose none.
pub fn augment(sample: &Sample, ops: &[AugmentOp], rng: &mut RandomStream) -> Result<Sample> {
    let mut chosen: Vec<AugmentOp> = ops.iter().copied().filter(|_| rng.random::<bool>()).collect();
    if chosen.is_empty() && !ops.is_empty() {
        chosen.push(ops[rng.random_range(0..ops.len())]);
    }
    apply_ops(sample, &chosen)
}

/// Applies each allowed op with probability 1/2; the identity is possible.
pub fn random_view(sample: &Sample, ops: &[AugmentOp], rng: &mut RandomStream) -> Result<Sample> {
    let chosen: Vec<AugmentOp> = ops.iter().copied().filter(|_| rng.random::<bool>()).collect();
    apply_ops(sample, &chosen)
}

/// Tops up every first-task class to the largest class count with augmented
/// copies of randomly chosen members. New samples get fresh ids.
pub fn balance(dataset: &Dataset, ops: &[AugmentOp], seed: u64) -> Result<Dataset> {
    let counts = dataset.class_counts(0);
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut rng = derive_stream(seed, 0);
    let mut samples = dataset.samples.clone();
    let mut next_id = samples.iter().map(|s| s.id + 1).max().unwrap_or(0);
    for (class, &count) in counts.iter().enumerate() {
        let members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.samples[i].labels[0] == class).collect();
        if members.is_empty() {
            continue;
        }
        for _ in count..target {
            let src = &dataset.samples[members[rng.random_range(0..members.len())]];
            let mut copy = augment(src, ops, &mut rng)?;
            copy.id = next_id;
            next_id += 1;
            samples.push(copy);
        }
    }
    Ok(dataset.with_samples(samples))
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

/// Stratified split by the first task's label. Per class, the train and
/// validation counts are the rounded fractions and test takes the rest.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    if fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CoreError::BadFractions(fractions));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class.entry(s.labels[0]).or_default().push(i);
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, mut members) in by_class {
        members.shuffle(&mut derive_stream(seed, class as u64));
        let n = members.len();
        let train = ((n as f64 * fractions[0]).round() as usize).min(n);
        let val = ((n as f64 * fractions[1]).round() as usize).min(n - train);
        parts[0].extend_from_slice(&members[..train]);
        parts[1].extend_from_slice(&members[train..train + val]);
        parts[2].extend_from_slice(&members[train + val..]);
    }
    let [train, val, test] = parts.map(|mut idx| {
        idx.sort_unstable();
        dataset.with_samples(idx.into_iter().map(|i| dataset.samples[i].clone()).collect())
    });
    Ok(DatasetSplit { train, val, test })
}

const MANIFEST: &str = "manifest.txt";
const MANIFEST_HEADER: &str = "drifa-dataset 1";

fn data_err(msg: impl Into<String>) -> CoreError {
    CoreError::Dataset(msg.into())
}

/// Writes `dir/manifest.txt` plus one raw little-endian f64 file per sample
/// per modality.
///
/// ```text
/// drifa-dataset 1
/// modalities 2
/// classes 2 3
/// shape 8 8 1
/// sample <id> <label,label> <file> <file>
/// ```
pub fn export(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let join = |v: &[usize], sep: &str| v.iter().map(usize::to_string).collect::<Vec<_>>().join(sep);
    let mut manifest = String::new();
    writeln!(manifest, "{MANIFEST_HEADER}").unwrap();
    writeln!(manifest, "modalities {}", dataset.modalities).unwrap();
    writeln!(manifest, "classes {}", join(&dataset.classes_per_task, " ")).unwrap();
    writeln!(manifest, "shape {}", join(&dataset.image_size, " ")).unwrap();
    for s in &dataset.samples {
        write!(manifest, "sample {} {}", s.id, join(&s.labels, ",")).unwrap();
        for (m, img) in s.images.iter().enumerate() {
            let file = format!("s{}_m{m}.f64", s.id);
            let bytes: Vec<u8> = img.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(dir.join(&file), bytes)?;
            write!(manifest, " {file}").unwrap();
        }
        writeln!(manifest).unwrap();
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn parse_list(fields: &[&str], what: &str) -> Result<Vec<usize>> {
    fields
        .iter()
        .map(|f| f.parse().map_err(|_| data_err(format!("bad {what} value `{f}`"))))
        .collect()
}

pub fn import(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some(MANIFEST_HEADER) {
        return Err(data_err("missing manifest header"));
    }
    let (mut modalities, mut classes, mut shape) = (None, None, None);
    let mut samples = Vec::new();
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields[0] {
            "modalities" => modalities = parse_list(&fields[1..], "modalities")?.first().copied(),
            "classes" => classes = Some(parse_list(&fields[1..], "classes")?),
            "shape" => {
                let s = parse_list(&fields[1..], "shape")?;
                shape = Some(<[usize; 3]>::try_from(s).map_err(|_| data_err("shape needs 3 values"))?);
            }
            "sample" => {
                let (Some(m), Some(classes), Some(shape)) = (modalities, classes.as_ref(), shape) else {
                    return Err(data_err("sample line before header fields"));
                };
                if fields.len() != 3 + m {
                    return Err(data_err(format!("sample line has {} fields, expected {}", fields.len(), 3 + m)));
                }
                let id = parse_list(&fields[1..2], "id")?[0];
                let labels = parse_list(&fields[2].split(',').collect::<Vec<_>>(), "label")?;
                if labels.len() != classes.len() || labels.iter().zip(classes).any(|(&y, &n)| y >= n) {
                    return Err(data_err(format!("sample {id}: labels {labels:?} do not fit classes {classes:?}")));
                }
                let images = fields[3..]
                    .iter()
                    .map(|file| {
                        let bytes = fs::read(dir.join(file)).map_err(|e| data_err(format!("{file}: {e}")))?;
                        let numel = shape.iter().product::<usize>();
                        if bytes.len() != numel * 8 {
                            return Err(data_err(format!("{file}: {} bytes, expected {}", bytes.len(), numel * 8)));
                        }
                        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                        Ok(Tensor::new(shape.to_vec(), data)?)
                    })
                    .collect::<Result<_>>()?;
                samples.push(Sample { id, images, labels });
            }
            other => return Err(data_err(format!("unknown manifest field `{other}`"))),
        }
    }
    match (modalities, classes, shape) {
        (Some(modalities), Some(classes_per_task), Some(image_size)) => {
            Ok(Dataset { modalities, classes_per_task, image_size, samples })
        }
        _ => Err(data_err("manifest is missing modalities, classes or shape")),
    }
}
