//! Datasets: IDX image files, per-class subsampling, input transforms, a
//! synthetic two-blob problem, PCA projections and CSV feature export.

mod export;
mod idx;
mod pca;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub use export::{export_features_csv, read_features_csv, FeatureRow};
pub use idx::{encode_idx_images, encode_idx_labels, load_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use pca::{pca_project, Pca};

/// Images (`N x C x H x W`) with class labels `0..num_classes`.
#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Where the data came from and how it was transformed.
    pub source: String,
}

impl LabeledSet {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, source: impl Into<String>) -> Result<Self> {
        if images.rows() != labels.len() {
            return Err(Error::structural(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::structural(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(LabeledSet {
            images,
            labels,
            num_classes,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input width.
    pub fn input_dim(&self) -> usize {
        self.images.row_len()
    }

    pub fn subset(&self, idx: &[usize], note: &str) -> LabeledSet {
        LabeledSet {
            images: self.images.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            source: format!("{}; {note}", self.source),
        }
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// Per-pixel affine map `scale * (x - mean)`, fitted on a training set and
/// then applied unchanged to every other split.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTransform {
    pub scale: f64,
    /// Per-pixel training mean, or `None` to leave inputs uncentered.
    pub mean: Option<Vec<f64>>,
}

impl InputTransform {
    pub fn identity() -> Self {
        InputTransform { scale: 1.0, mean: None }
    }

    pub fn fit(train: &LabeledSet, scale: f64, center: bool) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::config(format!("input scale must be positive, got {scale}")));
        }
        let mean = if center {
            if train.is_empty() {
                return Err(Error::config("cannot center on an empty training set"));
            }
            let d = train.input_dim();
            let mut mean = vec![0.0; d];
            for i in 0..train.len() {
                for (m, v) in mean.iter_mut().zip(train.images.row(i)) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= train.len() as f64);
            Some(mean)
        } else {
            None
        };
        Ok(InputTransform { scale, mean })
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.mean.is_none()
    }

    pub fn apply(&self, set: &LabeledSet) -> Result<LabeledSet> {
        if self.is_identity() {
            return Ok(set.clone());
        }
        let d = set.input_dim();
        if let Some(mean) = &self.mean {
            if mean.len() != d {
                return Err(Error::structural(format!(
                    "transform fitted on {}-pixel inputs, applied to {d}",
                    mean.len()
                )));
            }
        }
        let mut images = set.images.clone();
        for i in 0..set.len() {
            for (j, v) in images.row_mut(i).iter_mut().enumerate() {
                let m = self.mean.as_ref().map_or(0.0, |m| m[j]);
                *v = self.scale * (*v - m);
            }
        }
        let note = match self.mean {
            Some(_) => format!("centered, scaled by {}", self.scale),
            None => format!("scaled by {}", self.scale),
        };
        Ok(LabeledSet {
            images,
            labels: set.labels.clone(),
            num_classes: set.num_classes,
            source: format!("{}; {note}", set.source),
        })
    }
}

/// Picks `n_per_class` samples of every class by a seeded shuffle within
/// the class, returned in their original relative order.
pub fn sample_per_class(data: &LabeledSet, n_per_class: usize, seed: u64) -> Result<LabeledSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n_per_class * data.num_classes);
    for class in 0..data.num_classes {
        let mut members: Vec<usize> = (0..data.len()).filter(|&i| data.labels[i] == class).collect();
        if members.len() < n_per_class {
            return Err(Error::config(format!(
                "class {class} has {} samples, fewer than the requested {n_per_class}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..n_per_class]);
    }
    chosen.sort_unstable();
    Ok(data.subset(&chosen, &format!("{n_per_class} per class, seed {seed}")))
}

/// Two isotropic Gaussian blobs in the plane, `n_per_class` points each,
/// centered at `(-separation/2, 0)` and `(separation/2, 0)` with unit
/// variance. Images are `1 x 1 x 2`.
pub fn two_blobs(n_per_class: usize, separation: f64, seed: u64) -> LabeledSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut data = Vec::with_capacity(4 * n_per_class);
    let mut labels = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        // interleave classes so truncated prefixes stay balanced
        let class = i % 2;
        let cx = if class == 0 {
            -separation / 2.0
        } else {
            separation / 2.0
        };
        data.push(cx + normal.sample(&mut rng));
        data.push(normal.sample(&mut rng));
        labels.push(class);
    }
    let images = Tensor::new(vec![2 * n_per_class, 1, 1, 2], data).expect("blob shape");
    LabeledSet::new(
        images,
        labels,
        2,
        format!("two gaussian blobs, separation {separation}, seed {seed}"),
    )
    .expect("labels in range")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledSet {
        let images = Tensor::new(vec![n, 1, 1, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        LabeledSet::new(images, (0..n).map(|i| i % 3).collect(), 3, "toy").unwrap()
    }

    #[test]
    fn transform_centers_on_training_mean() {
        let train = toy(6);
        let t = InputTransform::fit(&train, 2.0, true).unwrap();
        assert_eq!(t.mean.as_deref(), Some(&[2.5][..]));
        let out = t.apply(&toy(3)).unwrap();
        assert_eq!(out.images.data(), &[-5.0, -3.0, -1.0]);
        assert_eq!(out.labels, vec![0, 1, 2]);
        let centered = t.apply(&train).unwrap();
        assert!(centered.images.data().iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn transform_rejects_bad_input() {
        assert!(InputTransform::fit(&toy(3), 0.0, false).is_err());
        let t = InputTransform::fit(&toy(3), 1.0, true).unwrap();
        let wide = LabeledSet::new(Tensor::zeros(&[2, 2]), vec![0, 1], 2, "wide").unwrap();
        assert!(t.apply(&wide).is_err());
        assert_eq!(InputTransform::identity().apply(&wide).unwrap().images, wide.images);
    }

    #[test]
    fn per_class_counts() {
        let data = toy(300);
        let s = sample_per_class(&data, 50, 1).unwrap();
        assert_eq!(s.len(), 150);
        assert_eq!(s.class_counts(), vec![50, 50, 50]);
        // original relative order preserved
        let values: Vec<f64> = (0..s.len()).map(|i| s.images.row(i)[0]).collect();
        assert!(values.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn full_class_is_identity() {
        let data = toy(30);
        let s = sample_per_class(&data, 10, 5).unwrap();
        assert_eq!(s.images.data(), data.images.data());
        assert_eq!(s.labels, data.labels);
    }

    #[test]
    fn seeds() {
        let data = toy(300);
        let a = sample_per_class(&data, 20, 1).unwrap();
        let b = sample_per_class(&data, 20, 1).unwrap();
        let c = sample_per_class(&data, 20, 2).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert_ne!(a.images.data(), c.images.data());
    }

    #[test]
    fn insufficient_population() {
        assert!(matches!(sample_per_class(&toy(30), 11, 0), Err(Error::Config(_))));
    }

    #[test]
    fn blobs_are_balanced() {
        let b = two_blobs(50, 8.0, 3);
        assert_eq!(b.class_counts(), vec![50, 50]);
        assert_eq!(b.input_dim(), 2);
    }
}
