//! Synthetic multi-task image suite.
//!
//! Task 0 draws from a base generator of four pattern classes; each added
//! task draws fresh samples from its own stream and applies one
//! deterministic transform, so tasks stay related but genuinely distinct.
//! The first image channel carries the class pattern, the second carries
//! pure noise, which gives the channel-shuffle transform its bite.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, Dataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthTransform {
    Rotate90,
    Invert,
    PermuteLabels,
    ChannelShuffle,
}

impl SynthTransform {
    pub fn name(&self) -> &'static str {
        match self {
            SynthTransform::Rotate90 => "rotate90",
            SynthTransform::Invert => "invert",
            SynthTransform::PermuteLabels => "permute_labels",
            SynthTransform::ChannelShuffle => "channel_shuffle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub classes: usize,
    /// `[channels, height, width]`; two channels, square images.
    pub image: [usize; 3],
    pub n_train: usize,
    pub n_test: usize,
    /// Half-width of the uniform pixel noise.
    pub noise: f32,
    pub transform: Option<SynthTransform>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            classes: 4,
            image: [2, 12, 12],
            n_train: 512,
            n_test: 256,
            noise: 0.10,
            transform: None,
        }
    }
}

fn pattern_on(
    class: usize,
    i: usize,
    j: usize,
    phase: usize,
    cx: f32,
    cy: f32,
    radius: f32,
) -> bool {
    match class {
        0 => (i + phase) % 4 < 2,
        1 => (i + j + phase) % 4 < 2,
        2 => {
            let di = i as f32 - cy;
            let dj = j as f32 - cx;
            di * di + dj * dj <= radius * radius
        }
        _ => (i / 2 + j / 2 + phase) % 2 == 0,
    }
}

/// Rotates every channel plane 90 degrees clockwise (square images).
pub fn rotate90(img: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    assert_eq!(h, w, "rotate90 requires square images");
    let mut out = vec![0.0; img.len()];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[ci * h * w + i * w + j] = img[ci * h * w + (h - 1 - j) * w + i];
            }
        }
    }
    out
}

/// Rotates every channel plane 180 degrees.
pub fn rotate180(img: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0; img.len()];
    for ci in 0..c {
        for i in 0..h {
            for j in 0..w {
                out[ci * h * w + i * w + j] = img[ci * h * w + (h - 1 - i) * w + (w - 1 - j)];
            }
        }
    }
    out
}

/// Reverses the channel order (for two channels: a swap).
pub fn channel_shuffle(img: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut out = vec![0.0; img.len()];
    for ci in 0..c {
        out[(c - 1 - ci) * plane..(c - ci) * plane]
            .copy_from_slice(&img[ci * plane..(ci + 1) * plane]);
    }
    out
}

/// Generates one split of a synthetic task. Classes are balanced; train and
/// test draw from independent derived streams.
pub fn generate(spec: &SyntheticSpec, split: Split) -> Result<Dataset> {
    let [c, h, w] = spec.image;
    if c != 2 {
        return Err(Error::BadConfig {
            msg: format!("synthetic generator produces 2-channel images, config asks for {c}"),
        });
    }
    if h != w {
        return Err(Error::BadConfig {
            msg: format!("synthetic images must be square, got {h}x{w}"),
        });
    }
    if spec.classes != 4 {
        return Err(Error::BadConfig {
            msg: format!(
                "synthetic generator defines 4 classes, config asks for {}",
                spec.classes
            ),
        });
    }
    let n = match split {
        Split::Train => spec.n_train,
        Split::Test => spec.n_test,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, split.tag()));
    let plane = h * w;
    let mut images = Vec::with_capacity(n * c * plane);
    let mut labels = Vec::with_capacity(n);

    for idx in 0..n {
        let class = idx % spec.classes;
        let phase = rng.gen_range(0..4usize);
        let cx = rng.gen_range(3.0..(w as f32 - 4.0));
        let cy = rng.gen_range(3.0..(h as f32 - 4.0));
        let radius = rng.gen_range(2.5..3.5f32);
        // Modest contrast plus a common background shift keep the classes
        // from being separable on first-order statistics alone.
        let offset = rng.gen_range(-0.08..0.08f32);
        let hi = 0.66 + offset + rng.gen_range(-0.06..0.06f32);
        let lo = 0.34 + offset + rng.gen_range(-0.06..0.06f32);

        let mut raw = vec![0.0f32; c * plane];
        for i in 0..h {
            for j in 0..w {
                let on = pattern_on(class, i, j, phase, cx, cy, radius);
                let base = if on { hi } else { lo };
                let v = base + rng.gen_range(-spec.noise..spec.noise);
                raw[i * w + j] = v.clamp(0.0, 1.0);
            }
        }
        for p in 0..plane {
            raw[plane + p] = rng.gen_range(0.0..1.0f32);
        }

        let mut label = class;
        match spec.transform {
            None => {}
            Some(SynthTransform::Invert) => {
                for v in raw.iter_mut() {
                    *v = 1.0 - *v;
                }
            }
            Some(SynthTransform::Rotate90) => raw = rotate90(&raw, c, h, w),
            Some(SynthTransform::ChannelShuffle) => raw = channel_shuffle(&raw, c, h, w),
            Some(SynthTransform::PermuteLabels) => label = (class + 1) % spec.classes,
        }

        images.extend(raw.iter().map(|&v| (v - 0.5) / 0.5));
        labels.push(label);
    }
    let ds = Dataset {
        shape: [c, h, w],
        images,
        labels,
        classes: spec.classes,
    };
    ds.validate()?;
    Ok(ds)
}

/// Builds the default desk suite: a base pretraining task followed by
/// `n_tasks - 1` transformed tasks, each with its own derived seed.
pub fn make_synthetic_suite(seed: u64, n_tasks: usize) -> Result<Vec<(String, SyntheticSpec)>> {
    if n_tasks < 2 {
        return Err(Error::BadConfig {
            msg: format!("a suite needs at least 2 tasks, got {n_tasks}"),
        });
    }
    let cycle = [
        SynthTransform::Invert,
        SynthTransform::ChannelShuffle,
        SynthTransform::Rotate90,
        SynthTransform::PermuteLabels,
    ];
    let mut suite = Vec::with_capacity(n_tasks);
    for i in 0..n_tasks {
        let (name, transform) = if i == 0 {
            ("base".to_string(), None)
        } else {
            let t = cycle[(i - 1) % cycle.len()];
            let round = (i - 1) / cycle.len();
            let name = if round == 0 {
                t.name().to_string()
            } else {
                format!("{}{}", t.name(), round + 1)
            };
            (name, Some(t))
        };
        suite.push((
            name.clone(),
            SyntheticSpec {
                seed: derive_seed(seed, &format!("task/{name}")),
                transform,
                ..SyntheticSpec::default()
            },
        ));
    }
    Ok(suite)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_suites_and_data() {
        let a = make_synthetic_suite(11, 4).unwrap();
        let b = make_synthetic_suite(11, 4).unwrap();
        assert_eq!(a.len(), 4);
        for ((na, sa), (nb, sb)) in a.iter().zip(&b) {
            assert_eq!(na, nb);
            let da = generate(sa, Split::Train).unwrap();
            let db = generate(sb, Split::Train).unwrap();
            assert_eq!(da.images, db.images);
            assert_eq!(da.labels, db.labels);
        }
    }

    #[test]
    fn train_and_test_streams_differ() {
        let spec = SyntheticSpec {
            seed: 3,
            ..SyntheticSpec::default()
        };
        let train = generate(&spec, Split::Train).unwrap();
        let test = generate(&spec, Split::Test).unwrap();
        assert_ne!(
            &train.images[..test.images.len().min(train.images.len())],
            &test.images[..]
        );
    }

    #[test]
    fn rotate90_twice_is_rotate180() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, h, w) = (2usize, 6usize, 6usize);
        let img: Vec<f32> = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let twice = rotate90(&rotate90(&img, c, h, w), c, h, w);
        assert_eq!(twice, rotate180(&img, c, h, w));
    }

    #[test]
    fn channel_shuffle_swaps_two_channels() {
        let img = vec![1.0, 2.0, 3.0, 4.0];
        let out = channel_shuffle(&img, 2, 1, 2);
        assert_eq!(out, vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn permuted_labels_are_a_derangement_of_fresh_images() {
        let base = SyntheticSpec {
            seed: 5,
            ..SyntheticSpec::default()
        };
        let permuted = SyntheticSpec {
            transform: Some(SynthTransform::PermuteLabels),
            ..base.clone()
        };
        let a = generate(&base, Split::Test).unwrap();
        let b = generate(&permuted, Split::Test).unwrap();
        // Identical streams means identical images; labels rotate by one.
        assert_eq!(a.images, b.images);
        for (la, lb) in a.labels.iter().zip(&b.labels) {
            assert_eq!(*lb, (la + 1) % 4);
            assert_ne!(la, lb);
        }
    }

    #[test]
    fn splits_are_balanced() {
        let spec = SyntheticSpec {
            seed: 9,
            n_test: 64,
            ..SyntheticSpec::default()
        };
        let ds = generate(&spec, Split::Test).unwrap();
        let mut counts = [0usize; 4];
        for &l in &ds.labels {
            counts[l] += 1;
        }
        assert_eq!(counts, [16, 16, 16, 16]);
    }
}
