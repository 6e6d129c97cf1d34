//! Synthetic dataset generation: nested-ring and irregular-blob phantoms with
//! class-dependent intensities, Gaussian noise, and simulated scribbles.
//!
//! Per-sample randomness derives from `(seed, sample index)`, so generation
//! parallelizes without changing outputs.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SpError};
use crate::grid::{GridShape, LabelGrid, ScribbleSet, Stroke};
use crate::manifest::{DatasetManifest, SampleEntry, Split};
use crate::slic::Image;
use crate::tensor::{tensor_write, Tensor};
use crate::util::derive_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeFamily {
    /// Concentric deformed ellipses: three nested foreground structures on
    /// background, C = 4.
    NestedRings,
    /// One fractal-perturbed blob on background, C = 2.
    IrregularBlob,
}

impl ShapeFamily {
    pub fn classes(&self) -> usize {
        match self {
            ShapeFamily::NestedRings => 4,
            ShapeFamily::IrregularBlob => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub family: ShapeFamily,
    pub size: usize,
    pub noise_sigma: f64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 24 {
            return Err(SpError::InvalidParameter(format!(
                "image size {} too small for the shape families (need >= 24)",
                self.size
            )));
        }
        if self.train == 0 || self.val == 0 || self.test == 0 {
            return Err(SpError::InvalidParameter(
                "need at least one sample per split".into(),
            ));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(SpError::InvalidParameter(format!(
                "noise sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        Ok(())
    }
}

/// One generated sample held in memory.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub split: Split,
    pub image: Image,
    pub truth: LabelGrid,
    pub scribbles: Option<ScribbleSet>,
}

/// Render every sample of the spec. Train samples also carry scribbles.
pub fn generate_samples(spec: &SynthSpec) -> Result<Vec<SynthSample>> {
    spec.validate()?;
    let total = spec.train + spec.val + spec.test;
    let plan: Vec<(usize, Split, String)> = (0..total)
        .map(|idx| {
            let (split, name, k) = if idx < spec.train {
                (Split::Train, "train", idx)
            } else if idx < spec.train + spec.val {
                (Split::Val, "val", idx - spec.train)
            } else {
                (Split::Test, "test", idx - spec.train - spec.val)
            };
            (idx, split, format!("{name}_{k:03}"))
        })
        .collect();
    plan.par_iter()
        .map(|(idx, split, id)| {
            let (image, truth) = render_sample(spec, *idx as u64)?;
            let scribbles = if *split == Split::Train {
                use rand_chacha::rand_core::RngCore;
                let scrib_seed = derive_rng(spec.seed, 3_000_000 + *idx as u64).next_u64();
                Some(simulate_scribbles(&truth, scrib_seed)?)
            } else {
                None
            };
            Ok(SynthSample {
                id: id.clone(),
                split: *split,
                image,
                truth,
                scribbles,
            })
        })
        .collect()
}

/// Generate the dataset under `out_dir`: SPT1 tensors, scribble JSON files,
/// and a manifest that pre-declares the superpixel paths the offline SLIC
/// step will fill in.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    let samples = generate_samples(spec)?;
    for sub in ["images", "labels", "scribbles", "superpixels"] {
        fs::create_dir_all(out_dir.join(sub))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in &samples {
        let image_rel = format!("images/{}.spt", s.id);
        let label_rel = format!("labels/{}.spt", s.id);
        let side = s.image.height() as u32;
        tensor_write(
            out_dir.join(&image_rel),
            &Tensor::F64 {
                dims: vec![side, s.image.width() as u32],
                data: s.image.data().to_vec(),
            },
        )?;
        tensor_write(out_dir.join(&label_rel), &s.truth.to_tensor())?;
        let scribbles_rel = match &s.scribbles {
            Some(sc) => {
                let rel = format!("scribbles/{}.json", s.id);
                fs::write(out_dir.join(&rel), serde_json::to_string_pretty(sc)?)?;
                Some(rel)
            }
            None => None,
        };
        entries.push(SampleEntry {
            id: s.id.clone(),
            split: s.split,
            image: image_rel,
            label: label_rel,
            scribbles: scribbles_rel,
            superpixels: Some(format!("superpixels/{}.spt", s.id)),
        });
    }
    let manifest = DatasetManifest {
        name: format!("{:?}-{}", spec.family, spec.size),
        classes: spec.family.classes(),
        height: spec.size,
        width: spec.size,
        samples: entries,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn render_sample(spec: &SynthSpec, idx: u64) -> Result<(Image, LabelGrid)> {
    // retry with a fresh substream if a degenerate draw starves a class
    for attempt in 0..20u64 {
        let mut rng = derive_rng(spec.seed, idx + attempt * 1_000_000);
        let (labels, bases) = match spec.family {
            ShapeFamily::NestedRings => render_rings(spec.size, &mut rng),
            ShapeFamily::IrregularBlob => render_blob(spec.size, &mut rng),
        };
        let classes = spec.family.classes();
        let pixels = spec.size * spec.size;
        let mut counts = vec![0usize; classes];
        for &v in &labels {
            counts[v as usize] += 1;
        }
        if counts.iter().any(|&c| c * 100 < pixels) {
            continue;
        }
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<f64> = labels
            .iter()
            .map(|&v| {
                let noise = if spec.noise_sigma > 0.0 {
                    spec.noise_sigma * normal.sample(&mut rng)
                } else {
                    0.0
                };
                (bases[v as usize] + noise).clamp(0.0, 1.0)
            })
            .collect();
        let shape = GridShape::new(spec.size, spec.size, classes)?;
        let truth = LabelGrid::from_values(shape, labels)?;
        let image = Image::new(spec.size, spec.size, data)?;
        return Ok((image, truth));
    }
    Err(SpError::InvalidParameter(format!(
        "sample {idx}: could not draw a mask with every class above 1% of pixels"
    )))
}

/// Class-dependent base intensities with a small per-sample jitter. Bases are
/// spaced widely enough that jittered levels never cross.
fn jittered_bases(bases: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    bases
        .iter()
        .map(|b| (b + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
        .collect()
}

fn render_rings(size: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<f64>) {
    let s = size as f64;
    let jitter = s / 16.0;
    let cr = s / 2.0 + rng.gen_range(-jitter..jitter);
    let cc = s / 2.0 + rng.gen_range(-jitter..jitter);
    let sy = rng.gen_range(0.85..1.15);
    let sx = rng.gen_range(0.85..1.15);
    let r1 = rng.gen_range(0.10..0.13) * s;
    let r2 = r1 + rng.gen_range(0.07..0.10) * s;
    let r3 = (r2 + rng.gen_range(0.07..0.10) * s).min(0.40 * s);
    let a1 = rng.gen_range(0.0..0.06);
    let p1 = rng.gen_range(0.0..std::f64::consts::TAU);
    let a2 = rng.gen_range(0.0..0.05);
    let p2 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut labels = vec![0u8; size * size];
    for r in 0..size {
        for c in 0..size {
            let dr = (r as f64 - cr) / sy;
            let dc = (c as f64 - cc) / sx;
            let d = (dr * dr + dc * dc).sqrt();
            let theta = dr.atan2(dc);
            let rho = 1.0 + a1 * (theta + p1).sin() + a2 * (2.0 * theta + p2).sin();
            labels[r * size + c] = if d <= r1 * rho {
                3
            } else if d <= r2 * rho {
                2
            } else if d <= r3 * rho {
                1
            } else {
                0
            };
        }
    }
    let bases = jittered_bases(&[0.20, 0.45, 0.70, 0.95], rng);
    (labels, bases)
}

fn render_blob(size: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<f64>) {
    let s = size as f64;
    let jitter = s / 12.0;
    let cr = s / 2.0 + rng.gen_range(-jitter..jitter);
    let cc = s / 2.0 + rng.gen_range(-jitter..jitter);
    let r0 = rng.gen_range(0.15..0.24) * s;
    // 1/f amplitude decay gives the boundary its ragged look
    let amp = rng.gen_range(0.05..0.15);
    let harmonics: Vec<(f64, f64)> = (1..=6)
        .map(|k| {
            (
                amp / (k as f64).powf(1.3),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut labels = vec![0u8; size * size];
    for r in 0..size {
        for c in 0..size {
            let dr = r as f64 - cr;
            let dc = c as f64 - cc;
            let d = (dr * dr + dc * dc).sqrt();
            let theta = dr.atan2(dc);
            let mut rho = 1.0;
            for (k, (a, phase)) in harmonics.iter().enumerate() {
                rho += a * ((k as f64 + 1.0) * theta + phase).sin();
            }
            labels[r * size + c] = (d <= r0 * rho) as u8;
        }
    }
    let bases = jittered_bases(&[0.30, 0.75], rng);
    (labels, bases)
}

/// Erode a boolean mask by one step of the 4-neighborhood; pixels on the
/// image border never survive.
fn erode(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let px = r * w + c;
            out[px] = mask[px] && mask[px - w] && mask[px + w] && mask[px - 1] && mask[px + 1];
        }
    }
    out
}

/// Simulate a scribble annotation for every class present in the truth.
///
/// Each class mask is eroded by two pixels (falling back to one, then zero,
/// when erosion empties it), then a self-avoiding random walk with
/// directional persistence traces a 1-pixel-wide path through the interior.
/// Foreground paths target 5-10% of the class's pixels; the background path
/// targets about 2% so whole-image scribble cost stays in the few-percent
/// regime. Strokes are class-pure by construction. Absent classes are
/// skipped. Deterministic in `(truth, seed)`.
pub fn simulate_scribbles(truth: &LabelGrid, seed: u64) -> Result<ScribbleSet> {
    if !truth.is_fully_labeled() {
        return Err(SpError::ContractViolation(
            "scribble simulation needs a fully labeled truth".into(),
        ));
    }
    let shape = truth.shape();
    let (h, w) = (shape.height, shape.width);
    let mut strokes = Vec::new();
    for class in 0..shape.classes {
        let mut rng = derive_rng(seed, class as u64);
        let mask: Vec<bool> = truth.values().iter().map(|&v| v as usize == class).collect();
        let class_pixels = mask.iter().filter(|&&m| m).count();
        if class_pixels == 0 {
            continue;
        }
        let mut region = erode(&erode(&mask, h, w), h, w);
        if !region.contains(&true) {
            region = erode(&mask, h, w);
        }
        if !region.contains(&true) {
            region = mask.clone();
        }
        let pct = if class == 0 {
            rng.gen_range(0.015..0.025)
        } else {
            rng.gen_range(0.05..0.10)
        };
        let target = ((pct * class_pixels as f64).round() as usize).max(1);
        let path = random_simple_path(&region, h, w, target, &mut rng);
        if !path.is_empty() {
            strokes.push(Stroke {
                class: class as u8,
                pixels: path.iter().map(|&px| (px / w, px % w)).collect(),
            });
        }
    }
    Ok(ScribbleSet { strokes })
}

/// Self-avoiding walk constrained to `region`, restarted on dead ends (up to
/// ten times, keeping the longest path). Directional persistence stretches
/// the stroke into the curvilinear shape of a hand annotation.
fn random_simple_path(
    region: &[bool],
    h: usize,
    w: usize,
    target: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let candidates: Vec<usize> = region
        .iter()
        .enumerate()
        .filter_map(|(px, &m)| m.then_some(px))
        .collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let neighbors = |px: usize| -> [Option<usize>; 4] {
        let (r, c) = (px / w, px % w);
        [
            (r > 0).then(|| px - w),
            (r + 1 < h).then(|| px + w),
            (c > 0).then(|| px - 1),
            (c + 1 < w).then(|| px + 1),
        ]
    };
    let mut best = Vec::new();
    for _restart in 0..10 {
        let start = candidates[rng.gen_range(0..candidates.len())];
        let mut visited = vec![false; h * w];
        let mut path = vec![start];
        visited[start] = true;
        let mut last_dir: Option<usize> = None;
        while path.len() < target {
            let px = *path.last().unwrap();
            let nbrs = neighbors(px);
            let open: Vec<usize> = (0..4)
                .filter(|&d| matches!(nbrs[d], Some(np) if region[np] && !visited[np]))
                .collect();
            if open.is_empty() {
                break;
            }
            let dir = match last_dir {
                Some(d) if open.contains(&d) && rng.gen_bool(0.7) => d,
                _ => open[rng.gen_range(0..open.len())],
            };
            let np = nbrs[dir].unwrap();
            visited[np] = true;
            path.push(np);
            last_dir = Some(dir);
        }
        if path.len() > best.len() {
            best = path;
        }
        if best.len() >= target {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(family: ShapeFamily, noise: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            family,
            size: 64,
            noise_sigma: noise,
            train: 4,
            val: 1,
            test: 1,
            seed,
        }
    }

    #[test]
    fn zero_noise_level_sets_equal_label_regions() {
        let samples = generate_samples(&spec(ShapeFamily::NestedRings, 0.0, 5)).unwrap();
        for s in &samples {
            // pixels of one class share one intensity, distinct across classes
            let mut level: Vec<Option<f64>> = vec![None; 4];
            for (px, &v) in s.truth.values().iter().enumerate() {
                let i = s.image.data()[px];
                match level[v as usize] {
                    None => level[v as usize] = Some(i),
                    Some(prev) => assert_eq!(prev, i),
                }
            }
            let found: Vec<f64> = level.iter().map(|l| l.unwrap()).collect();
            for a in 0..4 {
                for b in a + 1..4 {
                    assert!((found[a] - found[b]).abs() > 0.05);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_samples(&spec(ShapeFamily::IrregularBlob, 0.05, 9)).unwrap();
        let b = generate_samples(&spec(ShapeFamily::IrregularBlob, 0.05, 9)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.truth, y.truth);
            assert_eq!(
                x.scribbles.as_ref().map(|s| s.total_pixels()),
                y.scribbles.as_ref().map(|s| s.total_pixels())
            );
        }
    }

    #[test]
    fn every_class_present_above_one_percent() {
        for seed in 0..6 {
            let samples = generate_samples(&spec(ShapeFamily::NestedRings, 0.08, seed)).unwrap();
            for s in &samples {
                let mut counts = [0usize; 4];
                for &v in s.truth.values() {
                    counts[v as usize] += 1;
                }
                let pixels = s.truth.shape().pixels();
                for (c, &count) in counts.iter().enumerate() {
                    assert!(
                        count * 100 >= pixels,
                        "seed {seed} sample {} class {c}: {count}/{pixels}",
                        s.id
                    );
                }
            }
        }
    }

    #[test]
    fn scribbles_are_pure_and_sparse() {
        for family in [ShapeFamily::NestedRings, ShapeFamily::IrregularBlob] {
            let samples = generate_samples(&spec(family, 0.06, 17)).unwrap();
            for s in samples.iter().filter(|s| s.scribbles.is_some()) {
                let sc = s.scribbles.as_ref().unwrap();
                sc.validate(s.truth.shape()).unwrap();
                for stroke in &sc.strokes {
                    for &(r, c) in &stroke.pixels {
                        assert_eq!(s.truth.get(r, c), stroke.class, "impure stroke pixel");
                    }
                }
                let ratio = sc.total_pixels() as f64 / s.truth.shape().pixels() as f64;
                assert!(ratio <= 0.05, "scribble ratio {ratio} above 5%");
                assert!(ratio > 0.0);
            }
        }
    }

    #[test]
    fn foreground_stroke_length_tracks_class_size() {
        let samples = generate_samples(&spec(ShapeFamily::NestedRings, 0.05, 23)).unwrap();
        for s in samples.iter().filter(|s| s.scribbles.is_some()) {
            let sc = s.scribbles.as_ref().unwrap();
            let mut counts = [0usize; 4];
            for &v in s.truth.values() {
                counts[v as usize] += 1;
            }
            for stroke in sc.strokes.iter().filter(|st| st.class != 0) {
                let ratio = stroke.pixels.len() as f64 / counts[stroke.class as usize] as f64;
                assert!(
                    (0.03..=0.15).contains(&ratio),
                    "class {} stroke covers {ratio}",
                    stroke.class
                );
            }
        }
    }

    #[test]
    fn scribbles_deterministic_in_truth_and_seed() {
        let samples = generate_samples(&spec(ShapeFamily::NestedRings, 0.0, 31)).unwrap();
        let truth = &samples[0].truth;
        let a = simulate_scribbles(truth, 77).unwrap();
        let b = simulate_scribbles(truth, 77).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn generate_writes_complete_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate(&spec(ShapeFamily::NestedRings, 0.05, 3), dir.path()).unwrap();
        assert_eq!(manifest.samples.len(), 6);
        for s in &manifest.samples {
            assert!(dir.path().join(&s.image).is_file());
            assert!(dir.path().join(&s.label).is_file());
            if s.split == Split::Train {
                assert!(dir.path().join(s.scribbles.as_ref().unwrap()).is_file());
            }
        }
        let reloaded = DatasetManifest::load(dir.path().join("manifest.json")).unwrap();
        assert_eq!(reloaded.classes, 4);
    }
}
