//! Superpixel propagation: scribble expansion, pseudo-label ensembling and
//! refinement under class-specific dynamic thresholds, and superpixel-level
//! uncertainty weighting.
//!
//! All operations are pure; [`ThresholdState::update`] owns the only mutable
//! state and the trainer drives it from a single thread.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpError};
use crate::grid::{LabelGrid, ProbGrid, ScribbleSet, IGNORE};
use crate::slic::{superpixel_class_histogram, SuperpixelMap};
use crate::util::argmax;

/// Per-class dynamic thresholds driven by an exponential moving average.
/// At step 0 every class sits at `tau0`; each update blends the previous
/// value with the batch statistic under momentum `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau0: f64,
    pub lambda: f64,
    pub t: u64,
    #[serde(rename = "T")]
    pub thresholds: Vec<f64>,
}

impl ThresholdState {
    pub fn new(classes: usize, tau0: f64, lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau0) {
            return Err(SpError::InvalidParameter(format!("tau0 {tau0} outside [0, 1]")));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(SpError::InvalidParameter(format!(
                "lambda {lambda} outside (0, 1)"
            )));
        }
        Ok(Self {
            tau0,
            lambda,
            t: 0,
            thresholds: vec![tau0; classes],
        })
    }

    /// Fixed thresholds (no EMA dynamics); used by the ablation harness.
    pub fn fixed(classes: usize, value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(SpError::InvalidParameter(format!(
                "threshold {value} outside [0, 1]"
            )));
        }
        Ok(Self {
            tau0: value,
            lambda: 0.5,
            t: 0,
            thresholds: vec![value; classes],
        })
    }

    pub fn classes(&self) -> usize {
        self.thresholds.len()
    }

    pub fn threshold(&self, class: usize) -> f64 {
        self.thresholds[class]
    }

    /// EMA update from one batch of per-superpixel statistics.
    ///
    /// `batch` holds, per image, the (dominant class, proportion) pairs from
    /// [`dominant_proportion`]. For each class the per-image maximum
    /// proportion is averaged over the images that contain the class; classes
    /// absent from the whole batch keep their threshold. The step counter
    /// advances by one.
    pub fn update(&mut self, batch: &[Vec<(usize, f64)>]) -> Result<()> {
        if batch.is_empty() {
            return Err(SpError::EmptyBatch);
        }
        let classes = self.classes();
        let mut sums = vec![0.0f64; classes];
        let mut hits = vec![0usize; classes];
        for image_stats in batch {
            let mut image_max = vec![f64::NEG_INFINITY; classes];
            for &(dom, psi) in image_stats {
                if dom >= classes {
                    return Err(SpError::InvalidParameter(format!(
                        "dominant class {dom} not below C={classes}"
                    )));
                }
                if psi > image_max[dom] {
                    image_max[dom] = psi;
                }
            }
            for c in 0..classes {
                if image_max[c] > f64::NEG_INFINITY {
                    sums[c] += image_max[c];
                    hits[c] += 1;
                }
            }
        }
        for c in 0..classes {
            if hits[c] > 0 {
                let stat = sums[c] / hits[c] as f64;
                self.thresholds[c] = self.lambda * self.thresholds[c] + (1.0 - self.lambda) * stat;
            }
        }
        self.t += 1;
        Ok(())
    }

    /// Class-averaged threshold, as plotted in the training curves.
    pub fn mean(&self) -> f64 {
        self.thresholds.iter().sum::<f64>() / self.classes() as f64
    }
}

/// Expand scribbles to whole superpixels: every pixel of a superpixel that
/// intersects a stroke of class `c` is labeled `c`; pixels of untouched
/// superpixels stay IGNORE.
///
/// A superpixel intersecting strokes of two different classes is an error
/// naming the superpixel and both classes; callers avoid it by choosing the
/// superpixel count large enough.
pub fn expand_scribbles(sp: &SuperpixelMap, scribbles: &ScribbleSet) -> Result<LabelGrid> {
    let mut sp_class: Vec<Option<u8>> = vec![None; sp.n()];
    let width = sp.width();
    for stroke in &scribbles.strokes {
        for &(r, c) in &stroke.pixels {
            if r >= sp.height() || c >= width {
                return Err(SpError::OutOfBounds {
                    row: r,
                    col: c,
                    height: sp.height(),
                    width,
                });
            }
            let id = sp.sp_ids()[r * width + c] as usize;
            match sp_class[id] {
                None => sp_class[id] = Some(stroke.class),
                Some(prev) if prev != stroke.class => {
                    return Err(SpError::MultiClassSuperpixel {
                        sp_id: id,
                        class_a: prev,
                        class_b: stroke.class,
                    });
                }
                _ => {}
            }
        }
    }
    let values = sp
        .sp_ids()
        .iter()
        .map(|&id| sp_class[id as usize].unwrap_or(IGNORE))
        .collect();
    let classes = scribbles
        .strokes
        .iter()
        .map(|s| s.class as usize + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    let shape = crate::grid::GridShape::new(sp.height(), width, classes)?;
    LabelGrid::from_values(shape, values)
}

/// Hard pseudo-label from two heads: per-pixel argmax of the averaged
/// probabilities, ties toward the smaller class id.
pub fn ensemble_pseudo_label(p1: &ProbGrid, p2: &ProbGrid) -> Result<LabelGrid> {
    if p1.shape() != p2.shape() {
        return Err(SpError::ShapeMismatch {
            expected: format!("{:?}", p1.shape()),
            actual: format!("{:?}", p2.shape()),
        });
    }
    let shape = p1.shape();
    let c = shape.classes;
    let mut mean = vec![0.0f64; c];
    let values = (0..shape.pixels())
        .map(|px| {
            let a = p1.pixel(px);
            let b = p2.pixel(px);
            for k in 0..c {
                mean[k] = (a[k] + b[k]) * 0.5;
            }
            argmax(&mean) as u8
        })
        .collect();
    LabelGrid::from_values(shape, values)
}

/// Per-superpixel dominant class and its pixel proportion `psi` in (0, 1].
/// The pseudo-label must be a full prediction (no IGNORE pixels).
pub fn dominant_proportion(
    sp: &SuperpixelMap,
    pseudo: &LabelGrid,
) -> Result<Vec<(usize, f64)>> {
    if !pseudo.is_fully_labeled() {
        return Err(SpError::ContractViolation(
            "pseudo-label contains IGNORE pixels".into(),
        ));
    }
    let hist = superpixel_class_histogram(sp, pseudo)?;
    Ok(hist
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let mut dom = 0;
            for (c, &count) in h.counts.iter().enumerate() {
                if count > h.counts[dom] {
                    dom = c;
                }
            }
            (dom, h.counts[dom] as f64 / sp.sizes()[j] as f64)
        })
        .collect())
}

/// Relabel each superpixel to its dominant class when the dominant
/// proportion strictly exceeds that class's threshold; otherwise keep the
/// original pseudo-labels.
pub fn refine_pseudo_label(
    sp: &SuperpixelMap,
    pseudo: &LabelGrid,
    thresholds: &ThresholdState,
) -> Result<LabelGrid> {
    let stats = dominant_proportion(sp, pseudo)?;
    refine_with_stats(sp, pseudo, thresholds, &stats).map(|(grid, _)| grid)
}

/// As [`refine_pseudo_label`] but reusing precomputed proportions; also
/// returns the number of relabeled superpixels (the sampling-rate numerator).
pub fn refine_with_stats(
    sp: &SuperpixelMap,
    pseudo: &LabelGrid,
    thresholds: &ThresholdState,
    stats: &[(usize, f64)],
) -> Result<(LabelGrid, usize)> {
    let shape = pseudo.shape();
    sp.check_plane(&shape)?;
    if shape.classes > thresholds.classes() {
        return Err(SpError::InvalidParameter(format!(
            "threshold state covers {} classes, grid has {}",
            thresholds.classes(),
            shape.classes
        )));
    }
    let mut values = pseudo.values().to_vec();
    let mut relabeled = 0;
    for (j, &(dom, psi)) in stats.iter().enumerate() {
        if psi > thresholds.threshold(dom) {
            relabeled += 1;
            for &px in sp.members(j) {
                values[px] = dom as u8;
            }
        }
    }
    Ok((LabelGrid::from_values(shape, values)?, relabeled))
}

/// How the per-pixel weight map for the pseudo-label loss is derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyStrategy {
    /// No weighting: w = 1 everywhere.
    None,
    /// Per-pixel disagreement indicator, w_i = exp(-[argmax p1_i != argmax p2_i]).
    PixelLevel,
    /// Mean symmetric KL divergence between the soft outputs within each superpixel.
    KlSuperpixel,
    /// Inverted relation: higher uncertainty gets higher weight, w = exp(u - 1).
    Reversed,
    /// Superpixel disagreement ratio, w = exp(-u); the standard strategy.
    Superpixel,
}

/// Per-superpixel uncertainty and the per-pixel weight map derived from it.
/// For the standard strategy `u_j` is the within-superpixel argmax
/// disagreement ratio in [0, 1] and `w = exp(-u_j)` in [1/e, 1], constant on
/// each superpixel.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    u: Vec<f64>,
    weights: Vec<f64>,
}

impl UncertaintyMap {
    pub fn u(&self) -> &[f64] {
        &self.u
    }

    /// Per-pixel weights, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Unit weights (uncertainty guidance off).
    pub fn none(sp: &SuperpixelMap) -> Self {
        Self {
            u: vec![0.0; sp.n()],
            weights: vec![1.0; sp.pixels()],
        }
    }

    /// Build from given per-superpixel uncertainties with the standard
    /// weighting `w = exp(-u)`.
    pub fn from_u(sp: &SuperpixelMap, u: Vec<f64>) -> Result<Self> {
        if u.len() != sp.n() {
            return Err(SpError::ShapeMismatch {
                expected: format!("{} superpixels", sp.n()),
                actual: format!("{}", u.len()),
            });
        }
        if let Some(bad) = u.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(SpError::InvalidParameter(format!(
                "uncertainty {bad} outside [0, 1]"
            )));
        }
        let weights = sp
            .sp_ids()
            .iter()
            .map(|&id| (-u[id as usize]).exp())
            .collect();
        Ok(Self { u, weights })
    }
}

fn check_pair(sp: &SuperpixelMap, p1: &ProbGrid, p2: &ProbGrid) -> Result<()> {
    if p1.shape() != p2.shape() {
        return Err(SpError::ShapeMismatch {
            expected: format!("{:?}", p1.shape()),
            actual: format!("{:?}", p2.shape()),
        });
    }
    sp.check_plane(&p1.shape())
}

/// Superpixel-level uncertainty: the fraction of member pixels where the two
/// heads' argmax predictions disagree, broadcast as w = exp(-u) per pixel.
pub fn superpixel_uncertainty(
    sp: &SuperpixelMap,
    p1: &ProbGrid,
    p2: &ProbGrid,
) -> Result<UncertaintyMap> {
    check_pair(sp, p1, p2)?;
    let disagree = disagreement_mask(p1, p2);
    let mut u = vec![0.0f64; sp.n()];
    for (px, &d) in disagree.iter().enumerate() {
        if d {
            u[sp.sp_ids()[px] as usize] += 1.0;
        }
    }
    for (j, v) in u.iter_mut().enumerate() {
        *v /= sp.sizes()[j] as f64;
    }
    let weights = sp
        .sp_ids()
        .iter()
        .map(|&id| (-u[id as usize]).exp())
        .collect();
    Ok(UncertaintyMap { u, weights })
}

/// Weight map for any of the ablation strategies. The superpixel strategies
/// also report per-superpixel `u`; the pixel-level one stores the mean
/// disagreement per superpixel for reference while the weights vary per pixel.
pub fn uncertainty_weights(
    strategy: UncertaintyStrategy,
    sp: &SuperpixelMap,
    p1: &ProbGrid,
    p2: &ProbGrid,
) -> Result<UncertaintyMap> {
    match strategy {
        UncertaintyStrategy::None => Ok(UncertaintyMap::none(sp)),
        UncertaintyStrategy::Superpixel => superpixel_uncertainty(sp, p1, p2),
        UncertaintyStrategy::Reversed => {
            let mut map = superpixel_uncertainty(sp, p1, p2)?;
            map.weights = sp
                .sp_ids()
                .iter()
                .map(|&id| (map.u[id as usize] - 1.0).exp())
                .collect();
            Ok(map)
        }
        UncertaintyStrategy::PixelLevel => {
            check_pair(sp, p1, p2)?;
            let disagree = disagreement_mask(p1, p2);
            let weights: Vec<f64> = disagree
                .iter()
                .map(|&d| if d { (-1.0f64).exp() } else { 1.0 })
                .collect();
            let mut u = vec![0.0f64; sp.n()];
            for (px, &d) in disagree.iter().enumerate() {
                if d {
                    u[sp.sp_ids()[px] as usize] += 1.0;
                }
            }
            for (j, v) in u.iter_mut().enumerate() {
                *v /= sp.sizes()[j] as f64;
            }
            Ok(UncertaintyMap { u, weights })
        }
        UncertaintyStrategy::KlSuperpixel => {
            check_pair(sp, p1, p2)?;
            let c = p1.shape().classes;
            let mut u = vec![0.0f64; sp.n()];
            for px in 0..sp.pixels() {
                let a = p1.pixel(px);
                let b = p2.pixel(px);
                let mut kl = 0.0;
                for k in 0..c {
                    let pa = a[k].max(1e-12);
                    let pb = b[k].max(1e-12);
                    kl += 0.5 * (pa * (pa / pb).ln() + pb * (pb / pa).ln());
                }
                u[sp.sp_ids()[px] as usize] += kl;
            }
            for (j, v) in u.iter_mut().enumerate() {
                *v /= sp.sizes()[j] as f64;
            }
            let weights = sp
                .sp_ids()
                .iter()
                .map(|&id| (-u[id as usize]).exp())
                .collect();
            Ok(UncertaintyMap { u, weights })
        }
    }
}

fn disagreement_mask(p1: &ProbGrid, p2: &ProbGrid) -> Vec<bool> {
    (0..p1.shape().pixels())
        .map(|px| argmax(p1.pixel(px)) != argmax(p2.pixel(px)))
        .collect()
}
