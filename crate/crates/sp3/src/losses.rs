//! Training losses with analytic gradients with respect to the probability
//! inputs: partial cross-entropy on expanded scribbles, uncertainty-weighted
//! dice on refined pseudo-labels, and their sum.
//!
//! Everything is computed in f64 with pairwise-summed reductions, so values
//! are independent of chunking to well below 1e-10. Gradients are laid out
//! like [`ProbGrid`] data: `(row * width + col) * classes + class`.

use crate::error::{Result, SpError};
use crate::grid::{LabelGrid, ProbGrid, IGNORE};
use crate::propagation::UncertaintyMap;
use crate::util::pairwise_sum;

/// Probabilities are clamped to this floor inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;
/// Smoothing added to the numerator and denominator of each dice ratio.
pub const DICE_EPS: f64 = 1e-5;

/// A loss value with its gradient with respect to one probability grid.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when the supervised region was empty (loss and grad are zero).
    pub empty_supervision: bool,
}

/// A loss over two heads, with one gradient per head.
#[derive(Debug, Clone)]
pub struct DualLoss {
    pub value: f64,
    pub grad1: Vec<f64>,
    pub grad2: Vec<f64>,
    pub empty_supervision: bool,
}

fn check_target(p: &ProbGrid, target: &LabelGrid) -> Result<()> {
    p.shape().check_same_plane(&target.shape())?;
    let classes = p.shape().classes;
    for (px, &v) in target.values().iter().enumerate() {
        if v != IGNORE && (v as usize) >= classes {
            return Err(SpError::InvalidParameter(format!(
                "target label {v} at pixel {px} not below C={classes}"
            )));
        }
    }
    Ok(())
}

/// Cross-entropy restricted to the labeled region: the mean negative log
/// probability of the target class over non-IGNORE pixels. Pixels outside
/// the region contribute zero loss and exactly zero gradient. An all-IGNORE
/// target yields zero with the `empty_supervision` flag set.
pub fn partial_cross_entropy(p: &ProbGrid, target: &LabelGrid) -> Result<LossValue> {
    check_target(p, target)?;
    let shape = p.shape();
    let classes = shape.classes;
    let mut grad = vec![0.0; shape.pixels() * classes];
    let mut terms = Vec::new();
    let mut supervised = Vec::new();
    for (px, &t) in target.values().iter().enumerate() {
        if t == IGNORE {
            continue;
        }
        supervised.push((px, t as usize));
    }
    let omega = supervised.len();
    if omega == 0 {
        return Ok(LossValue {
            value: 0.0,
            grad,
            empty_supervision: true,
        });
    }
    let inv = 1.0 / omega as f64;
    for &(px, t) in &supervised {
        let pt = p.pixel(px)[t];
        let clamped = pt.max(PROB_FLOOR);
        terms.push(-clamped.ln());
        if pt >= PROB_FLOOR {
            grad[px * classes + t] = -inv / pt;
        }
    }
    Ok(LossValue {
        value: pairwise_sum(&terms) * inv,
        grad,
        empty_supervision: false,
    })
}

/// Partial supervision for both heads: the mean of the two partial
/// cross-entropies against the same expanded scribble.
pub fn supervised_loss(p1: &ProbGrid, p2: &ProbGrid, expanded: &LabelGrid) -> Result<DualLoss> {
    let a = partial_cross_entropy(p1, expanded)?;
    let b = partial_cross_entropy(p2, expanded)?;
    let scale = |mut g: Vec<f64>| {
        for v in &mut g {
            *v *= 0.5;
        }
        g
    };
    Ok(DualLoss {
        value: (a.value + b.value) * 0.5,
        grad1: scale(a.grad),
        grad2: scale(b.grad),
        empty_supervision: a.empty_supervision,
    })
}

/// Weighted soft dice loss: one minus the weighted overlap ratio, averaged
/// over all classes of the one-hot encoded target. Smoothing keeps absent
/// classes at zero loss. Weights must be strictly positive; the value is
/// invariant under uniform weight rescaling because the ratio cancels it.
pub fn weighted_dice(p: &ProbGrid, target: &LabelGrid, weights: &[f64]) -> Result<LossValue> {
    check_target(p, target)?;
    if !target.is_fully_labeled() {
        return Err(SpError::ContractViolation(
            "weighted dice target contains IGNORE pixels".into(),
        ));
    }
    let shape = p.shape();
    let pixels = shape.pixels();
    let classes = shape.classes;
    if weights.len() != pixels {
        return Err(SpError::ShapeMismatch {
            expected: format!("{pixels} weights"),
            actual: format!("{}", weights.len()),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(SpError::InvalidParameter(format!("non-positive weight {w}")));
    }

    let mut grad = vec![0.0; pixels * classes];
    let mut class_losses = Vec::with_capacity(classes);
    let mut overlap_terms = vec![0.0f64; pixels];
    let mut p_terms = vec![0.0f64; pixels];
    let mut y_terms = vec![0.0f64; pixels];
    for c in 0..classes {
        for px in 0..pixels {
            let w = weights[px];
            let pv = p.pixel(px)[c];
            let y = (target.values()[px] as usize == c) as u8 as f64;
            overlap_terms[px] = w * pv * y;
            p_terms[px] = w * pv;
            y_terms[px] = w * y;
        }
        let numer = 2.0 * pairwise_sum(&overlap_terms) + DICE_EPS;
        let denom = pairwise_sum(&p_terms) + pairwise_sum(&y_terms) + DICE_EPS;
        class_losses.push(1.0 - numer / denom);
        let inv_c = 1.0 / classes as f64;
        for px in 0..pixels {
            let w = weights[px];
            let y = (target.values()[px] as usize == c) as u8 as f64;
            // d/dp of -(numer/denom), averaged over classes
            grad[px * classes + c] =
                -inv_c * (2.0 * w * y * denom - numer * w) / (denom * denom);
        }
    }
    Ok(LossValue {
        value: pairwise_sum(&class_losses) / classes as f64,
        grad,
        empty_supervision: false,
    })
}

/// Pseudo-label supervision: the sum of the two heads' weighted dice losses
/// against the refined pseudo-label, weighted by the uncertainty map.
pub fn pseudo_label_loss(
    p1: &ProbGrid,
    p2: &ProbGrid,
    refined: &LabelGrid,
    unc: &UncertaintyMap,
) -> Result<DualLoss> {
    let a = weighted_dice(p1, refined, unc.weights())?;
    let b = weighted_dice(p2, refined, unc.weights())?;
    Ok(DualLoss {
        value: a.value + b.value,
        grad1: a.grad,
        grad2: b.grad,
        empty_supervision: false,
    })
}

/// Total training loss: supervised plus pseudo-label terms, unit weights.
pub fn total_loss(sup: &DualLoss, pseu: &DualLoss) -> DualLoss {
    let add = |a: &[f64], b: &[f64]| -> Vec<f64> {
        if a.is_empty() {
            return b.to_vec();
        }
        if b.is_empty() {
            return a.to_vec();
        }
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    };
    DualLoss {
        value: sup.value + pseu.value,
        grad1: add(&sup.grad1, &pseu.grad1),
        grad2: add(&sup.grad2, &pseu.grad2),
        empty_supervision: sup.empty_supervision,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;
    use crate::slic::SuperpixelMap;

    fn probs(shape: GridShape, rows: &[&[f64]]) -> ProbGrid {
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ProbGrid::from_data(shape, data).unwrap()
    }

    #[test]
    fn pce_perfect_prediction_is_zero() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[1.0, 0.0], &[0.0, 1.0]]);
        let t = LabelGrid::from_values(shape, vec![0, 1]).unwrap();
        let loss = partial_cross_entropy(&p, &t).unwrap();
        assert!(loss.value.abs() <= 1e-12);
        assert!(!loss.empty_supervision);
    }

    #[test]
    fn pce_single_pixel_ln2() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[0.5, 0.5], &[0.9, 0.1]]);
        let t = LabelGrid::from_values(shape, vec![0, IGNORE]).unwrap();
        let loss = partial_cross_entropy(&p, &t).unwrap();
        assert!((loss.value - 2.0f64.ln()).abs() < 1e-12);
        // gradient is exactly zero outside the supervised region
        assert_eq!(&loss.grad[2..4], &[0.0, 0.0]);
        assert!((loss.grad[0] - (-1.0 / 0.5)).abs() < 1e-12);
        assert_eq!(loss.grad[1], 0.0);
    }

    #[test]
    fn pce_empty_region_flags_and_zeroes() {
        let shape = GridShape::new(2, 2, 3).unwrap();
        let p = ProbGrid::uniform(shape);
        let t = LabelGrid::filled(shape, IGNORE).unwrap();
        let loss = partial_cross_entropy(&p, &t).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.empty_supervision);
        assert!(loss.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn supervised_identical_heads_equals_single_pce() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[0.7, 0.3], &[0.4, 0.6]]);
        let t = LabelGrid::from_values(shape, vec![0, 1]).unwrap();
        let dual = supervised_loss(&p, &p, &t).unwrap();
        let single = partial_cross_entropy(&p, &t).unwrap();
        assert!((dual.value - single.value).abs() < 1e-12);
        // per-head grads carry half of the single-head gradient
        for (d, s) in dual.grad1.iter().zip(&single.grad) {
            assert!((d - 0.5 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn supervised_is_mean_of_head_values() {
        let shape = GridShape::new(1, 1, 2).unwrap();
        let p1 = probs(shape, &[&[0.5, 0.5]]);
        let p2 = probs(shape, &[&[0.25, 0.75]]);
        let t = LabelGrid::from_values(shape, vec![0]).unwrap();
        let dual = supervised_loss(&p1, &p2, &t).unwrap();
        let expect = (2.0f64.ln() + 4.0f64.ln()) / 2.0;
        assert!((dual.value - expect).abs() < 1e-12);
    }

    #[test]
    fn dice_perfect_overlap_is_zero() {
        let shape = GridShape::new(2, 2, 3).unwrap();
        let t = LabelGrid::from_values(shape, vec![0, 1, 2, 1]).unwrap();
        let mut data = vec![0.0; 12];
        for (px, &v) in t.values().iter().enumerate() {
            data[px * 3 + v as usize] = 1.0;
        }
        let p = ProbGrid::from_data(shape, data).unwrap();
        let loss = weighted_dice(&p, &t, &[0.4, 1.0, 0.7, 0.2]).unwrap();
        assert!(loss.value.abs() <= DICE_EPS);
    }

    #[test]
    fn dice_uniform_weights_cancel() {
        let shape = GridShape::new(2, 2, 2).unwrap();
        let p = probs(shape, &[&[0.6, 0.4], &[0.3, 0.7], &[0.8, 0.2], &[0.5, 0.5]]);
        let t = LabelGrid::from_values(shape, vec![0, 1, 0, 1]).unwrap();
        let base = weighted_dice(&p, &t, &[1.0; 4]).unwrap().value;
        // exact cancellation up to the epsilon smoothing terms
        for k in [0.1, 0.5, 3.0, 10.0] {
            let v = weighted_dice(&p, &t, &[k; 4]).unwrap().value;
            assert!((v - base).abs() < 1e-4, "k={k}: {v} vs {base}");
        }
    }

    #[test]
    fn dice_hand_instance() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[0.6, 0.4], &[0.4, 0.6]]);
        let t = LabelGrid::from_values(shape, vec![0, 1]).unwrap();
        let loss = weighted_dice(&p, &t, &[1.0, 1.0]).unwrap();
        // per-class ratio 2*0.6/(1+1) = 0.6, loss 0.4 for both classes
        assert!((loss.value - 0.4).abs() < 1e-4);
    }

    #[test]
    fn dice_rejects_bad_weights_and_ignore() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[0.6, 0.4], &[0.4, 0.6]]);
        let t = LabelGrid::from_values(shape, vec![0, 1]).unwrap();
        assert!(weighted_dice(&p, &t, &[1.0, 0.0]).is_err());
        assert!(weighted_dice(&p, &t, &[1.0, -0.5]).is_err());
        let tig = LabelGrid::from_values(shape, vec![0, IGNORE]).unwrap();
        assert!(weighted_dice(&p, &tig, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn dice_stays_in_unit_interval() {
        let shape = GridShape::new(2, 3, 3).unwrap();
        let mut rng = crate::util::derive_rng(11, 0);
        use rand::Rng;
        for _ in 0..50 {
            let mut data = Vec::new();
            for _ in 0..6 {
                let a: f64 = rng.gen_range(0.01..1.0);
                let b: f64 = rng.gen_range(0.01..1.0);
                let c: f64 = rng.gen_range(0.01..1.0);
                let s = a + b + c;
                data.extend([a / s, b / s, c / s]);
            }
            let p = ProbGrid::from_data(shape, data).unwrap();
            let t = LabelGrid::from_values(
                shape,
                (0..6).map(|_| rng.gen_range(0..3) as u8).collect(),
            )
            .unwrap();
            let w: Vec<f64> = (0..6).map(|_| rng.gen_range(0.37..1.0)).collect();
            let loss = weighted_dice(&p, &t, &w).unwrap();
            assert!(loss.value >= 0.0 && loss.value <= 1.0 + DICE_EPS);
        }
    }

    #[test]
    fn pseudo_loss_with_zero_uncertainty_is_unweighted_sum() {
        let shape = GridShape::new(2, 2, 2).unwrap();
        let sp = SuperpixelMap::from_sp_grid(2, 2, vec![0, 0, 1, 1]).unwrap();
        let p1 = probs(shape, &[&[0.6, 0.4], &[0.3, 0.7], &[0.8, 0.2], &[0.5, 0.5]]);
        let p2 = probs(shape, &[&[0.7, 0.3], &[0.2, 0.8], &[0.9, 0.1], &[0.4, 0.6]]);
        let refined = LabelGrid::from_values(shape, vec![0, 1, 0, 1]).unwrap();
        let unc = UncertaintyMap::none(&sp);
        let dual = pseudo_label_loss(&p1, &p2, &refined, &unc).unwrap();
        let w1 = weighted_dice(&p1, &refined, &[1.0; 4]).unwrap();
        let w2 = weighted_dice(&p2, &refined, &[1.0; 4]).unwrap();
        assert!((dual.value - (w1.value + w2.value)).abs() < 1e-12);
    }

    #[test]
    fn raising_uncertainty_shrinks_that_superpixels_gradient() {
        // two superpixels of four pixels each; vary u of the second only
        let shape = GridShape::new(1, 8, 2).unwrap();
        let sp = SuperpixelMap::from_sp_grid(1, 8, vec![0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        let rows: Vec<&[f64]> = vec![
            &[0.6, 0.4],
            &[0.3, 0.7],
            &[0.8, 0.2],
            &[0.55, 0.45],
            &[0.7, 0.3],
            &[0.35, 0.65],
            &[0.45, 0.55],
            &[0.25, 0.75],
        ];
        let p1 = probs(shape, &rows);
        let p2 = probs(shape, &rows);
        let refined =
            LabelGrid::from_values(shape, vec![0, 1, 0, 0, 0, 1, 1, 1]).unwrap();
        let grad_mass = |u1: f64| -> f64 {
            let unc = UncertaintyMap::from_u(&sp, vec![0.0, u1]).unwrap();
            let dual = pseudo_label_loss(&p1, &p2, &refined, &unc).unwrap();
            sp.members(1)
                .iter()
                .map(|&px| {
                    dual.grad1[px * 2].abs()
                        + dual.grad1[px * 2 + 1].abs()
                })
                .sum()
        };
        let low = grad_mass(0.25);
        let high = grad_mass(0.5);
        assert!(
            high < low,
            "doubling u should shrink the gradient mass: {high} vs {low}"
        );
    }

    #[test]
    fn total_loss_adds_values_and_grads() {
        let shape = GridShape::new(1, 2, 2).unwrap();
        let p = probs(shape, &[&[0.6, 0.4], &[0.4, 0.6]]);
        let t = LabelGrid::from_values(shape, vec![0, 1]).unwrap();
        let sup = supervised_loss(&p, &p, &t).unwrap();
        let sp = SuperpixelMap::from_sp_grid(1, 2, vec![0, 1]).unwrap();
        let unc = UncertaintyMap::none(&sp);
        let pseu = pseudo_label_loss(&p, &p, &t, &unc).unwrap();
        let total = total_loss(&sup, &pseu);
        assert!((total.value - (sup.value + pseu.value)).abs() < 1e-12);
        for i in 0..total.grad1.len() {
            assert!((total.grad1[i] - (sup.grad1[i] + pseu.grad1[i])).abs() < 1e-15);
        }
        // zero supervised side passes the pseudo loss through
        let zero = DualLoss {
            value: 0.0,
            grad1: vec![0.0; 4],
            grad2: vec![0.0; 4],
            empty_supervision: true,
        };
        let passthrough = total_loss(&zero, &pseu);
        assert!((passthrough.value - pseu.value).abs() < 1e-15);
    }
}
