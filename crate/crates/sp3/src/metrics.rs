//! Segmentation metrics: Dice, Jaccard, 95th-percentile Hausdorff distance,
//! and average surface distance, all in pixel units.
//!
//! Surface distances use boundary pixels (mask pixels 4-adjacent to a
//! non-mask pixel or to the image border) and an exact Euclidean distance
//! transform; squared distances stay integral, so results match an all-pairs
//! brute force bit for bit. HD95 uses the nearest-rank percentile over the
//! pooled directed distances of both directions; ASD is their mean.

use serde::Serialize;

use crate::error::{Result, SpError};
use crate::grid::LabelGrid;
use crate::util::pairwise_sum;

/// Dice and Jaccard for one class. Both masks empty counts as perfect
/// agreement (1, 1); exactly one empty scores (0, 0).
pub fn overlap_metrics(pred: &LabelGrid, truth: &LabelGrid, class: u8) -> Result<(f64, f64)> {
    pred.shape().check_same_plane(&truth.shape())?;
    if !pred.is_fully_labeled() || !truth.is_fully_labeled() {
        return Err(SpError::ContractViolation(
            "overlap metrics need fully labeled grids".into(),
        ));
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut inter = 0usize;
    for (pv, tv) in pred.values().iter().zip(truth.values()) {
        let in_a = *pv == class;
        let in_b = *tv == class;
        a += in_a as usize;
        b += in_b as usize;
        inter += (in_a && in_b) as usize;
    }
    if a == 0 && b == 0 {
        return Ok((1.0, 1.0));
    }
    if a == 0 || b == 0 {
        return Ok((0.0, 0.0));
    }
    let dice = 2.0 * inter as f64 / (a + b) as f64;
    let ji = inter as f64 / (a + b - inter) as f64;
    Ok((dice, ji))
}

/// Boundary pixels of a class mask: mask pixels with a 4-neighbor outside
/// the mask, or sitting on the image border. Returned as linear indices in
/// row-major order.
fn boundary_pixels(grid: &LabelGrid, class: u8) -> Vec<usize> {
    let shape = grid.shape();
    let (h, w) = (shape.height, shape.width);
    let vals = grid.values();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let px = r * w + c;
            if vals[px] != class {
                continue;
            }
            let on_border = r == 0 || c == 0 || r == h - 1 || c == w - 1;
            let exposed = on_border
                || vals[px - w] != class
                || vals[px + w] != class
                || vals[px - 1] != class
                || vals[px + 1] != class;
            if exposed {
                out.push(px);
            }
        }
    }
    out
}

const INF: i64 = i64::MAX / 4;

/// One-dimensional squared Euclidean distance transform (lower envelope of
/// parabolas). Inputs and outputs are integral squared distances.
fn edt_1d(f: &[i64]) -> Vec<i64> {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        if f[q] >= INF {
            continue;
        }
        loop {
            let p = v[k];
            let s = if f[p] >= INF {
                f64::NEG_INFINITY
            } else {
                ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64
                    / (2 * (q - p)) as f64
            };
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    let mut out = vec![0i64; n];
    let mut k = 0usize;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        let dq = q as i64 - p as i64;
        out[q] = if f[p] >= INF { INF } else { dq * dq + f[p] };
    }
    out
}

/// Exact 2-D squared Euclidean distance transform to the given site pixels.
fn edt_squared(sites: &[usize], h: usize, w: usize) -> Vec<i64> {
    let mut field = vec![INF; h * w];
    for &px in sites {
        field[px] = 0;
    }
    // transform columns, then rows
    let mut col_buf = vec![0i64; h];
    for c in 0..w {
        for r in 0..h {
            col_buf[r] = field[r * w + c];
        }
        let t = edt_1d(&col_buf);
        for r in 0..h {
            field[r * w + c] = t[r];
        }
    }
    let mut row_buf = vec![0i64; w];
    for r in 0..h {
        row_buf.copy_from_slice(&field[r * w..(r + 1) * w]);
        let t = edt_1d(&row_buf);
        field[r * w..(r + 1) * w].copy_from_slice(&t);
    }
    field
}

/// Pooled directed boundary distances of both directions, in pixels.
/// Errors unless both class masks are non-empty.
pub fn pooled_surface_distances(
    pred: &LabelGrid,
    truth: &LabelGrid,
    class: u8,
) -> Result<Vec<f64>> {
    pred.shape().check_same_plane(&truth.shape())?;
    let shape = pred.shape();
    let (h, w) = (shape.height, shape.width);
    let pred_boundary = boundary_pixels(pred, class);
    let truth_boundary = boundary_pixels(truth, class);
    if pred_boundary.is_empty() || truth_boundary.is_empty() {
        return Err(SpError::ContractViolation(format!(
            "class {class} mask empty in {}",
            if pred_boundary.is_empty() { "pred" } else { "truth" }
        )));
    }
    let to_truth = edt_squared(&truth_boundary, h, w);
    let to_pred = edt_squared(&pred_boundary, h, w);
    let mut pooled = Vec::with_capacity(pred_boundary.len() + truth_boundary.len());
    for &px in &pred_boundary {
        pooled.push((to_truth[px] as f64).sqrt());
    }
    for &px in &truth_boundary {
        pooled.push((to_pred[px] as f64).sqrt());
    }
    Ok(pooled)
}

/// Nearest-rank percentile of an unsorted sample, `q` in (0, 1].
fn nearest_rank(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank - 1]
}

/// 95th-percentile Hausdorff distance and average surface distance for one
/// class. Errors when either mask is empty; callers exclude those cases from
/// averages and count them.
pub fn surface_distances(pred: &LabelGrid, truth: &LabelGrid, class: u8) -> Result<(f64, f64)> {
    let pooled = pooled_surface_distances(pred, truth, class)?;
    let hd95 = nearest_rank(&pooled, 0.95);
    let asd = pairwise_sum(&pooled) / pooled.len() as f64;
    Ok((hd95, asd))
}

/// Metrics of one class within a full report.
#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub dice: f64,
    pub ji: f64,
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

/// Per-class metrics plus foreground means. Classes with an empty mask on
/// either side have no surface distances; they are excluded from the distance
/// means and counted in `distance_excluded`.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_class: Vec<ClassMetrics>,
    /// Means over foreground classes (ids 1..C).
    pub mean_dice: f64,
    pub mean_ji: f64,
    pub mean_hd95: Option<f64>,
    pub mean_asd: Option<f64>,
    pub distance_excluded: usize,
}

/// Evaluate a prediction against ground truth over all classes.
pub fn evaluate(pred: &LabelGrid, truth: &LabelGrid, classes: usize) -> Result<MetricReport> {
    let mut per_class = Vec::with_capacity(classes);
    let mut excluded = 0;
    for class in 0..classes {
        let class = class as u8;
        let (dice, ji) = overlap_metrics(pred, truth, class)?;
        let (hd95, asd) = match surface_distances(pred, truth, class) {
            Ok((h, a)) => (Some(h), Some(a)),
            Err(SpError::ContractViolation(_)) => {
                excluded += 1;
                (None, None)
            }
            Err(e) => return Err(e),
        };
        per_class.push(ClassMetrics { class, dice, ji, hd95, asd });
    }
    let fg = &per_class[1..];
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| -> f64 {
        fg.iter().map(|m| f(m)).sum::<f64>() / fg.len() as f64
    };
    let mean_opt = |f: &dyn Fn(&ClassMetrics) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = fg.iter().filter_map(|m| f(m)).collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };
    Ok(MetricReport {
        mean_dice: mean(&|m| m.dice),
        mean_ji: mean(&|m| m.ji),
        mean_hd95: mean_opt(&|m| m.hd95),
        mean_asd: mean_opt(&|m| m.asd),
        distance_excluded: excluded,
        per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridShape;

    fn grid(h: usize, w: usize, c: usize, vals: Vec<u8>) -> LabelGrid {
        LabelGrid::from_values(GridShape::new(h, w, c).unwrap(), vals).unwrap()
    }

    #[test]
    fn overlap_identical_and_disjoint() {
        let a = grid(2, 2, 2, vec![1, 1, 0, 0]);
        assert_eq!(overlap_metrics(&a, &a, 1).unwrap(), (1.0, 1.0));
        let b = grid(2, 2, 2, vec![0, 0, 1, 1]);
        assert_eq!(overlap_metrics(&a, &b, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn overlap_counts() {
        // |A| = |B| = 4, |A and B| = 2
        let a = grid(2, 4, 2, vec![1, 1, 1, 1, 0, 0, 0, 0]);
        let b = grid(2, 4, 2, vec![1, 1, 0, 0, 1, 1, 0, 0]);
        let (dice, ji) = overlap_metrics(&a, &b, 1).unwrap();
        assert!((dice - 0.5).abs() < 1e-12);
        assert!((ji - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_empty_conventions() {
        let empty = grid(2, 2, 3, vec![0, 0, 0, 0]);
        let some = grid(2, 2, 3, vec![2, 0, 0, 0]);
        assert_eq!(overlap_metrics(&empty, &empty, 2).unwrap(), (1.0, 1.0));
        assert_eq!(overlap_metrics(&empty, &some, 2).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn ji_dice_identity() {
        let a = grid(3, 3, 2, vec![1, 1, 0, 1, 0, 0, 1, 0, 1]);
        let b = grid(3, 3, 2, vec![1, 0, 0, 1, 1, 0, 0, 0, 1]);
        let (dice, ji) = overlap_metrics(&a, &b, 1).unwrap();
        assert!((ji - dice / (2.0 - dice)).abs() < 1e-12);
    }

    #[test]
    fn identical_masks_have_zero_distance() {
        let a = grid(4, 4, 2, vec![0, 0, 0, 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0, 0]);
        assert_eq!(surface_distances(&a, &a, 1).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn single_pixels_three_apart() {
        let mut va = vec![0u8; 8];
        let mut vb = vec![0u8; 8];
        va[1] = 1; // (0, 1)
        vb[4] = 1; // (0, 4)
        let a = grid(1, 8, 2, va);
        let b = grid(1, 8, 2, vb);
        let (hd95, asd) = surface_distances(&a, &b, 1).unwrap();
        assert_eq!(hd95, 3.0);
        assert_eq!(asd, 3.0);
    }

    #[test]
    fn empty_mask_is_an_error_status() {
        let a = grid(2, 2, 2, vec![0, 0, 0, 0]);
        let b = grid(2, 2, 2, vec![1, 0, 0, 0]);
        assert!(surface_distances(&a, &b, 1).is_err());
        let report = evaluate(&a, &b, 2).unwrap();
        assert_eq!(report.distance_excluded, 1);
        assert!(report.per_class[1].hd95.is_none());
    }

    /// Brute-force directed distances: for each boundary pixel of one mask,
    /// the minimum all-pairs distance to the other mask's boundary.
    fn brute_pooled(pred: &LabelGrid, truth: &LabelGrid, class: u8) -> Vec<f64> {
        let w = pred.shape().width;
        let pb = boundary_pixels(pred, class);
        let tb = boundary_pixels(truth, class);
        let dist = |a: usize, b: usize| -> f64 {
            let (ar, ac) = (a / w, a % w);
            let (br, bc) = (b / w, b % w);
            let dr = ar as i64 - br as i64;
            let dc = ac as i64 - bc as i64;
            ((dr * dr + dc * dc) as f64).sqrt()
        };
        let mut pooled = Vec::new();
        for &a in &pb {
            pooled.push(tb.iter().map(|&b| dist(a, b)).fold(f64::INFINITY, f64::min));
        }
        for &b in &tb {
            pooled.push(pb.iter().map(|&a| dist(b, a)).fold(f64::INFINITY, f64::min));
        }
        pooled
    }

    #[test]
    fn edt_matches_brute_force_on_random_masks() {
        use rand::Rng;
        let mut rng = crate::util::derive_rng(42, 0);
        for trial in 0..60 {
            let h = rng.gen_range(2..=12);
            let w = rng.gen_range(2..=12);
            let mut va = vec![0u8; h * w];
            let mut vb = vec![0u8; h * w];
            for px in 0..h * w {
                va[px] = rng.gen_bool(0.3) as u8;
                vb[px] = rng.gen_bool(0.3) as u8;
            }
            if !va.contains(&1) || !vb.contains(&1) {
                continue;
            }
            let a = grid(h, w, 2, va);
            let b = grid(h, w, 2, vb);
            let ours = pooled_surface_distances(&a, &b, 1).unwrap();
            let brute = brute_pooled(&a, &b, 1);
            assert_eq!(ours, brute, "trial {trial}");
        }
    }

    #[test]
    fn metrics_are_symmetric_and_translation_invariant() {
        let a = grid(6, 6, 2, {
            let mut v = vec![0u8; 36];
            v[7] = 1;
            v[8] = 1;
            v[13] = 1;
            v
        });
        let b = grid(6, 6, 2, {
            let mut v = vec![0u8; 36];
            v[14] = 1;
            v[15] = 1;
            v[20] = 1;
            v
        });
        let (h_ab, a_ab) = surface_distances(&a, &b, 1).unwrap();
        let (h_ba, a_ba) = surface_distances(&b, &a, 1).unwrap();
        assert_eq!((h_ab, a_ab), (h_ba, a_ba));
        // joint shift by (+1, +1)
        let shift = |g: &LabelGrid| -> LabelGrid {
            let mut v = vec![0u8; 36];
            for r in 0..5 {
                for c in 0..5 {
                    v[(r + 1) * 6 + c + 1] = g.values()[r * 6 + c];
                }
            }
            grid(6, 6, 2, v)
        };
        let (h2, a2) = surface_distances(&shift(&a), &shift(&b), 1).unwrap();
        assert_eq!((h2, a2), (h_ab, a_ab));
        let (d1, j1) = overlap_metrics(&a, &b, 1).unwrap();
        let (d2, j2) = overlap_metrics(&shift(&a), &shift(&b), 1).unwrap();
        assert_eq!((d1, j1), (d2, j2));
    }
}
