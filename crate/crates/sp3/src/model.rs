//! Desk-scale pixel classifier: a fixed per-pixel feature map feeding two
//! linear-softmax heads. The second head sees feature dropout during
//! training, mirroring a dual-decoder network with one stochastic branch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::grid::{GridShape, ProbGrid};
use crate::slic::Image;

/// Feature dimension: intensity, 3x3 box mean, 7x7 box mean, 3x3 std,
/// Sobel magnitude, normalized row, normalized col.
pub const FEATURES: usize = 7;

/// Per-pixel features, row-major, `FEATURES` values per pixel. Borders
/// replicate the edge pixel.
pub fn pixel_features(image: &Image) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let at = |r: i64, c: i64| -> f64 {
        let r = r.clamp(0, h as i64 - 1) as usize;
        let c = c.clamp(0, w as i64 - 1) as usize;
        image.get(r, c)
    };
    let mut feats = vec![0.0; h * w * FEATURES];
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as i64, c as i64);
            let mut sum3 = 0.0;
            let mut sq3 = 0.0;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let v = at(ri + dr, ci + dc);
                    sum3 += v;
                    sq3 += v * v;
                }
            }
            let mean3 = sum3 / 9.0;
            let var3 = (sq3 / 9.0 - mean3 * mean3).max(0.0);
            let mut sum7 = 0.0;
            for dr in -3..=3 {
                for dc in -3..=3 {
                    sum7 += at(ri + dr, ci + dc);
                }
            }
            let gx = (at(ri - 1, ci + 1) + 2.0 * at(ri, ci + 1) + at(ri + 1, ci + 1)
                - at(ri - 1, ci - 1)
                - 2.0 * at(ri, ci - 1)
                - at(ri + 1, ci - 1))
                / 8.0;
            let gy = (at(ri + 1, ci - 1) + 2.0 * at(ri + 1, ci) + at(ri + 1, ci + 1)
                - at(ri - 1, ci - 1)
                - 2.0 * at(ri - 1, ci)
                - at(ri - 1, ci + 1))
                / 8.0;
            let f = &mut feats[(r * w + c) * FEATURES..(r * w + c + 1) * FEATURES];
            f[0] = image.get(r, c);
            f[1] = mean3;
            f[2] = sum7 / 49.0;
            f[3] = var3.sqrt();
            f[4] = (gx * gx + gy * gy).sqrt();
            f[5] = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.5 };
            f[6] = if w > 1 { c as f64 / (w - 1) as f64 } else { 0.5 };
        }
    }
    feats
}

/// Dual-head linear pixel classifier. Head weights are `C x (FEATURES + 1)`
/// row-major with the bias in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelModel {
    pub classes: usize,
    pub dropout_rate: f64,
    pub head1: Vec<f64>,
    pub head2: Vec<f64>,
}

/// Outputs of one training-mode forward pass. `masked_feats` are the
/// dropout-scaled features head2 actually consumed (needed for its weight
/// gradient); in eval mode they equal the plain features.
pub struct ForwardPass {
    pub p1: ProbGrid,
    pub p2: ProbGrid,
    pub masked_feats: Vec<f64>,
}

impl PixelModel {
    /// Zero-initialized heads: both output uniform 1/C everywhere.
    pub fn zeros(classes: usize, dropout_rate: f64) -> Self {
        Self {
            classes,
            dropout_rate,
            head1: vec![0.0; classes * (FEATURES + 1)],
            head2: vec![0.0; classes * (FEATURES + 1)],
        }
    }

    /// Forward both heads on precomputed features.
    ///
    /// In train mode head2's features are masked i.i.d. at the dropout rate
    /// and rescaled by 1/(1-rate); mask draws consume `rng` pixel-major,
    /// feature-minor. Eval mode is deterministic and draws nothing.
    pub fn forward_features(
        &self,
        feats: &[f64],
        height: usize,
        width: usize,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<ForwardPass> {
        let pixels = height * width;
        debug_assert_eq!(feats.len(), pixels * FEATURES);
        let shape = GridShape::new(height, width, self.classes)?;
        let masked_feats = if train_mode && self.dropout_rate > 0.0 {
            let keep_scale = 1.0 / (1.0 - self.dropout_rate);
            let mut out = feats.to_vec();
            for v in out.iter_mut() {
                let drop = rng.gen::<f64>() < self.dropout_rate;
                *v = if drop { 0.0 } else { *v * keep_scale };
            }
            out
        } else {
            feats.to_vec()
        };
        let p1 = head_forward(&self.head1, self.classes, feats, pixels);
        let p2 = head_forward(&self.head2, self.classes, &masked_feats, pixels);
        Ok(ForwardPass {
            p1: ProbGrid::from_data(shape, p1)?,
            p2: ProbGrid::from_data(shape, p2)?,
            masked_feats,
        })
    }

    /// Forward on an image (features computed on the fly).
    pub fn forward(
        &self,
        image: &Image,
        train_mode: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ProbGrid, ProbGrid)> {
        let feats = pixel_features(image);
        let pass =
            self.forward_features(&feats, image.height(), image.width(), train_mode, rng)?;
        Ok((pass.p1, pass.p2))
    }
}

fn head_forward(weights: &[f64], classes: usize, feats: &[f64], pixels: usize) -> Vec<f64> {
    let stride = FEATURES + 1;
    let mut out = vec![0.0; pixels * classes];
    let mut logits = vec![0.0f64; classes];
    for px in 0..pixels {
        let f = &feats[px * FEATURES..(px + 1) * FEATURES];
        for c in 0..classes {
            let row = &weights[c * stride..(c + 1) * stride];
            let mut z = row[FEATURES];
            for k in 0..FEATURES {
                z += row[k] * f[k];
            }
            logits[c] = z;
        }
        softmax_into(&logits, &mut out[px * classes..(px + 1) * classes]);
    }
    out
}

fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in out.iter_mut() {
        *o *= inv;
    }
}

/// Convert a loss gradient with respect to probabilities into the gradient
/// with respect to the head's logits via the softmax Jacobian, then
/// accumulate weight gradients `dL/dW[c][k] += g_z[c] * phi[k]` over pixels.
pub fn accumulate_head_gradient(
    probs: &ProbGrid,
    grad_p: &[f64],
    feats: &[f64],
    scale: f64,
    weight_grad: &mut [f64],
) {
    let classes = probs.shape().classes;
    let stride = FEATURES + 1;
    let mut g_z = vec![0.0f64; classes];
    for px in 0..probs.shape().pixels() {
        let p = probs.pixel(px);
        let g = &grad_p[px * classes..(px + 1) * classes];
        let dot: f64 = (0..classes).map(|c| g[c] * p[c]).sum();
        let mut any = false;
        for c in 0..classes {
            g_z[c] = p[c] * (g[c] - dot);
            any |= g_z[c] != 0.0;
        }
        if !any {
            continue;
        }
        let f = &feats[px * FEATURES..(px + 1) * FEATURES];
        for c in 0..classes {
            let gz = g_z[c] * scale;
            if gz == 0.0 {
                continue;
            }
            let row = &mut weight_grad[c * stride..(c + 1) * stride];
            for k in 0..FEATURES {
                row[k] += gz * f[k];
            }
            row[FEATURES] += gz;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::derive_rng;

    fn ramp_image() -> Image {
        let data: Vec<f64> = (0..64).map(|i| i as f64 / 63.0).collect();
        Image::new(8, 8, data).unwrap()
    }

    #[test]
    fn zero_heads_output_uniform() {
        let model = PixelModel::zeros(4, 0.2);
        let mut rng = derive_rng(0, 0);
        let (p1, p2) = model.forward(&ramp_image(), false, &mut rng).unwrap();
        for px in 0..64 {
            for c in 0..4 {
                assert!((p1.pixel(px)[c] - 0.25).abs() < 1e-12);
                assert!((p2.pixel(px)[c] - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut model = PixelModel::zeros(3, 0.5);
        model.head1[2] = 0.7;
        model.head2[11] = -0.4;
        let img = ramp_image();
        let mut r1 = derive_rng(1, 0);
        let mut r2 = derive_rng(2, 0);
        let (a1, a2) = model.forward(&img, false, &mut r1).unwrap();
        let (b1, b2) = model.forward(&img, false, &mut r2).unwrap();
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
    }

    #[test]
    fn zero_dropout_heads_differ_only_by_weights() {
        let mut model = PixelModel::zeros(3, 0.0);
        model.head1[0] = 0.3;
        model.head2[0] = 0.3;
        let img = ramp_image();
        let mut rng = derive_rng(3, 0);
        let (p1, p2) = model.forward(&img, true, &mut rng).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn dropout_masks_are_seed_stable() {
        let mut model = PixelModel::zeros(2, 0.3);
        model.head2[1] = 1.0;
        let img = ramp_image();
        let feats = pixel_features(&img);
        let mut r1 = derive_rng(9, 5);
        let mut r2 = derive_rng(9, 5);
        let a = model
            .forward_features(&feats, 8, 8, true, &mut r1)
            .unwrap();
        let b = model
            .forward_features(&feats, 8, 8, true, &mut r2)
            .unwrap();
        assert_eq!(a.p2, b.p2);
        assert_eq!(a.masked_feats, b.masked_feats);
    }

    #[test]
    fn features_are_bounded_and_coordinates_normalized() {
        let img = ramp_image();
        let feats = pixel_features(&img);
        for px in 0..64 {
            let f = &feats[px * FEATURES..(px + 1) * FEATURES];
            assert!(f.iter().all(|v| v.is_finite()));
            assert!((0.0..=1.0).contains(&f[0]));
            assert!((0.0..=1.0).contains(&f[5]));
            assert!((0.0..=1.0).contains(&f[6]));
        }
        // top-left pixel coordinates
        assert_eq!(feats[5], 0.0);
        assert_eq!(feats[6], 0.0);
        // bottom-right pixel coordinates
        let last = &feats[63 * FEATURES..];
        assert_eq!(last[5], 1.0);
        assert_eq!(last[6], 1.0);
    }
}
