//! Segmentation and least-squares adversarial objectives.
//!
//! Every loss returns its value together with the analytic gradient with
//! respect to its inputs, which the training step feeds into the tape. The
//! functions are generic over the float type so they can be checked in `f64`.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking the log.
pub const PROB_CLAMP: f64 = 1e-7;

/// Layout of a two-class probability map `[batch, 2, height, width]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbDims {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
}

impl ProbDims {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn check(&self, probs_len: usize, mask_len: usize) -> Result<()> {
        let n = self.batch * self.pixels();
        if probs_len != 2 * n || mask_len != n {
            return Err(Error::Shape(format!(
                "probabilities of length {probs_len} and mask of length {mask_len} do not fit {self:?}"
            )));
        }
        Ok(())
    }

    fn index(&self, b: usize, class: usize, p: usize) -> usize {
        (b * 2 + class) * self.pixels() + p
    }
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

fn check_finite<T: Float>(values: &[T], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Mean over pixels of `-ln(max(p[true class], 1e-7))`, with its gradient.
pub fn cross_entropy_with_grad<T: Float>(
    probs: &[T],
    mask: &[T],
    dims: ProbDims,
) -> Result<(T, Vec<T>)> {
    dims.check(probs.len(), mask.len())?;
    let n = dims.batch * dims.pixels();
    let inv_n = T::one() / cast(n as f64);
    let clamp = cast::<T>(PROB_CLAMP);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); probs.len()];
    for b in 0..dims.batch {
        for p in 0..dims.pixels() {
            let class = if mask[b * dims.pixels() + p] > cast(0.5) { 1 } else { 0 };
            let idx = dims.index(b, class, p);
            let prob = probs[idx];
            // NaN must reach the total rather than being clamped away.
            if prob > clamp || prob.is_nan() {
                total = total - prob.ln();
                grad[idx] = -inv_n / prob;
            } else {
                total = total - clamp.ln();
            }
        }
    }
    Ok((total * inv_n, grad))
}

pub fn cross_entropy<T: Float>(probs: &[T], mask: &[T], dims: ProbDims) -> Result<T> {
    cross_entropy_with_grad(probs, mask, dims).map(|(v, _)| v)
}

/// `-(2 Σ y·ŷ + s) / (Σ y + Σ ŷ + s)` over every pixel of the batch, with its
/// gradient in `ŷ`. Lies in `[-1, 0]` for `ŷ ∈ [0, 1]`.
pub fn soft_dice_term_with_grad<T: Float>(
    fg_probs: &[T],
    mask: &[T],
    smooth: T,
) -> Result<(T, Vec<T>)> {
    if fg_probs.len() != mask.len() {
        return Err(Error::Shape(format!(
            "foreground map of length {} vs mask of length {}",
            fg_probs.len(),
            mask.len()
        )));
    }
    let two = cast::<T>(2.0);
    let mut inter = T::zero();
    let mut sum_y = T::zero();
    let mut sum_p = T::zero();
    for (&p, &y) in fg_probs.iter().zip(mask) {
        inter = inter + y * p;
        sum_y = sum_y + y;
        sum_p = sum_p + p;
    }
    let num = two * inter + smooth;
    let den = sum_y + sum_p + smooth;
    let value = -num / den;
    let grad = mask
        .iter()
        .map(|&y| -(two * y * den - num) / (den * den))
        .collect();
    Ok((value, grad))
}

pub fn soft_dice_term<T: Float>(fg_probs: &[T], mask: &[T], smooth: T) -> Result<T> {
    soft_dice_term_with_grad(fg_probs, mask, smooth).map(|(v, _)| v)
}

#[derive(Debug, Clone)]
pub struct SegLoss<T> {
    pub ce: T,
    pub dice: T,
    /// `ce + alpha * dice`.
    pub total: T,
    /// Gradient of `total` with respect to the full probability map.
    pub grad: Vec<T>,
}

/// Cross-entropy plus `alpha` times the Dice term on the foreground channel.
/// Bottoms out at `-alpha` for a perfect prediction.
pub fn segmentation_loss_with_grad<T: Float>(
    probs: &[T],
    mask: &[T],
    dims: ProbDims,
    alpha: T,
    smooth: T,
) -> Result<SegLoss<T>> {
    let (ce, mut grad) = cross_entropy_with_grad(probs, mask, dims)?;
    let mut fg = Vec::with_capacity(mask.len());
    for b in 0..dims.batch {
        let start = dims.index(b, 1, 0);
        fg.extend_from_slice(&probs[start..start + dims.pixels()]);
    }
    let (dice, dice_grad) = soft_dice_term_with_grad(&fg, mask, smooth)?;
    for b in 0..dims.batch {
        for p in 0..dims.pixels() {
            let idx = dims.index(b, 1, p);
            grad[idx] = grad[idx] + alpha * dice_grad[b * dims.pixels() + p];
        }
    }
    Ok(SegLoss {
        ce,
        dice,
        total: ce + alpha * dice,
        grad,
    })
}

pub fn segmentation_loss<T: Float>(
    probs: &[T],
    mask: &[T],
    dims: ProbDims,
    alpha: T,
    smooth: T,
) -> Result<T> {
    segmentation_loss_with_grad(probs, mask, dims, alpha, smooth).map(|l| l.total)
}

fn mean_sq_to<T: Float>(values: &[T], label: T) -> (T, Vec<T>) {
    let n = cast::<T>(values.len() as f64);
    let two = cast::<T>(2.0);
    let mut acc = T::zero();
    let grad = values
        .iter()
        .map(|&v| {
            let d = v - label;
            acc = acc + d * d;
            two * d / n
        })
        .collect();
    (acc / n, grad)
}

/// Discriminator objective: `mean((D(target) - 1)²) + mean(D(source)²)`.
/// Returns the value and the gradients for the target and source maps.
pub fn lsgan_d_loss_with_grad<T: Float>(
    d_target: &[T],
    d_source: &[T],
) -> Result<(T, Vec<T>, Vec<T>)> {
    check_finite(d_target, "discriminator target map")?;
    check_finite(d_source, "discriminator source map")?;
    let (a, ga) = mean_sq_to(d_target, T::one());
    let (b, gb) = mean_sq_to(d_source, T::zero());
    Ok((a + b, ga, gb))
}

pub fn lsgan_d_loss<T: Float>(d_target: &[T], d_source: &[T]) -> Result<T> {
    lsgan_d_loss_with_grad(d_target, d_source).map(|r| r.0)
}

/// Generator objective on target-domain scores: `mean(D(target)²)`, pulling
/// target features toward the source label.
pub fn lsgan_g_adv_loss_with_grad<T: Float>(d_target: &[T]) -> Result<(T, Vec<T>)> {
    check_finite(d_target, "discriminator target map")?;
    Ok(mean_sq_to(d_target, T::zero()))
}

pub fn lsgan_g_adv_loss<T: Float>(d_target: &[T]) -> Result<T> {
    lsgan_g_adv_loss_with_grad(d_target).map(|r| r.0)
}

/// Symmetric generator objective: the target term plus
/// `mean((D(source) - 1)²)`, which also pushes source features across.
pub fn lsgan_g_adv_symmetric_with_grad<T: Float>(
    d_target: &[T],
    d_source: &[T],
) -> Result<(T, Vec<T>, Vec<T>)> {
    check_finite(d_target, "discriminator target map")?;
    check_finite(d_source, "discriminator source map")?;
    let (a, ga) = mean_sq_to(d_target, T::zero());
    let (b, gb) = mean_sq_to(d_source, T::one());
    Ok((a + b, ga, gb))
}

/// Per-step loss values; one of these is logged as a JSON line per step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg_ce: f64,
    pub seg_dice: f64,
    pub adv_img_g: f64,
    pub adv_feat_g: f64,
    pub d_img: f64,
    pub d_feat: f64,
    pub total_g: f64,
}

impl LossBreakdown {
    pub fn fields(&self) -> [(&'static str, f64); 7] {
        [
            ("seg_ce", self.seg_ce),
            ("seg_dice", self.seg_dice),
            ("adv_img_g", self.adv_img_g),
            ("adv_feat_g", self.adv_feat_g),
            ("d_img", self.d_img),
            ("d_feat", self.d_feat),
            ("total_g", self.total_g),
        ]
    }

    /// Name of the first non-finite field, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.fields()
            .into_iter()
            .find(|(_, v)| !v.is_finite())
            .map(|(k, _)| k)
    }
}

/// Raw loss components of one step, before weighting.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossTerms {
    pub seg_ce: f64,
    pub seg_dice: f64,
    pub adv_img_g: f64,
    pub adv_feat_g: f64,
    pub d_img: f64,
    pub d_feat: f64,
}

/// Assembles the generator objective, zeroing the adversarial terms that the
/// configured variant disables.
pub fn total_generator_objective(terms: &LossTerms, cfg: &ExperimentConfig) -> LossBreakdown {
    let (use_img, use_feat) = (cfg.variant.uses_image_level(), cfg.variant.uses_feature_level());
    let (lambda_img, lambda_feat) = cfg.effective_lambdas();
    let adv_img_g = if use_img { terms.adv_img_g } else { 0.0 };
    let adv_feat_g = if use_feat { terms.adv_feat_g } else { 0.0 };
    LossBreakdown {
        seg_ce: terms.seg_ce,
        seg_dice: terms.seg_dice,
        adv_img_g,
        adv_feat_g,
        d_img: if use_img { terms.d_img } else { 0.0 },
        d_feat: if use_feat { terms.d_feat } else { 0.0 },
        total_g: terms.seg_ce
            + cfg.alpha * terms.seg_dice
            + lambda_img * adv_img_g
            + lambda_feat * adv_feat_g,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;

    fn dims(b: usize, h: usize, w: usize) -> ProbDims {
        ProbDims {
            batch: b,
            height: h,
            width: w,
        }
    }

    /// Builds a two-class map from foreground probabilities.
    fn two_class(fg: &[f64], b: usize, pixels: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for i in 0..b {
            let f = &fg[i * pixels..(i + 1) * pixels];
            out.extend(f.iter().map(|p| 1.0 - p));
            out.extend_from_slice(f);
        }
        out
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_tiny() {
        let mask = [1.0, 0.0, 0.0, 1.0];
        let probs = two_class(&[1.0 - 1e-7, 1e-7, 1e-7, 1.0 - 1e-7], 1, 4);
        let ce = cross_entropy(&probs, &mask, dims(1, 2, 2)).unwrap();
        assert!(ce <= 1e-6, "{ce}");
        // Exactly one-hot inputs hit the clamp on the wrong channel only.
        let probs = two_class(&[1.0, 0.0, 0.0, 1.0], 1, 4);
        assert!(cross_entropy(&probs, &mask, dims(1, 2, 2)).unwrap() <= 1e-6);
    }

    #[test]
    fn cross_entropy_uniform_is_ln2() {
        let probs = vec![0.5; 2 * 16];
        let mask: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let ce = cross_entropy(&probs, &mask, dims(1, 4, 4)).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_shape_mismatch() {
        assert!(cross_entropy(&[0.5; 8], &[1.0; 3], dims(1, 2, 2)).is_err());
    }

    #[test]
    fn dice_examples() {
        let y = [1.0, 0.0, 1.0, 1.0];
        assert!((soft_dice_term(&y, &y, 1.0).unwrap() + 1.0).abs() < 1e-12);
        let zeros = [0.0; 4];
        assert!((soft_dice_term(&zeros, &zeros, 1.0).unwrap() + 1.0).abs() < 1e-12);
        let n = 1_000_000;
        let ones = vec![1.0; n];
        let half = vec![0.5; n];
        let d = soft_dice_term(&half, &ones, 1.0).unwrap();
        assert!((d + 2.0 / 3.0).abs() < 1e-6, "{d}");
    }

    #[test]
    fn segmentation_loss_alpha_zero_is_cross_entropy() {
        let mask = [1.0, 0.0, 0.0, 1.0];
        let probs = two_class(&[0.9, 0.2, 0.3, 0.8], 1, 4);
        let ce = cross_entropy(&probs, &mask, dims(1, 2, 2)).unwrap();
        let seg = segmentation_loss(&probs, &mask, dims(1, 2, 2), 0.0, 1.0).unwrap();
        assert_eq!(seg, ce);
    }

    #[test]
    fn lsgan_examples() {
        assert_eq!(lsgan_d_loss(&[1.0; 4], &[0.0; 4]).unwrap(), 0.0);
        assert_eq!(lsgan_d_loss(&[0.5; 4], &[0.5; 9]).unwrap(), 0.5);
        assert_eq!(lsgan_d_loss(&[0.0; 4], &[1.0; 4]).unwrap(), 2.0);
        assert_eq!(lsgan_g_adv_loss(&[0.0; 4]).unwrap(), 0.0);
        assert_eq!(lsgan_g_adv_loss(&[1.0; 4]).unwrap(), 1.0);
        assert_eq!(lsgan_g_adv_loss(&[0.5; 4]).unwrap(), 0.25);
        assert!(lsgan_d_loss(&[f64::NAN], &[0.0]).is_err());
        assert!(lsgan_g_adv_loss(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn total_objective_respects_variant() {
        let mut cfg = ExperimentConfig::default();
        let terms = LossTerms {
            seg_ce: 0.5,
            seg_dice: 0.0,
            adv_img_g: 0.25,
            adv_feat_g: 0.16,
            d_img: 0.4,
            d_feat: 0.3,
        };
        let full = total_generator_objective(&terms, &cfg);
        assert!((full.total_g - 0.5013).abs() < 1e-12);

        cfg.variant = Variant::Na;
        let na = total_generator_objective(&terms, &cfg);
        assert_eq!(na.total_g, 0.5);
        assert_eq!((na.adv_img_g, na.adv_feat_g, na.d_img, na.d_feat), (0.0, 0.0, 0.0, 0.0));

        cfg.variant = Variant::Ia;
        let ia = total_generator_objective(&terms, &cfg);
        assert_eq!(ia.adv_feat_g, 0.0);
        assert!((ia.total_g - 0.5005).abs() < 1e-12);

        cfg.variant = Variant::Fa;
        let fa = total_generator_objective(&terms, &cfg);
        assert_eq!(fa.adv_img_g, 0.0);
        assert!((fa.total_g - 0.5008).abs() < 1e-12);
    }
}
