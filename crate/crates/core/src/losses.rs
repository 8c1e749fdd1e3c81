//! Training objectives with analytic gradients.
//!
//! Every dense loss takes flat slices of equal length and returns its value
//! together with the gradient with respect to the prediction. Masks and
//! weights are 0/1 valued slices of the same length.

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_cls: f64,
    pub beta_contour: f64,
    pub lambda_iou: f64,
    /// Smoothing term of the dice and IoU ratios.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cls: 0.01,
            beta_contour: 0.1,
            lambda_iou: 1.0,
            epsilon: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_cls,
            self.beta_contour,
            self.lambda_iou,
            self.epsilon,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "loss weights must be finite and >= 0: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Value and prediction gradient of one loss term.
#[derive(Debug, Clone)]
pub struct LossTerm<F> {
    pub value: F,
    pub grad: Vec<F>,
    /// No pixel contributed; value and gradient are zero.
    pub empty: bool,
}

impl<F: Scalar> LossTerm<F> {
    fn zero(n: usize) -> Self {
        LossTerm {
            value: F::zero(),
            grad: vec![F::zero(); n],
            empty: true,
        }
    }
}

/// `1 - 2 Σ(p·g) / (Σp + Σg + ε)` over unmasked pixels.
pub fn dice_loss<F: Scalar>(pred: &[F], gt: &[F], mask: &[F], eps: F) -> LossTerm<F> {
    assert!(
        pred.len() == gt.len() && gt.len() == mask.len(),
        "dice_loss: shape mismatch"
    );
    if mask.iter().all(|&m| m == F::zero()) {
        return LossTerm::zero(pred.len());
    }
    let mut inter = F::zero();
    let mut sum = F::zero();
    for i in 0..pred.len() {
        let (p, g) = (pred[i] * mask[i], gt[i] * mask[i]);
        inter += p * g;
        sum += p + g;
    }
    let denom = sum + eps;
    let two = F::lit(2.0);
    let value = F::one() - two * inter / denom;
    let grad = (0..pred.len())
        .map(|i| {
            let g = gt[i] * mask[i];
            mask[i] * (two * inter / (denom * denom) - two * g / denom)
        })
        .collect();
    LossTerm {
        value,
        grad,
        empty: false,
    }
}

/// `-ln((I + ε) / (U + ε))` for one pixel, where both boxes share the pixel and
/// are given as `(top, right, bottom, left)` distances.
pub fn iou_box_loss<F: Scalar>(pred: [F; 4], gt: [F; 4], eps: F) -> F {
    let [pt, pr, pb, pl] = pred;
    let [gt_, gr, gb, gl] = gt;
    let area_p = (pt + pb) * (pl + pr);
    let area_g = (gt_ + gb) * (gl + gr);
    let inter = (pt.min(gt_) + pb.min(gb)) * (pl.min(gl) + pr.min(gr));
    let union = area_p + area_g - inter;
    -((inter + eps) / (union + eps)).ln()
}

fn iou_box_loss_grad<F: Scalar>(pred: [F; 4], gt: [F; 4], eps: F) -> (F, [F; 4]) {
    let [pt, pr, pb, pl] = pred;
    let [gt_, gr, gb, gl] = gt;
    let hp = pt + pb;
    let wp = pl + pr;
    let hi = pt.min(gt_) + pb.min(gb);
    let wi = pl.min(gl) + pr.min(gr);
    let area_p = hp * wp;
    let area_g = (gt_ + gb) * (gl + gr);
    let inter = hi * wi;
    let union = area_p + area_g - inter;
    let value = -((inter + eps) / (union + eps)).ln();
    let ind = |p: F, g: F| if p < g { F::one() } else { F::zero() };
    // dI/d(top,right,bottom,left) and dA_pred/d(...)
    let di = [
        wi * ind(pt, gt_),
        hi * ind(pr, gr),
        wi * ind(pb, gb),
        hi * ind(pl, gl),
    ];
    let da = [wp, hp, wp, hp];
    let mut g = [F::zero(); 4];
    for c in 0..4 {
        let du = da[c] - di[c];
        g[c] = -di[c] / (inter + eps) + du / (union + eps);
    }
    (value, g)
}

/// Geometry loss over four distance channels.
#[derive(Debug, Clone)]
pub struct BoxLossTerm<F> {
    pub value: F,
    pub grad: [Vec<F>; 4],
    pub empty: bool,
}

/// Mean per-pixel IoU loss over pixels with nonzero `weight`.
pub fn dense_iou_loss<F: Scalar>(
    pred: [&[F]; 4],
    gt: [&[F]; 4],
    weight: &[F],
    eps: F,
) -> BoxLossTerm<F> {
    let n = weight.len();
    let total: F = weight.iter().copied().sum();
    let mut grad: [Vec<F>; 4] = std::array::from_fn(|_| vec![F::zero(); n]);
    if total <= F::zero() {
        return BoxLossTerm {
            value: F::zero(),
            grad,
            empty: true,
        };
    }
    let mut value = F::zero();
    for i in 0..n {
        if weight[i] == F::zero() {
            continue;
        }
        let p = [pred[0][i], pred[1][i], pred[2][i], pred[3][i]];
        let g = [gt[0][i], gt[1][i], gt[2][i], gt[3][i]];
        let (v, dg) = iou_box_loss_grad(p, g, eps);
        value += weight[i] * v;
        for c in 0..4 {
            grad[c][i] = weight[i] * dg[c] / total;
        }
    }
    BoxLossTerm {
        value: value / total,
        grad,
        empty: false,
    }
}

/// Mean of `1 - cos(pred - gt)` over pixels with nonzero `weight`.
pub fn angle_loss<F: Scalar>(pred: &[F], gt: &[F], weight: &[F]) -> LossTerm<F> {
    assert!(
        pred.len() == gt.len() && gt.len() == weight.len(),
        "angle_loss: shape mismatch"
    );
    let total: F = weight.iter().copied().sum();
    if total <= F::zero() {
        return LossTerm::zero(pred.len());
    }
    let mut value = F::zero();
    let mut grad = vec![F::zero(); pred.len()];
    for i in 0..pred.len() {
        if weight[i] == F::zero() {
            continue;
        }
        let d = pred[i] - gt[i];
        value += weight[i] * (F::one() - d.cos());
        grad[i] = weight[i] * d.sin() / total;
    }
    LossTerm {
        value: value / total,
        grad,
        empty: false,
    }
}

/// Mean squared error over unmasked pixels.
pub fn contour_loss<F: Scalar>(pred: &[F], gt: &[F], mask: &[F]) -> LossTerm<F> {
    assert!(
        pred.len() == gt.len() && gt.len() == mask.len(),
        "contour_loss: shape mismatch"
    );
    let total: F = mask.iter().copied().sum();
    if total <= F::zero() {
        return LossTerm::zero(pred.len());
    }
    let mut value = F::zero();
    let two = F::lit(2.0);
    let grad = (0..pred.len())
        .map(|i| {
            let d = pred[i] - gt[i];
            value += mask[i] * d * d;
            two * mask[i] * d / total
        })
        .collect();
    LossTerm {
        value: value / total,
        grad,
        empty: false,
    }
}

/// Scalar loss components of one step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossComponents {
    pub l_score: f64,
    pub l_iou: f64,
    pub l_theta: f64,
    pub l_contour: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_score: f64,
    pub l_iou: f64,
    pub l_theta: f64,
    pub l_geo: f64,
    /// `None` when the model has no contour task.
    pub l_contour: Option<f64>,
    pub l_total: f64,
    /// Set when a term had no contributing pixels.
    #[serde(default)]
    pub empty_terms: bool,
}

impl LossReport {
    /// Recomputes the total from the components.
    pub fn recompute_total(&self, w: &LossWeights) -> f64 {
        let l_geo = w.lambda_iou * self.l_iou + self.l_theta;
        l_geo + w.lambda_cls * self.l_score + w.beta_contour * self.l_contour.unwrap_or(0.0)
    }

    pub fn is_consistent(&self, w: &LossWeights, tol: f64) -> bool {
        let geo = w.lambda_iou * self.l_iou + self.l_theta;
        (geo - self.l_geo).abs() <= tol && (self.recompute_total(w) - self.l_total).abs() <= tol
    }
}

/// Weighted joint objective: `L_geo + λ_cls·L_score (+ β·L_contour)`,
/// with `L_geo = λ_iou·L_iou + L_θ`.
pub fn total_loss(c: &LossComponents, w: &LossWeights, with_contour: bool) -> Result<LossReport> {
    let named = [
        ("l_score", c.l_score),
        ("l_iou", c.l_iou),
        ("l_theta", c.l_theta),
        ("l_contour", c.l_contour),
    ];
    for (name, v) in named {
        if !v.is_finite() && (name != "l_contour" || with_contour) {
            return Err(Error::NonFinite {
                what: format!("loss term {name} = {v}"),
            });
        }
    }
    let l_geo = w.lambda_iou * c.l_iou + c.l_theta;
    let l_contour = with_contour.then_some(c.l_contour);
    let l_total = l_geo + w.lambda_cls * c.l_score + l_contour.map_or(0.0, |v| w.beta_contour * v);
    Ok(LossReport {
        l_score: c.l_score,
        l_iou: c.l_iou,
        l_theta: c.l_theta,
        l_geo,
        l_contour,
        l_total,
        empty_terms: false,
    })
}
