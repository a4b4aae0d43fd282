//! Residual target encoding, anchor assignment, and the four-term
//! detection loss.
//!
//! Box targets are the normalized residuals between ground truth and
//! anchors with a sine-encoded angle. Classification is a two-sided focal
//! loss on sigmoid probabilities, direction a two-bin softmax
//! cross-entropy, and the basis similarity term is folded in with its own
//! coefficient when the dynamic head is active.

use crate::error::{Error, Result};
use crate::fusion::{HeadOutput, ANCHORS_PER_CELL, BOX_CODE, DIR_BINS};
use crate::pointcloud::GroundTruthBox;
use crate::tensor::{sc, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub center: (f64, f64, f64),
    /// (w, l, h): w across the heading, l along it.
    pub size: (f64, f64, f64),
    /// One of 0 or pi/2 in the default two-anchor layout.
    pub yaw: f64,
}

/// Normalized regression targets; the angle residual is a sine.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxResiduals {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dw: f64,
    pub dl: f64,
    pub dh: f64,
    pub dtheta: f64,
}

impl BoxResiduals {
    pub fn to_array(self) -> [f64; BOX_CODE] {
        [self.dx, self.dy, self.dz, self.dw, self.dl, self.dh, self.dtheta]
    }

    pub fn from_array(a: [f64; BOX_CODE]) -> Self {
        BoxResiduals {
            dx: a[0],
            dy: a[1],
            dz: a[2],
            dw: a[3],
            dl: a[4],
            dh: a[5],
            dtheta: a[6],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub beta_loc: f64,
    pub beta_cls: f64,
    pub beta_dir: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda_sim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta_loc: 2.0,
            beta_cls: 1.0,
            beta_dir: 0.2,
            alpha: 0.25,
            gamma: 2.0,
            lambda_sim: 0.1,
        }
    }
}

/// `dx = (x_gt - x_a) / d_a` with `d_a = sqrt(w_a^2 + l_a^2)`, z scaled by
/// the anchor height, log-ratio sizes, sine angle.
pub fn encode_residuals(gt: &GroundTruthBox, anchor: &Anchor) -> Result<BoxResiduals> {
    let (wa, la, ha) = anchor.size;
    let (wg, lg, hg) = gt.size;
    if wg <= 0.0 || lg <= 0.0 || hg <= 0.0 {
        return Err(Error::arg(format!("ground-truth size must be positive, got {:?}", gt.size)));
    }
    if wa <= 0.0 || la <= 0.0 || ha <= 0.0 {
        return Err(Error::arg("anchor size must be positive"));
    }
    let d = wa.hypot(la);
    Ok(BoxResiduals {
        dx: (gt.center.0 - anchor.center.0) / d,
        dy: (gt.center.1 - anchor.center.1) / d,
        dz: (gt.center.2 - anchor.center.2) / ha,
        dw: (wg / wa).ln(),
        dl: (lg / la).ln(),
        dh: (hg / ha).ln(),
        dtheta: (gt.yaw - anchor.yaw).sin(),
    })
}

/// Exact algebraic inverse; the angle comes back through the arcsine, so
/// it is faithful for `|yaw_gt - yaw_a| <= pi/2`.
pub fn decode_residuals(r: &BoxResiduals, anchor: &Anchor) -> Result<GroundTruthBox> {
    if r.dtheta.abs() > 1.0 {
        return Err(Error::arg(format!("sine residual {} outside [-1, 1]", r.dtheta)));
    }
    let (wa, la, ha) = anchor.size;
    let d = wa.hypot(la);
    Ok(GroundTruthBox {
        center: (
            anchor.center.0 + r.dx * d,
            anchor.center.1 + r.dy * d,
            anchor.center.2 + r.dz * ha,
        ),
        size: (wa * r.dw.exp(), la * r.dl.exp(), ha * r.dh.exp()),
        yaw: anchor.yaw + r.dtheta.asin(),
    })
}

/// Huber-style penalty with the kink at 1.
pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

const PROB_CLAMP: f64 = 1e-7;

/// Two-sided focal loss on a probability.
pub fn focal_loss(p: f64, is_positive: bool, weights: &LossWeights) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if is_positive {
        -weights.alpha * (1.0 - p).powf(weights.gamma) * p.ln()
    } else {
        -(1.0 - weights.alpha) * p.powf(weights.gamma) * (1.0 - p).ln()
    }
}

/// d(focal)/d(logit) where p = sigmoid(logit).
pub fn focal_loss_grad_logit(p: f64, is_positive: bool, weights: &LossWeights) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (a, g) = (weights.alpha, weights.gamma);
    let dp = if is_positive {
        -a * (-g * (1.0 - p).powf(g - 1.0) * p.ln() + (1.0 - p).powf(g) / p)
    } else {
        -(1.0 - a) * (g * p.powf(g - 1.0) * (1.0 - p).ln() - p.powf(g) / (1.0 - p))
    };
    dp * p * (1.0 - p)
}

/// Two-class softmax cross-entropy against the heading bin
/// (bin 1 when the ground-truth yaw is non-negative).
pub fn direction_loss(logits: [f64; DIR_BINS], yaw_gt: f64) -> f64 {
    let target = direction_bin(yaw_gt);
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

pub fn direction_loss_grad(logits: [f64; DIR_BINS], yaw_gt: f64) -> [f64; DIR_BINS] {
    let target = direction_bin(yaw_gt);
    let m = logits[0].max(logits[1]);
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    let denom = e0 + e1;
    let mut g = [e0 / denom, e1 / denom];
    g[target] -= 1.0;
    g
}

pub fn direction_bin(yaw_gt: f64) -> usize {
    if yaw_gt >= 0.0 {
        1
    } else {
        0
    }
}

/// Axis-aligned bird's-eye bounding rectangle of a yawed footprint.
fn bev_aabb(center: (f64, f64), size_wl: (f64, f64), yaw: f64) -> (f64, f64, f64, f64) {
    let (w, l) = size_wl;
    let (s, c) = (yaw.sin().abs(), yaw.cos().abs());
    let half_x = 0.5 * (c * l + s * w);
    let half_y = 0.5 * (s * l + c * w);
    (
        center.0 - half_x,
        center.0 + half_x,
        center.1 - half_y,
        center.1 + half_y,
    )
}

/// IoU of the axis-aligned BEV rectangles of two boxes.
pub fn bev_iou(
    a_center: (f64, f64),
    a_size: (f64, f64),
    a_yaw: f64,
    b_center: (f64, f64),
    b_size: (f64, f64),
    b_yaw: f64,
) -> f64 {
    let (ax0, ax1, ay0, ay1) = bev_aabb(a_center, a_size, a_yaw);
    let (bx0, bx1, by0, by1) = bev_aabb(b_center, b_size, b_yaw);
    let ix = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let iy = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = ix * iy;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Regular two-anchor-per-cell grid over the head resolution.
#[derive(Debug, Clone)]
pub struct AnchorGrid {
    pub h: usize,
    pub w: usize,
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, Copy)]
pub struct AnchorSpec {
    pub size: (f64, f64, f64),
    pub z: f64,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            size: (1.6, 3.9, 1.56),
            z: -1.0,
        }
    }
}

impl AnchorGrid {
    /// Anchors at head-cell centers; `stride_m` is the metric step of one
    /// head cell, `origin` the crop minimum.
    pub fn new(h: usize, w: usize, origin: (f64, f64), stride_m: (f64, f64), spec: AnchorSpec) -> Self {
        let yaws = [0.0, std::f64::consts::FRAC_PI_2];
        let mut anchors = Vec::with_capacity(h * w * ANCHORS_PER_CELL);
        for row in 0..h {
            for col in 0..w {
                let cx = origin.0 + (row as f64 + 0.5) * stride_m.0;
                let cy = origin.1 + (col as f64 + 0.5) * stride_m.1;
                for yaw in yaws {
                    anchors.push(Anchor {
                        center: (cx, cy, spec.z),
                        size: spec.size,
                        yaw,
                    });
                }
            }
        }
        AnchorGrid { h, w, anchors }
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnchorLabel {
    Positive { gt: usize },
    Negative,
    Ignored,
}

#[derive(Debug, Clone)]
pub struct AnchorTargets {
    pub labels: Vec<AnchorLabel>,
    /// Residual targets for positive anchors, indexed like `labels`.
    pub residuals: Vec<Option<BoxResiduals>>,
    pub dir_bins: Vec<Option<usize>>,
    pub n_pos: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AssignThresholds {
    pub positive: f64,
    pub negative: f64,
}

impl Default for AssignThresholds {
    fn default() -> Self {
        AssignThresholds {
            positive: 0.6,
            negative: 0.45,
        }
    }
}

/// BEV-IoU matching: an anchor is positive above the threshold or as the
/// argmax for some ground-truth box, negative below the lower threshold,
/// ignored in between.
pub fn assign_targets(
    grid: &AnchorGrid,
    gts: &[GroundTruthBox],
    thresholds: AssignThresholds,
) -> Result<AnchorTargets> {
    let n = grid.len();
    let mut best_iou = vec![0.0f64; n];
    let mut best_gt = vec![usize::MAX; n];

    for (gi, gt) in gts.iter().enumerate() {
        for (ai, anchor) in grid.anchors.iter().enumerate() {
            let iou = bev_iou(
                (anchor.center.0, anchor.center.1),
                (anchor.size.0, anchor.size.1),
                anchor.yaw,
                (gt.center.0, gt.center.1),
                (gt.size.0, gt.size.1),
                gt.yaw,
            );
            if iou > best_iou[ai] {
                best_iou[ai] = iou;
                best_gt[ai] = gi;
            }
        }
    }

    let mut labels = vec![AnchorLabel::Negative; n];
    for ai in 0..n {
        if best_iou[ai] >= thresholds.positive {
            labels[ai] = AnchorLabel::Positive { gt: best_gt[ai] };
        } else if best_iou[ai] >= thresholds.negative {
            labels[ai] = AnchorLabel::Ignored;
        }
    }
    // Force the argmax anchor of every ground truth positive (first max on
    // ties keeps the result deterministic).
    for (gi, gt) in gts.iter().enumerate() {
        let mut best = 0.0;
        let mut best_ai = None;
        for (ai, anchor) in grid.anchors.iter().enumerate() {
            let iou = bev_iou(
                (anchor.center.0, anchor.center.1),
                (anchor.size.0, anchor.size.1),
                anchor.yaw,
                (gt.center.0, gt.center.1),
                (gt.size.0, gt.size.1),
                gt.yaw,
            );
            if iou > best {
                best = iou;
                best_ai = Some(ai);
            }
        }
        if let Some(ai) = best_ai {
            labels[ai] = AnchorLabel::Positive { gt: gi };
        }
    }

    let mut residuals = vec![None; n];
    let mut dir_bins = vec![None; n];
    let mut n_pos = 0;
    for ai in 0..n {
        if let AnchorLabel::Positive { gt } = labels[ai] {
            residuals[ai] = Some(encode_residuals(&gts[gt], &grid.anchors[ai])?);
            dir_bins[ai] = Some(direction_bin(gts[gt].yaw));
            n_pos += 1;
        }
    }
    Ok(AnchorTargets {
        labels,
        residuals,
        dir_bins,
        n_pos,
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossBreakdown {
    pub loc: f64,
    pub cls: f64,
    pub dir: f64,
    /// Raw similarity loss (before its coefficient); zero when inactive.
    pub sim: f64,
    pub total: f64,
    pub n_pos: usize,
}

/// Gradients of the total loss w.r.t. the three head output tensors.
pub struct HeadGrads<S: Scalar> {
    pub d_boxes: Tensor<S>,
    pub d_cls: Tensor<S>,
    pub d_dir: Tensor<S>,
}

/// Weighted sum per the detection loss, normalized by the clamped positive
/// count, plus `lambda_sim * sim` when a similarity loss is supplied.
/// Returns the per-term breakdown and the gradients w.r.t. head outputs.
pub fn total_loss<S: Scalar>(
    head: &HeadOutput<S>,
    targets: &AnchorTargets,
    weights: &LossWeights,
    sim: Option<f64>,
) -> Result<(LossBreakdown, HeadGrads<S>)> {
    let (h, w) = (head.cls.dim(0), head.cls.dim(1));
    let expected = h * w * ANCHORS_PER_CELL;
    if targets.labels.len() != expected {
        return Err(Error::shape(format!(
            "{} anchor targets for a {h}x{w} head ({} expected)",
            targets.labels.len(),
            expected
        )));
    }

    let n_pos = targets.n_pos.max(1) as f64;
    let mut loc = 0.0;
    let mut cls = 0.0;
    let mut dir = 0.0;
    let mut d_boxes = Tensor::zeros(head.boxes.shape());
    let mut d_cls = Tensor::zeros(head.cls.shape());
    let mut d_dir = Tensor::zeros(head.dir.shape());

    let loc_scale = weights.beta_loc / n_pos;
    let cls_scale = weights.beta_cls / n_pos;
    let dir_scale = weights.beta_dir / n_pos;

    for ai in 0..targets.labels.len() {
        let cell = ai / ANCHORS_PER_CELL;
        let a = ai % ANCHORS_PER_CELL;
        let (row, col) = (cell / w, cell % w);

        let logit = head.cls.at(&[row, col, a]).into_f64();
        let p = 1.0 / (1.0 + (-logit).exp());
        match targets.labels[ai] {
            AnchorLabel::Positive { .. } => {
                cls += focal_loss(p, true, weights);
                let g = focal_loss_grad_logit(p, true, weights) * cls_scale;
                let off = d_cls.offset(&[row, col, a]);
                d_cls.data_mut()[off] = sc(g);

                let res = targets.residuals[ai].expect("positive anchor must carry residuals");
                let target = res.to_array();
                for (bi, &t) in target.iter().enumerate() {
                    let pred = head.boxes.at(&[row, col, a * BOX_CODE + bi]).into_f64();
                    let err = pred - t;
                    loc += smooth_l1(err);
                    let off = d_boxes.offset(&[row, col, a * BOX_CODE + bi]);
                    d_boxes.data_mut()[off] = sc(smooth_l1_grad(err) * loc_scale);
                }

                let bin = targets.dir_bins[ai].expect("positive anchor must carry a bin");
                let logits = [
                    head.dir.at(&[row, col, a * DIR_BINS]).into_f64(),
                    head.dir.at(&[row, col, a * DIR_BINS + 1]).into_f64(),
                ];
                // direction_loss re-derives the bin from the yaw sign, so
                // feed it a representative yaw for the stored bin.
                let yaw = if bin == 1 { 1.0 } else { -1.0 };
                dir += direction_loss(logits, yaw);
                let g = direction_loss_grad(logits, yaw);
                for (d, gv) in g.iter().enumerate() {
                    let off = d_dir.offset(&[row, col, a * DIR_BINS + d]);
                    d_dir.data_mut()[off] = sc(gv * dir_scale);
                }
            }
            AnchorLabel::Negative => {
                cls += focal_loss(p, false, weights);
                let g = focal_loss_grad_logit(p, false, weights) * cls_scale;
                let off = d_cls.offset(&[row, col, a]);
                d_cls.data_mut()[off] = sc(g);
            }
            AnchorLabel::Ignored => {}
        }
    }

    let sim_value = sim.unwrap_or(0.0);
    let detection = (weights.beta_loc * loc + weights.beta_cls * cls + weights.beta_dir * dir)
        / n_pos;
    let total = detection + weights.lambda_sim * sim_value;
    if !total.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok((
        LossBreakdown {
            loc,
            cls,
            dir,
            sim: sim_value,
            total,
            n_pos: targets.n_pos,
        },
        HeadGrads {
            d_boxes,
            d_cls,
            d_dir,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn car_anchor() -> Anchor {
        Anchor {
            center: (0.0, 0.0, -1.0),
            size: (1.6, 3.9, 1.56),
            yaw: 0.0,
        }
    }

    #[test]
    fn identical_boxes_have_zero_residuals() {
        let a = car_anchor();
        let gt = GroundTruthBox {
            center: a.center,
            size: a.size,
            yaw: a.yaw,
        };
        let r = encode_residuals(&gt, &a).unwrap();
        assert_eq!(r.to_array(), [0.0; 7]);
    }

    #[test]
    fn unit_x_offset_matches_diagonal_normalization() {
        let a = car_anchor();
        let mut gt = GroundTruthBox {
            center: a.center,
            size: a.size,
            yaw: 0.0,
        };
        gt.center.0 += 1.0;
        let r = encode_residuals(&gt, &a).unwrap();
        // d = sqrt(1.6^2 + 3.9^2) = sqrt(17.77)
        assert!((r.dx - 1.0 / 17.77f64.sqrt()).abs() < 1e-5);
        assert!((r.dx - 0.23722).abs() < 1e-5);
    }

    #[test]
    fn quarter_turn_gives_unit_sine() {
        let a = car_anchor();
        let gt = GroundTruthBox {
            center: a.center,
            size: a.size,
            yaw: FRAC_PI_2,
        };
        let r = encode_residuals(&gt, &a).unwrap();
        assert!((r.dtheta - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decode_inverts_encode_within_quarter_turn() {
        let a = car_anchor();
        for (dx, yaw) in [(0.0, 0.0), (1.5, 0.7), (-2.0, -1.2), (0.3, 1.5)] {
            let gt = GroundTruthBox {
                center: (a.center.0 + dx, a.center.1 - 0.5, a.center.2 + 0.2),
                size: (1.9, 4.4, 1.4),
                yaw,
            };
            let r = encode_residuals(&gt, &a).unwrap();
            let back = decode_residuals(&r, &a).unwrap();
            assert!((back.center.0 - gt.center.0).abs() < 1e-12);
            assert!((back.center.1 - gt.center.1).abs() < 1e-12);
            assert!((back.center.2 - gt.center.2).abs() < 1e-12);
            assert!((back.size.0 - gt.size.0).abs() < 1e-12);
            assert!((back.size.1 - gt.size.1).abs() < 1e-12);
            assert!((back.size.2 - gt.size.2).abs() < 1e-12);
            assert!((back.yaw - gt.yaw).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_residuals_decode_to_the_anchor() {
        let a = car_anchor();
        let r = BoxResiduals::from_array([0.0; 7]);
        let gt = decode_residuals(&r, &a).unwrap();
        assert_eq!(gt.center, a.center);
        assert_eq!(gt.size, a.size);
        assert_eq!(gt.yaw, a.yaw);
    }

    #[test]
    fn log_width_residual_doubles_the_anchor_width() {
        let a = car_anchor();
        let mut arr = [0.0; 7];
        arr[3] = 2.0f64.ln();
        let gt = decode_residuals(&BoxResiduals::from_array(arr), &a).unwrap();
        assert!((gt.size.0 - 2.0 * a.size.0).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_sine_is_rejected() {
        let a = car_anchor();
        let mut arr = [0.0; 7];
        arr[6] = 1.5;
        assert!(decode_residuals(&BoxResiduals::from_array(arr), &a).is_err());
    }

    #[test]
    fn smooth_l1_branch_values() {
        assert_eq!(smooth_l1(0.0), 0.0);
        assert_eq!(smooth_l1(0.5), 0.125);
        assert_eq!(smooth_l1(2.0), 1.5);
        assert_eq!(smooth_l1(-2.0), 1.5);
        // continuity and slope continuity at the kink
        assert!((smooth_l1(1.0 - 1e-9) - smooth_l1(1.0 + 1e-9)).abs() < 1e-8);
        assert!((smooth_l1_grad(1.0 - 1e-9) - smooth_l1_grad(1.0 + 1e-9)).abs() < 1e-8);
    }

    #[test]
    fn focal_loss_reference_values() {
        let w = LossWeights::default();
        // 0.25 * 0.25 * ln 2
        assert!((focal_loss(0.5, true, &w) - 0.043321698784997).abs() < 1e-9);
        assert!(focal_loss(1.0 - 1e-9, true, &w) < 1e-6);
        // gamma = 0, alpha = 1 degenerates to plain cross-entropy
        let ce = LossWeights {
            alpha: 1.0,
            gamma: 0.0,
            ..w
        };
        let p = 0.37;
        assert!((focal_loss(p, true, &ce) + p.ln()).abs() < 1e-12);
    }

    #[test]
    fn focal_loss_decreases_in_p_for_positives() {
        let w = LossWeights::default();
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let l = focal_loss(p, true, &w);
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn direction_loss_reference_values() {
        assert!((direction_loss([0.0, 0.0], 0.3) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(direction_loss([-30.0, 30.0], 0.3) < 1e-12);
        // matches the softmax cross-entropy formula on a random case
        let logits = [0.7f64, -1.3];
        let want = -((logits[0].exp()) / (logits[0].exp() + logits[1].exp())).ln();
        assert!((direction_loss(logits, -0.5) - want).abs() < 1e-12);
    }

    #[test]
    fn bev_iou_exact_and_disjoint() {
        let c = (0.0, 0.0);
        let s = (1.6, 3.9);
        assert!((bev_iou(c, s, 0.0, c, s, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(c, s, 0.0, (100.0, 0.0), s, 0.0), 0.0);
        // quarter-turned same box: intersection is the 1.6 x 1.6 core
        let iou = bev_iou(c, s, 0.0, c, s, FRAC_PI_2);
        let inter = 1.6 * 1.6;
        let union = 2.0 * 1.6 * 3.9 - inter;
        assert!((iou - inter / union).abs() < 1e-12);
    }

    #[test]
    fn bev_iou_matches_rasterization_oracle() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let a_c = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let b_c = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let a_s = (rng.random_range(0.5..3.0), rng.random_range(0.5..4.0));
            let b_s = (rng.random_range(0.5..3.0), rng.random_range(0.5..4.0));
            let a_yaw = rng.random_range(-PI..PI);
            let b_yaw = rng.random_range(-PI..PI);
            let got = bev_iou(a_c, a_s, a_yaw, b_c, b_s, b_yaw);

            // Rasterize the two AABBs on a fine grid.
            let (ax0, ax1, ay0, ay1) = bev_aabb(a_c, a_s, a_yaw);
            let (bx0, bx1, by0, by1) = bev_aabb(b_c, b_s, b_yaw);
            let (x0, x1) = (ax0.min(bx0), ax1.max(bx1));
            let (y0, y1) = (ay0.min(by0), ay1.max(by1));
            let n = 400;
            let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
            let (mut ia, mut ib, mut iboth) = (0u64, 0u64, 0u64);
            for i in 0..n {
                for j in 0..n {
                    let x = x0 + (i as f64 + 0.5) * dx;
                    let y = y0 + (j as f64 + 0.5) * dy;
                    let in_a = x >= ax0 && x < ax1 && y >= ay0 && y < ay1;
                    let in_b = x >= bx0 && x < bx1 && y >= by0 && y < by1;
                    ia += in_a as u64;
                    ib += in_b as u64;
                    iboth += (in_a && in_b) as u64;
                }
            }
            let union = (ia + ib - iboth) as f64;
            let want = if union == 0.0 { 0.0 } else { iboth as f64 / union };
            assert!((got - want).abs() < 1e-2, "{got} vs {want}");
        }
    }

    #[test]
    fn assignment_labels_follow_thresholds_and_argmax() {
        let grid = AnchorGrid::new(2, 2, (0.0, 0.0), (4.0, 4.0), AnchorSpec::default());
        // One gt exactly on the (0, 0) anchor with yaw 0.
        let gts = vec![GroundTruthBox {
            center: (2.0, 2.0, -1.0),
            size: (1.6, 3.9, 1.56),
            yaw: 0.0,
        }];
        let t = assign_targets(&grid, &gts, AssignThresholds::default()).unwrap();
        assert_eq!(t.labels[0], AnchorLabel::Positive { gt: 0 });
        assert!(t.n_pos >= 1);
        // Far-away anchors are negative.
        assert_eq!(*t.labels.last().unwrap(), AnchorLabel::Negative);
        // No gt at all: everything negative, n_pos = 0.
        let empty = assign_targets(&grid, &[], AssignThresholds::default()).unwrap();
        assert_eq!(empty.n_pos, 0);
        assert!(empty.labels.iter().all(|l| *l == AnchorLabel::Negative));
    }

    #[test]
    fn perfect_predictions_and_orthogonal_bases_give_near_zero_loss() {
        use crate::tensor::Tensor;
        let grid = AnchorGrid::new(1, 1, (0.0, 0.0), (4.0, 4.0), AnchorSpec::default());
        let gts = vec![GroundTruthBox {
            center: (2.0, 2.0, -1.0),
            size: (1.6, 3.9, 1.56),
            yaw: 0.0,
        }];
        let targets = assign_targets(&grid, &gts, AssignThresholds::default()).unwrap();
        assert_eq!(targets.n_pos, 1);

        // Build head outputs that exactly match the targets.
        let mut boxes = Tensor::<f64>::zeros(&[1, 1, 14]);
        let res = targets.residuals[0].unwrap().to_array();
        for (i, &v) in res.iter().enumerate() {
            boxes.set(&[0, 0, i], v);
        }
        let mut cls = Tensor::<f64>::zeros(&[1, 1, 2]);
        cls.set(&[0, 0, 0], 40.0); // positive anchor: p ~= 1
        cls.set(&[0, 0, 1], -40.0); // negative anchor: p ~= 0
        let mut dir = Tensor::<f64>::zeros(&[1, 1, 4]);
        dir.set(&[0, 0, 1], 40.0); // bin 1 for yaw 0

        let head = HeadOutput { boxes, cls, dir };
        let (bd, _) = total_loss(&head, &targets, &LossWeights::default(), Some(0.0)).unwrap();
        assert!(bd.total < 1e-6, "{bd:?}");
    }

    #[test]
    fn doubling_residual_error_increases_loc_loss() {
        use crate::tensor::Tensor;
        let grid = AnchorGrid::new(1, 1, (0.0, 0.0), (4.0, 4.0), AnchorSpec::default());
        let gts = vec![GroundTruthBox {
            center: (2.4, 1.7, -1.2),
            size: (1.7, 4.1, 1.5),
            yaw: 0.4,
        }];
        let targets = assign_targets(&grid, &gts, AssignThresholds::default()).unwrap();
        let weights = LossWeights::default();
        let mut prev = -1.0;
        for scale in [0.0, 0.5, 1.0, 2.0] {
            let mut boxes = Tensor::<f64>::zeros(&[1, 1, 14]);
            for ai in 0..2 {
                if let Some(res) = targets.residuals[ai] {
                    for (i, &v) in res.to_array().iter().enumerate() {
                        // prediction offset from the target grows with scale
                        boxes.set(&[0, 0, ai * 7 + i], v + scale * 0.3);
                    }
                }
            }
            let head = HeadOutput {
                boxes,
                cls: Tensor::zeros(&[1, 1, 2]),
                dir: Tensor::zeros(&[1, 1, 4]),
            };
            let (bd, _) = total_loss(&head, &targets, &weights, None).unwrap();
            assert!(bd.loc > prev, "{} vs {prev}", bd.loc);
            prev = bd.loc;
        }
    }

    #[test]
    fn loss_is_linear_in_the_beta_weights() {
        use crate::tensor::Tensor;
        let grid = AnchorGrid::new(2, 2, (0.0, 0.0), (3.0, 3.0), AnchorSpec::default());
        let gts = vec![GroundTruthBox {
            center: (4.0, 4.0, -1.0),
            size: (1.6, 3.9, 1.56),
            yaw: 0.3,
        }];
        let targets = assign_targets(&grid, &gts, AssignThresholds::default()).unwrap();
        let mut boxes = Tensor::<f64>::zeros(&[2, 2, 14]);
        for v in boxes.data_mut() {
            *v = 0.21;
        }
        let head = HeadOutput {
            boxes,
            cls: Tensor::filled(&[2, 2, 2], -0.4),
            dir: Tensor::filled(&[2, 2, 4], 0.15),
        };
        let w1 = LossWeights {
            lambda_sim: 0.0,
            ..LossWeights::default()
        };
        let w3 = LossWeights {
            beta_loc: 3.0 * w1.beta_loc,
            beta_cls: 3.0 * w1.beta_cls,
            beta_dir: 3.0 * w1.beta_dir,
            ..w1
        };
        let (a, _) = total_loss(&head, &targets, &w1, None).unwrap();
        let (b, _) = total_loss(&head, &targets, &w3, None).unwrap();
        assert!((b.total - 3.0 * a.total).abs() < 1e-9);
    }

    #[test]
    fn n_pos_is_clamped_on_empty_scenes() {
        use crate::tensor::Tensor;
        let grid = AnchorGrid::new(1, 1, (0.0, 0.0), (4.0, 4.0), AnchorSpec::default());
        let targets = assign_targets(&grid, &[], AssignThresholds::default()).unwrap();
        let head = HeadOutput {
            boxes: Tensor::<f64>::zeros(&[1, 1, 14]),
            cls: Tensor::zeros(&[1, 1, 2]),
            dir: Tensor::zeros(&[1, 1, 4]),
        };
        let (bd, _) = total_loss(&head, &targets, &LossWeights::default(), None).unwrap();
        assert!(bd.total.is_finite());
        assert_eq!(bd.n_pos, 0);
    }
}
