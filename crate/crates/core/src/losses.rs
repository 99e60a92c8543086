//! Training objective terms and their weighted stage compositions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::OrientedBox;
use crate::iou::iou3d;

const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            beta: 0.5,
            gamma: 0.5,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta), ("gamma", gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(Self { alpha, beta, gamma })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalParams {
    pub gamma_f: f64,
    pub alpha_f: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            gamma_f: 2.0,
            alpha_f: 0.25,
        }
    }
}

/// IoU thresholds mapping to a soft confidence target: 0 at `low`, 1 at `high`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfTarget {
    pub low: f64,
    pub high: f64,
}

impl Default for ConfTarget {
    fn default() -> Self {
        Self { low: 0.25, high: 0.75 }
    }
}

impl ConfTarget {
    pub fn target(&self, iou: f64) -> f64 {
        ((iou - self.low) / (self.high - self.low)).clamp(0.0, 1.0)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy on a logit, stable for large magnitudes.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

pub fn focal_loss(logit: f64, target: bool, params: FocalParams) -> f64 {
    let p = sigmoid(logit);
    let (p_t, alpha_t) = if target {
        (p, params.alpha_f)
    } else {
        (1.0 - p, 1.0 - params.alpha_f)
    };
    -alpha_t * (1.0 - p_t).powf(params.gamma_f) * p_t.max(LOG_FLOOR).ln()
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

pub fn rot_loss(r_p: f64, r_g: f64) -> f64 {
    smooth_l1((r_p - r_g).sin())
}

/// Derivative of [`rot_loss`] with respect to `r_p`.
pub fn rot_loss_grad(r_p: f64, r_g: f64) -> f64 {
    let s = (r_p - r_g).sin();
    let ds = if s.abs() < 1.0 { s } else { s.signum() };
    ds * (r_p - r_g).cos()
}

/// True when the predicted heading points away from the target's.
pub fn flip_label(r_p: f64, r_g: f64) -> bool {
    (r_p - r_g).cos() < 0.0
}

pub fn flip_loss(flip_logit: f64, r_p: f64, r_g: f64) -> f64 {
    bce_with_logits(flip_logit, if flip_label(r_p, r_g) { 1.0 } else { 0.0 })
}

pub fn conf_loss(conf_logit: f64, iou_with_gt: f64, target: ConfTarget) -> f64 {
    bce_with_logits(conf_logit, target.target(iou_with_gt))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn same_len(a: &[f64], b: &[f64], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {} vs {} foreground terms",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Mean classification term plus weighted means of the foreground IoU and
/// rotation terms.
pub fn stage1_loss(cls: &[f64], iou: &[f64], rot: &[f64], w: LossWeights) -> Result<f64> {
    same_len(iou, rot, "iou/rot")?;
    Ok(mean(cls) + w.alpha * mean(iou) + w.beta * mean(rot))
}

pub fn stage2_loss(conf: &[f64], iou: &[f64], rot: &[f64], flip: &[f64], w: LossWeights) -> Result<f64> {
    same_len(iou, rot, "iou/rot")?;
    same_len(iou, flip, "iou/flip")?;
    Ok(mean(conf) + w.alpha * mean(iou) + w.beta * mean(rot) + w.gamma * mean(flip))
}

/// Ground-truth box per point; `None` marks background.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetAssignment {
    pub targets: Vec<Option<OrientedBox>>,
}

impl TargetAssignment {
    pub fn foreground_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub cls: f64,
    pub iou: f64,
    pub rot: f64,
    pub flip: f64,
    pub total: f64,
}

fn check_len(n: usize, m: usize, what: &str) -> Result<()> {
    if n != m {
        return Err(Error::ShapeMismatch(format!("{what}: {n} predictions for {m} targets")));
    }
    Ok(())
}

/// Stage-one loss from per-point foreground logits and box predictions.
pub fn stage1_from_predictions(
    logits: &[f64],
    boxes: &[OrientedBox],
    assignment: &TargetAssignment,
    focal: FocalParams,
    w: LossWeights,
) -> Result<LossBreakdown> {
    check_len(logits.len(), assignment.targets.len(), "logits")?;
    check_len(boxes.len(), assignment.targets.len(), "boxes")?;
    let cls: Vec<f64> = logits
        .iter()
        .zip(&assignment.targets)
        .map(|(&z, t)| focal_loss(z, t.is_some(), focal))
        .collect();
    let (mut iou, mut rot) = (Vec::new(), Vec::new());
    for (p, t) in boxes.iter().zip(&assignment.targets) {
        if let Some(g) = t {
            iou.push(iou3d(p, g).loss);
            rot.push(rot_loss(p.yaw(), g.yaw()));
        }
    }
    Ok(LossBreakdown {
        cls: mean(&cls),
        iou: mean(&iou),
        rot: mean(&rot),
        flip: 0.0,
        total: stage1_loss(&cls, &iou, &rot, w)?,
    })
}

/// Stage-two loss over refined proposals that each have a matched target.
pub fn stage2_from_predictions(
    conf_logits: &[f64],
    flip_logits: &[f64],
    boxes: &[OrientedBox],
    targets: &[OrientedBox],
    conf_target: ConfTarget,
    w: LossWeights,
) -> Result<LossBreakdown> {
    check_len(conf_logits.len(), targets.len(), "confidence logits")?;
    check_len(flip_logits.len(), targets.len(), "flip logits")?;
    check_len(boxes.len(), targets.len(), "boxes")?;
    let n = targets.len();
    let (mut conf, mut iou, mut rot, mut flip) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for i in 0..n {
        let (p, g) = (&boxes[i], &targets[i]);
        let r = iou3d(p, g);
        conf.push(conf_loss(conf_logits[i], r.iou3d, conf_target));
        iou.push(r.loss);
        rot.push(rot_loss(p.yaw(), g.yaw()));
        flip.push(flip_loss(flip_logits[i], p.yaw(), g.yaw()));
    }
    Ok(LossBreakdown {
        cls: mean(&conf),
        iou: mean(&iou),
        rot: mean(&rot),
        flip: mean(&flip),
        total: stage2_loss(&conf, &iou, &rot, &flip, w)?,
    })
}

/// Stage-one record of an evaluation file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage1Record {
    pub logit: f64,
    pub pred: [f64; 7],
    #[serde(default)]
    pub gt: Option<[f64; 7]>,
}

/// Stage-two record of an evaluation file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage2Record {
    pub conf_logit: f64,
    pub flip_logit: f64,
    pub pred: [f64; 7],
    pub gt: [f64; 7],
}

/// JSON input for offline loss evaluation.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossEvalInput {
    pub weights: LossWeights,
    pub focal: FocalParams,
    pub conf_target: ConfTarget,
    pub stage1: Vec<Stage1Record>,
    pub stage2: Vec<Stage2Record>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LossEvalReport {
    pub stage1: LossBreakdown,
    pub stage2: LossBreakdown,
    pub foreground: usize,
}

pub fn evaluate_records(input: &LossEvalInput) -> Result<LossEvalReport> {
    let w = LossWeights::new(input.weights.alpha, input.weights.beta, input.weights.gamma)?;
    let logits: Vec<f64> = input.stage1.iter().map(|r| r.logit).collect();
    let boxes = input
        .stage1
        .iter()
        .map(|r| OrientedBox::from_params(r.pred))
        .collect::<Result<Vec<_>>>()?;
    let assignment = TargetAssignment {
        targets: input
            .stage1
            .iter()
            .map(|r| r.gt.map(OrientedBox::from_params).transpose())
            .collect::<Result<Vec<_>>>()?,
    };
    let stage1 = stage1_from_predictions(&logits, &boxes, &assignment, input.focal, w)?;

    let conf: Vec<f64> = input.stage2.iter().map(|r| r.conf_logit).collect();
    let flip: Vec<f64> = input.stage2.iter().map(|r| r.flip_logit).collect();
    let preds = input
        .stage2
        .iter()
        .map(|r| OrientedBox::from_params(r.pred))
        .collect::<Result<Vec<_>>>()?;
    let gts = input
        .stage2
        .iter()
        .map(|r| OrientedBox::from_params(r.gt))
        .collect::<Result<Vec<_>>>()?;
    let stage2 = stage2_from_predictions(&conf, &flip, &preds, &gts, input.conf_target, w)?;
    Ok(LossEvalReport {
        stage1,
        stage2,
        foreground: assignment.foreground_count(),
    })
}
