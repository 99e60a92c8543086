//! Differentiable 3D IoU between yaw-rotated boxes.
//!
//! The BEV overlap is found without general polygon clipping: the predicted
//! box's corners are moved into the ground-truth frame, where the target
//! rectangle is axis-aligned, so edge intersections reduce to solving for
//! `x = ±w/2` or `y = ±l/2`. Candidates (16 edge intersections, 4 + 4
//! corners) live in a fixed 24-slot buffer, are filtered against both boxes,
//! sorted counterclockwise and measured with the shoelace formula. The
//! vertical overlap is an interval intersection.
//!
//! Everything is generic over [`Scalar`], so evaluating with [`Dual`] numbers
//! yields the gradient with respect to all 14 box parameters. Discrete
//! choices (which candidates survive, their order) are taken on primal values;
//! the distance of every such choice from flipping is tracked so callers can
//! tell when the gradient sits on a kink.

use rayon::prelude::*;
use serde::Serialize;

use crate::dual::{Dual, Scalar};
use crate::geom::OrientedBox;

/// Slack when testing whether a candidate lies inside a rectangle.
pub const INSIDE_TOL: f64 = 1e-7;
/// Candidates closer than this are merged.
pub const MERGE_TOL: f64 = 1e-7;
/// Decisions closer than this to flipping mark the gradient as non-smooth.
pub const SMOOTH_MARGIN: f64 = 1e-6;
/// Intersections below this area are treated as empty.
pub const MIN_AREA: f64 = 1e-12;

const SLOTS: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouResult {
    pub iou3d: f64,
    pub loss: f64,
    pub bev_area: f64,
    pub height_overlap: f64,
    /// Intersection polygon in the second box's frame, counterclockwise.
    pub polygon: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouGrad {
    pub iou3d: f64,
    pub loss: f64,
    /// d loss / d (x, y, z, w, l, h, r) of the first box, then of the second.
    pub grad: [f64; 14],
    /// False when some discrete decision was within [`SMOOTH_MARGIN`] of flipping.
    pub smooth: bool,
}

/// Planar rigid frame of a box: center and yaw.
#[derive(Clone, Copy, Debug)]
struct Frame<S> {
    cx: S,
    cy: S,
    cos: S,
    sin: S,
}

impl<S: Scalar> Frame<S> {
    fn of(b: &[S; 7]) -> Self {
        Self {
            cx: b[0],
            cy: b[1],
            cos: b[6].cos(),
            sin: b[6].sin(),
        }
    }

    #[inline]
    fn to_world(self, p: [S; 2]) -> [S; 2] {
        [
            self.cos * p[0] - self.sin * p[1] + self.cx,
            self.sin * p[0] + self.cos * p[1] + self.cy,
        ]
    }

    #[inline]
    fn to_local(self, w: [S; 2]) -> [S; 2] {
        let dx = w[0] - self.cx;
        let dy = w[1] - self.cy;
        [self.cos * dx + self.sin * dy, self.cos * dy - self.sin * dx]
    }
}

/// Counterclockwise local corners starting at `(-w/2, +l/2)`.
fn local_corners<S: Scalar>(b: &[S; 7]) -> [[S; 2]; 4] {
    let hw = b[3] * 0.5;
    let hl = b[4] * 0.5;
    [[-hw, hl], [-hw, -hl], [hw, -hl], [hw, hl]]
}

fn box_params<S: Scalar>(b: &OrientedBox) -> [S; 7] {
    b.params().map(S::constant)
}

/// Re-express points given in `src`'s local frame in `dst`'s local frame.
pub fn to_frame(points: &[[f64; 2]], src: &OrientedBox, dst: &OrientedBox) -> Vec<[f64; 2]> {
    let (s, d) = (Frame::of(&box_params::<f64>(src)), Frame::of(&box_params::<f64>(dst)));
    points.iter().map(|&p| d.to_local(s.to_world(p))).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    /// Edge `edge` of the first box crossing a boundary line of the second
    /// box perpendicular to axis `axis`.
    Intersection {
        edge: usize,
        axis: usize,
    },
    FirstCorner,
    SecondCorner,
}

impl Kind {
    /// Merge preference: corners of the first box, then the second, then crossings.
    fn rank(self) -> u8 {
        match self {
            Kind::FirstCorner => 0,
            Kind::SecondCorner => 1,
            Kind::Intersection { .. } => 2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Candidate<S> {
    in_g: [S; 2],
    in_p: [S; 2],
    kind: Kind,
}

/// Fixed-capacity candidate buffer with a validity mask.
struct CandidateBuffer<S> {
    slots: [Candidate<S>; SLOTS],
    valid: [bool; SLOTS],
}

struct Evaluation<S> {
    area: S,
    height: S,
    iou: S,
    /// Survivors in the second box's frame, counterclockwise.
    polygon: Vec<[f64; 2]>,
    margin: f64,
}

fn evaluate<S: Scalar>(p: &[S; 7], g: &[S; 7]) -> Evaluation<S> {
    let mut margin = f64::INFINITY;
    let fp = Frame::of(p);
    let fg = Frame::of(g);
    let half_p = [p[3].value() * 0.5, p[4].value() * 0.5];
    let half_g = [g[3] * 0.5, g[4] * 0.5];

    let zero = Candidate {
        in_g: [S::zero(); 2],
        in_p: [S::zero(); 2],
        kind: Kind::FirstCorner,
    };
    let mut buf = CandidateBuffer {
        slots: [zero; SLOTS],
        valid: [false; SLOTS],
    };

    // First box corners, in both frames.
    let corners_p = local_corners(p);
    let corners_pg: [[S; 2]; 4] = corners_p.map(|c| fg.to_local(fp.to_world(c)));

    // Edge crossings with the second box's boundary lines (slots 0..16).
    for e in 0..4 {
        let a = corners_pg[e];
        let b = corners_pg[(e + 1) % 4];
        let len = ((b[0] - a[0]).value().powi(2) + (b[1] - a[1]).value().powi(2)).sqrt();
        for axis in 0..2 {
            let da = b[axis] - a[axis];
            for (s, sign) in [-1.0, 1.0].into_iter().enumerate() {
                let slot = e * 4 + axis * 2 + s;
                let bound = half_g[axis] * sign;
                if da.value().abs() <= 1e-12 * len.max(1.0) {
                    // Edge parallel to this line: no crossing; distance from
                    // parallel is a decision too.
                    margin = margin.min((bound - a[axis]).value().abs().max(da.value().abs()));
                    continue;
                }
                let t = (bound - a[axis]) / da;
                let tv = t.value();
                if !(0.0..=1.0).contains(&tv) {
                    margin = margin.min(if tv < 0.0 { -tv } else { tv - 1.0 } * len);
                    continue;
                }
                margin = margin.min(tv.min(1.0 - tv) * len);
                let mut q = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                q[axis] = bound;
                buf.slots[slot] = Candidate {
                    in_g: q,
                    in_p: [S::zero(); 2],
                    kind: Kind::Intersection { edge: e, axis },
                };
                buf.valid[slot] = true;
            }
        }
    }
    for (i, c) in corners_pg.iter().enumerate() {
        buf.slots[16 + i] = Candidate {
            in_g: *c,
            in_p: corners_p[i],
            kind: Kind::FirstCorner,
        };
        buf.valid[16 + i] = true;
    }
    for (i, c) in local_corners(g).iter().enumerate() {
        buf.slots[20 + i] = Candidate {
            in_g: *c,
            in_p: [S::zero(); 2],
            kind: Kind::SecondCorner,
        };
        buf.valid[20 + i] = true;
    }

    let half_gv = [half_g[0].value(), half_g[1].value()];
    for n in 0..SLOTS {
        if !buf.valid[n] {
            continue;
        }
        let c = &mut buf.slots[n];
        // Keep points inside the second box; coordinates that lie on its
        // boundary by construction are not tested.
        let skip_g = match c.kind {
            Kind::Intersection { axis, .. } => [axis == 0, axis == 1],
            Kind::SecondCorner => [true, true],
            Kind::FirstCorner => [false, false],
        };
        let mut keep = true;
        for a in 0..2 {
            if !skip_g[a] {
                let slack = half_gv[a] - c.in_g[a].value().abs();
                margin = margin.min(slack.abs());
                keep &= slack >= -INSIDE_TOL;
            }
        }
        if !keep {
            buf.valid[n] = false;
            continue;
        }
        // Then inside the first box, in its own frame.
        let skip_p = match c.kind {
            Kind::Intersection { edge, .. } => [edge % 2 == 0, edge % 2 == 1],
            Kind::FirstCorner => [true, true],
            Kind::SecondCorner => [false, false],
        };
        if c.kind != Kind::FirstCorner {
            c.in_p = fp.to_local(fg.to_world(c.in_g));
        }
        for a in 0..2 {
            if !skip_p[a] {
                let slack = half_p[a] - c.in_p[a].value().abs();
                margin = margin.min(slack.abs());
                keep &= slack >= -INSIDE_TOL;
            }
        }
        if !keep {
            buf.valid[n] = false;
        }
    }

    // Merge coincident survivors, preferring corners.
    let mut order: Vec<usize> = (0..SLOTS).filter(|&n| buf.valid[n]).collect();
    order.sort_by_key(|&n| (buf.slots[n].kind.rank(), n));
    let mut kept: Vec<Candidate<S>> = Vec::with_capacity(8);
    for n in order {
        let c = buf.slots[n];
        let mut duplicate = false;
        for k in &kept {
            let d = ((c.in_p[0] - k.in_p[0]).value().powi(2) + (c.in_p[1] - k.in_p[1]).value().powi(2)).sqrt();
            if d < SMOOTH_MARGIN {
                margin = margin.min(d);
            }
            if d <= MERGE_TOL {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(c);
        }
    }

    // Counterclockwise about the centroid, on primal values.
    let m = kept.len().max(1) as f64;
    let cx = kept.iter().map(|c| c.in_p[0].value()).sum::<f64>() / m;
    let cy = kept.iter().map(|c| c.in_p[1].value()).sum::<f64>() / m;
    let key = |c: &Candidate<S>| {
        let (dx, dy) = (c.in_p[0].value() - cx, c.in_p[1].value() - cy);
        (dy.atan2(dx), dx * dx + dy * dy)
    };
    kept.sort_by(|a, b| {
        let (ka, kb) = (key(a), key(b));
        ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1))
    });

    let mut area = S::zero();
    if kept.len() >= 3 {
        let mut twice = S::zero();
        for i in 0..kept.len() {
            let (u, v) = (kept[i].in_p, kept[(i + 1) % kept.len()].in_p);
            twice = twice + (u[0] * v[1] - v[0] * u[1]);
        }
        area = twice.abs() * 0.5;
        if area.value() < MIN_AREA {
            area = S::zero();
        }
    }

    // Vertical overlap, measured relative to the first box's center.
    let dz = g[2] - p[2];
    let (hp, hg) = (p[5] * 0.5, g[5] * 0.5);
    let top_g = dz + hg;
    let bot_g = dz - hg;
    margin = margin.min((hp - top_g).value().abs()).min((bot_g + hp).value().abs());
    let top = hp.min(top_g);
    let bot = (-hp).max(bot_g);
    let span = top - bot;
    let height = if span.value() > 0.0 { span } else { S::zero() };
    margin = margin.min(span.value().abs());

    let inter = area * height;
    let vol_p = p[3] * p[4] * p[5];
    let vol_g = g[3] * g[4] * g[5];
    let union = vol_p + vol_g - inter;
    let mut iou = inter / union;
    if iou.value() > 1.0 {
        iou = S::constant(1.0);
    } else if iou.value() < 0.0 {
        iou = S::zero();
    }

    Evaluation {
        area,
        height,
        iou,
        polygon: kept.iter().map(|c| [c.in_g[0].value(), c.in_g[1].value()]).collect(),
        margin,
    }
}

/// Vertices of the BEV intersection of two boxes, in `g`'s local frame,
/// counterclockwise. Empty when the boxes do not overlap.
pub fn bev_intersection_polygon(p: &OrientedBox, g: &OrientedBox) -> Vec<[f64; 2]> {
    let e = evaluate::<f64>(&box_params(p), &box_params(g));
    if e.area > 0.0 {
        e.polygon
    } else {
        Vec::new()
    }
}

/// Shoelace area of a counterclockwise polygon; zero below three vertices.
pub fn shoelace_area(vertices: &[[f64; 2]]) -> f64 {
    if vertices.len() < 3 {
        return 0.0;
    }
    let n = vertices.len();
    let twice: f64 = (0..n)
        .map(|i| {
            let (u, v) = (vertices[i], vertices[(i + 1) % n]);
            u[0] * v[1] - v[0] * u[1]
        })
        .sum();
    0.5 * twice.abs()
}

/// 3D IoU of `p` against `g` and the loss `1 - IoU`.
pub fn iou3d(p: &OrientedBox, g: &OrientedBox) -> IouResult {
    let e = evaluate::<f64>(&box_params(p), &box_params(g));
    IouResult {
        iou3d: e.iou,
        loss: 1.0 - e.iou,
        bev_area: e.area,
        height_overlap: e.height,
        polygon: if e.area > 0.0 { e.polygon } else { Vec::new() },
    }
}

/// IoU loss on raw parameters `[p; g]`, for finite-difference checks.
pub fn iou_loss_params(params: &[f64; 14]) -> f64 {
    let p: [f64; 7] = std::array::from_fn(|i| params[i]);
    let g: [f64; 7] = std::array::from_fn(|i| params[7 + i]);
    1.0 - evaluate::<f64>(&p, &g).iou
}

/// Loss `1 - IoU` and its gradient with respect to all 14 box parameters.
pub fn iou3d_grad(p: &OrientedBox, g: &OrientedBox) -> IouGrad {
    let mut all = [0.0; 14];
    all[..7].copy_from_slice(&p.params());
    all[7..].copy_from_slice(&g.params());
    let seeded = Dual::<14>::seed(all);
    let dp: [Dual<14>; 7] = std::array::from_fn(|i| seeded[i]);
    let dg: [Dual<14>; 7] = std::array::from_fn(|i| seeded[7 + i]);
    let e = evaluate(&dp, &dg);
    let loss = -e.iou + 1.0;
    IouGrad {
        iou3d: e.iou.val,
        loss: loss.val,
        grad: loss.grad,
        smooth: e.margin >= SMOOTH_MARGIN,
    }
}

pub fn iou3d_batch(pairs: &[(OrientedBox, OrientedBox)]) -> Vec<IouResult> {
    pairs.par_iter().map(|(p, g)| iou3d(p, g)).collect()
}

pub fn iou3d_grad_batch(pairs: &[(OrientedBox, OrientedBox)]) -> Vec<IouGrad> {
    pairs.par_iter().map(|(p, g)| iou3d_grad(p, g)).collect()
}
