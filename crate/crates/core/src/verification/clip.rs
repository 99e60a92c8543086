/// Vertices closer than this are treated as one.
const MERGE_TOL: f64 = 1e-7;

/// Signed area via the trapezoid rule; positive for counterclockwise input.
fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        s += (a[0] - b[0]) * (a[1] + b[1]);
    }
    0.5 * s
}

/// Unsigned polygon area.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        0.0
    } else {
        signed_area(poly).abs()
    }
}

fn ccw(mut poly: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    if signed_area(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Intersection of two convex polygons by Sutherland-Hodgman clipping.
///
/// Output is counterclockwise with coincident consecutive vertices merged; an
/// empty or zero-area overlap yields an empty list.
pub fn clip_polygons(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if subject.len() < 3 || clip.len() < 3 {
        return Vec::new();
    }
    let clip = ccw(clip.to_vec());
    let mut out = ccw(subject.to_vec());
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        // Left of the directed edge a->b is inside.
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (sc, sp) = (side(cur), side(prev));
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(crossing(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(crossing(prev, cur, sp, sc));
            }
        }
    }
    let mut merged: Vec<[f64; 2]> = Vec::with_capacity(out.len());
    for p in out {
        if merged.last().is_none_or(|q| dist(*q, p) > MERGE_TOL) {
            merged.push(p);
        }
    }
    while merged.len() > 1 && dist(merged[0], *merged.last().unwrap()) <= MERGE_TOL {
        merged.pop();
    }
    if merged.len() < 3 || polygon_area(&merged) < 1e-12 {
        return Vec::new();
    }
    merged
}

fn crossing(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn square(h: f64, angle: f64) -> Vec<[f64; 2]> {
        let (s, c) = angle.sin_cos();
        [[-h, -h], [h, -h], [h, h], [-h, h]]
            .iter()
            .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
            .collect()
    }

    #[test]
    fn identical_squares() {
        let a = square(0.5, 0.0);
        let out = clip_polygons(&a, &a);
        assert_eq!(out.len(), 4);
        assert!((polygon_area(&out) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn octagon() {
        let out = clip_polygons(&square(0.5, 0.0), &square(0.5, std::f64::consts::FRAC_PI_4));
        assert_eq!(out.len(), 8);
        assert!((polygon_area(&out) - 2.0 * (2f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn clockwise_input_and_disjoint() {
        let mut cw = square(1.0, 0.2);
        cw.reverse();
        assert!((polygon_area(&clip_polygons(&cw, &square(1.0, 0.2))) - 4.0).abs() < 1e-12);
        let far: Vec<_> = square(0.5, 0.0).iter().map(|p| [p[0] + 5.0, p[1]]).collect();
        assert!(clip_polygons(&far, &square(0.5, 0.0)).is_empty());
    }

    proptest! {
        #[test]
        fn commutative_in_area(h1 in 0.2f64..2.0, h2 in 0.2f64..2.0, a1 in -3.2f64..3.2, a2 in -3.2f64..3.2, dx in -2.0f64..2.0) {
            let p = square(h1, a1);
            let q: Vec<_> = square(h2, a2).iter().map(|v| [v[0] + dx, v[1]]).collect();
            let ab = polygon_area(&clip_polygons(&p, &q));
            let ba = polygon_area(&clip_polygons(&q, &p));
            prop_assert!((ab - ba).abs() < 1e-12);
        }
    }
}
