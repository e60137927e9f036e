use std::io::Write;

use super::LevelCurve;
use crate::error::Result;
use crate::io::{csv_writer, fmt_f64};

const DEDUP_DISTANCE: f64 = 1e-9;

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn at(p: [f64; 2], r: [f64; 2], t: f64) -> [f64; 2] {
    [p[0] + t * r[0], p[1] + t * r[1]]
}

/// Intersections of segment p→p+r with q→q+s. A collinear overlap yields its
/// two end points.
fn segment_pair(p: [f64; 2], p1: [f64; 2], q: [f64; 2], q1: [f64; 2], out: &mut Vec<[f64; 2]>) {
    let r = sub(p1, p);
    let s = sub(q1, q);
    let qp = sub(q, p);
    let denom = cross(r, s);
    let scale = (dot(r, r) * dot(s, s)).sqrt();
    let eps = 1e-12;
    if denom.abs() > eps * scale {
        let t = cross(qp, s) / denom;
        let u = cross(qp, r) / denom;
        if (-eps..=1.0 + eps).contains(&t) && (-eps..=1.0 + eps).contains(&u) {
            out.push(at(p, r, t.clamp(0.0, 1.0)));
        }
        return;
    }
    let rr = dot(r, r);
    if rr == 0.0 {
        // p is a point; it lies on q→q1 if collinear and within range.
        let ss = dot(s, s);
        let on = if ss == 0.0 {
            qp == [0.0, 0.0]
        } else {
            let u = -dot(qp, s) / ss;
            cross(sub(p, q), s).abs() <= eps * ss && (-eps..=1.0 + eps).contains(&u)
        };
        if on {
            out.push(p);
        }
        return;
    }
    if cross(qp, r).abs() > eps * rr.max(rr.sqrt() * qp[0].hypot(qp[1])) {
        return;
    }
    let t0 = dot(qp, r) / rr;
    let t1 = t0 + dot(s, r) / rr;
    let lo = t0.min(t1).max(0.0);
    let hi = t0.max(t1).min(1.0);
    if lo <= hi + eps {
        out.push(at(p, r, lo));
        out.push(at(p, r, hi.max(lo)));
    }
}

/// All crossings of the two curves' segments, de-duplicated within 1e-9 and
/// sorted by (a₁, a₂).
pub fn intersect(a: &LevelCurve, b: &LevelCurve) -> Vec<[f64; 2]> {
    let mut raw = Vec::new();
    for la in &a.polylines {
        for sa in la.windows(2) {
            for lb in &b.polylines {
                for sb in lb.windows(2) {
                    segment_pair(sa[0], sa[1], sb[0], sb[1], &mut raw);
                }
            }
        }
    }
    let mut points: Vec<[f64; 2]> = Vec::new();
    for p in raw {
        if !points.iter().any(|q| (p[0] - q[0]).hypot(p[1] - q[1]) <= DEDUP_DISTANCE) {
            points.push(p);
        }
    }
    points.sort_by(|x, y| x[0].total_cmp(&y[0]).then(x[1].total_cmp(&y[1])));
    points
}

/// Header `a1,a2`, one point per row.
pub fn write_points_csv<W: Write>(points: &[[f64; 2]], w: W) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a1", "a2"])?;
    for p in points {
        out.write_record([fmt_f64(p[0]), fmt_f64(p[1])])?;
    }
    out.flush()?;
    Ok(())
}
