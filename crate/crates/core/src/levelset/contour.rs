use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::ParameterMesh;
use crate::error::{Error, Result};
use crate::io::{csv_reader, csv_writer, fmt_f64, parse_f64};

/// Iso-curve Φ = `level` as polylines in (a₁, a₂). A closed loop repeats its
/// first vertex at the end.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelCurve {
    pub level: f64,
    pub polylines: Vec<Vec<[f64; 2]>>,
}

impl LevelCurve {
    pub fn is_empty(&self) -> bool {
        self.polylines.is_empty()
    }

    pub fn is_closed(&self, k: usize) -> bool {
        let p = &self.polylines[k];
        p.len() > 2 && p[0] == p[p.len() - 1]
    }

    pub fn vertices(&self) -> impl Iterator<Item = &[f64; 2]> {
        self.polylines.iter().flatten()
    }

    /// Header `curve_id,vertex_id,a1,a2`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv_writer(w);
        out.write_record(["curve_id", "vertex_id", "a1", "a2"])?;
        for (c, line) in self.polylines.iter().enumerate() {
            for (v, p) in line.iter().enumerate() {
                out.write_record([c.to_string(), v.to_string(), fmt_f64(p[0]), fmt_f64(p[1])])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Inverse of [`LevelCurve::write_csv`]. Rows must be grouped by curve
    /// and ordered by vertex id.
    pub fn read_csv<R: Read>(r: R, level: f64) -> Result<Self> {
        let mut rdr = csv_reader(r, true);
        let mut polylines: Vec<Vec<[f64; 2]>> = Vec::new();
        let mut current: Option<usize> = None;
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::invalid("curve csv", format!("row {} has {} fields", row + 1, rec.len())));
            }
            let id: usize = rec[0]
                .parse()
                .map_err(|_| Error::invalid("curve csv", format!("bad curve id `{}`", &rec[0])))?;
            let vid: usize = rec[1]
                .parse()
                .map_err(|_| Error::invalid("curve csv", format!("bad vertex id `{}`", &rec[1])))?;
            let p = [parse_f64(&rec[2], "curve csv a1")?, parse_f64(&rec[3], "curve csv a2")?];
            if current != Some(id) {
                if current.is_some_and(|c| id <= c) || vid != 0 {
                    return Err(Error::invalid("curve csv", format!("row {}: curves out of order", row + 1)));
                }
                polylines.push(Vec::new());
                current = Some(id);
            }
            let line = polylines.last_mut().expect("pushed above");
            if vid != line.len() {
                return Err(Error::invalid("curve csv", format!("row {}: vertex ids out of order", row + 1)));
            }
            line.push(p);
        }
        Ok(Self { level, polylines })
    }
}

/// A crossing vertex is identified by the mesh edge it lies on: `dir` 0 runs
/// from node (i, j) to (i+1, j), `dir` 1 from (i, j) to (i, j+1).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct EdgeKey {
    i: usize,
    j: usize,
    dir: u8,
}

/// Marching squares with linear interpolation along cell edges.
///
/// A node counts as above the level when Φ ≥ c; a node exactly at c behaves
/// as if raised by 1e-12 of the value range. Saddle cells connect the pair of
/// corners that agrees with the average of the four corners. Polylines are
/// chained from the lowest edge key, open ends first, so output is
/// deterministic.
pub fn extract_level(mesh: &ParameterMesh, c: f64) -> LevelCurve {
    let (n1, n2) = mesh.shape();
    let empty = LevelCurve {
        level: c,
        polylines: Vec::new(),
    };
    let (lo, hi) = mesh.min_max();
    if !c.is_finite() || c < lo || c > hi || n1 < 2 || n2 < 2 {
        return empty;
    }
    let above = |i: usize, j: usize| mesh.value(i, j) >= c;

    let mut vertices: BTreeMap<EdgeKey, [f64; 2]> = BTreeMap::new();
    let mut links: BTreeMap<EdgeKey, Vec<EdgeKey>> = BTreeMap::new();
    let mut vertex = |e: EdgeKey| {
        vertices.entry(e).or_insert_with(|| {
            let (i1, j1) = if e.dir == 0 { (e.i + 1, e.j) } else { (e.i, e.j + 1) };
            let (v0, v1) = (mesh.value(e.i, e.j), mesh.value(i1, j1));
            let t = (c - v0) / (v1 - v0);
            let (x0, y0) = (mesh.axis1()[e.i], mesh.axis2()[e.j]);
            let (x1, y1) = (mesh.axis1()[i1], mesh.axis2()[j1]);
            [x0 + t * (x1 - x0), y0 + t * (y1 - y0)]
        });
    };
    let mut segments: Vec<(EdgeKey, EdgeKey)> = Vec::new();

    for i in 0..n1 - 1 {
        for j in 0..n2 - 1 {
            // Corners counter-clockwise from (i, j); edge k joins corner k and k+1.
            let corner = [above(i, j), above(i + 1, j), above(i + 1, j + 1), above(i, j + 1)];
            let edges = [
                EdgeKey { i, j, dir: 0 },
                EdgeKey { i: i + 1, j, dir: 1 },
                EdgeKey { i, j: j + 1, dir: 0 },
                EdgeKey { i, j, dir: 1 },
            ];
            let crossed: Vec<usize> = (0..4).filter(|&k| corner[k] != corner[(k + 1) % 4]).collect();
            match crossed.len() {
                0 => {}
                2 => segments.push((edges[crossed[0]], edges[crossed[1]])),
                _ => {
                    let centre = 0.25 * (mesh.value(i, j) + mesh.value(i + 1, j) + mesh.value(i + 1, j + 1) + mesh.value(i, j + 1));
                    if (centre >= c) == corner[0] {
                        // Corners 0 and 2 are joined through the centre; cut off 1 and 3.
                        segments.push((edges[0], edges[1]));
                        segments.push((edges[2], edges[3]));
                    } else {
                        segments.push((edges[3], edges[0]));
                        segments.push((edges[1], edges[2]));
                    }
                }
            }
        }
    }
    for &(a, b) in &segments {
        vertex(a);
        vertex(b);
        links.entry(a).or_default().push(b);
        links.entry(b).or_default().push(a);
    }

    let mut visited: BTreeMap<EdgeKey, bool> = vertices.keys().map(|&k| (k, false)).collect();
    let mut polylines = Vec::new();
    let walk = |start: EdgeKey, visited: &mut BTreeMap<EdgeKey, bool>| -> Vec<EdgeKey> {
        let mut path = vec![start];
        visited.insert(start, true);
        let mut cur = start;
        while let Some(&next) = links[&cur].iter().find(|n| !visited[*n]) {
            visited.insert(next, true);
            path.push(next);
            cur = next;
        }
        path
    };
    let ends: Vec<EdgeKey> = links.iter().filter(|(_, n)| n.len() == 1).map(|(&k, _)| k).collect();
    for start in ends {
        if !visited[&start] {
            let path = walk(start, &mut visited);
            polylines.push(path.iter().map(|k| vertices[k]).collect());
        }
    }
    let keys: Vec<EdgeKey> = vertices.keys().copied().collect();
    for start in keys {
        if !visited[&start] {
            let path = walk(start, &mut visited);
            let mut line: Vec<[f64; 2]> = path.iter().map(|k| vertices[k]).collect();
            line.push(line[0]);
            polylines.push(line);
        }
    }
    LevelCurve { level: c, polylines }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::levelset::{interpolate, Axes, Statistic};
    use proptest::prelude::*;

    fn mesh(axes: Axes, f: impl Fn(f64, f64) -> f64) -> ParameterMesh {
        ParameterMesh::from_fn(axes, 0.0, Statistic::Terminal, f).unwrap()
    }

    fn circle_error(n: usize) -> (LevelCurve, f64) {
        let m = mesh(Axes::uniform((-2.0, 2.0), n, (-2.0, 2.0), n).unwrap(), |x, y| x * x + y * y);
        let curve = extract_level(&m, 1.0);
        let err = curve.vertices().map(|p| (p[0].hypot(p[1]) - 1.0).abs()).fold(0.0, f64::max);
        (curve, err)
    }

    #[test]
    fn straight_line() {
        let m = mesh(Axes::uniform((0.0, 1.0), 11, (0.0, 1.0), 11).unwrap(), |x, _| x);
        let curve = extract_level(&m, 0.5);
        assert_eq!(curve.polylines.len(), 1);
        assert_eq!(curve.polylines[0].len(), 11);
        assert!(!curve.is_closed(0));
        assert!(curve.vertices().all(|p| (p[0] - 0.5).abs() < 1e-13));
    }

    #[test]
    fn unit_circle() {
        let (curve, err) = circle_error(81);
        let h = 0.05;
        assert_eq!(curve.polylines.len(), 1);
        assert!(curve.is_closed(0));
        assert!(err < h * h, "{err}");
        let (_, fine) = circle_error(161);
        let order = (err / fine).log2();
        assert!((1.7..2.3).contains(&order), "{order}");
    }

    #[test]
    fn outside_range_is_empty() {
        let m = mesh(Axes::uniform((0.0, 1.0), 5, (0.0, 1.0), 5).unwrap(), |x, y| x + y);
        assert!(extract_level(&m, 2.5).is_empty());
        assert!(extract_level(&m, -0.1).is_empty());
        let flat = mesh(Axes::uniform((0.0, 1.0), 5, (0.0, 1.0), 5).unwrap(), |_, _| 1.0);
        assert!(extract_level(&flat, 1.0).is_empty());
    }

    #[test]
    fn saddle_uses_centre_average() {
        let axes = Axes::uniform((0.0, 1.0), 2, (0.0, 1.0), 2).unwrap();
        // Corners (0,0) and (1,1) high; centre average 0.6 ≥ 0.5 joins them.
        let m = ParameterMesh::new(axes.clone(), 0.0, vec![1.0, 0.2, 0.2, 1.0], Statistic::Terminal).unwrap();
        let curve = extract_level(&m, 0.5);
        assert_eq!(curve.polylines.len(), 2);
        let near_low_corner = |line: &Vec<[f64; 2]>, corner: [f64; 2]| {
            line.iter().all(|p| (p[0] - corner[0]).abs() + (p[1] - corner[1]).abs() < 1.0)
        };
        for line in &curve.polylines {
            assert!(near_low_corner(line, [1.0, 0.0]) || near_low_corner(line, [0.0, 1.0]));
        }
        let m = ParameterMesh::new(axes, 0.0, vec![0.6, 0.0, 0.0, 0.6], Statistic::Terminal).unwrap();
        for line in &extract_level(&m, 0.5).polylines {
            assert!(near_low_corner(line, [0.0, 0.0]) || near_low_corner(line, [1.0, 1.0]));
        }
    }

    #[test]
    fn node_on_level_is_classified_above() {
        let m = mesh(Axes::uniform((0.0, 2.0), 3, (0.0, 1.0), 2).unwrap(), |x, _| x);
        let curve = extract_level(&m, 1.0);
        assert_eq!(curve.polylines.len(), 1);
        assert!(curve.vertices().all(|p| p[0] == 1.0));
    }

    #[test]
    fn curve_csv_round_trip() {
        let (curve, _) = circle_error(21);
        let mut buf = Vec::new();
        curve.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"curve_id,vertex_id,a1,a2\n0,0,"));
        assert_eq!(LevelCurve::read_csv(buf.as_slice(), 1.0).unwrap(), curve);
    }

    fn vertex_set(c: &LevelCurve) -> Vec<[u64; 2]> {
        let mut v: Vec<[u64; 2]> = c.vertices().map(|p| [p[0].to_bits(), p[1].to_bits()]).collect();
        v.sort();
        v.dedup();
        v
    }

    proptest! {
        #[test]
        fn vertices_reinterpolate_to_level(vals in proptest::collection::vec(-1.0..1.0f64, 36), c in -0.9..0.9f64) {
            let axes = Axes::new(vec![0.0, 0.2, 0.5, 0.6, 0.9, 1.0], vec![-1.0, -0.5, 0.0, 0.1, 0.7, 1.0]).unwrap();
            let m = ParameterMesh::new(axes, 0.0, vals, Statistic::Terminal).unwrap();
            let curve = extract_level(&m, c);
            for p in curve.vertices() {
                let v = interpolate(&m, *p, "bilinear").unwrap();
                prop_assert!((v - c).abs() < 1e-12, "{v} vs {c}");
            }
            let neg = m.map(|_, _, v| -v).unwrap();
            prop_assert_eq!(vertex_set(&curve), vertex_set(&extract_level(&neg, -c)));
        }
    }
}
