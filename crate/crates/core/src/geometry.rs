//! Planar polygon primitives: shoelace area, perimeter, point containment
//! under the half-open rasterization convention, segment intersection, and
//! Douglas-Peucker simplification.

use crate::{CoreError, Result};

/// Cross products below this magnitude are treated as parallel.
const PARALLEL_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Point {
        Point { x, y }
    }

    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// 2-D cross product (z component of the 3-D cross).
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// Simple polygon with vertices stored in canonical orientation
/// (positive shoelace sum). Construction rejects degenerate input.
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon from ≥ 3 vertices, reversing the order if needed so
    /// the shoelace sum is positive. Zero-area input is rejected.
    pub fn new(mut vertices: Vec<Point>) -> Result<Polygon> {
        if vertices.len() < 3 {
            return Err(CoreError::DegeneratePolygon(format!(
                "{} vertices, need at least 3",
                vertices.len()
            )));
        }
        if !vertices.iter().all(|p| p.x.is_finite() && p.y.is_finite()) {
            return Err(CoreError::DegeneratePolygon("non-finite vertex".into()));
        }
        let a = shoelace(&vertices);
        if a.abs() < 1e-12 {
            return Err(CoreError::DegeneratePolygon("zero area".into()));
        }
        if a < 0.0 {
            vertices.reverse();
        }
        Ok(Polygon { vertices })
    }

    /// Axis-aligned rectangle from two opposite corners.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Polygon {
        let (xa, xb) = (x0.min(x1), x0.max(x1));
        let (ya, yb) = (y0.min(y1), y0.max(y1));
        Polygon::new(vec![
            Point::new(xa, ya),
            Point::new(xb, ya),
            Point::new(xb, yb),
            Point::new(xa, yb),
        ])
        .expect("rectangle with distinct corners is never degenerate")
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Shoelace area; positive by canonicalization.
    pub fn area(&self) -> f64 {
        shoelace(&self.vertices) * 0.5
    }

    pub fn perimeter(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| self.vertices[i].dist(self.vertices[(i + 1) % n]))
            .sum()
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    /// Even-odd containment with half-open boundaries: a point exactly on an
    /// edge belongs to the polygon on the edge's top-left side.
    pub fn contains(&self, q: Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if (a.y > q.y) != (b.y > q.y) {
                let x_int = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if q.x < x_int {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// O(n²) proper-self-intersection test; shared endpoints of adjacent
    /// edges are allowed.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        for i in 0..n {
            let (a1, a2) = (self.vertices[i], self.vertices[(i + 1) % n]);
            for j in (i + 1)..n {
                if j == i || (j + 1) % n == i || (i + 1) % n == j {
                    continue;
                }
                let (b1, b2) = (self.vertices[j], self.vertices[(j + 1) % n]);
                if segment_intersection(a1, a2, b1, b2).is_some() {
                    return false;
                }
            }
        }
        true
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        Polygon {
            vertices: self
                .vertices
                .iter()
                .map(|p| Point::new(p.x + dx, p.y + dy))
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|p| p.scale(s)).collect(),
        }
    }
}

/// Twice the signed area.
fn shoelace(v: &[Point]) -> f64 {
    let n = v.len();
    (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum()
}

/// Proper intersection of open segments (a1,a2) and (b1,b2); endpoint
/// touches are not reported. Returns the intersection point and the
/// parameters along each segment.
pub fn segment_intersection(a1: Point, a2: Point, b1: Point, b2: Point) -> Option<(f64, f64, Point)> {
    let da = a2.sub(a1);
    let db = b2.sub(b1);
    let denom = da.cross(db);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let diff = b1.sub(a1);
    let t = diff.cross(db) / denom;
    let u = diff.cross(da) / denom;
    let eps = 1e-9;
    if t > eps && t < 1.0 - eps && u > eps && u < 1.0 - eps {
        Some((t, u, a1.add(da.scale(t))))
    } else {
        None
    }
}

/// Intersection of the infinite lines through (p, p+d) and (q, q+e).
pub fn line_intersection(p: Point, d: Point, q: Point, e: Point) -> Option<Point> {
    let denom = d.cross(e);
    if denom.abs() < PARALLEL_EPS {
        return None;
    }
    let t = q.sub(p).cross(e) / denom;
    Some(p.add(d.scale(t)))
}

/// Perpendicular distance from `p` to the line through `a` and `b`.
fn point_line_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = b.sub(a);
    let len = d.norm();
    if len < PARALLEL_EPS {
        return p.dist(a);
    }
    (d.cross(p.sub(a)) / len).abs()
}

fn dp_chain(points: &[Point], epsilon: f64, out: &mut Vec<Point>) {
    debug_assert!(points.len() >= 2);
    if points.len() == 2 {
        out.push(points[0]);
        return;
    }
    let (a, b) = (points[0], points[points.len() - 1]);
    let mut best = 0.0;
    let mut best_i = 0;
    for (i, &p) in points.iter().enumerate().skip(1).take(points.len() - 2) {
        let d = point_line_distance(p, a, b);
        if d > best {
            best = d;
            best_i = i;
        }
    }
    if best <= epsilon {
        out.push(a);
    } else {
        dp_chain(&points[..=best_i], epsilon, out);
        dp_chain(&points[best_i..], epsilon, out);
    }
}

/// Douglas-Peucker simplification of a closed polygon. The ring is split at
/// vertex 0 and the vertex farthest from it, each open chain is simplified,
/// and the halves are rejoined. Falls back to the input when the result
/// would degenerate.
pub fn simplify(poly: &Polygon, epsilon: f64) -> Polygon {
    let v = poly.vertices();
    if v.len() <= 4 {
        return poly.clone();
    }
    let far = (1..v.len())
        .max_by(|&i, &j| {
            v[0].dist(v[i])
                .partial_cmp(&v[0].dist(v[j]))
                .expect("vertex distances are finite")
        })
        .expect("polygon has vertices");
    let chain1: Vec<Point> = v[0..=far].to_vec();
    let mut chain2: Vec<Point> = v[far..].to_vec();
    chain2.push(v[0]);
    let mut out = Vec::new();
    dp_chain(&chain1, epsilon, &mut out);
    dp_chain(&chain2, epsilon, &mut out);
    if out.len() >= 3 {
        if let Ok(p) = Polygon::new(out) {
            return p;
        }
    }
    poly.clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rect_area_perimeter() {
        let r = Polygon::rect(0.0, 0.0, 100.0, 40.0);
        assert_eq!(r.area(), 4000.0);
        assert_eq!(r.perimeter(), 280.0);
    }

    #[test]
    fn construction_canonicalizes_orientation() {
        let cw = vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ];
        let p = Polygon::new(cw).unwrap();
        assert!(p.area() > 0.0);
    }

    #[test]
    fn construction_rejects_degenerate() {
        assert!(Polygon::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        let line = vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(2.0, 2.0),
        ];
        assert!(Polygon::new(line).is_err());
    }

    #[test]
    fn contains_is_half_open_top_left() {
        let sq = Polygon::rect(0.0, 0.0, 1.0, 1.0);
        assert!(sq.contains(Point::new(0.5, 0.5)));
        assert!(sq.contains(Point::new(0.0, 0.5)), "left edge belongs");
        assert!(sq.contains(Point::new(0.5, 0.0)), "top edge belongs");
        assert!(!sq.contains(Point::new(1.0, 0.5)), "right edge excluded");
        assert!(!sq.contains(Point::new(0.5, 1.0)), "bottom edge excluded");
        assert!(!sq.contains(Point::new(1.5, 0.5)));
    }

    #[test]
    fn segment_intersection_proper_only() {
        let hit = segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
            Point::new(2.0, 0.0),
        );
        let (t, u, p) = hit.unwrap();
        assert!((t - 0.5).abs() < 1e-12 && (u - 0.5).abs() < 1e-12);
        assert!((p.x - 1.0).abs() < 1e-12 && (p.y - 1.0).abs() < 1e-12);
        // Shared endpoint is not a proper intersection.
        assert!(segment_intersection(
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 1.0),
        )
        .is_none());
    }

    #[test]
    fn simple_polygon_detects_self_intersection() {
        let bow = Polygon {
            vertices: vec![
                Point::new(0.0, 0.0),
                Point::new(2.0, 2.0),
                Point::new(2.0, 0.0),
                Point::new(0.0, 2.0),
            ],
        };
        assert!(!bow.is_simple());
        assert!(Polygon::rect(0.0, 0.0, 3.0, 1.0).is_simple());
    }

    #[test]
    fn simplify_drops_collinear_vertices() {
        let v = vec![
            Point::new(0.0, 0.0),
            Point::new(5.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 4.0),
            Point::new(10.0, 8.0),
            Point::new(0.0, 8.0),
            Point::new(0.0, 4.0),
        ];
        let p = Polygon::new(v).unwrap();
        let s = simplify(&p, 0.5);
        assert_eq!(s.vertices().len(), 4);
        assert!((s.area() - p.area()).abs() < 1e-9);
    }

    #[test]
    fn simplify_keeps_meaningful_corners() {
        // L-shape: no vertex is within 0.5 of the chord of its neighbours.
        let v = vec![
            Point::new(0.0, 0.0),
            Point::new(10.0, 0.0),
            Point::new(10.0, 4.0),
            Point::new(4.0, 4.0),
            Point::new(4.0, 10.0),
            Point::new(0.0, 10.0),
        ];
        let p = Polygon::new(v.clone()).unwrap();
        let s = simplify(&p, 0.5);
        assert_eq!(s.vertices().len(), 6);
        assert!((s.area() - p.area()).abs() < 1e-9);
    }
}
