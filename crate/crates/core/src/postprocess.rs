//! Refined-mask post-processing: binarize, drop tiny components, trace
//! kernel contours, expand by the offset O = beta * area / perimeter, and
//! emit scored detections.

use std::collections::HashMap;

use crate::labels::Mask;
use crate::offset::offset_polygon;
use crate::tensor::Tensor;
use crate::{CoreError, Point, Polygon, Result};

/// A scored text detection. The score is the mean refined-mask probability
/// over the kernel region the polygon was grown from.
#[derive(Clone, Debug)]
pub struct Detection {
    pub score: f64,
    pub polygon: Polygon,
}

/// Post-processing knobs with their documented defaults.
#[derive(Clone, Copy, Debug)]
pub struct DetectParams {
    pub threshold: f64,
    pub min_area: usize,
    pub beta: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { threshold: 0.5, min_area: 16, beta: 1.5 }
    }
}

fn map_dims(m_rs: &Tensor) -> (usize, usize) {
    let s = m_rs.shape();
    assert!(s.n() == 1 && s.c() == 1, "expected a single-image single-channel map");
    (s.h(), s.w())
}

/// Pixel is positive iff probability is strictly above the threshold.
pub fn binarize(m_rs: &Tensor, threshold: f64) -> Mask {
    assert!(0.0 < threshold && threshold < 1.0, "threshold must lie in (0,1)");
    let (h, w) = map_dims(m_rs);
    let data = m_rs.data();
    let mut mask = Mask::zeros(h, w);
    for (dst, &p) in mask.data.iter_mut().zip(data.iter()) {
        *dst = (p > threshold) as u8;
    }
    mask
}

/// One 4-connected region; pixels as (y, x) in row-major order.
#[derive(Clone, Debug)]
pub struct Region {
    pub pixels: Vec<(usize, usize)>,
}

/// 4-connected components in first-encounter scan order, dropping regions
/// smaller than `min_area`.
pub fn connected_components(mask: &Mask, min_area: usize) -> Vec<Region> {
    let (h, w) = (mask.h, mask.w);
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || mask.data[start] == 0 {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            pixels.push((y, x));
            let mut push = |j: usize| {
                if !seen[j] && mask.data[j] != 0 {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
        }
        if pixels.len() >= min_area {
            pixels.sort_unstable();
            out.push(Region { pixels });
        }
    }
    out
}

/// Directions on the pixel-corner lattice, clockwise on screen (y down).
const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];

struct Edge {
    from: (i64, i64),
    dir: usize,
}

fn edge_to(e: &Edge) -> (i64, i64) {
    (e.from.0 + DIRS[e.dir].0, e.from.1 + DIRS[e.dir].1)
}

fn loop_shoelace(pts: &[(i64, i64)]) -> i64 {
    let mut sum = 0i64;
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        sum += a.0 * b.1 - b.0 * a.1;
    }
    sum
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.add(ab.scale(t)))
}

/// Douglas-Peucker over an open chain; keeps endpoints.
fn simplify_chain(pts: &[Point], eps: f64, keep: &mut Vec<Point>) {
    if pts.len() <= 2 {
        keep.extend_from_slice(&pts[..pts.len().saturating_sub(1)]);
        return;
    }
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let mut far = 0usize;
    let mut far_d = -1.0;
    for (i, &p) in pts.iter().enumerate().skip(1).take(pts.len() - 2) {
        let d = point_segment_distance(p, a, b);
        if d > far_d {
            far_d = d;
            far = i;
        }
    }
    if far_d <= eps {
        keep.push(a);
        return;
    }
    simplify_chain(&pts[..=far], eps, keep);
    simplify_chain(&pts[far..], eps, keep);
}

/// Simplify a closed ring: split at the vertex farthest from the first one
/// so both Douglas-Peucker anchors are genuine corners.
fn simplify_ring(pts: &[(i64, i64)], eps: f64) -> Vec<Point> {
    let ring: Vec<Point> = pts.iter().map(|&(x, y)| Point::new(x as f64, y as f64)).collect();
    let far = (1..ring.len())
        .max_by(|&i, &j| ring[i].dist(ring[0]).total_cmp(&ring[j].dist(ring[0])))
        .unwrap_or(0);
    let mut keep = Vec::new();
    simplify_chain(&ring[..=far], eps, &mut keep);
    let mut back: Vec<Point> = ring[far..].to_vec();
    back.push(ring[0]);
    simplify_chain(&back, eps, &mut keep);
    keep
}

/// Outer boundary of a region by edge tracing on the pixel-corner lattice
/// (region kept on the walk's screen-right side), then Douglas-Peucker with
/// epsilon 0.5 px. Vertices are pixel-corner coordinates, so a single pixel
/// (y, x) yields the unit square with corners (x, y) and (x+1, y+1).
pub fn extract_contour(region: &Region) -> Result<Polygon> {
    if region.pixels.is_empty() {
        return Err(CoreError::DegeneratePolygon("empty region".into()));
    }
    let filled: std::collections::HashSet<(i64, i64)> =
        region.pixels.iter().map(|&(y, x)| (y as i64, x as i64)).collect();
    let mut edges: Vec<Edge> = Vec::new();
    for &(y, x) in &region.pixels {
        let (y, x) = (y as i64, x as i64);
        if !filled.contains(&(y - 1, x)) {
            edges.push(Edge { from: (x, y), dir: 0 });
        }
        if !filled.contains(&(y, x + 1)) {
            edges.push(Edge { from: (x + 1, y), dir: 1 });
        }
        if !filled.contains(&(y + 1, x)) {
            edges.push(Edge { from: (x + 1, y + 1), dir: 2 });
        }
        if !filled.contains(&(y, x - 1)) {
            edges.push(Edge { from: (x, y + 1), dir: 3 });
        }
    }
    let mut outgoing: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.from).or_default().push(i);
    }
    let mut used = vec![false; edges.len()];
    let mut best: Option<Vec<(i64, i64)>> = None;
    for start in 0..edges.len() {
        if used[start] {
            continue;
        }
        let mut pts = Vec::new();
        let mut cur = start;
        loop {
            used[cur] = true;
            pts.push(edges[cur].from);
            let at = edge_to(&edges[cur]);
            let dir = edges[cur].dir;
            // Prefer the tightest screen-right turn so pinched corners pair
            // into touching, non-crossing passes.
            let mut next = None;
            'pref: for want in [(dir + 1) % 4, dir, (dir + 3) % 4] {
                for &e in outgoing.get(&at).map(|v| v.as_slice()).unwrap_or(&[]) {
                    if !used[e] && edges[e].dir == want {
                        next = Some(e);
                        break 'pref;
                    }
                }
            }
            match next {
                Some(e) => cur = e,
                None => break,
            }
        }
        if best.as_ref().map_or(true, |b| loop_shoelace(&pts).abs() > loop_shoelace(b).abs()) {
            best = Some(pts);
        }
    }
    let ring = best.expect("non-empty region has boundary edges");
    Polygon::new(simplify_ring(&ring, 0.5))
}

/// Grow a kernel polygon outward by O = beta * area / perimeter. If the
/// offset splits, the largest piece wins.
pub fn expand_kernel(kernel: &Polygon, beta: f64) -> Result<Polygon> {
    assert!(beta >= 0.0, "beta must be non-negative");
    if beta == 0.0 {
        return Ok(kernel.clone());
    }
    let offset = beta * kernel.area() / kernel.perimeter();
    offset_polygon(kernel, offset)
        .into_iter()
        .max_by(|a, b| a.area().total_cmp(&b.area()))
        .ok_or_else(|| CoreError::DegeneratePolygon("expansion produced no polygon".into()))
}

/// Full post-processing pipeline: binarize, drop small components, score
/// each kernel by its mean probability, trace and expand its contour.
/// Detections come back sorted by descending score.
pub fn detect(m_rs: &Tensor, params: &DetectParams) -> Vec<Detection> {
    let mask = binarize(m_rs, params.threshold);
    let (_, w) = map_dims(m_rs);
    let data = m_rs.data();
    let mut detections = Vec::new();
    for region in connected_components(&mask, params.min_area) {
        let total: f64 = region.pixels.iter().map(|&(y, x)| data[y * w + x]).sum();
        let score = total / region.pixels.len() as f64;
        let Ok(contour) = extract_contour(&region) else { continue };
        let Ok(polygon) = expand_kernel(&contour, params.beta) else { continue };
        detections.push(Detection { score, polygon });
    }
    detections.sort_by(|a, b| b.score.total_cmp(&a.score));
    detections
}

/// Formats detections in the detection file format: one per line,
/// "score;x1,y1,...,xn,yn". Coordinates print as integers when integral,
/// else with full precision; the score always keeps a decimal point.
pub fn format_detections(detections: &[Detection]) -> String {
    let mut out = String::new();
    for det in detections {
        let coords: Vec<String> = det
            .polygon
            .vertices()
            .iter()
            .flat_map(|p| [crate::labels::fmt_coord(p.x), crate::labels::fmt_coord(p.y)])
            .collect();
        out.push_str(&format!("{:?};{}\n", det.score, coords.join(",")));
    }
    out
}

/// Parses detection file text: one detection per line,
/// "score;x1,y1,...,xn,yn". Blank lines are skipped.
pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let bad = |what: String| CoreError::Parse(format!("line {}: {what}", lineno + 1));
        let (score_str, coord_str) = line
            .split_once(';')
            .ok_or_else(|| bad("expected \"score;coords\"".into()))?;
        let score: f64 = score_str
            .trim()
            .parse()
            .map_err(|_| bad(format!("bad score {score_str:?}")))?;
        if !score.is_finite() {
            return Err(bad(format!("non-finite score {score_str:?}")));
        }
        let coords: Vec<f64> = coord_str
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>().map_err(|_| bad(format!("bad coordinate {s:?}")))
            })
            .collect::<Result<_>>()?;
        if coords.len() < 6 || coords.len() % 2 != 0 {
            return Err(bad("expected an even list of at least 6 coordinates".into()));
        }
        let vertices: Vec<Point> =
            coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect();
        let polygon = Polygon::new(vertices).map_err(|e| bad(e.to_string()))?;
        out.push(Detection { score, polygon });
    }
    Ok(out)
}
