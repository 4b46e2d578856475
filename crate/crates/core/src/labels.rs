//! Kernel-label generation: polygon annotations are shrunk by the distance
//! S = A(1-γ²)/P and rasterized into binary kernel masks. Also hosts the
//! annotation text format ("x1,y1,...,xn,yn[,###]") and the binary `Mask`
//! type shared with post-processing and evaluation.

use crate::geometry::{Point, Polygon};
use crate::offset::offset_polygon;
use crate::{CoreError, Result};

/// Binary map with row-major u8 storage (0 or 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(h: usize, w: usize) -> Mask {
        Mask {
            h,
            w,
            data: vec![0; h * w],
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.data[y * self.w + x] = v;
    }

    /// Count of positive pixels.
    pub fn area(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        assert_eq!((self.h, self.w), (other.h, other.w), "mask size mismatch");
        let mut inter = 0usize;
        let mut union = 0usize;
        for (a, b) in self.data.iter().zip(&other.data) {
            inter += (a & b) as usize;
            union += (a | b) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// True iff every positive pixel of `self` is positive in `other`.
    pub fn subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }
}

/// Shrink distance S = A(1-γ²)/P.
pub fn shrink_distance(poly: &Polygon, gamma: f64) -> Result<f64> {
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(CoreError::DegeneratePolygon(format!(
            "gamma {gamma} outside (0,1)"
        )));
    }
    let a = poly.area();
    let p = poly.perimeter();
    if a <= 0.0 || p <= 0.0 {
        return Err(CoreError::DegeneratePolygon(
            "zero area or perimeter".into(),
        ));
    }
    Ok(a * (1.0 - gamma * gamma) / p)
}

/// Rasterizes polygons onto an h x w grid: a pixel is positive iff its
/// center lies inside any polygon under the even-odd half-open convention
/// (centers exactly on an edge belong to the polygon on its top-left).
/// Out-of-bounds geometry is clipped.
pub fn rasterize(polys: &[Polygon], h: usize, w: usize) -> Mask {
    let mut mask = Mask::zeros(h, w);
    for poly in polys {
        scanline_fill(poly, &mut mask);
    }
    mask
}

fn scanline_fill(poly: &Polygon, mask: &mut Mask) {
    let (lo, hi) = poly.bounding_box();
    let y0 = (lo.y - 0.5).ceil().max(0.0) as usize;
    let y1 = ((hi.y - 0.5).floor() as isize).min(mask.h as isize - 1);
    if y1 < 0 {
        return;
    }
    let verts = poly.vertices();
    let n = verts.len();
    let mut xs: Vec<f64> = Vec::with_capacity(8);
    for y in y0..=(y1 as usize) {
        let cy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let a = verts[i];
            let b = verts[(i + 1) % n];
            if (a.y > cy) != (b.y > cy) {
                xs.push(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        xs.sort_by(|p, q| p.partial_cmp(q).expect("finite intersections"));
        for pair in xs.chunks_exact(2) {
            // Center cx = x + 0.5 is inside iff pair[0] <= cx < pair[1].
            let x_start = (pair[0] - 0.5).ceil().max(0.0) as usize;
            let x_end = ((pair[1] - 0.5).ceil() as isize).min(mask.w as isize) as usize;
            for x in x_start..x_end {
                mask.set(y, x, 1);
            }
        }
    }
}

/// Kernel label for one image: the union mask plus per-instance results.
#[derive(Clone, Debug)]
pub struct KernelLabel {
    pub mask: Mask,
    /// Shrunk polygons per instance; empty when the instance collapsed.
    pub shrunk: Vec<Vec<Polygon>>,
    /// Shrink distance S_i per instance.
    pub shrink: Vec<f64>,
    /// Instances whose kernels collapsed to nothing.
    pub collapsed: Vec<bool>,
}

/// Shrinks every instance by its own S_i and rasterizes the union.
/// Collapsed instances contribute nothing and are flagged.
pub fn make_kernel_label(polys: &[Polygon], gamma: f64, size: (usize, usize)) -> KernelLabel {
    let (h, w) = size;
    let mut shrunk = Vec::with_capacity(polys.len());
    let mut shrink = Vec::with_capacity(polys.len());
    let mut collapsed = Vec::with_capacity(polys.len());
    for poly in polys {
        let s = shrink_distance(poly, gamma).expect("validated polygon");
        let pieces = offset_polygon(poly, -s);
        collapsed.push(pieces.is_empty());
        shrink.push(s);
        shrunk.push(pieces);
    }
    let all: Vec<Polygon> = shrunk.iter().flatten().cloned().collect();
    KernelLabel {
        mask: rasterize(&all, h, w),
        shrunk,
        shrink,
        collapsed,
    }
}

/// One annotated instance; `ignore` marks the trailing "###" convention.
#[derive(Clone, Debug)]
pub struct Instance {
    pub polygon: Polygon,
    pub ignore: bool,
}

/// Parses annotation text: one instance per line,
/// "x1,y1,x2,y2,...,xn,yn[,###]". Blank lines are skipped.
pub fn parse_annotations(text: &str) -> Result<Vec<Instance>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let ignore = parts.last() == Some(&"###");
        if ignore {
            parts.pop();
        }
        if parts.len() < 6 || parts.len() % 2 != 0 {
            return Err(CoreError::Parse(format!(
                "line {}: expected an even list of at least 6 coordinates",
                lineno + 1
            )));
        }
        let coords: Vec<f64> = parts
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    CoreError::Parse(format!("line {}: bad coordinate {s:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        let vertices: Vec<Point> = coords
            .chunks_exact(2)
            .map(|c| Point::new(c[0], c[1]))
            .collect();
        let polygon = Polygon::new(vertices).map_err(|e| {
            CoreError::Parse(format!("line {}: {e}", lineno + 1))
        })?;
        out.push(Instance { polygon, ignore });
    }
    Ok(out)
}

/// Formats instances in the annotation file format. Coordinates print as
/// integers when integral, else with full precision.
pub fn format_annotations(instances: &[Instance]) -> String {
    let mut out = String::new();
    for inst in instances {
        let coords: Vec<String> = inst
            .polygon
            .vertices()
            .iter()
            .flat_map(|p| [fmt_coord(p.x), fmt_coord(p.y)])
            .collect();
        out.push_str(&coords.join(","));
        if inst.ignore {
            out.push_str(",###");
        }
        out.push('\n');
    }
    out
}

pub(crate) fn fmt_coord(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Loss targets for one image: the kernel mask plus the ignore mask built
/// from don't-care instances (masked out of the loss and evaluation).
#[derive(Clone, Debug)]
pub struct TrainingTarget {
    pub kernel: Mask,
    pub ignore: Mask,
    pub collapsed: usize,
}

pub fn make_training_target(
    instances: &[Instance],
    gamma: f64,
    size: (usize, usize),
) -> TrainingTarget {
    let keep: Vec<Polygon> = instances
        .iter()
        .filter(|i| !i.ignore)
        .map(|i| i.polygon.clone())
        .collect();
    let dont_care: Vec<Polygon> = instances
        .iter()
        .filter(|i| i.ignore)
        .map(|i| i.polygon.clone())
        .collect();
    let label = make_kernel_label(&keep, gamma, size);
    TrainingTarget {
        kernel: label.mask,
        ignore: rasterize(&dont_care, size.0, size.1),
        collapsed: label.collapsed.iter().filter(|&&c| c).count(),
    }
}
