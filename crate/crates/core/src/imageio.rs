//! Image and mask I/O: binary PGM (P5) and PPM (P6) files, tensor
//! conversion with bilinear resize and normalization, and detection
//! overlays. Headers are written canonically; reads accept any legal
//! whitespace and comments.

use crate::geometry::Point;
use crate::postprocess::Detection;
use crate::tensor::{Shape, Tensor};
use crate::{CoreError, Result};
use std::io::Write as _;
use std::path::Path;

/// 8-bit image, row-major, samples interleaved per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Image {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(data.len(), width * height * channels, "data length mismatch");
        Image {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn fill(width: usize, height: usize, channels: usize, value: u8) -> Image {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    #[inline]
    pub fn sample(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set_sample(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }
}

/// Parses a binary PGM/PPM payload.
pub fn parse_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = take_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => {
            return Err(CoreError::Format(format!(
                "unsupported magic {other:?}; only binary P5/P6"
            )))
        }
    };
    let width: usize = parse_dim(&take_token(bytes, &mut pos)?, "width")?;
    let height: usize = parse_dim(&take_token(bytes, &mut pos)?, "height")?;
    let maxval: usize = parse_dim(&take_token(bytes, &mut pos)?, "maxval")?;
    if maxval != 255 {
        return Err(CoreError::Format(format!(
            "unsupported max-value {maxval}; only 255"
        )));
    }
    // Exactly one whitespace byte separates the header from the payload.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(CoreError::Format("missing header terminator".into()));
    }
    pos += 1;
    let need = width * height * channels;
    let payload = bytes
        .get(pos..pos + need)
        .ok_or_else(|| CoreError::Format(format!("truncated payload: need {need} bytes")))?;
    Ok(Image::new(width, height, channels, payload.to_vec()))
}

fn parse_dim(token: &str, what: &str) -> Result<usize> {
    let v: usize = token
        .parse()
        .map_err(|_| CoreError::Format(format!("bad {what} {token:?}")))?;
    if v == 0 && what != "maxval" {
        return Err(CoreError::Format(format!("zero {what}")));
    }
    Ok(v)
}

/// Next whitespace-separated header token, skipping `#` comments.
fn take_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(CoreError::Format("unexpected end of header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_image(path: &Path) -> Result<Image> {
    parse_pnm(&std::fs::read(path)?)
}

/// Serializes to the canonical header form "P5|P6\n{w} {h}\n255\n".
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Writes atomically: a temp file in the target directory is renamed over
/// the destination only after a complete write.
pub fn write_image(img: &Image, path: &Path) -> Result<()> {
    write_atomic(path, &encode_pnm(img))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = path.with_extension("tmp-partial");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    if let Some(dir) = dir {
        if let Ok(d) = std::fs::File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Per-channel normalization applied after scaling samples to [0,1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }
}

/// Resize policy for `to_tensor`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetSize {
    /// Stretch to exactly width x height (aspect not preserved).
    Exact { width: usize, height: usize },
    /// Scale so the short side hits this length, preserving aspect.
    ShortSide(usize),
}

/// How tensor coordinates map back to original image coordinates:
/// original = (tensor_coord - pad) / scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResizeInfo {
    pub scale_x: f64,
    pub scale_y: f64,
    pub pad_left: usize,
    pub pad_top: usize,
    pub tensor_w: usize,
    pub tensor_h: usize,
    pub orig_w: usize,
    pub orig_h: usize,
}

fn round_up_32(v: usize) -> usize {
    v.div_ceil(32) * 32
}

/// Converts to a (1,3,H,W) tensor: bilinear resize, scale to [0,1],
/// normalize per channel, then zero-pad symmetrically so both dims are
/// multiples of 32. Grayscale replicates its channel.
pub fn to_tensor(img: &Image, target: TargetSize, norm: &Normalization) -> (Tensor, ResizeInfo) {
    let (rw, rh) = match target {
        TargetSize::Exact { width, height } => {
            assert!(width > 0 && height > 0, "zero-size target");
            (width, height)
        }
        TargetSize::ShortSide(s) => {
            assert!(s > 0, "zero-size target");
            let short = img.width.min(img.height) as f64;
            let scale = s as f64 / short;
            (
                ((img.width as f64 * scale).round() as usize).max(1),
                ((img.height as f64 * scale).round() as usize).max(1),
            )
        }
    };
    let (tw, th) = (round_up_32(rw), round_up_32(rh));
    let pad_left = (tw - rw) / 2;
    let pad_top = (th - rh) / 2;
    let resized = bilinear_resize(img, rw, rh);
    let mut data = vec![0.0; 3 * th * tw];
    for c in 0..3 {
        let src_c = if img.channels == 1 { 0 } else { c };
        let plane = &mut data[c * th * tw..][..th * tw];
        for y in 0..rh {
            for x in 0..rw {
                let v = resized[(y * rw + x) * img.channels + src_c] / 255.0;
                plane[(y + pad_top) * tw + x + pad_left] = (v - norm.mean[c]) / norm.std[c];
            }
        }
    }
    let info = ResizeInfo {
        scale_x: rw as f64 / img.width as f64,
        scale_y: rh as f64 / img.height as f64,
        pad_left,
        pad_top,
        tensor_w: tw,
        tensor_h: th,
        orig_w: img.width,
        orig_h: img.height,
    };
    (Tensor::from_data(Shape([1, 3, th, tw]), data), info)
}

/// Bilinear resample with half-pixel centers, returning f64 samples in the
/// source's channel layout.
fn bilinear_resize(img: &Image, rw: usize, rh: usize) -> Vec<f64> {
    let (w, h, c) = (img.width, img.height, img.channels);
    let mut out = vec![0.0; rw * rh * c];
    let sx = w as f64 / rw as f64;
    let sy = h as f64 / rh as f64;
    for y in 0..rh {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for x in 0..rw {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let p00 = img.sample(y0, x0, ch) as f64;
                let p01 = img.sample(y0, x1, ch) as f64;
                let p10 = img.sample(y1, x0, ch) as f64;
                let p11 = img.sample(y1, x1, ch) as f64;
                let top = p00 + (p01 - p00) * tx;
                let bot = p10 + (p11 - p10) * tx;
                out[(y * rw + x) * c + ch] = top + (bot - top) * ty;
            }
        }
    }
    out
}

/// Draws detection outlines (Bresenham, clipped) onto a copy. Red on color
/// images, white on grayscale.
pub fn draw_overlay(img: &Image, detections: &[Detection]) -> Image {
    let mut out = img.clone();
    for det in detections {
        let verts = det.polygon.vertices();
        let n = verts.len();
        for i in 0..n {
            draw_line(&mut out, verts[i], verts[(i + 1) % n]);
        }
    }
    out
}

fn plot(img: &mut Image, x: i64, y: i64) {
    if x < 0 || y < 0 || x >= img.width as i64 || y >= img.height as i64 {
        return;
    }
    let (x, y) = (x as usize, y as usize);
    if img.channels == 1 {
        img.set_sample(y, x, 0, 255);
    } else {
        img.set_sample(y, x, 0, 255);
        img.set_sample(y, x, 1, 0);
        img.set_sample(y, x, 2, 0);
    }
}

fn draw_line(img: &mut Image, a: Point, b: Point) {
    let (mut x0, mut y0) = (a.x.round() as i64, a.y.round() as i64);
    let (x1, y1) = (b.x.round() as i64, b.y.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        plot(img, x0, y0);
        if x0 == x1 && y0 == y1 {
            return;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Polygon;

    #[test]
    fn p6_fixture_bytes_parse_in_order() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[
            10, 20, 30, 40, 50, 60, //
            70, 80, 90, 100, 110, 120,
        ]);
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (2, 2, 3));
        assert_eq!(img.sample(0, 0, 0), 10);
        assert_eq!(img.sample(0, 1, 2), 60);
        assert_eq!(img.sample(1, 0, 1), 80);
        assert_eq!(img.sample(1, 1, 2), 120);
    }

    #[test]
    fn p5_is_single_channel_and_comments_are_skipped() {
        let mut bytes = b"P5 # comment\n# another line\n 3\t2 \n255 ".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = parse_pnm(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.channels), (3, 2, 1));
        assert_eq!(img.data, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn rejects_malformed_headers() {
        assert!(parse_pnm(b"P4\n1 1\n255\n\x00").is_err());
        assert!(parse_pnm(b"P6\n2 2\n65535\n").is_err());
        assert!(parse_pnm(b"P6\n2 2\n255\n\x00\x00\x00").is_err(), "truncated");
        assert!(parse_pnm(b"P6\nx 2\n255\n").is_err());
        assert!(parse_pnm(b"P6\n0 2\n255\n").is_err());
        assert!(parse_pnm(b"P6").is_err());
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let data: Vec<u8> = (0..4 * 3 * channels).map(|i| (i * 7 % 256) as u8).collect();
            let img = Image::new(4, 3, channels, data);
            let path = dir.path().join(format!("t{channels}.pnm"));
            write_image(&img, &path).unwrap();
            let back = read_image(&path).unwrap();
            assert_eq!(back, img);
            // Re-encoding the canonical form is byte-identical.
            assert_eq!(encode_pnm(&back), std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn to_tensor_identity_values() {
        let mut img = Image::fill(32, 32, 3, 0);
        img.set_sample(3, 5, 0, 255);
        img.set_sample(3, 5, 1, 128);
        let norm = Normalization::default();
        let (t, info) = to_tensor(&img, TargetSize::Exact { width: 32, height: 32 }, &norm);
        assert_eq!(t.shape(), Shape([1, 3, 32, 32]));
        assert_eq!((info.pad_left, info.pad_top), (0, 0));
        assert_eq!((info.scale_x, info.scale_y), (1.0, 1.0));
        let d = t.data();
        let at = |c: usize, y: usize, x: usize| d[c * 32 * 32 + y * 32 + x];
        let expect = |v: f64, c: usize| (v / 255.0 - norm.mean[c]) / norm.std[c];
        assert!((at(0, 3, 5) - expect(255.0, 0)).abs() < 1e-12);
        assert!((at(1, 3, 5) - expect(128.0, 1)).abs() < 1e-12);
        assert!((at(2, 3, 5) - expect(0.0, 2)).abs() < 1e-12);
        assert!((at(0, 0, 0) - expect(0.0, 0)).abs() < 1e-12);
    }

    #[test]
    fn short_side_resize_arithmetic() {
        let img = Image::fill(100, 50, 3, 77);
        let (t, info) = to_tensor(&img, TargetSize::ShortSide(736), &Normalization::default());
        assert_eq!(t.shape(), Shape([1, 3, 736, 1472]));
        assert_eq!((info.pad_left, info.pad_top), (0, 0));
        assert!((info.scale_x - 14.72).abs() < 1e-12);
        assert!((info.scale_y - 14.72).abs() < 1e-12);
        // Constant image stays constant per channel.
        let norm = Normalization::default();
        let d = t.data();
        for c in 0..3 {
            let expect = (77.0 / 255.0 - norm.mean[c]) / norm.std[c];
            let plane = &d[c * 736 * 1472..][..736 * 1472];
            assert!(plane.iter().all(|v| (v - expect).abs() < 1e-12));
        }
    }

    #[test]
    fn short_side_pads_to_multiple_of_32() {
        let img = Image::fill(37, 21, 1, 100);
        let (t, info) = to_tensor(&img, TargetSize::ShortSide(64), &Normalization::default());
        // 21 -> 64 exactly; 37*64/21 = 112.76 -> 113 -> pad to 128.
        assert_eq!(t.shape(), Shape([1, 3, 64, 128]));
        assert_eq!(info.pad_top, 0);
        assert_eq!(info.pad_left, (128 - 113) / 2);
        assert_eq!(info.tensor_w % 32, 0);
        assert_eq!(info.tensor_h % 32, 0);
        let d = t.data();
        // Padding stays exactly zero; interior is the normalized constant.
        assert_eq!(d[0], 0.0);
        assert_eq!(d[127], 0.0);
        let norm = Normalization::default();
        let expect = (100.0 / 255.0 - norm.mean[0]) / norm.std[0];
        assert!((d[info.pad_left + 1] - expect).abs() < 1e-12);
    }

    #[test]
    fn short_side_dims_always_divisible_by_32() {
        for (w, h, s) in [(13, 97, 48), (640, 359, 736), (31, 33, 32), (5, 5, 160)] {
            let img = Image::fill(w, h, 1, 10);
            let (t, info) = to_tensor(&img, TargetSize::ShortSide(s), &Normalization::default());
            assert_eq!(t.shape().h() % 32, 0, "{w}x{h}@{s}");
            assert_eq!(t.shape().w() % 32, 0, "{w}x{h}@{s}");
            // Aspect preserved within a pixel per axis before padding.
            let scale = s as f64 / w.min(h) as f64;
            let rw = info.scale_x * w as f64;
            let rh = info.scale_y * h as f64;
            assert!((rw - scale * w as f64).abs() <= 0.5 + 1e-9, "{w}x{h}@{s}");
            assert!((rh - scale * h as f64).abs() <= 0.5 + 1e-9, "{w}x{h}@{s}");
        }
    }

    #[test]
    fn overlay_empty_is_identity_and_rect_outline_counts() {
        let img = Image::fill(40, 30, 3, 0);
        assert_eq!(draw_overlay(&img, &[]), img);
        let det = Detection {
            score: 0.9,
            polygon: Polygon::rect(5.0, 5.0, 20.0, 15.0),
        };
        let out = draw_overlay(&img, std::slice::from_ref(&det));
        let changed = (0..30)
            .flat_map(|y| (0..40).map(move |x| (y, x)))
            .filter(|&(y, x)| (0..3).any(|c| out.sample(y, x, c) != img.sample(y, x, c)))
            .count();
        // Axis-aligned rectangle outline: 2*(16+11) - 4 corners.
        assert_eq!(changed, 2 * (16 + 11) - 4);
        assert_eq!(out.sample(5, 5, 0), 255);
        assert_eq!(out.sample(5, 5, 1), 0);
        // Original untouched.
        assert_eq!(img.sample(5, 5, 0), 0);
    }

    #[test]
    fn overlay_clips_out_of_bounds() {
        let img = Image::fill(10, 10, 1, 0);
        let det = Detection {
            score: 0.5,
            polygon: Polygon::new(vec![
                Point::new(-5.0, -5.0),
                Point::new(15.0, -5.0),
                Point::new(15.0, 15.0),
                Point::new(-5.0, 15.0),
            ])
            .unwrap(),
        };
        let out = draw_overlay(&img, &[det]);
        // All outline pixels fall outside; the image is unchanged.
        assert_eq!(out, img);
    }
}
