//! Grad-CAM maps from externally computed activations and gradients, plus
//! the resize and scaling applied to input images.
//!
//! Resizing follows the half-pixel convention: output pixel `i` of `n_out`
//! samples the source at `(i + 0.5) * n_in / n_out - 0.5`. Bilinear mode
//! interpolates there with coordinates clamped to the source; nearest mode
//! takes source pixel `floor((i + 0.5) * n_in / n_out)`, the pixel whose
//! center is closest.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::format;

/// Channel-major stack of `c` planes of `h * w` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(c: usize, h: usize, w: usize, data: Vec<f64>) -> Result<Self> {
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::input(format!("tensor dimensions {c}x{h}x{w} must be positive")));
        }
        if data.len() != c * h * w {
            return Err(Error::input(format!("{c}x{h}x{w} tensor needs {} values, got {}", c * h * w, data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("tensor holds a non-finite value"));
        }
        Ok(Tensor3 { c, h, w, data })
    }

    pub fn channel(&self, k: usize) -> &[f64] {
        let plane = self.h * self.w;
        &self.data[k * plane..(k + 1) * plane]
    }
}

/// Row-major `h * w` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Map2 {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

/// A map with every value in [0, 1].
pub type Heatmap = Map2;

impl Map2 {
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        Map2 {
            h: rows.len(),
            w: rows.first().map_or(0, |r| r.len()),
            data: rows.concat(),
        }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.w.max(1))
    }
}

/// Mean gradient of each channel.
pub fn gap_weights(grads: &Tensor3) -> Vec<f64> {
    let z = (grads.h * grads.w) as f64;
    (0..grads.c).map(|k| grads.channel(k).iter().sum::<f64>() / z).collect()
}

/// `sum_k alphas[k] * maps[k]`, before clipping.
pub fn weighted_sum(alphas: &[f64], maps: &Tensor3) -> Result<Map2> {
    if alphas.len() != maps.c {
        return Err(Error::contract(format!("{} weights for {} channels", alphas.len(), maps.c)));
    }
    let mut data = vec![0.0; maps.h * maps.w];
    for (k, &alpha) in alphas.iter().enumerate() {
        for (acc, &a) in data.iter_mut().zip(maps.channel(k)) {
            *acc += alpha * a;
        }
    }
    Ok(Map2 {
        h: maps.h,
        w: maps.w,
        data,
    })
}

/// Weighted channel sum with negative values set to zero.
pub fn cam(alphas: &[f64], maps: &Tensor3) -> Result<Map2> {
    let mut m = weighted_sum(alphas, maps)?;
    for v in &mut m.data {
        *v = v.max(0.0);
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resample {
    Nearest,
    #[default]
    Bilinear,
}

impl FromStr for Resample {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nearest" => Ok(Resample::Nearest),
            "bilinear" => Ok(Resample::Bilinear),
            _ => Err(Error::input(format!("unknown resampling mode {s:?}"))),
        }
    }
}

/// Source position and blend weight for each output index along one axis.
fn axis(n_in: usize, n_out: usize, mode: Resample) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    let last = n_in - 1;
    (0..n_out)
        .map(|i| match mode {
            Resample::Nearest => {
                let j = (((i as f64 + 0.5) * scale).floor() as usize).min(last);
                (j, j, 0.0)
            }
            Resample::Bilinear => {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last as f64);
                let j0 = src.floor() as usize;
                (j0, (j0 + 1).min(last), src - j0 as f64)
            }
        })
        .collect()
}

pub fn upsample(map: &Map2, out_h: usize, out_w: usize, mode: Resample) -> Result<Map2> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::input(format!("output size {out_w}x{out_h} must be positive")));
    }
    if map.h == 0 || map.w == 0 {
        return Err(Error::input("cannot resize an empty map"));
    }
    let ys = axis(map.h, out_h, mode);
    let xs = axis(map.w, out_w, mode);
    let mut data = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let top = lerp(map.at(y0, x0), map.at(y0, x1), tx);
            let bottom = lerp(map.at(y1, x0), map.at(y1, x1), tx);
            data.push(lerp(top, bottom, ty));
        }
    }
    Ok(Map2 {
        h: out_h,
        w: out_w,
        data,
    })
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Divides by the maximum; an all-zero map is returned unchanged.
pub fn normalize_map(map: &Map2) -> Heatmap {
    let max = map.data.iter().copied().fold(0.0, f64::max);
    let mut out = map.clone();
    if max > 0.0 {
        for v in &mut out.data {
            *v /= max;
        }
    }
    out
}

/// Full chain: channel weights, clipped weighted sum, resize, max-normalize.
pub fn gradcam(maps: &Tensor3, grads: &Tensor3, out_h: usize, out_w: usize, mode: Resample) -> Result<Heatmap> {
    if (maps.c, maps.h, maps.w) != (grads.c, grads.h, grads.w) {
        return Err(Error::input(format!(
            "activation shape {}x{}x{} differs from gradient shape {}x{}x{}",
            maps.c, maps.h, maps.w, grads.c, grads.h, grads.w
        )));
    }
    let raw = cam(&gap_weights(grads), maps)?;
    Ok(normalize_map(&upsample(&raw, out_h, out_w, mode)?))
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<u8>,
}

pub const MODEL_INPUT_SIZE: usize = 320;

/// Bilinear resize to `out_h * out_w`, then scaling from 0..=255 to 0..=1.
pub fn preprocess_image(image: &GrayImage, out_h: usize, out_w: usize) -> Result<Map2> {
    if image.h == 0 || image.w == 0 {
        return Err(Error::input("image has no pixels"));
    }
    if image.pixels.len() != image.h * image.w {
        return Err(Error::input("pixel count does not match image dimensions"));
    }
    let raw = Map2 {
        h: image.h,
        w: image.w,
        data: image.pixels.iter().map(|&p| f64::from(p)).collect(),
    };
    let mut out = upsample(&raw, out_h, out_w, Resample::Bilinear)?;
    for v in &mut out.data {
        *v /= 255.0;
    }
    Ok(out)
}

/// Reads the plain-text tensor format: optional `#` comment lines, a
/// `C H W` header, then `C * H` rows of `W` space-separated numbers.
pub fn parse_tensor(text: &str, origin: &str) -> Result<Tensor3> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .skip_while(|(_, l)| l.is_empty() || l.starts_with('#'));

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| Error::parse(origin, 1, "missing `C H W` header"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(origin, header_line, "header must be three positive integers `C H W`"))?;
    let [c, h, w] = dims[..] else {
        return Err(Error::parse(origin, header_line, "header must be three positive integers `C H W`"));
    };
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::parse(origin, header_line, "tensor dimensions must be positive"));
    }

    let mut data = Vec::with_capacity(c * h * w);
    let mut rows = 0;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if rows == c * h {
            return Err(Error::parse(origin, n, format!("expected {} rows of values", c * h)));
        }
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|v| v.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| Error::parse(origin, n, "values must be finite numbers"))?;
        if row.len() != w {
            return Err(Error::parse(origin, n, format!("row has {} values; expected {w}", row.len())));
        }
        data.extend(row);
        rows += 1;
    }
    if rows != c * h {
        return Err(Error::parse(origin, text.lines().count(), format!("found {rows} rows; expected {}", c * h)));
    }
    Tensor3::new(c, h, w, data)
}

pub fn tensor_to_text(t: &Tensor3) -> String {
    let mut out = format!("# TNSR/1\n{} {} {}\n", t.c, t.h, t.w);
    for row in t.data.chunks(t.w) {
        let cells: Vec<String> = row.iter().map(|&v| format::real(v)).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// `round(255 * v)` with halves rounded away from zero, clamped to 0..=255.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Plain PGM (`P2`) with maxval 255.
pub fn heatmap_to_pgm(map: &Heatmap) -> String {
    let mut out = format!("P2\n{} {}\n255\n", map.w, map.h);
    for row in map.rows() {
        let cells: Vec<String> = row.iter().map(|&v| quantize(v).to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(" "));
    }
    out
}
