//! Translation quality against synthetic ground truth.
//!
//! SSIM is single-scale with an 11×11 Gaussian window (σ = 1.5, weights
//! normalized to sum 1), `C1 = 0.01²`, `C2 = 0.03²`, dynamic range 1 after
//! mapping `[-1, 1]` to `[0, 1]`. Statistics use the population (biased)
//! covariance, the map is averaged over the valid region (no padding), and
//! channels are averaged. PSNR uses a peak-to-peak range of 2.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::Scalar;
use crate::data::{save_png, stack, Dataset, Image, Mask};
use crate::error::{Error, Result};
use crate::nn::GeneratorQuartet;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// Value range of `[-1, 1]` images.
pub const PSNR_RANGE: f64 = 2.0;

fn same_shape(x: &Image, y: &Image, op: &'static str) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    Ok(())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filter of one `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| k[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y, "ssim")?;
    if x.height < SSIM_WINDOW || x.width < SSIM_WINDOW {
        return Err(Error::Metric(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            x.height, x.width
        )));
    }
    let k = gaussian_window();
    let (h, w) = (x.height, x.width);
    let unit = |v: f64| (v + 1.0) / 2.0;
    let mut total = 0.0;
    for c in 0..x.channels {
        let range = c * h * w..(c + 1) * h * w;
        let a: Vec<f64> = x.data[range.clone()].iter().map(|&v| unit(v)).collect();
        let b: Vec<f64> = y.data[range].iter().map(|&v| unit(v)).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mu_a = filter_valid(&a, h, w, &k);
        let mu_b = filter_valid(&b, h, w, &k);
        let aa = filter_valid(&prod(&a, &a), h, w, &k);
        let bb = filter_valid(&prod(&b, &b), h, w, &k);
        let ab = filter_valid(&prod(&a, &b), h, w, &k);
        let mut sum = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / x.channels as f64)
}

/// `10 log10(range² / mse)`; identical images give `+∞`.
pub fn psnr(x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y, "psnr")?;
    let mse = x.data.iter().zip(&y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PSNR_RANGE * PSNR_RANGE / mse).log10())
}

pub fn mean_abs_error(x: &Image, y: &Image) -> Result<f64> {
    same_shape(x, y, "mae")?;
    Ok(x.data.iter().zip(&y.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.data.len() as f64)
}

/// `(bps, fgs)`: mean absolute change outside / inside the mask, over all
/// channels, in `[-1, 1]` units. An empty mask gives `fgs = 0`.
pub fn background_preservation(input: &Image, output: &Image, mask: &Mask) -> Result<(f64, f64)> {
    same_shape(input, output, "background_preservation")?;
    if (mask.height, mask.width) != (input.height, input.width) {
        return Err(Error::ShapeMismatch {
            op: "background_preservation mask",
            lhs: vec![input.height, input.width],
            rhs: vec![mask.height, mask.width],
        });
    }
    let plane = input.plane();
    let (mut bg, mut fg) = (0.0, 0.0);
    for (i, (a, b)) in input.data.iter().zip(&output.data).enumerate() {
        if mask.data[i % plane] {
            fg += (a - b).abs();
        } else {
            bg += (a - b).abs();
        }
    }
    let n_fg = mask.count();
    let n_bg = plane - n_fg;
    if n_bg == 0 {
        return Err(Error::Metric("mask covers the whole image; background score is undefined".into()));
    }
    let fgs = if n_fg == 0 {
        0.0
    } else {
        fg / (n_fg * input.channels) as f64
    };
    Ok((bg / (n_bg * input.channels) as f64, fgs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "AB")]
    AB,
    #[serde(rename = "BA")]
    BA,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "AB" | "ab" => Ok(Direction::AB),
            "BA" | "ba" => Ok(Direction::BA),
            other => Err(Error::config("/direction", format!("expected AB or BA, got `{other}`"))),
        }
    }
}

/// `+∞` is written as the string `"inf"`.
mod psnr_serde {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub mae_translation: f64,
    pub ssim: f64,
    #[serde(with = "psnr_serde")]
    pub psnr_db: f64,
    pub bps: f64,
    pub fgs: f64,
    pub n_samples: usize,
}

/// Metrics of one translated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleMetrics {
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub bps: f64,
    pub fgs: f64,
}

pub fn sample_metrics(input: &Image, output: &Image, truth: &Image, mask: &Mask) -> Result<SampleMetrics> {
    let (bps, fgs) = background_preservation(input, output, mask)?;
    Ok(SampleMetrics {
        mae: mean_abs_error(output, truth)?,
        ssim: ssim(output, truth)?,
        psnr: psnr(output, truth)?,
        bps,
        fgs,
    })
}

/// Mean of per-sample metrics.
pub fn aggregate(direction: Direction, samples: &[SampleMetrics]) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Metric("empty test set".into()));
    }
    let n = samples.len() as f64;
    let mean = |f: fn(&SampleMetrics) -> f64| samples.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        direction,
        mae_translation: mean(|s| s.mae),
        ssim: mean(|s| s.ssim),
        psnr_db: mean(|s| s.psnr),
        bps: mean(|s| s.bps),
        fgs: mean(|s| s.fgs),
        n_samples: samples.len(),
    })
}

/// Translate the test split with `G_AB` (or `G_BA`) and return
/// `(inputs, outputs, ground truth)`.
pub fn translate_test_set<T: Scalar>(
    quartet: &GeneratorQuartet<T>,
    data: &Dataset,
    direction: Direction,
) -> Result<(Vec<Image>, Vec<Image>, Vec<Image>)> {
    let (inputs, truth, g) = match direction {
        Direction::AB => (&data.test_a, &data.test_b, &quartet.g_ab),
        Direction::BA => (&data.test_b, &data.test_a, &quartet.g_ba),
    };
    let mut outputs = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(16) {
        let refs: Vec<&Image> = chunk.iter().collect();
        let out = g.forward(&stack::<T>(&refs)?)?;
        for i in 0..chunk.len() {
            outputs.push(Image::from_batch(&out, i)?);
        }
    }
    Ok((inputs.clone(), outputs, truth.clone()))
}

/// Metric means over the test split; needs masks.
pub fn evaluate<T: Scalar>(quartet: &GeneratorQuartet<T>, data: &Dataset, direction: Direction) -> Result<EvalReport> {
    let masks = data.test_masks.as_ref().ok_or_else(|| {
        Error::Metric("evaluation needs foreground masks (masks/ directory) to compute bps and fgs".into())
    })?;
    let (inputs, outputs, truth) = translate_test_set(quartet, data, direction)?;
    let mut per = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let m = sample_metrics(&inputs[i], &outputs[i], &truth[i], &masks[i]).map_err(|e| Error::Sample {
            index: i,
            source: Box::new(e),
        })?;
        per.push(m);
    }
    aggregate(direction, &per)
}

/// Absolute difference rendered on a black-red-yellow-white ramp.
pub fn heatmap(x: &Image, y: &Image) -> Result<Image> {
    same_shape(x, y, "heatmap")?;
    let plane = x.plane();
    let mut out = Image::filled(3, x.height, x.width, -1.0);
    for p in 0..plane {
        let d = (0..x.channels).map(|c| (x.data[c * plane + p] - y.data[c * plane + p]).abs()).sum::<f64>()
            / (2.0 * x.channels as f64);
        for c in 0..3 {
            let level = (3.0 * d - c as f64).clamp(0.0, 1.0);
            out.data[c * plane + p] = 2.0 * level - 1.0;
        }
    }
    Ok(out)
}

fn to_rgb(img: &Image) -> Image {
    if img.channels == 3 {
        return img.clone();
    }
    let plane = img.plane();
    let mut out = Image::filled(3, img.height, img.width, 0.0);
    for c in 0..3 {
        let src = c.min(img.channels - 1);
        out.data[c * plane..(c + 1) * plane].copy_from_slice(&img.data[src * plane..(src + 1) * plane]);
    }
    out
}

/// One row per sample: input | output | ground truth | |output − truth|.
pub fn write_grid(path: &Path, inputs: &[Image], outputs: &[Image], truth: &[Image]) -> Result<()> {
    let rows = inputs.len().min(outputs.len()).min(truth.len());
    if rows == 0 {
        return Err(Error::Metric("grid needs at least one sample".into()));
    }
    let (h, w) = (inputs[0].height, inputs[0].width);
    let (gh, gw) = (rows * h, 4 * w);
    let mut grid = Image::filled(3, gh, gw, -1.0);
    for r in 0..rows {
        let cells = [
            to_rgb(&inputs[r]),
            to_rgb(&outputs[r]),
            to_rgb(&truth[r]),
            heatmap(&outputs[r], &truth[r])?,
        ];
        for (col, cell) in cells.iter().enumerate() {
            for c in 0..3 {
                for y in 0..h {
                    let dst = (c * gh + r * h + y) * gw + col * w;
                    grid.data[dst..dst + w].copy_from_slice(&cell.data[(c * h + y) * w..(c * h + y + 1) * w]);
                }
            }
        }
    }
    save_png(&grid, path)
}
