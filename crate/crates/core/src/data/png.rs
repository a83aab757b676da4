use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use super::{generate_sample, Image, Mask, SyntheticTaskSpec};
use crate::error::{Error, Result};

fn to_unit(byte: u8) -> f64 {
    2.0 * byte as f64 / 255.0 - 1.0
}

fn to_byte(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Bilinear resize with aligned corners: output pixel `i` samples source
/// coordinate `i * (src - 1) / (dst - 1)`, so the corner pixels map exactly.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    if img.height == height && img.width == width {
        return img.clone();
    }
    let scale = |src: usize, dst: usize| {
        if dst > 1 {
            (src - 1) as f64 / (dst - 1) as f64
        } else {
            0.0
        }
    };
    let (sy, sx) = (scale(img.height, height), scale(img.width, width));
    let mut out = Image::filled(img.channels, height, width, 0.0);
    for y in 0..height {
        let fy = y as f64 * sy;
        let y0 = (fy.floor() as usize).min(img.height - 1);
        let y1 = (y0 + 1).min(img.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = x as f64 * sx;
            let x0 = (fx.floor() as usize).min(img.width - 1);
            let x1 = (x0 + 1).min(img.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..img.channels {
                let top = img.at(c, y0, x0) * (1.0 - wx) + img.at(c, y0, x1) * wx;
                let bottom = img.at(c, y1, x0) * (1.0 - wx) + img.at(c, y1, x1) * wx;
                out.data[(c * height + y) * width + x] = top * (1.0 - wy) + bottom * wy;
            }
        }
    }
    out
}

/// Decode a PNG as RGB in `[-1, 1]`, resized to `size × size`.
pub fn load_png(path: &Path, size: usize) -> Result<Image> {
    let rgb = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::filled(3, h, w, 0.0);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            img.data[(c * h + y as usize) * w + x as usize] = to_unit(px.0[c]);
        }
    }
    Ok(resize_bilinear(&img, size, size))
}

/// Write an image as 8-bit PNG: grey for one channel, RGB otherwise
/// (a second channel is repeated into blue).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let result = if img.channels == 1 {
        let buf: GrayImage = ImageBuffer::from_fn(w, h, |x, y| Luma([to_byte(img.at(0, y as usize, x as usize))]));
        buf.save(path)
    } else {
        let buf: RgbImage = ImageBuffer::from_fn(w, h, |x, y| {
            let px = |c: usize| to_byte(img.at(c.min(img.channels - 1), y as usize, x as usize));
            Rgb([px(0), px(1), px(2)])
        });
        buf.save(path)
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let buf: GrayImage = ImageBuffer::from_fn(mask.width as u32, mask.height as u32, |x, y| {
        Luma([if mask.data[y as usize * mask.width + x as usize] { 255 } else { 0 }])
    });
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a mask PNG; a pixel is foreground when its (resized) grey value is
/// above mid-range.
pub fn load_mask(path: &Path, size: usize) -> Result<Mask> {
    let img = load_png(path, size)?;
    Ok(Mask {
        height: size,
        width: size,
        data: (0..size * size).map(|p| img.data[p] > 0.0).collect(),
    })
}

/// Sorted `*.png` files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Every PNG of `dir` keyed by file stem, in name order. Fails listing all
/// files that could not be decoded.
pub fn load_png_dir(dir: &Path, size: usize) -> Result<Vec<(String, Image)>> {
    let files = list_pngs(dir)?;
    if files.is_empty() {
        return Err(Error::Data(format!("{}: no PNG files", dir.display())));
    }
    let mut out = Vec::with_capacity(files.len());
    let mut bad = Vec::new();
    for f in &files {
        match load_png(f, size) {
            Ok(img) => {
                let stem = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((stem, img));
            }
            Err(e) => bad.push(format!("{} ({e})", f.display())),
        }
    }
    if !bad.is_empty() {
        return Err(Error::Data(format!("unreadable images: {}", bad.join(", "))));
    }
    Ok(out)
}

/// Write a synthetic task as `trainA/ trainB/ testA/ testB/ masks/` plus
/// `spec.json`.
pub fn write_dataset_dir(spec: &SyntheticTaskSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    for sub in ["trainA", "trainB", "testA", "testB", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let splits = [("train", 0, spec.n_train), ("test", spec.n_train, spec.n_test)];
    for (split, offset, n) in splits {
        for i in 0..n {
            let s = generate_sample(spec, offset + i);
            let name = format!("{i:05}.png");
            save_png(&s.image_a, &dir.join(format!("{split}A")).join(&name))?;
            save_png(&s.image_b, &dir.join(format!("{split}B")).join(&name))?;
            save_mask(&s.mask, &dir.join("masks").join(format!("{split}_{name}")))?;
        }
    }
    let spec_path = dir.join("spec.json");
    let json = serde_json::to_string_pretty(spec)?;
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_and_black_map_to_the_range_ends() {
        assert_eq!(to_unit(255), 1.0);
        assert_eq!(to_unit(0), -1.0);
        assert_eq!(to_byte(1.0), 255);
        assert_eq!(to_byte(-1.0), 0);
    }

    #[test]
    fn png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let data: Vec<f64> = (0..3 * 5 * 5).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        let img = Image::new(3, 5, 5, data).unwrap();
        save_png(&img, &path).unwrap();
        let back = load_png(&path, 5).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
        let again = dir.path().join("y.png");
        save_png(&back, &again).unwrap();
        assert_eq!(
            image::open(&path).unwrap().to_rgb8().into_raw(),
            image::open(&again).unwrap().to_rgb8().into_raw()
        );
    }

    #[test]
    fn resize_keeps_corners_and_constants() {
        let img = Image::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = resize_bilinear(&img, 3, 3);
        assert_eq!(up.data, vec![0.0, 0.5, 1.0, 1.0, 1.5, 2.0, 2.0, 2.5, 3.0]);
        let flat = Image::filled(3, 7, 9, 0.25);
        assert!(resize_bilinear(&flat, 4, 4).data.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn empty_and_corrupt_directories_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_png_dir(dir.path(), 8).unwrap_err().to_string().contains("no PNG"));
        fs::write(dir.path().join("bad.png"), b"nope").unwrap();
        let err = load_png_dir(dir.path(), 8).unwrap_err().to_string();
        assert!(err.contains("bad.png"), "{err}");
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.png");
        let mask = Mask {
            height: 4,
            width: 4,
            data: (0..16).map(|i| i % 3 == 0).collect(),
        };
        save_mask(&mask, &path).unwrap();
        assert_eq!(load_mask(&path, 4).unwrap(), mask);
    }
}
