//! Two-domain image data: procedural textured shapes with masks, PNG
//! directories, and batch streams.

mod batch;
mod png;
mod synthetic;

use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub use batch::{epoch_batches, permutation, Batcher, IndexStream, PairStream};
pub use png::{
    list_pngs, load_mask, load_png, load_png_dir, resize_bilinear, save_mask, save_png, write_dataset_dir,
};
pub use synthetic::{generate_sample, Background, SyntheticTaskSpec, Texture};

/// Channel-major image with values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::InvalidShape {
                op: "image",
                shape: vec![channels, height, width],
                reason: format!("{} values", data.len()),
            });
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Image `i` of a `[N, C, H, W]` tensor.
    pub fn from_batch<T: Scalar>(batch: &Tensor<T>, i: usize) -> Result<Self> {
        let s = batch.shape();
        if s.len() != 4 || i >= s[0] {
            return Err(Error::InvalidShape {
                op: "image from batch",
                shape: s.to_vec(),
                reason: format!("index {i}"),
            });
        }
        let len = s[1] * s[2] * s[3];
        let data = batch.data()[i * len..(i + 1) * len].iter().map(|v| v.as_f64()).collect();
        Image::new(s[1], s[2], s[3], data)
    }
}

/// Binary foreground map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }
}

/// One synthetic or loaded pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image_a: Image,
    pub image_b: Image,
    pub mask: Mask,
    pub paired: bool,
}

/// Stack images into a `[N, C, H, W]` tensor.
pub fn stack<T: Scalar>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or(Error::EmptyTensor { op: "stack" })?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        if img.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                op: "stack",
                lhs: first.shape().to_vec(),
                rhs: img.shape().to_vec(),
            });
        }
        data.extend(img.data.iter().map(|&v| T::from_f64_lossy(v)));
    }
    let [c, h, w] = first.shape();
    Tensor::new(&[images.len(), c, h, w], data)
}

/// Training and test images for both domains. Test images are aligned by
/// index; masks, when present, belong to the test pairs.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train_a: Vec<Image>,
    pub train_b: Vec<Image>,
    pub test_a: Vec<Image>,
    pub test_b: Vec<Image>,
    pub test_masks: Option<Vec<Mask>>,
    pub test_names: Vec<String>,
}

impl Dataset {
    pub fn synthetic(spec: &SyntheticTaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut ds = Dataset::default();
        for i in 0..spec.n_train {
            let s = generate_sample(spec, i);
            ds.train_a.push(s.image_a);
            ds.train_b.push(s.image_b);
        }
        let mut masks = Vec::with_capacity(spec.n_test);
        for i in 0..spec.n_test {
            let s = generate_sample(spec, spec.n_train + i);
            ds.test_a.push(s.image_a);
            ds.test_b.push(s.image_b);
            masks.push(s.mask);
            ds.test_names.push(format!("{i:05}"));
        }
        ds.test_masks = Some(masks);
        Ok(ds)
    }

    /// Read a `trainA/ trainB/ testA/ testB/ [masks/]` tree.
    pub fn from_dir(dir: &Path, image_size: usize) -> Result<Self> {
        let mut ds = Self::test_from_dir(dir, image_size)?;
        ds.train_a = load_png_dir(&dir.join("trainA"), image_size)?.into_iter().map(|(_, i)| i).collect();
        ds.train_b = load_png_dir(&dir.join("trainB"), image_size)?.into_iter().map(|(_, i)| i).collect();
        Ok(ds)
    }

    /// Only the `testA/ testB/ [masks/]` part of a dataset tree.
    pub fn test_from_dir(dir: &Path, image_size: usize) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Data(format!("dataset directory {} does not exist", dir.display())));
        }
        let test_a = load_png_dir(&dir.join("testA"), image_size)?;
        let test_b = load_png_dir(&dir.join("testB"), image_size)?;
        let names: Vec<String> = test_a.iter().map(|(n, _)| n.clone()).collect();
        if test_b.iter().map(|(n, _)| n).ne(names.iter()) {
            return Err(Error::Data(format!(
                "{}: testA and testB must hold the same file names",
                dir.display()
            )));
        }
        let mask_dir = dir.join("masks");
        let test_masks = if mask_dir.is_dir() {
            let mut masks = Vec::with_capacity(names.len());
            for n in &names {
                masks.push(load_mask(&mask_dir.join(format!("test_{n}.png")), image_size)?);
            }
            Some(masks)
        } else {
            None
        };
        Ok(Dataset {
            test_a: test_a.into_iter().map(|(_, i)| i).collect(),
            test_b: test_b.into_iter().map(|(_, i)| i).collect(),
            test_masks,
            test_names: names,
            ..Dataset::default()
        })
    }
}
