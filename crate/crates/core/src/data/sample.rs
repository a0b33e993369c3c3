//! Decoded samples, normalization, padding and cropping.

use std::path::Path;

use rand::Rng;

use super::manifest::{Domain, ManifestEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NORM_MEAN: f32 = 0.5;
pub const NORM_STD: f32 = 0.5;

/// One decoded image. `image` is `3×H×W`, normalized to `[-1, 1]`;
/// `mask` is row-major `H×W` with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainSample {
    pub image: Tensor,
    pub mask: Option<Vec<u8>>,
    pub domain: Domain,
}

impl DomainSample {
    pub fn new(image: Tensor, mask: Option<Vec<u8>>, domain: Domain) -> Result<Self> {
        if image.shape().len() != 3 || image.shape()[0] != 3 {
            return Err(Error::Shape(format!(
                "sample image must be 3×H×W, got {:?}",
                image.shape()
            )));
        }
        let s = DomainSample { image, mask, domain };
        if let Some(m) = &s.mask {
            if m.len() != s.height() * s.width() {
                return Err(Error::Shape(format!(
                    "mask has {} pixels, image is {}×{}",
                    m.len(),
                    s.height(),
                    s.width()
                )));
            }
        }
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn is_labeled(&self) -> bool {
        self.mask.is_some()
    }
}

/// `(v/255 - 0.5) / 0.5` per channel. `raw` is interleaved `H×W×channels`;
/// the result is planar `3×H×W`.
pub fn normalize_image(raw: &[u8], height: usize, width: usize, channels: usize) -> Result<Tensor> {
    if channels != 3 {
        return Err(Error::Precondition(format!(
            "expected 3-channel RGB input, got {channels} channel(s)"
        )));
    }
    if raw.len() != height * width * 3 {
        return Err(Error::Shape(format!(
            "raw buffer has {} bytes, expected {}",
            raw.len(),
            height * width * 3
        )));
    }
    let plane = height * width;
    let mut data = vec![0f32; 3 * plane];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = (px[c] as f32 / 255.0 - NORM_MEAN) / NORM_STD;
        }
    }
    Tensor::from_vec(&[3, height, width], data)
}

/// Inverse of [`normalize_image`], rounding to the nearest 8-bit level.
pub fn denormalize_image(image: &Tensor) -> Vec<u8> {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let d = image.data();
    let mut out = vec![0u8; plane * 3];
    for p in 0..plane {
        for c in 0..3 {
            let v = (d[c * plane + p] * NORM_STD + NORM_MEAN) * 255.0;
            out[p * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Mirror index without edge repetition (`dcb|abcd|cba`), valid for any offset.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads a planar `C×H×W` buffer by the given margins.
pub(crate) fn reflect_pad_planes<T: Copy>(
    src: &[T],
    channels: usize,
    (h, w): (usize, usize),
    (top, bottom, left, right): (usize, usize, usize, usize),
) -> Vec<T> {
    let (oh, ow) = (h + top + bottom, w + left + right);
    let mut out = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for y in 0..oh {
            let sy = reflect_index(y as isize - top as isize, h);
            for x in 0..ow {
                let sx = reflect_index(x as isize - left as isize, w);
                out.push(plane[sy * w + sx]);
            }
        }
    }
    out
}

/// Reflect-pads so that both sides are at least `size`, splitting the margin
/// evenly with the extra pixel at the bottom/right.
pub fn pad_to_min(sample: &DomainSample, size: usize) -> DomainSample {
    let (h, w) = (sample.height(), sample.width());
    if h >= size && w >= size {
        return sample.clone();
    }
    let ph = size.saturating_sub(h);
    let pw = size.saturating_sub(w);
    let margins = (ph / 2, ph - ph / 2, pw / 2, pw - pw / 2);
    let (oh, ow) = (h + ph, w + pw);
    let image = reflect_pad_planes(sample.image.data(), 3, (h, w), margins);
    let mask = sample
        .mask
        .as_ref()
        .map(|m| reflect_pad_planes(m, 1, (h, w), margins));
    DomainSample {
        image: Tensor::from_vec(&[3, oh, ow], image).expect("padded size"),
        mask,
        domain: sample.domain,
    }
}

/// Copies the `size×size` window at `(y, x)`.
pub fn crop_at(sample: &DomainSample, size: usize, (y, x): (usize, usize)) -> Result<DomainSample> {
    let (h, w) = (sample.height(), sample.width());
    if y + size > h || x + size > w {
        return Err(Error::Precondition(format!(
            "crop {size}×{size} at ({y},{x}) exceeds image {h}×{w}"
        )));
    }
    let src = sample.image.data();
    let mut image = Vec::with_capacity(3 * size * size);
    for c in 0..3 {
        for r in y..y + size {
            let row = c * h * w + r * w;
            image.extend_from_slice(&src[row + x..row + x + size]);
        }
    }
    let mask = sample.mask.as_ref().map(|m| {
        let mut out = Vec::with_capacity(size * size);
        for r in y..y + size {
            out.extend_from_slice(&m[r * w + x..r * w + x + size]);
        }
        out
    });
    Ok(DomainSample {
        image: Tensor::from_vec(&[3, size, size], image)?,
        mask,
        domain: sample.domain,
    })
}

/// Crops a uniformly placed `size×size` window from image and mask alike.
/// Returns the crop and its top-left offset.
pub fn random_crop_pair<R: Rng + ?Sized>(
    sample: &DomainSample,
    size: usize,
    rng: &mut R,
) -> Result<(DomainSample, (usize, usize))> {
    let (h, w) = (sample.height(), sample.width());
    if h < size || w < size {
        return Err(Error::Precondition(format!(
            "image {h}×{w} is smaller than crop size {size}; pad it first"
        )));
    }
    let y = rng.random_range(0..=h - size);
    let x = rng.random_range(0..=w - size);
    Ok((crop_at(sample, size, (y, x))?, (y, x)))
}

/// Mirrors image and mask left to right.
pub fn flip_horizontal(sample: &mut DomainSample) {
    let (h, w) = (sample.height(), sample.width());
    for row in sample.image.data_mut().chunks_exact_mut(w) {
        row.reverse();
    }
    if let Some(m) = &mut sample.mask {
        for row in m.chunks_exact_mut(w) {
            row.reverse();
        }
    }
    debug_assert_eq!(sample.image.len(), 3 * h * w);
}

/// Decodes an 8-bit RGB image.
pub fn read_rgb(path: &Path) -> Result<image::RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Decodes a mask and binarizes it at `> 0`.
pub fn read_mask(path: &Path) -> Result<(Vec<u8>, usize, usize)> {
    let img = image::open(path)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|v| u8::from(v > 0)).collect();
    Ok((data, h as usize, w as usize))
}

/// Loads the image and (when listed) mask of a manifest entry.
pub fn load_sample(entry: &ManifestEntry) -> Result<DomainSample> {
    let rgb = read_rgb(&entry.image)?;
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let image = normalize_image(rgb.as_raw(), h, w, 3)?;
    let mask = match &entry.mask {
        Some(p) => {
            let (m, mh, mw) = read_mask(p)?;
            if (mh, mw) != (h, w) {
                return Err(Error::Image {
                    path: p.clone(),
                    message: format!("mask is {mh}×{mw} but image is {h}×{w}"),
                });
            }
            Some(m)
        }
        None => None,
    };
    DomainSample::new(image, mask, entry.domain)
}
