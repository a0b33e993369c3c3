//! Deterministic synthetic two-stain corpus: elliptical "glands" on a
//! textured stroma background, rendered in one of two palettes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, Domain, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::derive_rng;

pub const MIN_SIZE: usize = 64;
pub const NOISE_SIGMA: f32 = 0.02;
pub const MIN_GLANDS: usize = 3;
pub const MAX_GLANDS: usize = 8;
/// Accepted foreground fraction; layouts outside are redrawn.
pub const FOREGROUND_RANGE: (f64, f64) = (0.12, 0.55);

const GEOMETRY_STREAM: u64 = 0x5EED_0000;
const RENDER_STREAM: u64 = 0x5EED_1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Style {
    #[serde(rename = "stainA")]
    StainA,
    #[serde(rename = "stainB")]
    StainB,
}

impl Style {
    fn id(self) -> u64 {
        match self {
            Style::StainA => 0,
            Style::StainB => 1,
        }
    }

    fn palette(self) -> Palette {
        match self {
            // Hematoxylin and eosin: pink stroma, purple nuclei.
            Style::StainA => Palette {
                background: [0.94, 0.72, 0.84],
                fiber: [0.82, 0.52, 0.70],
                rim: [0.36, 0.18, 0.50],
                cytoplasm: [0.72, 0.48, 0.74],
                lumen: [0.97, 0.90, 0.95],
            },
            // Brown chromogen with blue counterstain.
            Style::StainB => Palette {
                background: [0.78, 0.84, 0.93],
                fiber: [0.58, 0.66, 0.84],
                rim: [0.40, 0.25, 0.12],
                cytoplasm: [0.70, 0.53, 0.34],
                lumen: [0.93, 0.90, 0.84],
            },
        }
    }
}

impl FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stainA" => Ok(Style::StainA),
            "stainB" => Ok(Style::StainB),
            other => Err(Error::invalid("style", format!("unknown style `{other}`"))),
        }
    }
}

impl fmt::Display for Style {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Style::StainA => "stainA",
            Style::StainB => "stainB",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Palette {
    background: [f32; 3],
    fiber: [f32; 3],
    rim: [f32; 3],
    cytoplasm: [f32; 3],
    lumen: [f32; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Gland {
    cy: f32,
    cx: f32,
    ry: f32,
    rx: f32,
    angle: f32,
}

impl Gland {
    /// Normalized elliptical radius: `< 1` inside.
    fn radius(&self, y: f32, x: f32) -> f32 {
        let (s, c) = self.angle.sin_cos();
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        (u * u + v * v).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_images: usize,
    pub size: usize,
    pub style: Style,
    pub paired: bool,
    /// The last `n_test` images are written with split `test`.
    pub n_test: usize,
    pub domain: Domain,
}

impl SynthSpec {
    pub fn new(seed: u64, n_images: usize, size: usize, style: Style, paired: bool) -> Self {
        SynthSpec {
            seed,
            n_images,
            size,
            style,
            paired,
            n_test: 0,
            domain: match style {
                Style::StainA => Domain::Source,
                Style::StainB => Domain::Target,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::invalid("n_images", "must be at least 1"));
        }
        if self.size < MIN_SIZE {
            return Err(Error::invalid("size", format!("must be at least {MIN_SIZE}")));
        }
        if self.n_test > self.n_images {
            return Err(Error::invalid("n_test", "exceeds n_images"));
        }
        Ok(())
    }

    fn geometry_rng(&self, index: usize) -> ChaCha8Rng {
        // Unpaired corpora decorrelate layouts across styles.
        let style_salt = if self.paired { 0 } else { self.style.id() << 24 };
        derive_rng(self.seed, GEOMETRY_STREAM + style_salt + ((index as u64) << 32))
    }

    fn render_rng(&self, index: usize) -> ChaCha8Rng {
        derive_rng(
            self.seed,
            RENDER_STREAM + (self.style.id() << 24) + ((index as u64) << 32),
        )
    }
}

/// One rendered image: interleaved RGB bytes and a `{0, 255}` mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
    pub size: usize,
}

impl SynthImage {
    pub fn foreground_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m > 0).count() as f64 / self.mask.len() as f64
    }
}

fn layout(rng: &mut ChaCha8Rng, size: usize) -> Vec<Gland> {
    let s = size as f32;
    loop {
        let count = rng.random_range(MIN_GLANDS..=MAX_GLANDS);
        let mut glands: Vec<Gland> = Vec::with_capacity(count);
        let mut attempts = 0;
        while glands.len() < count && attempts < 200 {
            attempts += 1;
            let g = Gland {
                cy: rng.random_range(0.12..0.88) * s,
                cx: rng.random_range(0.12..0.88) * s,
                ry: rng.random_range(0.06..0.15) * s,
                rx: rng.random_range(0.06..0.15) * s,
                angle: rng.random_range(0.0..std::f32::consts::PI),
            };
            // Keep glands separated by stroma.
            let clear = glands.iter().all(|o| {
                let d = ((g.cy - o.cy).powi(2) + (g.cx - o.cx).powi(2)).sqrt();
                d > 1.1 * (g.ry.max(g.rx) + o.ry.max(o.rx))
            });
            if clear {
                glands.push(g);
            }
        }
        if glands.len() < MIN_GLANDS {
            continue;
        }
        let fg = rasterize(&glands, size).iter().filter(|&&m| m > 0).count() as f64
            / (size * size) as f64;
        if (FOREGROUND_RANGE.0..=FOREGROUND_RANGE.1).contains(&fg) {
            return glands;
        }
    }
}

fn rasterize(glands: &[Gland], size: usize) -> Vec<u8> {
    let mut mask = vec![0u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            if glands.iter().any(|g| g.radius(py, px) < 1.0) {
                mask[y * size + x] = 255;
            }
        }
    }
    mask
}

fn mix(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Renders image `index` of the corpus described by `spec`.
pub fn render_image(spec: &SynthSpec, index: usize) -> SynthImage {
    let size = spec.size;
    let glands = layout(&mut spec.geometry_rng(index), size);
    let mask = rasterize(&glands, size);

    let mut rng = spec.render_rng(index);
    let pal = spec.style.palette();
    let contrast: f32 = rng.random_range(0.85..1.15);
    let brightness: f32 = rng.random_range(-0.06..0.06);
    // Stroma texture: a few oriented sinusoids of random phase.
    let waves: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let freq: f32 = rng.random_range(0.08..0.35);
            let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let amp: f32 = rng.random_range(0.15..0.3);
            (theta.cos() * freq, theta.sin() * freq, phase, amp)
        })
        .collect();
    let rim_width = rng.random_range(0.18f32..0.3);
    let lumen_radius = rng.random_range(0.25f32..0.45);
    let noise = Normal::new(0.0f32, NOISE_SIGMA).expect("valid sigma");

    let mut rgb = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            let r = glands
                .iter()
                .map(|g| g.radius(py, px))
                .fold(f32::INFINITY, f32::min);
            let color = if r < 1.0 {
                let base = if r < lumen_radius {
                    mix(pal.lumen, pal.cytoplasm, (r / lumen_radius).powi(4))
                } else {
                    pal.cytoplasm
                };
                // Dark nuclear rim near the boundary, smoothly blended.
                let t = ((r - (1.0 - rim_width)) / rim_width).clamp(0.0, 1.0);
                mix(base, pal.rim, t.sqrt())
            } else {
                let tex: f32 = waves
                    .iter()
                    .map(|&(fy, fx, ph, a)| a * (fy * py + fx * px + ph).sin())
                    .sum::<f32>();
                mix(pal.background, pal.fiber, (0.5 + 0.5 * tex).clamp(0.0, 1.0))
            };
            for c in color {
                let v = (c - 0.5) * contrast + 0.5 + brightness + noise.sample(&mut rng);
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    SynthImage { rgb, mask, size }
}

fn file_stem(spec: &SynthSpec, index: usize) -> String {
    format!("{}_{:04}", spec.style, index)
}

/// Writes `images/`, `masks/` and `manifest.csv` under `dir` and returns the
/// manifest (with absolute paths).
pub fn generate_synthetic_dataset(dir: &Path, spec: &SynthSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    for d in [&images_dir, &masks_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let results = exec::map_range(spec.n_images, |i| -> Result<ManifestEntry> {
        let img = render_image(spec, i);
        let stem = file_stem(spec, i);
        let image_path = images_dir.join(format!("{stem}.png"));
        let mask_path = masks_dir.join(format!("{stem}.png"));
        let side = spec.size as u32;
        let save = |path: &PathBuf, buf: &[u8], color: image::ExtendedColorType| {
            image::save_buffer(path, buf, side, side, color).map_err(|e| Error::Image {
                path: path.clone(),
                message: e.to_string(),
            })
        };
        save(&image_path, &img.rgb, image::ExtendedColorType::Rgb8)?;
        save(&mask_path, &img.mask, image::ExtendedColorType::L8)?;
        Ok(ManifestEntry {
            image: image_path,
            mask: Some(mask_path),
            domain: spec.domain,
            split: if i >= spec.n_images - spec.n_test {
                Split::Test
            } else {
                Split::Train
            },
        })
    });
    let manifest = DatasetManifest {
        entries: results.into_iter().collect::<Result<_>>()?,
    };
    manifest.save(&dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paired_geometry_shared_across_styles() {
        let a = SynthSpec::new(7, 4, 64, Style::StainA, true);
        let b = SynthSpec::new(7, 4, 64, Style::StainB, true);
        let (ia, ib) = (render_image(&a, 2), render_image(&b, 2));
        assert_eq!(ia.mask, ib.mask);
        assert_ne!(ia.rgb, ib.rgb);
    }

    #[test]
    fn unpaired_geometry_differs() {
        let a = SynthSpec::new(7, 4, 64, Style::StainA, false);
        let b = SynthSpec::new(7, 4, 64, Style::StainB, false);
        assert_ne!(render_image(&a, 0).mask, render_image(&b, 0).mask);
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = SynthSpec::new(3, 1, 64, Style::StainB, false);
        assert_eq!(render_image(&a, 0), render_image(&a, 0));
    }

    #[test]
    fn rejects_bad_spec() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = SynthSpec::new(0, 0, 64, Style::StainA, false);
        assert!(generate_synthetic_dataset(dir.path(), &s).is_err());
        s.n_images = 1;
        s.size = 32;
        assert!(generate_synthetic_dataset(dir.path(), &s).is_err());
    }
}
