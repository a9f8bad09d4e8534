//! Synthetic multi-domain image generator.
//!
//! Each domain has its own appearance model (background texture family,
//! color palette, and one grayscale domain per three) and each class its
//! own shape pattern (kind, count, size, orientation), so domains differ in
//! both content and style. At noise level 0 every image of a class is
//! pixel-identical and the set is perfectly separable by construction;
//! noise adds position/orientation jitter, brightness wobble and Gaussian
//! pixel noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::split::mix_seed;
use super::{DomainDataset, ImageData, LabeledImage};
use crate::error::Error;
use crate::Result;

#[derive(Clone, Debug)]
pub struct SynthSpec {
    pub domains: usize,
    /// Class count per domain; length must equal `domains`.
    pub classes_per_domain: Vec<usize>,
    pub images_per_class: usize,
    pub image_size: usize,
    /// 0 disables all jitter and pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn total_images(&self) -> usize {
        self.classes_per_domain.iter().sum::<usize>() * self.images_per_class
    }
}

const PALETTE: [[f32; 3]; 6] = [
    [0.95, 0.55, 0.45],
    [0.40, 0.75, 0.95],
    [0.55, 0.90, 0.50],
    [0.90, 0.85, 0.40],
    [0.80, 0.50, 0.90],
    [0.45, 0.95, 0.85],
];

pub fn synth_generate(spec: &SynthSpec) -> Result<Vec<DomainDataset>> {
    if spec.image_size < 32 {
        return Err(Error::contract(format!(
            "synthetic images need size >= 32, got {}",
            spec.image_size
        )));
    }
    if spec.classes_per_domain.len() != spec.domains {
        return Err(Error::contract(format!(
            "{} domains but {} class counts",
            spec.domains,
            spec.classes_per_domain.len()
        )));
    }
    let mut datasets = Vec::with_capacity(spec.domains);
    for d in 0..spec.domains {
        let classes = spec.classes_per_domain[d];
        let mut images = Vec::with_capacity(classes * spec.images_per_class);
        for c in 0..classes {
            for i in 0..spec.images_per_class {
                images.push(render_image(spec, d, c, i));
            }
        }
        datasets.push(DomainDataset {
            name: format!("domain{d}"),
            images,
            class_names: (0..classes).map(|c| format!("class{c}")).collect(),
        });
    }
    Ok(datasets)
}

fn render_image(spec: &SynthSpec, domain: usize, class: usize, index: usize) -> LabeledImage {
    let size = spec.image_size;
    let noise = spec.noise as f32;
    let channels = if domain % 3 == 2 { 1 } else { 3 };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        spec.seed,
        (domain as u64) << 32 | class as u64,
        index as u64,
    ));

    let tint = PALETTE[domain % PALETTE.len()];
    let fg = PALETTE[(class * 2 + 3) % PALETTE.len()];
    let brightness_jitter = noise * 0.05 * symmetric(&mut rng);

    // background field per domain family
    let mut pixels = vec![0.0f32; size * size * channels];
    let family = domain % 3;
    let freq = 2.0 + (domain / 3) as f32;
    for y in 0..size {
        for x in 0..size {
            let u = x as f32 / size as f32;
            let v = y as f32 / size as f32;
            let base = match family {
                0 => 0.35 + 0.20 * (std::f32::consts::TAU * u * freq).sin(),
                1 => 0.35 + 0.20 * (std::f32::consts::TAU * (u + v) * freq).sin(),
                _ => {
                    let dx = u - 0.5;
                    let dy = v - 0.5;
                    0.25 + 0.35 * (1.0 - (dx * dx + dy * dy).sqrt() / 0.71)
                }
            };
            let base = (base + brightness_jitter).clamp(0.0, 1.0);
            for ch in 0..channels {
                let scale = if channels == 1 { 1.0 } else { tint[ch] };
                pixels[(y * size + x) * channels + ch] = base * scale;
            }
        }
    }

    // class-specific shapes: kind, count and size are functions of the
    // class index; positions sit on a ring with noise-scaled jitter
    let kind = class % 5;
    let count = 1 + class % 3;
    let radius = size as f32 * (0.10 + 0.04 * ((class / 5) % 3) as f32);
    let ring = size as f32 * 0.27;
    let (cx, cy) = (size as f32 / 2.0, size as f32 / 2.0);
    let base_angle = class as f32 * 0.7;
    for s in 0..count {
        let angle = base_angle + std::f32::consts::TAU * s as f32 / count as f32;
        let jx = noise * 0.08 * size as f32 * symmetric(&mut rng);
        let jy = noise * 0.08 * size as f32 * symmetric(&mut rng);
        let orientation = class as f32 * 0.4 + noise * 0.35 * symmetric(&mut rng);
        let sx = cx + ring * angle.cos() + jx;
        let sy = cy + ring * angle.sin() + jy;
        draw_shape(
            &mut pixels,
            size,
            channels,
            kind,
            sx,
            sy,
            radius,
            orientation,
            &fg,
        );
    }

    // pixel noise
    if noise > 0.0 {
        let sigma = 0.08 * noise;
        for v in pixels.iter_mut() {
            *v = (*v + sigma * gaussian(&mut rng)).clamp(0.0, 1.0);
        }
    }

    // quantize to 8-bit so the on-disk PNG round-trips losslessly
    for v in pixels.iter_mut() {
        *v = (*v * 255.0).round() / 255.0;
    }

    LabeledImage {
        image: ImageData {
            height: size,
            width: size,
            channels,
            data: pixels,
        },
        class_id: class,
        domain_id: domain,
        source: format!("synth://domain{domain}/class{class}/{index}"),
    }
}

#[allow(clippy::too_many_arguments)]
fn draw_shape(
    pixels: &mut [f32],
    size: usize,
    channels: usize,
    kind: usize,
    cx: f32,
    cy: f32,
    radius: f32,
    orientation: f32,
    color: &[f32; 3],
) {
    let (sin, cos) = orientation.sin_cos();
    let lo_y = ((cy - radius - 1.0).floor().max(0.0)) as usize;
    let hi_y = ((cy + radius + 1.0).ceil().min(size as f32 - 1.0)) as usize;
    let lo_x = ((cx - radius - 1.0).floor().max(0.0)) as usize;
    let hi_x = ((cx + radius + 1.0).ceil().min(size as f32 - 1.0)) as usize;
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            // rotate into shape coordinates
            let u = dx * cos + dy * sin;
            let v = -dx * sin + dy * cos;
            let inside = match kind {
                0 => u * u + v * v <= radius * radius, // disc
                1 => {
                    let r2 = u * u + v * v;
                    r2 <= radius * radius && r2 >= (0.55 * radius) * (0.55 * radius)
                    // ring
                }
                2 => u.abs() <= radius * 0.8 && v.abs() <= radius * 0.8, // square
                3 => {
                    (u.abs() <= radius * 0.3 && v.abs() <= radius)
                        || (v.abs() <= radius * 0.3 && u.abs() <= radius) // cross
                }
                _ => u.abs() <= radius * 0.25 && v.abs() <= radius, // bar
            };
            if inside {
                for ch in 0..channels {
                    let c = if channels == 1 { 0.85 } else { color[ch] };
                    let p = &mut pixels[(y * size + x) * channels + ch];
                    *p = 0.15 * *p + 0.85 * c;
                }
            }
        }
    }
}

fn symmetric(rng: &mut impl Rng) -> f32 {
    2.0 * rng.random::<f32>() - 1.0
}

/// Box-Muller standard normal.
fn gaussian(rng: &mut impl Rng) -> f32 {
    let u1: f32 = rng.random::<f32>().max(1e-12);
    let u2: f32 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f32::consts::TAU * u2).cos()
}

/// Write datasets to `root/<domain>/<class>/img_NNN.png` (the layout
/// [`super::load_multi_domain`] reads back).
pub fn write_datasets(datasets: &[DomainDataset], root: &std::path::Path) -> Result<()> {
    for dataset in datasets {
        for img in &dataset.images {
            let class_dir = root
                .join(&dataset.name)
                .join(&dataset.class_names[img.class_id]);
            std::fs::create_dir_all(&class_dir)?;
            let index = img.source.rsplit('/').next().unwrap_or("0");
            let path = class_dir.join(format!("img_{index:0>3}.png"));
            let (h, w, c) = (img.image.height, img.image.width, img.image.channels);
            if c == 1 {
                let buf: Vec<u8> = img
                    .image
                    .data
                    .iter()
                    .map(|&v| (v * 255.0).round() as u8)
                    .collect();
                let gray = image::GrayImage::from_raw(w as u32, h as u32, buf)
                    .ok_or_else(|| Error::Data("gray buffer size mismatch".into()))?;
                gray.save(&path)?;
            } else {
                let buf: Vec<u8> = img
                    .image
                    .data
                    .iter()
                    .map(|&v| (v * 255.0).round() as u8)
                    .collect();
                let rgb = image::RgbImage::from_raw(w as u32, h as u32, buf)
                    .ok_or_else(|| Error::Data("rgb buffer size mismatch".into()))?;
                rgb.save(&path)?;
            }
        }
    }
    Ok(())
}
