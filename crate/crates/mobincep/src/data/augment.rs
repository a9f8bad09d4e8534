//! Online training-time augmentation: rotation, flips, random resized crop
//! and affine (translate / scale / shear), composed into a single inverse
//! warp and sampled bilinearly. Labels and domains never change.

use rand::Rng;

use super::{ImageData, LabeledImage};

/// Parameter ranges of the augmentation pipeline. The published recipe
/// names the transform families but not their magnitudes; these are the
/// conventional ranges and every one of them is configurable.
#[derive(Clone, Copy, Debug)]
pub struct AugmentConfig {
    /// Rotation angle drawn from `[-deg, deg]`.
    pub rotation_deg: f32,
    /// Probability of each of horizontal / vertical flip.
    pub flip_prob: f32,
    /// Crop area fraction drawn from `[min_area, 1.0]`.
    pub crop_min_area: f32,
    /// Translation drawn from `[-frac, frac]` of each extent.
    pub translate_frac: f32,
    pub scale_lo: f32,
    pub scale_hi: f32,
    /// Shear angles drawn from `[-deg, deg]` per axis.
    pub shear_deg: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 30.0,
            flip_prob: 0.5,
            crop_min_area: 0.8,
            translate_frac: 0.1,
            scale_lo: 0.9,
            scale_hi: 1.1,
            shear_deg: 10.0,
        }
    }
}

/// One concrete draw of the pipeline.
#[derive(Clone, Copy, Debug)]
pub struct AugmentParams {
    pub angle_rad: f32,
    pub flip_h: bool,
    pub flip_v: bool,
    /// Fractional crop rectangle (x0, y0, width, height) in `[0, 1]` units.
    pub crop: (f32, f32, f32, f32),
    pub translate: (f32, f32),
    pub scale: f32,
    pub shear: (f32, f32),
}

impl AugmentParams {
    /// The do-nothing draw; applying it reproduces the input pixels.
    pub fn identity() -> Self {
        AugmentParams {
            angle_rad: 0.0,
            flip_h: false,
            flip_v: false,
            crop: (0.0, 0.0, 1.0, 1.0),
            translate: (0.0, 0.0),
            scale: 1.0,
            shear: (0.0, 0.0),
        }
    }

    /// Draw parameters in a fixed order so a seeded rng reproduces them.
    pub fn sample(cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let uniform = |rng: &mut dyn rand::RngCore, lo: f32, hi: f32| -> f32 {
            let u: f32 = rng.random();
            lo + (hi - lo) * u
        };
        let angle = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg).to_radians();
        let flip_h = rng.random::<f32>() < cfg.flip_prob;
        let flip_v = rng.random::<f32>() < cfg.flip_prob;
        let area = uniform(rng, cfg.crop_min_area, 1.0);
        let side = area.sqrt();
        let x0 = uniform(rng, 0.0, 1.0 - side);
        let y0 = uniform(rng, 0.0, 1.0 - side);
        let tx = uniform(rng, -cfg.translate_frac, cfg.translate_frac);
        let ty = uniform(rng, -cfg.translate_frac, cfg.translate_frac);
        let scale = uniform(rng, cfg.scale_lo, cfg.scale_hi);
        let shear_x = uniform(rng, -cfg.shear_deg, cfg.shear_deg).to_radians();
        let shear_y = uniform(rng, -cfg.shear_deg, cfg.shear_deg).to_radians();
        AugmentParams {
            angle_rad: angle,
            flip_h,
            flip_v,
            crop: (x0, y0, side, side),
            translate: (tx, ty),
            scale,
            shear: (shear_x, shear_y),
        }
    }
}

/// 2x3 affine matrix mapping (x, y) -> (a x + b y + c, d x + e y + f).
#[derive(Clone, Copy, Debug)]
struct Affine {
    m: [f32; 6],
}

impl Affine {
    fn identity() -> Self {
        Affine {
            m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    fn apply(&self, x: f32, y: f32) -> (f32, f32) {
        (
            self.m[0] * x + self.m[1] * y + self.m[2],
            self.m[3] * x + self.m[4] * y + self.m[5],
        )
    }

    /// self ∘ other (apply `other` first).
    fn then_after(&self, other: &Affine) -> Affine {
        let a = &self.m;
        let b = &other.m;
        Affine {
            m: [
                a[0] * b[0] + a[1] * b[3],
                a[0] * b[1] + a[1] * b[4],
                a[0] * b[2] + a[1] * b[5] + a[2],
                a[3] * b[0] + a[4] * b[3],
                a[3] * b[1] + a[4] * b[4],
                a[3] * b[2] + a[4] * b[5] + a[5],
            ],
        }
    }

    /// Linear part applied about a center point.
    fn about_center(linear: [f32; 4], translate: (f32, f32), cx: f32, cy: f32) -> Affine {
        let [a, b, d, e] = linear;
        Affine {
            m: [
                a,
                b,
                cx - a * cx - b * cy + translate.0,
                d,
                e,
                cy - d * cx - e * cy + translate.1,
            ],
        }
    }
}

/// Apply one parameter draw. The pipeline order is rotation, flips, crop,
/// affine; sampling composes their inverses so each destination pixel reads
/// one bilinear lookup. Out-of-frame samples are zero.
pub fn apply_params(img: &LabeledImage, params: &AugmentParams) -> LabeledImage {
    let (h, w, c) = (img.image.height, img.image.width, img.image.channels);
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);

    // inverse rotation
    let (sin, cos) = params.angle_rad.sin_cos();
    let rot_inv = Affine::about_center([cos, sin, -sin, cos], (0.0, 0.0), cx, cy);

    // flips are involutions
    let mut flip = Affine::identity();
    if params.flip_h {
        flip = Affine {
            m: [-1.0, 0.0, w as f32 - 1.0, 0.0, 1.0, 0.0],
        }
        .then_after(&flip);
    }
    if params.flip_v {
        flip = Affine {
            m: [1.0, 0.0, 0.0, 0.0, -1.0, h as f32 - 1.0],
        }
        .then_after(&flip);
    }

    // crop-resize: destination (x, y) reads from inside the crop rectangle
    let (fx0, fy0, fw, fh) = params.crop;
    let crop_inv = Affine {
        m: [
            if w > 1 {
                (fw * w as f32 - 1.0).max(0.0) / (w as f32 - 1.0)
            } else {
                1.0
            },
            0.0,
            fx0 * w as f32,
            0.0,
            if h > 1 {
                (fh * h as f32 - 1.0).max(0.0) / (h as f32 - 1.0)
            } else {
                1.0
            },
            fy0 * h as f32,
        ],
    };

    // inverse affine: undo translation, then the inverse linear part about
    // the center
    let (shx, shy) = params.shear;
    let s = params.scale;
    let lin = [s, s * shx.tan(), s * shy.tan(), s];
    let det = lin[0] * lin[3] - lin[1] * lin[2];
    let inv = [lin[3] / det, -lin[1] / det, -lin[2] / det, lin[0] / det];
    let tx = params.translate.0 * w as f32;
    let ty = params.translate.1 * h as f32;
    let affine_fwd_t = Affine::about_center(lin, (tx, ty), cx, cy);
    // p = C + L^{-1} (p' - t - C); build directly
    let affine_inv = {
        let intermediate = Affine {
            m: [1.0, 0.0, -affine_fwd_t.m[2], 0.0, 1.0, -affine_fwd_t.m[5]],
        };
        Affine {
            m: [inv[0], inv[1], 0.0, inv[2], inv[3], 0.0],
        }
        .then_after(&intermediate)
    };

    // total dest -> src map: rotation undone last
    let total = rot_inv
        .then_after(&flip)
        .then_after(&crop_inv)
        .then_after(&affine_inv);

    let mut data = vec![0.0f32; h * w * c];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = total.apply(x as f32, y as f32);
            if sx < -0.5 || sy < -0.5 || sx > w as f32 - 0.5 || sy > h as f32 - 0.5 {
                continue; // zero fill
            }
            let x0 = sx.floor().clamp(0.0, w as f32 - 1.0) as usize;
            let y0 = sy.floor().clamp(0.0, h as f32 - 1.0) as usize;
            let x1 = (x0 + 1).min(w - 1);
            let y1 = (y0 + 1).min(h - 1);
            let fx = (sx - x0 as f32).clamp(0.0, 1.0);
            let fy = (sy - y0 as f32).clamp(0.0, 1.0);
            for ch in 0..c {
                let v00 = img.image.pixel(y0, x0, ch);
                let v01 = img.image.pixel(y0, x1, ch);
                let v10 = img.image.pixel(y1, x0, ch);
                let v11 = img.image.pixel(y1, x1, ch);
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                data[(y * w + x) * c + ch] = top + (bottom - top) * fy;
            }
        }
    }
    LabeledImage {
        image: ImageData {
            height: h,
            width: w,
            channels: c,
            data,
        },
        class_id: img.class_id,
        domain_id: img.domain_id,
        source: img.source.clone(),
    }
}

/// Sample a parameter draw from `rng` and apply it.
pub fn augment(img: &LabeledImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> LabeledImage {
    apply_params(img, &AugmentParams::sample(cfg, rng))
}
