//! Deterministic preprocessing: bilinear resize to the model's input size,
//! grayscale replication to three channels, fixed intensity standardization.

use super::ImageData;
use crate::error::Error;
use crate::tensor::{Scalar, Tensor};
use crate::Result;

/// Aligned bilinear resize of one HWC image. Source pixels map to
/// destination corners exactly, so a same-size resize is the identity.
pub fn bilinear_resize(src: &ImageData, out_h: usize, out_w: usize) -> ImageData {
    let (h, w, c) = (src.height, src.width, src.channels);
    if h == out_h && w == out_w {
        return src.clone();
    }
    let scale_y = if out_h > 1 {
        (h - 1) as f32 / (out_h - 1) as f32
    } else {
        0.0
    };
    let scale_x = if out_w > 1 {
        (w - 1) as f32 / (out_w - 1) as f32
    } else {
        0.0
    };
    let mut data = vec![0.0f32; out_h * out_w * c];
    for oy in 0..out_h {
        let sy = oy as f32 * scale_y;
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f32;
        for ox in 0..out_w {
            let sx = ox as f32 * scale_x;
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f32;
            for ch in 0..c {
                let v00 = src.pixel(y0, x0, ch);
                let v01 = src.pixel(y0, x1, ch);
                let v10 = src.pixel(y1, x0, ch);
                let v11 = src.pixel(y1, x1, ch);
                let top = v00 + (v01 - v00) * fx;
                let bottom = v10 + (v11 - v10) * fx;
                data[(oy * out_w + ox) * c + ch] = top + (bottom - top) * fy;
            }
        }
    }
    ImageData {
        height: out_h,
        width: out_w,
        channels: c,
        data,
    }
}

/// Resize to `target x target`, replicate grayscale to three channels, and
/// standardize with the fixed mean 0.5 / std 0.5 per channel. Output layout
/// is `[3, target, target]`.
pub fn preprocess<T: Scalar>(image: &ImageData, target: usize) -> Result<Tensor<T>> {
    if image.height == 0 || image.width == 0 || target == 0 {
        return Err(Error::contract("preprocess on a zero-extent image"));
    }
    let resized = bilinear_resize(image, target, target);
    let mut out = vec![T::ZERO; 3 * target * target];
    for y in 0..target {
        for x in 0..target {
            for ch in 0..3 {
                let src_ch = if resized.channels == 1 { 0 } else { ch };
                let v = resized.pixel(y, x, src_ch);
                out[(ch * target + y) * target + x] = T::from_f64(((v - 0.5) / 0.5) as f64);
            }
        }
    }
    Tensor::from_vec(&[3, target, target], out)
}
