//! Image decoding, resizing and normalization into network input tensors.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb32FImage, RgbImage};

use texgram_core::engine::InputSpec;
use texgram_core::Tensor;

use crate::error::{PipelineError, Result};

/// Decodes `path` and converts it with [`image_to_tensor`].
pub fn preprocess_image(path: &Path, spec: &InputSpec) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| PipelineError::Data(format!("cannot decode {}: {e}", path.display())))?;
    Ok(image_to_tensor(&img, spec))
}

/// Scales the whole image to the input size with a triangle (bilinear) filter
/// whose support widens when downsampling, maps values to `[0, 1]` and
/// normalizes each channel with the input mean and std. Grayscale is
/// replicated to three channels; alpha is dropped.
pub fn image_to_tensor(img: &DynamicImage, spec: &InputSpec) -> Tensor {
    let [_, h, w] = spec.shape;
    let rgb: Rgb32FImage = img.to_rgb32f();
    let resized = if rgb.dimensions() == (w as u32, h as u32) {
        rgb
    } else {
        imageops::resize(&rgb, w as u32, h as u32, FilterType::Triangle)
    };
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = (px.0[c] - spec.mean[c]) / spec.std[c];
        }
    }
    Tensor::new(vec![3, h, w], data).expect("shape matches data")
}

/// Inverse of the normalization, clamped and quantized to 8 bits.
pub fn tensor_to_image(t: &Tensor, spec: &InputSpec) -> Result<RgbImage> {
    let (c, h, w) = t.chw().filter(|s| s.0 == 3).ok_or_else(|| {
        PipelineError::Data(format!("expected a 3-channel image tensor, got shape {:?}", t.shape()))
    })?;
    let plane = h * w;
    let d = t.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let mut px = [0u8; 3];
        for ch in 0..c {
            let v = d[ch * plane + i] * spec.std[ch] + spec.mean[ch];
            px[ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        image::Rgb(px)
    }))
}
