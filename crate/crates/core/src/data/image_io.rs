use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Rgb};

use crate::caae::FaceImage;
use crate::error::Result;
use crate::numerics::tensor::{Scalar, Tensor};

/// Decode a PNG or JPEG, bilinearly resize to `side` x `side`, and scale
/// channels to `[-1, 1]` via `v / 127.5 - 1`.
pub fn load_image<S: Scalar>(path: impl AsRef<Path>, side: usize) -> Result<FaceImage<S>> {
    let img = image::open(path.as_ref())?.to_rgb8();
    let img = if img.width() as usize == side && img.height() as usize == side {
        img
    } else {
        image::imageops::resize(&img, side as u32, side as u32, FilterType::Triangle)
    };
    let mut data = Vec::with_capacity(side * side * 3);
    for px in img.pixels() {
        for c in 0..3 {
            data.push(S::from_f64(px.0[c] as f64 / 127.5 - 1.0));
        }
    }
    FaceImage::new(Tensor::new(vec![side, side, 3], data)?)
}

/// Inverse of the load scaling: `round((v + 1) * 127.5)` clamped to
/// `[0, 255]`, written as PNG (lossless, so reruns are byte-comparable).
pub fn save_image<S: Scalar>(image: &FaceImage<S>, path: impl AsRef<Path>) -> Result<()> {
    let side = image.side() as u32;
    let mut buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(side, side);
    let data = image.pixels().data();
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            let v = ((data[i * 3 + c].into_f64() + 1.0) * 127.5).round();
            px.0[c] = v.clamp(0.0, 255.0) as u8;
        }
    }
    buf.save_with_format(path.as_ref(), image::ImageFormat::Png)?;
    Ok(())
}
