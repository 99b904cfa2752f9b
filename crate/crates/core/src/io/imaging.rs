//! Image ingestion and PNG rendering.

use std::path::Path;

use image::imageops::{resize, FilterType};
use image::{GrayImage, Luma, Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tissuesim::CellGrid;

/// Tissue colors, indexed by label: EMPTY, STEM, INT1, INT2, DIFF1, DIFF2.
pub const TISSUE_PALETTE: [[u8; 3]; 6] = [
    [255, 255, 255],
    [228, 26, 28],
    [255, 127, 0],
    [152, 78, 163],
    [55, 126, 184],
    [77, 175, 74],
];

/// Load an image as a `[4,H,W]` tensor in `[0,1]`.
///
/// RGB inputs get alpha 1. The image is resized (nearest neighbor) to
/// `size × size`, optionally premultiplied by alpha, then padded on every side
/// with `pad` pixels of `pad_value` in all four channels.
pub fn ingest_image(
    path: impl AsRef<Path>,
    size: usize,
    pad: usize,
    pad_value: f32,
    premultiply: bool,
) -> Result<Tensor> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
        .to_rgba8();
    Ok(rgba_to_tensor(&img, size, pad, pad_value, premultiply))
}

pub fn rgba_to_tensor(
    img: &RgbaImage,
    size: usize,
    pad: usize,
    pad_value: f32,
    premultiply: bool,
) -> Tensor {
    let img = if img.width() as usize == size && img.height() as usize == size {
        img.clone()
    } else {
        resize(img, size as u32, size as u32, FilterType::Nearest)
    };
    let n = size + 2 * pad;
    let plane = n * n;
    let mut t = Tensor::full(&[4, n, n], pad_value);
    let d = t.data_mut();
    for (x, y, px) in img.enumerate_pixels() {
        let a = f32::from(px[3]) / 255.0;
        let p = (y as usize + pad) * n + x as usize + pad;
        for ch in 0..3 {
            let v = f32::from(px[ch]) / 255.0;
            d[ch * plane + p] = if premultiply { v * a } else { v };
        }
        d[3 * plane + p] = a;
    }
    t
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// First four channels clamped to `[0,1]`, each pixel blown up `scale` times.
pub fn render_rgba(grid: &Tensor, scale: usize) -> Result<RgbaImage> {
    let (c, h, w) = grid.dims3("render_rgba")?;
    if c < 4 {
        return Err(Error::usage(format!(
            "render_rgba needs 4 channels, got {c}"
        )));
    }
    let s = scale.max(1);
    let plane = h * w;
    let d = grid.data();
    Ok(RgbaImage::from_fn(
        (w * s) as u32,
        (h * s) as u32,
        |x, y| {
            let p = (y as usize / s) * w + x as usize / s;
            Rgba([
                to_u8(d[p]),
                to_u8(d[plane + p]),
                to_u8(d[2 * plane + p]),
                to_u8(d[3 * plane + p]),
            ])
        },
    ))
}

pub fn render_tissue(grid: &CellGrid, scale: usize) -> RgbaImage {
    let n = grid.size();
    let s = scale.max(1);
    RgbaImage::from_fn((n * s) as u32, (n * s) as u32, |x, y| {
        let label = grid.cells()[(y as usize / s) * n + x as usize / s] as usize;
        let [r, g, b] = TISSUE_PALETTE[label];
        Rgba([r, g, b, 255])
    })
}

/// One grayscale image of a `[H,W]` plane in `[0,1]`.
pub fn render_gray(plane: &[f32], h: usize, w: usize, scale: usize) -> GrayImage {
    let s = scale.max(1);
    GrayImage::from_fn((w * s) as u32, (h * s) as u32, |x, y| {
        Luma([to_u8(plane[(y as usize / s) * w + x as usize / s])])
    })
}

pub fn save_png<P, C>(img: &image::ImageBuffer<P, C>, path: impl AsRef<Path>) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let path = path.as_ref();
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_shape_and_rgb_alpha() {
        let img = RgbaImage::from_pixel(40, 40, Rgba([255, 0, 0, 255]));
        let t = rgba_to_tensor(&img, 40, 6, 0.0, true);
        assert_eq!(t.shape(), &[4, 52, 52]);
        assert_eq!(t.at3(0, 6, 6), 1.0);
        assert_eq!(t.at3(3, 0, 0), 0.0);
        assert_eq!(t.at3(3, 30, 30), 1.0);
    }

    #[test]
    fn nearest_resize_and_idempotence() {
        let img = RgbaImage::from_fn(4, 4, |x, y| Rgba([(x * 60) as u8, (y * 60) as u8, 0, 255]));
        let t = rgba_to_tensor(&img, 2, 0, 0.0, false);
        assert_eq!(t.shape(), &[4, 2, 2]);
        let again = rgba_to_tensor(&render_rgba(&t, 1).unwrap(), 2, 0, 0.0, false);
        assert_eq!(again, t);
    }
}
