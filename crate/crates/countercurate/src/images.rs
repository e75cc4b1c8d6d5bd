//! Pixel work done locally: box overlays, horizontal flips and the
//! placeholder images produced by mock generators.

use std::path::Path;

use countercurate_core::attributes::Legend;
use countercurate_core::grounded::{BoundingBox, ImageRecord};
use countercurate_core::jobs::Region;
use image::{ImageFormat, Rgb, RgbImage};
use sha2::{Digest, Sha256};

/// Stroke width of overlay rectangles, in pixels.
pub const STROKE: u32 = 3;

/// Errors reading or writing images.
#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: image::ImageError },
}

fn io(path: &Path) -> impl FnOnce(image::ImageError) -> ImageError + '_ {
    move |source| ImageError::Io { path: path.display().to_string(), source }
}

/// Loads any supported image as RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage, ImageError> {
    Ok(image::open(path).map_err(io(path))?.to_rgb8())
}

/// Saves as PNG, creating parent directories.
pub fn save_png(img: &RgbImage, path: &Path) -> Result<(), ImageError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io(path)(image::ImageError::IoError(e)))?;
    }
    img.save_with_format(path, ImageFormat::Png).map_err(io(path))
}

/// PNG bytes of an image.
pub fn png_bytes(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png).expect("in-memory PNG encoding");
    out.into_inner()
}

/// Decodes PNG or JPEG bytes.
pub fn decode(bytes: &[u8]) -> Result<RgbImage, image::ImageError> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}

/// Draws a rectangle outline, clipped to the image.
pub fn stroke_rect(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3], width: u32) {
    let (w, h) = img.dimensions();
    let x2 = b.x2().min(w);
    let y2 = b.y2().min(h);
    for y in b.y1()..y2 {
        for x in b.x1()..x2 {
            let edge = x < b.x1() + width || x + width >= x2 || y < b.y1() + width || y + width >= y2;
            if edge {
                img.put_pixel(x, y, Rgb(color));
            }
        }
    }
}

/// Fills a rectangle, clipped to the image.
pub fn fill_rect(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    for y in b.y1()..b.y2().min(h) {
        for x in b.x1()..b.x2().min(w) {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

/// The record's image with every legend entity's boxes outlined in its
/// legend colour.
pub fn draw_overlay(source: &RgbImage, record: &ImageRecord, legend: &Legend) -> RgbImage {
    let mut img = source.clone();
    for (id, _, rgb) in &legend.entries {
        for b in record.boxes().get(id).into_iter().flatten() {
            stroke_rect(&mut img, b, *rgb, STROKE);
        }
    }
    img
}

/// Mirrors an image left to right.
pub fn hflip(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

/// A colour derived from a string.
pub fn key_color(key: &str) -> [u8; 3] {
    let d = Sha256::digest(key.as_bytes());
    [d[0], d[1], d[2]]
}

/// Deterministic stand-in for a generated image: a flat canvas coloured by
/// `key` with each region filled by a colour derived from its prompt.
pub fn placeholder(width: u32, height: u32, key: &str, regions: &[Region]) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, Rgb(key_color(key)));
    for r in regions {
        fill_rect(&mut img, &r.bbox, key_color(&r.prompt));
    }
    img
}

/// `source` with each region filled by a colour derived from its prompt.
pub fn placeholder_inpaint(source: &RgbImage, regions: &[Region]) -> RgbImage {
    let mut img = source.clone();
    for r in regions {
        fill_rect(&mut img, &r.bbox, key_color(&r.prompt));
    }
    img
}
