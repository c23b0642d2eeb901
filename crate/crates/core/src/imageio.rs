//! Image decoding, encoding and resampling.

use std::path::Path;

use image::{ImageBuffer, Rgb, RgbImage, Rgba, RgbaImage};
use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

/// Decodes a PNG/JPEG file into an `H×W×3` grid in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path).map_err(|e| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(to_grid(&img))
}

/// Decodes an in-memory PNG/JPEG. `label` names the source in errors.
pub fn decode_rgb(bytes: &[u8], label: &str) -> Result<Array3<f64>> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::CorruptImage {
        path: label.into(),
        reason: e.to_string(),
    })?;
    Ok(to_grid(&img))
}

fn to_grid(img: &image::DynamicImage) -> Array3<f64> {
    let (w, h) = (img.width(), img.height());
    let data: Vec<f64> = match img.color().bytes_per_pixel() / img.color().channel_count() {
        1 => img.to_rgb8().as_raw().iter().map(|v| *v as f64 / 255.0).collect(),
        2 => img.to_rgb16().as_raw().iter().map(|v| *v as f64 / 65535.0).collect(),
        _ => img.to_rgb32f().as_raw().iter().map(|v| (*v as f64).clamp(0.0, 1.0)).collect(),
    };
    Array3::from_shape_vec((h as usize, w as usize, 3), data).expect("rgb buffer layout")
}

/// Encodes an `H×W×3` grid as 16-bit PNG bytes.
pub fn encode_png(pixels: &Array3<f64>) -> Vec<u8> {
    let (h, w, _) = pixels.dim();
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 65535.0).round() as u16;
        Rgb([px(0), px(1), px(2)])
    });
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).expect("in-memory png encoding");
    out.into_inner()
}

/// Quantizes an `H×W×3` grid to 8 bits.
pub fn to_rgb8(pixels: &Array3<f64>) -> RgbImage {
    let (h, w, _) = pixels.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let px = |c| (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    })
}

pub fn save_png(path: &Path, pixels: &Array3<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    to_rgb8(pixels)
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// A same-size request returns an exact copy.
pub fn resize_bilinear(src: &Array3<f64>, height: usize, width: usize) -> Array3<f64> {
    let (sh, sw, d) = src.dim();
    if (sh, sw) == (height, width) {
        return src.clone();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = s.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let rows = axis(height, sh);
    let cols = axis(width, sw);
    Array3::from_shape_fn((height, width, d), |(r, c, k)| {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = src[[r0, c0, k]] * (1.0 - fc) + src[[r0, c1, k]] * fc;
        let bottom = src[[r1, c0, k]] * (1.0 - fc) + src[[r1, c1, k]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Control points of the score-map colormap, from low (dark blue) to high (yellow).
pub const COLORMAP: [[u8; 3]; 5] = [
    [13, 8, 135],
    [126, 3, 168],
    [204, 71, 120],
    [248, 149, 64],
    [240, 249, 33],
];

/// Maps a value in `[0, 1]` (clamped) to an RGB color by linear
/// interpolation between [`COLORMAP`] stops.
pub fn colormap(value: f64) -> [u8; 3] {
    let t = value.clamp(0.0, 1.0) * (COLORMAP.len() - 1) as f64;
    let i = (t.floor() as usize).min(COLORMAP.len() - 2);
    let f = t - i as f64;
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    [lerp(a[0], b[0]), lerp(a[1], b[1]), lerp(a[2], b[2])]
}

/// Renders a score map as RGBA: values in `[0, 1]` through [`colormap`],
/// NaN as fully transparent.
pub fn heatmap(values: &Array2<f64>) -> RgbaImage {
    let (h, w) = values.dim();
    ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let v = values[[y as usize, x as usize]];
        if v.is_nan() {
            Rgba([0, 0, 0, 0])
        } else {
            let [r, g, b] = colormap(v);
            Rgba([r, g, b, 255])
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_stays_constant() {
        let src = Array3::from_elem((512, 512, 3), 0.3);
        let out = resize_bilinear(&src, 256, 256);
        assert_eq!(out.dim(), (256, 256, 3));
        assert!(out.iter().all(|v| (*v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn same_size_is_bit_identical() {
        let src = Array3::from_shape_fn((20, 30, 3), |(r, c, k)| ((r * 31 + c * 7 + k) % 13) as f64 / 13.0);
        assert_eq!(resize_bilinear(&src, 20, 30), src);
    }

    #[test]
    fn downsample_by_two_averages_pixel_pairs() {
        // Half-pixel centers: output pixel 0 samples input position 0.5.
        let src = Array3::from_shape_fn((2, 4, 1), |(_, c, _)| c as f64);
        let out = resize_bilinear(&src, 1, 2);
        assert_eq!(out[[0, 0, 0]], 0.5);
        assert_eq!(out[[0, 1, 0]], 2.5);
    }

    #[test]
    fn colormap_endpoints_and_nan() {
        assert_eq!(colormap(0.0), COLORMAP[0]);
        assert_eq!(colormap(1.0), COLORMAP[4]);
        assert_eq!(colormap(7.0), COLORMAP[4]);
        let hm = heatmap(&Array2::from_shape_vec((1, 2), vec![f64::NAN, 0.0]).unwrap());
        assert_eq!(hm.get_pixel(0, 0)[3], 0);
        assert_eq!(hm.get_pixel(1, 0).0, [13, 8, 135, 255]);
    }

    #[test]
    fn png_round_trip_is_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let src = Array3::from_shape_fn((17, 19, 3), |(r, c, k)| ((r + 2 * c + 3 * k) % 11) as f64 / 10.0);
        save_png(&path, &src).unwrap();
        let back = load_rgb(&path).unwrap();
        assert_eq!(back.dim(), src.dim());
        assert!(back.iter().zip(src.iter()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-9));
    }

    #[test]
    fn in_memory_png_is_sixteen_bit() {
        let src = Array3::from_shape_fn((5, 7, 3), |(r, c, k)| ((r * 7 + c) * 3 + k) as f64 / 105.0);
        let back = decode_rgb(&encode_png(&src), "mem").unwrap();
        assert!(back.iter().zip(src.iter()).all(|(a, b)| (a - b).abs() <= 0.5 / 65535.0 + 1e-12));
        assert!(matches!(decode_rgb(b"nope", "mem"), Err(Error::CorruptImage { .. })));
    }

    #[test]
    fn undecodable_file_is_corrupt_image() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        assert!(matches!(load_rgb(&path), Err(Error::CorruptImage { .. })));
    }
}
