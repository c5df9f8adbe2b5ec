use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};

use super::{AlignmentTransform, GeometryError, Point, RegionCrop};

/// Fill rule for crop area outside the source image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    #[default]
    Replicate,
    Black,
}

type Raster<P> = ImageBuffer<P, Vec<u8>>;

/// Resamples `crop.bbox` of `image` into a `resize_to`×`resize_to` raster.
///
/// Sampling is bilinear at pixel centers, so an in-bounds box with integer
/// corners and side equal to `resize_to` copies pixels exactly. Thirds are
/// stretched independently per axis; part boxes are square so their scale is
/// uniform.
pub fn extract_pixels<P>(image: &Raster<P>, crop: &RegionCrop, policy: PadPolicy) -> Result<Raster<P>, GeometryError>
where
    P: Pixel<Subpixel = u8>,
{
    extract_pixels_aligned(image, crop, &AlignmentTransform::IDENTITY, policy)
}

/// Like [`extract_pixels`], for a crop expressed in aligned coordinates:
/// each output sample is mapped back through the inverse of `transform`
/// before it is read from `image`, so the source is resampled only once.
pub fn extract_pixels_aligned<P>(
    image: &Raster<P>,
    crop: &RegionCrop,
    transform: &AlignmentTransform,
    policy: PadPolicy,
) -> Result<Raster<P>, GeometryError>
where
    P: Pixel<Subpixel = u8>,
{
    let (w, h) = (image.width() as f64, image.height() as f64);
    let inv = transform.inverse();
    let [x0, y0, x1, y1] = crop.bbox;

    let corners = [
        inv.apply(Point::new(x0, y0)),
        inv.apply(Point::new(x1, y0)),
        inv.apply(Point::new(x0, y1)),
        inv.apply(Point::new(x1, y1)),
    ];
    let min_x = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    let max_x = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
    let min_y = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let max_y = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    if max_x <= 0.0 || max_y <= 0.0 || min_x >= w || min_y >= h {
        return Err(GeometryError::EmptyIntersection(crop.tag));
    }

    let side = crop.resize_to;
    let sx = (x1 - x0) / side as f64;
    let sy = (y1 - y0) / side as f64;
    let channels = P::CHANNEL_COUNT as usize;
    let mut out: Raster<P> = ImageBuffer::new(side, side);
    let mut acc = vec![0.0f64; channels];

    for oy in 0..side {
        let ay = y0 + (oy as f64 + 0.5) * sy;
        for ox in 0..side {
            let ax = x0 + (ox as f64 + 0.5) * sx;
            let src = inv.apply(Point::new(ax, ay));
            sample_bilinear(image, src.x - 0.5, src.y - 0.5, policy, &mut acc);
            let px = out.get_pixel_mut(ox, oy);
            for (c, v) in px.channels_mut().iter_mut().zip(&acc) {
                *c = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}

/// Bilinear read at continuous pixel-index coordinates (pixel `i` sits at `i`).
fn sample_bilinear<P>(image: &Raster<P>, x: f64, y: f64, policy: PadPolicy, acc: &mut [f64])
where
    P: Pixel<Subpixel = u8>,
{
    let (w, h) = (image.width() as i64, image.height() as i64);
    let (fx, fy) = (x.floor(), y.floor());
    let (tx, ty) = (x - fx, y - fy);
    let (ix, iy) = (fx as i64, fy as i64);
    acc.iter_mut().for_each(|a| *a = 0.0);

    let taps = [
        (ix, iy, (1.0 - tx) * (1.0 - ty)),
        (ix + 1, iy, tx * (1.0 - ty)),
        (ix, iy + 1, (1.0 - tx) * ty),
        (ix + 1, iy + 1, tx * ty),
    ];
    for (px, py, wgt) in taps {
        if wgt == 0.0 {
            continue;
        }
        let inside = px >= 0 && px < w && py >= 0 && py < h;
        let (cx, cy) = match (inside, policy) {
            (true, _) => (px, py),
            (false, PadPolicy::Replicate) => (px.clamp(0, w - 1), py.clamp(0, h - 1)),
            (false, PadPolicy::Black) => continue,
        };
        let p = image.get_pixel(cx as u32, cy as u32);
        for (a, &c) in acc.iter_mut().zip(p.channels()) {
            *a += wgt * c as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landmarks::Pad;
    use crate::RegionTag;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn crop(bbox: [f64; 4], resize_to: u32) -> RegionCrop {
        RegionCrop {
            tag: RegionTag::Nose,
            bbox,
            pad: Pad {
                left: (-bbox[0]).max(0.0),
                top: (-bbox[1]).max(0.0),
                right: 0.0,
                bottom: 0.0,
            },
            resize_to,
            preserve_aspect: true,
        }
    }

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 7 % 256) as u8, (y * 13 % 256) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn identity_resize_copies_pixels() {
        let img = gradient(40, 30);
        let out = extract_pixels(&img, &crop([5.0, 3.0, 25.0, 23.0], 20), PadPolicy::Replicate).unwrap();
        for y in 0..20 {
            for x in 0..20 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x + 5, y + 3));
            }
        }
    }

    #[test]
    fn top_pad_replicates_the_edge_row() {
        let img = GrayImage::from_fn(20, 20, |x, y| Luma([(y * 10 + x) as u8]));
        let c = crop([0.0, -10.0, 20.0, 10.0], 20);
        assert_eq!(c.pad.top, 10.0);
        let out = extract_pixels(&img, &c, PadPolicy::Replicate).unwrap();
        for y in 0..10 {
            for x in 0..20 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x, 0));
            }
        }
        for y in 10..20 {
            for x in 0..20 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x, y - 10));
            }
        }
        let black = extract_pixels(&img, &c, PadPolicy::Black).unwrap();
        assert_eq!(black.get_pixel(3, 2), &Luma([0]));
    }

    #[test]
    fn thirds_are_stretched_to_square() {
        let img = gradient(100, 100);
        let mut c = crop([10.0, 10.0, 50.0, 90.0], 224);
        c.preserve_aspect = false;
        let out = extract_pixels(&img, &c, PadPolicy::Replicate).unwrap();
        assert_eq!(out.dimensions(), (224, 224));
    }

    #[test]
    fn box_outside_image_is_rejected() {
        let img = gradient(10, 10);
        let err = extract_pixels(&img, &crop([20.0, 20.0, 30.0, 30.0], 8), PadPolicy::Replicate).unwrap_err();
        assert!(matches!(err, GeometryError::EmptyIntersection(RegionTag::Nose)));
    }

    #[test]
    fn aligned_extraction_reads_through_the_inverse() {
        // a pure translation by (+3, +2): aligned (x, y) comes from source (x-3, y-2)
        let img = gradient(30, 30);
        let t = AlignmentTransform { matrix: [[1.0, 0.0, 3.0], [0.0, 1.0, 2.0]] };
        let out = extract_pixels_aligned(&img, &crop([8.0, 7.0, 18.0, 17.0], 10), &t, PadPolicy::Replicate).unwrap();
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(5, 5));
        assert_eq!(out.get_pixel(9, 9), img.get_pixel(14, 14));
    }
}
