use serde::{Deserialize, Serialize};

use super::{
    GeometryError, LandmarkSet, Point, GLABELLA_POINTS, JAW, LEFT_BROW, LEFT_EYE, MENTON, MOUTH,
    NOSE, NUM_POINTS, RIGHT_BROW, RIGHT_EYE, SUBNASALE,
};
use crate::{RegionTag, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    /// Side of the square part box relative to the longer side of the tight
    /// landmark box.
    pub margin: f64,
    /// Output raster side in pixels.
    pub resize_to: u32,
    /// Per-image hairline row, in aligned coordinates. When absent the upper
    /// third is given the height of the middle third.
    pub hairline_override: Option<f64>,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            margin: 1.3,
            resize_to: 224,
            hairline_override: None,
        }
    }
}

impl CropConfig {
    fn validate(&self) -> Result<(), GeometryError> {
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(GeometryError::InvalidConfig(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.resize_to == 0 {
            return Err(GeometryError::InvalidConfig("resize_to must be positive".into()));
        }
        Ok(())
    }
}

/// How far a crop box overflows each image edge, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pad {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionCrop {
    pub tag: RegionTag,
    /// `(x0, y0, x1, y1)` before clipping to the image.
    pub bbox: [f64; 4],
    pub pad: Pad,
    pub resize_to: u32,
    pub preserve_aspect: bool,
}

impl RegionCrop {
    fn new(
        tag: RegionTag,
        bbox: [f64; 4],
        lm: &LandmarkSet,
        resize_to: u32,
        preserve_aspect: bool,
    ) -> Self {
        let (w, h) = (lm.image_width as f64, lm.image_height as f64);
        let pad = Pad {
            left: (-bbox[0]).max(0.0),
            top: (-bbox[1]).max(0.0),
            right: (bbox[2] - w).max(0.0),
            bottom: (bbox[3] - h).max(0.0),
        };
        RegionCrop {
            tag,
            bbox,
            pad,
            resize_to,
            preserve_aspect,
        }
    }

    pub fn width(&self) -> f64 {
        self.bbox[2] - self.bbox[0]
    }

    pub fn height(&self) -> f64 {
        self.bbox[3] - self.bbox[1]
    }
}

fn tight_box(points: impl Iterator<Item = Point>) -> [f64; 4] {
    points.fold(
        [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
        |b, p| [b[0].min(p.x), b[1].min(p.y), b[2].max(p.x), b[3].max(p.y)],
    )
}

/// Tight box of the point set, grown along its shorter axis to a square and
/// then scaled by `margin` about its center.
fn square_box(tag: RegionTag, points: impl Iterator<Item = Point>, margin: f64) -> Result<[f64; 4], GeometryError> {
    let b = tight_box(points);
    let side = (b[2] - b[0]).max(b[3] - b[1]) * margin;
    if !(side > 0.0) {
        return Err(GeometryError::DegenerateRegion(tag));
    }
    let (cx, cy) = ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0);
    let half = side / 2.0;
    Ok([cx - half, cy - half, cx + half, cy + half])
}

fn part_points(lm: &LandmarkSet, tag: RegionTag) -> Vec<Point> {
    let pts = lm.points();
    match tag {
        RegionTag::LeftPeriocular => pts[LEFT_BROW].iter().chain(&pts[LEFT_EYE]).copied().collect(),
        RegionTag::RightPeriocular => pts[RIGHT_BROW].iter().chain(&pts[RIGHT_EYE]).copied().collect(),
        RegionTag::Nose => pts[NOSE].to_vec(),
        RegionTag::Mouth => pts[MOUTH].to_vec(),
        _ => pts[..NUM_POINTS].to_vec(),
    }
}

/// Square crops around the left periocular, right periocular, nose and mouth
/// landmark groups. Boxes may overlap and may extend past the image.
pub fn crop_parts4(lm: &LandmarkSet, cfg: &CropConfig) -> Result<Vec<RegionCrop>, GeometryError> {
    cfg.validate()?;
    RegionTag::PARTS4
        .iter()
        .map(|&tag| {
            let bbox = square_box(tag, part_points(lm, tag).into_iter(), cfg.margin)?;
            Ok(RegionCrop::new(tag, bbox, lm, cfg.resize_to, true))
        })
        .collect()
}

/// The whole face: the same square-expansion rule applied to all 68 points.
pub fn crop_holistic(lm: &LandmarkSet, cfg: &CropConfig) -> Result<RegionCrop, GeometryError> {
    cfg.validate()?;
    let bbox = square_box(RegionTag::Holistic, lm.points().iter().copied(), cfg.margin)?;
    Ok(RegionCrop::new(RegionTag::Holistic, bbox, lm, cfg.resize_to, true))
}

/// Upper, middle and lower facial thirds as three stacked bands sharing the
/// jaw-contour x-range.
///
/// Anchors: glabella (mean of points 21, 22), subnasale (33), menton (8).
/// The hairline is not a landmark; unless overridden it is placed one
/// middle-third height above the glabella. A hairline above the image keeps
/// its position in the box and is recorded in `pad.top`.
pub fn crop_thirds3(lm: &LandmarkSet, cfg: &CropConfig) -> Result<Vec<RegionCrop>, GeometryError> {
    cfg.validate()?;
    let glabella = GLABELLA_POINTS.iter().map(|&i| lm.point(i).y).sum::<f64>() / 2.0;
    let subnasale = lm.point(SUBNASALE).y;
    let menton = lm.point(MENTON).y;
    let hairline = cfg
        .hairline_override
        .unwrap_or(glabella - (subnasale - glabella));
    if !(hairline < glabella && glabella < subnasale && subnasale < menton) {
        return Err(GeometryError::InvertedAnchors(format!(
            "hairline {hairline}, glabella {glabella}, subnasale {subnasale}, menton {menton}"
        )));
    }
    let jaw = tight_box(lm.points()[JAW].iter().copied());
    if !(jaw[2] > jaw[0]) {
        return Err(GeometryError::DegenerateRegion(RegionTag::ThirdMiddle));
    }
    let rows = [hairline, glabella, subnasale, menton];
    Ok(RegionTag::THIRDS3
        .iter()
        .zip(rows.windows(2))
        .map(|(&tag, span)| {
            RegionCrop::new(tag, [jaw[0], span[0], jaw[2], span[1]], lm, cfg.resize_to, false)
        })
        .collect())
}

/// All crops needed by a pipeline strategy, holistic first when present.
pub fn crop_strategy(
    lm: &LandmarkSet,
    strategy: Strategy,
    cfg: &CropConfig,
) -> Result<Vec<RegionCrop>, GeometryError> {
    let mut out = Vec::new();
    for tag in strategy.regions() {
        match tag {
            RegionTag::Holistic => out.push(crop_holistic(lm, cfg)?),
            RegionTag::LeftPeriocular => out.extend(crop_parts4(lm, cfg)?),
            RegionTag::ThirdUpper => out.extend(crop_thirds3(lm, cfg)?),
            _ => {}
        }
    }
    Ok(out)
}
