//! 68-point landmark sets and the crop geometry derived from them.
//!
//! Points follow the iBUG-68 ordering emitted by dlib's shape predictor:
//! jaw 0–16, brows 17–26, nose 27–35, eyes 36–47, mouth 48–67. "Left" and
//! "right" refer to the image, so points 36–41 are the image-left eye.

mod align;
mod crop;
mod pixels;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use align::{align, AlignmentTransform, CANONICAL_EYE_DISTANCE};
pub use crop::{crop_holistic, crop_parts4, crop_strategy, crop_thirds3, CropConfig, Pad, RegionCrop};
pub use pixels::{extract_pixels, extract_pixels_aligned, PadPolicy};

pub const NUM_POINTS: usize = 68;

pub const JAW: Range<usize> = 0..17;
pub const LEFT_BROW: Range<usize> = 17..22;
pub const RIGHT_BROW: Range<usize> = 22..27;
pub const NOSE: Range<usize> = 27..36;
pub const LEFT_EYE: Range<usize> = 36..42;
pub const RIGHT_EYE: Range<usize> = 42..48;
pub const MOUTH: Range<usize> = 48..68;

/// Inner ends of the brows; their midpoint is the glabella.
pub const GLABELLA_POINTS: [usize; 2] = [21, 22];
pub const SUBNASALE: usize = 33;
pub const MENTON: usize = 8;

/// Index permutation that maps each point to its horizontal mirror image.
pub const MIRROR_PERMUTATION: [usize; NUM_POINTS] = [
    16, 15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0, // jaw
    26, 25, 24, 23, 22, 21, 20, 19, 18, 17, // brows
    27, 28, 29, 30, // bridge
    35, 34, 33, 32, 31, // nostrils
    45, 44, 43, 42, 47, 46, // left eye -> right eye
    39, 38, 37, 36, 41, 40, // right eye -> left eye
    54, 53, 52, 51, 50, 49, 48, 59, 58, 57, 56, 55, // outer lip
    64, 63, 62, 61, 60, 67, 66, 65, // inner lip
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GeometryError {
    #[error("malformed landmark file (line {line}): {reason}")]
    MalformedFile { line: usize, reason: String },
    #[error("expected {NUM_POINTS} landmark points, found {0}")]
    WrongPointCount(usize),
    #[error("image dimensions must be positive, got {width}x{height}")]
    NonPositiveDims { width: i64, height: i64 },
    #[error("landmark {index} has a non-finite coordinate")]
    NonFinitePoint { index: usize },
    #[error("eye centers coincide; cannot align")]
    DegenerateEyes,
    #[error("thirds anchors are not strictly increasing top to bottom ({0})")]
    InvertedAnchors(String),
    #[error("region {0} has a zero-size landmark box")]
    DegenerateRegion(crate::RegionTag),
    #[error("crop box for {0} lies entirely outside the image")]
    EmptyIntersection(crate::RegionTag),
    #[error("invalid crop configuration: {0}")]
    InvalidConfig(String),
}

/// A validated set of 68 landmarks for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub subject_id: String,
    pub image_id: String,
    pub image_width: u32,
    pub image_height: u32,
    points: Vec<Point>,
}

const HEADER_NAMES: &str = "subject_id,image_id,image_width,image_height";

impl LandmarkSet {
    pub fn new(
        subject_id: impl Into<String>,
        image_id: impl Into<String>,
        image_width: u32,
        image_height: u32,
        points: Vec<Point>,
    ) -> Result<Self, GeometryError> {
        if image_width == 0 || image_height == 0 {
            return Err(GeometryError::NonPositiveDims {
                width: image_width as i64,
                height: image_height as i64,
            });
        }
        if points.len() != NUM_POINTS {
            return Err(GeometryError::WrongPointCount(points.len()));
        }
        if let Some(index) = points.iter().position(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(GeometryError::NonFinitePoint { index });
        }
        Ok(LandmarkSet {
            subject_id: subject_id.into(),
            image_id: image_id.into(),
            image_width,
            image_height,
            points,
        })
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> Point {
        self.points[idx]
    }

    pub fn mean_of(&self, range: Range<usize>) -> Point {
        let n = range.len() as f64;
        let (sx, sy) = self.points[range]
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point::new(sx / n, sy / n)
    }

    /// Parses the landmark CSV: one line `subject_id,image_id,width,height`
    /// followed by 68 lines `idx,x,y` with ascending idx.
    ///
    /// A literal column-name line before the values line is tolerated.
    pub fn parse(input: &[u8]) -> Result<Self, GeometryError> {
        let text = std::str::from_utf8(input).map_err(|e| GeometryError::MalformedFile {
            line: 0,
            reason: format!("not UTF-8: {e}"),
        })?;
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .filter(|(_, l)| !l.trim().is_empty())
            .peekable();

        if matches!(lines.peek(), Some((_, l)) if l.trim() == HEADER_NAMES) {
            lines.next();
        }
        let (hline, header) = lines.next().ok_or(GeometryError::MalformedFile {
            line: 1,
            reason: "empty file".into(),
        })?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(GeometryError::MalformedFile {
                line: hline,
                reason: format!("header needs 4 columns, found {}", fields.len()),
            });
        }
        let dim = |s: &str| -> Result<i64, GeometryError> {
            s.parse::<i64>().map_err(|_| GeometryError::MalformedFile {
                line: hline,
                reason: format!("non-integer image dimension `{s}`"),
            })
        };
        let (w, h) = (dim(fields[2])?, dim(fields[3])?);
        if w <= 0 || h <= 0 || w > u32::MAX as i64 || h > u32::MAX as i64 {
            return Err(GeometryError::NonPositiveDims { width: w, height: h });
        }

        let mut points = Vec::with_capacity(NUM_POINTS);
        for (line, row) in lines {
            let cols: Vec<&str> = row.split(',').map(str::trim).collect();
            if cols.len() != 3 {
                return Err(GeometryError::MalformedFile {
                    line,
                    reason: format!("point row needs 3 columns, found {}", cols.len()),
                });
            }
            let idx: usize = cols[0].parse().map_err(|_| GeometryError::MalformedFile {
                line,
                reason: format!("non-integer point index `{}`", cols[0]),
            })?;
            if idx != points.len() {
                return Err(GeometryError::MalformedFile {
                    line,
                    reason: format!("expected point index {}, found {idx}", points.len()),
                });
            }
            let num = |s: &str| -> Result<f64, GeometryError> {
                s.parse::<f64>().map_err(|_| GeometryError::MalformedFile {
                    line,
                    reason: format!("non-numeric coordinate `{s}`"),
                })
            };
            points.push(Point::new(num(cols[1])?, num(cols[2])?));
        }
        LandmarkSet::new(fields[0], fields[1], w as u32, h as u32, points)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "{},{},{},{}\n",
            self.subject_id, self.image_id, self.image_width, self.image_height
        );
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{i},{},{}\n", p.x, p.y));
        }
        out
    }

    /// Same landmarks with every point mapped through `f`; image size kept.
    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Self {
        LandmarkSet {
            points: self.points.iter().copied().map(f).collect(),
            ..self.clone()
        }
    }

    /// Mirror about the vertical image axis, relabelling points so the
    /// result is again a valid iBUG-68 set.
    pub fn mirrored(&self) -> Self {
        let w = self.image_width as f64;
        let points = MIRROR_PERMUTATION
            .iter()
            .map(|&src| {
                let p = self.points[src];
                Point::new(w - p.x, p.y)
            })
            .collect();
        LandmarkSet {
            points,
            ..self.clone()
        }
    }
}
