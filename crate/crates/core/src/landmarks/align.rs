use serde::{Deserialize, Serialize};

use super::{GeometryError, LandmarkSet, Point, LEFT_EYE, RIGHT_EYE};

/// Inter-eye distance, in pixels, after alignment.
pub const CANONICAL_EYE_DISTANCE: f64 = 64.0;

/// A 2×3 similarity transform `[[p, q, tx], [-q, p, ty]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentTransform {
    pub matrix: [[f64; 3]; 2],
}

impl AlignmentTransform {
    pub const IDENTITY: AlignmentTransform = AlignmentTransform {
        matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.matrix;
        Point::new(
            m[0][0] * p.x + m[0][1] * p.y + m[0][2],
            m[1][0] * p.x + m[1][1] * p.y + m[1][2],
        )
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.matrix;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn inverse(&self) -> AlignmentTransform {
        let m = &self.matrix;
        let det = self.determinant();
        let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        AlignmentTransform {
            matrix: [
                [ia, ib, -(ia * m[0][2] + ib * m[1][2])],
                [ic, id, -(ic * m[0][2] + id * m[1][2])],
            ],
        }
    }
}

/// Rotates and scales about the eye midpoint so the two eye centers lie on a
/// horizontal segment of length [`CANONICAL_EYE_DISTANCE`].
///
/// The midpoint is kept fixed, which makes the transform the identity on
/// already-aligned input.
pub fn align(lm: &LandmarkSet) -> Result<(AlignmentTransform, LandmarkSet), GeometryError> {
    let left = lm.mean_of(LEFT_EYE);
    let right = lm.mean_of(RIGHT_EYE);
    let (vx, vy) = (right.x - left.x, right.y - left.y);
    let d2 = vx * vx + vy * vy;
    if d2.sqrt() < 1e-9 {
        return Err(GeometryError::DegenerateEyes);
    }
    let p = CANONICAL_EYE_DISTANCE * vx / d2;
    let q = CANONICAL_EYE_DISTANCE * vy / d2;
    let (mx, my) = ((left.x + right.x) / 2.0, (left.y + right.y) / 2.0);
    let t = AlignmentTransform {
        matrix: [
            [p, q, mx - (p * mx + q * my)],
            [-q, p, my - (-q * mx + p * my)],
        ],
    };
    let aligned = lm.map_points(|pt| t.apply(pt));
    Ok((t, aligned))
}
