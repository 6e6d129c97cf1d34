//! Dense 2-D grid types shared by every other module.
//!
//! Conventions, stated once and used everywhere: pixel indexing is row-major
//! `(row, col)` with origin at the top-left; labels are one byte per pixel
//! with `IGNORE = 255` as the unlabeled sentinel; probabilities are 64-bit
//! floats stored pixel-major (`(row * width + col) * classes + class`).

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpError};
use crate::util::argmax;

/// Sentinel label for unannotated pixels. Distinct from every class id
/// because class counts are capped at 255.
pub const IGNORE: u8 = 255;

/// Height, width, and class count of a grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

impl GridShape {
    pub fn new(height: usize, width: usize, classes: usize) -> Result<Self> {
        if height < 1 || width < 1 {
            return Err(SpError::InvalidParameter(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        if classes < 2 {
            return Err(SpError::InvalidParameter(format!(
                "need at least 2 classes, got {classes}"
            )));
        }
        if classes > 255 {
            return Err(SpError::InvalidParameter(format!(
                "at most 255 classes supported (labels are one byte), got {classes}"
            )));
        }
        Ok(Self { height, width, classes })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.width + col
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.height && col < self.width
    }

    fn describe(&self) -> String {
        format!("{}x{} (C={})", self.height, self.width, self.classes)
    }

    pub(crate) fn check_same_plane(&self, other: &GridShape) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(SpError::ShapeMismatch {
                expected: self.describe(),
                actual: other.describe(),
            });
        }
        Ok(())
    }
}

/// Dense per-pixel class map. Values are class ids below `shape.classes`
/// or [`IGNORE`]. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    shape: GridShape,
    values: Vec<u8>,
}

impl LabelGrid {
    pub fn from_values(shape: GridShape, values: Vec<u8>) -> Result<Self> {
        if values.len() != shape.pixels() {
            return Err(SpError::ShapeMismatch {
                expected: format!("{} values", shape.pixels()),
                actual: format!("{} values", values.len()),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if v != IGNORE && (v as usize) >= shape.classes {
                return Err(SpError::InvalidParameter(format!(
                    "label {} at pixel {} is not below C={} and not IGNORE",
                    v, i, shape.classes
                )));
            }
        }
        Ok(Self { shape, values })
    }

    pub fn filled(shape: GridShape, value: u8) -> Result<Self> {
        let values = vec![value; shape.pixels()];
        Self::from_values(shape, values)
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[self.shape.index(row, col)]
    }

    /// True if no pixel carries the IGNORE sentinel.
    pub fn is_fully_labeled(&self) -> bool {
        self.values.iter().all(|&v| v != IGNORE)
    }

    pub fn count_labeled(&self) -> usize {
        self.values.iter().filter(|&&v| v != IGNORE).count()
    }
}

/// Per-pixel class probability tensor. Each pixel's entries are in [0, 1]
/// and sum to one within 1e-6. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbGrid {
    shape: GridShape,
    data: Vec<f64>,
}

impl ProbGrid {
    pub fn from_data(shape: GridShape, data: Vec<f64>) -> Result<Self> {
        let expected = shape.pixels() * shape.classes;
        if data.len() != expected {
            return Err(SpError::ShapeMismatch {
                expected: format!("{expected} entries"),
                actual: format!("{} entries", data.len()),
            });
        }
        for px in 0..shape.pixels() {
            let row = &data[px * shape.classes..(px + 1) * shape.classes];
            let mut sum = 0.0;
            for &v in row {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(SpError::InvalidParameter(format!(
                        "probability {v} at pixel {px} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(SpError::InvalidParameter(format!(
                    "pixel {px} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(Self { shape, data })
    }

    /// Uniform 1/C distribution everywhere.
    pub fn uniform(shape: GridShape) -> Self {
        let p = 1.0 / shape.classes as f64;
        Self {
            shape,
            data: vec![p; shape.pixels() * shape.classes],
        }
    }

    pub fn shape(&self) -> GridShape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Probability vector of one pixel (linear index).
    pub fn pixel(&self, px: usize) -> &[f64] {
        &self.data[px * self.shape.classes..(px + 1) * self.shape.classes]
    }

    /// Hard labels by per-pixel argmax; ties break toward the smaller class id.
    pub fn argmax_labels(&self) -> LabelGrid {
        let values = (0..self.shape.pixels())
            .map(|px| argmax(self.pixel(px)) as u8)
            .collect();
        LabelGrid {
            shape: self.shape,
            values,
        }
    }
}

/// One scribble stroke: a set of pixels annotated with a single class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stroke {
    pub class: u8,
    /// (row, col) pairs.
    pub pixels: Vec<(usize, usize)>,
}

/// Sparse scribble annotation: a list of class-pure strokes.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScribbleSet {
    pub strokes: Vec<Stroke>,
}

impl ScribbleSet {
    /// Check stroke pixels against a grid shape: in bounds, class below C,
    /// and pairwise disjoint pixel sets.
    pub fn validate(&self, shape: GridShape) -> Result<()> {
        let mut seen: Vec<Option<u8>> = vec![None; shape.pixels()];
        for stroke in &self.strokes {
            if (stroke.class as usize) >= shape.classes {
                return Err(SpError::InvalidParameter(format!(
                    "stroke class {} not below C={}",
                    stroke.class, shape.classes
                )));
            }
            for &(r, c) in &stroke.pixels {
                if !shape.contains(r, c) {
                    return Err(SpError::OutOfBounds {
                        row: r,
                        col: c,
                        height: shape.height,
                        width: shape.width,
                    });
                }
                let idx = shape.index(r, c);
                if let Some(prev) = seen[idx] {
                    return Err(SpError::ScribbleConflict {
                        row: r,
                        col: c,
                        class_a: prev,
                        class_b: stroke.class,
                    });
                }
                seen[idx] = Some(stroke.class);
            }
        }
        Ok(())
    }

    pub fn total_pixels(&self) -> usize {
        self.strokes.iter().map(|s| s.pixels.len()).sum()
    }
}

/// Rasterize scribbles onto a dense grid: stroke pixels carry their class,
/// everything else carries [`IGNORE`]. Overlapping strokes of the same class
/// are tolerated; different classes on one pixel are a conflict.
pub fn labelgrid_from_scribbles(shape: GridShape, scribbles: &ScribbleSet) -> Result<LabelGrid> {
    let mut values = vec![IGNORE; shape.pixels()];
    for stroke in &scribbles.strokes {
        if (stroke.class as usize) >= shape.classes {
            return Err(SpError::InvalidParameter(format!(
                "stroke class {} not below C={}",
                stroke.class, shape.classes
            )));
        }
        for &(r, c) in &stroke.pixels {
            if !shape.contains(r, c) {
                return Err(SpError::OutOfBounds {
                    row: r,
                    col: c,
                    height: shape.height,
                    width: shape.width,
                });
            }
            let idx = shape.index(r, c);
            if values[idx] != IGNORE && values[idx] != stroke.class {
                return Err(SpError::ScribbleConflict {
                    row: r,
                    col: c,
                    class_a: values[idx],
                    class_b: stroke.class,
                });
            }
            values[idx] = stroke.class;
        }
    }
    Ok(LabelGrid { shape, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(h: usize, w: usize, c: usize) -> GridShape {
        GridShape::new(h, w, c).unwrap()
    }

    #[test]
    fn shape_validation() {
        assert!(GridShape::new(0, 4, 2).is_err());
        assert!(GridShape::new(4, 0, 2).is_err());
        assert!(GridShape::new(4, 4, 1).is_err());
        assert!(GridShape::new(4, 4, 256).is_err());
        assert!(GridShape::new(1, 1, 2).is_ok());
    }

    #[test]
    fn empty_scribbles_give_all_ignore() {
        let grid = labelgrid_from_scribbles(shape(2, 2, 3), &ScribbleSet::default()).unwrap();
        assert!(grid.values().iter().all(|&v| v == IGNORE));
    }

    #[test]
    fn single_pixel_stroke() {
        let sc = ScribbleSet {
            strokes: vec![Stroke { class: 1, pixels: vec![(0, 0)] }],
        };
        let grid = labelgrid_from_scribbles(shape(2, 2, 3), &sc).unwrap();
        assert_eq!(grid.values(), &[1, IGNORE, IGNORE, IGNORE]);
    }

    #[test]
    fn two_disjoint_strokes_direct_placement() {
        let sc = ScribbleSet {
            strokes: vec![
                Stroke { class: 0, pixels: vec![(0, 1), (1, 1)] },
                Stroke { class: 2, pixels: vec![(2, 0)] },
            ],
        };
        let grid = labelgrid_from_scribbles(shape(3, 2, 3), &sc).unwrap();
        // direct placement oracle: write each stroke onto an IGNORE canvas
        let mut expect = vec![IGNORE; 6];
        expect[1] = 0;
        expect[3] = 0;
        expect[4] = 2;
        assert_eq!(grid.values(), expect.as_slice());
    }

    #[test]
    fn out_of_bounds_stroke_rejected() {
        let sc = ScribbleSet {
            strokes: vec![Stroke { class: 0, pixels: vec![(2, 0)] }],
        };
        assert!(matches!(
            labelgrid_from_scribbles(shape(2, 2, 2), &sc),
            Err(SpError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn conflicting_strokes_rejected() {
        let sc = ScribbleSet {
            strokes: vec![
                Stroke { class: 0, pixels: vec![(0, 0)] },
                Stroke { class: 1, pixels: vec![(0, 0)] },
            ],
        };
        assert!(matches!(
            labelgrid_from_scribbles(shape(2, 2, 2), &sc),
            Err(SpError::ScribbleConflict { .. })
        ));
        assert!(sc.validate(shape(2, 2, 2)).is_err());
    }

    #[test]
    fn probgrid_rejects_bad_sums() {
        let s = shape(1, 1, 2);
        assert!(ProbGrid::from_data(s, vec![0.7, 0.7]).is_err());
        assert!(ProbGrid::from_data(s, vec![0.7, 0.3]).is_ok());
        assert!(ProbGrid::from_data(s, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn argmax_ties_toward_smaller_class() {
        let s = shape(1, 1, 2);
        let p = ProbGrid::from_data(s, vec![0.5, 0.5]).unwrap();
        assert_eq!(p.argmax_labels().values(), &[0]);
    }
}
