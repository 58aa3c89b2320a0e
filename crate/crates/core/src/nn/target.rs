use crate::error::{ensure, Error, Result};

/// Dense `h×w` training target for the map heads.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetGrid {
    pub h: usize,
    pub w: usize,
    pub values: Vec<f32>,
}

impl TargetGrid {
    pub fn new(h: usize, w: usize, values: Vec<f32>) -> Result<Self> {
        ensure!(
            values.len() == h * w,
            Shape,
            "target grid {h}×{w} needs {} values, got {}",
            h * w,
            values.len()
        );
        Ok(TargetGrid { h, w, values })
    }

    pub fn one_hot(h: usize, w: usize, row: usize, col: usize) -> Result<Self> {
        ensure!(row < h && col < w, InvalidArgument, "cell ({row},{col}) outside {h}×{w} grid");
        let mut values = vec![0.0; h * w];
        values[row * w + col] = 1.0;
        Ok(TargetGrid { h, w, values })
    }

    pub fn positives(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// Row-major index of the single positive cell, checking the grid is one-hot.
    pub fn hot_index(&self) -> Result<usize> {
        let mut hot = None;
        for (i, &v) in self.values.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::InvalidTarget(
                        "more than one positive cell; exactly one object must exist".into(),
                    ));
                }
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::InvalidTarget(format!("non-binary target value {v}")));
            }
        }
        hot.ok_or_else(|| Error::InvalidTarget("no positive cell; exactly one object must exist".into()))
    }

    /// `(row, col)` of the single positive cell.
    pub fn hot_cell(&self) -> Result<(usize, usize)> {
        let i = self.hot_index()?;
        Ok((i / self.w, i % self.w))
    }
}

/// One-hot grid with the cell containing `point = (x, y)` (image pixels) set.
///
/// The cell is `(floor(y / stride), floor(x / stride))`, clamped to the grid.
pub fn encode_target(point: (f64, f64), map_dims: (usize, usize), stride: usize) -> Result<TargetGrid> {
    let (h, w) = map_dims;
    let (x, y) = point;
    ensure!(stride >= 1, InvalidArgument, "stride must be at least 1");
    ensure!(h >= 1 && w >= 1, InvalidArgument, "empty {h}×{w} grid");
    let (img_h, img_w) = ((h * stride) as f64, (w * stride) as f64);
    ensure!(
        x.is_finite() && y.is_finite() && x >= 0.0 && y >= 0.0 && x < img_w && y < img_h,
        InvalidArgument,
        "point ({x}, {y}) outside {img_w}×{img_h} image"
    );
    let row = ((y / stride as f64).floor() as usize).min(h - 1);
    let col = ((x / stride as f64).floor() as usize).min(w - 1);
    TargetGrid::one_hot(h, w, row, col)
}
