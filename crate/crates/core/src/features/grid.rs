use crate::error::{Error, Result};

/// Side length in pixels of one square patch.
pub const PATCH_PX: usize = 14;

/// Row-major `grid_h × grid_w` grid of `dim`-dimensional patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchFeatureGrid {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    data: Vec<f32>,
    source_id: String,
}

impl PatchFeatureGrid {
    pub fn new(
        grid_h: usize,
        grid_w: usize,
        dim: usize,
        data: Vec<f32>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "feature grid must be non-empty, got {grid_h}x{grid_w} dim {dim}"
            )));
        }
        if data.len() != grid_h * grid_w * dim {
            return Err(Error::invalid(format!(
                "feature payload has {} values, expected {}",
                data.len(),
                grid_h * grid_w * dim
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature value at index {i}"
            )));
        }
        Ok(Self {
            grid_h,
            grid_w,
            dim,
            data,
            source_id: source_id.into(),
        })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    /// Flat feature payload, ordered (row, column, channel).
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Feature vector of the patch at flat index `i = row * grid_w + col`.
    pub fn patch(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        self.patch(row * self.grid_w + col)
    }

    pub fn patches(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim)
    }

    /// Permutes the cells by a clockwise right-angle rotation of the grid.
    ///
    /// The feature vectors themselves are untouched, so this only
    /// approximates what a backbone would produce on the rotated image.
    pub fn rotate_cells(&self, quarter_turns: u32) -> PatchFeatureGrid {
        let turns = quarter_turns % 4;
        let (h, w, d) = (self.grid_h, self.grid_w, self.dim);
        let (nh, nw) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        let mut out = vec![0f32; self.data.len()];
        for r in 0..h {
            for c in 0..w {
                let (nr, nc) = match turns {
                    0 => (r, c),
                    1 => (c, h - 1 - r),
                    2 => (h - 1 - r, w - 1 - c),
                    _ => (w - 1 - c, r),
                };
                let dst = (nr * nw + nc) * d;
                out[dst..dst + d].copy_from_slice(self.at(r, c));
            }
        }
        PatchFeatureGrid {
            grid_h: nh,
            grid_w: nw,
            dim: d,
            data: out,
            source_id: self.source_id.clone(),
        }
    }
}
