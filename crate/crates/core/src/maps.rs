//! Saliency and probability maps.

use serde::{Deserialize, Serialize};

use crate::grid::{gaussian_blob, Dims, Grid};

/// Which normalisation a [`SaliencyMap`] carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Normalization {
    SumOne,
    MaxOne,
    /// Unnormalised output, e.g. a rendered mixture whose scale carries the
    /// destination probabilities.
    Raw,
}

/// Non-negative per-pixel scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    grid: Grid,
    normalization: Normalization,
}

impl SaliencyMap {
    /// Rescales so the maximum is 1; `None` for maps with no positive value.
    pub fn max_normalized(mut grid: Grid) -> Option<Self> {
        grid.mapv_inplace(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
        let max = grid.fold(0.0f64, |m, &v| m.max(v));
        if max <= 0.0 {
            return None;
        }
        grid.mapv_inplace(|v| v / max);
        Some(Self {
            grid,
            normalization: Normalization::MaxOne,
        })
    }

    pub fn sum_normalized(mut grid: Grid) -> Option<Self> {
        grid.mapv_inplace(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
        let sum = grid.sum();
        if sum <= 0.0 {
            return None;
        }
        grid.mapv_inplace(|v| v / sum);
        Some(Self {
            grid,
            normalization: Normalization::SumOne,
        })
    }

    /// Keeps the values as they are (negatives and non-finite values are
    /// zeroed).
    pub fn raw(mut grid: Grid) -> Self {
        grid.mapv_inplace(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
        Self {
            grid,
            normalization: Normalization::Raw,
        }
    }

    pub fn uniform(dims: Dims) -> Self {
        Self {
            grid: Grid::from_elem(dims.shape(), 1.0),
            normalization: Normalization::MaxOne,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.grid)
    }

    /// Max-normalised copy, or a uniform map when everything is zero.
    pub fn to_max_normalized(&self) -> SaliencyMap {
        Self::max_normalized(self.grid.clone()).unwrap_or_else(|| Self::uniform(self.dims()))
    }

    /// Max-normalised grid, or zeros when the map has no positive value.
    pub fn to_max_normalized_or_zero(&self) -> Grid {
        Self::max_normalized(self.grid.clone())
            .map(Self::into_grid)
            .unwrap_or_else(|| Grid::zeros(self.grid.dim()))
    }

    /// The map as a probability distribution; all-zero maps become uniform.
    pub fn to_probability(&self) -> ProbabilityMap {
        ProbabilityMap::from_weights(self.grid.clone())
            .unwrap_or_else(|| ProbabilityMap::uniform(self.dims()))
    }
}

/// A non-negative grid summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap(Grid);

impl ProbabilityMap {
    pub fn from_weights(grid: Grid) -> Option<Self> {
        SaliencyMap::sum_normalized(grid).map(|m| Self(m.into_grid()))
    }

    pub fn uniform(dims: Dims) -> Self {
        Self(Grid::from_elem(dims.shape(), 1.0 / dims.area() as f64))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn dims(&self) -> Dims {
        Dims::of(&self.0)
    }

    pub fn max(&self) -> f64 {
        self.0.fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Isotropic Gaussian at the frame center with σ = 5% of the diagonal,
/// max-normalised.
pub fn center_prior(dims: Dims) -> SaliencyMap {
    let sigma = 0.05 * dims.diagonal();
    SaliencyMap::max_normalized(gaussian_blob(dims, dims.center(), sigma))
        .expect("gaussian has a positive peak")
}
