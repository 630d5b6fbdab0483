//! Dynamic equal-mass discretization of continuous conditionals.
//!
//! Each latent dimension is partitioned into bins of equal probability mass
//! under its conditional prior; latent values are reconstructed from bin
//! indices as bin centers. Because location-scale families have affine
//! quantiles, the standard member's grid is bisected once per (family,
//! bin count) and mapped exactly onto each conditional's parameters, which
//! is numerically identical to re-running the bisection per location.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use statrs::function::erf::erfc;

use crate::ans::QuantizedDistribution;
use crate::codec::{quantize_cdf_bins, CategoricalCodec};
use crate::error::{Error, Result};

/// Location-scale families usable as latent conditionals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContinuousFamily {
    Gaussian,
    Logistic,
    Uniform,
}

impl ContinuousFamily {
    /// CDF of the standard member (location 0, scale 1; uniform on [0, 1)).
    pub fn std_cdf(self, x: f64) -> f64 {
        match self {
            ContinuousFamily::Gaussian => erfc(-x / std::f64::consts::SQRT_2) / 2.0,
            ContinuousFamily::Logistic => 1.0 / (1.0 + (-x).exp()),
            ContinuousFamily::Uniform => x.clamp(0.0, 1.0),
        }
    }

    /// Interval on which the standard cdf spans (0, 1) to double precision.
    fn bisection_range(self) -> (f64, f64) {
        match self {
            ContinuousFamily::Gaussian => (-40.0, 40.0),
            ContinuousFamily::Logistic => (-745.0, 745.0),
            ContinuousFamily::Uniform => (0.0, 1.0),
        }
    }
}

/// A continuous distribution from a location-scale family.
#[derive(Clone, Copy, Debug)]
pub struct ContinuousParams {
    pub family: ContinuousFamily,
    pub loc: f64,
    pub scale: f64,
}

impl ContinuousParams {
    pub fn gaussian(mean: f64, stddev: f64) -> Self {
        ContinuousParams {
            family: ContinuousFamily::Gaussian,
            loc: mean,
            scale: stddev,
        }
    }

    pub fn logistic(loc: f64, scale: f64) -> Self {
        ContinuousParams {
            family: ContinuousFamily::Logistic,
            loc,
            scale,
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.family.std_cdf((x - self.loc) / self.scale)
    }
}

/// Interior quantiles of a standard family member at multiples of
/// `1/n_bins`, plus the bin centers at the half-multiples.
#[derive(Debug)]
pub struct StandardGrid {
    /// `edges[k]` solves `cdf(x) = (k+1)/n_bins`, for k in 0..n_bins-1.
    pub edges: Vec<f64>,
    /// `centers[k]` solves `cdf(x) = (k+0.5)/n_bins`.
    pub centers: Vec<f64>,
}

/// Iterations of bisection; halves an interval of width <= 1490 down to
/// ~1e-15, giving |cdf(edge) - target| far below the 1e-12 contract.
const BISECT_ITERS: u32 = 60;

/// Finds `x` with `cdf(x) = target` by bisection on `[lo, hi]`.
pub fn bisect_quantile(cdf: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, target: f64) -> f64 {
    for _ in 0..BISECT_ITERS {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Builds an equal-mass grid for an arbitrary monotone cdf by bisection.
/// `n_bins` must be a power of two in `2..=2^16` and the cdf must span
/// (0, 1) over `[lo, hi]`.
pub fn equal_mass_grid_from_cdf(
    cdf: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    n_bins: usize,
) -> Result<StandardGrid> {
    if !n_bins.is_power_of_two() || !(2..=1 << 16).contains(&n_bins) {
        return Err(Error::InvalidBinCount(n_bins));
    }
    let (clo, chi) = (cdf(lo), cdf(hi));
    if clo > 1e-9 || chi < 1.0 - 1e-9 {
        return Err(Error::CdfDoesNotSpan { lo: clo, hi: chi });
    }
    let mut edges = Vec::with_capacity(n_bins - 1);
    let mut centers = Vec::with_capacity(n_bins);
    for k in 0..n_bins {
        centers.push(bisect_quantile(
            &cdf,
            lo,
            hi,
            (k as f64 + 0.5) / n_bins as f64,
        ));
        if k + 1 < n_bins {
            edges.push(bisect_quantile(
                &cdf,
                lo,
                hi,
                (k as f64 + 1.0) / n_bins as f64,
            ));
        }
    }
    Ok(StandardGrid { edges, centers })
}

fn standard_grid(family: ContinuousFamily, n_bins: usize) -> Result<Arc<StandardGrid>> {
    static CACHE: OnceLock<Mutex<HashMap<(ContinuousFamily, usize), Arc<StandardGrid>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(grid) = cache.lock().unwrap().get(&(family, n_bins)) {
        return Ok(Arc::clone(grid));
    }
    let (lo, hi) = family.bisection_range();
    let grid = Arc::new(equal_mass_grid_from_cdf(
        |x| family.std_cdf(x),
        lo,
        hi,
        n_bins,
    )?);
    cache
        .lock()
        .unwrap()
        .insert((family, n_bins), Arc::clone(&grid));
    Ok(grid)
}

/// Per-dimension equal-mass bins of a conditional prior: `n_bins` bins with
/// first edge at negative infinity and last at positive infinity, and the
/// bin centers at the half-mass quantiles.
#[derive(Clone, Debug)]
pub struct DiscretizationGrid {
    params: ContinuousParams,
    n_bins: usize,
    std: Arc<StandardGrid>,
}

/// Builds the equal-mass grid of the given conditional.
pub fn make_equal_mass_bins(params: ContinuousParams, n_bins: usize) -> Result<DiscretizationGrid> {
    if params.scale <= 0.0 || !params.scale.is_finite() || !params.loc.is_finite() {
        return Err(Error::InvalidDistribution(format!(
            "conditional parameters loc={} scale={} invalid",
            params.loc, params.scale
        )));
    }
    let std = standard_grid(params.family, n_bins)?;
    Ok(DiscretizationGrid {
        params,
        n_bins,
        std,
    })
}

impl DiscretizationGrid {
    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn params(&self) -> ContinuousParams {
        self.params
    }

    /// Edge `k` for k in 0..=n_bins; the first and last are infinite.
    pub fn edge(&self, k: usize) -> f64 {
        if k == 0 {
            f64::NEG_INFINITY
        } else if k == self.n_bins {
            f64::INFINITY
        } else {
            self.params.loc + self.params.scale * self.std.edges[k - 1]
        }
    }

    /// Center of bin `k`: the (k + 0.5)/n quantile of the conditional.
    pub fn center(&self, k: usize) -> f64 {
        self.params.loc + self.params.scale * self.std.centers[k]
    }

    /// Mass of bin `k` under an arbitrary distribution given by its cdf.
    pub fn bin_mass_under(&self, cdf: impl Fn(f64) -> f64, k: usize) -> f64 {
        let lo = if k == 0 { 0.0 } else { cdf(self.edge(k)) };
        let hi = if k + 1 == self.n_bins {
            1.0
        } else {
            cdf(self.edge(k + 1))
        };
        hi - lo
    }
}

/// Maps a tensor of bin indices to the corresponding bin centers.
pub fn index_to_center(grids: &[DiscretizationGrid], indices: &[u32]) -> Vec<f64> {
    debug_assert_eq!(grids.len(), indices.len());
    grids
        .iter()
        .zip(indices)
        .map(|(g, &i)| g.center(i as usize))
        .collect()
}

/// Standardized magnitude beyond which a location-scale cdf is numerically
/// saturated and evaluates to exactly 0 or 1.
const SATURATE_Z: f64 = 40.0;

/// The distribution over bin indices with masses equal to the posterior's
/// mass in each prior-grid bin, quantized at `precision`.
///
/// When the posterior equals the conditional that generated the grid this
/// is bit-identical to the uniform distribution over `n_bins` at the same
/// precision.
pub fn posterior_index_dist(
    grid: &DiscretizationGrid,
    posterior: ContinuousParams,
    precision: u32,
) -> Result<QuantizedDistribution> {
    if posterior.scale <= 0.0 || !posterior.scale.is_finite() || !posterior.loc.is_finite() {
        return Err(Error::InvalidDistribution(format!(
            "posterior parameters loc={} scale={} invalid",
            posterior.loc, posterior.scale
        )));
    }
    let n = grid.n_bins;
    let mut masses = vec![0.0f64; n];
    let mut prev = 0.0;
    for k in 1..=n {
        let next = if k == n {
            1.0
        } else {
            let z = (grid.edge(k) - posterior.loc) / posterior.scale;
            if z <= -SATURATE_Z {
                0.0
            } else if z >= SATURATE_Z {
                1.0
            } else {
                posterior.family.std_cdf(z)
            }
        };
        let mass = next - prev;
        if mass < 0.0 {
            return Err(Error::NonMonotoneCdf { bin: k - 1 });
        }
        masses[k - 1] = mass;
        prev = next;
    }
    QuantizedDistribution::quantize(&masses, precision)
}

/// Codec over bin indices under the posterior-over-bins distribution.
pub fn posterior_index_codec(
    grid: &DiscretizationGrid,
    posterior: ContinuousParams,
    precision: u32,
) -> Result<CategoricalCodec> {
    Ok(CategoricalCodec::new(posterior_index_dist(
        grid, posterior, precision,
    )?))
}

/// Generic-cdf variant of [`posterior_index_dist`], used when the posterior
/// is not from a location-scale family.
pub fn posterior_index_dist_from_cdf(
    grid: &DiscretizationGrid,
    cdf: impl Fn(f64) -> f64,
    precision: u32,
) -> Result<QuantizedDistribution> {
    let n = grid.n_bins;
    let mut edges = Vec::with_capacity(n + 1);
    for k in 0..=n {
        edges.push(grid.edge(k));
    }
    quantize_cdf_bins(cdf, &edges, precision)
}
