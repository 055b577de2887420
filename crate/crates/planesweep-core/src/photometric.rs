//! 3×3 SSIM and the clamped photometric error `(1 − SSIM) / 2`.

use crate::error::Result;
use crate::geometry::Warped;
use crate::grid::{Grid, Image};

/// SSIM luminance constant `(0.01·L)²` for dynamic range `L = 1`.
pub const SSIM_C1: f64 = 0.01 * 0.01;
/// SSIM contrast constant `(0.03·L)²` for dynamic range `L = 1`.
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Inclusive bounds of the 3×3 window around `(x, y)`, shrunk at the border.
#[inline]
pub(crate) fn window(x: usize, y: usize, w: usize, h: usize) -> (usize, usize, usize, usize) {
    (
        x.saturating_sub(1),
        (x + 1).min(w - 1),
        y.saturating_sub(1),
        (y + 1).min(h - 1),
    )
}

/// First and second moments of a window pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WindowStats {
    pub n: f64,
    pub mu_a: f64,
    pub mu_b: f64,
    pub var_a: f64,
    pub var_b: f64,
    pub cov: f64,
}

impl WindowStats {
    pub(crate) fn gather(a: &Grid<f64>, b: &Grid<f64>, (x0, x1, y0, y1): (usize, usize, usize, usize)) -> Self {
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                let va = *a.get(xx, yy);
                let vb = *b.get(xx, yy);
                sa += va;
                sb += vb;
                saa += va * va;
                sbb += vb * vb;
                sab += va * vb;
            }
        }
        let n = ((x1 - x0 + 1) * (y1 - y0 + 1)) as f64;
        let mu_a = sa / n;
        let mu_b = sb / n;
        WindowStats {
            n,
            mu_a,
            mu_b,
            var_a: saa / n - mu_a * mu_a,
            var_b: sbb / n - mu_b * mu_b,
            cov: sab / n - mu_a * mu_b,
        }
    }

    #[inline]
    pub(crate) fn ssim(&self) -> f64 {
        let num = (2.0 * self.mu_a * self.mu_b + SSIM_C1) * (2.0 * self.cov + SSIM_C2);
        let den = (self.mu_a * self.mu_a + self.mu_b * self.mu_b + SSIM_C1) * (self.var_a + self.var_b + SSIM_C2);
        num / den
    }

    /// ∂SSIM/∂a_z for a window member with values `(a_z, b_z)`.
    #[inline]
    pub(crate) fn dssim_da(&self, a_z: f64, b_z: f64) -> f64 {
        let l_num = 2.0 * self.mu_a * self.mu_b + SSIM_C1;
        let c_num = 2.0 * self.cov + SSIM_C2;
        let l_den = self.mu_a * self.mu_a + self.mu_b * self.mu_b + SSIM_C1;
        let c_den = self.var_a + self.var_b + SSIM_C2;
        let inv_n = 1.0 / self.n;
        let dl_num = 2.0 * self.mu_b * inv_n;
        let dc_num = 2.0 * (b_z - self.mu_b) * inv_n;
        let dl_den = 2.0 * self.mu_a * inv_n;
        let dc_den = 2.0 * (a_z - self.mu_a) * inv_n;
        let den = l_den * c_den;
        let s = l_num * c_num / den;
        (dl_num * c_num + l_num * dc_num) / den - s * (dl_den * c_den + l_den * dc_den) / den
    }
}

/// Per-pixel SSIM with a uniform 3×3 window, averaged over channels.
pub fn ssim_map(a: &Image, b: &Image) -> Result<Grid<f64>> {
    b.ensure_dims("ssim operands", a.dims())?;
    if a.channels() != b.channels() {
        return Err(crate::Error::param(
            "channels",
            alloc::format!("{} vs {}", a.channels(), b.channels()),
        ));
    }
    let (w, h) = a.dims();
    let channels = a.channels() as f64;
    Ok(Grid::from_fn(w, h, |x, y| {
        let win = window(x, y, w, h);
        let total: f64 = a
            .planes()
            .iter()
            .zip(b.planes())
            .map(|(pa, pb)| WindowStats::gather(pa, pb, win).ssim())
            .sum();
        total / channels
    }))
}

/// Photometric error map with per-pixel validity.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    /// `(1 − SSIM)/2` clamped to `[0, 1]`; 1 at invalid pixels.
    pub values: Grid<f64>,
    pub valid: Grid<bool>,
}

impl ErrorMap {
    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }
}

#[inline]
pub(crate) fn pe_from_ssim(s: f64) -> f64 {
    ((1.0 - s) * 0.5).clamp(0.0, 1.0)
}

/// Whether every pixel of the 3×3 window around `(x, y)` is valid.
#[inline]
pub(crate) fn window_valid(valid: &Grid<bool>, x: usize, y: usize) -> bool {
    let (x0, x1, y0, y1) = window(x, y, valid.width(), valid.height());
    (y0..=y1).all(|yy| (x0..=x1).all(|xx| *valid.get(xx, yy)))
}

/// `pe = (1 − SSIM(warped, key)) / 2`, clamped to `[0, 1]`.
///
/// A pixel is valid only when its whole SSIM window consists of valid warped
/// samples, so out-of-view regions never contribute photometric evidence.
pub fn pe_map(warped: &Warped, key: &Image) -> Result<ErrorMap> {
    warped.valid.ensure_dims("warp validity", key.dims())?;
    let ssim = ssim_map(&warped.image, key)?;
    let (w, h) = key.dims();
    let valid = Grid::from_fn(w, h, |x, y| window_valid(&warped.valid, x, y));
    let values = Grid::from_fn(w, h, |x, y| {
        if *valid.get(x, y) {
            pe_from_ssim(*ssim.get(x, y))
        } else {
            1.0
        }
    });
    Ok(ErrorMap { values, valid })
}
