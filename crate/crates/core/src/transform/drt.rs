//! Discrete ripplet transform (type I), realised tile by tile.
//!
//! Each `tile`×`tile` window is taken to the frequency plane with an
//! orthonormal 2D Hartley transform (computed through an FFT, so the
//! coefficients stay real). The frequency plane is then partitioned into
//! wedges: dyadic radial rings give the scales and each ring is cut into
//! angular sectors. The number of sectors follows the ripplet scaling law,
//! `N_s = N_1 * 2^ceil((s - 1)(1 - 1/d))` with `N_1 = round(4 / c)`, so for the
//! curvelet case `c = 1, d = 2` the count doubles every other scale. All
//! sectors start at angle zero, so finer sectors nest inside coarser ones and
//! the coarsest detail partition doubles as the set of direction classes.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const ANGLE_EPS: f64 = 1e-9;

/// Frequency-plane bookkeeping for one tile size and parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct RippletLayout {
    pub tile: usize,
    pub levels: usize,
    pub support_c: f64,
    pub degree_d: f64,
    /// Per coefficient (`v * tile + u`): scale, 0 being the lowpass.
    pub scale: Vec<usize>,
    /// Per coefficient: sector index within its scale (0 for the lowpass).
    pub orientation: Vec<usize>,
    /// Per coefficient: frequency angle in `[0, pi)`; zero for DC.
    pub angle: Vec<f64>,
    /// Per coefficient: coarse direction class, `None` for the lowpass.
    pub class: Vec<Option<usize>>,
    /// Sector count per scale (1 for the lowpass).
    pub orientations_per_scale: Vec<usize>,
}

impl RippletLayout {
    pub fn new(tile: usize, levels: usize, support_c: f64, degree_d: f64) -> Result<Self> {
        if tile < 4 || !tile.is_power_of_two() {
            return Err(Error::Transform(format!("tile size {tile} must be a power of two >= 4")));
        }
        if levels < 2 {
            return Err(Error::Transform("ripplet decomposition needs at least 2 scales".into()));
        }
        // The innermost detail ring must hold at least one frequency sample.
        let half = (tile / 2) as f64;
        if half * 0.5f64.powi(levels as i32 - 1) < 1.0 {
            return Err(Error::Transform(format!(
                "{levels} scales need a window larger than {tile}x{tile}"
            )));
        }
        if !(support_c > 0.0 && support_c.is_finite()) || !(degree_d > 0.0 && degree_d.is_finite()) {
            return Err(Error::InvalidParam("support c and degree d must be positive".into()));
        }
        let n1 = ((4.0 / support_c).round() as usize).max(1);
        let mut orientations_per_scale = vec![1];
        for s in 1..levels {
            let exp = ((s - 1) as f64 * (1.0 - 1.0 / degree_d)).ceil().max(0.0) as u32;
            orientations_per_scale.push(n1 << exp.min(16));
        }

        let n = tile * tile;
        let (mut scale, mut orientation, mut angle, mut class) =
            (vec![0; n], vec![0; n], vec![0.0; n], vec![None; n]);
        for v in 0..tile {
            for u in 0..tile {
                let i = v * tile + u;
                let fu = centered(u, tile);
                let fv = centered(v, tile);
                if fu == 0 && fv == 0 {
                    continue;
                }
                let r = ((fu * fu + fv * fv) as f64).sqrt() / half;
                let s = ((levels as f64 + r.log2() + 1e-12).floor().max(0.0) as usize).min(levels - 1);
                let theta = (fv as f64).atan2(fu as f64).rem_euclid(PI);
                let theta = if theta >= PI - ANGLE_EPS { 0.0 } else { theta };
                scale[i] = s;
                angle[i] = theta;
                if s > 0 {
                    orientation[i] = sector(theta, orientations_per_scale[s]);
                    class[i] = Some(sector(theta, n1));
                }
            }
        }
        Ok(Self { tile, levels, support_c, degree_d, scale, orientation, angle, class, orientations_per_scale })
    }

    pub fn coefficient_count(&self) -> usize {
        self.tile * self.tile
    }

    pub fn class_count(&self) -> usize {
        self.orientations_per_scale.get(1).copied().unwrap_or(1)
    }

    /// Frequency-angle interval `[lo, hi)` covered by a sector.
    pub fn sector_range(&self, scale: usize, orientation: usize) -> (f64, f64) {
        if scale == 0 {
            return (0.0, PI);
        }
        let w = PI / self.orientations_per_scale[scale] as f64;
        (orientation as f64 * w, (orientation + 1) as f64 * w)
    }

    /// Coefficient indices belonging to each (scale, orientation) wedge, in index order.
    pub fn wedges(&self) -> Vec<((usize, usize), Vec<usize>)> {
        let mut out = Vec::new();
        for s in 0..self.levels {
            for o in 0..self.orientations_per_scale[s] {
                let members: Vec<usize> = (0..self.coefficient_count())
                    .filter(|&i| self.scale[i] == s && (s == 0 || self.orientation[i] == o))
                    .collect();
                out.push(((s, o), members));
            }
        }
        out
    }
}

fn centered(k: usize, n: usize) -> i64 {
    if k < n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

fn sector(theta: f64, count: usize) -> usize {
    ((theta / (PI / count as f64) + ANGLE_EPS).floor() as usize).min(count - 1)
}

/// Orthonormal 2D Hartley transform of square tiles via FFT. Self-inverse.
pub struct Hartley2d {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Hartley2d {
    pub fn new(n: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(n);
        Self { n, fft }
    }

    pub fn apply(&self, tile: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(tile.len(), n * n);
        let mut buf: Vec<Complex<f64>> = tile.iter().map(|&x| Complex::new(x, 0.0)).collect();
        for row in buf.chunks_exact_mut(n) {
            self.fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); n];
        for x in 0..n {
            for y in 0..n {
                col[y] = buf[y * n + x];
            }
            self.fft.process(&mut col);
            for y in 0..n {
                buf[y * n + x] = col[y];
            }
        }
        let scale = 1.0 / n as f64;
        buf.iter().map(|c| (c.re - c.im) * scale).collect()
    }
}

/// Explicit orthonormal Hartley basis, `basis[i * n2 + p]` for coefficient `i`
/// and pixel `p`. Used where per-coefficient sensitivities are needed.
pub fn hartley_basis(n: usize) -> Vec<f64> {
    let n2 = n * n;
    let mut basis = vec![0.0; n2 * n2];
    for v in 0..n {
        for u in 0..n {
            let i = v * n + u;
            for y in 0..n {
                for x in 0..n {
                    let t = 2.0 * PI * ((u * x + v * y) % n) as f64 / n as f64;
                    basis[i * n2 + y * n + x] = (t.cos() + t.sin()) / n as f64;
                }
            }
        }
    }
    basis
}
