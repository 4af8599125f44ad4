//! Reversible LeGall 5/3 integer wavelet transform (lifting, symmetric extension).

use crate::error::{Error, Result};

/// One forward lifting pass over `x`, writing lowpass then highpass halves into `out`.
fn lift_forward(x: &[i32], out: &mut [i32]) {
    let n = x.len();
    if n < 2 {
        out[..n].copy_from_slice(x);
        return;
    }
    let ns = n.div_ceil(2);
    let nd = n / 2;
    let even = |i: usize| -> i32 {
        // symmetric extension: x[n] mirrors to x[n-2]
        let j = 2 * i;
        if j < n {
            x[j]
        } else {
            x[2 * (n - 1) - j]
        }
    };
    let mut d = vec![0i32; nd];
    for (i, di) in d.iter_mut().enumerate() {
        *di = x[2 * i + 1] - (even(i) + even(i + 1)).div_euclid(2);
    }
    for i in 0..ns {
        let dl = if i == 0 { d[0] } else { d[i - 1] };
        let dr = if i < nd { d[i] } else { d[nd - 1] };
        out[i] = x[2 * i] + (dl + dr + 2).div_euclid(4);
    }
    out[ns..n].copy_from_slice(&d);
}

fn lift_inverse(y: &[i32], out: &mut [i32]) {
    let n = y.len();
    if n < 2 {
        out[..n].copy_from_slice(y);
        return;
    }
    let ns = n.div_ceil(2);
    let nd = n / 2;
    let (s, d) = y.split_at(ns);
    for i in 0..ns {
        let dl = if i == 0 { d[0] } else { d[i - 1] };
        let dr = if i < nd { d[i] } else { d[nd - 1] };
        out[2 * i] = s[i] - (dl + dr + 2).div_euclid(4);
    }
    for i in 0..nd {
        let left = out[2 * i];
        let right = if 2 * i + 2 < n { out[2 * i + 2] } else { out[2 * i] };
        out[2 * i + 1] = d[i] + (left + right).div_euclid(2);
    }
}

/// Checks that `levels` decompositions fit a `width`×`height` plane.
pub fn check_levels(width: usize, height: usize, levels: usize) -> Result<()> {
    if levels == 0 {
        return Err(Error::Transform("at least one level required".into()));
    }
    let (mut w, mut h) = (width, height);
    for _ in 0..levels {
        if w < 2 || h < 2 {
            return Err(Error::Transform(format!("{levels} levels too many for {width}x{height}")));
        }
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    Ok(())
}

/// In-place multi-level 2D transform in Mallat layout (LL in the top-left corner).
pub fn forward_2d(plane: &mut [i32], width: usize, height: usize, levels: usize) -> Result<()> {
    check_levels(width, height, levels)?;
    let (mut w, mut h) = (width, height);
    let mut line = vec![0i32; width.max(height)];
    let mut out = vec![0i32; width.max(height)];
    for _ in 0..levels {
        for y in 0..h {
            let row = &mut plane[y * width..y * width + w];
            line[..w].copy_from_slice(row);
            lift_forward(&line[..w], &mut out[..w]);
            row.copy_from_slice(&out[..w]);
        }
        for x in 0..w {
            for y in 0..h {
                line[y] = plane[y * width + x];
            }
            lift_forward(&line[..h], &mut out[..h]);
            for y in 0..h {
                plane[y * width + x] = out[y];
            }
        }
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    Ok(())
}

pub fn inverse_2d(plane: &mut [i32], width: usize, height: usize, levels: usize) -> Result<()> {
    check_levels(width, height, levels)?;
    let mut dims = Vec::with_capacity(levels);
    let (mut w, mut h) = (width, height);
    for _ in 0..levels {
        dims.push((w, h));
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    let mut line = vec![0i32; width.max(height)];
    let mut out = vec![0i32; width.max(height)];
    for &(w, h) in dims.iter().rev() {
        for x in 0..w {
            for y in 0..h {
                line[y] = plane[y * width + x];
            }
            lift_inverse(&line[..h], &mut out[..h]);
            for y in 0..h {
                plane[y * width + x] = out[y];
            }
        }
        for y in 0..h {
            let row = &mut plane[y * width..y * width + w];
            line[..w].copy_from_slice(row);
            lift_inverse(&line[..w], &mut out[..w]);
            row.copy_from_slice(&out[..w]);
        }
    }
    Ok(())
}
