//! Invertible image decompositions and the per-block coefficient selection
//! that decides where payload bits go.
//!
//! Two transforms are provided: a reversible integer wavelet transform (5/3
//! lifting) and a tile-based discrete ripplet transform. Both are exposed as
//! whole-image [`CoefficientPyramid`]s and, for the embedder, as a per-block
//! [`BlockCodec`].

pub mod drt;
pub mod iwt;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{split_blocks, Image};
use drt::{hartley_basis, Hartley2d, RippletLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransformKind {
    Iwt,
    Drt,
}

impl std::fmt::Display for TransformKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TransformKind::Iwt => "IWT",
            TransformKind::Drt => "DRT",
        })
    }
}

impl std::str::FromStr for TransformKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "iwt" => Ok(TransformKind::Iwt),
            "drt" => Ok(TransformKind::Drt),
            _ => Err(Error::InvalidParam(format!("unknown transform {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub kind: TransformKind,
    /// Decomposition levels (IWT) or number of scales including the lowpass (DRT).
    pub levels: usize,
    /// Ripplet support `c`; ignored by the IWT.
    pub support_c: f64,
    /// Ripplet degree `d`; ignored by the IWT.
    pub degree_d: f64,
    /// Quantisation step used to integerise ripplet coefficients.
    pub quant_step: f64,
    /// Spatial block (and ripplet tile) size.
    pub block_size: usize,
}

impl TransformParams {
    pub fn iwt() -> Self {
        Self { kind: TransformKind::Iwt, levels: 1, support_c: 1.0, degree_d: 2.0, quant_step: 1.0, block_size: 8 }
    }

    pub fn drt() -> Self {
        Self { kind: TransformKind::Drt, levels: 3, support_c: 1.0, degree_d: 2.0, quant_step: 1.0, block_size: 8 }
    }

    pub fn for_kind(kind: TransformKind) -> Self {
        match kind {
            TransformKind::Iwt => Self::iwt(),
            TransformKind::Drt => Self::drt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.quant_step > 0.0 && self.quant_step.is_finite()) {
            return Err(Error::InvalidParam("quant_step must be positive".into()));
        }
        if self.levels == 0 {
            return Err(Error::InvalidParam("levels must be >= 1".into()));
        }
        match self.kind {
            TransformKind::Iwt => iwt::check_levels(self.block_size, self.block_size, self.levels),
            TransformKind::Drt => RippletLayout::new(self.block_size, self.levels, self.support_c, self.degree_d).map(|_| ()),
        }
    }
}

/// One subband of a pyramid.
///
/// For the IWT, `coeffs` is a `width`×`height` spatial array. For the DRT,
/// each of the `height` rows holds the `width` coefficients of this wedge for
/// one tile, and `members` lists their in-tile frequency indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Subband {
    pub channel: usize,
    pub scale: usize,
    pub orientation: usize,
    /// Frequency-angle interval `[lo, hi)` this subband responds to.
    pub angle_range: (f64, f64),
    pub width: usize,
    pub height: usize,
    pub members: Vec<usize>,
    pub coeffs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPyramid {
    pub params: TransformParams,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub quantized: bool,
    /// Tile grid for the DRT (`cols`, `rows`); block grid for the IWT.
    pub grid: (usize, usize),
    pub subbands: Vec<Subband>,
}

impl CoefficientPyramid {
    pub fn subband(&self, channel: usize, scale: usize, orientation: usize) -> Option<&Subband> {
        self.subbands
            .iter()
            .find(|s| s.channel == channel && s.scale == scale && s.orientation == orientation)
    }

    pub fn total_coefficients(&self) -> usize {
        self.subbands.iter().map(|s| s.coeffs.len()).sum()
    }

    pub fn energy(&self) -> f64 {
        let q = if self.quantized { self.params.quant_step } else { 1.0 };
        self.subbands.iter().flat_map(|s| &s.coeffs).map(|c| (c * q) * (c * q)).sum()
    }

    /// Rounds every coefficient to a multiple of `quant_step`, storing the index.
    ///
    /// Each index is the floor or ceiling of the exact value. Nearest rounding
    /// is used unless a DRT tile would then reconstruct more than one level off
    /// (a faint impulse in a flat tile vanishes entirely), in which case some of
    /// that tile's coefficients take the other neighbour.
    pub fn quantize(&mut self) {
        if self.quantized {
            return;
        }
        let step = self.params.quant_step;
        let exact = (self.params.kind == TransformKind::Drt).then(|| self.subbands.clone());
        for s in &mut self.subbands {
            for c in &mut s.coeffs {
                *c = (*c / step).round_ties_even();
            }
        }
        self.quantized = true;
        if let Some(exact) = exact {
            self.bound_drt_error(&exact);
        }
    }

    fn bound_drt_error(&mut self, exact: &[Subband]) {
        let tile = self.params.block_size;
        let n = tile * tile;
        let basis = hartley_basis(tile);
        let step = self.params.quant_step;
        for c in 0..self.channels {
            let bands: Vec<usize> = (0..self.subbands.len()).filter(|&b| self.subbands[b].channel == c).collect();
            for t in 0..self.grid.0 * self.grid.1 {
                let (mut q, mut x) = (vec![0.0; n], vec![0.0; n]);
                for &b in &bands {
                    let sb = &self.subbands[b];
                    for (k, &i) in sb.members.iter().enumerate() {
                        q[i] = sb.coeffs[t * sb.width + k];
                        x[i] = exact[b].coeffs[t * sb.width + k] / step;
                    }
                }
                if let Some(q) = bound_tile_error(&basis, &x, q, step) {
                    for &b in &bands {
                        let sb = &mut self.subbands[b];
                        for (k, &i) in sb.members.iter().enumerate() {
                            sb.coeffs[t * sb.width + k] = q[i];
                        }
                    }
                }
            }
        }
    }

    fn check_layout(&self) -> Result<()> {
        if self.channels == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Transform("empty pyramid".into()));
        }
        for s in &self.subbands {
            if s.coeffs.len() != s.width * s.height || s.channel >= self.channels {
                return Err(Error::Transform(format!(
                    "subband ({}, {}, {}) has inconsistent shape",
                    s.channel, s.scale, s.orientation
                )));
            }
        }
        Ok(())
    }
}

/// Greedy floor/ceil reassignment of one tile's indices `q` (exact values `x`)
/// until no pixel error reaches one level. `None` when nearest rounding already
/// reconstructs every pixel within one level.
fn bound_tile_error(basis: &[f64], x: &[f64], mut q: Vec<f64>, step: f64) -> Option<Vec<f64>> {
    const TARGET: f64 = 1.0;
    const ROUNDS_WITHIN_ONE: f64 = 1.5;
    let n = x.len();
    let mut e = vec![0.0; n];
    for i in 0..n {
        let d = (q[i] - x[i]) * step;
        for p in 0..n {
            e[p] += d * basis[i * n + p];
        }
    }
    if e.iter().all(|v| v.abs() < ROUNDS_WITHIN_ONE) {
        return None;
    }
    let excess = |v: f64| (v.abs() - TARGET).max(0.0).powi(2);
    let mut current: f64 = e.iter().map(|&v| excess(v)).sum();
    let mut flipped = vec![false; n];
    while current > 0.0 {
        let mut best: Option<(usize, f64, f64)> = None;
        for i in (0..n).filter(|&i| !flipped[i] && q[i] != x[i]) {
            let delta = if q[i] > x[i] { -1.0 } else { 1.0 };
            let row = &basis[i * n..(i + 1) * n];
            let cost: f64 = e.iter().zip(row).map(|(&v, &b)| excess(v + delta * step * b)).sum();
            if best.map_or(true, |(_, c, _)| cost < c) {
                best = Some((i, cost, delta));
            }
        }
        match best {
            Some((i, cost, delta)) if cost < current => {
                q[i] += delta;
                for (v, &b) in e.iter_mut().zip(&basis[i * n..(i + 1) * n]) {
                    *v += delta * step * b;
                }
                flipped[i] = true;
                current = cost;
            }
            _ => break,
        }
    }
    Some(q)
}

fn planes_of(image: &Image) -> Vec<Vec<i32>> {
    (0..image.channels()).map(|c| image.plane(c).into_iter().map(i32::from).collect()).collect()
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Rectangle of one IWT subband inside the Mallat layout.
struct IwtRegion {
    scale: usize,
    orientation: usize,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

fn iwt_regions(width: usize, height: usize, levels: usize) -> Vec<IwtRegion> {
    let mut out = Vec::new();
    let (mut w, mut h) = (width, height);
    for level in 1..=levels {
        let (ws, hs) = (w.div_ceil(2), h.div_ceil(2));
        let scale = levels - level + 1;
        out.push(IwtRegion { scale, orientation: 0, x0: 0, y0: hs, w: ws, h: h - hs });
        out.push(IwtRegion { scale, orientation: 1, x0: ws, y0: 0, w: w - ws, h: hs });
        out.push(IwtRegion { scale, orientation: 2, x0: ws, y0: hs, w: w - ws, h: h - hs });
        w = ws;
        h = hs;
    }
    out.push(IwtRegion { scale: 0, orientation: 0, x0: 0, y0: 0, w, h });
    out
}

/// Detail orientation labels of the IWT: horizontal, vertical and diagonal
/// structure, expressed as frequency-angle intervals.
fn iwt_angle_range(scale: usize, orientation: usize) -> (f64, f64) {
    use std::f64::consts::PI;
    match (scale, orientation) {
        (0, _) => (0.0, PI),
        (_, 0) => (3.0 * PI / 8.0, 5.0 * PI / 8.0),
        (_, 1) => (7.0 * PI / 8.0, 9.0 * PI / 8.0),
        _ => (PI / 8.0, 3.0 * PI / 8.0),
    }
}

/// Integer wavelet decomposition of every channel.
pub fn iwt_forward(image: &Image, levels: usize) -> Result<CoefficientPyramid> {
    let (w, h) = (image.width(), image.height());
    iwt::check_levels(w, h, levels)?;
    let mut subbands = Vec::new();
    for (c, mut plane) in planes_of(image).into_iter().enumerate() {
        iwt::forward_2d(&mut plane, w, h, levels)?;
        for r in iwt_regions(w, h, levels) {
            let mut coeffs = Vec::with_capacity(r.w * r.h);
            for y in r.y0..r.y0 + r.h {
                coeffs.extend(plane[y * w + r.x0..y * w + r.x0 + r.w].iter().map(|&v| v as f64));
            }
            subbands.push(Subband {
                channel: c,
                scale: r.scale,
                orientation: r.orientation,
                angle_range: iwt_angle_range(r.scale, r.orientation),
                width: r.w,
                height: r.h,
                members: Vec::new(),
                coeffs,
            });
        }
    }
    let params = TransformParams { levels, ..TransformParams::iwt() };
    Ok(CoefficientPyramid {
        params,
        width: w,
        height: h,
        channels: image.channels(),
        quantized: true,
        grid: (w.div_ceil(params.block_size), h.div_ceil(params.block_size)),
        subbands,
    })
}

/// Exact inverse of [`iwt_forward`]; output samples are clamped to `[0, 255]`.
pub fn iwt_inverse(pyramid: &CoefficientPyramid) -> Result<Image> {
    if pyramid.params.kind != TransformKind::Iwt {
        return Err(Error::Transform("not an IWT pyramid".into()));
    }
    pyramid.check_layout()?;
    let (w, h, levels) = (pyramid.width, pyramid.height, pyramid.params.levels);
    let mut image = Image::filled(w, h, pyramid.channels, 0)?;
    for c in 0..pyramid.channels {
        let mut plane = vec![0i32; w * h];
        for r in iwt_regions(w, h, levels) {
            let sb = pyramid
                .subband(c, r.scale, r.orientation)
                .filter(|s| s.width == r.w && s.height == r.h)
                .ok_or_else(|| Error::Transform(format!("missing subband ({c}, {}, {})", r.scale, r.orientation)))?;
            for y in 0..r.h {
                for x in 0..r.w {
                    plane[(r.y0 + y) * w + r.x0 + x] = sb.coeffs[y * r.w + x].round() as i32;
                }
            }
        }
        iwt::inverse_2d(&mut plane, w, h, levels)?;
        let bytes: Vec<u8> = plane.iter().map(|&v| v.clamp(0, 255) as u8).collect();
        image.set_plane(c, &bytes);
    }
    Ok(image)
}

/// Ripplet decomposition. Fails when `params.kind` is not DRT or the image is
/// smaller than one window.
pub fn drt_forward(image: &Image, params: &TransformParams) -> Result<CoefficientPyramid> {
    if params.kind != TransformKind::Drt {
        return Err(Error::Transform("drt_forward requires DRT parameters".into()));
    }
    params.validate()?;
    let tile = params.block_size;
    if image.width() < tile || image.height() < tile {
        return Err(Error::Transform(format!(
            "{}x{} image is smaller than the {tile}x{tile} window",
            image.width(),
            image.height()
        )));
    }
    let layout = RippletLayout::new(tile, params.levels, params.support_c, params.degree_d)?;
    let hartley = Hartley2d::new(tile);
    let grid = split_blocks(image, tile)?;
    let per_channel = grid.blocks_per_channel();
    let wedges = layout.wedges();
    let mut subbands: Vec<Subband> = Vec::new();
    for c in 0..image.channels() {
        let spectra: Vec<Vec<f64>> = grid.blocks[c * per_channel..(c + 1) * per_channel]
            .iter()
            .map(|b| hartley.apply(&b.iter().map(|&v| v as f64).collect::<Vec<_>>()))
            .collect();
        for ((s, o), members) in &wedges {
            let mut coeffs = Vec::with_capacity(members.len() * per_channel);
            for spec in &spectra {
                coeffs.extend(members.iter().map(|&i| spec[i]));
            }
            subbands.push(Subband {
                channel: c,
                scale: *s,
                orientation: *o,
                angle_range: layout.sector_range(*s, *o),
                width: members.len(),
                height: per_channel,
                members: members.clone(),
                coeffs,
            });
        }
    }
    Ok(CoefficientPyramid {
        params: *params,
        width: image.width(),
        height: image.height(),
        channels: image.channels(),
        quantized: false,
        grid: (grid.cols, grid.rows),
        subbands,
    })
}

/// Synthesis without rounding: one `f64` plane per channel.
pub fn drt_inverse_float(pyramid: &CoefficientPyramid) -> Result<Vec<Vec<f64>>> {
    if pyramid.params.kind != TransformKind::Drt {
        return Err(Error::Transform("not a DRT pyramid".into()));
    }
    pyramid.check_layout()?;
    let tile = pyramid.params.block_size;
    let (cols, rows) = pyramid.grid;
    if cols != pyramid.width.div_ceil(tile) || rows != pyramid.height.div_ceil(tile) {
        return Err(Error::Transform("tile grid does not match image size".into()));
    }
    let n = tile * tile;
    let per_channel = cols * rows;
    let hartley = Hartley2d::new(tile);
    let step = if pyramid.quantized { pyramid.params.quant_step } else { 1.0 };
    let mut planes = Vec::with_capacity(pyramid.channels);
    for c in 0..pyramid.channels {
        let mut spectra = vec![vec![0.0; n]; per_channel];
        let mut seen = vec![false; n];
        for sb in pyramid.subbands.iter().filter(|s| s.channel == c) {
            if sb.height != per_channel || sb.members.len() != sb.width {
                return Err(Error::Transform("subband does not match tile grid".into()));
            }
            for (t, spec) in spectra.iter_mut().enumerate() {
                for (k, &i) in sb.members.iter().enumerate() {
                    spec[i] = sb.coeffs[t * sb.width + k] * step;
                }
            }
            for &i in &sb.members {
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Transform("pyramid does not cover the full spectrum".into()));
        }
        let mut plane = vec![0.0; pyramid.width * pyramid.height];
        for (t, spec) in spectra.iter().enumerate() {
            let block = hartley.apply(spec);
            let (bx, by) = (t % cols, t / cols);
            for y in 0..tile {
                let iy = by * tile + y;
                if iy >= pyramid.height {
                    break;
                }
                for x in 0..tile {
                    let ix = bx * tile + x;
                    if ix < pyramid.width {
                        plane[iy * pyramid.width + ix] = block[y * tile + x];
                    }
                }
            }
        }
        planes.push(plane);
    }
    Ok(planes)
}

/// Synthesis rounded and clamped to 8-bit samples.
pub fn drt_inverse(pyramid: &CoefficientPyramid) -> Result<Image> {
    let planes = drt_inverse_float(pyramid)?;
    let mut image = Image::filled(pyramid.width, pyramid.height, pyramid.channels, 0)?;
    for (c, plane) in planes.iter().enumerate() {
        let bytes: Vec<u8> = plane.iter().map(|&v| to_u8(v)).collect();
        image.set_plane(c, &bytes);
    }
    Ok(image)
}

pub fn forward(image: &Image, params: &TransformParams) -> Result<CoefficientPyramid> {
    match params.kind {
        TransformKind::Iwt => iwt_forward(image, params.levels),
        TransformKind::Drt => drt_forward(image, params),
    }
}

pub fn inverse(pyramid: &CoefficientPyramid) -> Result<Image> {
    match pyramid.params.kind {
        TransformKind::Iwt => iwt_inverse(pyramid),
        TransformKind::Drt => drt_inverse(pyramid),
    }
}

/// Population variance (divides by the count).
pub fn population_variance(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// Index of the highest-variance class; ties go to the lowest index.
pub fn argmax_variance(values: &[f64], classes: &[Option<usize>], class_count: usize) -> usize {
    let mut best = (0usize, f64::NEG_INFINITY);
    for class in 0..class_count {
        let members: Vec<f64> = values
            .iter()
            .zip(classes)
            .filter(|(_, c)| **c == Some(class))
            .map(|(v, _)| *v)
            .collect();
        let var = population_variance(&members);
        if var > best.1 {
            best = (class, var);
        }
    }
    best.0
}

/// Chooses the dominant direction class of one block and the `v` strongest
/// coefficients in it, returned in increasing order of magnitude.
///
/// When the dominant class holds fewer than `v` coefficients the remainder is
/// drawn from the other classes in decreasing order of variance.
pub fn select_in_block(
    values: &[f64],
    classes: &[Option<usize>],
    class_count: usize,
    v: usize,
) -> Result<(usize, Vec<usize>)> {
    let available = classes.iter().filter(|c| c.is_some()).count();
    if v == 0 || v > available {
        return Err(Error::SelectionTooLarge { requested: v, available });
    }
    let mut ranked: Vec<(usize, f64)> = (0..class_count)
        .map(|class| {
            let members: Vec<f64> = values
                .iter()
                .zip(classes)
                .filter(|(_, c)| **c == Some(class))
                .map(|(x, _)| *x)
                .collect();
            (class, population_variance(&members))
        })
        .collect();
    // stable sort keeps the lower class first on ties
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let theta = ranked[0].0;
    let mut chosen = Vec::with_capacity(v);
    for &(class, _) in &ranked {
        let mut members: Vec<usize> = (0..values.len()).filter(|&i| classes[i] == Some(class)).collect();
        members.sort_by(|&a, &b| {
            values[b].abs().partial_cmp(&values[a].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        chosen.extend(members.into_iter().take(v - chosen.len()));
        if chosen.len() == v {
            break;
        }
    }
    chosen.sort_by(|&a, &b| {
        values[a].abs().partial_cmp(&values[b].abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    Ok((theta, chosen))
}

/// Per-block coefficient access for a pyramid: the block's coefficient
/// vector (in [`BlockCodec`] index order) plus the class map.
fn block_view(pyramid: &CoefficientPyramid, channel: usize, block: usize) -> Result<(Vec<f64>, Vec<Option<usize>>, usize)> {
    let (cols, rows) = pyramid.grid;
    if block >= cols * rows || channel >= pyramid.channels {
        return Err(Error::InvalidParam(format!("block {block} of channel {channel} out of range")));
    }
    let bs = pyramid.params.block_size;
    match pyramid.params.kind {
        TransformKind::Drt => {
            let layout = RippletLayout::new(bs, pyramid.params.levels, pyramid.params.support_c, pyramid.params.degree_d)?;
            let mut values = vec![0.0; bs * bs];
            for sb in pyramid.subbands.iter().filter(|s| s.channel == channel) {
                for (k, &i) in sb.members.iter().enumerate() {
                    values[i] = sb.coeffs[block * sb.width + k];
                }
            }
            let count = layout.class_count();
            Ok((values, layout.class, count))
        }
        TransformKind::Iwt => {
            // finest detail subbands, restricted to the block's footprint
            let finest = pyramid.params.levels;
            let half = bs / 2;
            let (bx, by) = (block % cols, block / cols);
            let mut values = Vec::new();
            let mut classes = Vec::new();
            for o in 0..3 {
                let sb = pyramid
                    .subband(channel, finest, o)
                    .ok_or_else(|| Error::Transform("missing finest detail subband".into()))?;
                for y in by * half..((by + 1) * half).min(sb.height) {
                    for x in bx * half..((bx + 1) * half).min(sb.width) {
                        values.push(sb.coeffs[y * sb.width + x]);
                        classes.push(Some(o));
                    }
                }
            }
            Ok((values, classes, 3))
        }
    }
}

/// Dominant orientation of block `block` (row-major block index) in `channel`.
pub fn select_orientation(pyramid: &CoefficientPyramid, channel: usize, block: usize) -> Result<usize> {
    let (values, classes, count) = block_view(pyramid, channel, block)?;
    Ok(argmax_variance(&values, &classes, count))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSelection {
    pub channel: usize,
    pub block: usize,
    pub theta: usize,
    /// Indices into the block's coefficient vector, increasing magnitude.
    pub indices: Vec<usize>,
    /// The selected coefficient values (`R_m`).
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCoeffs {
    pub per_block: usize,
    pub blocks: Vec<BlockSelection>,
}

impl SelectedCoeffs {
    /// Column-wise concatenation of every block's `R_m`.
    pub fn matrix(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.values.clone()).collect()
    }

    pub fn total(&self) -> usize {
        self.blocks.iter().map(|b| b.indices.len()).sum()
    }
}

pub fn build_selection(pyramid: &CoefficientPyramid, per_block: usize) -> Result<SelectedCoeffs> {
    let (cols, rows) = pyramid.grid;
    let mut blocks = Vec::with_capacity(cols * rows * pyramid.channels);
    for channel in 0..pyramid.channels {
        for block in 0..cols * rows {
            let (values, classes, count) = block_view(pyramid, channel, block)?;
            let (theta, indices) = select_in_block(&values, &classes, count, per_block)?;
            let picked = indices.iter().map(|&i| values[i]).collect();
            blocks.push(BlockSelection { channel, block, theta, indices, values: picked });
        }
    }
    Ok(SelectedCoeffs { per_block, blocks })
}

/// Forward/inverse transform of a single spatial block, as used by the embedder.
///
/// Coefficients are expressed in quantisation units: IWT coefficients are
/// integers already, ripplet coefficients are divided by `quant_step`.
#[derive(Debug, Clone)]
pub struct BlockCodec {
    pub params: TransformParams,
    classes: Vec<Option<usize>>,
    class_count: usize,
    /// Orthonormal basis scaled to quantisation units (DRT only).
    basis: Vec<f64>,
}

impl BlockCodec {
    pub fn new(params: TransformParams) -> Result<Self> {
        params.validate()?;
        let bs = params.block_size;
        match params.kind {
            TransformKind::Drt => {
                let layout = RippletLayout::new(bs, params.levels, params.support_c, params.degree_d)?;
                let basis = hartley_basis(bs);
                let class_count = layout.class_count();
                Ok(Self { params, classes: layout.class, class_count, basis })
            }
            TransformKind::Iwt => {
                let mut classes = vec![None; bs * bs];
                for r in iwt_regions(bs, bs, params.levels).iter().filter(|r| r.scale == params.levels) {
                    for y in r.y0..r.y0 + r.h {
                        for x in r.x0..r.x0 + r.w {
                            classes[y * bs + x] = Some(r.orientation);
                        }
                    }
                }
                Ok(Self { params, classes, class_count: 3, basis: Vec::new() })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.block_size * self.params.block_size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> &[Option<usize>] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn kind(&self) -> TransformKind {
        self.params.kind
    }

    /// Column of the synthesis operator for coefficient `i`, in pixel units
    /// per quantisation unit (DRT only).
    pub fn basis_row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.basis[i * n..(i + 1) * n]
    }

    pub fn forward(&self, block: &[f64]) -> Vec<f64> {
        let n = self.len();
        match self.params.kind {
            TransformKind::Iwt => {
                let mut plane: Vec<i32> = block.iter().map(|&v| v.round() as i32).collect();
                iwt::forward_2d(&mut plane, self.params.block_size, self.params.block_size, self.params.levels)
                    .expect("levels validated");
                plane.into_iter().map(f64::from).collect()
            }
            TransformKind::Drt => {
                let q = self.params.quant_step;
                (0..n)
                    .map(|i| self.basis_row(i).iter().zip(block).map(|(b, x)| b * x).sum::<f64>() / q)
                    .collect()
            }
        }
    }

    /// Inverse transform without rounding. IWT coefficients are rounded to integers first.
    pub fn inverse(&self, coeffs: &[f64]) -> Vec<f64> {
        let n = self.len();
        match self.params.kind {
            TransformKind::Iwt => {
                let mut plane: Vec<i32> = coeffs.iter().map(|&v| v.round() as i32).collect();
                iwt::inverse_2d(&mut plane, self.params.block_size, self.params.block_size, self.params.levels)
                    .expect("levels validated");
                plane.into_iter().map(f64::from).collect()
            }
            TransformKind::Drt => {
                let q = self.params.quant_step;
                let mut out = vec![0.0; n];
                for (i, &c) in coeffs.iter().enumerate() {
                    if c != 0.0 {
                        for (o, b) in out.iter_mut().zip(self.basis_row(i)) {
                            *o += b * c * q;
                        }
                    }
                }
                out
            }
        }
    }

    pub fn select(&self, coeffs: &[f64], per_block: usize) -> Result<(usize, Vec<usize>)> {
        select_in_block(coeffs, &self.classes, self.class_count, per_block)
    }

    /// Detail coefficients available for selection per block.
    pub fn selectable(&self) -> usize {
        self.classes.iter().filter(|c| c.is_some()).count()
    }
}

#[derive(Serialize)]
struct ManifestEntry {
    file: String,
    channel: usize,
    scale: usize,
    orientation: usize,
    angle_range: (f64, f64),
    width: usize,
    height: usize,
    quant_step: f64,
}

/// Writes one PGM per subband (magnitudes scaled to 0..255) and a `manifest.json`.
///
/// IWT subbands are drawn spatially; ripplet subbands as a tile-grid map of
/// per-tile RMS magnitude.
pub fn dump_pyramid(pyramid: &CoefficientPyramid, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = Vec::new();
    for sb in &pyramid.subbands {
        let (w, h, mags): (usize, usize, Vec<f64>) = match pyramid.params.kind {
            TransformKind::Iwt => (sb.width, sb.height, sb.coeffs.iter().map(|c| c.abs()).collect()),
            TransformKind::Drt => {
                let (cols, rows) = pyramid.grid;
                let mags = sb
                    .coeffs
                    .chunks(sb.width.max(1))
                    .map(|t| (t.iter().map(|c| c * c).sum::<f64>() / t.len().max(1) as f64).sqrt())
                    .collect();
                (cols, rows, mags)
            }
        };
        if w == 0 || h == 0 {
            continue;
        }
        let peak = mags.iter().cloned().fold(0.0, f64::max).max(1e-12);
        let data: Vec<u8> = mags.iter().map(|m| to_u8(m / peak * 255.0)).collect();
        let file = format!("subband_c{}_s{}_o{}.pgm", sb.channel, sb.scale, sb.orientation);
        let img = Image::new(w, h, 1, data).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(&file), crate::image::save_image(&img, crate::image::PnmFormat::Pgm).map_err(std::io::Error::other)?)?;
        manifest.push(ManifestEntry {
            file,
            channel: sb.channel,
            scale: sb.scale,
            orientation: sb.orientation,
            angle_range: sb.angle_range,
            width: sb.width,
            height: sb.height,
            quant_step: pyramid.params.quant_step,
        });
    }
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_convention() {
        assert!((population_variance(&[1.0, 2.0, 3.0]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn selection_sorting() {
        let values = [5.0, -9.0, 2.0, 7.0];
        let classes = [Some(0); 4];
        let (theta, idx) = select_in_block(&values, &classes, 1, 2).unwrap();
        assert_eq!(theta, 0);
        assert_eq!(idx, vec![3, 1]);
        let (_, idx) = select_in_block(&values, &classes, 1, 1).unwrap();
        assert_eq!(idx, vec![1]);
        assert!(matches!(select_in_block(&values, &classes, 1, 5), Err(Error::SelectionTooLarge { .. })));
    }

    #[test]
    fn tie_goes_to_lowest_orientation() {
        let values = [1.0, 2.0, 1.0, 2.0];
        let classes = [Some(0), Some(0), Some(1), Some(1)];
        assert_eq!(argmax_variance(&values, &classes, 2), 0);
        let (theta, _) = select_in_block(&values, &classes, 2, 2).unwrap();
        assert_eq!(theta, 0);
    }

    #[test]
    fn fill_from_next_class() {
        let values = [10.0, -10.0, 1.0, 2.0, 0.5];
        let classes = [Some(0), Some(0), Some(1), Some(1), Some(1)];
        let (theta, idx) = select_in_block(&values, &classes, 2, 3).unwrap();
        assert_eq!(theta, 0);
        assert_eq!(idx, vec![3, 0, 1]);
    }

    #[test]
    fn iwt_block_codec_classes() {
        let codec = BlockCodec::new(TransformParams::iwt()).unwrap();
        assert_eq!(codec.selectable(), 48);
        assert_eq!(codec.classes()[0], None);
        assert_eq!(codec.classes()[4 * 8], Some(0));
        assert_eq!(codec.classes()[4], Some(1));
        assert_eq!(codec.classes()[63], Some(2));
    }
}
