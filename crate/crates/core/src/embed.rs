//! Embedding and extraction pipeline.
//!
//! The cover is cut into 8×8 blocks. Each fully covered block is transformed,
//! its dominant direction class chosen, and the `V` strongest detail
//! coefficients of that class receive `k` payload bits each in the LSBs of
//! their quantised magnitude. Block order and slot order inside a block are
//! scrambled with a key-derived seed. Optionally the payload segments are
//! re-assigned to blocks inside 64-block windows by the adaptive GA, with the
//! mapping tables carried in a prelude ahead of the payload.
//!
//! Extraction is blind: the receiver repeats the selection on the stego
//! image, so the embedder verifies every block and strengthens the selected
//! coefficients (by multiples of `2^k`, which keeps their LSBs) until the
//! receiver's selection matches.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{self, Payload, RsaKey};
use crate::error::{Error, Result};
use crate::ga::{evolve, AgaParams, Genome};
use crate::image::{merge_blocks, split_blocks, BlockGrid, HistogramMap, Image};
use crate::metrics::{psnr, psnr_from_sse};
use crate::transform::{BlockCodec, TransformKind, TransformParams};

/// Blocks per mapping window.
pub const WINDOW: usize = 64;
const WINDOW_COUNT_BITS: usize = 16;
const MAP_ENTRY_BITS: usize = 6;
/// Maximum distance of a repaired ripplet coefficient from its target.
const REPAIR_TOLERANCE: f64 = 0.4;
/// Minimum separation of an additive-mode coefficient from its reference.
const SIDE_MARGIN: f64 = 0.25;
/// Ripplet targets only need to land this close to the integer magnitude.
const TARGET_SLACK: f64 = 0.35;
/// Weight of the distance from the cover when ranking repair moves.
const REPAIR_DRIFT_WEIGHT: f64 = 0.03;
const PAIR_CANDIDATES: usize = 24;
const MAX_VERIFY_ROUNDS: usize = 24;
const MAX_GUARD_PASSES: usize = 6;
const MAX_RETARGETS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedMode {
    /// k-LSB substitution in quantised coefficient magnitudes (blind).
    Lsb,
    /// Multiplicative spread `R + eta * S * R`, `S = +-1`; needs the cover to decode.
    Additive,
}

impl std::str::FromStr for EmbedMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lsb" => Ok(EmbedMode::Lsb),
            "additive" => Ok(EmbedMode::Additive),
            _ => Err(Error::InvalidParam(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedParams {
    pub k: u8,
    pub eta: f64,
    /// Coefficients per block.
    pub v: usize,
    pub mode: EmbedMode,
    pub transform: TransformParams,
    pub use_opap: bool,
    pub use_aga_mapping: bool,
    pub aga: AgaParams,
    /// Seeds the RSA padding.
    pub seed: u64,
}

impl Default for EmbedParams {
    fn default() -> Self {
        Self {
            k: 2,
            eta: 0.30,
            v: 16,
            mode: EmbedMode::Lsb,
            transform: TransformParams::drt(),
            use_opap: true,
            use_aga_mapping: false,
            aga: AgaParams::default(),
            seed: 0,
        }
    }
}

impl EmbedParams {
    pub fn for_transform(kind: TransformKind) -> Self {
        Self { transform: TransformParams::for_kind(kind), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=4).contains(&self.k) {
            return Err(Error::InvalidParam(format!("k = {} outside 1..=4", self.k)));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::InvalidParam(format!("eta = {} outside (0, 1)", self.eta)));
        }
        if self.v == 0 {
            return Err(Error::InvalidParam("V must be >= 1".into()));
        }
        self.transform.validate()?;
        self.aga.validate()?;
        let codec = BlockCodec::new(self.transform)?;
        if self.v > codec.selectable() {
            return Err(Error::SelectionTooLarge { requested: self.v, available: codec.selectable() });
        }
        if self.use_aga_mapping && self.v * self.k as usize * 64 < WINDOW_COUNT_BITS {
            return Err(Error::InvalidParam("segments too small for a mapping prelude".into()));
        }
        Ok(())
    }

    fn segment_bits(&self) -> usize {
        match self.mode {
            EmbedMode::Lsb => self.v * self.k as usize,
            EmbedMode::Additive => self.v,
        }
    }
}

/// Shared secret: one half of an RSA pair plus the scrambling seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StegoKey {
    pub rsa: RsaKey,
    pub seed: u64,
}

impl StegoKey {
    /// Seed derived from the modulus, so the public and private halves agree.
    pub fn new(rsa: RsaKey) -> Self {
        let seed = rsa.fingerprint();
        Self { rsa, seed }
    }

    pub fn with_seed(rsa: RsaKey, seed: u64) -> Self {
        Self { rsa, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedReport {
    pub transform: TransformKind,
    pub mode: EmbedMode,
    pub k: u8,
    pub v: usize,
    pub plaintext_bytes: usize,
    /// Framed payload plus mapping prelude.
    pub payload_bits: usize,
    pub capacity_bits: usize,
    pub payload_bpp: f64,
    pub blocks_used: usize,
    /// `None` stands for an infinite PSNR (no change).
    pub psnr_before_opap: Option<f64>,
    pub psnr_after_opap: Option<f64>,
    pub psnr_db: Option<f64>,
    pub psnr_infinite: bool,
    /// One permutation of `1..=64` per mapping window.
    pub mapping: Vec<Vec<u16>>,
    pub histogram_low_cut: u8,
    pub histogram_high_cut: u8,
    pub histogram_relocated: usize,
    pub guarded_blocks: usize,
}

fn finite(p: f64) -> Option<f64> {
    p.is_finite().then_some(p)
}

/// Optimal pixel adjustment for an 8-bit sample. `p` is the original value,
/// `p2` the value after k-LSB substitution.
pub fn opap_adjust(p: u8, p2: u8, k: u8) -> u8 {
    let (p, p2) = (p as i32, p2 as i32);
    let step = 1i32 << k;
    let half = step >> 1;
    let delta = p2 - p;
    let out = if delta > half && delta < step {
        if p2 >= step {
            p2 - step
        } else {
            p2
        }
    } else if delta < -half && delta > -step {
        if p2 < 256 - step {
            p2 + step
        } else {
            p2
        }
    } else {
        p2
    };
    out as u8
}

/// The same adjustment on a non-negative magnitude, which has no upper bound.
pub fn opap_magnitude(m: i64, m2: i64, k: u8) -> i64 {
    let step = 1i64 << k;
    let half = step >> 1;
    let delta = m2 - m;
    if delta > half && delta < step && m2 >= step {
        m2 - step
    } else if delta < -half && delta > -step {
        m2 + step
    } else {
        m2
    }
}

/// Multiplicative embedding of one sign per coefficient.
pub fn additive_embed_values(values: &[f64], signs: &[i8], eta: f64) -> Vec<f64> {
    values.iter().zip(signs).map(|(&r, &s)| r + eta * s as f64 * r).collect()
}

/// Sign with zero counted as positive.
fn sign_of(r: f64) -> f64 {
    if r < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Recovers signs by comparing received coefficients with the reference row.
/// Returns the hard signs `S` and the row weight `W`, the mean sign agreement
/// between the two rows; `W * S` is the confidence-weighted estimate.
pub fn additive_decode_values(received: &[f64], reference: &[f64]) -> (Vec<i8>, f64) {
    let usable: Vec<(f64, f64)> =
        received.iter().zip(reference).filter(|(_, &r)| r != 0.0).map(|(&a, &b)| (a, b)).collect();
    let w = if usable.is_empty() {
        0.0
    } else {
        usable.iter().map(|(a, b)| a.signum() * b.signum()).sum::<f64>() / usable.len() as f64
    };
    let signs = received
        .iter()
        .zip(reference)
        .map(|(&a, &r)| if (a - r) * sign_of(r) > 0.0 { 1 } else { -1 })
        .collect();
    (signs, w)
}

/// Payload capacity in bits.
pub fn capacity(image: &Image, params: &EmbedParams) -> Result<usize> {
    params.validate()?;
    Ok(usable_blocks(image, params.transform.block_size).len() * params.segment_bits())
}

/// Largest plaintext, in bytes, that fits when no block needs guarding.
pub fn max_plaintext_len(image: &Image, key: &RsaKey, params: &EmbedParams) -> Result<usize> {
    let bits = capacity(image, params)?;
    let n = usable_blocks(image, params.transform.block_size).len();
    let prelude = if params.use_aga_mapping && params.mode == EmbedMode::Lsb {
        Windows::plan(n, params.segment_bits()).prelude_blocks * params.segment_bits()
    } else {
        0
    };
    let bytes = bits.saturating_sub(prelude) / 8;
    let overhead = Payload::framed_len(0, &HistogramMap::default(), key);
    let blocks = bytes.saturating_sub(overhead) / key.block_bytes();
    Ok(blocks * key.data_per_block())
}

/// Blocks lying completely inside the image, as indices into `BlockGrid::blocks`.
fn usable_blocks(image: &Image, bs: usize) -> Vec<usize> {
    let (cols, rows) = (image.width().div_ceil(bs), image.height().div_ceil(bs));
    let (full_c, full_r) = (image.width() / bs, image.height() / bs);
    let mut out = Vec::new();
    for c in 0..image.channels() {
        for by in 0..full_r {
            for bx in 0..full_c {
                out.push(c * cols * rows + by * cols + bx);
            }
        }
    }
    out
}

/// Key-dependent layout shared by sender and receiver.
struct Layout {
    /// Usable block ids in embedding order.
    order: Vec<usize>,
    /// Per position in `order`: slot -> rank within the index-sorted selection.
    slots: Vec<Vec<usize>>,
}

impl Layout {
    fn new(image: &Image, key: &StegoKey, params: &EmbedParams) -> Self {
        let mut order = usable_blocks(image, params.transform.block_size);
        let mut rng = ChaCha8Rng::seed_from_u64(key.seed ^ 0x9e37_79b9_7f4a_7c15);
        order.shuffle(&mut rng);
        let slots = order
            .iter()
            .map(|&b| {
                let mut r = ChaCha8Rng::seed_from_u64(key.seed.rotate_left(17) ^ (b as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
                let mut p: Vec<usize> = (0..params.v).collect();
                p.shuffle(&mut r);
                p
            })
            .collect();
        Self { order, slots }
    }
}

/// Mapping window geometry for `n` blocks with `seg` bits each.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Windows {
    prelude_blocks: usize,
    count: usize,
}

impl Windows {
    fn plan(n: usize, seg: usize) -> Self {
        let prelude = |w: usize| (WINDOW_COUNT_BITS + w * WINDOW * MAP_ENTRY_BITS).div_ceil(seg);
        let mut w = n / WINDOW;
        while w > 0 && prelude(w) + w * WINDOW > n {
            w -= 1;
        }
        Self { prelude_blocks: prelude(w), count: w }
    }
}

fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1)).collect()
}

fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b) << (8 - c.len())).collect()
}

fn push_bits(out: &mut Vec<u8>, value: usize, width: usize) {
    out.extend((0..width).rev().map(|i| ((value >> i) & 1) as u8));
}

fn read_bits(bits: &[u8], pos: usize, width: usize) -> Option<usize> {
    bits.get(pos..pos + width).map(|s| s.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize))
}

/// Groups a bit stream into per-slot values of `k` bits; the tail is padded
/// with zeros and slots past the end are `None` (left untouched).
fn to_segments(bits: &[u8], segments: usize, v: usize, k: usize) -> Vec<Vec<Option<u8>>> {
    let mut out = vec![vec![None; v]; segments];
    for (s, chunk) in bits.chunks(k).enumerate() {
        let val = chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b) << (k - chunk.len());
        if let Some(slot) = out.get_mut(s / v).and_then(|seg| seg.get_mut(s % v)) {
            *slot = Some(val);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockFailure {
    Unstable,
    Repair,
}

/// Everything a single block embedding needs.
struct BlockEmbedder<'a> {
    codec: &'a BlockCodec,
    v: usize,
    k: u8,
    opap: bool,
}

/// Receiver view of a block: selected indices (ascending) and their LSB values.
fn read_block(codec: &BlockCodec, pixels: &[f64], v: usize, k: u8) -> Result<(Vec<usize>, Vec<u8>)> {
    let c = codec.forward(pixels);
    let (_, mut sel) = codec.select(&c, v)?;
    sel.sort_unstable();
    let mask = (1i64 << k) - 1;
    let vals = sel.iter().map(|&i| ((c[i].abs().round() as i64) & mask) as u8).collect();
    Ok((sel, vals))
}

impl BlockEmbedder<'_> {
    /// Embeds `slots` (indexed by slot, mapped through `order` to ranks in the
    /// sorted selection) into one block of integer pixels.
    fn embed(&self, cover: &[f64], slots: &[Option<u8>], order: &[usize]) -> std::result::Result<Vec<f64>, BlockFailure> {
        if slots.iter().all(Option::is_none) {
            return Ok(cover.to_vec());
        }
        let c = self.codec.forward(cover);
        let (theta, mut sel) = self.codec.select(&c, self.v).map_err(|_| BlockFailure::Unstable)?;
        sel.sort_unstable();
        let mask = (1i64 << self.k) - 1;
        let step = 1i64 << self.k;
        // target magnitude and sign per coefficient; `None` = unconstrained
        let mut target: Vec<Option<(i64, f64)>> = vec![None; c.len()];
        let mut wanted: Vec<(usize, Want)> = Vec::new();
        for (slot, value) in slots.iter().enumerate() {
            let Some(bits) = value else { continue };
            let i = sel[order[slot]];
            let m = c[i].abs().round() as i64;
            let sign = if c[i] < 0.0 { -1.0 } else { 1.0 };
            let mut m2 = (m & !mask) | *bits as i64;
            if self.opap {
                m2 = opap_magnitude(m, m2, self.k);
            }
            target[i] = Some((m2, sign));
            wanted.push((i, Want::Lsb(*bits)));
        }
        let mut retargets = 0;
        for _ in 0..MAX_VERIFY_ROUNDS {
            let ideal: Vec<Option<f64>> = target
                .iter()
                .zip(&c)
                .map(|(t, &ci)| {
                    t.map(|(m, s)| {
                        let m = m as f64;
                        if self.codec.kind() == TransformKind::Drt {
                            s * ci.abs().clamp((m - TARGET_SLACK).max(0.0), m + TARGET_SLACK)
                        } else {
                            s * m
                        }
                    })
                })
                .collect();
            let pixels = fit_range(self.synthesize(cover, &c, &ideal));
            let pixels = match self.repair(pixels, &wanted, cover) {
                Ok(p) => p,
                Err(stuck) => {
                    // move unreachable targets to the next magnitude with the same LSBs
                    retargets += 1;
                    if retargets > MAX_RETARGETS {
                        return Err(BlockFailure::Repair);
                    }
                    let now = self.codec.forward(&stuck);
                    for &(i, b) in &wanted {
                        if b.distance(now[i], self.k) > 0.0 {
                            let (m, s) = target[i].expect("wanted coefficients have targets");
                            let up = retargets % 2 == 1 || m < step;
                            target[i] = Some((if up { m + step } else { m - step }, s));
                        }
                    }
                    continue;
                }
            };
            let (sel2, _) = read_block(self.codec, &pixels, self.v, self.k).map_err(|_| BlockFailure::Unstable)?;
            if sel2 == sel {
                return Ok(pixels);
            }
            // strengthen selected coefficients the receiver would miss
            let now: BTreeSet<usize> = sel2.iter().copied().collect();
            let missing: Vec<usize> = sel.iter().copied().filter(|i| !now.contains(i)).collect();
            let c_now = self.codec.forward(&pixels);
            let boost: Vec<usize> = if missing.len() * 2 > self.v {
                // the dominant class moved; push the strongest member further
                let best = *sel
                    .iter()
                    .filter(|&&i| self.codec.classes()[i] == Some(theta))
                    .max_by(|&&a, &&b| c_now[a].abs().partial_cmp(&c_now[b].abs()).unwrap().then(b.cmp(&a)))
                    .expect("non-empty selection");
                vec![best]
            } else {
                missing
            };
            for i in boost {
                let (m, sign) = target[i].unwrap_or_else(|| {
                    let s = if c_now[i] < 0.0 { -1.0 } else { 1.0 };
                    (c_now[i].abs().round() as i64, s)
                });
                target[i] = Some((m + step, sign));
            }
        }
        Err(BlockFailure::Unstable)
    }

    /// Additive embedding of one sign per slot, repaired so that every
    /// coefficient stays on the signalled side of its cover value.
    fn embed_signs(&self, cover: &[f64], signs: &[i8], order: &[usize], eta: f64) -> std::result::Result<Vec<f64>, BlockFailure> {
        let c = self.codec.forward(cover);
        let (_, mut sel) = self.codec.select(&c, self.v).map_err(|_| BlockFailure::Unstable)?;
        sel.sort_unstable();
        let mut ideal = vec![None; c.len()];
        let mut wanted = Vec::with_capacity(signs.len());
        for (slot, &s) in signs.iter().enumerate() {
            let i = sel[order[slot]];
            let r = additive_embed_values(&[c[i]], &[s], eta)[0];
            ideal[i] = Some(if self.codec.kind() == TransformKind::Iwt { r.round() } else { r });
            wanted.push((i, Want::Side { reference: c[i], dir: s as f64 * sign_of(c[i]) }));
        }
        self.repair(fit_range(self.synthesize(cover, &c, &ideal)), &wanted, cover).map_err(|_| BlockFailure::Repair)
    }

    /// Unrounded pixels whose coefficients equal the targets.
    fn synthesize(&self, cover: &[f64], c: &[f64], target: &[Option<f64>]) -> Vec<f64> {
        match self.codec.kind() {
            TransformKind::Iwt => {
                let coeffs: Vec<f64> = c.iter().zip(target).map(|(&v, t)| t.unwrap_or(v)).collect();
                self.codec.inverse(&coeffs)
            }
            TransformKind::Drt => {
                let q = self.codec.params.quant_step;
                let mut x = cover.to_vec();
                for (i, t) in target.iter().enumerate() {
                    if let Some(t) = t {
                        let d = (t - c[i]) * q;
                        for (xp, b) in x.iter_mut().zip(self.codec.basis_row(i)) {
                            *xp += d * b;
                        }
                    }
                }
                x
            }
        }
    }

    /// Greedy pixel search until every wanted coefficient reads back its
    /// value with a safety margin. Among improving moves the one that also
    /// stays closest to `cover` wins; when no single move helps, pairs of the
    /// most promising single moves are tried.
    fn repair(&self, mut pixels: Vec<f64>, wanted: &[(usize, Want)], cover: &[f64]) -> std::result::Result<Vec<f64>, Vec<f64>> {
        let n = pixels.len();
        let w = wanted.len();
        let k = self.k;
        let drt = self.codec.kind() == TransformKind::Drt;
        let q = self.codec.params.quant_step;
        // pixel-major sensitivities of the wanted coefficients (DRT only)
        let sens: Vec<f64> = if drt {
            (0..n).flat_map(|p| wanted.iter().map(move |&(i, _)| self.codec.basis_row(i)[p] / q)).collect()
        } else {
            Vec::new()
        };
        let read = |px: &[f64]| -> Vec<f64> {
            let c = self.codec.forward(px);
            wanted.iter().map(|&(i, _)| c[i]).collect()
        };
        let miss = |vals: &[f64]| wanted.iter().zip(vals).map(|(&(_, want), &v)| want.distance(v, k)).sum::<f64>();
        let mut vals = read(&pixels);
        let mut total = miss(&vals);
        let drift = |px: &[f64], p: usize, d: f64| (px[p] + d - cover[p]).powi(2) - (px[p] - cover[p]).powi(2);
        let mut steps = 0;
        let mut singles: Vec<(f64, usize, f64)> = Vec::with_capacity(4 * n);
        while total > 0.0 {
            steps += 1;
            if steps > 4 * n {
                return Err(pixels);
            }
            singles.clear();
            let mut best: Option<(f64, usize, f64, f64)> = None;
            for p in 0..n {
                for d in [-1.0, 1.0, -2.0, 2.0] {
                    if !(0.0..=255.0).contains(&(pixels[p] + d)) {
                        continue;
                    }
                    let t = if drt {
                        let row = &sens[p * w..(p + 1) * w];
                        wanted.iter().zip(&vals).zip(row).map(|((&(_, want), &v), &g)| want.distance(v + d * g, k)).sum()
                    } else {
                        pixels[p] += d;
                        let t = miss(&read(&pixels));
                        pixels[p] -= d;
                        t
                    };
                    if d.abs() == 1.0 {
                        singles.push((t, p, d));
                    }
                    let score = t + REPAIR_DRIFT_WEIGHT * drift(&pixels, p, d);
                    if t < total - 1e-12 && best.is_none_or(|b| score < b.0) {
                        best = Some((score, p, d, t));
                    }
                }
            }
            let moves = match best {
                Some((_, p, d, _)) => vec![(p, d)],
                None => {
                    singles.sort_by(|a, b| a.0.total_cmp(&b.0));
                    singles.truncate(PAIR_CANDIDATES);
                    let mut best: Option<(f64, usize, f64, usize, f64)> = None;
                    for (x, &(_, a, da)) in singles.iter().enumerate() {
                        for &(_, b, db) in &singles[x + 1..] {
                            if a == b {
                                continue;
                            }
                            let t = if drt {
                                let (ra, rb) = (&sens[a * w..(a + 1) * w], &sens[b * w..(b + 1) * w]);
                                (0..w).map(|j| wanted[j].1.distance(vals[j] + da * ra[j] + db * rb[j], k)).sum()
                            } else {
                                pixels[a] += da;
                                pixels[b] += db;
                                let t = miss(&read(&pixels));
                                pixels[a] -= da;
                                pixels[b] -= db;
                                t
                            };
                            let score = t + REPAIR_DRIFT_WEIGHT * (drift(&pixels, a, da) + drift(&pixels, b, db));
                            if t < total - 1e-12 && best.is_none_or(|x| score < x.0) {
                                best = Some((score, a, da, b, db));
                            }
                        }
                    }
                    match best {
                        Some((_, a, da, b, db)) => vec![(a, da), (b, db)],
                        None => return Err(pixels),
                    }
                }
            };
            for (p, d) in moves {
                pixels[p] += d;
                if drt {
                    for (v, g) in vals.iter_mut().zip(&sens[p * w..(p + 1) * w]) {
                        *v += d * g;
                    }
                }
            }
            if !drt {
                vals = read(&pixels);
            }
            total = miss(&vals);
        }
        Ok(pixels)
    }
}

/// Rounds to integers, shifting the whole block (which only moves the DC
/// term) so that it fits in `[0, 255]` where the spread allows, then clamps.
fn fit_range(ideal: Vec<f64>) -> Vec<f64> {
    let (lo, hi) = ideal.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v.round()), h.max(v.round())));
    let shift = if lo < 0.0 && hi - lo <= 255.0 {
        -lo
    } else if hi > 255.0 && hi - lo <= 255.0 {
        255.0 - hi
    } else {
        0.0
    };
    ideal.iter().map(|v| (v.round() + shift).clamp(0.0, 255.0)).collect()
}

/// What a repaired coefficient must satisfy.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Want {
    /// Rounded magnitude ends in these bits.
    Lsb(u8),
    /// Lies on side `dir` of the reference value by at least `SIDE_MARGIN`.
    Side { reference: f64, dir: f64 },
}

impl Want {
    fn distance(self, c: f64, k: u8) -> f64 {
        match self {
            Want::Lsb(bits) => lsb_distance(c, bits, k),
            Want::Side { reference, dir } => {
                let short = (SIDE_MARGIN - dir * (c - reference)).max(0.0);
                short * short
            }
        }
    }
}

/// Squared distance from `|c|` to the nearest magnitude whose `k` LSBs are
/// `bits`, keeping `REPAIR_TOLERANCE` clear of the rounding boundaries.
fn lsb_distance(c: f64, bits: u8, k: u8) -> f64 {
    let a = c.abs();
    let step = (1i64 << k) as f64;
    let mut m = ((a - bits as f64) / step).round() * step + bits as f64;
    if m < 0.0 {
        m += step;
    }
    let excess = if m == 0.0 { a - REPAIR_TOLERANCE } else { (a - m).abs() - REPAIR_TOLERANCE };
    let d = excess.max(0.0);
    d * d
}

fn block_sse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Permutation (`1..=64`) assigning window segments to window blocks with
/// the highest window PSNR. `cost[j][b]` is the squared error of putting
/// segment `j` into block `b`.
pub fn aga_block_mapping(cost: &[Vec<f64>], params: &AgaParams) -> Result<Vec<u16>> {
    let n = cost.len();
    if n == 0 || cost.iter().any(|r| r.len() != n) || n > u16::MAX as usize {
        return Err(Error::InvalidParam("mapping cost matrix must be square and non-empty".into()));
    }
    let samples = n * 64;
    let fitness = |g: &Genome| {
        let p = g.as_permutation().expect("permutation genome");
        let sse: f64 = p.iter().enumerate().map(|(j, &b)| cost[j][b as usize - 1]).sum();
        psnr_from_sse(sse, samples)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut initial = vec![Genome::identity(n)];
    initial.extend((1..params.population_size).map(|_| Genome::random_permutation(n, &mut rng)));
    let evolved = evolve(initial, fitness, params)?;
    Ok(evolved.best.as_permutation().expect("permutation genome").to_vec())
}

struct Attempt {
    stego: Image,
    payload_bits: usize,
    mapping: Vec<Vec<u16>>,
    histogram: HistogramMap,
    guarded: usize,
}

fn grid_pixels(grid: &BlockGrid, id: usize) -> Vec<f64> {
    grid.blocks[id].iter().map(|&v| v as f64).collect()
}

/// Sample indices (interleaved) covered by block `id` of a grid.
fn block_samples(grid: &BlockGrid, id: usize) -> Vec<usize> {
    let per = grid.cols * grid.rows;
    let (c, local) = (id / per, id % per);
    let (bx, by) = (local % grid.cols, local / grid.cols);
    let bs = grid.block_size;
    let mut out = Vec::with_capacity(bs * bs);
    for y in 0..bs {
        for x in 0..bs {
            let (ix, iy) = (bx * bs + x, by * bs + y);
            if ix < grid.width && iy < grid.height {
                out.push((iy * grid.width + ix) * grid.channels + c);
            }
        }
    }
    out
}

fn lsb_attempt(cover: &Image, plaintext: &[u8], key: &StegoKey, params: &EmbedParams, opap: bool) -> Result<Attempt> {
    let codec = BlockCodec::new(params.transform)?;
    let layout = Layout::new(cover, key, params);
    let n = layout.order.len();
    let seg = params.segment_bits();
    let k = params.k as usize;
    let capacity = n * seg;
    let embedder = BlockEmbedder { codec: &codec, v: params.v, k: params.k, opap };
    let guard = 1u8 << params.k;
    let bs = params.transform.block_size;

    let mut guarded: BTreeSet<usize> = BTreeSet::new();
    for _ in 0..MAX_GUARD_PASSES {
        // narrow the histogram of guarded blocks only
        let mut base = cover.clone();
        let mut histogram = HistogramMap { low_cut: guard, high_cut: 255 - guard, relocated: Vec::new() };
        let cover_grid = split_blocks(cover, bs)?;
        for &id in &guarded {
            for s in block_samples(&cover_grid, id) {
                let v = cover.data()[s];
                if v < guard || v > 255 - guard {
                    histogram.relocated.push((s as u32, v));
                    base.data_mut()[s] = v.clamp(guard, 255 - guard);
                }
            }
        }
        histogram.relocated.sort_unstable();

        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let frame = crypto::seal(plaintext, histogram.clone(), &key.rsa, &mut rng)?.to_bytes();
        let body_bits = bytes_to_bits(&frame);
        let windows = if params.use_aga_mapping { Some(Windows::plan(n, seg)) } else { None };
        let prelude_blocks = windows.map_or(0, |w| w.prelude_blocks);
        let needed = prelude_blocks * seg + body_bits.len();
        if needed > capacity {
            return Err(Error::CapacityExceeded { needed, capacity });
        }
        let body_blocks = n - prelude_blocks;
        let body_segments = to_segments(&body_bits, body_blocks, params.v, k);

        let mut grid = split_blocks(&base, bs)?;
        let mut failed = Vec::new();
        let mut assignment: Vec<Vec<Option<u8>>> = vec![vec![None; params.v]; n];
        let mut mapping = Vec::new();
        if let Some(w) = windows {
            for (pos, s) in body_segments.iter().enumerate() {
                assignment[prelude_blocks + pos] = s.clone();
            }
            for win in 0..w.count {
                let start = prelude_blocks + win * WINDOW;
                let segs = &body_segments[win * WINDOW..(win + 1) * WINDOW];
                let perm = if segs.iter().all(|s| s.iter().all(Option::is_none)) {
                    (1..=WINDOW as u16).collect()
                } else {
                    let mut cost = vec![vec![0.0; WINDOW]; WINDOW];
                    for (j, s) in segs.iter().enumerate() {
                        for b in 0..WINDOW {
                            let id = layout.order[start + b];
                            let px = grid_pixels(&grid, id);
                            cost[j][b] = match embedder.embed(&px, s, &layout.slots[start + b]) {
                                Ok(out) => block_sse(&px, &out),
                                Err(_) => f64::INFINITY,
                            };
                        }
                    }
                    let aga = AgaParams { seed: params.aga.seed ^ (win as u64).wrapping_mul(0x9e37_79b9), ..params.aga };
                    aga_block_mapping(&cost, &aga)?
                };
                for (j, &b) in perm.iter().enumerate() {
                    assignment[start + b as usize - 1] = segs[j].clone();
                }
                mapping.push(perm);
            }
            let mut prelude = Vec::new();
            push_bits(&mut prelude, w.count, WINDOW_COUNT_BITS);
            for perm in &mapping {
                for &g in perm {
                    push_bits(&mut prelude, g as usize - 1, MAP_ENTRY_BITS);
                }
            }
            for (pos, s) in to_segments(&prelude, prelude_blocks, params.v, k).into_iter().enumerate() {
                assignment[pos] = s;
            }
        } else {
            assignment = body_segments;
        }

        for (pos, &id) in layout.order.iter().enumerate() {
            let px = grid_pixels(&grid, id);
            match embedder.embed(&px, &assignment[pos], &layout.slots[pos]) {
                Ok(out) => {
                    grid.blocks[id] = out.iter().map(|&v| v as u8).collect();
                }
                Err(_) => failed.push(id),
            }
        }
        if failed.is_empty() {
            let stego = merge_blocks(&grid)?;
            return Ok(Attempt { stego, payload_bits: needed, mapping, guarded: guarded.len(), histogram });
        }
        if failed.iter().all(|id| guarded.contains(id)) {
            return Err(Error::EmbedFailed(format!("{} block(s) cannot carry their bits", failed.len())));
        }
        guarded.extend(failed);
    }
    Err(Error::EmbedFailed("histogram guard did not converge".into()))
}

/// Hides `plaintext` in `cover`. In LSB mode, [`extract`] with the matching
/// private key returns the plaintext exactly.
pub fn embed(cover: &Image, plaintext: &[u8], key: &StegoKey, params: &EmbedParams) -> Result<(Image, EmbedReport)> {
    params.validate()?;
    let capacity_bits = capacity(cover, params)?;
    let mut report = EmbedReport {
        transform: params.transform.kind,
        mode: params.mode,
        k: params.k,
        v: params.v,
        plaintext_bytes: plaintext.len(),
        payload_bits: 0,
        capacity_bits,
        payload_bpp: 0.0,
        blocks_used: 0,
        psnr_before_opap: None,
        psnr_after_opap: None,
        psnr_db: None,
        psnr_infinite: true,
        mapping: Vec::new(),
        histogram_low_cut: 1 << params.k,
        histogram_high_cut: 255 - (1u8 << params.k),
        histogram_relocated: 0,
        guarded_blocks: 0,
    };
    if plaintext.is_empty() {
        return Ok((cover.clone(), report));
    }
    if params.mode == EmbedMode::Additive {
        return embed_additive(cover, plaintext, key, params, report);
    }
    let plain = lsb_attempt(cover, plaintext, key, params, false)?;
    let adjusted = lsb_attempt(cover, plaintext, key, params, true)?;
    report.psnr_before_opap = finite(psnr(cover, &plain.stego)?);
    report.psnr_after_opap = finite(psnr(cover, &adjusted.stego)?);
    let chosen = if params.use_opap { adjusted } else { plain };
    let p = psnr(cover, &chosen.stego)?;
    report.psnr_db = finite(p);
    report.psnr_infinite = p.is_infinite();
    report.payload_bits = chosen.payload_bits;
    report.payload_bpp = chosen.payload_bits as f64 / (cover.width() * cover.height()) as f64;
    report.blocks_used = chosen.payload_bits.div_ceil(params.segment_bits());
    report.mapping = chosen.mapping;
    report.histogram_relocated = chosen.histogram.relocated.len();
    report.guarded_blocks = chosen.guarded;
    Ok((chosen.stego, report))
}

/// Reads every usable block's slot values in embedding order.
fn read_stream(stego: &Image, key: &StegoKey, params: &EmbedParams) -> Result<Vec<Vec<u8>>> {
    let codec = BlockCodec::new(params.transform)?;
    let layout = Layout::new(stego, key, params);
    let grid = split_blocks(stego, params.transform.block_size)?;
    layout
        .order
        .iter()
        .zip(&layout.slots)
        .map(|(&id, order)| {
            let (_, vals) = read_block(&codec, &grid_pixels(&grid, id), params.v, params.k)?;
            Ok(order.iter().map(|&r| vals[r]).collect())
        })
        .collect()
}

fn segments_to_bits(segments: &[Vec<u8>], k: usize) -> Vec<u8> {
    let mut bits = Vec::with_capacity(segments.len() * segments.first().map_or(0, Vec::len) * k);
    for s in segments {
        for &v in s {
            push_bits(&mut bits, v as usize, k);
        }
    }
    bits
}

/// Recovers the framed payload and the plaintext from a stego image.
pub fn extract_payload(stego: &Image, key: &StegoKey, params: &EmbedParams) -> Result<(Vec<u8>, Payload)> {
    params.validate()?;
    if params.mode == EmbedMode::Additive {
        return Err(Error::InvalidParam("additive mode needs the cover; use extract_additive".into()));
    }
    let k = params.k as usize;
    let stream = read_stream(stego, key, params)?;
    let n = stream.len();
    let seg = params.segment_bits();
    let bits = if params.use_aga_mapping {
        let w = Windows::plan(n, seg);
        let prelude = segments_to_bits(&stream[..w.prelude_blocks.min(n)], k);
        let count = read_bits(&prelude, 0, WINDOW_COUNT_BITS).ok_or(Error::NoPayload)?;
        if count != w.count {
            return Err(Error::NoPayload);
        }
        let mut body: Vec<Vec<u8>> = stream[w.prelude_blocks..].to_vec();
        for win in 0..w.count {
            let base = WINDOW_COUNT_BITS + win * WINDOW * MAP_ENTRY_BITS;
            let perm: Vec<u16> = (0..WINDOW)
                .map(|j| read_bits(&prelude, base + j * MAP_ENTRY_BITS, MAP_ENTRY_BITS).map(|v| v as u16 + 1))
                .collect::<Option<_>>()
                .ok_or(Error::NoPayload)?;
            if !crate::ga::is_permutation(&perm) {
                return Err(Error::NoPayload);
            }
            let start = win * WINDOW;
            let blocks: Vec<Vec<u8>> = body[start..start + WINDOW].to_vec();
            for (j, &b) in perm.iter().enumerate() {
                body[start + j] = blocks[b as usize - 1].clone();
            }
        }
        segments_to_bits(&body, k)
    } else {
        segments_to_bits(&stream, k)
    };
    let bytes = bits_to_bytes(&bits);
    let (payload, _) = Payload::parse(&bytes, &key.rsa)?;
    let plain = crypto::open(&payload, &key.rsa)?;
    Ok((plain, payload))
}

pub fn extract(stego: &Image, key: &StegoKey, params: &EmbedParams) -> Result<Vec<u8>> {
    extract_payload(stego, key, params).map(|(p, _)| p)
}

fn embed_additive(
    cover: &Image,
    plaintext: &[u8],
    key: &StegoKey,
    params: &EmbedParams,
    mut report: EmbedReport,
) -> Result<(Image, EmbedReport)> {
    let codec = BlockCodec::new(params.transform)?;
    let layout = Layout::new(cover, key, params);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let frame = crypto::seal(plaintext, HistogramMap::default(), &key.rsa, &mut rng)?.to_bytes();
    let bits = bytes_to_bits(&frame);
    let capacity = layout.order.len() * params.v;
    if bits.len() > capacity {
        return Err(Error::CapacityExceeded { needed: bits.len(), capacity });
    }
    let mut grid = split_blocks(cover, params.transform.block_size)?;
    let embedder = BlockEmbedder { codec: &codec, v: params.v, k: params.k, opap: false };
    for (pos, chunk) in bits.chunks(params.v).enumerate() {
        let id = layout.order[pos];
        let signs: Vec<i8> = chunk.iter().map(|&b| if b == 1 { 1 } else { -1 }).collect();
        let out = embedder
            .embed_signs(&grid_pixels(&grid, id), &signs, &layout.slots[pos], params.eta)
            .map_err(|f| Error::EmbedFailed(format!("block {id}: {f:?}")))?;
        grid.blocks[id] = out.iter().map(|&v| v as u8).collect();
    }
    let stego = merge_blocks(&grid)?;
    let p = psnr(cover, &stego)?;
    report.psnr_db = finite(p);
    report.psnr_infinite = p.is_infinite();
    report.payload_bits = bits.len();
    report.payload_bpp = bits.len() as f64 / (cover.width() * cover.height()) as f64;
    report.blocks_used = bits.len().div_ceil(params.v);
    Ok((stego, report))
}

/// Non-blind decoding of an additive-mode stego image against its cover.
/// Returns the plaintext (when the frame survives) and the mean row weight.
pub fn extract_additive(stego: &Image, cover: &Image, key: &StegoKey, params: &EmbedParams) -> Result<(Vec<u8>, f64)> {
    params.validate()?;
    if !stego.same_shape(cover) {
        return Err(Error::DimensionMismatch("stego and cover differ in shape".into()));
    }
    let codec = BlockCodec::new(params.transform)?;
    let layout = Layout::new(cover, key, params);
    let (cg, sg) = (split_blocks(cover, params.transform.block_size)?, split_blocks(stego, params.transform.block_size)?);
    let mut bits = Vec::with_capacity(layout.order.len() * params.v);
    let mut weights = 0.0;
    for (pos, &id) in layout.order.iter().enumerate() {
        let rc = codec.forward(&grid_pixels(&cg, id));
        let rs = codec.forward(&grid_pixels(&sg, id));
        let (_, mut sel) = codec.select(&rc, params.v)?;
        sel.sort_unstable();
        let idx: Vec<usize> = layout.slots[pos].iter().map(|&r| sel[r]).collect();
        let reference: Vec<f64> = idx.iter().map(|&i| rc[i]).collect();
        let received: Vec<f64> = idx.iter().map(|&i| rs[i]).collect();
        let (signs, w) = additive_decode_values(&received, &reference);
        weights += w;
        bits.extend(signs.iter().map(|&s| u8::from(s > 0)));
    }
    let bytes = bits_to_bytes(&bits);
    let (payload, _) = Payload::parse(&bytes, &key.rsa)?;
    let plain = crypto::open(&payload, &key.rsa)?;
    Ok((plain, weights / layout.order.len().max(1) as f64))
}

/// Block-level and image-level integrity checks for a payload already
/// embedded in an image. Used to reject post-processing that would break it.
pub struct PayloadGuard {
    codec: BlockCodec,
    params: EmbedParams,
    key: StegoKey,
    plaintext: Vec<u8>,
    block_size: usize,
    /// Receiver view per grid block id; `None` for blocks that carry nothing.
    signatures: Vec<Option<(Vec<usize>, Vec<u8>)>>,
}

impl PayloadGuard {
    /// Fails with the extraction error when `stego` does not carry a payload for `key`.
    pub fn new(stego: &Image, key: &StegoKey, params: &EmbedParams) -> Result<Self> {
        let (plaintext, payload) = extract_payload(stego, key, params)?;
        let codec = BlockCodec::new(params.transform)?;
        let bs = params.transform.block_size;
        let grid = split_blocks(stego, bs)?;
        let layout = Layout::new(stego, key, params);
        let n = layout.order.len();
        let seg = params.segment_bits();
        let used = (payload.to_bytes().len() * 8).div_ceil(seg);
        let carrying: Vec<usize> = if params.use_aga_mapping {
            let w = Windows::plan(n, seg);
            let mapped = (used.div_ceil(WINDOW) * WINDOW).min(w.count * WINDOW);
            (0..(w.prelude_blocks + mapped.max(used)).min(n)).collect()
        } else {
            (0..used.min(n)).collect()
        };
        let mut signatures = vec![None; grid.blocks.len()];
        for pos in carrying {
            let id = layout.order[pos];
            signatures[id] = Some(read_block(&codec, &grid_pixels(&grid, id), params.v, params.k)?);
        }
        Ok(Self { codec, params: params.clone(), key: key.clone(), plaintext, block_size: bs, signatures })
    }

    /// Grid block ids whose content the payload depends on.
    pub fn protected_blocks(&self) -> Vec<usize> {
        self.signatures.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(i, _)| i).collect()
    }

    pub fn plaintext(&self) -> &[u8] {
        &self.plaintext
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Whether replacing grid block `id` with `pixels` keeps what the receiver reads from it.
    pub fn block_ok(&self, id: usize, pixels: &[u8]) -> bool {
        match self.signatures.get(id) {
            Some(Some(sig)) => {
                let px: Vec<f64> = pixels.iter().map(|&v| v as f64).collect();
                read_block(&self.codec, &px, self.params.v, self.params.k).is_ok_and(|s| &s == sig)
            }
            _ => true,
        }
    }

    pub fn image_ok(&self, image: &Image) -> bool {
        extract(image, &self.key, &self.params).is_ok_and(|p| p == self.plaintext)
    }
}
