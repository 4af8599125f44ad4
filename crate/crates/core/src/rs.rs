//! RS steganalysis and the RS shield.
//!
//! Pixels are split into disjoint groups of `n` consecutive samples (row-major,
//! per channel). A group is regular when a masked flip raises its smoothness
//! and singular when it lowers it. On clean images the statistics under a
//! mask `M` and its negation `-M` agree; LSB embedding pulls them apart.
//!
//! The shield walks the 8×8 blocks that are regular under negative flipping
//! and, triple by triple, flips second-lowest bits chosen by the adaptive GA
//! until those blocks turn singular, never touching what the payload needs.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::PayloadGuard;
use crate::error::{Error, Result};
use crate::ga::{evolve, AgaParams, Genome};
use crate::image::{merge_blocks, split_blocks, Image};
use crate::metrics::{psnr, psnr_from_sse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlipKind {
    Positive,
    Negative,
    Zero,
}

/// LSB flipping on the extended range `[-1, 256]`.
pub fn flip(x: i32, kind: FlipKind) -> i32 {
    match kind {
        FlipKind::Zero => x,
        FlipKind::Positive => x ^ 1,
        FlipKind::Negative => ((x + 1) ^ 1) - 1,
    }
}

/// Sum of absolute differences between neighbours.
pub fn smoothness(group: &[i32]) -> Result<u64> {
    if group.len() < 2 {
        return Err(Error::InvalidParam("smoothness needs at least two samples".into()));
    }
    Ok(group.windows(2).map(|w| (w[0] - w[1]).unsigned_abs() as u64).sum())
}

fn smoothness_unchecked(group: &[i32]) -> u64 {
    group.windows(2).map(|w| (w[0] - w[1]).unsigned_abs() as u64).sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlipMask(Vec<i8>);

impl FlipMask {
    pub fn new(values: Vec<i8>) -> Result<Self> {
        if values.iter().any(|v| !(-1..=1).contains(v)) {
            return Err(Error::InvalidParam("mask values must be -1, 0 or 1".into()));
        }
        Ok(Self(values))
    }

    /// Random non-negative mask with at least one flipped position.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        loop {
            let v: Vec<i8> = (0..n).map(|_| rng.gen_range(0..=1)).collect();
            if v.contains(&1) {
                return Self(v);
            }
        }
    }

    pub fn values(&self) -> &[i8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    pub fn is_non_negative(&self) -> bool {
        self.0.iter().all(|&v| v >= 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupClass {
    Regular,
    Singular,
    Unusable,
}

fn kind_of(m: i8) -> FlipKind {
    match m {
        1 => FlipKind::Positive,
        -1 => FlipKind::Negative,
        _ => FlipKind::Zero,
    }
}

fn classify_unchecked(group: &[i32], mask: &[i8], scratch: &mut Vec<i32>) -> GroupClass {
    scratch.clear();
    scratch.extend(group.iter().zip(mask).map(|(&x, &m)| flip(x, kind_of(m))));
    let (before, after) = (smoothness_unchecked(group), smoothness_unchecked(scratch));
    match after.cmp(&before) {
        std::cmp::Ordering::Greater => GroupClass::Regular,
        std::cmp::Ordering::Less => GroupClass::Singular,
        std::cmp::Ordering::Equal => GroupClass::Unusable,
    }
}

pub fn classify_group(group: &[i32], mask: &FlipMask) -> Result<GroupClass> {
    if group.len() != mask.len() {
        return Err(Error::LengthMismatch(group.len(), mask.len()));
    }
    if group.len() < 2 {
        return Err(Error::InvalidParam("groups need at least two samples".into()));
    }
    Ok(classify_unchecked(group, &mask.0, &mut Vec::with_capacity(group.len())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsStats {
    pub rm: f64,
    pub sm: f64,
    pub r_neg: f64,
    pub s_neg: f64,
}

impl RsStats {
    pub fn dr(&self) -> f64 {
        self.rm - self.r_neg
    }

    pub fn ds(&self) -> f64 {
        self.sm - self.s_neg
    }

    pub fn d(&self) -> f64 {
        self.dr().abs() + self.ds().abs()
    }

    /// `|dR|` relative to `R_m`.
    pub fn relative_dr(&self) -> f64 {
        relative(self.dr(), self.rm)
    }

    /// `|dS|` relative to `S_m`.
    pub fn relative_ds(&self) -> f64 {
        relative(self.ds(), self.sm)
    }
}

fn relative(diff: f64, base: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff.abs() / base.abs().max(RELATIVE_FLOOR)
    }
}

/// Smallest denominator used for relative differences.
const RELATIVE_FLOOR: f64 = 0.01;

/// All samples of each channel as `i32`, in row-major order.
fn planes(image: &Image) -> Vec<Vec<i32>> {
    (0..image.channels()).map(|c| image.plane(c).into_iter().map(i32::from).collect()).collect()
}

/// Counts regular and singular groups under `M` and `-M`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Counts {
    r_pos: usize,
    s_pos: usize,
    r_neg: usize,
    s_neg: usize,
}

impl Counts {
    fn add(&mut self, pos: GroupClass, neg: GroupClass, sign: isize) {
        let bump = |c: &mut usize| *c = c.wrapping_add_signed(sign);
        match pos {
            GroupClass::Regular => bump(&mut self.r_pos),
            GroupClass::Singular => bump(&mut self.s_pos),
            GroupClass::Unusable => {}
        }
        match neg {
            GroupClass::Regular => bump(&mut self.r_neg),
            GroupClass::Singular => bump(&mut self.s_neg),
            GroupClass::Unusable => {}
        }
    }

    fn stats(&self, groups: usize) -> RsStats {
        let g = groups.max(1) as f64;
        RsStats { rm: self.r_pos as f64 / g, sm: self.s_pos as f64 / g, r_neg: self.r_neg as f64 / g, s_neg: self.s_neg as f64 / g }
    }
}

fn group_count(image: &Image, n: usize) -> usize {
    image.channels() * (image.pixel_count() / n)
}

/// RS statistics for one non-negative mask over all disjoint groups.
pub fn rs_statistics(image: &Image, mask: &FlipMask, n: usize) -> Result<RsStats> {
    if n < 2 || mask.len() != n {
        return Err(Error::InvalidParam(format!("group size {n} with a mask of length {}", mask.len())));
    }
    if !mask.is_non_negative() {
        return Err(Error::InvalidParam("rs_statistics takes a non-negative mask".into()));
    }
    if image.pixel_count() < n {
        return Err(Error::InvalidImage(format!("image smaller than one group of {n}")));
    }
    let neg = mask.negated();
    let mut counts = Counts::default();
    let mut scratch = Vec::with_capacity(n);
    for plane in planes(image) {
        for g in plane.chunks_exact(n) {
            counts.add(classify_unchecked(g, &mask.0, &mut scratch), classify_unchecked(g, &neg.0, &mut scratch), 1);
        }
    }
    Ok(counts.stats(group_count(image, n)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsParams {
    pub group_size: usize,
    pub masks: usize,
    pub seed: u64,
}

impl Default for RsParams {
    fn default() -> Self {
        Self { group_size: 4, masks: 10, seed: 0x5253 }
    }
}

impl RsParams {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 || self.masks == 0 {
            return Err(Error::InvalidParam("RS needs groups of >= 2 and at least one mask".into()));
        }
        Ok(())
    }

    pub fn masks(&self) -> Vec<FlipMask> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.masks).map(|_| FlipMask::random(self.group_size, &mut rng)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskReport {
    pub mask: Vec<i8>,
    pub rm: f64,
    pub sm: f64,
    pub r_neg: f64,
    pub s_neg: f64,
    pub d: f64,
}

/// Averaged RS statistics over the seeded masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsReport {
    pub rm: f64,
    pub sm: f64,
    pub r_neg: f64,
    pub s_neg: f64,
    pub d_statistic: f64,
    pub per_mask: Vec<MaskReport>,
}

impl RsReport {
    pub fn stats(&self) -> RsStats {
        RsStats { rm: self.rm, sm: self.sm, r_neg: self.r_neg, s_neg: self.s_neg }
    }

    pub fn relative_dr(&self) -> f64 {
        self.stats().relative_dr()
    }

    pub fn relative_ds(&self) -> f64 {
        self.stats().relative_ds()
    }

    fn from_stats(masks: &[FlipMask], stats: &[RsStats]) -> Self {
        let k = stats.len().max(1) as f64;
        let avg = |f: fn(&RsStats) -> f64| stats.iter().map(f).sum::<f64>() / k;
        Self {
            rm: avg(|s| s.rm),
            sm: avg(|s| s.sm),
            r_neg: avg(|s| s.r_neg),
            s_neg: avg(|s| s.s_neg),
            d_statistic: avg(RsStats::d),
            per_mask: masks
                .iter()
                .zip(stats)
                .map(|(m, s)| MaskReport { mask: m.0.clone(), rm: s.rm, sm: s.sm, r_neg: s.r_neg, s_neg: s.s_neg, d: s.d() })
                .collect(),
        }
    }
}

pub fn analyze(image: &Image, params: &RsParams) -> Result<RsReport> {
    params.validate()?;
    let masks = params.masks();
    let stats = masks.iter().map(|m| rs_statistics(image, m, params.group_size)).collect::<Result<Vec<_>>>()?;
    Ok(RsReport::from_stats(&masks, &stats))
}

/// `|dR| + |dS|` averaged over the seeded masks.
pub fn detect(image: &Image, params: &RsParams) -> Result<f64> {
    analyze(image, params).map(|r| r.d_statistic)
}

/// Group classes for every mask, kept up to date as pixels change.
struct RsTracker {
    n: usize,
    width: usize,
    channels: usize,
    masks: Vec<(FlipMask, FlipMask)>,
    planes: Vec<Vec<i32>>,
    /// `[mask][channel * groups_per_plane + group]`
    classes: Vec<Vec<(GroupClass, GroupClass)>>,
    counts: Vec<Counts>,
    groups: usize,
}

impl RsTracker {
    fn new(image: &Image, params: &RsParams) -> Result<Self> {
        params.validate()?;
        let n = params.group_size;
        if image.pixel_count() < n {
            return Err(Error::InvalidImage(format!("image smaller than one group of {n}")));
        }
        let masks: Vec<(FlipMask, FlipMask)> = params.masks().into_iter().map(|m| (m.negated(), m)).map(|(neg, m)| (m, neg)).collect();
        let planes = planes(image);
        let per_plane = image.pixel_count() / n;
        let mut scratch = Vec::with_capacity(n);
        let mut classes = Vec::with_capacity(masks.len());
        let mut counts = Vec::with_capacity(masks.len());
        for (pos, neg) in &masks {
            let mut cls = Vec::with_capacity(per_plane * planes.len());
            let mut cnt = Counts::default();
            for plane in &planes {
                for g in plane.chunks_exact(n) {
                    let c = (classify_unchecked(g, &pos.0, &mut scratch), classify_unchecked(g, &neg.0, &mut scratch));
                    cnt.add(c.0, c.1, 1);
                    cls.push(c);
                }
            }
            classes.push(cls);
            counts.push(cnt);
        }
        Ok(Self {
            n,
            width: image.width(),
            channels: image.channels(),
            masks,
            planes,
            classes,
            counts,
            groups: group_count(image, n),
        })
    }

    /// Writes a block (top-left `x0, y0`, side `bs`) of channel `c` and refreshes its groups.
    fn set_block(&mut self, c: usize, x0: usize, y0: usize, bs: usize, pixels: &[u8]) {
        let per_plane = self.planes[c].len() / self.n;
        let mut touched = Vec::with_capacity(bs * bs / self.n + bs);
        for y in 0..bs {
            for x in 0..bs {
                let i = (y0 + y) * self.width + x0 + x;
                self.planes[c][i] = pixels[y * bs + x] as i32;
                let g = i / self.n;
                if g < per_plane && touched.last() != Some(&g) {
                    touched.push(g);
                }
            }
        }
        touched.dedup();
        let mut scratch = Vec::with_capacity(self.n);
        for (m, (pos, neg)) in self.masks.iter().enumerate() {
            for &g in &touched {
                let slot = c * per_plane + g;
                let old = self.classes[m][slot];
                let samples = &self.planes[c][g * self.n..(g + 1) * self.n];
                let new = (classify_unchecked(samples, &pos.0, &mut scratch), classify_unchecked(samples, &neg.0, &mut scratch));
                if new != old {
                    self.counts[m].add(old.0, old.1, -1);
                    self.counts[m].add(new.0, new.1, 1);
                    self.classes[m][slot] = new;
                }
            }
        }
        debug_assert!(c < self.channels);
    }

    fn report(&self) -> RsReport {
        let masks: Vec<FlipMask> = self.masks.iter().map(|(m, _)| m.clone()).collect();
        let stats: Vec<RsStats> = self.counts.iter().map(|c| c.stats(self.groups)).collect();
        RsReport::from_stats(&masks, &stats)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignLabel {
    Regular,
    Singular,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockGroup {
    /// Regular under both flips.
    RPlusRMinus,
    RPlusSMinus,
    SPlusRMinus,
    SPlusSMinus,
    Excluded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLabelCounts {
    pub p_plus_r: u32,
    pub p_plus_s: u32,
    pub p_minus_r: u32,
    pub p_minus_s: u32,
    pub plus: SignLabel,
    pub minus: SignLabel,
    pub group: BlockGroup,
}

fn ratio_label(r: u32, s: u32, th: f64) -> SignLabel {
    // strict ratio test; a zero denominator counts as an infinite ratio
    if r > 0 && r as f64 > th * s as f64 {
        SignLabel::Regular
    } else if s > 0 && s as f64 > th * r as f64 {
        SignLabel::Singular
    } else {
        SignLabel::None
    }
}

impl BlockLabelCounts {
    pub fn from_counts(p_plus_r: u32, p_plus_s: u32, p_minus_r: u32, p_minus_s: u32, th: f64) -> Self {
        let plus = ratio_label(p_plus_r, p_plus_s, th);
        let minus = ratio_label(p_minus_r, p_minus_s, th);
        let group = match (plus, minus) {
            (SignLabel::Regular, SignLabel::Regular) => BlockGroup::RPlusRMinus,
            (SignLabel::Regular, SignLabel::Singular) => BlockGroup::RPlusSMinus,
            (SignLabel::Singular, SignLabel::Regular) => BlockGroup::SPlusRMinus,
            (SignLabel::Singular, SignLabel::Singular) => BlockGroup::SPlusSMinus,
            _ => BlockGroup::Excluded,
        };
        Self { p_plus_r, p_plus_s, p_minus_r, p_minus_s, plus, minus, group }
    }

    /// Regular under negative flipping, the blocks the shield works on.
    pub fn is_target(&self) -> bool {
        self.minus == SignLabel::Regular
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldParams {
    /// Label threshold on the regular/singular count ratio.
    pub th: f64,
    /// Weight of the security term in the fitness.
    pub alpha: f64,
    /// Random mask trials per block.
    pub trials: usize,
    /// Target for relative `|dR|` and `|dS|`.
    pub stop_ratio: f64,
    pub block_size: usize,
    pub rs: RsParams,
    /// GA budget per pixel triple.
    pub ga: AgaParams,
    pub seed: u64,
}

impl Default for ShieldParams {
    fn default() -> Self {
        Self {
            th: 1.8,
            alpha: 25.0,
            trials: 50,
            stop_ratio: 0.05,
            block_size: 8,
            rs: RsParams::default(),
            ga: AgaParams { population_size: 8, max_generations: 4, elitism_count: 1, ..AgaParams::default() },
            seed: 0x5348,
        }
    }
}

impl ShieldParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.th > 1.0) {
            return Err(Error::InvalidParam(format!("Th = {} must exceed 1", self.th)));
        }
        if !(self.stop_ratio > 0.0 && self.stop_ratio <= 1.0) {
            return Err(Error::InvalidParam(format!("stop ratio {} outside (0, 1]", self.stop_ratio)));
        }
        if self.trials == 0 || self.block_size < 2 || !self.alpha.is_finite() {
            return Err(Error::InvalidParam("shield needs trials >= 1, blocks >= 2 and a finite alpha".into()));
        }
        self.rs.validate()?;
        self.ga.validate()
    }

    fn trial_masks(&self) -> Vec<FlipMask> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.trials).map(|_| FlipMask::random(self.block_size * self.block_size, &mut rng)).collect()
    }
}

/// Counts `(P+R, P+S, P-R, P-S)` for one block over the trial masks.
fn block_counts(block: &[i32], masks: &[(FlipMask, FlipMask)], scratch: &mut Vec<i32>) -> (u32, u32, u32, u32) {
    let mut c = (0, 0, 0, 0);
    for (pos, neg) in masks {
        match classify_unchecked(block, &pos.0, scratch) {
            GroupClass::Regular => c.0 += 1,
            GroupClass::Singular => c.1 += 1,
            GroupClass::Unusable => {}
        }
        match classify_unchecked(block, &neg.0, scratch) {
            GroupClass::Regular => c.2 += 1,
            GroupClass::Singular => c.3 += 1,
            GroupClass::Unusable => {}
        }
    }
    c
}

fn paired(masks: Vec<FlipMask>) -> Vec<(FlipMask, FlipMask)> {
    masks.into_iter().map(|m| { let n = m.negated(); (m, n) }).collect()
}

/// Labels every block of the grid (channel-major, row-major). Blocks cut by
/// the image border are excluded.
pub fn label_blocks(image: &Image, params: &ShieldParams) -> Result<Vec<BlockLabelCounts>> {
    params.validate()?;
    let bs = params.block_size;
    let grid = split_blocks(image, bs)?;
    let masks = paired(params.trial_masks());
    let per = grid.cols * grid.rows;
    let mut scratch = Vec::with_capacity(bs * bs);
    Ok(grid
        .blocks
        .iter()
        .enumerate()
        .map(|(id, b)| {
            let local = id % per;
            let (bx, by) = (local % grid.cols, local / grid.cols);
            if (bx + 1) * bs > image.width() || (by + 1) * bs > image.height() {
                return BlockLabelCounts::from_counts(0, 0, 0, 0, params.th);
            }
            let px: Vec<i32> = b.iter().map(|&v| v as i32).collect();
            let (a, s, c, d) = block_counts(&px, &masks, &mut scratch);
            BlockLabelCounts::from_counts(a, s, c, d, params.th)
        })
        .collect())
}

/// Decides which block contents keep the hidden payload intact.
pub trait PayloadOracle {
    /// Grid block `id` replaced by `pixels` still yields the payload.
    fn block_ok(&self, id: usize, pixels: &[u8]) -> bool;
    /// The whole image still yields the payload.
    fn image_ok(&self, image: &Image) -> bool;
}

impl PayloadOracle for PayloadGuard {
    fn block_ok(&self, id: usize, pixels: &[u8]) -> bool {
        PayloadGuard::block_ok(self, id, pixels)
    }

    fn image_ok(&self, image: &Image) -> bool {
        PayloadGuard::image_ok(self, image)
    }
}

/// Accepts everything; for images without a payload.
pub struct NoPayload;

impl PayloadOracle for NoPayload {
    fn block_ok(&self, _: usize, _: &[u8]) -> bool {
        true
    }

    fn image_ok(&self, _: &Image) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShieldReport {
    pub before: RsReport,
    pub after: RsReport,
    pub target_blocks: usize,
    pub blocks_adjusted: usize,
    pub pixels_changed: usize,
    /// PSNR between input and output; `None` when unchanged.
    pub psnr_db: Option<f64>,
    pub converged: bool,
}

fn done(report: &RsReport, stop: f64) -> bool {
    report.relative_dr() <= stop && report.relative_ds() <= stop
}

/// PSNR of the working image against the input, with the squared error
/// floored at one grey level so an untouched image scores finitely.
fn image_psnr(sse: f64, samples: usize) -> f64 {
    psnr_from_sse(sse.max(1.0), samples)
}

fn sq_diff(a: &[i32], b: &[i32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) * (x - y)) as f64).sum()
}

/// Runs the shield. The returned image always satisfies the oracle; when
/// the stop rule is not met `converged` is false (the best effort is kept).
pub fn shield(stego: &Image, oracle: &dyn PayloadOracle, params: &ShieldParams) -> Result<(Image, ShieldReport)> {
    params.validate()?;
    let before = analyze(stego, &params.rs)?;
    if done(&before, params.stop_ratio) {
        let report = ShieldReport {
            after: before.clone(),
            before,
            target_blocks: 0,
            blocks_adjusted: 0,
            pixels_changed: 0,
            psnr_db: None,
            converged: true,
        };
        return Ok((stego.clone(), report));
    }
    let bs = params.block_size;
    let labels = label_blocks(stego, params)?;
    let masks = paired(params.trial_masks());
    let mut grid = split_blocks(stego, bs)?;
    let mut tracker = RsTracker::new(stego, &params.rs)?;
    let per = grid.cols * grid.rows;
    let targets: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| l.is_target()).map(|(i, _)| i).collect();
    let mut adjusted = 0;
    let mut converged = false;
    let samples = stego.data().len();
    let mut total_sse = 0.0;
    let mut scratch = Vec::with_capacity(bs * bs);
    for &id in &targets {
        let original: Vec<i32> = grid.blocks[id].iter().map(|&v| v as i32).collect();
        let mut block = original.clone();
        let mut changed = false;
        for start in (0..block.len() - 2).step_by(3) {
            let memo: RefCell<HashMap<[u8; 3], f64>> = RefCell::new(HashMap::new());
            let snapshot = block.clone();
            let fitness = |g: &Genome| -> f64 {
                let Genome::BitTriple(triple) = g else { return f64::NEG_INFINITY };
                if let Some(&f) = memo.borrow().get(triple) {
                    return f;
                }
                let mut cand = snapshot.clone();
                for (j, &v) in triple.iter().enumerate() {
                    cand[start + j] = v as i32;
                }
                let bytes: Vec<u8> = cand.iter().map(|&v| v as u8).collect();
                let f = if cand != snapshot && !oracle.block_ok(id, &bytes) {
                    f64::NEG_INFINITY
                } else {
                    let mut sc = Vec::with_capacity(cand.len());
                    let (pr, _, _, ps) = block_counts(&cand, &masks, &mut sc);
                    let trials = masks.len() as f64;
                    // e1: singular under negative flipping, e2: regular under positive flipping
                    let (e1, e2) = (ps as f64 / trials, pr as f64 / trials);
                    params.alpha * (e1 + e2) + image_psnr(total_sse + sq_diff(&cand, &original), samples)
                };
                memo.borrow_mut().insert(*triple, f);
                f
            };
            let current = [block[start] as u8, block[start + 1] as u8, block[start + 2] as u8];
            let ga = AgaParams { seed: params.ga.seed ^ ((id as u64) << 8 | start as u64), ..params.ga };
            let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);
            let mut initial = vec![Genome::BitTriple(current)];
            initial.extend((1..ga.population_size).map(|_| crate::ga::mutate(&Genome::BitTriple(current), 0.5, &mut rng)));
            let evolved = evolve(initial, fitness, &ga)?;
            if let Genome::BitTriple(best) = evolved.best {
                if best != current && evolved.fitness.is_finite() {
                    for (j, &v) in best.iter().enumerate() {
                        block[start + j] = v as i32;
                    }
                    changed = true;
                }
            }
            let (_, _, mr, ms) = block_counts(&block, &masks, &mut scratch);
            if ms > mr {
                break;
            }
        }
        if changed {
            adjusted += 1;
            total_sse += sq_diff(&block, &original);
            grid.blocks[id] = block.iter().map(|&v| v as u8).collect();
            let (c, local) = (id / per, id % per);
            tracker.set_block(c, (local % grid.cols) * bs, (local / grid.cols) * bs, bs, &grid.blocks[id]);
            if done(&tracker.report(), params.stop_ratio) {
                converged = true;
                break;
            }
        }
    }
    let mut out = merge_blocks(&grid)?;
    if !oracle.image_ok(&out) {
        // block checks should make this unreachable; never hand back a broken payload
        out = stego.clone();
        converged = false;
    }
    let after = analyze(&out, &params.rs)?;
    converged = converged || done(&after, params.stop_ratio);
    let p = psnr(stego, &out)?;
    let pixels_changed = stego.data().iter().zip(out.data()).filter(|(a, b)| a != b).count();
    let report = ShieldReport {
        before,
        after,
        target_blocks: targets.len(),
        blocks_adjusted: adjusted,
        pixels_changed,
        psnr_db: p.is_finite().then_some(p),
        converged,
    };
    Ok((out, report))
}
