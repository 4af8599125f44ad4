//! 8-bit raster images, binary PGM/PPM I/O, block tiling and the reversible
//! histogram narrowing applied before embedding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major, interleaved 8-bit raster with one or three channels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmFormat {
    /// Binary graymap, `P5`.
    Pgm,
    /// Binary pixmap, `P6`.
    Ppm,
}

impl PnmFormat {
    fn magic(self) -> &'static str {
        match self {
            PnmFormat::Pgm => "P5",
            PnmFormat::Ppm => "P6",
        }
    }

    fn channels(self) -> usize {
        match self {
            PnmFormat::Pgm => 1,
            PnmFormat::Ppm => 3,
        }
    }

    /// Format matching the channel count of an image.
    pub fn for_channels(channels: usize) -> Result<Self> {
        match channels {
            1 => Ok(PnmFormat::Pgm),
            3 => Ok(PnmFormat::Ppm),
            c => Err(Error::InvalidImage(format!("{c} channels"))),
        }
    }
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("channels must be 1 or 3, got {channels}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("zero-sized image".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Grayscale image from a closure over `(x, y)`.
    pub fn gray_from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// De-interleaved copy of one channel.
    pub fn plane(&self, c: usize) -> Vec<u8> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    pub fn set_plane(&mut self, c: usize, plane: &[u8]) {
        debug_assert_eq!(plane.len(), self.pixel_count());
        for (i, &v) in plane.iter().enumerate() {
            self.data[i * self.channels + c] = v;
        }
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Image with rows and columns swapped.
    pub fn transposed(&self) -> Image {
        let mut data = vec![0u8; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..self.channels {
                    data[(x * self.height + y) * self.channels + c] = self.get(x, y, c);
                }
            }
        }
        Image { width: self.height, height: self.width, channels: self.channels, data }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() && self.bytes[self.pos] != b'#' {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::MalformedHeader("unexpected end of header".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| Error::MalformedHeader("non-ASCII header".into()))
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        let tok = self.token()?;
        tok.parse::<u32>().map_err(|_| Error::MalformedHeader(format!("bad {what}: {tok:?}")))
    }
}

/// Parses a binary PGM (`P5`) or PPM (`P6`) file with maxval 255.
pub fn load_image(bytes: &[u8], format: PnmFormat) -> Result<Image> {
    let mut r = HeaderReader { bytes, pos: 0 };
    let magic = r.token()?;
    if magic != format.magic() {
        return Err(Error::MalformedHeader(format!("expected magic {}, found {magic:?}", format.magic())));
    }
    let width = r.number("width")? as usize;
    let height = r.number("height")? as usize;
    let maxval = r.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    if r.pos >= bytes.len() || !bytes[r.pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing whitespace after maxval".into()));
    }
    let start = r.pos + 1;
    let expected = width * height * format.channels();
    let found = bytes.len() - start;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    Image::new(width, height, format.channels(), bytes[start..start + expected].to_vec())
}

/// Loads either flavour, dispatching on the magic number.
pub fn load_any(bytes: &[u8]) -> Result<Image> {
    match bytes.get(..2) {
        Some(b"P5") => load_image(bytes, PnmFormat::Pgm),
        Some(b"P6") => load_image(bytes, PnmFormat::Ppm),
        _ => Err(Error::MalformedHeader("not a binary PGM/PPM file".into())),
    }
}

/// Canonical writer: `P5\n<w> <h>\n255\n` followed by the raster.
pub fn save_image(image: &Image, format: PnmFormat) -> Result<Vec<u8>> {
    if image.channels != format.channels() {
        return Err(Error::ChannelMismatch { channels: image.channels, format: format.magic() });
    }
    let mut out = format!("{}\n{} {}\n255\n", format.magic(), image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    Ok(out)
}

/// Edge-replicated tiling of every channel into square blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    pub block_size: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub cols: usize,
    pub rows: usize,
    pub pad_right: usize,
    pub pad_bottom: usize,
    /// Channel-major, then row-major block order; each block row-major.
    pub blocks: Vec<Vec<u8>>,
}

impl BlockGrid {
    pub fn blocks_per_channel(&self) -> usize {
        self.cols * self.rows
    }
}

pub fn split_blocks(image: &Image, block_size: usize) -> Result<BlockGrid> {
    if block_size < 2 {
        return Err(Error::InvalidParam(format!("block size {block_size} < 2")));
    }
    let cols = image.width.div_ceil(block_size);
    let rows = image.height.div_ceil(block_size);
    let mut blocks = Vec::with_capacity(cols * rows * image.channels);
    for c in 0..image.channels {
        for by in 0..rows {
            for bx in 0..cols {
                let mut block = Vec::with_capacity(block_size * block_size);
                for y in 0..block_size {
                    let sy = (by * block_size + y).min(image.height - 1);
                    for x in 0..block_size {
                        let sx = (bx * block_size + x).min(image.width - 1);
                        block.push(image.get(sx, sy, c));
                    }
                }
                blocks.push(block);
            }
        }
    }
    Ok(BlockGrid {
        block_size,
        width: image.width,
        height: image.height,
        channels: image.channels,
        cols,
        rows,
        pad_right: cols * block_size - image.width,
        pad_bottom: rows * block_size - image.height,
        blocks,
    })
}

pub fn merge_blocks(grid: &BlockGrid) -> Result<Image> {
    let bs = grid.block_size;
    if grid.blocks.len() != grid.cols * grid.rows * grid.channels {
        return Err(Error::InconsistentGrid(format!(
            "{} blocks for a {}x{}x{} grid",
            grid.blocks.len(),
            grid.cols,
            grid.rows,
            grid.channels
        )));
    }
    if grid.cols * bs != grid.width + grid.pad_right || grid.rows * bs != grid.height + grid.pad_bottom {
        return Err(Error::InconsistentGrid("padding does not match grid shape".into()));
    }
    if let Some(b) = grid.blocks.iter().find(|b| b.len() != bs * bs) {
        return Err(Error::InconsistentGrid(format!("block of {} samples, expected {}", b.len(), bs * bs)));
    }
    let mut image = Image::filled(grid.width, grid.height, grid.channels, 0)?;
    let per_channel = grid.cols * grid.rows;
    for (i, block) in grid.blocks.iter().enumerate() {
        let c = i / per_channel;
        let by = (i % per_channel) / grid.cols;
        let bx = i % grid.cols;
        for y in 0..bs {
            let iy = by * bs + y;
            if iy >= grid.height {
                break;
            }
            for x in 0..bs {
                let ix = bx * bs + x;
                if ix < grid.width {
                    image.set(ix, iy, c, block[y * bs + x]);
                }
            }
        }
    }
    Ok(image)
}

/// Record of the pixels moved inward by [`histogram_modify`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramMap {
    pub low_cut: u8,
    pub high_cut: u8,
    /// (sample index into the interleaved data, original value)
    pub relocated: Vec<(u32, u8)>,
}

impl HistogramMap {
    pub fn is_empty(&self) -> bool {
        self.relocated.is_empty()
    }

    /// `low, high, count: u32 BE, then (index: u32 BE, value: u8)*`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 5 * self.relocated.len());
        out.push(self.low_cut);
        out.push(self.high_cut);
        out.extend_from_slice(&(self.relocated.len() as u32).to_be_bytes());
        for &(idx, v) in &self.relocated {
            out.extend_from_slice(&idx.to_be_bytes());
            out.push(v);
        }
        out
    }

    /// Parses a map from the front of `bytes`, returning it with the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Option<(Self, usize)> {
        let low_cut = *bytes.first()?;
        let high_cut = *bytes.get(1)?;
        let count = u32::from_be_bytes(bytes.get(2..6)?.try_into().ok()?) as usize;
        let end = 6usize.checked_add(count.checked_mul(5)?)?;
        let body = bytes.get(6..end)?;
        let relocated = body
            .chunks_exact(5)
            .map(|c| (u32::from_be_bytes([c[0], c[1], c[2], c[3]]), c[4]))
            .collect();
        Some((Self { low_cut, high_cut, relocated }, end))
    }
}

/// Clamps every sample into `[guard, 255 - guard]`, remembering what was moved.
pub fn histogram_modify(image: &Image, guard: u8) -> Result<(Image, HistogramMap)> {
    if guard == 0 || guard > 16 {
        return Err(Error::InvalidParam(format!("histogram guard {guard} outside 1..=16")));
    }
    let (lo, hi) = (guard, 255 - guard);
    let mut out = image.clone();
    let mut map = HistogramMap { low_cut: lo, high_cut: hi, relocated: Vec::new() };
    for (i, v) in out.data.iter_mut().enumerate() {
        if *v < lo || *v > hi {
            map.relocated.push((i as u32, *v));
            *v = (*v).clamp(lo, hi);
        }
    }
    Ok((out, map))
}

pub fn histogram_restore(image: &Image, map: &HistogramMap) -> Result<Image> {
    let mut out = image.clone();
    let len = out.data.len();
    for &(idx, v) in &map.relocated {
        let slot = out
            .data
            .get_mut(idx as usize)
            .ok_or(Error::MapIndexOutOfRange { index: idx as usize, len })?;
        *slot = v;
    }
    Ok(out)
}
