use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::MeshError;

/// Binary image packed 64 pixels per word, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct MaskImage {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for MaskImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MaskImage({}x{}, {} set)", self.width, self.height, self.count())
    }
}

impl MaskImage {
    pub fn new(width: u32, height: u32) -> Self {
        let bits = width as usize * height as usize;
        Self { width, height, words: vec![0; bits.div_ceil(64)] }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y);
                }
            }
        }
        m
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn same_size(&self, other: &MaskImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn clear(&mut self, x: u32, y: u32) {
        let i = self.index(x, y);
        self.words[i / 64] &= !(1 << (i % 64));
    }

    /// Sets pixels `x0..x1` of row `y`.
    pub fn set_span(&mut self, y: u32, x0: u32, x1: u32) {
        if x0 >= x1 {
            return;
        }
        let start = self.index(x0, y);
        let end = start + (x1 - x0) as usize;
        let (w0, w1) = (start / 64, (end - 1) / 64);
        let lo = !0u64 << (start % 64);
        let hi = !0u64 >> (63 - (end - 1) % 64);
        if w0 == w1 {
            self.words[w0] |= lo & hi;
        } else {
            self.words[w0] |= lo;
            self.words[w0 + 1..w1].iter_mut().for_each(|w| *w = !0);
            self.words[w1] |= hi;
        }
    }

    pub fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn union_with(&mut self, other: &MaskImage) {
        assert!(self.same_size(other), "mask size mismatch");
        self.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a |= b);
    }

    pub fn intersection_count(&self, other: &MaskImage) -> u64 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as u64).sum()
    }

    pub fn union_count(&self, other: &MaskImage) -> u64 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a | b).count_ones() as u64).sum()
    }

    /// Number of pixels set in exactly one of the masks.
    pub fn difference_count(&self, other: &MaskImage) -> u64 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as u64).sum()
    }

    /// Coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * 64 + b;
                Some(((i % w) as u32, (i / w) as u32))
            })
        })
    }

    /// Pixels set in one mask but not the other.
    pub fn iter_difference<'a>(&'a self, other: &'a MaskImage) -> impl Iterator<Item = (u32, u32)> + 'a {
        let mut x = self.clone();
        x.words.iter_mut().zip(&other.words).for_each(|(a, b)| *a ^= b);
        x.iter_set().collect::<Vec<_>>().into_iter()
    }

    /// 8-bit grayscale bytes, 0 or 255.
    pub fn to_gray8(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.width as usize * self.height as usize];
        for (x, y) in self.iter_set() {
            out[y as usize * self.width as usize + x as usize] = 255;
        }
        out
    }

    /// Any non-zero byte counts as set.
    pub fn from_gray8(width: u32, height: u32, data: &[u8]) -> Self {
        assert_eq!(data.len(), width as usize * height as usize);
        let mut m = Self::new(width, height);
        for (i, &v) in data.iter().enumerate() {
            if v != 0 {
                m.words[i / 64] |= 1 << (i % 64);
            }
        }
        m
    }

    pub fn write_png(&self, path: &Path) -> Result<(), MeshError> {
        write_png_gray(path, self.width, self.height, png::BitDepth::Eight, &self.to_gray8())
    }

    pub fn read_png(path: &Path) -> Result<Self, MeshError> {
        let (w, h, data) = read_png_gray8(path)?;
        Ok(Self::from_gray8(w, h, &data))
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> MeshError {
    MeshError::Image { path: path.display().to_string(), message: e.to_string() }
}

pub(crate) fn write_png_gray(path: &Path, width: u32, height: u32, depth: png::BitDepth, data: &[u8]) -> Result<(), MeshError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut writer = enc.write_header().map_err(|e| io_err(path, e))?;
    writer.write_image_data(data).map_err(|e| io_err(path, e))?;
    writer.finish().map_err(|e| io_err(path, e))
}

/// Decodes a PNG to raw bytes without any transformation.
pub(crate) fn read_png_raw(path: &Path) -> Result<(png::OutputInfo, Vec<u8>), MeshError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| io_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| io_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| io_err(path, e))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn read_png_gray8(path: &Path) -> Result<(u32, u32, Vec<u8>), MeshError> {
    let (info, buf) = read_png_raw(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(io_err(path, format!("expected 8-bit single-channel mask, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    Ok((info.width, info.height, buf))
}
