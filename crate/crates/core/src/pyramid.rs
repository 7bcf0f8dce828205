//! Deep Zoom (DZI) tile pyramids built from a streamed canvas.
//!
//! Level `max` is full resolution and every lower level is the 2× box
//! downsample of the one above, down to a 1×1 level 0. Tiles are `tile_size`
//! pixels plus `overlap` pixels shared with each neighbour, stored at
//! `{name}_files/{level}/{col}_{row}.{format}`. The `{name}.dzi` descriptor
//! is written last, so a descriptor always has its tiles.

use std::fs;
use std::path::{Path, PathBuf};

use quick_xml::events::Event;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degrade::{decode_jpeg, encode_jpeg};
use crate::mosaic::{CanvasBands, MosaicError};
use crate::raster::Image;

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("missing tile or level: {0}")]
    MissingTile(String),
    #[error("corrupt canvas stream: {0}")]
    CorruptStream(String),
    #[error("bad descriptor: {0}")]
    Descriptor(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("tile codec: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<MosaicError> for PyramidError {
    fn from(e: MosaicError) -> Self {
        match e {
            MosaicError::Io(e) => PyramidError::Io(e),
            other => PyramidError::CorruptStream(other.to_string()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TileFormat {
    Png,
    Jpeg,
}

impl TileFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TileFormat::Png => "png",
            TileFormat::Jpeg => "jpeg",
        }
    }

    fn parse(s: &str) -> Option<TileFormat> {
        match s {
            "png" => Some(TileFormat::Png),
            "jpeg" | "jpg" => Some(TileFormat::Jpeg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PyramidParams {
    pub tile_size: usize,
    pub overlap: usize,
    pub format: TileFormat,
    pub jpeg_quality: u8,
}

impl Default for PyramidParams {
    fn default() -> Self {
        PyramidParams {
            tile_size: 256,
            overlap: 1,
            format: TileFormat::Png,
            jpeg_quality: 90,
        }
    }
}

/// Smallest `L` with `2^L ≥ max(w, h)`.
pub fn max_level(w: usize, h: usize) -> u32 {
    let m = w.max(h).max(1);
    usize::BITS - (m - 1).leading_zeros()
}

/// Dimensions of `level` for a `w × h` image.
pub fn level_dims(w: usize, h: usize, level: u32) -> (usize, usize) {
    let shift = max_level(w, h) - level.min(max_level(w, h));
    let d = 1usize << shift;
    (w.div_ceil(d), h.div_ceil(d))
}

pub fn tile_counts(level_w: usize, level_h: usize, tile_size: usize) -> (usize, usize) {
    (level_w.div_ceil(tile_size), level_h.div_ceil(tile_size))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DziDescriptor {
    pub width: usize,
    pub height: usize,
    pub tile_size: usize,
    pub overlap: usize,
    pub format: TileFormat,
}

impl DziDescriptor {
    pub fn max_level(&self) -> u32 {
        max_level(self.width, self.height)
    }

    pub fn level_dims(&self, level: u32) -> (usize, usize) {
        level_dims(self.width, self.height, level)
    }

    pub fn tile_counts(&self, level: u32) -> (usize, usize) {
        let (w, h) = self.level_dims(level);
        tile_counts(w, h, self.tile_size)
    }

    /// Pixel rectangle `(x, y, w, h)` of a tile, overlap included.
    pub fn tile_rect(&self, level: u32, col: usize, row: usize) -> (usize, usize, usize, usize) {
        let (w, h) = self.level_dims(level);
        let span = |i: usize, len: usize| {
            let start = (i * self.tile_size).saturating_sub(if i > 0 { self.overlap } else { 0 });
            let end = ((i + 1) * self.tile_size + self.overlap).min(len);
            (start, end - start)
        };
        let (x, tw) = span(col, w);
        let (y, th) = span(row, h);
        (x, y, tw, th)
    }

    pub fn to_xml(&self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<Image TileSize=\"{}\" Overlap=\"{}\" Format=\"{}\" xmlns=\"http://schemas.microsoft.com/deepzoom/2008\"><Size Width=\"{}\" Height=\"{}\"/></Image>\n",
            self.tile_size,
            self.overlap,
            self.format.extension(),
            self.width,
            self.height
        )
    }

    pub fn from_xml(text: &str) -> Result<DziDescriptor, PyramidError> {
        let bad = |m: String| PyramidError::Descriptor(m);
        let mut reader = quick_xml::Reader::from_str(text);
        let (mut tile, mut overlap, mut format, mut width, mut height) = (None, None, None, None, None);
        loop {
            match reader.read_event().map_err(|e| bad(e.to_string()))? {
                Event::Start(e) | Event::Empty(e) => {
                    let tag = e.local_name().as_ref().to_vec();
                    for a in e.attributes() {
                        let a = a.map_err(|e| bad(e.to_string()))?;
                        let v = a.unescape_value().map_err(|e| bad(e.to_string()))?.into_owned();
                        let num = || v.parse::<usize>().map_err(|_| bad(format!("attribute value {v:?}")));
                        match (tag.as_slice(), a.key.local_name().as_ref()) {
                            (b"Image", b"TileSize") => tile = Some(num()?),
                            (b"Image", b"Overlap") => overlap = Some(num()?),
                            (b"Image", b"Format") => {
                                format = Some(TileFormat::parse(&v).ok_or_else(|| bad(format!("format {v:?}")))?)
                            }
                            (b"Size", b"Width") => width = Some(num()?),
                            (b"Size", b"Height") => height = Some(num()?),
                            _ => {}
                        }
                    }
                }
                Event::Eof => break,
                _ => {}
            }
        }
        match (tile, overlap, format, width, height) {
            (Some(tile_size), Some(overlap), Some(format), Some(width), Some(height))
                if tile_size > 0 && width > 0 && height > 0 =>
            {
                Ok(DziDescriptor {
                    width,
                    height,
                    tile_size,
                    overlap,
                    format,
                })
            }
            _ => Err(bad("missing or zero TileSize/Overlap/Format/Width/Height".into())),
        }
    }
}

/// A pyramid on disk.
#[derive(Clone, Debug)]
pub struct TilePyramid {
    pub descriptor: DziDescriptor,
    dzi: PathBuf,
}

impl TilePyramid {
    pub fn open(dzi: impl AsRef<Path>) -> Result<TilePyramid, PyramidError> {
        let dzi = dzi.as_ref().to_path_buf();
        let text = fs::read_to_string(&dzi)?;
        Ok(TilePyramid {
            descriptor: DziDescriptor::from_xml(&text)?,
            dzi,
        })
    }

    pub fn dzi_path(&self) -> &Path {
        &self.dzi
    }

    pub fn tiles_dir(&self) -> PathBuf {
        tiles_dir(&self.dzi)
    }

    pub fn tile_path(&self, level: u32, col: usize, row: usize) -> PathBuf {
        tile_path(&self.tiles_dir(), level, col, row, self.descriptor.format)
    }

    /// Stitches the tiles of `level` back into one image.
    pub fn reassemble_level(&self, level: u32) -> Result<Image, PyramidError> {
        let d = &self.descriptor;
        if level > d.max_level() {
            return Err(PyramidError::MissingTile(format!("level {level} (max {})", d.max_level())));
        }
        let (w, h) = d.level_dims(level);
        let (cols, rows) = d.tile_counts(level);
        let mut out = Image::new(w, h, 3);
        for row in 0..rows {
            for col in 0..cols {
                let path = self.tile_path(level, col, row);
                if !path.exists() {
                    return Err(PyramidError::MissingTile(path.display().to_string()));
                }
                let tile = read_tile(&path, d.format)?;
                let (x, y, tw, th) = d.tile_rect(level, col, row);
                if tile.dims() != (tw, th) {
                    return Err(PyramidError::Codec(format!(
                        "{} is {:?}, expected {:?}",
                        path.display(),
                        tile.dims(),
                        (tw, th)
                    )));
                }
                out.paste(&tile, x, y);
            }
        }
        Ok(out)
    }
}

fn tiles_dir(dzi: &Path) -> PathBuf {
    let stem = dzi.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    dzi.with_file_name(format!("{stem}_files"))
}

fn tile_path(dir: &Path, level: u32, col: usize, row: usize, format: TileFormat) -> PathBuf {
    dir.join(level.to_string()).join(format!("{col}_{row}.{}", format.extension()))
}

fn read_tile(path: &Path, format: TileFormat) -> Result<Image, PyramidError> {
    match format {
        TileFormat::Png => Image::load_rgb(path).map_err(|e| PyramidError::Codec(e.to_string())),
        TileFormat::Jpeg => decode_jpeg(&fs::read(path)?).map_err(|e| PyramidError::Codec(e.to_string())),
    }
}

fn write_tile(path: &Path, rgb: Vec<u8>, w: usize, h: usize, params: &PyramidParams) -> Result<(), PyramidError> {
    match params.format {
        TileFormat::Png => image::RgbImage::from_raw(w as u32, h as u32, rgb)
            .expect("tile buffer size")
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| PyramidError::Codec(e.to_string())),
        TileFormat::Jpeg => {
            let img = Image::from_u8(w, h, 3, &rgb);
            let bytes = encode_jpeg(&img, params.jpeg_quality).map_err(|e| PyramidError::Codec(e.to_string()))?;
            fs::write(path, bytes)?;
            Ok(())
        }
    }
}

/// Rows of one level, buffered until their tiles are written, plus the
/// unpaired row waiting for its partner in the next level down.
struct LevelState {
    level: u32,
    width: usize,
    height: usize,
    /// First buffered row.
    start: usize,
    buf: Vec<u8>,
    received: usize,
    next_tile_row: usize,
    pending: Option<Vec<u8>>,
}

struct Builder<'a> {
    d: DziDescriptor,
    params: &'a PyramidParams,
    dir: PathBuf,
    levels: Vec<LevelState>,
    peak_bytes: usize,
}

/// Halves a row horizontally, averaging pairs (a lone last pixel stays).
fn halve_row(a: &[u8], b: Option<&[u8]>, width: usize) -> Vec<u8> {
    let out_w = width.div_ceil(2);
    let mut out = Vec::with_capacity(out_w * 3);
    for x in 0..out_w {
        for c in 0..3 {
            let mut sum = 0u32;
            let mut n = 0u32;
            for xx in [2 * x, 2 * x + 1] {
                if xx >= width {
                    continue;
                }
                sum += a[xx * 3 + c] as u32;
                n += 1;
                if let Some(b) = b {
                    sum += b[xx * 3 + c] as u32;
                    n += 1;
                }
            }
            out.push(((sum + n / 2) / n) as u8);
        }
    }
    out
}

impl Builder<'_> {
    fn push_row(&mut self, idx: usize, row: Vec<u8>) -> Result<(), PyramidError> {
        let (child_row, last) = {
            let s = &mut self.levels[idx];
            s.buf.extend_from_slice(&row);
            s.received += 1;
            let last = s.received == s.height;
            let child = if s.level == 0 {
                None
            } else if let Some(p) = s.pending.take() {
                Some(halve_row(&p, Some(&row), s.width))
            } else if last {
                Some(halve_row(&row, None, s.width))
            } else {
                s.pending = Some(row);
                None
            };
            (child, last)
        };
        self.emit_tiles(idx, last)?;
        let resident: usize = self
            .levels
            .iter()
            .map(|l| l.buf.len() + l.pending.as_ref().map_or(0, Vec::len))
            .sum();
        self.peak_bytes = self.peak_bytes.max(resident);
        if let Some(r) = child_row {
            self.push_row(idx + 1, r)?;
        }
        Ok(())
    }

    fn emit_tiles(&mut self, idx: usize, last: bool) -> Result<(), PyramidError> {
        let d = self.d;
        let tiles_dir = self.dir.clone();
        let s = &mut self.levels[idx];
        let (cols, rows) = tile_counts(s.width, s.height, d.tile_size);
        while s.next_tile_row < rows {
            let (_, y, _, th) = d.tile_rect(s.level, 0, s.next_tile_row);
            if y + th > s.received && !last {
                break;
            }
            let stride = s.width * 3;
            let level_dir = tiles_dir.join(s.level.to_string());
            let (start, buf, level, row) = (s.start, &s.buf, s.level, s.next_tile_row);
            (0..cols).into_par_iter().try_for_each(|col| {
                let (x, y, tw, th) = d.tile_rect(level, col, row);
                let mut rgb = Vec::with_capacity(tw * th * 3);
                for yy in y..y + th {
                    let off = (yy - start) * stride + x * 3;
                    rgb.extend_from_slice(&buf[off..off + tw * 3]);
                }
                write_tile(&level_dir.join(format!("{col}_{row}.{}", d.format.extension())), rgb, tw, th, self.params)
            })?;
            s.next_tile_row += 1;
            // Keep rows the next tile row's overlap still needs.
            let keep_from = (s.next_tile_row * d.tile_size).saturating_sub(d.overlap).min(s.received);
            if keep_from > s.start {
                s.buf.drain(..(keep_from - s.start) * stride);
                s.start = keep_from;
            }
        }
        Ok(())
    }
}

/// Summary of a pyramid build.
#[derive(Clone, Debug)]
pub struct PyramidBuild {
    pub pyramid: TilePyramid,
    pub tiles: usize,
    /// Peak bytes held in level row buffers.
    pub peak_buffer_bytes: usize,
}

/// Builds `{name}.dzi` and its tiles in `out_dir` from rows produced by
/// `read_rows(y0, y1)` (8-bit RGB, row-major).
pub fn build_pyramid_from_rows(
    width: usize,
    height: usize,
    mut read_rows: impl FnMut(usize, usize) -> Result<Vec<u8>, PyramidError>,
    out_dir: impl AsRef<Path>,
    name: &str,
    params: &PyramidParams,
) -> Result<PyramidBuild, PyramidError> {
    if params.tile_size == 0 || params.overlap >= params.tile_size {
        return Err(PyramidError::InvalidParams(format!(
            "tile size {}, overlap {}",
            params.tile_size, params.overlap
        )));
    }
    if width == 0 || height == 0 {
        return Err(PyramidError::CorruptStream(format!("{width}x{height} canvas")));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let dzi = out_dir.join(format!("{name}.dzi"));
    if dzi.exists() {
        fs::remove_file(&dzi)?;
    }
    let d = DziDescriptor {
        width,
        height,
        tile_size: params.tile_size,
        overlap: params.overlap,
        format: params.format,
    };
    let dir = tiles_dir(&dzi);
    let top = d.max_level();
    let mut levels = Vec::new();
    for level in (0..=top).rev() {
        fs::create_dir_all(dir.join(level.to_string()))?;
        let (w, h) = d.level_dims(level);
        levels.push(LevelState {
            level,
            width: w,
            height: h,
            start: 0,
            buf: Vec::new(),
            received: 0,
            next_tile_row: 0,
            pending: None,
        });
    }
    let mut b = Builder {
        d,
        params,
        dir,
        levels,
        peak_bytes: 0,
    };
    let chunk = params.tile_size.max(1);
    let mut y = 0;
    while y < height {
        let y1 = (y + chunk).min(height);
        let rows = read_rows(y, y1)?;
        if rows.len() != (y1 - y) * width * 3 {
            return Err(PyramidError::CorruptStream(format!("rows {y}..{y1} have {} bytes", rows.len())));
        }
        for r in rows.chunks_exact(width * 3) {
            b.push_row(0, r.to_vec())?;
        }
        y = y1;
    }
    let tiles = (0..=top)
        .map(|l| {
            let (c, r) = d.tile_counts(l);
            c * r
        })
        .sum();
    let tmp = dzi.with_extension("dzi.tmp");
    fs::write(&tmp, d.to_xml())?;
    fs::rename(&tmp, &dzi)?;
    Ok(PyramidBuild {
        pyramid: TilePyramid { descriptor: d, dzi },
        tiles,
        peak_buffer_bytes: b.peak_bytes,
    })
}

/// Builds a pyramid from a mosaic canvas.
pub fn build_pyramid(
    canvas: &CanvasBands,
    out_dir: impl AsRef<Path>,
    name: &str,
    params: &PyramidParams,
) -> Result<PyramidBuild, PyramidError> {
    let (w, h) = canvas.dims();
    build_pyramid_from_rows(w, h, |y0, y1| Ok(canvas.read_rows(y0, y1)?.to_u8()), out_dir, name, params)
}

/// Builds a pyramid from an in-memory image.
pub fn build_pyramid_from_image(
    img: &Image,
    out_dir: impl AsRef<Path>,
    name: &str,
    params: &PyramidParams,
) -> Result<PyramidBuild, PyramidError> {
    let rgb = img.to_rgb().to_u8();
    let stride = img.width() * 3;
    build_pyramid_from_rows(
        img.width(),
        img.height(),
        |y0, y1| Ok(rgb[y0 * stride..y1 * stride].to_vec()),
        out_dir,
        name,
        params,
    )
}

/// 2× box downsample with ceiling dims, rounding to the nearest 8-bit level.
pub fn box_downsample(img: &Image) -> Image {
    let (w, h) = img.dims();
    let src = img.to_rgb().to_u8();
    let stride = w * 3;
    let mut out = Vec::new();
    for y in (0..h).step_by(2) {
        let a = &src[y * stride..(y + 1) * stride];
        let b = (y + 1 < h).then(|| &src[(y + 1) * stride..(y + 2) * stride]);
        out.extend(halve_row(a, b, w));
    }
    Image::from_u8(w.div_ceil(2), h.div_ceil(2), 3, &out)
}
