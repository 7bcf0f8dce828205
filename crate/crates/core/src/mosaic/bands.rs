//! On-disk canvas stored as horizontal bands of raw samples.
//!
//! A canvas directory holds `header.json` and `band_NNNNN.raw` files, each
//! `band_height` rows of interleaved RGB (the last band may be shorter).
//! Final outputs use 8-bit samples; intermediate estimates use `f32`.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::MosaicError;
use crate::raster::{quantize, Image};

pub const HEADER_FILE: &str = "header.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sample {
    #[default]
    U8,
    F32,
}

impl Sample {
    fn bytes(self) -> usize {
        match self {
            Sample::U8 => 1,
            Sample::F32 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasHeader {
    pub width: usize,
    pub height: usize,
    pub band_height: usize,
    #[serde(default)]
    pub sample: Sample,
}

impl CanvasHeader {
    pub fn band_count(&self) -> usize {
        self.height.div_ceil(self.band_height)
    }

    pub fn band_rows(&self, band: usize) -> usize {
        (self.height - band * self.band_height).min(self.band_height)
    }

    fn row_bytes(&self) -> usize {
        self.width * 3 * self.sample.bytes()
    }
}

pub fn band_path(dir: &Path, band: usize) -> PathBuf {
    dir.join(format!("band_{band:05}.raw"))
}

/// Appends canvas rows in order, splitting them into band files. The header
/// is written last, once every row is present.
pub struct BandWriter {
    dir: PathBuf,
    header: CanvasHeader,
    file: Option<BufWriter<File>>,
    rows: usize,
}

impl BandWriter {
    pub fn create(dir: impl AsRef<Path>, header: CanvasHeader) -> Result<BandWriter, MosaicError> {
        if header.width == 0 || header.height == 0 || header.band_height == 0 {
            return Err(MosaicError::CorruptStream(format!("bad canvas header {header:?}")));
        }
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let _ = fs::remove_file(dir.join(HEADER_FILE));
        Ok(BandWriter {
            dir,
            header,
            file: None,
            rows: 0,
        })
    }

    pub fn header(&self) -> &CanvasHeader {
        &self.header
    }

    pub fn rows_written(&self) -> usize {
        self.rows
    }

    /// Appends whole rows of interleaved RGB samples.
    pub fn write_rows(&mut self, data: &[f32]) -> Result<(), MosaicError> {
        let stride = self.header.width * 3;
        assert_eq!(data.len() % stride, 0, "partial row");
        let mut bytes = Vec::new();
        for row in data.chunks_exact(stride) {
            if self.rows >= self.header.height {
                return Err(MosaicError::CorruptStream("more rows than the canvas height".into()));
            }
            if self.rows % self.header.band_height == 0 {
                if let Some(mut f) = self.file.take() {
                    f.flush()?;
                }
                let band = self.rows / self.header.band_height;
                self.file = Some(BufWriter::new(File::create(band_path(&self.dir, band))?));
            }
            bytes.clear();
            match self.header.sample {
                Sample::U8 => bytes.extend(row.iter().map(|&v| quantize(v))),
                Sample::F32 => bytes.extend(row.iter().flat_map(|v| v.to_le_bytes())),
            }
            self.file.as_mut().expect("open band").write_all(&bytes)?;
            self.rows += 1;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<CanvasBands, MosaicError> {
        if let Some(mut f) = self.file.take() {
            f.flush()?;
        }
        if self.rows != self.header.height {
            return Err(MosaicError::CorruptStream(format!(
                "{} of {} rows written",
                self.rows, self.header.height
            )));
        }
        let tmp = self.dir.join("header.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(&self.header).expect("header serializes"))?;
        fs::rename(&tmp, self.dir.join(HEADER_FILE))?;
        Ok(CanvasBands {
            dir: self.dir,
            header: self.header,
        })
    }
}

/// A complete canvas on disk.
#[derive(Clone, Debug)]
pub struct CanvasBands {
    dir: PathBuf,
    header: CanvasHeader,
}

impl CanvasBands {
    pub fn open(dir: impl AsRef<Path>) -> Result<CanvasBands, MosaicError> {
        let dir = dir.as_ref().to_path_buf();
        let text = fs::read_to_string(dir.join(HEADER_FILE))
            .map_err(|e| MosaicError::CorruptStream(format!("{}: {e}", dir.join(HEADER_FILE).display())))?;
        let header: CanvasHeader =
            serde_json::from_str(&text).map_err(|e| MosaicError::CorruptStream(format!("header: {e}")))?;
        if header.width == 0 || header.height == 0 || header.band_height == 0 {
            return Err(MosaicError::CorruptStream(format!("bad canvas header {header:?}")));
        }
        for b in 0..header.band_count() {
            let p = band_path(&dir, b);
            let len = fs::metadata(&p)
                .map_err(|e| MosaicError::CorruptStream(format!("{}: {e}", p.display())))?
                .len();
            let expected = (header.band_rows(b) * header.row_bytes()) as u64;
            if len != expected {
                return Err(MosaicError::CorruptStream(format!(
                    "{} has {len} bytes, expected {expected}",
                    p.display()
                )));
            }
        }
        Ok(CanvasBands { dir, header })
    }

    pub fn header(&self) -> &CanvasHeader {
        &self.header
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.header.width, self.header.height)
    }

    /// Rows `[y0, y1)` as an RGB image.
    pub fn read_rows(&self, y0: usize, y1: usize) -> Result<Image, MosaicError> {
        let h = &self.header;
        assert!(y0 <= y1 && y1 <= h.height, "rows {y0}..{y1} of {}", h.height);
        let mut data = Vec::with_capacity((y1 - y0) * h.width * 3);
        let mut y = y0;
        let mut bytes = Vec::new();
        while y < y1 {
            let band = y / h.band_height;
            let end = ((band + 1) * h.band_height).min(y1);
            let mut f = File::open(band_path(&self.dir, band))?;
            f.seek(SeekFrom::Start(((y - band * h.band_height) * h.row_bytes()) as u64))?;
            bytes.resize((end - y) * h.row_bytes(), 0);
            f.read_exact(&mut bytes)
                .map_err(|e| MosaicError::CorruptStream(format!("band {band}: {e}")))?;
            match h.sample {
                Sample::U8 => data.extend(bytes.iter().map(|&b| b as f32 / 255.0)),
                Sample::F32 => data.extend(
                    bytes
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
                ),
            }
            y = end;
        }
        Ok(Image::from_vec(h.width, y1 - y0, 3, data))
    }

    pub fn to_image(&self) -> Result<Image, MosaicError> {
        self.read_rows(0, self.header.height)
    }

    /// Writes `img` as a canvas.
    pub fn write_image(
        dir: impl AsRef<Path>,
        img: &Image,
        band_height: usize,
        sample: Sample,
    ) -> Result<CanvasBands, MosaicError> {
        let img = img.to_rgb();
        let mut w = BandWriter::create(
            dir,
            CanvasHeader {
                width: img.width(),
                height: img.height(),
                band_height,
                sample,
            },
        )?;
        w.write_rows(img.data())?;
        w.finish()
    }

    pub fn remove(self) -> Result<(), MosaicError> {
        fs::remove_file(self.dir.join(HEADER_FILE))?;
        for b in 0..self.header.band_count() {
            fs::remove_file(band_path(&self.dir, b))?;
        }
        Ok(())
    }
}
