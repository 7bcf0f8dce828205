//! Baseline sequential JPEG encoder with 4:2:0 chroma subsampling.
//!
//! Uses the Annex K quantization and Huffman tables with the IJG quality
//! scaling convention. Decoding goes through `image`. This is the only JPEG
//! encoder in the crate, so every round trip uses identical settings.

use crate::raster::Image;

use super::DegradeError;

#[rustfmt::skip]
const ZIGZAG: [usize; 64] = [
     0,  1,  8, 16,  9,  2,  3, 10,
    17, 24, 32, 25, 18, 11,  4,  5,
    12, 19, 26, 33, 40, 48, 41, 34,
    27, 20, 13,  6,  7, 14, 21, 28,
    35, 42, 49, 56, 57, 50, 43, 36,
    29, 22, 15, 23, 30, 37, 44, 51,
    58, 59, 52, 45, 38, 31, 39, 46,
    53, 60, 61, 54, 47, 55, 62, 63,
];

#[rustfmt::skip]
const LUMA_QUANT: [u16; 64] = [
    16, 11, 10, 16,  24,  40,  51,  61,
    12, 12, 14, 19,  26,  58,  60,  55,
    14, 13, 16, 24,  40,  57,  69,  56,
    14, 17, 22, 29,  51,  87,  80,  62,
    18, 22, 37, 56,  68, 109, 103,  77,
    24, 35, 55, 64,  81, 104, 113,  92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103,  99,
];

#[rustfmt::skip]
const CHROMA_QUANT: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99,
    18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99,
    47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99,
];

const DC_LUMA_BITS: [u8; 16] = [0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
const DC_LUMA_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];
const DC_CHROMA_BITS: [u8; 16] = [0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
const DC_CHROMA_VALS: [u8; 12] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11];

const AC_LUMA_BITS: [u8; 16] = [0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d];
#[rustfmt::skip]
const AC_LUMA_VALS: [u8; 162] = [
    0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61, 0x07,
    0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52, 0xd1, 0xf0,
    0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25, 0x26, 0x27, 0x28,
    0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48, 0x49,
    0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68, 0x69,
    0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89,
    0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7,
    0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5,
    0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2,
    0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

const AC_CHROMA_BITS: [u8; 16] = [0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77];
#[rustfmt::skip]
const AC_CHROMA_VALS: [u8; 162] = [
    0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61, 0x71,
    0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33, 0x52, 0xf0,
    0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18, 0x19, 0x1a, 0x26,
    0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45, 0x46, 0x47, 0x48,
    0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64, 0x65, 0x66, 0x67, 0x68,
    0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x82, 0x83, 0x84, 0x85, 0x86, 0x87,
    0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5,
    0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3,
    0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda,
    0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8,
    0xf9, 0xfa,
];

/// IJG quality scaling of a base table, natural order.
pub fn scaled_quant_table(base: &[u16; 64], quality: u8) -> [u16; 64] {
    let q = quality.clamp(1, 100) as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0u16; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u16;
    }
    out
}

struct Huffman {
    /// (code, length) indexed by symbol.
    codes: [(u16, u8); 256],
}

impl Huffman {
    fn new(bits: &[u8; 16], vals: &[u8]) -> Self {
        let mut codes = [(0u16, 0u8); 256];
        let mut code = 0u16;
        let mut k = 0;
        for (len_minus_one, &count) in bits.iter().enumerate() {
            for _ in 0..count {
                codes[vals[k] as usize] = (code, len_minus_one as u8 + 1);
                code += 1;
                k += 1;
            }
            code <<= 1;
        }
        Huffman { codes }
    }
}

struct BitWriter {
    out: Vec<u8>,
    acc: u32,
    n: u32,
}

impl BitWriter {
    fn put(&mut self, code: u32, len: u32) {
        debug_assert!(len <= 16);
        self.acc = (self.acc << len) | (code & ((1 << len) - 1));
        self.n += len;
        while self.n >= 8 {
            let byte = (self.acc >> (self.n - 8)) as u8;
            self.out.push(byte);
            if byte == 0xFF {
                self.out.push(0x00);
            }
            self.n -= 8;
        }
        self.acc &= (1 << self.n) - 1;
    }

    fn flush(&mut self) {
        if self.n > 0 {
            let pad = 8 - self.n;
            self.put((1 << pad) - 1, pad);
        }
    }
}

fn magnitude_category(v: i32) -> u32 {
    32 - (v.unsigned_abs()).leading_zeros()
}

fn dct_matrix() -> [[f32; 8]; 8] {
    let mut m = [[0.0f32; 8]; 8];
    for (u, row) in m.iter_mut().enumerate() {
        let cu = if u == 0 { (0.125f64).sqrt() } else { 0.5 };
        for (x, v) in row.iter_mut().enumerate() {
            *v = (cu * (((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI) / 16.0).cos()) as f32;
        }
    }
    m
}

struct BlockCoder<'a> {
    dct: [[f32; 8]; 8],
    writer: &'a mut BitWriter,
}

impl BlockCoder<'_> {
    /// Forward DCT, quantization and entropy coding of one level-shifted block.
    fn code(&mut self, block: &[f32; 64], quant: &[u16; 64], dc: &Huffman, ac: &Huffman, pred: &mut i32) {
        let mut tmp = [0.0f32; 64];
        for y in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for x in 0..8 {
                    s += self.dct[u][x] * block[y * 8 + x];
                }
                tmp[y * 8 + u] = s;
            }
        }
        let mut coef = [0i32; 64];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    s += self.dct[v][y] * tmp[y * 8 + u];
                }
                let q = quant[v * 8 + u] as f32;
                coef[v * 8 + u] = (s / q).round() as i32;
            }
        }

        let diff = coef[0] - *pred;
        *pred = coef[0];
        let cat = magnitude_category(diff);
        let (c, l) = dc.codes[cat as usize];
        self.writer.put(c as u32, l as u32);
        if cat > 0 {
            let bits = if diff < 0 { diff - 1 } else { diff };
            self.writer.put(bits as u32, cat);
        }

        let mut run = 0;
        for &zz in &ZIGZAG[1..] {
            let v = coef[zz];
            if v == 0 {
                run += 1;
                continue;
            }
            while run > 15 {
                let (c, l) = ac.codes[0xF0];
                self.writer.put(c as u32, l as u32);
                run -= 16;
            }
            let cat = magnitude_category(v);
            let (c, l) = ac.codes[((run << 4) | cat) as usize];
            self.writer.put(c as u32, l as u32);
            let bits = if v < 0 { v - 1 } else { v };
            self.writer.put(bits as u32, cat);
            run = 0;
        }
        if run > 0 {
            let (c, l) = ac.codes[0x00];
            self.writer.put(c as u32, l as u32);
        }
    }
}

fn push_marker_segment(out: &mut Vec<u8>, marker: u8, payload: &[u8]) {
    out.extend_from_slice(&[0xFF, marker]);
    out.extend_from_slice(&((payload.len() + 2) as u16).to_be_bytes());
    out.extend_from_slice(payload);
}

/// Encodes an RGB image as a baseline JPEG with 4:2:0 subsampling.
pub fn encode_jpeg(img: &Image, quality: u8) -> Result<Vec<u8>, DegradeError> {
    if !(1..=100).contains(&quality) {
        return Err(DegradeError::InvalidParameter(format!("jpeg quality {quality}")));
    }
    if img.channels() != 3 {
        return Err(DegradeError::InvalidParameter("jpeg needs an RGB image".into()));
    }
    let (w, h) = img.dims();
    if w == 0 || h == 0 || w > 65535 || h > 65535 {
        return Err(DegradeError::InvalidParameter(format!("jpeg dims {w}x{h}")));
    }
    let lq = scaled_quant_table(&LUMA_QUANT, quality);
    let cq = scaled_quant_table(&CHROMA_QUANT, quality);

    let mut out = vec![0xFF, 0xD8];
    push_marker_segment(
        &mut out,
        0xE0,
        &[b'J', b'F', b'I', b'F', 0, 1, 1, 0, 0, 1, 0, 1, 0, 0],
    );
    for (id, table) in [(0u8, &lq), (1u8, &cq)] {
        let mut p = vec![id];
        p.extend(ZIGZAG.iter().map(|&z| table[z] as u8));
        push_marker_segment(&mut out, 0xDB, &p);
    }
    let mut sof = vec![8];
    sof.extend_from_slice(&(h as u16).to_be_bytes());
    sof.extend_from_slice(&(w as u16).to_be_bytes());
    sof.extend_from_slice(&[3, 1, 0x22, 0, 2, 0x11, 1, 3, 0x11, 1]);
    push_marker_segment(&mut out, 0xC0, &sof);
    for (class_id, bits, vals) in [
        (0x00u8, &DC_LUMA_BITS, &DC_LUMA_VALS[..]),
        (0x10, &AC_LUMA_BITS, &AC_LUMA_VALS[..]),
        (0x01, &DC_CHROMA_BITS, &DC_CHROMA_VALS[..]),
        (0x11, &AC_CHROMA_BITS, &AC_CHROMA_VALS[..]),
    ] {
        let mut p = vec![class_id];
        p.extend_from_slice(bits);
        p.extend_from_slice(vals);
        push_marker_segment(&mut out, 0xC4, &p);
    }
    push_marker_segment(&mut out, 0xDA, &[3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0]);

    // Level-shifted YCbCr planes from 8-bit samples, edge replicated.
    let rgb = img.to_u8();
    let sample = |x: usize, y: usize| -> [f32; 3] {
        let i = (y.min(h - 1) * w + x.min(w - 1)) * 3;
        let (r, g, b) = (rgb[i] as f32, rgb[i + 1] as f32, rgb[i + 2] as f32);
        [
            0.299 * r + 0.587 * g + 0.114 * b - 128.0,
            -0.168_736 * r - 0.331_264 * g + 0.5 * b,
            0.5 * r - 0.418_688 * g - 0.081_312 * b,
        ]
    };

    let dc_l = Huffman::new(&DC_LUMA_BITS, &DC_LUMA_VALS);
    let ac_l = Huffman::new(&AC_LUMA_BITS, &AC_LUMA_VALS);
    let dc_c = Huffman::new(&DC_CHROMA_BITS, &DC_CHROMA_VALS);
    let ac_c = Huffman::new(&AC_CHROMA_BITS, &AC_CHROMA_VALS);
    let mut writer = BitWriter {
        out: Vec::new(),
        acc: 0,
        n: 0,
    };
    let mut coder = BlockCoder {
        dct: dct_matrix(),
        writer: &mut writer,
    };
    let (mut pred_y, mut pred_cb, mut pred_cr) = (0, 0, 0);
    let mut mcu = [[0.0f32; 3]; 256];
    for my in (0..h).step_by(16) {
        for mx in (0..w).step_by(16) {
            for y in 0..16 {
                for x in 0..16 {
                    mcu[y * 16 + x] = sample(mx + x, my + y);
                }
            }
            for (bx, by) in [(0, 0), (8, 0), (0, 8), (8, 8)] {
                let mut block = [0.0f32; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        block[y * 8 + x] = mcu[(by + y) * 16 + bx + x][0];
                    }
                }
                coder.code(&block, &lq, &dc_l, &ac_l, &mut pred_y);
            }
            for (plane, pred) in [(1usize, &mut pred_cb), (2, &mut pred_cr)] {
                let mut block = [0.0f32; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let s = |dx: usize, dy: usize| mcu[(2 * y + dy) * 16 + 2 * x + dx][plane];
                        block[y * 8 + x] = 0.25 * (s(0, 0) + s(1, 0) + s(0, 1) + s(1, 1));
                    }
                }
                coder.code(&block, &cq, &dc_c, &ac_c, pred);
            }
        }
    }
    writer.flush();
    out.extend_from_slice(&writer.out);
    out.extend_from_slice(&[0xFF, 0xD9]);
    Ok(out)
}

pub fn decode_jpeg(bytes: &[u8]) -> Result<Image, DegradeError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Jpeg)
        .map_err(|e| DegradeError::Codec(e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Image::from_u8(w as usize, h as usize, 3, img.as_raw()))
}

/// Encode at `quality` and decode back. Single-channel input is processed as
/// gray RGB and returned as luma.
pub fn jpeg_roundtrip(img: &Image, quality: u8) -> Result<Image, DegradeError> {
    match img.channels() {
        3 => decode_jpeg(&encode_jpeg(img, quality)?),
        1 => Ok(decode_jpeg(&encode_jpeg(&img.to_rgb(), quality)?)?.to_luma()),
        n => Err(DegradeError::InvalidParameter(format!("{n}-channel image"))),
    }
}
