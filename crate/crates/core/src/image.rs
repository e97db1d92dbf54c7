//! In-memory rasters and the PNG / PPM codecs.
//!
//! Samples are stored as `f32` intensities in `[0, 1]`, row-major and
//! interleaved by channel. 8-bit conversion only happens at the codec
//! boundary.

use std::fmt;
use std::io::{Cursor, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rec. 601 luma weights used for every graylevel conversion.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// An immutable image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, PartialEq)]
pub struct Raster {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Raster")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Raster {
    /// Builds a raster, rejecting bad shapes and samples outside `[0, 1]`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(height, width, channels)?;
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "expected {} samples for {height}x{width}x{channels}, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!(
                "sample {pos} = {} outside [0, 1]",
                data[pos]
            )));
        }
        Ok(Raster {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a raster and clips every sample into `[0, 1]`. NaN maps to 0.
    pub fn from_clipped(height: usize, width: usize, channels: usize, mut data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "raster buffer length");
        assert!(height > 0 && width > 0 && matches!(channels, 1 | 3));
        for v in &mut data {
            *v = clip(*v);
        }
        Raster {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        check_shape(height, width, channels)?;
        Raster::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Evaluates `f(y, x, c)` for every sample; results are clipped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_shape(height, width, channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Ok(Raster::from_clipped(height, width, channels, data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Copies one channel out as a dense `height * width` plane.
    pub fn plane(&self, c: usize) -> Vec<f32> {
        self.data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Reassembles a raster from per-channel planes, clipping samples.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f32>]) -> Self {
        let channels = planes.len();
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            assert_eq!(plane.len(), height * width);
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Raster::from_clipped(height, width, channels, data)
    }

    /// Applies `f` to every sample, clipping the result.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Raster {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Raster::from_clipped(self.height, self.width, self.channels, data)
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.dims() == other.dims()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

fn check_shape(height: usize, width: usize, channels: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!(
            "raster dimensions must be positive, got {height}x{width}"
        )));
    }
    if !matches!(channels, 1 | 3) {
        return Err(Error::Dimension(format!(
            "channel count must be 1 or 3, got {channels}"
        )));
    }
    Ok(())
}

#[inline]
pub(crate) fn clip(v: f32) -> f32 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (clip(v) * 255.0).round() as u8
}

/// Stable identifier for one image within a run.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageId(pub String);

impl ImageId {
    pub fn new(id: impl Into<String>) -> Self {
        ImageId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageId {
    fn from(s: &str) -> Self {
        ImageId(s.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    /// Picks a format from a file extension; anything but `.ppm`/`.pgm` is PNG.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ppm") | Some("pgm") | Some("pnm") => ImageFormat::Ppm,
            _ => ImageFormat::Png,
        }
    }
}

/// Decodes a PNG or binary PPM/PGM stream, sniffing the format from its magic.
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        decode_pnm(bytes)
    } else if bytes.len() < 2 {
        Err(Error::Decode {
            offset: bytes.len(),
            message: "stream too short to identify".into(),
        })
    } else {
        Err(Error::Decode {
            offset: 0,
            message: "unrecognized magic bytes (expected PNG or P5/P6)".into(),
        })
    }
}

pub fn encode(img: &Raster, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Png => encode_png(img),
        ImageFormat::Ppm => encode_pnm(img),
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn write_image(img: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(img, ImageFormat::from_path(path));
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn decode_png(bytes: &[u8]) -> Result<Raster> {
    let mut cursor = Cursor::new(bytes);
    let fail = |cursor: &Cursor<&[u8]>, e: png::DecodingError| Error::Decode {
        offset: cursor.position() as usize,
        message: e.to_string(),
    };

    let mut decoder = png::Decoder::new(&mut cursor);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = match decoder.read_info() {
        Ok(r) => r,
        Err(e) => return Err(fail(&cursor, e)),
    };
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "PNG bit depth {depth:?}; only 8-bit is supported"
        )));
    }
    let buf_len = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        offset: 0,
        message: "PNG frame too large".into(),
    })?;
    let mut buf = vec![0u8; buf_len];
    let info = match reader.next_frame(&mut buf) {
        Ok(info) => info,
        Err(e) => {
            drop(reader);
            return Err(fail(&cursor, e));
        }
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = info.line_size;

    let (src_channels, keep) = match color {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat(
                "indexed PNG was not expanded".into(),
            ))
        }
    };
    if src_channels != keep {
        log::warn!("dropping PNG alpha channel");
    }
    let mut data = Vec::with_capacity(h * w * keep);
    for row in buf.chunks(stride).take(h) {
        for px in row[..w * src_channels].chunks(src_channels) {
            data.extend(px[..keep].iter().map(|&b| b as f32 / 255.0));
        }
    }
    Raster::new(h, w, keep, data)
}

fn encode_png(img: &Raster) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let bytes: Vec<u8> = img.data().iter().map(|&v| to_u8(v)).collect();
        // Writing into a Vec cannot fail for a well-formed header.
        let mut writer = enc.write_header().expect("png header");
        writer.write_image_data(&bytes).expect("png data");
    }
    out
}

fn encode_pnm(img: &Raster) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| to_u8(v)));
    out
}

struct PnmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PnmHeader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Decode {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected decimal header field"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("header field out of range"))
    }
}

fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let channels = if bytes[1] == b'6' { 3 } else { 1 };
    let mut hdr = PnmHeader { bytes, pos: 2 };
    let width = hdr.number()?;
    let height = hdr.number()?;
    let maxval = hdr.number()?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "PNM maxval {maxval}; only 8-bit (255) is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(hdr.err("zero image dimension"));
    }
    match bytes.get(hdr.pos) {
        Some(b' ' | b'\t' | b'\r' | b'\n') => hdr.pos += 1,
        _ => return Err(hdr.err("missing whitespace before pixel data")),
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| hdr.err("image dimensions overflow"))?;
    let mut payload = Vec::with_capacity(need.min(1 << 26));
    let available = (&bytes[hdr.pos..]).take(need as u64).read_to_end(&mut payload);
    if available.map_or(true, |n| n < need) {
        return Err(Error::Decode {
            offset: bytes.len(),
            message: format!("truncated pixel data: need {need} bytes"),
        });
    }
    let data = payload.iter().map(|&b| b as f32 / 255.0).collect();
    Raster::new(height, width, channels, data)
}

/// Rec. 601 graylevel conversion; 1-channel inputs are copied through.
pub fn luminance(img: &Raster) -> Raster {
    if img.channels() == 1 {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|px| LUMA_WEIGHTS[0] * px[0] + LUMA_WEIGHTS[1] * px[1] + LUMA_WEIGHTS[2] * px[2])
        .collect();
    Raster::from_clipped(img.height(), img.width(), 1, data)
}
