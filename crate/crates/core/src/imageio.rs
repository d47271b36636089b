//! Raster containers and the Netpbm (P2/P3/P5/P6) codec.
//!
//! Every dataset file enters the pipeline through [`read_pnm`]. Color images
//! keep their 8-bit samples; gray images are stored as reals in `[0, 1]`;
//! masks and segmentations are boolean rasters.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Quantize a unit-interval intensity to the 256-level scale.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "dimensions must be positive, got {width}x{height}"
        )));
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::InvalidImage(format!(
            "{width}x{height} image needs {} pixels, got {len}",
            width.saturating_mul(height)
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Replicate a gray image into all three channels.
    pub fn from_gray(gray: &GrayImage) -> Self {
        let data = gray
            .data
            .iter()
            .map(|&v| {
                let q = quantize(v);
                [q, q, q]
            })
            .collect();
        Self {
            width: gray.width,
            height: gray.height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    /// Values must lie in `[0, 1]`.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidImage(format!(
                "gray value {v} at index {i} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    /// Build from arbitrary reals by clamping into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self::new(width, height, data)
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(width * height, data.len());
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.data
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Result<Self> {
        Self::new(width, height, vec![value; width.saturating_mul(height)])
    }

    pub(crate) fn from_raw(width: usize, height: usize, data: Vec<bool>) -> Self {
        debug_assert_eq!(width * height, data.len());
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// 0.0 / 1.0 rendering, used where metrics treat masks as intensities.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(
            self.width,
            self.height,
            self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
    }
}

/// Result of decoding a PNM file.
#[derive(Debug, Clone, PartialEq)]
pub enum PnmImage {
    Rgb(RgbImage),
    Gray(GrayImage),
}

impl PnmImage {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            PnmImage::Rgb(img) => img.dims(),
            PnmImage::Gray(img) => img.dims(),
        }
    }

    /// Color view of the image; gray inputs are replicated into R, G and B.
    pub fn into_rgb(self) -> RgbImage {
        match self {
            PnmImage::Rgb(img) => img,
            PnmImage::Gray(img) => RgbImage::from_gray(&img),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmFormat {
    Ascii,
    Binary,
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderReader<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len()
                        && self.bytes[self.pos] != b'\n'
                        && self.bytes[self.pos] != b'\r'
                    {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn next_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if start >= self.bytes.len() {
                Error::decode(start, format!("unexpected end of data reading {what}"))
            } else {
                Error::decode(
                    start,
                    format!("expected decimal {what}, found byte 0x{:02x}", self.bytes[start]),
                )
            });
        }
        // digits only, so the slice is valid ASCII
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse::<usize>()
            .map_err(|_| Error::decode(start, format!("{what} out of range")))
    }
}

/// Decode a P2/P3/P5/P6 image.
///
/// Color files (P3/P6) keep 8-bit samples, rescaled from `maxval` when it is
/// not 255. Gray files (P2/P5) become `v / maxval`.
pub fn read_pnm(bytes: &[u8]) -> Result<PnmImage> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::decode(0, "missing PNM magic number"));
    }
    let (channels, binary) = match bytes[1] {
        b'2' => (1, false),
        b'3' => (3, false),
        b'5' => (1, true),
        b'6' => (3, true),
        other => {
            return Err(Error::decode(
                1,
                format!("unsupported PNM variant P{}", other as char),
            ))
        }
    };
    let mut reader = HeaderReader { bytes, pos: 2 };
    if reader.pos < bytes.len() && !bytes[reader.pos].is_ascii_whitespace() && bytes[reader.pos] != b'#' {
        return Err(Error::decode(2, "magic number must be followed by whitespace"));
    }
    reader.skip_whitespace_and_comments();
    let width_offset = reader.pos;
    let width = reader.next_uint("width")?;
    let height = reader.next_uint("height")?;
    if width == 0 || height == 0 {
        return Err(Error::decode(width_offset, format!("empty image {width}x{height}")));
    }
    reader.skip_whitespace_and_comments();
    let maxval_offset = reader.pos;
    let maxval = reader.next_uint("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::decode(
            maxval_offset,
            format!("maxval {maxval} not in 1..=255"),
        ));
    }
    let samples = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| Error::decode(width_offset, "image dimensions overflow"))?;

    let raw: Vec<u8> = if binary {
        // exactly one whitespace byte separates the header from the raster
        match bytes.get(reader.pos) {
            Some(c) if c.is_ascii_whitespace() => reader.pos += 1,
            Some(_) => return Err(Error::decode(reader.pos, "maxval must be followed by whitespace")),
            None => return Err(Error::decode(reader.pos, "truncated payload: no raster data")),
        }
        let start = reader.pos;
        let available = bytes.len() - start;
        if available < samples {
            return Err(Error::decode(
                bytes.len(),
                format!("truncated payload: expected {samples} bytes, found {available}"),
            ));
        }
        let payload = &bytes[start..start + samples];
        if let Some(i) = payload.iter().position(|&b| b as usize > maxval) {
            return Err(Error::decode(start + i, format!("sample exceeds maxval {maxval}")));
        }
        payload.to_vec()
    } else {
        let mut out = Vec::with_capacity(samples);
        for _ in 0..samples {
            reader.skip_whitespace_and_comments();
            let offset = reader.pos;
            let v = reader.next_uint("sample")?;
            if v > maxval {
                return Err(Error::decode(offset, format!("sample {v} exceeds maxval {maxval}")));
            }
            out.push(v as u8);
        }
        out
    };

    if channels == 3 {
        let rescale = |v: u8| -> u8 {
            if maxval == 255 {
                v
            } else {
                ((v as f64) * 255.0 / maxval as f64).round() as u8
            }
        };
        let data = raw
            .chunks_exact(3)
            .map(|c| [rescale(c[0]), rescale(c[1]), rescale(c[2])])
            .collect();
        Ok(PnmImage::Rgb(RgbImage {
            width,
            height,
            data,
        }))
    } else {
        let scale = maxval as f64;
        let data = raw.iter().map(|&v| v as f64 / scale).collect();
        Ok(PnmImage::Gray(GrayImage {
            width,
            height,
            data,
        }))
    }
}

/// Rasters that can be serialized as PNM.
pub trait WritePnm {
    fn write_pnm(&self, format: PnmFormat) -> Vec<u8>;
}

fn encode(width: usize, height: usize, channels: usize, samples: &[u8], format: PnmFormat) -> Vec<u8> {
    let magic = match (channels, format) {
        (1, PnmFormat::Ascii) => "P2",
        (1, PnmFormat::Binary) => "P5",
        (3, PnmFormat::Ascii) => "P3",
        (3, PnmFormat::Binary) => "P6",
        _ => unreachable!("only gray and RGB rasters are encoded"),
    };
    let mut header = format!("{magic}\n{width} {height}\n255\n");
    match format {
        PnmFormat::Binary => {
            let mut out = header.into_bytes();
            out.extend_from_slice(samples);
            out
        }
        PnmFormat::Ascii => {
            for row in samples.chunks(width * channels) {
                let mut line = String::with_capacity(row.len() * 4);
                for (i, s) in row.iter().enumerate() {
                    if i > 0 {
                        line.push(' ');
                    }
                    let _ = write!(line, "{s}");
                }
                header.push_str(&line);
                header.push('\n');
            }
            header.into_bytes()
        }
    }
}

impl WritePnm for RgbImage {
    fn write_pnm(&self, format: PnmFormat) -> Vec<u8> {
        let samples: Vec<u8> = self.data.iter().flatten().copied().collect();
        encode(self.width, self.height, 3, &samples, format)
    }
}

impl WritePnm for GrayImage {
    fn write_pnm(&self, format: PnmFormat) -> Vec<u8> {
        let samples: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        encode(self.width, self.height, 1, &samples, format)
    }
}

impl WritePnm for BinaryImage {
    fn write_pnm(&self, format: PnmFormat) -> Vec<u8> {
        let samples: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode(self.width, self.height, 1, &samples, format)
    }
}

pub fn write_pnm<I: WritePnm + ?Sized>(image: &I, format: PnmFormat) -> Vec<u8> {
    image.write_pnm(format)
}

pub fn read_pnm_file(path: impl AsRef<Path>) -> Result<PnmImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_pnm(&bytes)
}

pub fn write_pnm_file<I: WritePnm + ?Sized>(
    path: impl AsRef<Path>,
    image: &I,
    format: PnmFormat,
) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, image.write_pnm(format)).map_err(|e| Error::io(path, e))
}

/// Binarize a field-of-view or ground-truth image: a pixel is set iff its
/// luminance exceeds one half.
pub fn load_mask(image: &PnmImage) -> BinaryImage {
    match image {
        PnmImage::Gray(img) => BinaryImage::from_raw(
            img.width,
            img.height,
            img.data.iter().map(|&v| v > 0.5).collect(),
        ),
        PnmImage::Rgb(img) => BinaryImage::from_raw(
            img.width,
            img.height,
            img.data
                .iter()
                .map(|&[r, g, b]| {
                    let luma = (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0;
                    luma > 0.5
                })
                .collect(),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p5_header_semantics() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        let PnmImage::Gray(img) = read_pnm(&bytes).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!(img.dims(), (2, 2));
        assert_eq!(img.pixels(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn p3_ascii_single_pixel() {
        let PnmImage::Rgb(img) = read_pnm(b"P3 1 1 255 10 20 30").unwrap() else {
            panic!("expected rgb")
        };
        assert_eq!(img.pixels(), &[[10, 20, 30]]);
    }

    #[test]
    fn header_comments_and_whitespace() {
        let bytes = b"P2\n# created by hand\n3 # width\n 1\n\t# max\n15\n0 15\n  5\n";
        let PnmImage::Gray(img) = read_pnm(bytes).unwrap() else {
            panic!("expected gray")
        };
        assert_eq!(img.pixels(), &[0.0, 1.0, 5.0 / 15.0]);
    }

    #[test]
    fn color_maxval_is_rescaled() {
        let PnmImage::Rgb(img) = read_pnm(b"P3 1 1 15 15 0 5").unwrap() else {
            panic!("expected rgb")
        };
        assert_eq!(img.pixels(), &[[255, 0, 85]]);
    }

    #[test]
    fn rejects_wide_maxval() {
        let err = read_pnm(b"P5 1 1 65535\n\x00\x00").unwrap_err();
        assert!(matches!(err, Error::Decode { offset: 7, .. }), "{err}");
    }

    #[test]
    fn truncated_payload_names_offset() {
        let err = read_pnm(b"P6 2 1 255\n\x01\x02\x03").unwrap_err();
        match err {
            Error::Decode { offset, message } => {
                assert_eq!(offset, 14);
                assert!(message.contains("truncated"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(read_pnm(b"").is_err());
        assert!(read_pnm(b"P4 1 1\n\x00").is_err());
        assert!(read_pnm(b"P5 x 1 255\n\x00").is_err());
        assert!(read_pnm(b"P5 0 1 255\n").is_err());
        assert!(read_pnm(b"P2 2 1 255 3").is_err());
        assert!(read_pnm(b"P2 1 1 10 11").is_err());
        assert!(read_pnm(b"P5 1 1 100\n\xff").is_err());
    }

    #[test]
    fn ignores_trailing_bytes() {
        let PnmImage::Gray(img) = read_pnm(b"P5 1 1 255\n\x07trailing").unwrap() else {
            panic!("expected gray")
        };
        assert_eq!(img.pixels(), &[7.0 / 255.0]);
    }

    #[test]
    fn binary_image_writes_0_255() {
        let img = BinaryImage::new(2, 1, vec![true, false]).unwrap();
        let bytes = write_pnm(&img, PnmFormat::Binary);
        assert_eq!(&bytes[bytes.len() - 2..], &[255, 0]);
        let PnmImage::Gray(back) = read_pnm(&bytes).unwrap() else {
            panic!()
        };
        assert_eq!(load_mask(&PnmImage::Gray(back)), img);
    }

    #[test]
    fn gray_half_quantizes_to_128() {
        let img = GrayImage::new(1, 1, vec![0.5]).unwrap();
        let bytes = write_pnm(&img, PnmFormat::Binary);
        assert_eq!(*bytes.last().unwrap(), 128);
    }

    #[test]
    fn mask_threshold() {
        let white = PnmImage::Gray(GrayImage::filled(3, 2, 1.0).unwrap());
        assert_eq!(load_mask(&white).count_true(), 6);
        let black = PnmImage::Gray(GrayImage::filled(3, 2, 0.0).unwrap());
        assert_eq!(load_mask(&black).count_true(), 0);
        let mixed = PnmImage::Gray(GrayImage::new(2, 1, vec![0.6, 0.4]).unwrap());
        assert_eq!(load_mask(&mixed).pixels(), &[true, false]);
        let rgb = PnmImage::Rgb(RgbImage::new(2, 1, vec![[255, 255, 255], [10, 10, 10]]).unwrap());
        assert_eq!(load_mask(&rgb).pixels(), &[true, false]);
    }

    #[test]
    fn constructors_validate() {
        assert!(GrayImage::new(2, 2, vec![0.0; 3]).is_err());
        assert!(GrayImage::new(1, 1, vec![1.5]).is_err());
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(BinaryImage::new(1, 2, vec![true]).is_err());
    }

    fn arb_rgb() -> impl Strategy<Value = RgbImage> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<[u8; 3]>(), w * h)
                .prop_map(move |data| RgbImage::new(w, h, data).unwrap())
        })
    }

    fn arb_quantized_gray() -> impl Strategy<Value = GrayImage> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h).prop_map(move |data| {
                GrayImage::new(w, h, data.into_iter().map(|v| v as f64 / 255.0).collect()).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn rgb_round_trip(img in arb_rgb(), ascii in any::<bool>()) {
            let format = if ascii { PnmFormat::Ascii } else { PnmFormat::Binary };
            let bytes = write_pnm(&img, format);
            prop_assert_eq!(read_pnm(&bytes).unwrap(), PnmImage::Rgb(img.clone()));
            if !ascii {
                prop_assert_eq!(write_pnm(&read_pnm(&bytes).unwrap().into_rgb(), format), bytes);
            }
        }

        #[test]
        fn gray_round_trip(img in arb_quantized_gray(), ascii in any::<bool>()) {
            let format = if ascii { PnmFormat::Ascii } else { PnmFormat::Binary };
            let bytes = write_pnm(&img, format);
            prop_assert_eq!(read_pnm(&bytes).unwrap(), PnmImage::Gray(img));
        }

        #[test]
        fn truncation_never_panics(img in arb_rgb(), cut in 0usize..64) {
            let bytes = write_pnm(&img, PnmFormat::Binary);
            let cut = cut.min(bytes.len());
            let _ = read_pnm(&bytes[..bytes.len() - cut]);
        }
    }
}
