//! Single-channel and RGB images with values in `[0, 1]`, plus binary
//! netpbm (P5/P6) reading and writing.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major grayscale image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} image with {} values",
                data.len()
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Image::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        Image {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_size(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "image sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Snaps every value onto the 1/255 grid used by the file format.
    pub fn quantized(&self) -> Image {
        self.map(|v| f64::from(quantize(v)) / 255.0)
    }
}

/// Stacks same-size images into an `[N, 1, H, W]` tensor.
pub fn batch_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        first.same_size(im)?;
        data.extend_from_slice(&im.data);
    }
    Tensor::new(vec![images.len(), 1, first.height, first.width], data)
}

/// Splits an `[N, 1, H, W]` tensor back into images.
pub fn tensor_images(t: &Tensor) -> Result<Vec<Image>> {
    let (n, c, h, w) = t.dims4()?;
    if c != 1 {
        return Err(Error::Shape(format!("expected 1 channel, got {c}")));
    }
    Ok((0..n)
        .map(|i| Image {
            width: w,
            height: h,
            data: t.data()[i * h * w..(i + 1) * h * w].to_vec(),
        })
        .collect())
}

/// Interleaved RGB image.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

/// Round-half-up of `255·v`, saturating outside `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (255.0 * v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_pgm(image: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| quantize(v)));
    out
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    for px in &image.data {
        out.extend(px.iter().map(|&v| quantize(v)));
    }
    out
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let bad = |m: &str| Error::Format(format!("netpbm header: {m}"));
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(bad("missing magic"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and `#` comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("expected a number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator before pixel data"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Format(format!(
            "maxval {maxval} not supported (only 255)"
        )));
    }
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }
    Ok(Header {
        magic,
        width,
        height,
        offset: pos + 1,
    })
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P5" {
        return Err(Error::Format(format!(
            "expected P5, got {}",
            String::from_utf8_lossy(&h.magic)
        )));
    }
    let n = h.width * h.height;
    let payload = &bytes[h.offset..];
    if payload.len() < n {
        return Err(Error::Format(format!(
            "truncated payload: {} of {n} bytes",
            payload.len()
        )));
    }
    Image::new(
        h.width,
        h.height,
        payload[..n].iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let h = parse_header(bytes)?;
    if &h.magic != b"P6" {
        return Err(Error::Format("expected P6".into()));
    }
    let n = h.width * h.height;
    let payload = &bytes[h.offset..];
    if payload.len() < 3 * n {
        return Err(Error::Format("truncated payload".into()));
    }
    Ok(RgbImage {
        width: h.width,
        height: h.height,
        data: payload[..3 * n]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]].map(|b| f64::from(b) / 255.0))
            .collect(),
    })
}

pub fn write_pgm(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    decode_pgm(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ppm(image)).map_err(|e| Error::io(path, e))
}
