//! File formats: PCDT tensors, binary PNM images and key=value manifests.
//!
//! PCDT layout: `b"PCDT"`, version `0x01`, dtype `0x00` (f32), ndim (u8),
//! ndim little-endian u32 extents, then the row-major little-endian f32 payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{checked_len, LabelMap, TensorF};

const MAGIC: &[u8; 4] = b"PCDT";
const VERSION: u8 = 0x01;
const DTYPE_F32: u8 = 0x00;

pub fn encode_tensor(t: &TensorF) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::DimensionOverflow);
    }
    let mut out = Vec::with_capacity(7 + 4 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(DTYPE_F32);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<TensorF> {
    if bytes.len() < 7 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(Error::BadVersion(bytes[4]));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(Error::BadDtype(bytes[5]));
    }
    let ndim = bytes[6] as usize;
    let header = 7 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::BadPayload {
            expected: header,
            found: bytes.len(),
        });
    }
    let shape: Vec<usize> = bytes[7..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = checked_len(&shape)?;
    let expected = n
        .checked_mul(4)
        .and_then(|b| b.checked_add(header))
        .ok_or(Error::DimensionOverflow)?;
    if bytes.len() != expected {
        return Err(Error::BadPayload {
            expected,
            found: bytes.len(),
        });
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    TensorF::new(shape, data)
}

pub fn save_tensor(t: &TensorF, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)?).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<TensorF> {
    let path = path.as_ref();
    decode_tensor(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

struct Pnm<'a> {
    channels: usize,
    height: usize,
    width: usize,
    pixels: &'a [u8],
}

fn parse_pnm(bytes: &[u8]) -> Result<Pnm<'_>> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::MalformedPnm("missing P magic".into()));
    }
    let channels = match bytes[1] {
        b'5' => 1usize,
        b'6' => 3,
        other => return Err(Error::UnsupportedPnm(format!("P{}", other as char))),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::MalformedPnm("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedPnm("expected a number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedPnm("number out of range".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedPnm("missing separator after maxval".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::MalformedPnm(format!(
            "maxval {maxval} (only 255 supported)"
        )));
    }
    let n = channels
        .checked_mul(width)
        .and_then(|v| v.checked_mul(height))
        .ok_or(Error::DimensionOverflow)?;
    if bytes.len() - pos != n {
        return Err(Error::BadPayload {
            expected: n,
            found: bytes.len() - pos,
        });
    }
    Ok(Pnm {
        channels,
        height,
        width,
        pixels: &bytes[pos..],
    })
}

fn pnm_header(magic: &str, width: usize, height: usize) -> Vec<u8> {
    format!("{magic}\n{width} {height}\n255\n").into_bytes()
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decode a P5 or P6 image into `[C,H,W]` with values in `[0,1]`.
pub fn decode_pnm(bytes: &[u8]) -> Result<TensorF> {
    let pnm = parse_pnm(bytes)?;
    let plane = pnm.height * pnm.width;
    let mut data = vec![0.0; pnm.channels * plane];
    // PNM interleaves channels per pixel
    for (i, &b) in pnm.pixels.iter().enumerate() {
        let (p, c) = (i / pnm.channels, i % pnm.channels);
        data[c * plane + p] = b as f64 / 255.0;
    }
    TensorF::new(vec![pnm.channels, pnm.height, pnm.width], data)
}

/// Encode a 1- or 3-channel `[C,H,W]` image; values are clamped and rounded to 1/255 steps.
pub fn encode_pnm(t: &TensorF) -> Result<Vec<u8>> {
    let (c, h, w) = t.chw()?;
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::Shape(format!("PNM needs 1 or 3 channels, got {c}"))),
    };
    let plane = h * w;
    let mut out = pnm_header(magic, w, h);
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(quantize(t.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<TensorF> {
    let t = decode_pnm(&read(path.as_ref())?)?;
    if t.shape()[0] != 1 {
        return Err(Error::UnsupportedPnm("P6 where P5 expected".into()));
    }
    Ok(t)
}

pub fn save_pgm(t: &TensorF, path: impl AsRef<Path>) -> Result<()> {
    if t.chw()?.0 != 1 {
        return Err(Error::Shape("save_pgm needs a single channel".into()));
    }
    write(path.as_ref(), &encode_pnm(t)?)
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<TensorF> {
    let t = decode_pnm(&read(path.as_ref())?)?;
    if t.shape()[0] != 3 {
        return Err(Error::UnsupportedPnm("P5 where P6 expected".into()));
    }
    Ok(t)
}

pub fn save_ppm(t: &TensorF, path: impl AsRef<Path>) -> Result<()> {
    if t.chw()?.0 != 3 {
        return Err(Error::Shape("save_ppm needs three channels".into()));
    }
    write(path.as_ref(), &encode_pnm(t)?)
}

/// Label maps are P5 files whose bytes are raw class indices.
pub fn save_label_pgm(labels: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let mut out = pnm_header("P5", labels.width(), labels.height());
    out.extend_from_slice(labels.labels());
    write(path.as_ref(), &out)
}

pub fn load_label_pgm(path: impl AsRef<Path>, classes: usize) -> Result<LabelMap> {
    let bytes = read(path.as_ref())?;
    let pnm = parse_pnm(&bytes)?;
    if pnm.channels != 1 {
        return Err(Error::UnsupportedPnm("label maps must be P5".into()));
    }
    LabelMap::new(pnm.height, pnm.width, classes, pnm.pixels.to_vec())
}

/// Ordered key=value text; `#` starts a comment line.
pub type KeyValues = BTreeMap<String, String>;

pub fn parse_key_values(text: &str, path: &Path) -> Result<KeyValues> {
    let mut map = KeyValues::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::KeyValue {
            path: path.to_path_buf(),
            msg: format!("line {} has no '='", n + 1),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn load_key_values(path: impl AsRef<Path>) -> Result<KeyValues> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

pub fn format_key_values(kv: &KeyValues) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn save_key_values(kv: &KeyValues, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), format_key_values(kv).as_bytes())
}

pub fn kv_get<T: std::str::FromStr>(kv: &KeyValues, key: &str, path: &Path) -> Result<T> {
    let raw = kv.get(key).ok_or_else(|| Error::KeyValue {
        path: path.to_path_buf(),
        msg: format!("missing key {key}"),
    })?;
    raw.parse().map_err(|_| Error::KeyValue {
        path: path.to_path_buf(),
        msg: format!("bad value for {key}: {raw}"),
    })
}

pub fn create_dir(path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    write(path.as_ref(), text.as_bytes())
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
