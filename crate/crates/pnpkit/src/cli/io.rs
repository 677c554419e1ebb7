//! Image file I/O: Netpbm PGM (P2 ASCII / P5 binary, 8- or 16-bit) and a
//! raw little-endian float format with a JSON sidecar.
//!
//! PGM samples are scaled to `[0, 1]` on read (`v / maxval`) and
//! quantized with round-to-nearest on write, so a write/read round trip
//! loses at most `1 / (2·maxval)` per pixel. RAWF64 round trips are
//! bitwise lossless. The RAWF64 sidecar lives at `<path>.json` and holds
//! `{"shape": [...], "dtype": "f64le"}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{PnpError, Result};

fn parse_err(path: &Path, offset: usize, message: impl Into<String>) -> PnpError {
    PnpError::Parse {
        path: path.display().to_string(),
        offset,
        message: message.into(),
    }
}

/// PGM flavor and bit depth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PgmEncoding {
    /// Binary (P5) or ASCII (P2).
    pub binary: bool,
    /// Maximum sample value, 1..=65535; values above 255 use two bytes
    /// per sample (most significant byte first).
    pub maxval: u16,
}

impl Default for PgmEncoding {
    fn default() -> Self {
        Self {
            binary: true,
            maxval: 255,
        }
    }
}

/// Writes a 2D buffer as PGM, clamping to `[0, 1]` and quantizing to
/// `maxval` levels.
pub fn write_pgm(path: &Path, image: &ImageBuffer, enc: PgmEncoding) -> Result<()> {
    if image.ndim() != 2 {
        return Err(PnpError::InvalidArgument {
            name: "image",
            reason: format!("PGM needs a 2D buffer, got {:?}", image.shape()),
        });
    }
    if enc.maxval == 0 {
        return Err(PnpError::InvalidArgument {
            name: "maxval",
            reason: "must be at least 1".into(),
        });
    }
    let (rows, cols) = (image.shape()[0], image.shape()[1]);
    let maxval = enc.maxval as f64;
    let quant = |v: f64| -> u16 { (v.clamp(0.0, 1.0) * maxval).round() as u16 };

    let mut out: Vec<u8> = Vec::new();
    let magic = if enc.binary { "P5" } else { "P2" };
    out.extend_from_slice(format!("{magic}\n{cols} {rows}\n{}\n", enc.maxval).as_bytes());
    if enc.binary {
        if enc.maxval > 255 {
            for &v in image.data() {
                out.extend_from_slice(&quant(v).to_be_bytes());
            }
        } else {
            for &v in image.data() {
                out.push(quant(v) as u8);
            }
        }
    } else {
        let mut line = String::new();
        for &v in image.data() {
            let tok = quant(v).to_string();
            if !line.is_empty() && line.len() + 1 + tok.len() > 70 {
                line.push('\n');
                out.extend_from_slice(line.as_bytes());
                line.clear();
            }
            if !line.is_empty() {
                line.push(' ');
            }
            line.push_str(&tok);
        }
        if !line.is_empty() {
            line.push('\n');
            out.extend_from_slice(line.as_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<(usize, &'a str)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len()
            && !self.bytes[self.pos].is_ascii_whitespace()
            && self.bytes[self.pos] != b'#'
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(parse_err(self.path, start, "unexpected end of header"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .map(|s| (start, s))
            .map_err(|_| parse_err(self.path, start, "non-ASCII header token"))
    }

    fn unsigned(&mut self, what: &str) -> Result<(usize, u64)> {
        let (at, tok) = self.token()?;
        let v = tok
            .parse::<u64>()
            .map_err(|_| parse_err(self.path, at, format!("invalid {what}: {tok:?}")))?;
        Ok((at, v))
    }
}

/// Reads a PGM file (P2 or P5, up to 16-bit) into a `[rows, cols]` buffer
/// scaled to `[0, 1]`. Parse failures report the byte offset of the first
/// unusable input.
pub fn read_pgm(path: &Path) -> Result<ImageBuffer> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };
    let (at, magic) = cur.token()?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        other => return Err(parse_err(path, at, format!("bad magic number {other:?}"))),
    };
    let (_, cols) = cur.unsigned("width")?;
    let (_, rows) = cur.unsigned("height")?;
    let (at_max, maxval) = cur.unsigned("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(parse_err(path, at_max, format!("maxval {maxval} out of range 1..=65535")));
    }
    if rows == 0 || cols == 0 {
        return Err(parse_err(path, at_max, "zero image dimension"));
    }
    let (rows, cols) = (rows as usize, cols as usize);
    let n = rows * cols;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);

    if binary {
        // Exactly one whitespace byte separates the header from the raster.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(parse_err(path, cur.pos, "missing raster separator"));
        }
        cur.pos += 1;
        let two_bytes = maxval > 255;
        let needed = n * if two_bytes { 2 } else { 1 };
        if bytes.len() - cur.pos < needed {
            return Err(parse_err(
                path,
                bytes.len(),
                format!(
                    "truncated raster: need {needed} bytes, have {}",
                    bytes.len() - cur.pos
                ),
            ));
        }
        let raster = &bytes[cur.pos..cur.pos + needed];
        if two_bytes {
            for pair in raster.chunks_exact(2) {
                let v = u16::from_be_bytes([pair[0], pair[1]]);
                if v as u64 > maxval {
                    return Err(parse_err(path, cur.pos, format!("sample {v} exceeds maxval")));
                }
                data.push(v as f64 * scale);
            }
        } else {
            for &b in raster {
                if b as u64 > maxval {
                    return Err(parse_err(path, cur.pos, format!("sample {b} exceeds maxval")));
                }
                data.push(b as f64 * scale);
            }
        }
    } else {
        for _ in 0..n {
            let (at, v) = cur.unsigned("sample")?;
            if v > maxval {
                return Err(parse_err(path, at, format!("sample {v} exceeds maxval")));
            }
            data.push(v as f64 * scale);
        }
    }
    ImageBuffer::new(vec![rows, cols], data)
}

#[derive(Debug, Serialize, Deserialize)]
struct RawSidecar {
    shape: Vec<usize>,
    dtype: String,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}

/// Writes the buffer as little-endian f64 plus a `<path>.json` sidecar.
pub fn write_rawf64(path: &Path, image: &ImageBuffer) -> Result<()> {
    let mut bytes = Vec::with_capacity(image.len() * 8);
    for &v in image.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = RawSidecar {
        shape: image.shape().to_vec(),
        dtype: "f64le".to_string(),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a RAWF64 file and its sidecar; bitwise inverse of
/// [`write_rawf64`].
pub fn read_rawf64(path: &Path) -> Result<ImageBuffer> {
    let sidecar: RawSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if sidecar.dtype != "f64le" {
        return Err(parse_err(
            path,
            0,
            format!("unsupported dtype {:?}", sidecar.dtype),
        ));
    }
    let bytes = fs::read(path)?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != n * 8 {
        return Err(parse_err(
            path,
            bytes.len(),
            format!("expected {} bytes for shape {:?}, found {}", n * 8, sidecar.shape, bytes.len()),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ImageBuffer::new(sidecar.shape, data)
}

/// Reads an image by extension: `.pgm` or `.rawf64`.
pub fn read_image(path: &Path) -> Result<ImageBuffer> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => read_pgm(path),
        Some("rawf64") => read_rawf64(path),
        other => Err(PnpError::InvalidArgument {
            name: "path",
            reason: format!("unsupported image extension {other:?} (use .pgm or .rawf64)"),
        }),
    }
}
