//! Netpbm image files, ASCII kernel files and atomic writes.
//!
//! Images are 8-bit binary PGM (`P5`, one channel) or PPM (`P6`, three
//! channels) scaled to `[0, 1]` on load. Kernel files are ASCII: a first line
//! `kh kw`, then `kh * kw` whitespace-separated weights, renormalized onto the
//! simplex on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BlurKernel, ImageGrid};

pub fn read_image(path: &Path) -> Result<ImageGrid> {
    decode_netpbm(&fs::read(path)?)
}

pub fn write_image(path: &Path, u: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode_netpbm(u)?)
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported netpbm magic {other:?}"))),
    };
    let width = parse_num(&next_token(bytes, &mut pos)?)?;
    let height = parse_num(&next_token(bytes, &mut pos)?)?;
    let maxval = parse_num(&next_token(bytes, &mut pos)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("only 8-bit netpbm supported (maxval {maxval})")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Format("truncated raster".into()))?;
    let mut data = vec![0.0; n];
    let plane = width * height;
    for (idx, &b) in raster.iter().enumerate() {
        let (p, c) = (idx / channels, idx % channels);
        data[c * plane + p] = b as f64 / maxval as f64;
    }
    ImageGrid::from_vec(height, width, channels, data)
}

/// Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode_netpbm(u: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match u.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Format(format!("cannot encode {c}-channel image as netpbm"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", u.width(), u.height()).into_bytes();
    let plane = u.plane_len();
    for p in 0..plane {
        for c in 0..u.channels() {
            let v = u.data()[c * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    Ok(out)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated netpbm header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_num(tok: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::Format(format!("bad header number {tok:?}")))
}

pub fn read_kernel(path: &Path) -> Result<BlurKernel> {
    parse_kernel(&fs::read_to_string(path)?)
}

pub fn parse_kernel(text: &str) -> Result<BlurKernel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty kernel file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| Error::Format(format!("bad kernel header {header:?}")))
        })
        .collect::<Result<_>>()?;
    let [kh, kw] = dims[..] else {
        return Err(Error::Format(format!("kernel header needs two numbers: {header:?}")));
    };
    let weights: Vec<f64> = lines
        .flat_map(|l| l.split_whitespace())
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad kernel weight {t:?}"))))
        .collect::<Result<_>>()?;
    BlurKernel::normalized(kh, kw, weights)
}

pub fn format_kernel(k: &BlurKernel) -> String {
    let mut s = format!("{} {}\n", k.height(), k.width());
    for i in 0..k.height() {
        let row: Vec<String> = (0..k.width()).map(|j| format!("{:e}", k.weight(i, j))).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn write_kernel(path: &Path, k: &BlurKernel) -> Result<()> {
    write_atomic(path, format_kernel(k).as_bytes())
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
