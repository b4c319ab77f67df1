//! Portable float map reader/writer.
//!
//! Grayscale maps use the `Pf` header, 3-channel maps use `PF`. Files are
//! always written little-endian with scale -1.0, and rows are stored
//! bottom-to-top as the format prescribes; big-endian files (positive scale)
//! are accepted on read.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::IoError;
use crate::image::FloatMap;

/// Decoded PFM: `channels` is 1 (`Pf`) or 3 (`PF`); `data` is row-major
/// top-to-bottom, channel-interleaved.
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

fn read_token(reader: &mut impl BufRead) -> Result<String, IoError> {
    let mut token = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        reader.read_exact(&mut byte)?;
        if byte[0].is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(byte[0]);
    }
    String::from_utf8(token).map_err(|_| IoError::format("non-ascii PFM header token"))
}

pub fn read(path: &Path) -> Result<PfmImage, IoError> {
    let mut reader = BufReader::new(File::open(path)?);
    let magic = read_token(&mut reader)?;
    let channels = match magic.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(IoError::format(format!("bad PFM magic {other:?}"))),
    };
    let width: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| IoError::format("bad PFM width"))?;
    let height: usize = read_token(&mut reader)?
        .parse()
        .map_err(|_| IoError::format("bad PFM height"))?;
    let scale: f32 = read_token(&mut reader)?
        .parse()
        .map_err(|_| IoError::format("bad PFM scale"))?;
    if width == 0 || height == 0 {
        return Err(IoError::format("zero PFM dimensions"));
    }
    let little_endian = scale < 0.0;

    let count = width * height * channels;
    let mut buf = vec![0u8; count * 4];
    reader.read_exact(&mut buf)?;
    let mut bottom_up = Vec::with_capacity(count);
    for chunk in buf.chunks_exact(4) {
        let bytes = [chunk[0], chunk[1], chunk[2], chunk[3]];
        bottom_up.push(if little_endian {
            f32::from_le_bytes(bytes)
        } else {
            f32::from_be_bytes(bytes)
        });
    }

    // Flip rows: PFM stores bottom-to-top, in memory we keep top-to-bottom.
    let row_len = width * channels;
    let mut data = Vec::with_capacity(count);
    for y in 0..height {
        let src = (height - 1 - y) * row_len;
        data.extend_from_slice(&bottom_up[src..src + row_len]);
    }
    Ok(PfmImage {
        width,
        height,
        channels,
        data,
    })
}

fn write_raw(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
    data: &[f32],
) -> Result<(), IoError> {
    debug_assert_eq!(data.len(), width * height * channels);
    let mut writer = BufWriter::new(File::create(path)?);
    let magic = if channels == 1 { "Pf" } else { "PF" };
    write!(writer, "{magic}\n{width} {height}\n-1.0\n")?;
    let row_len = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row_len..(y + 1) * row_len] {
            writer.write_all(&v.to_le_bytes())?;
        }
    }
    writer.flush()?;
    Ok(())
}

pub fn write_gray(path: &Path, map: &FloatMap) -> Result<(), IoError> {
    let data: Vec<f32> = map.data().iter().map(|&v| v as f32).collect();
    write_raw(path, map.width(), map.height(), 1, &data)
}

pub fn read_gray(path: &Path) -> Result<FloatMap, IoError> {
    let img = read(path)?;
    if img.channels != 1 {
        return Err(IoError::format(format!(
            "expected grayscale PFM, got {} channels",
            img.channels
        )));
    }
    let data = img.data.iter().map(|&v| v as f64).collect();
    FloatMap::from_vec(img.width, img.height, data)
        .map_err(|e| IoError::format(format!("bad PFM payload: {e}")))
}

/// Write three co-sited maps as one `PF` color image.
pub fn write_rgb(path: &Path, maps: [&FloatMap; 3]) -> Result<(), IoError> {
    let (w, h) = (maps[0].width(), maps[0].height());
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for m in maps {
                data.push(m.get(x, y) as f32);
            }
        }
    }
    write_raw(path, w, h, 3, &data)
}
