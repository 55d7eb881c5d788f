//! Reader for the IDX binary format used by the MNIST/EMNIST distributions:
//! a big-endian magic, dimension sizes, then raw unsigned bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optics::Image;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Contents of one IDX file.
#[derive(Clone, Debug)]
pub enum IdxFile {
    /// Square images with pixel bytes scaled to `[0, 1]` by 1/255.
    Images(Vec<Image>),
    Labels(Vec<u8>),
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("truncated: expected 4 bytes at offset {offset}"),
        ));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Parses an IDX file, dispatching on the magic number.
pub fn read_idx(path: &Path) -> Result<IdxFile> {
    let bytes = fs::read(path)?;
    let magic = read_u32(&bytes, 0, path)?;
    match magic {
        IDX_IMAGES_MAGIC => {
            let count = read_u32(&bytes, 4, path)? as usize;
            let rows = read_u32(&bytes, 8, path)? as usize;
            let cols = read_u32(&bytes, 12, path)? as usize;
            if rows != cols {
                return Err(Error::format(
                    path,
                    8,
                    format!("only square images are supported, got {rows}x{cols}"),
                ));
            }
            let pixel_bytes = count * rows * cols;
            if bytes.len() != 16 + pixel_bytes {
                return Err(Error::format(
                    path,
                    bytes.len() as u64,
                    format!(
                        "expected {} pixel bytes after the header, file has {}",
                        pixel_bytes,
                        bytes.len().saturating_sub(16)
                    ),
                ));
            }
            let mut images = Vec::with_capacity(count);
            for i in 0..count {
                let start = 16 + i * rows * cols;
                let pixels = bytes[start..start + rows * cols]
                    .iter()
                    .map(|&b| b as f32 / 255.0)
                    .collect();
                images.push(Image::from_pixels(rows, pixels)?);
            }
            Ok(IdxFile::Images(images))
        }
        IDX_LABELS_MAGIC => {
            let count = read_u32(&bytes, 4, path)? as usize;
            if bytes.len() != 8 + count {
                return Err(Error::format(
                    path,
                    bytes.len() as u64,
                    format!(
                        "expected {count} label bytes after the header, file has {}",
                        bytes.len().saturating_sub(8)
                    ),
                ));
            }
            Ok(IdxFile::Labels(bytes[8..].to_vec()))
        }
        other => Err(Error::format(
            path,
            0,
            format!("bad magic 0x{other:08x} (expected 0x00000803 images or 0x00000801 labels)"),
        )),
    }
}

/// Convenience wrapper returning only images.
pub fn read_idx_images(path: &Path) -> Result<Vec<Image>> {
    match read_idx(path)? {
        IdxFile::Images(images) => Ok(images),
        IdxFile::Labels(_) => Err(Error::format(
            path,
            0,
            "expected an image file (magic 0x00000803), found labels",
        )),
    }
}

/// Writes images back out in IDX form; used for fixtures and round-trip
/// checks. Pixels are quantized to bytes by `round(p * 255)`.
pub fn write_idx_images(path: &Path, images: &[Image]) -> Result<()> {
    let n = images.first().map(|i| i.n()).unwrap_or(0);
    let mut buf = Vec::with_capacity(16 + images.len() * n * n);
    buf.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    buf.extend_from_slice(&(images.len() as u32).to_be_bytes());
    buf.extend_from_slice(&(n as u32).to_be_bytes());
    buf.extend_from_slice(&(n as u32).to_be_bytes());
    for img in images {
        if img.n() != n {
            return Err(Error::shape(
                "write_idx_images",
                format!("mixed image sides {} and {n}", img.n()),
            ));
        }
        buf.extend(
            img.pixels()
                .iter()
                .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}
