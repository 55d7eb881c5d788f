//! On-disk dataset layout: a `manifest` text file (`key = value` lines,
//! UTF-8) plus one little-endian binary blob per speckle-object pair.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::optics::{ChannelConfig, ChannelKind, Image};

use super::write_atomic;

pub const PAIR_MAGIC: &[u8; 8] = b"DSPAIR01";
pub const FORMAT_VERSION: u32 = 1;

/// One training or test sample: the reference-arm object and its speckle.
#[derive(Clone, Debug)]
pub struct SamplePair {
    pub object: Image,
    pub speckle: Image,
    pub channel_tag: ChannelKind,
    /// Provenance of the object image, e.g. `digit-3/seed-17` or `idx-204`.
    pub source_id: String,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n: usize,
    pub count: usize,
    pub channel: ChannelKind,
    pub channel_config: ChannelConfig,
    pub master_seed: u64,
    /// Object source: `glyphs` or `idx:<path>`.
    pub source: String,
    pub source_ids: Vec<String>,
}

pub fn pair_file_name(index: usize) -> String {
    format!("pair-{index:05}.bin")
}

fn manifest_text(m: &DatasetManifest) -> String {
    let mut s = String::new();
    s.push_str(&format!("format_version = {}\n", m.format_version));
    s.push_str(&format!("n = {}\n", m.n));
    s.push_str(&format!("count = {}\n", m.count));
    s.push_str(&format!("channel = {}\n", m.channel));
    s.push_str(&format!("master_seed = {}\n", m.master_seed));
    s.push_str(&format!("source = {}\n", m.source));
    let c = &m.channel_config;
    s.push_str(&format!("channel_seed = {}\n", c.seed));
    s.push_str(&format!("corr_len_px = {}\n", c.diffuser.corr_len_px));
    s.push_str(&format!("z = {}\n", c.diffuser.z));
    s.push_str(&format!("rotation_deg = {}\n", c.diffuser.rotation_deg));
    s.push_str(&format!("screen_oversize = {}\n", c.diffuser.screen_oversize));
    s.push_str(&format!("modes = {}\n", c.mmf.modes));
    for (i, id) in m.source_ids.iter().enumerate() {
        s.push_str(&format!("source_id.{i} = {id}\n"));
    }
    s
}

/// Parses `key = value` lines; later keys win, blank lines and `#` comments
/// are ignored.
pub fn parse_key_values(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

fn get<'a>(
    map: &'a BTreeMap<String, String>,
    key: &str,
    path: &Path,
) -> Result<&'a str> {
    map.get(key).map(|s| s.as_str()).ok_or_else(|| {
        Error::format(path, 0, format!("manifest is missing key {key:?}"))
    })
}

fn parse_field<T: std::str::FromStr>(s: &str, key: &str, path: &Path) -> Result<T> {
    s.parse().map_err(|_| {
        Error::format(path, 0, format!("manifest key {key:?} has invalid value {s:?}"))
    })
}

fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path)?;
    let map = parse_key_values(&text);
    let version: u32 = parse_field(get(&map, "format_version", path)?, "format_version", path)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(
            path,
            0,
            format!("unsupported format_version {version} (this build reads {FORMAT_VERSION})"),
        ));
    }
    let n = parse_field(get(&map, "n", path)?, "n", path)?;
    let count: usize = parse_field(get(&map, "count", path)?, "count", path)?;
    let channel: ChannelKind = get(&map, "channel", path)?.parse()?;
    let master_seed = parse_field(get(&map, "master_seed", path)?, "master_seed", path)?;
    let source = get(&map, "source", path)?.to_string();
    let channel_config = ChannelConfig {
        kind: channel,
        seed: parse_field(get(&map, "channel_seed", path)?, "channel_seed", path)?,
        diffuser: crate::optics::DiffuserParams {
            corr_len_px: parse_field(get(&map, "corr_len_px", path)?, "corr_len_px", path)?,
            z: parse_field(get(&map, "z", path)?, "z", path)?,
            rotation_deg: parse_field(get(&map, "rotation_deg", path)?, "rotation_deg", path)?,
            screen_oversize: parse_field(
                get(&map, "screen_oversize", path)?,
                "screen_oversize",
                path,
            )?,
        },
        mmf: crate::optics::MmfParams {
            modes: parse_field(get(&map, "modes", path)?, "modes", path)?,
        },
    };
    let mut source_ids = Vec::with_capacity(count);
    for i in 0..count {
        let key = format!("source_id.{i}");
        source_ids.push(get(&map, &key, path)?.to_string());
    }
    Ok(DatasetManifest {
        format_version: version,
        n,
        count,
        channel,
        channel_config,
        master_seed,
        source,
        source_ids,
    })
}

fn encode_pair(pair: &SamplePair) -> Vec<u8> {
    let n = pair.object.n();
    let mut buf = Vec::with_capacity(8 + 4 + 2 * n * n * 4);
    buf.extend_from_slice(PAIR_MAGIC);
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for img in [&pair.object, &pair.speckle] {
        for &p in img.pixels() {
            buf.extend_from_slice(&p.to_le_bytes());
        }
    }
    buf
}

/// Reads one pair blob. The channel tag and source id live in the manifest,
/// so they are supplied by the caller.
pub fn read_pair_file(path: &Path, tag: ChannelKind, source_id: &str) -> Result<SamplePair> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            "truncated: shorter than the 12-byte header",
        ));
    }
    if &bytes[..8] != PAIR_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic {:?} (expected {PAIR_MAGIC:?})", &bytes[..8]),
        ));
    }
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 2 * n * n * 4;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            bytes.len() as u64,
            format!("expected {expected} bytes for side {n}, file has {}", bytes.len()),
        ));
    }
    let mut read_image = |offset: usize| -> Result<Image> {
        let mut pixels = Vec::with_capacity(n * n);
        for i in 0..n * n {
            let at = offset + i * 4;
            pixels.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
        }
        Image::from_pixels(n, pixels)
    };
    let object = read_image(12)?;
    let speckle = read_image(12 + n * n * 4)?;
    Ok(SamplePair {
        object,
        speckle,
        channel_tag: tag,
        source_id: source_id.to_string(),
    })
}

/// Writes pairs and manifest into `dir`. Each file is written to a
/// temporary name and renamed, so failures never leave partial artifacts
/// under their final names.
pub fn write_dataset(pairs: &[SamplePair], manifest: &DatasetManifest, dir: &Path) -> Result<()> {
    if pairs.len() != manifest.count || manifest.source_ids.len() != manifest.count {
        return Err(Error::Config(format!(
            "manifest declares {} pairs, got {} (and {} source ids)",
            manifest.count,
            pairs.len(),
            manifest.source_ids.len()
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.object.n() != manifest.n || p.speckle.n() != manifest.n {
            return Err(Error::shape(
                "write_dataset",
                format!(
                    "pair {i} has sides {}/{} but the manifest says {}",
                    p.object.n(),
                    p.speckle.n(),
                    manifest.n
                ),
            ));
        }
    }
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("manifest"), manifest_text(manifest).as_bytes())?;
    for (i, p) in pairs.iter().enumerate() {
        write_atomic(&dir.join(pair_file_name(i)), &encode_pair(p))?;
    }
    Ok(())
}

/// Loads a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<(Vec<SamplePair>, DatasetManifest)> {
    let manifest = read_manifest(&dir.join("manifest"))?;
    let mut pairs = Vec::with_capacity(manifest.count);
    for i in 0..manifest.count {
        let path = dir.join(pair_file_name(i));
        let pair = read_pair_file(&path, manifest.channel, &manifest.source_ids[i])?;
        if pair.object.n() != manifest.n {
            return Err(Error::format(
                path,
                8,
                format!(
                    "pair side {} does not match manifest side {}",
                    pair.object.n(),
                    manifest.n
                ),
            ));
        }
        pairs.push(pair);
    }
    Ok((pairs, manifest))
}

/// Dataset root from the `DESCATTER_DATA` environment variable, if set.
pub fn data_root() -> Option<PathBuf> {
    std::env::var_os("DESCATTER_DATA").map(PathBuf::from)
}

/// Resolves a possibly-relative dataset path against `DESCATTER_DATA`.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match data_root() {
        Some(root) => root.join(path),
        None => path.to_path_buf(),
    }
}
