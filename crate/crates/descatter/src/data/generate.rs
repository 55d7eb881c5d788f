//! Deterministic speckle-object dataset generation: one prepared channel per
//! dataset, one derived random stream per sample.

use rand::Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optics::{
    free_channel, render_glyph, resize_bilinear, Channel, ChannelConfig, GlyphSpec, Image,
};

use super::dataset::{DatasetManifest, SamplePair, FORMAT_VERSION};
use super::idx::read_idx_images;
use super::rng::derive_rng;

/// Where object images come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObjectSource {
    /// Procedural glyphs over the given symbol alphabet, cycled in order
    /// with per-sample style seeds.
    Glyphs { symbols: Vec<char> },
    /// Images from an IDX file, upsampled to the dataset side.
    Idx { path: std::path::PathBuf },
}

impl ObjectSource {
    pub fn digits() -> Self {
        ObjectSource::Glyphs {
            symbols: ('0'..='9').collect(),
        }
    }

    pub fn letters(letters: &str) -> Self {
        ObjectSource::Glyphs {
            symbols: letters.chars().collect(),
        }
    }

    /// Parses the CLI form: `glyphs` or `idx:PATH`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "glyphs" {
            return Ok(ObjectSource::digits());
        }
        if let Some(path) = s.strip_prefix("idx:") {
            return Ok(ObjectSource::Idx { path: path.into() });
        }
        Err(Error::Config(format!(
            "unknown source {s:?} (expected `glyphs` or `idx:PATH`)"
        )))
    }

    pub fn describe(&self) -> String {
        match self {
            ObjectSource::Glyphs { symbols } => {
                if symbols.iter().copied().eq('0'..='9') {
                    "glyphs".to_string()
                } else {
                    format!("glyphs:{}", symbols.iter().collect::<String>())
                }
            }
            ObjectSource::Idx { path } => format!("idx:{}", path.display()),
        }
    }
}

/// Full recipe for one dataset.
#[derive(Clone, Debug)]
pub struct GenSpec {
    pub n: usize,
    pub count: usize,
    pub master_seed: u64,
    pub channel: ChannelConfig,
    pub source: ObjectSource,
    /// Offset added to the per-sample stream index; lets test sets draw
    /// object styles disjoint from a training set generated with the same
    /// master seed.
    pub index_offset: u64,
}

/// Generates `count` speckle-object pairs plus the manifest describing them.
/// The object arm is `free_channel` of the source image; the speckle arm is
/// the configured channel's output for the same source image.
pub fn generate_dataset(spec: &GenSpec) -> Result<(Vec<SamplePair>, DatasetManifest)> {
    let channel = Channel::new(&spec.channel, spec.n)?;
    let idx_images = match &spec.source {
        ObjectSource::Idx { path } => Some(load_idx_objects(path, spec.n)?),
        ObjectSource::Glyphs { .. } => None,
    };
    let mut pairs = Vec::with_capacity(spec.count);
    let mut source_ids = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let stream_index = spec.index_offset + i as u64;
        let (img, source_id) = match &spec.source {
            ObjectSource::Glyphs { symbols } => {
                if symbols.is_empty() {
                    return Err(Error::Config("glyph source has an empty alphabet".into()));
                }
                let symbol = symbols[i % symbols.len()];
                let style_seed = derive_rng(spec.master_seed, stream_index).gen::<u64>();
                let img = render_glyph(&GlyphSpec { symbol, style_seed }, spec.n)?;
                let kind = if symbol.is_ascii_digit() { "digit" } else { "letter" };
                (img, format!("{kind}-{symbol}/seed-{style_seed}"))
            }
            ObjectSource::Idx { path } => {
                let images = idx_images.as_ref().expect("loaded above");
                let pick = derive_rng(spec.master_seed, stream_index).gen_range(0..images.len());
                (
                    images[pick].clone(),
                    format!("idx-{pick}@{}", path.display()),
                )
            }
        };
        pairs.push(SamplePair {
            object: free_channel(&img),
            speckle: channel.apply(&img)?,
            channel_tag: spec.channel.kind,
            source_id: source_id.clone(),
        });
        source_ids.push(source_id);
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n: spec.n,
        count: spec.count,
        channel: spec.channel.kind,
        channel_config: spec.channel,
        master_seed: spec.master_seed,
        source: spec.source.describe(),
        source_ids,
    };
    Ok((pairs, manifest))
}

fn load_idx_objects(path: &Path, n: usize) -> Result<Vec<Image>> {
    let raw = read_idx_images(path)?;
    if raw.is_empty() {
        return Err(Error::Config(format!(
            "IDX file {} contains no images",
            path.display()
        )));
    }
    raw.iter().map(|img| resize_bilinear(img, n)).collect()
}
