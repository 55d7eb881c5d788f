//! Deterministic dataset generation and persistence, IDX ingestion, model
//! checkpoints, and seeded randomness derivation.

mod checkpoint;
mod dataset;
mod generate;
mod idx;
mod rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use dataset::{
    data_root, pair_file_name, parse_key_values, read_dataset, read_pair_file, resolve_data_path,
    write_dataset, DatasetManifest, SamplePair, FORMAT_VERSION, PAIR_MAGIC,
};
pub use generate::{generate_dataset, GenSpec, ObjectSource};
pub use idx::{
    read_idx, read_idx_images, write_idx_images, IdxFile, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC,
};
pub use rng::derive_rng;

use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Writes a file via a temporary sibling and an atomic rename, so readers
/// never observe a partially written artifact under its final name.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    let tmp = match path.file_name() {
        Some(name) => {
            let mut n = name.to_os_string();
            n.push(".tmp");
            path.with_file_name(n)
        }
        None => {
            return Err(crate::Error::Config(format!(
                "cannot write to {path:?}: not a file path"
            )))
        }
    };
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
