//! Model checkpoints: a magic, a length-prefixed architecture block in
//! `key = value` text form, then each parameter as name, rank, dims and
//! 32-bit little-endian values. Loading rebuilds a model whose forward
//! outputs are bitwise identical to the saved one.

use std::fs;
use std::path::Path;

use crate::autodiff::{Parameter, Tensor};
use crate::error::{Error, Result};
use crate::unet::{param_specs, UNetConfig, UNetModel};

use super::dataset::parse_key_values;
use super::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DSCKPT01";

fn arch_text(config: &UNetConfig) -> String {
    format!(
        "format_version = 1\nn = {}\ndepth = {}\nbase_filters = {}\n",
        config.n, config.depth, config.base_filters
    )
}

/// Serializes a model to `path` (atomically).
pub fn save_checkpoint(model: &UNetModel<f32>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let arch = arch_text(&model.config);
    buf.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    buf.extend_from_slice(arch.as_bytes());
    for p in &model.params {
        buf.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.extend_from_slice(&(p.value.shape().len() as u32).to_le_bytes());
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, count: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.at + count {
            return Err(Error::format(
                self.path,
                self.bytes.len() as u64,
                format!("truncated while reading {what} ({count} bytes at offset {})", self.at),
            ));
        }
        let out = &self.bytes[self.at..self.at + count];
        self.at += count;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

/// Loads a checkpoint saved by [`save_checkpoint`]. The parameter list must
/// match the architecture block exactly; every discrepancy is reported.
pub fn load_checkpoint(path: &Path) -> Result<UNetModel<f32>> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        at: 0,
        path,
    };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic (expected {CHECKPOINT_MAGIC:?})"),
        ));
    }
    let arch_len = r.u32("architecture block length")? as usize;
    if arch_len > 4096 {
        return Err(Error::format(
            path,
            8,
            format!("architecture block length {arch_len} is implausible"),
        ));
    }
    let arch = std::str::from_utf8(r.take(arch_len, "architecture block")?)
        .map_err(|_| Error::format(path, 12, "architecture block is not UTF-8"))?;
    let map = parse_key_values(arch);
    let field = |key: &str| -> Result<usize> {
        map.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, 12, format!("architecture block lacks {key:?}")))
    };
    if field("format_version")? != 1 {
        return Err(Error::format(path, 12, "unsupported checkpoint format_version"));
    }
    let config = UNetConfig {
        n: field("n")?,
        depth: field("depth")?,
        base_filters: field("base_filters")?,
    };
    config.validate()?;

    let expected = param_specs(&config);
    let mut params = Vec::with_capacity(expected.len());
    let mut mismatches = Vec::new();
    for (want_name, want_shape) in &expected {
        if r.done() {
            mismatches.push(format!("missing parameter {want_name}"));
            break;
        }
        let name_len = r.u32("parameter name length")? as usize;
        if name_len > 256 {
            return Err(Error::format(
                path,
                (r.at - 4) as u64,
                format!("parameter name length {name_len} is implausible"),
            ));
        }
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| Error::format(path, r.at as u64, "parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32("parameter rank")? as usize;
        if rank > 8 {
            return Err(Error::format(
                path,
                (r.at - 4) as u64,
                format!("parameter rank {rank} is implausible"),
            ));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32("parameter dimension")? as usize);
        }
        let count: usize = dims.iter().product();
        if count > 64 << 20 {
            return Err(Error::format(
                path,
                r.at as u64,
                format!("parameter {name} declares {count} values; refusing"),
            ));
        }
        let raw = r.take(count * 4, "parameter values")?;
        if &name != want_name {
            mismatches.push(format!("expected parameter {want_name}, found {name}"));
        }
        if &dims != want_shape {
            mismatches.push(format!(
                "parameter {name}: expected shape {want_shape:?}, found {dims:?}"
            ));
        }
        if mismatches.is_empty() {
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(Parameter::new(name, Tensor::from_vec(&dims, data)?));
        }
    }
    if !mismatches.is_empty() {
        return Err(Error::ArchMismatch(mismatches));
    }
    if !r.done() {
        return Err(Error::format(
            path,
            r.at as u64,
            "trailing bytes after the last parameter",
        ));
    }
    Ok(UNetModel { config, params })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(seed: u64) -> UNetModel<f32> {
        UNetModel::build(
            UNetConfig {
                n: 16,
                depth: 2,
                base_filters: 2,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn save_load_forward_is_bitwise_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny_model(3);
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        let input = Tensor::filled(&[1, 1, 16, 16], 0.37);
        let a = model.forward(&input).unwrap();
        let b = loaded.forward(&input).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn same_seed_checkpoints_are_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        save_checkpoint(&tiny_model(11), &p1).unwrap();
        save_checkpoint(&tiny_model(11), &p2).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn tampered_dims_yield_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let model = tiny_model(5);
        save_checkpoint(&model, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // first parameter's first dim lives right after its name and rank
        let arch_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let name_len_at = 12 + arch_len;
        let name_len =
            u32::from_le_bytes(bytes[name_len_at..name_len_at + 4].try_into().unwrap()) as usize;
        let dim_at = name_len_at + 4 + name_len + 4;
        bytes[dim_at] = 99;
        fs::write(&path, &bytes).unwrap();
        match load_checkpoint(&path) {
            Err(Error::ArchMismatch(fields)) => assert!(!fields.is_empty()),
            Err(Error::Format { .. }) => {}
            other => panic!("expected structured error, got {other:?}"),
        }
    }

    #[test]
    fn truncation_never_panics() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&tiny_model(7), &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [0, 4, 9, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            let path2 = dir.path().join("cut.ckpt");
            fs::write(&path2, &bytes[..cut]).unwrap();
            assert!(load_checkpoint(&path2).is_err(), "cut at {cut}");
        }
    }
}
