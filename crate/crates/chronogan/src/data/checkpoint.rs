//! Model persistence: "CGN1" binary files.
//!
//! Layout, all integers little-endian u32 and values little-endian f32:
//!
//! ```text
//! magic "CGN1" | version | tensor_count |
//!   per tensor: name_len | name bytes | rank | dims… | values…
//! ```
//!
//! Model parameters use their canonical bundle names. Bookkeeping rides
//! along as reserved tensors prefixed `_`: the dims record, the
//! early-generation selector summary, and an optional config echo. The
//! f64 selector scores are packed byte-per-value into f32 tensors (every
//! u8 is exactly representable), so the round trip stays bit-exact within
//! the all-f32 wire format.

use super::super::nets::{ModelBundle, ModelDims};
use crate::error::{Error, Result};
use crate::seed::stream;
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"CGN1";
const VERSION: u32 = 1;

/// The persisted slice of the early-generation selector: enough to resume
/// comparisons or audit which epoch produced the saved parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EarlyGenSummary {
    /// Epoch whose synthetic output scored best so far.
    pub best_epoch: Option<u64>,
    /// Best (lowest) composite score observed.
    pub total_error: Option<f64>,
    /// Frozen dis/pre proportion from the first evaluation.
    pub p1: Option<f64>,
    /// Frozen dis/mse proportion from the first evaluation.
    pub p2: Option<f64>,
}

/// A loaded checkpoint.
pub struct Checkpoint {
    pub bundle: ModelBundle<f32>,
    pub egs: EarlyGenSummary,
    pub config_json: Option<String>,
}

// ── byte-level helpers ──────────────────────────────────────────────────

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "truncated checkpoint: wanted {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

/// Pack raw bytes as a rank-1 f32 tensor (one byte per value).
fn bytes_tensor(bytes: &[u8]) -> Tensor<f32> {
    Tensor::new(vec![bytes.len()], bytes.iter().map(|&b| b as f32).collect())
        .expect("nonempty byte payloads")
}

fn tensor_bytes(t: &Tensor<f32>) -> Result<Vec<u8>> {
    t.data()
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=255.0).contains(&v) {
                Ok(v as u8)
            } else {
                Err(Error::Format("reserved byte tensor holds non-byte values".into()))
            }
        })
        .collect()
}

/// Option<f64> as 9 bytes: presence flag + IEEE bits.
fn pack_opt_f64(v: Option<f64>) -> [u8; 9] {
    let mut out = [0u8; 9];
    if let Some(x) = v {
        out[0] = 1;
        out[1..].copy_from_slice(&x.to_bits().to_le_bytes());
    }
    out
}

fn unpack_opt_f64(bytes: &[u8]) -> Result<Option<f64>> {
    if bytes.len() != 9 {
        return Err(Error::Format("malformed selector field".into()));
    }
    match bytes[0] {
        0 => Ok(None),
        1 => Ok(Some(f64::from_bits(u64::from_le_bytes(
            bytes[1..].try_into().unwrap(),
        )))),
        _ => Err(Error::Format("malformed selector presence flag".into())),
    }
}

fn pack_opt_u64(v: Option<u64>) -> [u8; 9] {
    let mut out = [0u8; 9];
    if let Some(x) = v {
        out[0] = 1;
        out[1..].copy_from_slice(&x.to_le_bytes());
    }
    out
}

fn unpack_opt_u64(bytes: &[u8]) -> Result<Option<u64>> {
    if bytes.len() != 9 {
        return Err(Error::Format("malformed selector field".into()));
    }
    match bytes[0] {
        0 => Ok(None),
        1 => Ok(Some(u64::from_le_bytes(bytes[1..].try_into().unwrap()))),
        _ => Err(Error::Format("malformed selector presence flag".into())),
    }
}

// ── save / load ─────────────────────────────────────────────────────────

/// Serialize the bundle plus selector summary (and optionally the run
/// configuration) to `path`.
pub fn save_checkpoint(
    bundle: &ModelBundle<f32>,
    egs: &EarlyGenSummary,
    config_json: Option<&str>,
    path: impl AsRef<Path>,
) -> Result<()> {
    bundle.validate()?;
    let named = bundle.named_params();
    let d = &bundle.dims;
    let dims_tensor = Tensor::new(
        vec![6],
        vec![
            d.feature_dim as f32,
            d.latent_dim as f32,
            d.hidden_dim as f32,
            d.noise_dim as f32,
            bundle.encoder.gru_stack.len() as f32,
            bundle.encoder.lstm_stack.len() as f32,
        ],
    )?;
    let mut reserved: Vec<(String, Tensor<f32>)> = vec![
        ("_dims".into(), dims_tensor),
        ("_egs.best_epoch".into(), bytes_tensor(&pack_opt_u64(egs.best_epoch))),
        ("_egs.total_error".into(), bytes_tensor(&pack_opt_f64(egs.total_error))),
        ("_egs.p1".into(), bytes_tensor(&pack_opt_f64(egs.p1))),
        ("_egs.p2".into(), bytes_tensor(&pack_opt_f64(egs.p2))),
    ];
    if let Some(cfg) = config_json {
        reserved.push(("_config_json".into(), bytes_tensor(cfg.as_bytes())));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, (named.len() + reserved.len()) as u32);
    for (name, t) in &named {
        put_tensor(&mut out, name, t);
    }
    for (name, t) in &reserved {
        put_tensor(&mut out, name, t);
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    f.sync_all()?;
    Ok(())
}

fn as_usize(v: f32, what: &str) -> Result<usize> {
    if v.fract() == 0.0 && v >= 1.0 && v <= 1e6 {
        Ok(v as usize)
    } else {
        Err(Error::Format(format!("bad {what} in dims record: {v}")))
    }
}

/// Read a checkpoint back. The file must carry every parameter the dims
/// record implies, with matching shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut r = ByteReader { buf: &buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic: not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = r.u32()? as usize;
    let mut tensors: Vec<(String, Tensor<f32>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        if name_len == 0 || name_len > 4096 {
            return Err(Error::Format(format!("implausible name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(Error::Format(format!("implausible rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32()? as usize);
        }
        let n: usize = dims.iter().product();
        if n == 0 || n > 100_000_000 {
            return Err(Error::Format(format!("implausible tensor size {n}")));
        }
        let mut vals = Vec::with_capacity(n);
        for _ in 0..n {
            vals.push(r.f32()?);
        }
        tensors.push((name, Tensor::new(dims, vals)?));
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after tensor table".into()));
    }
    let find = |name: &str| -> Result<&Tensor<f32>> {
        tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing {name}")))
    };
    let dt = find("_dims")?;
    if dt.shape() != [6] {
        return Err(Error::Format("malformed dims record".into()));
    }
    let dims = ModelDims {
        feature_dim: as_usize(dt.data()[0], "feature_dim")?,
        latent_dim: as_usize(dt.data()[1], "latent_dim")?,
        hidden_dim: as_usize(dt.data()[2], "hidden_dim")?,
        noise_dim: as_usize(dt.data()[3], "noise_dim")?,
    };
    let gru_layers = as_usize(dt.data()[4], "gru_layers")?;
    let lstm_layers = as_usize(dt.data()[5], "lstm_layers")?;
    let egs = EarlyGenSummary {
        best_epoch: unpack_opt_u64(&tensor_bytes(find("_egs.best_epoch")?)?)?,
        total_error: unpack_opt_f64(&tensor_bytes(find("_egs.total_error")?)?)?,
        p1: unpack_opt_f64(&tensor_bytes(find("_egs.p1")?)?)?,
        p2: unpack_opt_f64(&tensor_bytes(find("_egs.p2")?)?)?,
    };
    let config_json = match tensors.iter().find(|(n, _)| n == "_config_json") {
        Some((_, t)) => Some(
            String::from_utf8(tensor_bytes(t)?)
                .map_err(|_| Error::Format("config echo is not UTF-8".into()))?,
        ),
        None => None,
    };
    // rebuild a template with the right structure, then overwrite every
    // parameter from the file
    let mut bundle =
        ModelBundle::<f32>::init(dims, gru_layers, lstm_layers, &mut stream(0, "ckpt-template"));
    let expected: Vec<String> = bundle.named_params().into_iter().map(|(n, _)| n).collect();
    let model_tensor_count = tensors.iter().filter(|(n, _)| !n.starts_with('_')).count();
    if model_tensor_count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {model_tensor_count} model tensors, dims record implies {}",
            expected.len()
        )));
    }
    for role in crate::nets::Role::ALL {
        let block = bundle.block_mut(role);
        let names: Vec<String> = {
            let tmp = block.named_params(role.name());
            tmp.into_iter().map(|(n, _)| n).collect()
        };
        for (slot, name) in block.params_mut().into_iter().zip(&names) {
            let t = find(name)?;
            if t.shape() != slot.shape() {
                return Err(Error::Format(format!(
                    "{name}: shape {:?} in file, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
    }
    bundle.validate()?;
    Ok(Checkpoint {
        bundle,
        egs,
        config_json,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bundle(seed: u64) -> ModelBundle<f32> {
        let dims = ModelDims {
            feature_dim: 3,
            latent_dim: 4,
            hidden_dim: 4,
            noise_dim: 3,
        };
        ModelBundle::init(dims, 2, 2, &mut stream(seed, "ckpt-test"))
    }

    fn sample_egs() -> EarlyGenSummary {
        EarlyGenSummary {
            best_epoch: Some(2500),
            total_error: Some(0.123456789012345),
            p1: Some(2.0),
            p2: Some(4.000000000000001),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.cgn");
        for seed in 0..10 {
            let bundle = sample_bundle(seed);
            save_checkpoint(&bundle, &sample_egs(), Some("{\"seed\":1}"), &p).unwrap();
            let back = load_checkpoint(&p).unwrap();
            for ((an, at), (bn, bt)) in bundle.named_params().iter().zip(back.bundle.named_params())
            {
                assert_eq!(an, &bn);
                assert_eq!(at.shape(), bt.shape());
                for (x, y) in at.data().iter().zip(bt.data()) {
                    assert_eq!(x.to_bits(), y.to_bits(), "{an} drifted");
                }
            }
            assert_eq!(back.egs, sample_egs());
            assert_eq!(back.config_json.as_deref(), Some("{\"seed\":1}"));
        }
    }

    #[test]
    fn absent_selector_fields_survive() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fresh.cgn");
        save_checkpoint(&sample_bundle(1), &EarlyGenSummary::default(), None, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.egs, EarlyGenSummary::default());
        assert!(back.config_json.is_none());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cgn");
        std::fs::write(&p, b"NOPE\x01\x00\x00\x00").unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn wrong_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v9.cgn");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&9u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn corrupted_length_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cgn");
        save_checkpoint(&sample_bundle(3), &sample_egs(), None, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        // trash the first tensor's name-length field
        bytes[12] = 0xFF;
        bytes[13] = 0xFF;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.cgn");
        save_checkpoint(&sample_bundle(4), &sample_egs(), None, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(Error::Format(_))));
    }
}
