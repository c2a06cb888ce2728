//! Single-file model checkpoints.
//!
//! Layout: a UTF-8 manifest of `key=value` lines opened by [`MAGIC`] and
//! closed by a line `end`, followed by one record per tensor in manifest
//! order:
//!
//! ```text
//! u32 name_len | name bytes | u64 rows | u64 cols | u64 byte_len | f64 data (LE)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gcn::{Activation, GcnConfig, GcnModel, LAYER_NAMES};
use crate::mask::PruneMode;
use crate::tensor::Tensor;

pub const MAGIC: &str = "ctf-prune-checkpoint 1";

pub fn encode(model: &GcnModel) -> Vec<u8> {
    let c = &model.config;
    let flag = |b: bool| if b { "1" } else { "0" };
    let mut text = String::new();
    text.push_str(MAGIC);
    text.push('\n');
    let entries = [
        ("nodes", c.nodes.to_string()),
        ("features", c.features.to_string()),
        ("heads", c.heads.to_string()),
        ("filters", c.filters.to_string()),
        ("classes", c.classes.to_string()),
        ("activation", c.activation.as_str().to_string()),
        ("attention_softmax", flag(c.attention_softmax).to_string()),
        (
            "prunable",
            c.prunable.iter().map(|&b| flag(b)).collect::<Vec<_>>().join(","),
        ),
        ("block_rows", c.block_rows.to_string()),
        ("block_cols", c.block_cols.to_string()),
        ("init_scale", c.init_scale.map_or("fan".to_string(), |b| format!("{b:?}"))),
        ("mode", model.mode.as_str().to_string()),
        ("sigma", format!("{:?}", model.sigma())),
        ("epoch", model.epoch.to_string()),
        ("tensors", LAYER_NAMES.join(",")),
    ];
    for (k, v) in entries {
        text.push_str(&format!("{k}={v}\n"));
    }
    text.push_str("end\n");

    let mut out = text.into_bytes();
    for (name, t) in LAYER_NAMES.iter().zip(model.latents()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        out.extend_from_slice(&((t.len() * 8) as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Input(format!("checkpoint truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn manifest_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Format { line, msg: msg.into() }
}

pub fn decode(bytes: &[u8]) -> Result<GcnModel> {
    let marker = b"\nend\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| manifest_err(1, "manifest terminator 'end' not found"))?;
    let text = std::str::from_utf8(&bytes[..end + 1]).map_err(|_| manifest_err(1, "manifest is not UTF-8"))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(manifest_err(1, format!("expected '{MAGIC}'")));
    }
    let mut kv = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| manifest_err(i + 2, format!("expected key=value, got '{line}'")))?;
        kv.insert(k.to_string(), (i + 2, v.to_string()));
    }
    let get = |k: &str| -> Result<(usize, &str)> {
        kv.get(k)
            .map(|(l, v)| (*l, v.as_str()))
            .ok_or_else(|| manifest_err(1, format!("missing key '{k}'")))
    };
    let num = |k: &str| -> Result<usize> {
        let (l, v) = get(k)?;
        v.parse().map_err(|_| manifest_err(l, format!("{k}: '{v}' is not an integer")))
    };
    let flag = |l: usize, v: &str| -> Result<bool> {
        match v {
            "1" => Ok(true),
            "0" => Ok(false),
            _ => Err(manifest_err(l, format!("expected 0 or 1, got '{v}'"))),
        }
    };

    let mut config = GcnConfig::new(num("nodes")?, num("features")?, num("heads")?, num("filters")?, num("classes")?);
    let (l, v) = get("activation")?;
    config.activation = v.parse::<Activation>().map_err(|e| manifest_err(l, e.to_string()))?;
    let (l, v) = get("attention_softmax")?;
    config.attention_softmax = flag(l, v)?;
    let (l, v) = get("prunable")?;
    let flags: Vec<bool> = v.split(',').map(|f| flag(l, f)).collect::<Result<_>>()?;
    config.prunable = flags
        .try_into()
        .map_err(|_| manifest_err(l, "prunable needs three flags"))?;
    config.block_rows = num("block_rows")?;
    config.block_cols = num("block_cols")?;
    let (l, v) = get("init_scale")?;
    config.init_scale = match v {
        "fan" => None,
        _ => Some(v.parse().map_err(|_| manifest_err(l, format!("init_scale: '{v}' is not a number")))?),
    };
    let (l, v) = get("mode")?;
    let mode: PruneMode = v.parse().map_err(|e: Error| manifest_err(l, e.to_string()))?;
    let (l, v) = get("sigma")?;
    let sigma: f64 = v.parse().map_err(|_| manifest_err(l, format!("sigma: '{v}' is not a number")))?;
    let epoch = num("epoch")?;
    let (l, v) = get("tensors")?;
    if v != LAYER_NAMES.join(",") {
        return Err(manifest_err(l, format!("unexpected tensor list '{v}'")));
    }

    let mut cur = Cursor {
        buf: bytes,
        pos: end + marker.len(),
    };
    let mut tensors = Vec::with_capacity(3);
    for (li, name) in LAYER_NAMES.iter().enumerate() {
        let len = cur.u32("name length")? as usize;
        let got = cur.take(len, "tensor name")?;
        if got != name.as_bytes() {
            return Err(Error::Input(format!(
                "expected tensor '{name}', found '{}'",
                String::from_utf8_lossy(got)
            )));
        }
        let rows = cur.u64("rows")? as usize;
        let cols = cur.u64("cols")? as usize;
        let byte_len = cur.u64("byte length")? as usize;
        if (rows, cols) != config.layer_shape(li) || byte_len != rows * cols * 8 {
            return Err(Error::dim(LAYER_NAMES[li], (rows, cols), config.layer_shape(li)));
        }
        let data = cur
            .take(byte_len, name)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(rows, cols, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Input(format!("{} trailing bytes after checkpoint", bytes.len() - cur.pos)));
    }
    let mut model = GcnModel::from_tensors(config, mode, 1.0, tensors.try_into().expect("three tensors"))?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Input(format!("invalid sigma {sigma} in checkpoint")));
    }
    model.restore_sigma(sigma);
    model.epoch = epoch;
    Ok(model)
}

pub fn save(model: &GcnModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<GcnModel> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GcnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut cfg = GcnConfig::new(4, 6, 2, 3, 3);
        cfg.activation = Activation::Tanh;
        cfg.prunable = [true, false, true];
        let mut m = GcnModel::init(cfg, PruneMode::Coarse, 1.0, &mut rng).unwrap();
        m.anneal_to(1.0 / 3.0 + 17.0).unwrap();
        m.epoch = 42;
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        assert_eq!(back.mode, m.mode);
        assert_eq!(back.epoch, 42);
        assert_eq!(back.sigma().to_bits(), m.sigma().to_bits());
        for (a, b) in back.latents().iter().zip(m.latents()) {
            assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
        assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn rejects_damaged_files() {
        let bytes = encode(&model());
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Input(_))));
        assert!(matches!(decode(b"garbage"), Err(Error::Format { .. })));
        let text = String::from_utf8_lossy(&bytes[..40]).replace("ctf-prune-checkpoint 1", "ctf-prune-checkpoint 9");
        let mut bad = text.into_bytes();
        bad.extend_from_slice(&bytes[40..]);
        assert!(matches!(decode(&bad), Err(Error::Format { line: 1, .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
