//! Checkpoint format: magic `QFF1`, a length-prefixed canonical config
//! header, then per-tensor blocks (name, shape, little-endian f32 payload).
//!
//! Values are stored as 32-bit floats on disk regardless of the in-memory
//! precision (the header records `storage=f32`). Serialization is
//! deterministic, so save -> load -> save reproduces the file byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::config::{model_spec_from_text, model_spec_to_text};
use crate::error::{QffError, Result};
use crate::model::FieldModel;
use crate::scalar::{c, Scalar};

const MAGIC: &[u8; 4] = b"QFF1";

pub fn save_checkpoint<F: Scalar>(path: &Path, model: &FieldModel<F>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(MAGIC);
    let header = model_spec_to_text(&model.encoding, &model.mlp_cfg);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    let ids: Vec<_> = model.params.ids().collect();
    out.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        let p = model.params.get(id);
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.shape.len() as u8);
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| QffError::io_at(path, e))?;
    file.write_all(&out)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .data
            .get(self.pos..self.pos + n)
            .ok_or_else(|| QffError::Corruption("checkpoint truncated".into()))?;
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<FieldModel<F>> {
    let data = fs::read(path).map_err(|e| QffError::io_at(path, e))?;
    if data.len() < 4 || &data[..4] != MAGIC {
        return Err(QffError::Format(format!(
            "{} is not a QFF1 checkpoint",
            path.display()
        )));
    }
    let mut r = Reader { data: &data, pos: 4 };
    let header_len = r.u32()? as usize;
    let header = std::str::from_utf8(r.bytes(header_len)?)
        .map_err(|_| QffError::Corruption("checkpoint header is not utf-8".into()))?;
    let (enc, mlp) = model_spec_from_text(header)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.bytes(name_len)?)
            .map_err(|_| QffError::Corruption("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let payload = r.bytes(numel * 4)?;
        let values: Vec<F> = payload
            .chunks_exact(4)
            .map(|b| c::<F>(f32::from_le_bytes(b.try_into().unwrap()) as f64))
            .collect();
        tensors.push((name, shape, values));
    }
    if r.pos != data.len() {
        return Err(QffError::Corruption(format!(
            "{} trailing bytes after the last tensor",
            data.len() - r.pos
        )));
    }
    FieldModel::from_tensors(enc, mlp, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{EncodingConfig, Variant};
    use crate::mlp::{Activation, MlpConfig, OutputTransform};
    use crate::tensor::Tensor;

    fn demo_model() -> FieldModel<f32> {
        let enc = EncodingConfig::new(2, 3, 8, 2, Variant::QffLite);
        let mlp = MlpConfig {
            input_width: enc.encoded_width(),
            hidden_width: 16,
            num_layers: 2,
            activation: Activation::Relu,
            output_width: 3,
            output_transform: OutputTransform::Sigmoid,
        };
        FieldModel::init(enc, mlp, 42).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.qff");
        let p2 = dir.path().join("b.qff");
        let model = demo_model();
        save_checkpoint(&p1, &model).unwrap();
        let loaded = load_checkpoint::<f32>(&p1).unwrap();
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn loaded_model_forward_is_bitwise_equal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qff");
        let model = demo_model();
        save_checkpoint(&path, &model).unwrap();
        let loaded = load_checkpoint::<f32>(&path).unwrap();
        let probe = Tensor::from_vec(4, 2, vec![0.1f32, -0.7, 0.9, 0.2, -0.3, -0.9, 0.5, 0.0]).unwrap();
        let a = model.forward(&probe).unwrap();
        let b = loaded.forward(&probe).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn truncated_file_is_corruption_not_crash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qff");
        let model = demo_model();
        save_checkpoint(&path, &model).unwrap();
        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.qff");
        fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            load_checkpoint::<f32>(&cut),
            Err(QffError::Corruption(_))
        ));
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qff");
        fs::write(&path, b"NOPE....").unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(QffError::Format(_))));
    }

    #[test]
    fn mismatched_tensor_is_named() {
        // Corrupt the header so the config expects a different bank shape.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.qff");
        let model = demo_model();
        save_checkpoint(&path, &model).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        // encoder.bins=8 -> encoder.bins=4 inside the header text.
        let needle = b"encoder.bins=8";
        let at = bytes
            .windows(needle.len())
            .position(|w| w == needle)
            .unwrap();
        bytes[at + needle.len() - 1] = b'4';
        let bad = dir.path().join("bad.qff");
        fs::write(&bad, &bytes).unwrap();
        let err = load_checkpoint::<f32>(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(
            matches!(err, QffError::Corruption(_)) && msg.contains("line_features"),
            "expected the first mismatched tensor to be named, got: {msg}"
        );
    }
}
