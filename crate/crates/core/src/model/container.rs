//! Single-file tensor container.
//!
//! Layout: the 8-byte magic `LMAMBA01`, a little-endian `u64` manifest
//! length, the JSON manifest, then raw little-endian payloads. Every payload
//! starts at a 64-byte aligned offset measured from the start of the file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{Granularity, QData, QuantScheme, QuantizedTensor, ScaleKind, Scales};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"LMAMBA01";
pub const ALIGN: usize = 64;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    I8,
    /// Signed 4-bit codes, two per byte, low nibble first.
    I4,
    /// Signed power-of-two exponents, one per byte.
    ExpI8,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::I8 => "i8",
            DType::I4 => "i4",
            DType::ExpI8 => "exp_i8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "f32" => DType::F32,
            "i8" => DType::I8,
            "i4" => DType::I4,
            "exp_i8" => DType::ExpI8,
            other => return Err(Error::UnknownDtype(other.to_string())),
        })
    }

    pub fn payload_len(self, numel: usize) -> usize {
        match self {
            DType::F32 => numel * 4,
            DType::I8 | DType::ExpI8 => numel,
            DType::I4 => numel.div_ceil(2),
        }
    }
}

/// Scale metadata attached to a quantized tensor record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantMeta {
    pub bits: u8,
    pub granularity: Granularity,
    pub group_size: usize,
    pub scale_kind: ScaleKind,
    /// Float scales, stored inline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
    /// Name of the `exp_i8` record holding power-of-two exponents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponents: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quant: Option<QuantMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub quant: Option<QuantMeta>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub metadata: serde_json::Value,
    entries: Vec<Entry>,
}

fn align_up(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

impl Container {
    pub fn new() -> Self {
        Container {
            metadata: serde_json::Value::Null,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Entry> {
        let idx = self.entries.iter().position(|e| e.name == name)?;
        Some(self.entries.remove(idx))
    }

    pub fn push_raw(&mut self, entry: Entry) -> Result<()> {
        let numel: usize = entry.shape.iter().product();
        if entry.bytes.len() != entry.dtype.payload_len(numel) {
            return Err(Error::Container(format!(
                "`{}` has {} payload bytes, expected {}",
                entry.name,
                entry.bytes.len(),
                entry.dtype.payload_len(numel)
            )));
        }
        if self.contains(&entry.name) {
            return Err(Error::Container(format!(
                "duplicate tensor `{}`",
                entry.name
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Stores a tensor as little-endian `f32`.
    pub fn push_f32(&mut self, name: &str, t: &Tensor) -> Result<()> {
        let bytes = t
            .data()
            .iter()
            .flat_map(|&v| (v as f32).to_le_bytes())
            .collect();
        self.push_raw(Entry {
            name: name.to_string(),
            dtype: DType::F32,
            shape: t.shape().to_vec(),
            quant: None,
            bytes,
        })
    }

    pub fn get_f32(&self, name: &str) -> Result<Tensor> {
        let e = self.entry(name)?;
        if e.dtype != DType::F32 {
            return Err(Error::Container(format!(
                "`{name}` is {}, expected f32",
                e.dtype.as_str()
            )));
        }
        let data = e
            .bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        Tensor::new(e.shape.clone(), data)
    }

    /// Fetches an `f32` tensor and checks its shape.
    pub fn get_f32_shaped(&self, name: &str, expected: &[usize]) -> Result<Tensor> {
        let t = self.get_f32(name)?;
        if t.shape() != expected {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                got: t.shape().to_vec(),
            });
        }
        Ok(t)
    }

    /// Stores codes under `name`; power-of-two exponents go to `name.exp`.
    pub fn push_quantized(&mut self, name: &str, q: &QuantizedTensor) -> Result<()> {
        let (dtype, bytes) = match &q.qdata {
            QData::I8(v) => (DType::I8, v.iter().map(|&c| c as u8).collect()),
            QData::I4 { packed, .. } => (DType::I4, packed.clone()),
        };
        let mut meta = QuantMeta {
            bits: q.scheme.bits,
            granularity: q.scheme.granularity,
            group_size: q.scheme.group_size,
            scale_kind: q.scheme.scale_kind,
            scales: None,
            exponents: None,
        };
        match &q.scales {
            Scales::Float(s) => meta.scales = Some(s.clone()),
            Scales::Pot(e) => {
                let exp_name = format!("{name}.exp");
                self.push_raw(Entry {
                    name: exp_name.clone(),
                    dtype: DType::ExpI8,
                    shape: vec![e.len()],
                    quant: None,
                    bytes: e.iter().map(|&x| x as u8).collect(),
                })?;
                meta.exponents = Some(exp_name);
            }
        }
        self.push_raw(Entry {
            name: name.to_string(),
            dtype,
            shape: q.shape.clone(),
            quant: Some(meta),
            bytes,
        })
    }

    pub fn get_quantized(&self, name: &str) -> Result<QuantizedTensor> {
        let e = self.entry(name)?;
        let meta = e
            .quant
            .as_ref()
            .ok_or_else(|| Error::Container(format!("`{name}` has no quantization metadata")))?;
        let scheme = QuantScheme::new(
            meta.bits,
            meta.granularity,
            meta.group_size,
            meta.scale_kind,
        )?;
        let numel: usize = e.shape.iter().product();
        let codes: Vec<i8> = match e.dtype {
            DType::I8 => e.bytes.iter().map(|&b| b as i8).collect(),
            DType::I4 => crate::quant::unpack_int4(&e.bytes, numel),
            other => {
                return Err(Error::Container(format!(
                    "`{name}` has dtype {} but carries quantization metadata",
                    other.as_str()
                )))
            }
        };
        let scales = match (meta.scale_kind, &meta.scales, &meta.exponents) {
            (ScaleKind::Float, Some(s), _) => Scales::Float(s.clone()),
            (ScaleKind::Pot, _, Some(exp_name)) => {
                let x = self.entry(exp_name)?;
                Scales::Pot(x.bytes.iter().map(|&b| b as i8).collect())
            }
            _ => {
                return Err(Error::Container(format!(
                    "`{name}` is missing its scale metadata"
                )))
            }
        };
        let q = QuantizedTensor::from_codes(e.shape.clone(), scheme, codes, scales)?;
        if e.dtype == DType::I4 && q.qdata.as_bytes() != e.bytes {
            return Err(Error::Container(format!(
                "`{name}` has nonzero padding bits"
            )));
        }
        Ok(q)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        // Manifest length depends on offsets, which depend on manifest
        // length; iterate until the header size is stable.
        let mut header_len = 0usize;
        loop {
            let mut offset = align_up(16 + header_len);
            let mut records = Vec::with_capacity(self.entries.len());
            for e in &self.entries {
                records.push(TensorRecord {
                    name: e.name.clone(),
                    dtype: e.dtype.as_str().to_string(),
                    shape: e.shape.clone(),
                    offset: offset as u64,
                    nbytes: e.bytes.len() as u64,
                    quant: e.quant.clone(),
                });
                offset = align_up(offset + e.bytes.len());
            }
            let manifest = Manifest {
                version: FORMAT_VERSION,
                metadata: self.metadata.clone(),
                tensors: records,
            };
            let json = serde_json::to_vec(&manifest)?;
            if json.len() <= header_len {
                let mut json = json;
                json.resize(header_len, b' ');
                let mut out = Vec::with_capacity(offset);
                out.extend_from_slice(MAGIC);
                out.extend_from_slice(&(header_len as u64).to_le_bytes());
                out.extend_from_slice(&json);
                for (e, r) in self.entries.iter().zip(&manifest.tensors) {
                    out.resize(r.offset as usize, 0);
                    out.extend_from_slice(&e.bytes);
                }
                out.resize(align_up(out.len()), 0);
                return Ok(out);
            }
            header_len = json.len();
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Container("bad magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let end = 16u64
            .checked_add(len)
            .filter(|&e| e <= bytes.len() as u64)
            .ok_or_else(|| Error::Container("manifest extends past end of file".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..end as usize])?;
        if manifest.version != FORMAT_VERSION {
            return Err(Error::Container(format!(
                "unsupported format version {}",
                manifest.version
            )));
        }
        let mut c = Container {
            metadata: manifest.metadata,
            entries: Vec::with_capacity(manifest.tensors.len()),
        };
        for r in manifest.tensors {
            let dtype = DType::parse(&r.dtype)?;
            let numel: usize = r.shape.iter().product();
            let need = dtype.payload_len(numel) as u64;
            if r.nbytes != need {
                return Err(Error::Container(format!(
                    "`{}` declares {} bytes, shape {:?} as {} needs {need}",
                    r.name, r.nbytes, r.shape, r.dtype
                )));
            }
            if r.offset < end
                || r.offset
                    .checked_add(need)
                    .is_none_or(|e| e > bytes.len() as u64)
            {
                return Err(Error::Truncated {
                    name: r.name,
                    offset: r.offset,
                    need,
                    have: bytes.len() as u64,
                });
            }
            let start = r.offset as usize;
            c.push_raw(Entry {
                name: r.name,
                dtype,
                shape: r.shape,
                quant: r.quant,
                bytes: bytes[start..start + need as usize].to_vec(),
            })?;
        }
        Ok(c)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Container::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quantize_rtn;

    fn sample() -> Container {
        let mut c = Container::new();
        c.metadata = serde_json::json!({"kind": "test"});
        c.push_f32(
            "a",
            &Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, 1e-3, 7.0]).unwrap(),
        )
        .unwrap();
        c.push_f32("b", &Tensor::from_vec(vec![0.5; 17]).unwrap())
            .unwrap();
        c
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn payloads_are_aligned() {
        let bytes = sample().to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let m: Manifest = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        for r in &m.tensors {
            assert_eq!(r.offset % ALIGN as u64, 0);
        }
        assert_eq!(bytes.len() % ALIGN, 0);
    }

    #[test]
    fn f32_payload_is_little_endian() {
        let mut c = Container::new();
        c.push_f32("x", &Tensor::from_vec(vec![1.0]).unwrap())
            .unwrap();
        let bytes = c.to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let off = align_up(16 + len);
        assert_eq!(&bytes[off..off + 4], &1.0f32.to_le_bytes());
    }

    #[test]
    fn missing_tensor_is_named() {
        let c = sample();
        match c.get_f32("W_out.0") {
            Err(Error::MissingTensor(n)) => assert_eq!(n, "W_out.0"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncated_payload_detected() {
        let bytes = sample().to_bytes().unwrap();
        let cut = &bytes[..bytes.len() - 64 - 8];
        assert!(matches!(
            Container::from_bytes(cut),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn unknown_dtype_detected() {
        let bytes = sample().to_bytes().unwrap();
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let mut fixed = bytes.clone();
        let header = &mut fixed[16..16 + len];
        let pos = header.windows(5).position(|w| w == b"\"f32\"").unwrap();
        header[pos + 1..pos + 4].copy_from_slice(b"f16");
        match Container::from_bytes(&fixed) {
            Err(Error::UnknownDtype(d)) => assert_eq!(d, "f16"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn quantized_roundtrip_int4_and_pot() {
        let x = Tensor::new(
            vec![3, 5],
            (0..15).map(|i| (i as f64 - 7.0) * 0.3).collect(),
        )
        .unwrap();
        let q4 = quantize_rtn(&x, &QuantScheme::per_group(4, 2).unwrap()).unwrap();
        let q8 = quantize_rtn(&x, &QuantScheme::per_token(8).unwrap().with_pot()).unwrap();
        let mut c = Container::new();
        c.push_quantized("w4", &q4).unwrap();
        c.push_quantized("w8", &q8).unwrap();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.get_quantized("w4").unwrap(), q4);
        assert_eq!(back.get_quantized("w8").unwrap(), q8);
        assert_eq!(back.entry("w4").unwrap().dtype, DType::I4);
        assert_eq!(back.entry("w8.exp").unwrap().dtype, DType::ExpI8);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let c = sample();
        c.write(&p).unwrap();
        assert_eq!(Container::read(&p).unwrap(), c);
    }
}
