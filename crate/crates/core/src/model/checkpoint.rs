// Binary checkpoint layout (all integers little-endian):
//
//   magic     8 bytes  "DLGFACKP"
//   version   u32
//   config    u64 length + UTF-8 JSON of ModelConfig
//   params    u64 count, then per parameter:
//               u32 name length + UTF-8 name, u32 ndim, ndim × u64 dims,
//               numel × f64 (raw IEEE-754 bits)
//   loadings  u64 T, u64 G, u64 p, u64 K, then T·G·p·K × f64, t-major
//
// Floats are stored as raw bits so a save/load round trip is bit-exact.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use super::{DlgfaModel, LoadingMatrices, ModelConfig};
use crate::error::{DlgfaError, Result};
use crate::kernel::{ParamStore, Tensor};

const MAGIC: &[u8; 8] = b"DLGFACKP";
const VERSION: u32 = 1;

pub fn encode_checkpoint(model: &DlgfaModel) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let config = serde_json::to_vec(&model.config)
        .map_err(|e| DlgfaError::Checkpoint(format!("config encoding: {e}")))?;
    buf.extend_from_slice(&(config.len() as u64).to_le_bytes());
    buf.extend_from_slice(&config);

    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for (name, value) in model.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(value.ndim() as u32).to_le_bytes());
        for &d in value.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in value.data() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }

    let w = &model.loadings;
    for n in [w.timesteps(), w.groups(), w.rows(), w.cols()] {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for (_, m) in w.iter() {
        for v in m.data() {
            buf.extend_from_slice(&v.to_bits().to_le_bytes());
        }
    }
    Ok(buf)
}

struct Reader<'a>(Cursor<&'a [u8]>);

impl Reader<'_> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut out = vec![0u8; n];
        self.0
            .read_exact(&mut out)
            .map_err(|_| DlgfaError::Checkpoint("truncated file".into()))?;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| DlgfaError::Checkpoint(format!("length {n} too large")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(n.checked_mul(8).ok_or_else(|| DlgfaError::Checkpoint("size overflow".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DlgfaModel> {
    let mut r = Reader(Cursor::new(bytes));
    if r.bytes(8)? != MAGIC {
        return Err(DlgfaError::Checkpoint("not a model checkpoint".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(DlgfaError::Checkpoint(format!("unsupported version {version}")));
    }
    let config_len = r.len()?;
    let config: ModelConfig = serde_json::from_slice(&r.bytes(config_len)?)
        .map_err(|e| DlgfaError::Checkpoint(format!("config: {e}")))?;
    config.validate()?;

    let mut params = ParamStore::new();
    let count = r.len()?;
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| DlgfaError::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let data = r.f64s(shape.iter().product())?;
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    for (name, shape) in super::parameter_shapes(&config) {
        if params.get(&name).map(|t| t.shape() != shape.as_slice()).unwrap_or(true) {
            return Err(DlgfaError::Checkpoint(format!("parameter `{name}` missing or misshapen")));
        }
    }
    if params.len() != super::parameter_shapes(&config).len() {
        return Err(DlgfaError::Checkpoint("unexpected extra parameters".into()));
    }

    let (t, g, p, k) = (r.len()?, r.len()?, r.len()?, r.len()?);
    if (t, g, p, k)
        != (
            config.max_timesteps,
            config.groups.count(),
            config.loading_rows,
            config.latent_dim,
        )
    {
        return Err(DlgfaError::Checkpoint("loading dimensions disagree with config".into()));
    }
    let mats = (0..t * g)
        .map(|_| Tensor::new(vec![p, k], r.f64s(p * k)?))
        .collect::<Result<Vec<_>>>()?;
    let loadings = LoadingMatrices::from_parts(t, g, p, k, mats)?;
    if (r.0.position() as usize) != bytes.len() {
        return Err(DlgfaError::Checkpoint("trailing bytes".into()));
    }
    Ok(DlgfaModel {
        config,
        params,
        loadings,
    })
}

pub fn save_checkpoint(model: &DlgfaModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| DlgfaError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<DlgfaModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| DlgfaError::io(path, e))?;
    decode_checkpoint(&bytes)
}
