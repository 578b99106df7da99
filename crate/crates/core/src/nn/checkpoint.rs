//! Checkpoint container.
//!
//! ```text
//! "DSCK" | u32 version = 1 | u32 n | n bytes config JSON | u32 tensors |
//!   per tensor: u16 name length | name | u8 trainable | DSTF tensor
//! ```
//! Little-endian throughout.

use super::model::{Model, Params, Tensor};
use super::{ModelConfig, ModelError};
use crate::dstf;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DSCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let json = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(model.params.tensors.len() as u32).to_le_bytes());
    for t in &model.params.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(u8::from(t.trainable));
        dstf::encode_into(&mut out, &t.shape, &t.data).expect("parameter shapes are consistent");
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| ModelError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint(bytes: &[u8]) -> Result<Model<f32>, ModelError> {
    let bad = |m: String| ModelError::Checkpoint(m);
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(n)?).map_err(|e| bad(format!("config: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8".into()))?;
        let trainable = r.take(1)?[0] != 0;
        let (shape, data, used) = dstf::decode_prefix(&bytes[r.pos..]).map_err(|e| bad(format!("{name}: {e}")))?;
        r.pos += used;
        tensors.push(Tensor {
            name,
            shape,
            data,
            trainable,
        });
    }
    if r.pos != bytes.len() {
        return Err(bad("trailing bytes".into()));
    }
    Model::from_params(config, Params { tensors })
}
