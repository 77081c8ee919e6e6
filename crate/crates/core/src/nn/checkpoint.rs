//! Network checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "CTRLCKPT" | version u32 | role u8
//! input_dim u32 | output_dim u32 | n_hidden u32 | hidden u32 * n_hidden
//! activation u8 | time_embed_dim u32 | max_frequency f64 | time_scale f64 | context_dim u32
//! link [u8; 32]            (checksum of a linked checkpoint, zeros if none)
//! meta_len u32 | meta utf-8
//! n_params u64 | params f32 * n_params
//! sha256 of everything above [u8; 32]
//! ```

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, MlpSpec, ParamVector};

pub const MAGIC: &[u8; 8] = b"CTRLCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Score,
    PolicyMean,
    ResidualCorrector,
}

impl Role {
    fn tag(self) -> u8 {
        match self {
            Role::Score => 1,
            Role::PolicyMean => 2,
            Role::ResidualCorrector => 3,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            1 => Role::Score,
            2 => Role::PolicyMean,
            3 => Role::ResidualCorrector,
            _ => return Err(Error::Checkpoint(format!("unknown role tag {t}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Score => "score",
            Role::PolicyMean => "policy-mean",
            Role::ResidualCorrector => "residual-corrector",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub role: Role,
    pub spec: MlpSpec,
    /// Parameters as stored (rounded to f32 precision).
    pub params: ParamVector,
    pub link: Option<[u8; 32]>,
    pub meta: String,
}

impl Checkpoint {
    pub fn new(role: Role, spec: MlpSpec, params: &ParamVector) -> Self {
        Self {
            role,
            spec,
            params: params.clone(),
            link: None,
            meta: String::new(),
        }
    }

    pub fn with_link(mut self, link: [u8; 32]) -> Self {
        self.link = Some(link);
        self
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    /// Serialized bytes, including the trailing checksum.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        let w = &mut buf;
        w.write_u32::<LittleEndian>(VERSION).unwrap();
        w.write_u8(self.role.tag()).unwrap();
        let s = &self.spec;
        w.write_u32::<LittleEndian>(s.input_dim as u32).unwrap();
        w.write_u32::<LittleEndian>(s.output_dim as u32).unwrap();
        w.write_u32::<LittleEndian>(s.hidden_dims.len() as u32).unwrap();
        for &h in &s.hidden_dims {
            w.write_u32::<LittleEndian>(h as u32).unwrap();
        }
        w.write_u8(s.activation.tag()).unwrap();
        w.write_u32::<LittleEndian>(s.time_embed_dim as u32).unwrap();
        w.write_f64::<LittleEndian>(s.max_frequency).unwrap();
        w.write_f64::<LittleEndian>(s.time_scale).unwrap();
        w.write_u32::<LittleEndian>(s.context_dim as u32).unwrap();
        w.write_all(&self.link.unwrap_or([0; 32])).unwrap();
        w.write_u32::<LittleEndian>(self.meta.len() as u32).unwrap();
        w.write_all(self.meta.as_bytes()).unwrap();
        w.write_u64::<LittleEndian>(self.params.len() as u64).unwrap();
        for &p in self.params.as_slice() {
            w.write_f32::<LittleEndian>(p as f32).unwrap();
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        buf
    }

    /// SHA-256 of the serialized payload (the trailing checksum field).
    pub fn checksum(&self) -> [u8; 32] {
        let bytes = self.to_bytes();
        let mut out = [0u8; 32];
        out.copy_from_slice(&bytes[bytes.len() - 32..]);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 {
            return Err(Error::Checkpoint("file too short".into()));
        }
        let (payload, stored) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(payload).as_slice() != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Cursor::new(payload);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let role = Role::from_tag(r.read_u8()?)?;
        let input_dim = r.read_u32::<LittleEndian>()? as usize;
        let output_dim = r.read_u32::<LittleEndian>()? as usize;
        let n_hidden = r.read_u32::<LittleEndian>()? as usize;
        let hidden_dims = (0..n_hidden)
            .map(|_| r.read_u32::<LittleEndian>().map(|h| h as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let activation = Activation::from_tag(r.read_u8()?)
            .ok_or_else(|| Error::Checkpoint("unknown activation".into()))?;
        let time_embed_dim = r.read_u32::<LittleEndian>()? as usize;
        let max_frequency = r.read_f64::<LittleEndian>()?;
        let time_scale = r.read_f64::<LittleEndian>()?;
        let context_dim = r.read_u32::<LittleEndian>()? as usize;
        let spec = MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
            activation,
            time_embed_dim,
            max_frequency,
            time_scale,
            context_dim,
        };
        spec.validate()?;
        let mut link = [0u8; 32];
        r.read_exact(&mut link)?;
        let meta_len = r.read_u32::<LittleEndian>()? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Checkpoint("metadata is not utf-8".into()))?;
        let n = r.read_u64::<LittleEndian>()? as usize;
        if n != spec.param_count() {
            return Err(Error::Checkpoint(format!(
                "parameter count {n} does not match spec ({})",
                spec.param_count()
            )));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(r.read_f32::<LittleEndian>()? as f64);
        }
        if r.position() as usize != payload.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let params = ParamVector::new(values, spec.segments())?;
        Ok(Self {
            role,
            spec,
            params,
            link: (link != [0; 32]).then_some(link),
            meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<[u8; 32]> {
        let bytes = self.to_bytes();
        std::fs::File::create(path)?.write_all(&bytes)?;
        let mut out = [0u8; 32];
        out.copy_from_slice(&bytes[bytes.len() - 32..]);
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Rounds every parameter to f32 precision, matching what a checkpoint stores.
pub fn round_to_storage(params: &mut ParamVector) {
    for v in params.as_mut_slice() {
        *v = *v as f32 as f64;
    }
}
