//! Terminal-sample file.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic "CTRLSMPL" | version u32 | n u64 | dim u32 | n_steps u32 | sampler u8
//! class u32 * n
//! x_0 f64 * n | ... | x_{dim-1} f64 * n
//! reward f64 * n
//! ```

use std::io::{Cursor, Read};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use ctrl_core::Sampler;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"CTRLSMPL";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub n_steps: usize,
    pub sampler: Sampler,
    pub x: Array2<f64>,
    pub class: Vec<usize>,
    pub reward: Vec<f64>,
}

fn sampler_tag(s: Sampler) -> u8 {
    match s {
        Sampler::EulerMaruyama => 0,
        Sampler::Ddpm => 1,
    }
}

fn corrupt(msg: &str) -> CliError {
    CliError::Runtime(format!("sample file: {msg}"))
}

impl SampleFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.x.dim();
        let mut w = Vec::with_capacity(29 + n * (4 + 8 * (d + 1)));
        w.extend_from_slice(MAGIC);
        w.write_u32::<LittleEndian>(VERSION).unwrap();
        w.write_u64::<LittleEndian>(n as u64).unwrap();
        w.write_u32::<LittleEndian>(d as u32).unwrap();
        w.write_u32::<LittleEndian>(self.n_steps as u32).unwrap();
        w.write_u8(sampler_tag(self.sampler)).unwrap();
        for &c in &self.class {
            w.write_u32::<LittleEndian>(c as u32).unwrap();
        }
        for col in self.x.columns() {
            for &v in col {
                w.write_f64::<LittleEndian>(v).unwrap();
            }
        }
        for &r in &self.reward {
            w.write_f64::<LittleEndian>(r).unwrap();
        }
        w
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let mut r = Cursor::new(bytes);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("too short"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let io = |e: std::io::Error| corrupt(&e.to_string());
        if r.read_u32::<LittleEndian>().map_err(io)? != VERSION {
            return Err(corrupt("unsupported version"));
        }
        let n = r.read_u64::<LittleEndian>().map_err(io)? as usize;
        let d = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let n_steps = r.read_u32::<LittleEndian>().map_err(io)? as usize;
        let sampler = match r.read_u8().map_err(io)? {
            0 => Sampler::EulerMaruyama,
            1 => Sampler::Ddpm,
            t => return Err(corrupt(&format!("unknown sampler tag {t}"))),
        };
        let expected = 29 + n * (4 + 8 * (d + 1));
        if bytes.len() != expected {
            return Err(corrupt(&format!("length {} but header implies {expected}", bytes.len())));
        }
        let class = (0..n).map(|_| r.read_u32::<LittleEndian>().map(|c| c as usize)).collect::<Result<_, _>>().map_err(io)?;
        let mut x = Array2::zeros((n, d));
        for j in 0..d {
            for i in 0..n {
                x[[i, j]] = r.read_f64::<LittleEndian>().map_err(io)?;
            }
        }
        let reward = (0..n).map(|_| r.read_f64::<LittleEndian>()).collect::<Result<_, _>>().map_err(io)?;
        Ok(Self {
            n_steps,
            sampler,
            x,
            class,
            reward,
        })
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
