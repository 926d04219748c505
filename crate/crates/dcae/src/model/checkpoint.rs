//! Checkpoint file format, version 1.
//!
//! Layout (all integers little-endian):
//!   magic "DCAE" | version u32 | config-JSON length u32 | config JSON
//!   then every parameter in canonical order (generator, then
//!   discriminator), each as:
//!     name length u32 | name UTF-8 | rank u32 | dims u32 each | data f32 each
//!   then the train state:
//!     epoch u64 | step u64 | lambda f64
//!     rng seed u64 | rng stream u64 | rng word position u128
//!     generator optimizer cell count u32, each cell: length u32 | f32 each
//!     discriminator optimizer cells in the same encoding
//!
//! Saving the result of a load reproduces the input byte for byte.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::{param_layout, DiscriminatorParams, GeneratorParams, ModelConfig, Param};
use crate::tensor::RmsPropState;
use crate::train::TrainState;

const MAGIC: [u8; 4] = *b"DCAE";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bad magic {got:?}, not a checkpoint file")]
    BadMagic { got: [u8; 4] },
    #[error("unsupported checkpoint version {got}")]
    UnsupportedVersion { got: u32 },
    #[error("file ends in the middle of {what}")]
    Truncated { what: &'static str },
    #[error("embedded config is invalid: {0}")]
    Config(String),
    #[error("expected parameter {want}, file has {got}")]
    NameMismatch { want: String, got: String },
    #[error("parameter {name} has shape {got:?}, config requires {want:?}")]
    ShapeMismatch {
        name: String,
        want: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("optimizer cell {index} holds {got} values, parameters require {want}")]
    OptimizerLength {
        index: usize,
        want: usize,
        got: usize,
    },
    #[error("{count} unexpected trailing bytes")]
    TrailingBytes { count: usize },
}

pub struct Checkpoint {
    pub config: ModelConfig,
    pub gen: GeneratorParams,
    pub disc: DiscriminatorParams,
    pub state: TrainState,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_param(out: &mut Vec<u8>, p: &Param) {
    put_u32(out, p.name.len() as u32);
    out.extend_from_slice(p.name.as_bytes());
    put_u32(out, p.shape.len() as u32);
    for &d in &p.shape {
        put_u32(out, d as u32);
    }
    for &v in &p.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_opt_cells(out: &mut Vec<u8>, cells: &[RmsPropState<f32>]) {
    put_u32(out, cells.len() as u32);
    for cell in cells {
        put_u32(out, cell.acc.len() as u32);
        for &v in &cell.acc {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    gen: &GeneratorParams,
    disc: &DiscriminatorParams,
    state: &TrainState,
) -> Result<(), CheckpointError> {
    let cfg_json = serde_json::to_vec(config).expect("config serializes");
    let mut out = Vec::with_capacity(
        64 + cfg_json.len() + 4 * (gen.param_count() + disc.param_count()) * 2,
    );
    out.extend_from_slice(&MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, cfg_json.len() as u32);
    out.extend_from_slice(&cfg_json);
    for p in gen.iter().chain(disc.iter()) {
        put_param(&mut out, p);
    }
    out.extend_from_slice(&state.epoch.to_le_bytes());
    out.extend_from_slice(&state.step.to_le_bytes());
    out.extend_from_slice(&state.lambda.to_le_bytes());
    out.extend_from_slice(&state.rng_seed.to_le_bytes());
    out.extend_from_slice(&state.rng.get_stream().to_le_bytes());
    out.extend_from_slice(&state.rng.get_word_pos().to_le_bytes());
    put_opt_cells(&mut out, &state.g_opt);
    put_opt_cells(&mut out, &state.d_opt);
    std::fs::write(path, &out).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

struct Cur<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cur<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated { what }),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn u128(&mut self, what: &'static str) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.take(16, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &'static str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize, what: &'static str) -> Result<Vec<f32>, CheckpointError> {
        let bytes = self.take(4 * n, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn fill_param(&mut self, p: &mut Param) -> Result<(), CheckpointError> {
        let name_len = self.u32("a parameter name length")? as usize;
        let name_bytes = self.take(name_len, "a parameter name")?;
        let got = String::from_utf8_lossy(name_bytes).into_owned();
        if got != p.name {
            return Err(CheckpointError::NameMismatch {
                want: p.name.clone(),
                got,
            });
        }
        let rank = self.u32("a parameter rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32("a parameter dimension")? as usize);
        }
        if dims != p.shape {
            return Err(CheckpointError::ShapeMismatch {
                name: p.name.clone(),
                want: p.shape.clone(),
                got: dims,
            });
        }
        p.data = self.f32_vec(p.numel(), "parameter data")?;
        Ok(())
    }

    fn opt_cells(
        &mut self,
        lens: &[usize],
        what: &'static str,
    ) -> Result<Vec<RmsPropState<f32>>, CheckpointError> {
        let count = self.u32(what)? as usize;
        if count != lens.len() {
            return Err(CheckpointError::OptimizerLength {
                index: 0,
                want: lens.len(),
                got: count,
            });
        }
        let mut cells = Vec::with_capacity(count);
        for (i, &want) in lens.iter().enumerate() {
            let got = self.u32(what)? as usize;
            if got != want {
                return Err(CheckpointError::OptimizerLength {
                    index: i,
                    want,
                    got,
                });
            }
            cells.push(RmsPropState {
                acc: self.f32_vec(got, what)?,
            });
        }
        Ok(cells)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let buf = std::fs::read(path).map_err(|e| CheckpointError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut cur = Cur { buf: &buf, pos: 0 };

    let magic: [u8; 4] = cur.take(4, "the magic")?.try_into().unwrap();
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { got: magic });
    }
    let version = cur.u32("the version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion { got: version });
    }
    let cfg_len = cur.u32("the config length")? as usize;
    let cfg_bytes = cur.take(cfg_len, "the config JSON")?;
    let config: ModelConfig =
        serde_json::from_slice(cfg_bytes).map_err(|e| CheckpointError::Config(e.to_string()))?;
    config
        .validate()
        .map_err(|e| CheckpointError::Config(e.to_string()))?;

    let (mut gen, mut disc) = param_layout(&config);
    for p in gen.iter_mut() {
        cur.fill_param(p)?;
    }
    for p in disc.iter_mut() {
        cur.fill_param(p)?;
    }

    let epoch = cur.u64("the epoch counter")?;
    let step = cur.u64("the step counter")?;
    let lambda = cur.f64("lambda")?;
    let rng_seed = cur.u64("the rng seed")?;
    let rng_stream = cur.u64("the rng stream")?;
    let rng_word_pos = cur.u128("the rng word position")?;
    let g_lens: Vec<usize> = gen.iter().map(Param::numel).collect();
    let d_lens: Vec<usize> = disc.iter().map(Param::numel).collect();
    let g_opt = cur.opt_cells(&g_lens, "generator optimizer state")?;
    let d_opt = cur.opt_cells(&d_lens, "discriminator optimizer state")?;
    if cur.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes {
            count: buf.len() - cur.pos,
        });
    }

    let mut rng = ChaCha20Rng::seed_from_u64(rng_seed);
    rng.set_stream(rng_stream);
    rng.set_word_pos(rng_word_pos);

    Ok(Checkpoint {
        config,
        gen,
        disc,
        state: TrainState {
            epoch,
            step,
            lambda,
            rng_seed,
            rng,
            g_opt,
            d_opt,
        },
    })
}
