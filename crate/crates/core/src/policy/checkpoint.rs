//! Flat binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | bytes | content                                   |
//! |-------|-------------------------------------------|
//! | 8     | magic `PDPOCKPT`                          |
//! | 4     | format version (`1`), u32                 |
//! | 4 × 6 | hidden, k_neighbors, embed_dim, n_rbf, token count (20), offset buckets (8), u32 each |
//! | 8     | parameter count, u64                      |
//! | 4 × n | parameters as f32, tensors in declaration order: embed, enc_w, enc_b, dec1_w, dec1_b, dec2_w, dec2_b |

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::policy::{Hyper, PolicyParams, OFFSET_BUCKETS};
use crate::sequence::N_TOKENS;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PDPOCKPT";
const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &PolicyParams) -> Result<()> {
    let h = params.hyper();
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [
        VERSION,
        h.hidden as u32,
        h.k_neighbors as u32,
        h.embed_dim as u32,
        h.n_rbf as u32,
        N_TOKENS as u32,
        OFFSET_BUCKETS as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(params.len() * 4);
    for v in params.values() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<PolicyParams> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Data("checkpoint too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Data("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let hyper = Hyper {
        hidden: read_u32(&mut r)? as usize,
        k_neighbors: read_u32(&mut r)? as usize,
        embed_dim: read_u32(&mut r)? as usize,
        n_rbf: read_u32(&mut r)? as usize,
    };
    let (tokens, buckets) = (read_u32(&mut r)? as usize, read_u32(&mut r)? as usize);
    if tokens != N_TOKENS || buckets != OFFSET_BUCKETS {
        return Err(Error::Data(format!(
            "checkpoint has {tokens} tokens / {buckets} offset buckets, expected {N_TOKENS} / {OFFSET_BUCKETS}"
        )));
    }
    hyper.validate().map_err(|e| Error::Data(e.to_string()))?;
    let mut n = [0u8; 8];
    r.read_exact(&mut n)?;
    let n = u64::from_le_bytes(n) as usize;
    if n != hyper.layout().len {
        return Err(Error::Data(format!(
            "checkpoint declares {n} parameters but its architecture needs {}",
            hyper.layout().len
        )));
    }
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::Data("checkpoint truncated".into()))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Data("trailing bytes after checkpoint".into()));
    }
    let values = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
        .collect();
    PolicyParams::from_values(hyper, values).map_err(|e| Error::Data(e.to_string()))
}
