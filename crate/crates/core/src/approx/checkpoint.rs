//! Versioned binary checkpoint format. All integers and floats are
//! little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "QZFPARAM"
//! 8       4     format version (1)
//! 12      1     head (0 = Q, 1 = actor-critic)
//! 13      1     bias flag (0 or 1)
//! 14      2     reserved, zero
//! 16      4     input_dim
//! 20      4     n_actions
//! 24      4     hidden layer count H
//! 28      4*H   hidden widths
//! ..      8     parameter version counter
//! ..      8     parameter count P
//! ..      8*P   parameters (f64)
//! ..      8     FNV-1a 64 checksum of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use super::{ApproxError, Head, NetworkSpec, ParamSet};

const MAGIC: &[u8; 8] = b"QZFPARAM";
const FORMAT_VERSION: u32 = 1;
const MAX_HIDDEN_LAYERS: usize = 64;
const MAX_WIDTH: usize = 1 << 16;
const MAX_INPUT: usize = 1 << 16;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn encode_checkpoint(params: &ParamSet) -> Vec<u8> {
    let spec = params.spec();
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match spec.head {
        Head::Q => 0,
        Head::ActorCritic => 1,
    });
    out.push(spec.bias as u8);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(spec.n_actions as u32).to_le_bytes());
    out.extend_from_slice(&(spec.hidden.len() as u32).to_le_bytes());
    for &w in &spec.hidden {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.extend_from_slice(&params.version().to_le_bytes());
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let sum = fnv1a(&out);
    out.extend_from_slice(&sum.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ApproxError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, ApproxError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, ApproxError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ApproxError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn bad(msg: impl Into<String>) -> ApproxError {
    ApproxError::Checkpoint(msg.into())
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet, ApproxError> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(bad("file too short"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let head = match c.u8()? {
        0 => Head::Q,
        1 => Head::ActorCritic,
        h => return Err(bad(format!("unknown head {h}"))),
    };
    let bias = match c.u8()? {
        0 => false,
        1 => true,
        b => return Err(bad(format!("invalid bias flag {b}"))),
    };
    if c.take(2)? != [0, 0] {
        return Err(bad("reserved bytes must be zero"));
    }
    let input_dim = c.u32()? as usize;
    let n_actions = c.u32()? as usize;
    let n_hidden = c.u32()? as usize;
    if input_dim > MAX_INPUT || n_actions > MAX_WIDTH || n_hidden > MAX_HIDDEN_LAYERS {
        return Err(bad("network dimensions out of range"));
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        let w = c.u32()? as usize;
        if w > MAX_WIDTH {
            return Err(bad("hidden width out of range"));
        }
        hidden.push(w);
    }
    let spec = NetworkSpec {
        input_dim,
        hidden,
        n_actions,
        head,
        bias,
    };
    spec.validate()?;
    let param_version = c.u64()?;
    let count = c.u64()?;
    if count != spec.param_count() as u64 {
        return Err(bad(format!(
            "parameter count {count} does not match network ({})",
            spec.param_count()
        )));
    }
    let raw = c.take(count as usize * 8)?;
    if c.pos != body.len() {
        return Err(bad("trailing bytes"));
    }
    let expected = u64::from_le_bytes(tail.try_into().expect("8 bytes"));
    if fnv1a(body) != expected {
        return Err(bad("checksum mismatch"));
    }
    let values = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    ParamSet::from_values(spec, values, param_version)
}

pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<(), ApproxError> {
    fs::write(path, encode_checkpoint(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamSet, ApproxError> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    #[test]
    fn roundtrip() {
        let mut r = rng::from_seed(3);
        for spec in [NetworkSpec::q(15), NetworkSpec::actor_critic(7)] {
            let p = ParamSet::new(spec, &mut r).unwrap();
            let back = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn corruption_is_detected() {
        let p = ParamSet::new(NetworkSpec::q(15), &mut rng::from_seed(1)).unwrap();
        let bytes = encode_checkpoint(&p);
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(decode_checkpoint(&flipped).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_checkpoint(b"QZFPARAM").is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(decode_checkpoint(&wrong_magic).is_err());
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(data in prop::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_checkpoint(&data);
        }
    }
}
