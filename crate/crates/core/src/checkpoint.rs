//! Binary checkpoint encoding.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GSEG"  u32 version = 1
//! u32 block_kind  u32 depth  u32 base_filters  u32 num_classes
//! u32 input_side  u32 input_channels
//! repeated until end of input:
//!   u16 name_len  name bytes (UTF-8)  u8 rank  u32 dims[rank]  f32 data[product(dims)]
//! ```

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::blocks::BlockKind;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::unet::{build_unet, UNetConfig, UNetModel};

pub const MAGIC: &[u8; 4] = b"GSEG";
pub const VERSION: u32 = 1;

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_config(config: &UNetConfig, out: &mut Vec<u8>) {
    for v in [
        config.block_kind.code(),
        config.depth as u32,
        config.base_filters as u32,
        config.num_classes as u32,
        config.input_side as u32,
        config.input_channels as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(model: &UNetModel<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 4 * model.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    encode_config(&model.config, &mut out);
    model.params.visit(&mut |name, t: &Tensor<f32>| {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    });
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn read_config(r: &mut Reader<'_>) -> Result<UNetConfig> {
    let code = r.u32("block kind")?;
    let block_kind =
        BlockKind::from_code(code).ok_or_else(|| corrupt(format!("unknown block kind {code}")))?;
    let mut next = |what| r.u32(what).map(|v| v as usize);
    let config = UNetConfig {
        block_kind,
        depth: next("depth")?,
        base_filters: next("base_filters")?,
        num_classes: next("num_classes")?,
        input_side: next("input_side")?,
        input_channels: next("input_channels")?,
    };
    config
        .validate()
        .map_err(|e| corrupt(format!("invalid stored configuration: {e}")))?;
    Ok(config)
}

/// Reads the configuration without decoding the tensors.
pub fn peek_config(bytes: &[u8]) -> Result<UNetConfig> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r)?;
    read_config(&mut r)
}

fn read_header(r: &mut Reader<'_>) -> Result<()> {
    if r.take(4, "magic")? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<UNetModel<f32>> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r)?;
    let config = read_config(&mut r)?;
    let mut tensors = BTreeMap::new();
    while !r.done() {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = core::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| corrupt("tensor name is not UTF-8"))?;
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("tensor too large"))?;
        let raw = r.take(
            count
                .checked_mul(4)
                .ok_or_else(|| corrupt("tensor too large"))?,
            name,
        )?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if tensors
            .insert(String::from(name), Tensor::new(shape, data)?)
            .is_some()
        {
            return Err(corrupt(format!("duplicate tensor {name}")));
        }
    }
    let mut model = build_unet::<f32>(config, 0)?;
    let mut missing = None;
    model
        .params
        .visit_mut(&mut |name, slot| match tensors.remove(&name) {
            Some(t) if t.shape() == slot.shape() => *slot = t,
            Some(t) => {
                missing.get_or_insert(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                ));
            }
            None => {
                missing.get_or_insert(format!("missing tensor {name}"));
            }
        });
    if let Some(msg) = missing {
        return Err(corrupt(msg));
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(corrupt(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> UNetModel<f32> {
        let config = UNetConfig {
            block_kind: BlockKind::MultiRes,
            depth: 3,
            base_filters: 8,
            num_classes: 3,
            input_side: 16,
            input_channels: 3,
        };
        build_unet(config, 42).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let model = small();
        let bytes = encode(&model);
        assert_eq!(&bytes[..4], b"GSEG");
        assert_eq!(decode(&bytes).unwrap(), model);
        assert_eq!(peek_config(&bytes).unwrap(), model.config);
    }

    #[test]
    fn truncation_and_corruption_are_rejected() {
        let bytes = encode(&small());
        for cut in [0, 3, 10, 31, 40, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::Checkpoint(_))),
                "cut {cut}"
            );
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut v2 = bytes.clone();
        v2[4] = 2;
        let err = decode(&v2).unwrap_err();
        assert!(format!("{err}").contains("version"));
    }
}
