//! The `.bnne` model container.
//!
//! ```text
//! "BNNE" | u16 version | u16 0x1234
//! u32 length | graph JSON
//! u32 record count
//! per record:
//!   u16 id length | id | u8 flags (bit 0 weights, bit 1 requant)
//!   weights: u8 mode | u8 J | u8 provenance | u32 filters | u32 lanes
//!            | u32 words per filter | u64 words… | i32 folded bias… | i32 β…
//!   requant: u32 channels | u8 J | per channel: u32 M, u8 shift, i32 offset
//! u32 CRC-32 of every preceding byte
//! ```

use std::collections::BTreeMap;

use super::{put_len, Reader};
use crate::bitcore::{words_for, BinaryWeightSet, Mode, PackedBits, Provenance};
use crate::error::{Error, Result};
use crate::graph::{LayerWeights, Model, NetworkGraph, NodeParams};
use crate::layers::RequantParams;

const MAGIC: &[u8; 4] = b"BNNE";
pub const FORMAT_VERSION: u16 = 1;
const ENDIAN_MARK: u16 = 0x1234;
const HAS_WEIGHTS: u8 = 1;
const HAS_REQUANT: u8 = 2;

fn provenance_code(p: Provenance) -> u8 {
    match p {
        Provenance::Sign => 0,
        Provenance::Mask => 1,
    }
}

fn provenance_from(code: u8) -> Result<Provenance> {
    match code {
        0 => Ok(Provenance::Sign),
        1 => Ok(Provenance::Mask),
        other => Err(Error::Format(format!("unknown weight provenance {other}"))),
    }
}

pub fn write_model(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&ENDIAN_MARK.to_le_bytes());

    let graph = serde_json::to_vec(model.graph().graph())?;
    put_len(&mut out, graph.len(), "graph section")?;
    out.extend_from_slice(&graph);

    let params = model.params();
    put_len(&mut out, params.len(), "record count")?;
    for (id, p) in params {
        let id_len = u16::try_from(id.len()).map_err(|_| Error::Format(format!("node id `{id}` too long")))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        let flags = (u8::from(p.weights.is_some()) * HAS_WEIGHTS) | (u8::from(p.requant.is_some()) * HAS_REQUANT);
        out.push(flags);
        if let Some(w) = &p.weights {
            let s = &w.set;
            out.extend_from_slice(&[s.mode().code(), s.bits(), provenance_code(s.provenance())]);
            put_len(&mut out, s.out_channels(), "filter count")?;
            put_len(&mut out, s.lanes(), "lane count")?;
            put_len(&mut out, s.words_per_channel(), "words per filter")?;
            for c in 0..s.out_channels() {
                for word in s.channel_words(c) {
                    out.extend_from_slice(&word.to_le_bytes());
                }
            }
            for b in s.folded_bias().iter().chain(&w.beta) {
                out.extend_from_slice(&b.to_le_bytes());
            }
        }
        if let Some(rq) = &p.requant {
            put_len(&mut out, rq.channels(), "requant channels")?;
            out.push(rq.bits);
            for c in 0..rq.channels() {
                out.extend_from_slice(&rq.multiplier[c].to_le_bytes());
                out.push(rq.shift[c]);
                out.extend_from_slice(&rq.offset[c].to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

fn read_weights(r: &mut Reader<'_>) -> Result<LayerWeights> {
    let mode = Mode::try_from(r.u8("mode")?)?;
    let bits = r.u8("bit width")?;
    let provenance = provenance_from(r.u8("provenance")?)?;
    let filters = r.len("filter count")?;
    let lanes = r.len("lane count")?;
    let wpc = r.len("words per filter")?;
    if filters == 0 {
        return Err(Error::Format("weight record with no filters".into()));
    }
    if wpc != words_for(lanes) {
        return Err(Error::Format(format!("{wpc} words per filter cannot hold {lanes} lanes")));
    }
    // bound allocation by what the file can actually hold
    if filters.saturating_mul(wpc * 8 + 8) > r.remaining() {
        return Err(Error::Format("weight block larger than the file".into()));
    }
    let mut rows = Vec::with_capacity(filters);
    for _ in 0..filters {
        let words = (0..wpc).map(|_| r.u64("weight word")).collect::<Result<Vec<_>>>()?;
        rows.push(PackedBits::from_words(lanes, words)?);
    }
    let folded = (0..filters).map(|_| r.i32("folded bias")).collect::<Result<Vec<_>>>()?;
    let beta = (0..filters).map(|_| r.i32("bias")).collect::<Result<Vec<_>>>()?;
    let set = BinaryWeightSet::from_parts(mode, bits, &rows, folded, provenance)?;
    Ok(LayerWeights { set, beta })
}

fn read_requant(r: &mut Reader<'_>) -> Result<RequantParams> {
    let channels = r.len("requant channels")?;
    let bits = r.u8("requant bit width")?;
    if channels.saturating_mul(9) > r.remaining() {
        return Err(Error::Format("requant block larger than the file".into()));
    }
    let mut rq = RequantParams {
        bits,
        multiplier: Vec::with_capacity(channels),
        shift: Vec::with_capacity(channels),
        offset: Vec::with_capacity(channels),
    };
    for _ in 0..channels {
        rq.multiplier.push(r.u32("multiplier")?);
        rq.shift.push(r.u8("shift")?);
        rq.offset.push(r.i32("offset")?);
    }
    rq.validate()?;
    Ok(rq)
}

/// Parses and checks a container. The checksum is verified before anything else is read.
pub fn read_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a BNNE model container".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader::new(body);
    r.take(4, "magic")?;
    let version = r.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let mark = r.u16("endianness marker")?;
    if mark != ENDIAN_MARK {
        return Err(Error::Format(format!("bad endianness marker {mark:#06x}")));
    }
    let glen = r.len("graph length")?;
    let text = std::str::from_utf8(r.take(glen, "graph section")?)
        .map_err(|e| Error::Format(format!("graph section is not UTF-8: {e}")))?;
    let graph = NetworkGraph::from_json(text)?;

    let count = r.len("record count")?;
    let mut params: BTreeMap<String, NodeParams> = BTreeMap::new();
    for _ in 0..count {
        let id_len = usize::from(r.u16("id length")?);
        let id = std::str::from_utf8(r.take(id_len, "node id")?)
            .map_err(|e| Error::Format(format!("node id is not UTF-8: {e}")))?
            .to_string();
        let flags = r.u8("record flags")?;
        if flags & !(HAS_WEIGHTS | HAS_REQUANT) != 0 {
            return Err(Error::Format(format!("record `{id}` has unknown flags {flags:#x}")));
        }
        let mut p = NodeParams::default();
        if flags & HAS_WEIGHTS != 0 {
            p.weights = Some(read_weights(&mut r).map_err(|e| Error::node(&id, e.to_string()))?);
        }
        if flags & HAS_REQUANT != 0 {
            p.requant = Some(read_requant(&mut r).map_err(|e| Error::node(&id, e.to_string()))?);
        }
        if params.insert(id.clone(), p).is_some() {
            return Err(Error::node(&id, "duplicate parameter record"));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} unexpected bytes after the last record", r.remaining())));
    }
    Model::new(&graph, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convert::convert;
    use crate::graph::zoo;

    fn toy_bytes() -> (Model, Vec<u8>) {
        let g = zoo::toy_network();
        let model = convert(&g, &zoo::random_blob(&g, 2).unwrap()).unwrap();
        let bytes = write_model(&model).unwrap();
        (model, bytes)
    }

    #[test]
    fn round_trip_is_structural_identity() {
        let (model, bytes) = toy_bytes();
        let back = read_model(&bytes).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.graph().graph(), model.graph().graph());
        assert_eq!(write_model(&back).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let (_, bytes) = toy_bytes();
        assert_eq!(&bytes[..8], &[b'B', b'N', b'N', b'E', 1, 0, 0x34, 0x12]);
    }

    #[test]
    fn any_single_byte_change_is_detected() {
        let g = zoo::residual_block(2, 3, 3);
        let model = convert(&g, &zoo::random_blob(&g, 2).unwrap()).unwrap();
        let bytes = write_model(&model).unwrap();
        for i in 0..bytes.len() {
            let mut bad = bytes.clone();
            bad[i] ^= 0x5A;
            assert!(read_model(&bad).is_err(), "flip at byte {i} went unnoticed");
        }
    }

    #[test]
    fn missing_record_is_rejected() {
        let (model, _) = toy_bytes();
        let mut params = model.params().clone();
        params.remove("stem");
        assert!(Model::new(model.graph().graph(), params).is_err());
    }
}
