//! Binary container for hub files.
//!
//! Layout (all integers little-endian, all tensor payloads float32):
//!
//! ```text
//! magic "MODR" | version u32 | encoder fingerprint u64 | hub seed u64
//! variant u8 (0 = LoRA, 1 = VeRA) | rank u32 | embedding dim u32
//! layer count u32 | per layer: d_out u32, d_in u32
//! entry count u32 | per entry:
//!   class id u32 | created task u32 | name (u32 length + utf-8)
//!   zero-shot cache (f32 x dim)
//!   per layer, LoRA: B (d_out x rank), A (rank x d_in)
//!   per layer, VeRA: d_vec (rank), b_vec (d_out)
//! ```
//!
//! VeRA's frozen shared matrices are not stored; they are rebuilt from the
//! hub seed, which is what keeps them identical across every adapter of a
//! hub.

use crate::container::{Reader, Writer};
use crate::encoder::adapter::{AdapterModule, AdapterSpace, AdapterVariant};
use crate::encoder::reference::ReferenceEncoder;
use crate::error::{Error, Result};
use crate::hub::{FoundationalHub, HubEntry};
use crate::ids::{ClassId, TaskId};
use crate::numerics::param::ParamSet;
use crate::numerics::tensor::{EmbeddingVector, Tensor1D, Tensor2D};

const MAGIC: &[u8; 4] = b"MODR";
const VERSION: u32 = 1;

fn variant_tag(v: AdapterVariant) -> u8 {
    match v {
        AdapterVariant::Lora => 0,
        AdapterVariant::Vera => 1,
    }
}

fn tag_variant(tag: u8) -> Result<AdapterVariant> {
    match tag {
        0 => Ok(AdapterVariant::Lora),
        1 => Ok(AdapterVariant::Vera),
        other => Err(Error::Format(format!("hub file: unknown adapter variant tag {other}"))),
    }
}

pub(crate) fn encode(hub: &FoundationalHub) -> Result<Vec<u8>> {
    let mut w = Writer::new(MAGIC, VERSION);
    w.u64(hub.encoder_fingerprint());
    w.u64(hub.hub_seed());
    w.u8(variant_tag(hub.space().variant()));
    w.u32(hub.space().rank() as u32);
    w.u32(hub.dim() as u32);
    let shapes = hub.space().layer_shapes();
    w.u32(shapes.len() as u32);
    for &(d_out, d_in) in shapes {
        w.u32(d_out as u32);
        w.u32(d_in as u32);
    }
    w.u32(hub.len() as u32);
    for entry in hub.entries() {
        w.u32(entry.class_id.0);
        w.u32(entry.created_task.0);
        w.str(&entry.name);
        w.f32_slice(entry.zero_shot.as_slice());
        for l in 0..shapes.len() {
            match hub.space().variant() {
                AdapterVariant::Lora => {
                    w.matrix(entry.adapter.params().matrix(&format!("layer{l}.b"))?);
                    w.matrix(entry.adapter.params().matrix(&format!("layer{l}.a"))?);
                }
                AdapterVariant::Vera => {
                    w.vector(entry.adapter.params().vector(&format!("layer{l}.d_vec"))?);
                    w.vector(entry.adapter.params().vector(&format!("layer{l}.b_vec"))?);
                }
            }
        }
    }
    Ok(w.into_bytes())
}

struct Header {
    fingerprint: u64,
    hub_seed: u64,
    variant: AdapterVariant,
    rank: usize,
    dim: usize,
    shapes: Vec<(usize, usize)>,
    entry_count: usize,
}

fn read_header(r: &mut Reader<'_>) -> Result<Header> {
    r.expect_magic(MAGIC)?;
    r.expect_version(VERSION)?;
    let fingerprint = r.u64()?;
    let hub_seed = r.u64()?;
    let variant = tag_variant(r.u8()?)?;
    let rank = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let layer_count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let d_out = r.u32()? as usize;
        let d_in = r.u32()? as usize;
        shapes.push((d_out, d_in));
    }
    let entry_count = r.u32()? as usize;
    Ok(Header {
        fingerprint,
        hub_seed,
        variant,
        rank,
        dim,
        shapes,
        entry_count,
    })
}

fn read_entry(
    r: &mut Reader<'_>,
    header: &Header,
) -> Result<(ClassId, TaskId, String, EmbeddingVector, ParamSet)> {
    let class_id = ClassId(r.u32()?);
    let created_task = TaskId(r.u32()?);
    let name = r.str()?;
    let cache = Tensor1D::from_vec(r.f32_vec(header.dim)?)
        .map_err(|e| Error::Format(format!("hub file: {e}")))?;
    let zero_shot = EmbeddingVector::from_f32_stored(cache)
        .map_err(|e| Error::Format(format!("hub file: {e}")))?;
    let mut params = ParamSet::new();
    for (l, &(d_out, d_in)) in header.shapes.iter().enumerate() {
        match header.variant {
            AdapterVariant::Lora => {
                let b = check_shape(r.matrix()?, (d_out, header.rank), "B factor")?;
                let a = check_shape(r.matrix()?, (header.rank, d_in), "A factor")?;
                params.insert(format!("layer{l}.b"), b, true)?;
                params.insert(format!("layer{l}.a"), a, true)?;
            }
            AdapterVariant::Vera => {
                let d_vec = check_len(r.vector()?, header.rank, "d_vec")?;
                let b_vec = check_len(r.vector()?, d_out, "b_vec")?;
                params.insert(format!("layer{l}.d_vec"), d_vec, true)?;
                params.insert(format!("layer{l}.b_vec"), b_vec, true)?;
            }
        }
    }
    Ok((class_id, created_task, name, zero_shot, params))
}

fn check_shape(m: Tensor2D, expected: (usize, usize), what: &str) -> Result<Tensor2D> {
    if m.shape() != expected {
        return Err(Error::Format(format!(
            "hub file: {what} has shape {:?}, expected {:?}",
            m.shape(),
            expected
        )));
    }
    Ok(m)
}

fn check_len(v: Tensor1D, expected: usize, what: &str) -> Result<Tensor1D> {
    if v.len() != expected {
        return Err(Error::Format(format!(
            "hub file: {what} has length {}, expected {expected}",
            v.len()
        )));
    }
    Ok(v)
}

pub(crate) fn decode(bytes: &[u8], encoder: &ReferenceEncoder) -> Result<FoundationalHub> {
    let mut r = Reader::new(bytes, "hub file");
    let header = read_header(&mut r)?;
    if header.fingerprint != encoder.fingerprint() {
        return Err(Error::Format(format!(
            "hub file: encoder fingerprint mismatch (file {:016x}, encoder {:016x})",
            header.fingerprint,
            encoder.fingerprint()
        )));
    }
    if header.shapes != encoder.adapted_shapes() {
        return Err(Error::Format(format!(
            "hub file: adapted layer shapes {:?} do not match encoder {:?}",
            header.shapes,
            encoder.adapted_shapes()
        )));
    }
    if header.dim != encoder.dim() {
        return Err(Error::Format(format!(
            "hub file: embedding dim {} does not match encoder {}",
            header.dim,
            encoder.dim()
        )));
    }
    let space = AdapterSpace::new(
        header.variant,
        header.rank,
        header.shapes.clone(),
        header.hub_seed,
    )
    .map_err(|e| Error::Format(format!("hub file: {e}")))?;
    let mut entries = Vec::with_capacity(header.entry_count);
    for _ in 0..header.entry_count {
        let (class_id, created_task, name, zero_shot, params) = read_entry(&mut r, &header)?;
        if entries.iter().any(|e: &HubEntry| e.class_id == class_id) {
            return Err(Error::Format(format!(
                "hub file: duplicate class id {class_id}"
            )));
        }
        entries.push(HubEntry {
            class_id,
            name,
            adapter: AdapterModule::from_parts(class_id, header.variant, params),
            zero_shot,
            created_task,
        });
    }
    r.finish()?;
    Ok(FoundationalHub::from_parts(
        entries,
        space,
        header.hub_seed,
        header.fingerprint,
        header.dim,
    ))
}

/// Hub file metadata available without the paired encoder.
#[derive(Clone, Debug)]
pub struct HubSummary {
    pub fingerprint: u64,
    pub hub_seed: u64,
    pub variant: AdapterVariant,
    pub rank: usize,
    pub dim: usize,
    pub layer_shapes: Vec<(usize, usize)>,
    /// (class id, name, created task) per entry, in insertion order.
    pub entries: Vec<(u32, String, u32)>,
}

pub(crate) fn summarize(bytes: &[u8]) -> Result<HubSummary> {
    let mut r = Reader::new(bytes, "hub file");
    let header = read_header(&mut r)?;
    let mut entries = Vec::with_capacity(header.entry_count);
    for _ in 0..header.entry_count {
        let (class_id, created_task, name, _, _) = read_entry(&mut r, &header)?;
        entries.push((class_id.0, name, created_task.0));
    }
    r.finish()?;
    Ok(HubSummary {
        fingerprint: header.fingerprint,
        hub_seed: header.hub_seed,
        variant: header.variant,
        rank: header.rank,
        dim: header.dim,
        layer_shapes: header.shapes,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::reference::EncoderConfig;
    use crate::numerics::rng::SeededRng;

    fn encoder(seed: u64) -> ReferenceEncoder {
        ReferenceEncoder::new(EncoderConfig {
            seed,
            vocab: 64,
            d_tok: 8,
            hidden: 12,
            d_out: 8,
            adapted_layers: vec![0, 1],
        })
        .unwrap()
    }

    fn make_hub(enc: &ReferenceEncoder, variant: AdapterVariant, n: usize) -> FoundationalHub {
        let mut hub = FoundationalHub::new(enc, variant, 3, 41).unwrap();
        let names = ["heron", "plover", "gannet", "kestrel", "crane", "egret"];
        for i in 0..n {
            let mut adapter = hub.space().new_adapter(ClassId(i as u32), i as u64);
            let mut rng = SeededRng::new(500 + i as u64);
            for (_, p) in adapter.params_mut().iter_mut() {
                for x in p.value.elems_mut() {
                    *x = 0.3 * rng.normal();
                }
            }
            hub.insert(ClassId(i as u32), names[i], adapter, enc, TaskId((i / 2) as u32))
                .unwrap();
        }
        hub
    }

    fn assert_f32_exact(hub: &FoundationalHub, loaded: &FoundationalHub) {
        assert_eq!(hub.len(), loaded.len());
        for (a, b) in hub.entries().iter().zip(loaded.entries()) {
            assert_eq!(a.class_id, b.class_id);
            assert_eq!(a.name, b.name);
            assert_eq!(a.created_task, b.created_task);
            for (x, y) in a.zero_shot.as_slice().iter().zip(b.zero_shot.as_slice()) {
                assert_eq!(*x as f32 as f64, *y);
            }
            for (name, p) in a.adapter.params().iter() {
                let q = b.adapter.params().get(name).unwrap();
                for (x, y) in p.value.elems().iter().zip(q.value.elems()) {
                    assert_eq!(*x as f32 as f64, *y, "param {name}");
                }
            }
        }
    }

    #[test]
    fn round_trip_lora_and_vera() {
        let enc = encoder(1);
        let dir = tempfile::tempdir().unwrap();
        for variant in [AdapterVariant::Lora, AdapterVariant::Vera] {
            let hub = make_hub(&enc, variant, 4);
            let path = dir.path().join("hub.modr");
            hub.save(&path).unwrap();
            let loaded = FoundationalHub::load(&path, &enc).unwrap();
            assert_f32_exact(&hub, &loaded);
            assert_eq!(loaded.space().vera_shared(), hub.space().vera_shared());
        }
    }

    #[test]
    fn truncated_file_is_format_error() {
        let enc = encoder(1);
        let hub = make_hub(&enc, AdapterVariant::Lora, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.modr");
        hub.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3, 20, bytes.len() - 5] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            let err = FoundationalHub::load(&path, &enc).unwrap_err();
            assert!(matches!(err, Error::Format(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn wrong_encoder_fingerprint_is_rejected_with_both_prints() {
        let enc = encoder(1);
        let other = encoder(2);
        let hub = make_hub(&enc, AdapterVariant::Lora, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.modr");
        hub.save(&path).unwrap();
        let err = FoundationalHub::load(&path, &other).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains(&format!("{:016x}", enc.fingerprint())), "{msg}");
        assert!(msg.contains(&format!("{:016x}", other.fingerprint())), "{msg}");
    }

    #[test]
    fn bad_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.modr");
        std::fs::write(&path, b"NOPE whatever").unwrap();
        assert!(matches!(
            FoundationalHub::load(&path, &encoder(1)),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn summary_reads_without_encoder() {
        let enc = encoder(1);
        let hub = make_hub(&enc, AdapterVariant::Lora, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hub.modr");
        hub.save(&path).unwrap();
        let summary = FoundationalHub::inspect(&path).unwrap();
        assert_eq!(summary.fingerprint, enc.fingerprint());
        assert_eq!(summary.entries.len(), 3);
        assert_eq!(summary.entries[0].1, "heron");
        assert_eq!(summary.rank, 3);
    }
}
