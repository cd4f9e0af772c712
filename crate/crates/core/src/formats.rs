//! Binary containers and text records exchanged with the extractor and CLI.
//!
//! All integers and floats are little-endian. Every container starts with a
//! four-byte magic followed by a `u32` version (currently `1`).
//!
//! | magic  | contents                                                    |
//! |--------|-------------------------------------------------------------|
//! | `SMSK` | H, W, N, then per mask: `u64` area, `u32` run count, runs   |
//! | `SAGG` | H, W, then `H*W` `u16` labels, row-major                    |
//! | `SEMB` | count, dim, then per record: id, region, class, `f32` × dim |
//! | `SPRO` | dim, class count, then per class: id, name, step, score, prototypes |
//!
//! Mask runs alternate zeros and ones, starting with a (possibly empty)
//! zero run, and cover the frame in row-major order.

use crate::classifier::Prediction;
use crate::error::{Error, Result};
use crate::label::{ClassId, LabelMap};
use crate::mask_agg::{RawMask, RawMaskSet};
use crate::protocol::RegionLabel;
use crate::prototype_bank::{ClassPrototypes, PrototypeBank, RegionEmbedding};

pub const VERSION: u32 = 1;
pub const MASK_MAGIC: &[u8; 4] = b"SMSK";
pub const LABEL_MAGIC: &[u8; 4] = b"SAGG";
pub const EMBEDDING_MAGIC: &[u8; 4] = b"SEMB";
pub const BANK_MAGIC: &[u8; 4] = b"SPRO";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(format!(
                    "{}: truncated at byte {} (need {n} more)",
                    self.what, self.pos
                ))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(format!("{}: string is not UTF-8", self.what)))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.array::<4>()?;
        if &m != magic {
            return Err(Error::format(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(&m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = self.u32()?;
        if v != VERSION {
            return Err(Error::format(format!(
                "{}: unsupported version {v}",
                self.what
            )));
        }
        Ok(())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("{what} {n} exceeds u32")))
}

fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len())
        .map_err(|_| Error::format(format!("string of {} bytes exceeds u16 length", s.len())))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn header(magic: &[u8; 4]) -> Vec<u8> {
    let mut out = magic.to_vec();
    put_u32(&mut out, VERSION);
    out
}

/// Run lengths of a binary mask, starting with the zero run.
pub fn rle_encode(pixels: &[bool]) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len: u32 = 0;
    for &p in pixels {
        if p != current {
            runs.push(len);
            current = p;
            len = 0;
        }
        len += 1;
    }
    if len > 0 || runs.is_empty() {
        runs.push(len);
    }
    runs
}

pub fn rle_decode(runs: &[u32], n_pixels: usize) -> Result<Vec<bool>> {
    let mut pixels = Vec::with_capacity(n_pixels);
    for (i, &r) in runs.iter().enumerate() {
        let value = i % 2 == 1;
        if pixels.len() + r as usize > n_pixels {
            return Err(Error::format(format!(
                "mask runs overflow the {n_pixels}-pixel frame"
            )));
        }
        pixels.extend(std::iter::repeat_n(value, r as usize));
    }
    if pixels.len() != n_pixels {
        return Err(Error::format(format!(
            "mask runs cover {} of {n_pixels} pixels",
            pixels.len()
        )));
    }
    Ok(pixels)
}

pub fn encode_mask_set(set: &RawMaskSet) -> Result<Vec<u8>> {
    set.validate()?;
    let mut out = header(MASK_MAGIC);
    put_u32(&mut out, len_u32(set.height, "height")?);
    put_u32(&mut out, len_u32(set.width, "width")?);
    put_u32(&mut out, len_u32(set.masks.len(), "mask count")?);
    for m in &set.masks {
        out.extend_from_slice(&m.area.to_le_bytes());
        let runs = rle_encode(&m.pixels);
        put_u32(&mut out, len_u32(runs.len(), "run count")?);
        for r in runs {
            put_u32(&mut out, r);
        }
    }
    Ok(out)
}

/// Decodes an `SMSK` container. The image id is not stored in the file.
pub fn decode_mask_set(bytes: &[u8], image_id: impl Into<String>) -> Result<RawMaskSet> {
    let mut r = Reader::new(bytes, "SMSK");
    r.header(MASK_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let count = r.u32()? as usize;
    let n_pixels = height
        .checked_mul(width)
        .ok_or_else(|| Error::format("SMSK: frame size overflows"))?;
    let mut masks = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let area = r.u64()?;
        let n_runs = r.u32()? as usize;
        let raw = r.take(
            n_runs
                .checked_mul(4)
                .ok_or_else(|| Error::format("SMSK: run count overflows"))?,
        )?;
        let runs: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        masks.push(RawMask {
            pixels: rle_decode(&runs, n_pixels)?,
            area,
        });
    }
    r.finish()?;
    let set = RawMaskSet {
        image_id: image_id.into(),
        height,
        width,
        masks,
    };
    set.validate()?;
    Ok(set)
}

pub fn encode_label_map(map: &LabelMap) -> Result<Vec<u8>> {
    let mut out = header(LABEL_MAGIC);
    put_u32(&mut out, len_u32(map.height(), "height")?);
    put_u32(&mut out, len_u32(map.width(), "width")?);
    out.reserve(map.as_slice().len() * 2);
    for &l in map.as_slice() {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_label_map(bytes: &[u8]) -> Result<LabelMap> {
    let mut r = Reader::new(bytes, "SAGG");
    r.header(LABEL_MAGIC)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let n = height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::format("SAGG: frame size overflows"))?;
    let data = r
        .take(n)?
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    r.finish()?;
    LabelMap::from_vec(height, width, data)
}

/// Encodes embeddings; `dim` is written even when the list is empty.
pub fn encode_embeddings(dim: usize, records: &[RegionEmbedding]) -> Result<Vec<u8>> {
    let mut out = header(EMBEDDING_MAGIC);
    put_u32(&mut out, len_u32(records.len(), "record count")?);
    put_u32(&mut out, len_u32(dim, "dim")?);
    for (i, e) in records.iter().enumerate() {
        if e.dim() != dim {
            return Err(Error::Record {
                index: i,
                source: Box::new(Error::dims(
                    format!("dim {dim}"),
                    format!("dim {}", e.dim()),
                )),
            });
        }
        put_string(&mut out, &e.image_id)?;
        put_u32(&mut out, e.region_id);
        let class = e.gt_class.map_or(-1, |c| c.0 as i32);
        out.extend_from_slice(&class.to_le_bytes());
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Returns `(dim, records)`.
pub fn decode_embeddings(bytes: &[u8]) -> Result<(usize, Vec<RegionEmbedding>)> {
    let mut r = Reader::new(bytes, "SEMB");
    r.header(EMBEDDING_MAGIC)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut records = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let image_id = r.string()?;
        let region_id = r.u32()?;
        let gt_class = match r.i32()? {
            -1 => None,
            c @ 0..=0xFFFF => Some(ClassId(c as u16)),
            c => return Err(Error::format(format!("SEMB: invalid class id {c}"))),
        };
        let vector = (0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        records.push(RegionEmbedding {
            image_id,
            region_id,
            vector,
            gt_class,
        });
    }
    r.finish()?;
    Ok((dim, records))
}

pub fn encode_bank(bank: &PrototypeBank) -> Vec<u8> {
    let mut out = header(BANK_MAGIC);
    put_u32(&mut out, bank.dim() as u32);
    put_u32(&mut out, bank.len() as u32);
    for c in bank.classes() {
        put_u32(&mut out, c.class_id.0 as u32);
        // names are bounded at registration time by callers; truncate defensively
        let name = truncate_utf8(&c.class_name, u16::MAX as usize);
        put_string(&mut out, name).expect("name fits after truncation");
        put_u32(&mut out, c.registered_at_step);
        out.extend_from_slice(&c.variance_score.to_le_bytes());
        put_u32(&mut out, c.prototypes.len() as u32);
        for p in &c.prototypes {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

pub fn decode_bank(bytes: &[u8]) -> Result<PrototypeBank> {
    let mut r = Reader::new(bytes, "SPRO");
    r.header(BANK_MAGIC)?;
    let dim = r.u32()? as usize;
    let n_classes = r.u32()? as usize;
    let mut bank = PrototypeBank::new(dim);
    let mut prev: Option<ClassId> = None;
    for _ in 0..n_classes {
        let id = r.u32()?;
        let class_id = u16::try_from(id)
            .map(ClassId)
            .map_err(|_| Error::format(format!("SPRO: class id {id} exceeds u16")))?;
        if !class_id.is_foreground() {
            return Err(Error::format(format!("SPRO: reserved class id {class_id}")));
        }
        if prev.is_some_and(|p| p >= class_id) {
            return Err(Error::format("SPRO: classes not in ascending id order"));
        }
        prev = Some(class_id);
        let class_name = r.string()?;
        let registered_at_step = r.u32()?;
        let variance_score = r.f32()?;
        let n_protos = r.u32()? as usize;
        if n_protos == 0 {
            return Err(Error::format(format!(
                "SPRO: class {class_id} has no prototypes"
            )));
        }
        let mut prototypes = Vec::with_capacity(n_protos.min(1024));
        for _ in 0..n_protos {
            prototypes.push((0..dim).map(|_| r.f32()).collect::<Result<Vec<_>>>()?);
        }
        bank.insert_raw(ClassPrototypes {
            class_id,
            class_name,
            prototypes,
            registered_at_step,
            variance_score,
        })?;
    }
    r.finish()?;
    Ok(bank)
}

/// `%.9g`-style rendering: nine significant digits, trailing zeros dropped.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// One tab-separated line per prediction:
/// `image_id  region_id  predicted_class  best_similarity`.
pub fn write_predictions(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            p.image_id,
            p.region_id,
            p.predicted_class,
            format_significant(p.best_similarity, 9)
        ));
    }
    out
}

fn field<T: std::str::FromStr>(parts: &[&str], i: usize, line: usize, name: &str) -> Result<T> {
    parts
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::format(format!("line {line}: bad or missing {name}")))
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parts: Vec<&str> = l.split('\t').collect();
            if parts.len() != 4 {
                return Err(Error::format(format!("line {}: expected 4 fields", i + 1)));
            }
            Ok(Prediction {
                image_id: parts[0].to_string(),
                region_id: field(&parts, 1, i + 1, "region_id")?,
                predicted_class: ClassId(field(&parts, 2, i + 1, "predicted_class")?),
                best_similarity: field(&parts, 3, i + 1, "best_similarity")?,
                runner_up_class: None,
            })
        })
        .collect()
}

/// `image_id  region_id  class  overlap`, with `-` for unassigned regions.
pub fn write_region_labels(labels: &[RegionLabel]) -> String {
    let mut out = String::new();
    for l in labels {
        let class = l
            .gt_class
            .map_or_else(|| "-".to_string(), |c| c.to_string());
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            l.image_id,
            l.region_id,
            class,
            format_significant(l.overlap_fraction, 9)
        ));
    }
    out
}

pub fn parse_region_labels(text: &str) -> Result<Vec<RegionLabel>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let parts: Vec<&str> = l.split('\t').collect();
            if !(3..=4).contains(&parts.len()) {
                return Err(Error::format(format!(
                    "line {}: expected 3 or 4 fields",
                    i + 1
                )));
            }
            let gt_class = match parts[2] {
                "-" => None,
                _ => Some(ClassId(field(&parts, 2, i + 1, "class")?)),
            };
            let overlap_fraction = if parts.len() == 4 {
                field(&parts, 3, i + 1, "overlap")?
            } else {
                1.0
            };
            Ok(RegionLabel {
                image_id: parts[0].to_string(),
                region_id: field(&parts, 1, i + 1, "region_id")?,
                gt_class,
                overlap_fraction,
            })
        })
        .collect()
}
