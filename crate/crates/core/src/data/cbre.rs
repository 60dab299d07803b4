//! CBRE embedding files.
//!
//! Little-endian, no padding:
//!
//! ```text
//! "CBRE" | version u16 (=1) | dim u32 | count u64
//! count × ( pair_id u64 | prompt f32×dim | resp_a f32×dim | resp_b f32×dim )
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::datamodel::{Embedding, PreferencePair};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CBRE";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

pub fn write_embeddings(path: &Path, pairs: &[PreferencePair]) -> Result<()> {
    let dim = pairs.first().map_or(0, |p| p.dim());
    if let Some(bad) = pairs.iter().find(|p| p.dim() != dim) {
        return Err(Error::Config(format!(
            "pair {} has dimension {} but the file dimension is {dim}",
            bad.pair_id,
            bad.dim()
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(pairs.len() as u64).to_le_bytes()).map_err(io)?;
    for p in pairs {
        w.write_all(&p.pair_id.to_le_bytes()).map_err(io)?;
        for e in [&p.prompt, &p.resp_a, &p.resp_b] {
            for v in e.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<PreferencePair>> {
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    parse(&bytes, path)
}

fn parse(bytes: &[u8], path: &Path) -> Result<Vec<PreferencePair>> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, "bad magic, expected CBRE".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(fail(4, format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    if dim == 0 && count > 0 {
        return Err(fail(6, "dimension 0 with a non-empty record count".into()));
    }

    let record_len = 8 + 12 * dim;
    let body = &bytes[HEADER_LEN..];
    let complete = (body.len() / record_len) as u64;
    if complete < count {
        let offset = HEADER_LEN + complete as usize * record_len;
        return Err(fail(
            offset,
            format!("truncated at record {complete} of {count} (record size {record_len} bytes)"),
        ));
    }
    if body.len() as u64 != count * record_len as u64 {
        let offset = HEADER_LEN + count as usize * record_len;
        return Err(fail(offset, "trailing bytes after the last record".into()));
    }

    let mut pairs = Vec::with_capacity(count as usize);
    for (r, rec) in body.chunks_exact(record_len).enumerate() {
        let start = HEADER_LEN + r * record_len;
        let pair_id = u64::from_le_bytes(rec[0..8].try_into().unwrap());
        let vector = |j: usize| -> Result<Embedding> {
            let from = 8 + j * 4 * dim;
            let values = rec[from..from + 4 * dim]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Embedding::new(values).map_err(|e| fail(start + from, format!("record {r}: {e}")))
        };
        pairs.push(PreferencePair::new(pair_id, vector(0)?, vector(1)?, vector(2)?, None)?);
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(dim: u32, n: u64) -> Vec<u8> {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b.extend_from_slice(&n.to_le_bytes());
        b
    }

    fn record(id: u64, dim: usize, base: f32) -> Vec<u8> {
        let mut b = id.to_le_bytes().to_vec();
        for j in 0..3 * dim {
            b.extend_from_slice(&(base + j as f32).to_le_bytes());
        }
        b
    }

    #[test]
    fn parses_two_records() {
        let mut bytes = header(4, 2);
        bytes.extend(record(10, 4, 0.0));
        bytes.extend(record(11, 4, 100.0));
        let pairs = parse(&bytes, Path::new("x")).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].pair_id, 10);
        assert_eq!(pairs[1].dim(), 4);
        assert_eq!(pairs[1].resp_b.as_slice(), &[108.0, 109.0, 110.0, 111.0]);
        assert!(pairs.iter().all(|p| p.label.is_none()));
    }

    #[test]
    fn truncated_record_names_its_index() {
        let mut bytes = header(4, 3);
        bytes.extend(record(0, 4, 0.0));
        bytes.extend(record(1, 4, 0.0));
        bytes.extend(&record(2, 4, 0.0)[..20]);
        let err = parse(&bytes, Path::new("x")).unwrap_err();
        match err {
            Error::Format { offset, message, .. } => {
                assert_eq!(offset as usize, HEADER_LEN + 2 * (8 + 48));
                assert!(message.contains("record 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = header(1, 0);
        bytes[0] = b'X';
        assert!(matches!(parse(&bytes, Path::new("x")), Err(Error::Format { offset: 0, .. })));
        let mut bytes = header(1, 0);
        bytes[4] = 9;
        assert!(matches!(parse(&bytes, Path::new("x")), Err(Error::Format { offset: 4, .. })));
        assert!(parse(&bytes[..7], Path::new("x")).is_err());
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = header(1, 1);
        bytes.extend(record(0, 1, 0.0));
        bytes.push(0);
        assert!(parse(&bytes, Path::new("x")).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let mut bytes = header(1, 1);
        bytes.extend(0u64.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(f32::NAN.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        assert!(matches!(parse(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }
}
