//! Binary corpus bundle written by `prepare` and read by every other command.
//!
//! Layout (little endian): magic `RCFC`, u32 version, u8 timestamp flag, then
//! the user, item, type and value vocabularies (u32 count + length-prefixed
//! labels), per user the train list, validation and test item, and finally
//! the triplet list.

use std::path::Path;

use super::{Corpus, InteractionSet, RelationIndex, Triplet, UserSplit, Vocab};
use crate::binio::{ReadError, Reader, Writer};
use crate::error::{RcfError, Result};

pub const BUNDLE_MAGIC: &[u8; 4] = b"RCFC";
const BUNDLE_VERSION: u32 = 1;

fn write_vocab(w: &mut Writer, v: &Vocab) {
    w.u32(v.len() as u32);
    for l in v.labels() {
        w.str(l);
    }
}

pub fn write_bundle(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(BUNDLE_MAGIC);
    w.u32(BUNDLE_VERSION);
    w.bytes(&[corpus.interactions.has_timestamps as u8]);
    write_vocab(&mut w, &corpus.users);
    write_vocab(&mut w, &corpus.items);
    write_vocab(&mut w, corpus.relations.types());
    write_vocab(&mut w, corpus.relations.values());
    for s in &corpus.interactions.users {
        w.u32(s.train.len() as u32);
        for &i in &s.train {
            w.u32(i);
        }
        w.u32(s.valid);
        w.u32(s.test);
    }
    let triplets = corpus.relations.triplets();
    w.u64(triplets.len() as u64);
    for t in triplets {
        w.u32(t.a);
        w.u32(t.b);
        w.u32(t.rtype);
        w.u32(t.value);
    }
    std::fs::write(path, &w.buf).map_err(|e| RcfError::io(path, e))
}

fn bundle_err(e: ReadError) -> RcfError {
    match e {
        ReadError::Truncated => RcfError::Data("unexpected end of corpus bundle".into()),
        ReadError::Utf8 => RcfError::Data("invalid UTF-8 label in corpus bundle".into()),
    }
}

fn read_vocab(r: &mut Reader) -> Result<Vocab> {
    let n = r.u32().map_err(bundle_err)? as usize;
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        labels.push(r.str().map_err(bundle_err)?);
    }
    Vocab::from_labels(labels)
}

pub fn read_bundle(path: &Path) -> Result<Corpus> {
    let data = std::fs::read(path).map_err(|e| RcfError::io(path, e))?;
    let mut r = Reader::new(&data);
    if r.take(4).map_err(bundle_err)? != BUNDLE_MAGIC {
        return Err(RcfError::Data(format!("{}: not a corpus bundle", path.display())));
    }
    let version = r.u32().map_err(bundle_err)?;
    if version != BUNDLE_VERSION {
        return Err(RcfError::Data(format!("unsupported corpus bundle version {version}")));
    }
    let has_timestamps = r.take(1).map_err(bundle_err)?[0] != 0;
    let users = read_vocab(&mut r)?;
    let items = read_vocab(&mut r)?;
    let types = read_vocab(&mut r)?;
    let values = read_vocab(&mut r)?;
    let n_items = items.len() as u32;
    let check = |i: u32| -> Result<u32> {
        if i < n_items {
            Ok(i)
        } else {
            Err(RcfError::Data(format!("item index {i} out of range in corpus bundle")))
        }
    };
    let mut splits = Vec::with_capacity(users.len());
    for _ in 0..users.len() {
        let n = r.u32().map_err(bundle_err)? as usize;
        let mut train = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            train.push(check(r.u32().map_err(bundle_err)?)?);
        }
        let valid = check(r.u32().map_err(bundle_err)?)?;
        let test = check(r.u32().map_err(bundle_err)?)?;
        splits.push(UserSplit { train, valid, test });
    }
    let n_trip = r.u64().map_err(bundle_err)? as usize;
    let mut triplets = Vec::with_capacity(n_trip.min(1 << 24));
    for _ in 0..n_trip {
        triplets.push(Triplet {
            a: r.u32().map_err(bundle_err)?,
            b: r.u32().map_err(bundle_err)?,
            rtype: r.u32().map_err(bundle_err)?,
            value: r.u32().map_err(bundle_err)?,
        });
    }
    if r.remaining() != 0 {
        return Err(RcfError::Data("trailing bytes in corpus bundle".into()));
    }
    let relations = RelationIndex::build(items.len(), types, values, triplets)?;
    Ok(Corpus::new(
        users,
        items,
        InteractionSet {
            users: splits,
            has_timestamps,
        },
        relations,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_byte_identical_rewrite() {
        let c = Corpus::from_tsv(
            "u\ta\t1\nu\tb\t2\nu\tc\t3\nv\tb\t1\nv\tc\t5\nv\td\t2\n",
            Some("a\tb\tgenre\tx\nc\td\tactor\ty\n"),
            true,
            0,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.bin");
        let p2 = dir.path().join("b.bin");
        write_bundle(&c, &p1).unwrap();
        let back = read_bundle(&p1).unwrap();
        write_bundle(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(back.interactions, c.interactions);
        assert_eq!(back.relations.triplets(), c.relations.triplets());
        assert_eq!(back.summary(), c.summary());
    }

    #[test]
    fn truncated_bundle_is_rejected() {
        let c = Corpus::from_tsv("u\ta\nu\tb\nu\tc\n", None, false, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.bin");
        write_bundle(&c, &p).unwrap();
        let data = std::fs::read(&p).unwrap();
        std::fs::write(&p, &data[..data.len() - 3]).unwrap();
        let err = read_bundle(&p).unwrap_err();
        assert!(err.to_string().contains("unexpected end"));
    }
}
