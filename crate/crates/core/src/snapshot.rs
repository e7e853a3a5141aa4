//! `SIV2` binary snapshots and plain-text manifests.
//!
//! Layout (little-endian): magic `SIV2`, `u32` grid size n, `u32` component
//! count, `f64` time stamp, then each component as n·n row-major `f64`
//! physical-space values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SivError};
use crate::spectral::{GridSize, PhysicalField, SpectralField};

pub const MAGIC: &[u8; 4] = b"SIV2";

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub components: Vec<PhysicalField>,
}

impl Snapshot {
    pub fn from_spectral(time: f64, fields: &[&SpectralField]) -> Self {
        Snapshot { time, components: fields.iter().map(|f| f.to_physical()).collect() }
    }

    pub fn to_spectral(&self) -> Vec<SpectralField> {
        self.components.iter().map(SpectralField::from_physical).collect()
    }

    pub fn size(&self) -> Option<GridSize> {
        self.components.first().map(|c| c.size())
    }

    pub fn encode(&self) -> Vec<u8> {
        let n = self.size().map_or(0, |s| s.get());
        let mut out = Vec::with_capacity(20 + self.components.len() * n * n * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.components.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        for c in &self.components {
            for v in c.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err("missing SIV2 magic".into());
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let n = word(4);
        let count = word(8);
        let time = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
        let size = GridSize::new(n).map_err(|e| e.to_string())?;
        let expected = 20 + count * n * n * 8;
        if bytes.len() != expected {
            return Err(format!("expected {expected} bytes, found {}", bytes.len()));
        }
        let mut components = Vec::with_capacity(count);
        let mut at = 20;
        for _ in 0..count {
            let values: Vec<f64> = bytes[at..at + n * n * 8]
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            at += n * n * 8;
            components.push(PhysicalField::from_values(size, values).map_err(|e| e.to_string())?);
        }
        Ok(Snapshot { time, components })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        BufReader::new(fs::File::open(path)?).read_to_end(&mut bytes)?;
        Snapshot::decode(&bytes)
            .map_err(|reason| SivError::Snapshot { path: path.to_path_buf(), reason })
    }
}

/// Flat `key=value` text, one pair per line; `#` starts a comment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues(pub BTreeMap<String, String>);

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                SivError::config(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| SivError::config(format!("bad value for {key}: {v:?}"))),
        }
    }

    pub fn require<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| SivError::config(format!("missing key {key}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let s = GridSize::new(4).unwrap();
        let snap = Snapshot {
            time: 0.25,
            components: vec![PhysicalField::from_fn(s, |x, y| x + y)],
        };
        let bytes = snap.encode();
        assert_eq!(&bytes[..4], b"SIV2");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 4);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(f64::from_le_bytes(bytes[12..20].try_into().unwrap()), 0.25);
        assert_eq!(bytes.len(), 20 + 16 * 8);
        assert!(Snapshot::decode(&bytes[..30]).is_err());
        assert!(Snapshot::decode(b"SIV1aaaaaaaaaaaaaaaaaaaa").is_err());
    }

    #[test]
    fn manifest_parse() {
        let kv = KeyValues::parse("n = 64\n# comment\ndt=0.001 # trailing\n").unwrap();
        assert_eq!(kv.require::<usize>("n").unwrap(), 64);
        assert_eq!(kv.require::<f64>("dt").unwrap(), 0.001);
        assert!(kv.require::<f64>("tau").is_err());
        assert!(KeyValues::parse("novalue").is_err());
        assert!(kv.get::<usize>("dt").is_err());
    }

    proptest! {
        #[test]
        fn snapshot_bytes_roundtrip(vals in proptest::collection::vec(-1e6f64..1e6, 32), t in -10.0f64..10.0) {
            let s = GridSize::new(4).unwrap();
            let snap = Snapshot {
                time: t,
                components: vec![
                    PhysicalField::from_values(s, vals[..16].to_vec()).unwrap(),
                    PhysicalField::from_values(s, vals[16..].to_vec()).unwrap(),
                ],
            };
            prop_assert_eq!(Snapshot::decode(&snap.encode()).unwrap(), snap);
        }
    }
}
