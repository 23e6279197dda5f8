//! Line-oriented key=value files with exact fp64 round-tripping.
//!
//! All persisted artifacts (normalizers, bin edges, configs, network
//! checkpoints) share this format: an optional magic first line, then
//! `key=value` lines. Float arrays are stored as comma-separated hex bit
//! patterns so a save/load cycle is bitwise lossless.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Encode one f64 as its 16-digit hex bit pattern.
pub fn f64_to_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

/// Decode a hex bit pattern produced by [`f64_to_hex`].
pub fn f64_from_hex(s: &str) -> Result<f64> {
    let bits =
        u64::from_str_radix(s.trim(), 16).map_err(|e| Error::Parse(format!("bad f64 hex {s:?}: {e}")))?;
    Ok(f64::from_bits(bits))
}

/// Encode a slice of f64 as comma-separated hex words.
pub fn vec_to_hex(xs: &[f64]) -> String {
    let mut out = String::with_capacity(xs.len() * 17);
    for (i, x) in xs.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{:016x}", x.to_bits());
    }
    out
}

/// Decode a comma-separated hex word list.
pub fn vec_from_hex(s: &str) -> Result<Vec<f64>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(f64_from_hex).collect()
}

/// An ordered key=value document with an optional magic header.
#[derive(Debug, Clone, Default)]
pub struct KvDoc {
    pub magic: Option<String>,
    entries: Vec<(String, String)>,
    index: BTreeMap<String, usize>,
}

impl KvDoc {
    pub fn new(magic: &str) -> Self {
        KvDoc { magic: Some(magic.to_string()), entries: Vec::new(), index: BTreeMap::new() }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        debug_assert!(!key.contains('='), "key must not contain '='");
        if let Some(&i) = self.index.get(key) {
            self.entries[i].1 = value;
        } else {
            self.index.insert(key.to_string(), self.entries.len());
            self.entries.push((key.to_string(), value));
        }
    }

    pub fn set_f64(&mut self, key: &str, value: f64) {
        self.set(key, f64_to_hex(value));
    }

    pub fn set_vec(&mut self, key: &str, value: &[f64]) {
        self.set(key, vec_to_hex(value));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.index
            .get(key)
            .map(|&i| self.entries[i].1.as_str())
            .ok_or_else(|| Error::Parse(format!("missing key {key:?}")))
    }

    pub fn get_opt(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].1.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        f64_from_hex(self.get(key)?)
    }

    pub fn get_vec(&self, key: &str) -> Result<Vec<f64>> {
        vec_from_hex(self.get(key)?)
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?
            .parse()
            .map_err(|e| Error::Parse(format!("bad usize for {key:?}: {e}")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get(key)?
            .parse()
            .map_err(|e| Error::Parse(format!("bad u64 for {key:?}: {e}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(m) = &self.magic {
            out.push_str(m);
            out.push('\n');
        }
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, expect_magic: Option<&str>) -> Result<Self> {
        let mut lines = text.lines().peekable();
        let magic = if let Some(expected) = expect_magic {
            let got = lines
                .next()
                .ok_or_else(|| Error::Parse("empty document".into()))?;
            if got.trim() != expected {
                return Err(Error::Parse(format!(
                    "bad magic: expected {expected:?}, got {got:?}"
                )));
            }
            Some(expected.to_string())
        } else {
            None
        };
        let mut doc = KvDoc { magic, entries: Vec::new(), index: BTreeMap::new() };
        for line in lines {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad kv line {line:?}")))?;
            doc.set(k.trim(), v);
        }
        Ok(doc)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn read_file(path: &Path, expect_magic: Option<&str>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, expect_magic)
    }
}

/// FNV-1a over bytes; used for config fingerprints and artifact hashes.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Hex fingerprint of a byte slice.
pub fn fingerprint(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}
