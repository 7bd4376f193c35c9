//! Line-delimited JSON persistence and content hashing.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::LabeledCitation;

pub fn to_jsonl<T: Serialize>(items: &[T]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text).map_err(|e| match e {
        Error::Json(j) => Error::Record {
            path: path.into(),
            line: j.line(),
            message: j.to_string(),
        },
        other => other,
    })
}

pub fn read_citations(path: &Path) -> Result<Vec<LabeledCitation>> {
    read_jsonl(path)
}

pub fn write_citations(path: &Path, citations: &[LabeledCitation]) -> Result<()> {
    write_jsonl(path, citations)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&read_bytes(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{tokenize, FieldLabel, Origin};
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn citation_file_roundtrip_is_bit_exact(s in "[A-Za-zé0-9 ,.()\"\\\\-]{1,50}") {
            let tokens = tokenize(&s);
            prop_assume!(!tokens.is_empty());
            let c = LabeledCitation {
                source: s.clone(),
                labels: vec![FieldLabel::Title; tokens.len()],
                tokens,
                origin: Origin::Task,
            };
            let text = to_jsonl(std::slice::from_ref(&c)).unwrap();
            let back: Vec<LabeledCitation> = from_jsonl(&text).unwrap();
            prop_assert_eq!(&back[0], &c);
            prop_assert_eq!(to_jsonl(&back).unwrap(), text);
        }
    }
}
