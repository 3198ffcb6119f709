//! Versioned JSON model files and content hashing.

use std::fs;
use std::io::Read;
use std::path::Path;

use serde::de::{DeserializeOwned, IgnoredAny};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("file holds a '{found}' model, expected '{expected}'")]
    Kind { found: String, expected: String },
    #[error("malformed model file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    format_version: u32,
    kind: &'a str,
    model: &'a T,
}

#[derive(Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    #[allow(dead_code)]
    model: IgnoredAny,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    model: T,
}

pub fn to_model_json<T: Serialize>(kind: &str, model: &T) -> Result<String, PersistError> {
    Ok(serde_json::to_string(&EnvelopeOut {
        format_version: FORMAT_VERSION,
        kind,
        model,
    })?)
}

pub fn from_model_json<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T, PersistError> {
    let header: Header = serde_json::from_str(text)?;
    if header.format_version != FORMAT_VERSION {
        return Err(PersistError::Version {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != kind {
        return Err(PersistError::Kind {
            found: header.kind,
            expected: kind.to_string(),
        });
    }
    let env: EnvelopeIn<T> = serde_json::from_str(text)?;
    Ok(env.model)
}

pub fn write_model<T: Serialize>(path: impl AsRef<Path>, kind: &str, model: &T) -> Result<(), PersistError> {
    fs::write(path, to_model_json(kind, model)?)?;
    Ok(())
}

pub fn read_model<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T, PersistError> {
    let text = fs::read_to_string(path)?;
    from_model_json(kind, &text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String, std::io::Error> {
    let mut f = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Toy {
        w: Vec<f64>,
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let toy = Toy {
            w: vec![0.1, 1.0 / 3.0, -2.5e-300, f64::MIN_POSITIVE, 123456789.123456789],
        };
        let text = to_model_json("toy", &toy).unwrap();
        let back: Toy = from_model_json("toy", &text).unwrap();
        for (a, b) in toy.w.iter().zip(&back.w) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn wrong_kind_and_version_are_rejected() {
        let text = to_model_json("toy", &Toy { w: vec![] }).unwrap();
        assert!(matches!(from_model_json::<Toy>("inn", &text), Err(PersistError::Kind { .. })));
        let bumped = text.replace("\"format_version\":1", "\"format_version\":99");
        assert!(matches!(
            from_model_json::<Toy>("toy", &bumped),
            Err(PersistError::Version { found: 99, .. })
        ));
        assert!(from_model_json::<Toy>("toy", &text[..text.len() - 3]).is_err());
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
