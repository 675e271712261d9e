//! Canonical text serialization and content digests.
//!
//! Object keys are emitted in sorted order regardless of map implementation,
//! and `\r\n` / lone `\r` inside strings are normalized to `\n`. The digest is
//! SHA-256 over the canonical text, hex encoded.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub fn to_canonical_string<T: Serialize + ?Sized>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("canonical serialization of in-memory value");
    let mut out = String::new();
    write_value(&v, &mut out);
    out.push('\n');
    out
}

pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> String {
    sha256_hex(to_canonical_string(value).as_bytes())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn normalize_newlines(s: &str) -> std::borrow::Cow<'_, str> {
    if s.contains('\r') {
        s.replace("\r\n", "\n").replace('\r', "\n").into()
    } else {
        s.into()
    }
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null | Value::Bool(_) | Value::Number(_) => out.push_str(&v.to_string()),
        Value::String(s) => out.push_str(&Value::String(normalize_newlines(s).into_owned()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(normalize_newlines(k).into_owned()).to_string());
                out.push(':');
                write_value(&map[k], out);
            }
            out.push('}');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_sorted_and_newlines_normalized() {
        let a = json!({"b": 1, "a": "x\r\ny"});
        assert_eq!(to_canonical_string(&a), "{\"a\":\"x\\ny\",\"b\":1}\n");
        let b = json!({"a": "x\ny", "b": 1});
        assert_eq!(digest_of(&a), digest_of(&b));
    }

    #[test]
    fn digest_is_sha256_hex() {
        // sha256("abc")
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
