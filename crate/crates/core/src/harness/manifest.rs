//! JSON-lines corpus manifests.
//!
//! One object per line:
//!
//! ```text
//! {"id": "utt1", "audio": "wav/utt1.wav", "reference": "das ist gut"}
//! {"id": "utt2", "logits": "asr/utt2.txt", "reference": ["ok"], "transcript": "fine"}
//! ```
//!
//! Relative paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("manifest {path}: empty corpus")]
    Empty { path: String },
    #[error("manifest {path} line {line}: {reason}")]
    Line {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRef {
    Audio(PathBuf),
    Logits(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub id: String,
    pub source: SourceRef,
    pub reference: Vec<String>,
    pub source_transcript: Option<Vec<String>>,
}

fn words(v: &Value) -> Option<Vec<String>> {
    match v {
        Value::String(s) => Some(s.split_whitespace().map(String::from).collect()),
        Value::Array(items) => items
            .iter()
            .map(|x| x.as_str().map(String::from))
            .collect(),
        _ => None,
    }
}

fn parse_line(obj: &Map<String, Value>, base: &Path) -> Result<Utterance, String> {
    let id = match obj.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(_) => return Err("`id` must be a non-empty string".into()),
        None => return Err("missing key `id`".into()),
    };
    let path_of = |key: &str| -> Result<Option<PathBuf>, String> {
        match obj.get(key) {
            None => Ok(None),
            Some(Value::String(p)) => Ok(Some(base.join(p))),
            Some(_) => Err(format!("`{key}` must be a path string")),
        }
    };
    let source = match (path_of("audio")?, path_of("logits")?) {
        (Some(a), None) => SourceRef::Audio(a),
        (None, Some(l)) => SourceRef::Logits(l),
        (Some(_), Some(_)) => return Err("`audio` and `logits` are mutually exclusive".into()),
        (None, None) => return Err("missing key `audio` (or `logits`)".into()),
    };
    let path = match &source {
        SourceRef::Audio(p) | SourceRef::Logits(p) => p,
    };
    std::fs::File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let reference = obj
        .get("reference")
        .ok_or("missing key `reference`")?;
    let reference = words(reference).ok_or("`reference` must be a string or array of strings")?;
    let source_transcript = match obj.get("transcript") {
        None | Some(Value::Null) => None,
        Some(v) => Some(words(v).ok_or("`transcript` must be a string or array of strings")?),
    };
    Ok(Utterance {
        id,
        source,
        reference,
        source_transcript,
    })
}

/// Parses manifest text; `base` anchors relative paths.
pub fn parse_manifest(text: &str, base: &Path, name: &str) -> Result<Vec<Utterance>, ManifestError> {
    let line_err = |line: usize, reason: String| ManifestError::Line {
        path: name.to_string(),
        line,
        reason,
    };
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| line_err(line, format!("invalid JSON: {e}")))?;
        let Value::Object(obj) = value else {
            return Err(line_err(line, "expected a JSON object".into()));
        };
        let utt = parse_line(&obj, base).map_err(|r| line_err(line, r))?;
        if !seen.insert(utt.id.clone()) {
            return Err(line_err(line, format!("duplicate id `{}`", utt.id)));
        }
        out.push(utt);
    }
    if out.is_empty() {
        return Err(ManifestError::Empty {
            path: name.to_string(),
        });
    }
    Ok(out)
}

pub fn load_manifest(path: &Path) -> Result<Vec<Utterance>, ManifestError> {
    let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_manifest(&text, base, &path.display().to_string())
}

/// Writes one manifest line per utterance, with paths relative to `base`
/// when possible.
pub fn write_manifest<W: Write>(mut w: W, utterances: &[Utterance], base: &Path) -> std::io::Result<()> {
    for u in utterances {
        let (key, path) = match &u.source {
            SourceRef::Audio(p) => ("audio", p),
            SourceRef::Logits(p) => ("logits", p),
        };
        let rel = path.strip_prefix(base).unwrap_or(path);
        let mut obj = Map::new();
        obj.insert("id".into(), Value::String(u.id.clone()));
        obj.insert(key.into(), Value::String(rel.to_string_lossy().into_owned()));
        obj.insert("reference".into(), Value::String(u.reference.join(" ")));
        if let Some(t) = &u.source_transcript {
            obj.insert("transcript".into(), Value::String(t.join(" ")));
        }
        writeln!(w, "{}", Value::Object(obj))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.wav"), b"").unwrap();
        std::fs::write(dir.path().join("b.txt"), b"").unwrap();
        dir
    }

    fn parse(dir: &Path, text: &str) -> Result<Vec<Utterance>, ManifestError> {
        parse_manifest(text, dir, "m.jsonl")
    }

    fn line_of(e: ManifestError) -> usize {
        match e {
            ManifestError::Line { line, .. } => line,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn two_valid_lines_in_order() {
        let dir = setup();
        let u = parse(
            dir.path(),
            "{\"id\":\"x\",\"audio\":\"a.wav\",\"reference\":\"hello world\"}\n\
             {\"id\":\"y\",\"logits\":\"b.txt\",\"reference\":[\"ok\"],\"transcript\":\"A B\"}\n",
        )
        .unwrap();
        assert_eq!(u.len(), 2);
        assert_eq!(u[0].id, "x");
        assert_eq!(u[0].source, SourceRef::Audio(dir.path().join("a.wav")));
        assert_eq!(u[0].reference, vec!["hello", "world"]);
        assert_eq!(u[1].source, SourceRef::Logits(dir.path().join("b.txt")));
        assert_eq!(u[1].source_transcript, Some(vec!["A".to_string(), "B".to_string()]));
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = setup();
        assert!(matches!(parse(dir.path(), ""), Err(ManifestError::Empty { .. })));
        assert!(matches!(parse(dir.path(), "\n  \n"), Err(ManifestError::Empty { .. })));
    }

    #[test]
    fn errors_name_the_line() {
        let dir = setup();
        let ok = "{\"id\":\"x\",\"audio\":\"a.wav\",\"reference\":\"r\"}\n";
        let cases = [
            format!("{ok}{ok}"),
            format!("{ok}{{\"audio\":\"a.wav\",\"reference\":\"r\"}}\n"),
            format!("{ok}{{\"id\":\"y\",\"reference\":\"r\"}}\n"),
            format!("{ok}{{\"id\":\"y\",\"audio\":\"a.wav\"}}\n"),
            format!("{ok}{{\"id\":\"y\",\"audio\":\"missing.wav\",\"reference\":\"r\"}}\n"),
            format!("{ok}{{\"id\":\"y\",\"audio\":\"a.wav\",\"logits\":\"b.txt\",\"reference\":\"r\"}}\n"),
            format!("{ok}not json\n"),
            format!("{ok}{{\"id\":\"y\",\"audio\":\"a.wav\",\"reference\":3}}\n"),
        ];
        for text in &cases {
            assert_eq!(line_of(parse(dir.path(), text).unwrap_err()), 2, "{text}");
        }
    }

    #[test]
    fn write_then_load_round_trip() {
        let dir = setup();
        let u = vec![Utterance {
            id: "x".into(),
            source: SourceRef::Audio(dir.path().join("a.wav")),
            reference: vec!["hi".into(), "there".into()],
            source_transcript: None,
        }];
        let path = dir.path().join("m.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        write_manifest(&mut f, &u, dir.path()).unwrap();
        drop(f);
        assert!(std::fs::read_to_string(&path).unwrap().contains("\"audio\":\"a.wav\""));
        assert_eq!(load_manifest(&path).unwrap(), u);
    }
}
