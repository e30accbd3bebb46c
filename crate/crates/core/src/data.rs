//! JSON Lines dataset ingestion.
//!
//! One object per line:
//!
//! ```json
//! {"text": "great pan", "label": "kitchen", "category": "kitchen", "stars": 5}
//! ```
//!
//! `text` and `label` are required. `category` and `stars` (1 to 5) feed
//! the binary review tasks. An optional `id` overrides the default
//! `line-<n>`, and an optional `vector` carries a precomputed embedding
//! for frozen ingestion. Blank lines are ignored.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    /// 1-based line in the source file.
    pub line: usize,
    pub text: String,
    pub label: String,
    pub category: Option<String>,
    pub stars: Option<u8>,
    pub vector: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct Raw {
    text: Option<String>,
    label: Option<String>,
    category: Option<String>,
    stars: Option<i64>,
    id: Option<serde_json::Value>,
    vector: Option<Vec<f64>>,
}

pub fn parse_jsonl(text: &str, origin: &Path) -> Result<Vec<Document>> {
    let fmt = |line: usize, msg: String| Error::Format {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: Raw =
            serde_json::from_str(line).map_err(|e| fmt(n, format!("invalid JSON: {e}")))?;
        let label = raw.label.ok_or_else(|| fmt(n, "missing `label`".into()))?;
        let text = raw.text.ok_or_else(|| fmt(n, "missing `text`".into()))?;
        let stars = match raw.stars {
            None => None,
            Some(s @ 1..=5) => Some(s as u8),
            Some(s) => return Err(fmt(n, format!("`stars` must be in 1..=5, got {s}"))),
        };
        let id = match raw.id {
            None => format!("line-{n}"),
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Number(x)) => x.to_string(),
            Some(_) => return Err(fmt(n, "`id` must be a string or number".into())),
        };
        if !seen.insert(id.clone()) {
            return Err(fmt(n, format!("duplicate id `{id}`")));
        }
        if let Some(v) = &raw.vector {
            if v.is_empty() || v.iter().any(|x| !x.is_finite()) {
                return Err(fmt(
                    n,
                    "`vector` must be a non-empty list of finite numbers".into(),
                ));
            }
        }
        docs.push(Document {
            id,
            line: n,
            text,
            label,
            category: raw.category,
            stars,
            vector: raw.vector,
        });
    }
    Ok(docs)
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_optional_fields() {
        let text = concat!(
            "{\"text\": \"Hello there\", \"label\": \"greet\"}\n",
            "\n",
            "{\"text\": \"bad pan\", \"label\": \"neg\", \"category\": \"kitchen\", \"stars\": 1, \"id\": 7}\n",
        );
        let d = parse_jsonl(text, Path::new("m")).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d[0].id, "line-1");
        assert_eq!(d[1].id, "7");
        assert_eq!(d[1].stars, Some(1));
        assert_eq!(d[1].category.as_deref(), Some("kitchen"));
    }

    #[test]
    fn missing_label_reports_line() {
        let text = "{\"text\": \"a\", \"label\": \"x\"}\n{\"text\": \"b\"}\n";
        match parse_jsonl(text, Path::new("m")).unwrap_err() {
            Error::Format { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("label"));
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn rejects_bad_stars_json_and_duplicate_ids() {
        let bad_stars = "{\"text\": \"a\", \"label\": \"x\", \"stars\": 6}\n";
        assert!(matches!(
            parse_jsonl(bad_stars, Path::new("m")),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_jsonl("{oops\n", Path::new("m")),
            Err(Error::Format { line: 1, .. })
        ));
        let dup = "{\"text\": \"a\", \"label\": \"x\", \"id\": \"q\"}\n{\"text\": \"b\", \"label\": \"x\", \"id\": \"q\"}\n";
        assert!(matches!(
            parse_jsonl(dup, Path::new("m")),
            Err(Error::Format { line: 2, .. })
        ));
    }
}
