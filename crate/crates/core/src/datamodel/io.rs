use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{is_cjk, Dialogue, TokenizerMode};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// `{"history": [..], "incomplete": "..", "rewritten": "..", "lang": "zh"|"en"}`
    /// per line, with an optional string `id`.
    CanonicalJsonl,
    /// TAB-separated: history..., incomplete, rewritten.
    TabSeparated,
}

/// Reads every record of `path`. Blank lines are skipped. Records without an
/// explicit `id` get their zero-based record index.
pub fn load_dialogues(path: impl AsRef<Path>, format: DataFormat) -> Result<Vec<Dialogue>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let default_id = out.len().to_string();
        let dialogue = match format {
            DataFormat::CanonicalJsonl => parse_jsonl_record(&line, idx + 1, &default_id)?,
            DataFormat::TabSeparated => parse_tsv_record(&line, idx + 1, &default_id)?,
        };
        out.push(dialogue);
    }
    Ok(out)
}

fn record_err(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Record {
        line,
        field: field.to_owned(),
        message: message.into(),
    }
}

fn detect_mode<S: AsRef<str>>(texts: &[S], line: usize) -> Result<TokenizerMode> {
    let mut cjk = false;
    let mut latin = false;
    for c in texts.iter().flat_map(|t| t.as_ref().chars()) {
        cjk |= is_cjk(c);
        latin |= c.is_ascii_alphabetic();
    }
    match (cjk, latin) {
        (true, true) => Err(record_err(
            line,
            "lang",
            "record mixes CJK and Latin text; declare `lang`",
        )),
        (true, false) => Ok(TokenizerMode::CharCjk),
        _ => Ok(TokenizerMode::WhitespacePunct),
    }
}

fn string_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, line: usize) -> Result<&'a str> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s),
        Some(_) => Err(record_err(line, key, "expected a string")),
        None => Err(record_err(line, key, "missing")),
    }
}

pub fn parse_jsonl_record(line: &str, line_no: usize, default_id: &str) -> Result<Dialogue> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| record_err(line_no, "<record>", format!("invalid JSON: {e}")))?;
    let obj = value
        .as_object()
        .ok_or_else(|| record_err(line_no, "<record>", "expected a JSON object"))?;

    let history: Vec<&str> = match obj.get("history") {
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_str()
                    .ok_or_else(|| record_err(line_no, "history", "expected an array of strings"))
            })
            .collect::<Result<_>>()?,
        Some(_) => return Err(record_err(line_no, "history", "expected an array of strings")),
        None => return Err(record_err(line_no, "history", "missing")),
    };
    let incomplete = string_field(obj, "incomplete", line_no)?;
    let rewritten = match obj.get("rewritten") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.as_str()),
        Some(_) => return Err(record_err(line_no, "rewritten", "expected a string")),
    };
    let id = match obj.get("id") {
        None | Some(Value::Null) => default_id.to_owned(),
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        Some(_) => return Err(record_err(line_no, "id", "expected a string or number")),
    };
    let mode = match obj.get("lang") {
        Some(Value::String(lang)) => TokenizerMode::from_lang(lang)
            .ok_or_else(|| record_err(line_no, "lang", format!("unknown language `{lang}`")))?,
        Some(_) => return Err(record_err(line_no, "lang", "expected \"zh\" or \"en\"")),
        None => {
            let mut all: Vec<&str> = history.clone();
            all.push(incomplete);
            all.extend(rewritten);
            detect_mode(&all, line_no)?
        }
    };
    Ok(Dialogue::from_text(id, mode, &history, incomplete, rewritten))
}

pub fn parse_tsv_record(line: &str, line_no: usize, id: &str) -> Result<Dialogue> {
    let cols: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
    if cols.len() < 2 {
        return Err(record_err(
            line_no,
            "incomplete",
            "need at least incomplete and rewritten columns",
        ));
    }
    let n = cols.len();
    let mode = detect_mode(&cols, line_no)?;
    Ok(Dialogue::from_text(
        id,
        mode,
        &cols[..n - 2],
        cols[n - 2],
        Some(cols[n - 1]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn jsonl_direct_mapping() {
        let f = write_tmp(
            r#"{"history":["A"],"incomplete":"B","rewritten":"B A","lang":"en"}
"#,
        );
        let ds = load_dialogues(f.path(), DataFormat::CanonicalJsonl).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].history.len(), 1);
        assert_eq!(ds[0].rewritten.as_ref().unwrap().texts(), ["B", "A"]);
        assert_eq!(ds[0].id, "0");
        assert_eq!(ds[0].mode, TokenizerMode::WhitespacePunct);
    }

    #[test]
    fn tsv_positional_mapping() {
        let f = write_tmp("u1\tu2\tinc\trew\n");
        let ds = load_dialogues(f.path(), DataFormat::TabSeparated).unwrap();
        let d = &ds[0];
        assert_eq!(d.history.len(), 2);
        assert_eq!(d.history[0].texts(), ["u1"]);
        assert_eq!(d.history[1].texts(), ["u2"]);
        assert_eq!(d.incomplete.texts(), ["inc"]);
        assert_eq!(d.rewritten.as_ref().unwrap().texts(), ["rew"]);
        assert_eq!(d.incomplete.speaker_turn, 2);
    }

    #[test]
    fn empty_file() {
        let f = write_tmp("");
        assert!(load_dialogues(f.path(), DataFormat::CanonicalJsonl).unwrap().is_empty());
        assert!(load_dialogues(f.path(), DataFormat::TabSeparated).unwrap().is_empty());
    }

    #[test]
    fn malformed_record_names_line_and_field() {
        let f = write_tmp(
            "{\"history\":[],\"incomplete\":\"ok\",\"lang\":\"en\"}\n{\"history\":\"x\",\"incomplete\":\"b\"}\n",
        );
        let err = load_dialogues(f.path(), DataFormat::CanonicalJsonl).unwrap_err();
        match err {
            Error::Record { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "history");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mixed_language_without_lang_is_rejected() {
        let err = parse_jsonl_record(r#"{"history":["hello 你好"],"incomplete":"b"}"#, 3, "0")
            .unwrap_err();
        assert!(matches!(err, Error::Record { line: 3, ref field, .. } if field == "lang"));
        let d = parse_jsonl_record(r#"{"history":["你好"],"incomplete":"他呢"}"#, 1, "0").unwrap();
        assert_eq!(d.mode, TokenizerMode::CharCjk);
    }
}
