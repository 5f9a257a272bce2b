use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{detokenize, tokenize, AttributeValuePair, Triplet};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairRecord {
    attr: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
struct TripletRecord {
    data: Vec<PairRecord>,
    style_ref: String,
    #[serde(default)]
    target: Option<String>,
    style: usize,
}

pub fn triplet_to_json(t: &Triplet) -> serde_json::Value {
    let rec = TripletRecord {
        data: t
            .data
            .iter()
            .map(|p| PairRecord {
                attr: detokenize(&p.attribute),
                value: detokenize(&p.value),
            })
            .collect(),
        style_ref: detokenize(&t.style_ref),
        target: t.target.as_deref().map(detokenize),
        style: t.style,
    };
    serde_json::to_value(rec).expect("triplet records always serialize")
}

/// Parses one JSONL record; `line` is only used for error messages.
pub fn triplet_from_json(text: &str, line: usize) -> Result<Triplet> {
    let schema = |message: String| Error::Schema { line, message };
    let rec: TripletRecord = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    if rec.data.is_empty() {
        return Err(schema("\"data\" must hold at least one pair".into()));
    }
    let data = rec
        .data
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let pair = AttributeValuePair::new(&p.attr, &p.value, i + 1);
            if pair.attribute.is_empty() || pair.value.is_empty() {
                Err(schema(format!("pair {} has an empty attr or value", i + 1)))
            } else {
                Ok(pair)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Triplet {
        data,
        style_ref: tokenize(&rec.style_ref),
        target: rec.target.as_deref().map(tokenize),
        style: rec.style,
    })
}

/// Reads one triplet per non-blank line.
pub fn read_jsonl(path: &Path) -> Result<Vec<Triplet>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| triplet_from_json(l, n + 1))
        .collect()
}

pub fn write_jsonl(path: &Path, triplets: &[Triplet]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for t in triplets {
        serde_json::to_writer(&mut buf, &triplet_to_json(t)).expect("in-memory write");
        buf.push(b'\n');
    }
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_LINES: &str = r#"{"data":[{"attr":"color","value":"navy blue"}],"style_ref":"hey guys","target":"the color is navy blue .","style":0}
{"data":[{"attr":"fit","value":"boxy"},{"attr":"size","value":"mini"}],"style_ref":"x y","target":null,"style":1}
"#;

    #[test]
    fn reads_two_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, TWO_LINES).unwrap();
        let ts = read_jsonl(&p).unwrap();
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].data[0].value, vec!["navy", "blue"]);
        assert_eq!(ts[1].data[1].index, 2);
        assert!(ts[1].target.is_none());
        assert_eq!(ts[1].style, 1);
    }

    #[test]
    fn missing_style_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let bad = TWO_LINES.replace(",\"style\":1}", "}");
        std::fs::write(&p, bad).unwrap();
        match read_jsonl(&p) {
            Err(Error::Schema { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("style"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn write_then_read_reproduces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(&p, TWO_LINES).unwrap();
        let ts = read_jsonl(&p).unwrap();
        let q = dir.path().join("e.jsonl");
        write_jsonl(&q, &ts).unwrap();
        let a: Vec<serde_json::Value> = TWO_LINES
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let b: Vec<serde_json::Value> = std::fs::read_to_string(&q)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(a, b);
        assert_eq!(read_jsonl(&q).unwrap(), ts);
    }
}
