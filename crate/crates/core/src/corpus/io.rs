use std::fs;
use std::path::Path;

use super::{Dataset, Passage, Query, RelJudgment, Split};
use crate::error::{Error, Result};
use crate::store::{read_jsonl, to_jsonl, write_atomic};

/// Loads `queries.jsonl`, `passages.jsonl` and `qrels.tsv` from `dir`.
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let queries: Vec<Query> = read_jsonl(&dir.join("queries.jsonl"))?;
    let passages: Vec<Passage> = read_jsonl(&dir.join("passages.jsonl"))?;
    let judgments = read_qrels(&dir.join("qrels.tsv"))?;
    Dataset::new(split, queries, passages, judgments)
}

pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("queries.jsonl"), &to_jsonl(&dataset.queries)?)?;
    write_atomic(&dir.join("passages.jsonl"), &to_jsonl(&dataset.passages)?)?;
    let mut qrels = String::new();
    for j in &dataset.judgments {
        qrels.push_str(&format!("{}\t0\t{}\t{}\n", j.query_id, j.passage_id, j.grade));
    }
    write_atomic(&dir.join("qrels.tsv"), qrels.as_bytes())
}

/// TREC qrels: `query_id 0 passage_id grade`, tab or whitespace separated.
pub(crate) fn read_qrels(path: &Path) -> Result<Vec<RelJudgment>> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::io(path, e),
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, _iter, pid, grade] = fields[..] else {
            return Err(parse_err(format!("expected 4 fields, found {}", fields.len())));
        };
        let grade: i64 = grade.parse().map_err(|_| parse_err(format!("bad grade {grade:?}")))?;
        out.push(RelJudgment {
            query_id: qid.to_string(),
            passage_id: pid.to_string(),
            // Negative grades (some collections use -1 or -2) count as irrelevant.
            grade: grade.max(0) as u32,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::new(
            Split::Test,
            vec![Query {
                id: "q1".into(),
                text: "what is rust".into(),
            }],
            vec![Passage {
                id: "p1".into(),
                text: "Rust is a language.".into(),
            }],
            vec![RelJudgment {
                query_id: "q1".into(),
                passage_id: "p1".into(),
                grade: 2,
            }],
        )
        .unwrap();
        write_dataset(dir.path(), &ds).unwrap();
        let qrels = fs::read_to_string(dir.path().join("qrels.tsv")).unwrap();
        assert_eq!(qrels, "q1\t0\tp1\t2\n");
        let back = load_dataset(dir.path(), Split::Test).unwrap();
        assert_eq!(back.queries, ds.queries);
        assert_eq!(back.passages, ds.passages);
        assert_eq!(back.judgments, ds.judgments);
    }

    #[test]
    fn qrels_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qrels.tsv");
        fs::write(&path, "q1 0 p1 1\nq2 0 p2\n").unwrap();
        match read_qrels(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        fs::write(&path, "q1 0 p1 -1\n").unwrap();
        assert_eq!(read_qrels(&path).unwrap()[0].grade, 0);
    }
}
