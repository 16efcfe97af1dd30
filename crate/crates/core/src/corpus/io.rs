use std::fs;
use std::path::Path;

use super::{CorpusError, DatasetSplits, ParallelCorpus, QQPair};
use crate::codec::EncodedQuery;

fn check_line(s: &str) -> Result<(), CorpusError> {
    if s.contains(['\n', '\r']) {
        return Err(CorpusError::LineBreak(s.to_string()));
    }
    Ok(())
}

fn join_lines<'a>(lines: impl Iterator<Item = &'a str>) -> String {
    lines.fold(String::new(), |mut acc, l| {
        acc.push_str(l);
        acc.push('\n');
        acc
    })
}

/// Writes `<stem>.nl` and `<stem>.sparql`, one pair per LF-terminated line.
pub fn write_pairs(corpus: &ParallelCorpus, dir: &Path, stem: &str) -> Result<(), CorpusError> {
    let encoded: Vec<String> = corpus.queries().map(EncodedQuery::to_string).collect();
    for p in &corpus.pairs {
        check_line(&p.question)?;
    }
    for e in &encoded {
        check_line(e)?;
    }
    fs::create_dir_all(dir)?;
    fs::write(dir.join(format!("{stem}.nl")), join_lines(corpus.questions()))?;
    fs::write(dir.join(format!("{stem}.sparql")), join_lines(encoded.iter().map(String::as_str)))?;
    Ok(())
}

pub fn read_pairs(dir: &Path, stem: &str) -> Result<ParallelCorpus, CorpusError> {
    let nl = fs::read_to_string(dir.join(format!("{stem}.nl")))?;
    let sparql = fs::read_to_string(dir.join(format!("{stem}.sparql")))?;
    let (q, s): (Vec<&str>, Vec<&str>) = (nl.lines().collect(), sparql.lines().collect());
    if q.len() != s.len() {
        return Err(CorpusError::Alignment { split: stem.to_string(), questions: q.len(), queries: s.len() });
    }
    Ok(ParallelCorpus::new(
        q.into_iter()
            .zip(s)
            .map(|(q, s)| QQPair { question: q.to_string(), query_raw: None, query_encoded: EncodedQuery::from_line(s) })
            .collect(),
    ))
}

pub fn write_corpus(splits: &DatasetSplits, dir: &Path) -> Result<(), CorpusError> {
    for (stem, part) in splits.parts() {
        write_pairs(part, dir, stem)?;
    }
    Ok(())
}

pub fn read_corpus(dir: &Path) -> Result<DatasetSplits, CorpusError> {
    Ok(DatasetSplits {
        train: read_pairs(dir, "train")?,
        validation: read_pairs(dir, "valid")?,
        test: read_pairs(dir, "test")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(q: &str, e: &str) -> QQPair {
        QQPair { question: q.into(), query_raw: None, query_encoded: EncodedQuery::from_line(e) }
    }

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let splits = DatasetSplits {
            train: ParallelCorpus::new(vec![
                pair("Where is Carew Cross ?", "select var_x where brack_open dbr_Carew_Cross dbo_location var_x sep_dot brack_close"),
                pair("a", "b"),
                pair("ü ?", "c d"),
            ]),
            validation: ParallelCorpus::new(vec![]),
            test: ParallelCorpus::new(vec![pair("x", "y")]),
        };
        write_corpus(&splits, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join("train.nl")).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(read_corpus(dir.path()).unwrap(), splits);
    }

    #[test]
    fn misaligned() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("train.nl"), "a\nb\nc\n").unwrap();
        fs::write(dir.path().join("train.sparql"), "a\nb\n").unwrap();
        assert!(matches!(
            read_pairs(dir.path(), "train"),
            Err(CorpusError::Alignment { questions: 3, queries: 2, .. })
        ));
    }

    #[test]
    fn rejects_embedded_newlines() {
        let dir = tempfile::tempdir().unwrap();
        let c = ParallelCorpus::new(vec![pair("a\nb", "x")]);
        assert!(matches!(write_pairs(&c, dir.path(), "train"), Err(CorpusError::LineBreak(_))));
    }
}
