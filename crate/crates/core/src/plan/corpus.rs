//! Native corpus format: newline-delimited JSON with a header record
//! followed by one plan tree per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plan::PlanTree;

pub const CORPUS_FORMAT: &str = "qppnet-corpus";
pub const CORPUS_VERSION: u32 = 1;

/// First line of a corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusHeader {
    pub format: String,
    pub version: u32,
    pub count: usize,
    /// True when every node of every tree carries an observed latency.
    pub labeled: bool,
    /// Where the trees came from (`synth`, `explain`, ...).
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_version: Option<String>,
    /// SHA-256 of each ingested input file, for provenance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_sha256: Vec<String>,
}

impl CorpusHeader {
    pub fn new(source: impl Into<String>) -> Self {
        CorpusHeader {
            format: CORPUS_FORMAT.into(),
            version: CORPUS_VERSION,
            count: 0,
            labeled: false,
            source: source.into(),
            seed: None,
            tool_version: None,
            input_sha256: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub header: CorpusHeader,
    pub trees: Vec<PlanTree>,
}

impl Corpus {
    pub fn new(header: CorpusHeader, trees: Vec<PlanTree>) -> Self {
        let mut corpus = Corpus { header, trees };
        corpus.refresh_header();
        corpus
    }

    /// Recomputes the derived header fields (`count`, `labeled`).
    pub fn refresh_header(&mut self) {
        self.header.count = self.trees.len();
        self.header.labeled =
            !self.trees.is_empty() && self.trees.iter().all(|t| t.root.fully_labeled());
    }

    pub fn fully_labeled(&self) -> bool {
        self.trees.iter().all(|t| t.root.fully_labeled())
    }
}

/// Writes header + one tree per line. Derived header fields are recomputed
/// so the file is always self-consistent.
pub fn write_corpus(mut w: impl Write, corpus: &Corpus) -> Result<()> {
    let mut header = corpus.header.clone();
    header.count = corpus.trees.len();
    header.labeled =
        !corpus.trees.is_empty() && corpus.trees.iter().all(|t| t.root.fully_labeled());
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for tree in &corpus.trees {
        serde_json::to_writer(&mut w, tree)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_corpus(r: impl Read) -> Result<Corpus> {
    let mut lines = BufReader::new(r).lines();
    let header_line = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::Artifact("empty corpus file".into()))?;
    let header: CorpusHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Artifact(format!("bad corpus header: {e}")))?;
    if header.format != CORPUS_FORMAT {
        return Err(Error::Artifact(format!(
            "not a corpus file (format {:?})",
            header.format
        )));
    }
    if header.version != CORPUS_VERSION {
        return Err(Error::Artifact(format!(
            "unsupported corpus version {} (expected {CORPUS_VERSION})",
            header.version
        )));
    }
    let mut trees = Vec::with_capacity(header.count);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tree: PlanTree = serde_json::from_str(&line)
            .map_err(|e| Error::Artifact(format!("bad tree record on line {}: {e}", i + 2)))?;
        trees.push(tree);
    }
    if trees.len() != header.count {
        return Err(Error::Artifact(format!(
            "corpus header promises {} trees but file holds {}",
            header.count,
            trees.len()
        )));
    }
    Ok(Corpus { header, trees })
}

pub fn write_corpus_path(path: impl AsRef<Path>, corpus: &Corpus) -> Result<()> {
    let f = File::create(path)?;
    write_corpus(BufWriter::new(f), corpus)
}

pub fn read_corpus_path(path: impl AsRef<Path>) -> Result<Corpus> {
    let f = File::open(path)?;
    read_corpus(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plan::{AttrValue, PlanNode};

    fn sample_corpus() -> Corpus {
        let mut scan = PlanNode::new("seq-scan");
        scan.attrs.insert("plan-rows".into(), AttrValue::Num(10.0));
        scan.observed_latency = Some(0.25);
        let mut sort = PlanNode::new("sort");
        sort.observed_latency = Some(0.5);
        sort.children.push(scan);
        let trees = vec![
            PlanTree {
                id: "plan-000000".into(),
                template: Some("t00".into()),
                root: sort,
            },
            PlanTree {
                id: "plan-000001".into(),
                template: None,
                root: PlanNode::new("seq-scan"),
            },
        ];
        Corpus::new(CorpusHeader::new("synth"), trees)
    }

    #[test]
    fn round_trips_and_recomputes_header() {
        let corpus = sample_corpus();
        // second tree is unlabeled
        assert!(!corpus.header.labeled);
        assert_eq!(corpus.header.count, 2);

        let mut buf = Vec::new();
        write_corpus(&mut buf, &corpus).unwrap();
        let back = read_corpus(&buf[..]).unwrap();
        assert_eq!(back.trees, corpus.trees);
        assert_eq!(back.header, corpus.header);
    }

    #[test]
    fn header_line_comes_first_and_is_json() {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &sample_corpus()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.contains("qppnet-corpus"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn count_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_corpus(&mut buf, &sample_corpus()).unwrap();
        let mut text = String::from_utf8(buf).unwrap();
        text.push_str("\n"); // blank line is fine
        let ok = read_corpus(text.as_bytes());
        assert!(ok.is_ok());

        // drop the last record
        let truncated: Vec<&str> = text.lines().take(2).collect();
        let err = read_corpus(truncated.join("\n").as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Artifact(_)), "{err}");
    }

    #[test]
    fn non_corpus_file_is_rejected() {
        let err = read_corpus("{\"format\":\"something-else\",\"version\":1,\"count\":0,\"labeled\":false,\"source\":\"x\"}\n".as_bytes())
            .unwrap_err();
        assert!(err.to_string().contains("not a corpus file"));
    }
}
