//! Corpus ingestion and a BM25 inverted index.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::textkit::normalize;

pub const INDEX_VERSION: u32 = 1;
pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
/// Snippets are the leading window of a document up to this many normalized
/// word tokens.
pub const SNIPPET_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(alias = "contents")]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub doc_id: String,
    pub title: String,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub version: u32,
    pub documents: Vec<CorpusDocument>,
    pub doc_lengths: Vec<u32>,
    pub avg_doc_length: f64,
    pub postings: BTreeMap<String, Vec<Posting>>,
}

impl Index {
    pub fn from_documents(documents: Vec<CorpusDocument>) -> Result<Self, RetrievalError> {
        if documents.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut seen = HashSet::new();
        for d in &documents {
            if !seen.insert(d.id.as_str()) {
                return Err(RetrievalError::DuplicateId(d.id.clone()));
            }
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(documents.len());
        for (i, d) in documents.iter().enumerate() {
            let norm = normalize(&format!("{} {}", d.title, d.text));
            doc_lengths.push(norm.word_len() as u32);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in norm.tokens() {
                *tf.entry(t.as_str()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_owned()).or_default().push(Posting {
                    doc: i as u32,
                    tf: count,
                });
            }
        }
        let avg_doc_length =
            doc_lengths.iter().map(|l| *l as f64).sum::<f64>() / doc_lengths.len() as f64;
        Ok(Self {
            version: INDEX_VERSION,
            documents,
            doc_lengths,
            avg_doc_length,
            postings,
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn document(&self, i: usize) -> &CorpusDocument {
        &self.documents[i]
    }

    pub fn find(&self, id: &str) -> Option<&CorpusDocument> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// BM25 top-`k`, score-descending with ties broken by document id.
    pub fn search(&self, query: &str, k: usize) -> Vec<Snippet> {
        let terms = normalize(query);
        if terms.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.documents.len() as f64;
        let avgdl = self.avg_doc_length.max(1e-9);
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in terms.tokens() {
            let Some(list) = self.postings.get(term) else { continue };
            let df = list.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for p in list {
                let dl = self.doc_lengths[p.doc as usize] as f64;
                let tf = p.tf as f64;
                let norm = tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
                *scores.entry(p.doc).or_default() += idf * norm;
            }
        }
        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.documents[a.0 as usize].id.cmp(&self.documents[b.0 as usize].id))
        });
        ranked
            .into_iter()
            .take(k)
            .map(|(doc, score)| {
                let d = &self.documents[doc as usize];
                Snippet {
                    doc_id: d.id.clone(),
                    title: d.title.clone(),
                    text: leading_window(&d.text, SNIPPET_TOKENS).to_owned(),
                    score,
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let text = serde_json::to_string(self).map_err(RetrievalError::Encode)?;
        std::fs::write(path, text).map_err(|e| RetrievalError::Io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RetrievalError::Io(path.display().to_string(), e))?;
        let index: Index = serde_json::from_str(&text).map_err(RetrievalError::Encode)?;
        if index.version != INDEX_VERSION {
            return Err(RetrievalError::Version(index.version));
        }
        Ok(index)
    }
}

/// Longest prefix of `text` holding at most `max_tokens` normalized tokens,
/// cut at a whitespace boundary.
pub fn leading_window(text: &str, max_tokens: usize) -> &str {
    let mut count = 0;
    let mut end = 0;
    let mut pos = 0;
    for word in text.split_whitespace() {
        let start = pos + text[pos..].find(word).expect("word comes from text");
        let stop = start + word.len();
        pos = stop;
        let n = normalize(word).word_len();
        if count + n > max_tokens {
            break;
        }
        count += n;
        end = stop;
    }
    &text[..end]
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusDocument>, RetrievalError> {
    let file =
        std::fs::File::open(path).map_err(|e| RetrievalError::Io(path.display().to_string(), e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RetrievalError::Io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDocument =
            serde_json::from_str(&line).map_err(|e| RetrievalError::Malformed {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if doc.text.trim().is_empty() {
            return Err(RetrievalError::Malformed {
                line: i + 1,
                reason: "empty text".into(),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Reads a line-delimited corpus and builds its index.
pub fn ingest(corpus: &Path) -> Result<Index, RetrievalError> {
    Index::from_documents(read_corpus(corpus)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textkit::is_verbatim_span;
    use std::io::Write;

    fn doc(id: &str, title: &str, text: &str) -> CorpusDocument {
        CorpusDocument {
            id: id.into(),
            title: title.into(),
            text: text.into(),
        }
    }

    fn small() -> Index {
        Index::from_documents(vec![
            doc("d1", "Eiffel Tower", "The Eiffel Tower is a wrought-iron lattice tower in Paris."),
            doc("d2", "Danube", "The Danube flows through Vienna and Budapest."),
            doc("d3", "Vienna", "Vienna is the capital of Austria, on the Danube."),
        ])
        .unwrap()
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn ingest_counts_and_errors() {
        let f = write_lines(&[
            r#"{"id":"a","title":"A","text":"alpha"}"#,
            r#"{"id":"b","title":"B","text":"beta"}"#,
            r#"{"id":"c","title":"C","contents":"gamma"}"#,
        ]);
        assert_eq!(ingest(f.path()).unwrap().len(), 3);

        let empty = write_lines(&[]);
        assert!(matches!(ingest(empty.path()), Err(RetrievalError::EmptyCorpus)));

        let bad = write_lines(&[r#"{"id":"a","text":"x"}"#, "not json"]);
        assert!(matches!(ingest(bad.path()), Err(RetrievalError::Malformed { line: 2, .. })));

        let dup = write_lines(&[r#"{"id":"a","text":"x"}"#, r#"{"id":"a","text":"y"}"#]);
        assert!(matches!(ingest(dup.path()), Err(RetrievalError::DuplicateId(id)) if id == "a"));
    }

    #[test]
    fn reingest_is_byte_identical() {
        let f = write_lines(&[
            r#"{"id":"a","title":"A","text":"alpha beta"}"#,
            r#"{"id":"b","title":"B","text":"beta gamma delta"}"#,
        ]);
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("1.json"), dir.path().join("2.json"));
        ingest(f.path()).unwrap().save(&p1).unwrap();
        ingest(f.path()).unwrap().save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(Index::load(&p1).unwrap(), ingest(f.path()).unwrap());
    }

    #[test]
    fn search_examples() {
        let idx = small();
        assert_eq!(idx.search("wrought-iron", 3)[0].doc_id, "d1");
        assert!(idx.search("zeppelin", 3).is_empty());
        assert!(idx.search("", 3).is_empty());
        let hits = idx.search("danube", 3);
        assert_eq!(hits.len(), 2);
        assert!(hits[0].score >= hits[1].score);
    }

    #[test]
    fn ties_break_by_doc_id() {
        let idx = Index::from_documents(vec![
            doc("z", "", "shared word"),
            doc("m", "", "shared word"),
            doc("a", "", "other thing"),
        ])
        .unwrap();
        let hits = idx.search("shared", 5);
        assert_eq!(hits.iter().map(|h| h.doc_id.as_str()).collect::<Vec<_>>(), ["m", "z"]);
    }

    #[test]
    fn snippets_are_verbatim_prefixes() {
        let long: String = (0..700).map(|i| format!("w{i} ")).collect();
        let idx = Index::from_documents(vec![doc("x", "", &long), doc("y", "", "w1 only")]).unwrap();
        let hits = idx.search("w1", 2);
        let top = hits.iter().find(|h| h.doc_id == "x").unwrap();
        assert_eq!(normalize(&top.text).word_len(), SNIPPET_TOKENS);
        assert!(is_verbatim_span(&top.text, &[long.as_str()]));
    }

    #[test]
    fn leading_window_handles_articles_and_punct() {
        assert_eq!(leading_window("the a an x y", 1), "the a an x");
        assert_eq!(leading_window("  hello   world ", 5), "  hello   world");
        assert_eq!(leading_window("x", 0), "");
    }
}
