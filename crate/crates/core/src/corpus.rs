//! Labeled paper corpus and per-aspect label vocabularies.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Default upper bound on label size used when building ground truth.
pub const DEFAULT_MAX_LABEL_SIZE: usize = 100;

/// Name of an aspect under which papers can be similar (`task`, `method`, ...).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectId(String);

impl AspectId {
    pub fn new(name: impl Into<String>) -> Self {
        AspectId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Parses a list such as `task,method,dataset`.
    pub fn parse_list(list: &str) -> Result<Vec<AspectId>> {
        let aspects: Vec<AspectId> = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(AspectId::new)
            .collect();
        validate_aspects(&aspects)?;
        Ok(aspects)
    }

    pub fn defaults() -> Vec<AspectId> {
        crate::DEFAULT_ASPECTS
            .iter()
            .map(|a| AspectId::new(*a))
            .collect()
    }
}

impl fmt::Display for AspectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AspectId {
    fn from(s: &str) -> Self {
        AspectId::new(s)
    }
}

const RESERVED_KEYS: [&str; 3] = ["paper_id", "title", "abstract"];

fn validate_aspects(aspects: &[AspectId]) -> Result<()> {
    if aspects.is_empty() {
        return Err(Error::invalid("aspect set must not be empty"));
    }
    let mut seen = BTreeSet::new();
    for aspect in aspects {
        if aspect.as_str().is_empty() || RESERVED_KEYS.contains(&aspect.as_str()) {
            return Err(Error::invalid(format!("invalid aspect name `{aspect}`")));
        }
        if !seen.insert(aspect) {
            return Err(Error::invalid(format!("aspect `{aspect}` listed twice")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaperRecord {
    pub paper_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    /// Label ids per aspect; every configured aspect has an entry, possibly empty.
    pub labels: BTreeMap<AspectId, BTreeSet<String>>,
}

impl PaperRecord {
    pub fn labels_for(&self, aspect: &AspectId) -> Option<&BTreeSet<String>> {
        self.labels.get(aspect).filter(|l| !l.is_empty())
    }

    /// Title and abstract joined by a single space.
    pub fn text(&self) -> String {
        if self.abstract_text.is_empty() {
            self.title.clone()
        } else {
            format!("{} {}", self.title, self.abstract_text)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub display_name: String,
    pub paper_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    pub aspect: AspectId,
    pub entries: BTreeMap<String, LabelEntry>,
}

impl LabelVocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.entries.contains_key(label)
    }

    pub fn paper_count(&self, label: &str) -> Option<usize> {
        self.entries.get(label).map(|e| e.paper_count)
    }

    /// Writes `label_id<TAB>display_name<TAB>paper_count` lines.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (label, entry) in &self.entries {
            writeln!(
                out,
                "{}\t{}\t{}",
                label, entry.display_name, entry.paper_count
            )?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(aspect: AspectId, input: R) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(no + 1, "expected 3 tab-separated fields"));
            }
            let paper_count = fields[2]
                .parse()
                .map_err(|_| Error::parse(no + 1, "paper_count is not an integer"))?;
            entries.insert(
                fields[0].to_string(),
                LabelEntry {
                    display_name: fields[1].to_string(),
                    paper_count,
                },
            );
        }
        Ok(LabelVocabulary { aspect, entries })
    }
}

/// Restricts a vocabulary to labels carried by at most `max_papers` papers.
pub fn filter_labels(vocab: &LabelVocabulary, max_papers: usize) -> Result<LabelVocabulary> {
    if max_papers == 0 {
        return Err(Error::invalid("max_papers must be at least 1"));
    }
    let entries = vocab
        .entries
        .iter()
        .filter(|(_, e)| e.paper_count <= max_papers)
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    Ok(LabelVocabulary {
        aspect: vocab.aspect.clone(),
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelStats {
    pub papers_with_label: usize,
    pub label_count: usize,
    pub avg_papers_per_label: f64,
}

/// Validated, immutable paper collection. Papers are kept sorted by id.
#[derive(Debug, Clone)]
pub struct Corpus {
    aspects: Vec<AspectId>,
    papers: Vec<PaperRecord>,
    positions: HashMap<String, usize>,
    vocabularies: BTreeMap<AspectId, LabelVocabulary>,
}

/// Reads line-delimited JSON records.
pub fn ingest_corpus<R: BufRead>(source: R, aspects: &[AspectId]) -> Result<Corpus> {
    validate_aspects(aspects)?;
    let mut records = Vec::new();
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (no, line) in source.lines().enumerate() {
        let line_no = no + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line)
            .map_err(|e| Error::parse(line_no, format!("invalid JSON: {e}")))?;
        let Value::Object(object) = value else {
            return Err(Error::parse(line_no, "record is not a JSON object"));
        };
        let record = parse_record(object, aspects, line_no)?;
        if first_line
            .insert(record.paper_id.clone(), line_no)
            .is_some()
        {
            return Err(Error::DuplicatePaper(record.paper_id));
        }
        records.push(record);
    }
    Corpus::from_records(records, aspects)
}

pub fn ingest_path(path: impl AsRef<Path>, aspects: &[AspectId]) -> Result<Corpus> {
    let file = File::open(path)?;
    ingest_corpus(BufReader::new(file), aspects)
}

fn parse_record(
    object: Map<String, Value>,
    aspects: &[AspectId],
    line: usize,
) -> Result<PaperRecord> {
    let string_field = |key: &str| -> Result<Option<String>> {
        match object.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(Error::parse(line, format!("`{key}` must be a string"))),
        }
    };
    let paper_id = string_field("paper_id")?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| Error::parse(line, "missing paper_id"))?;
    let title = string_field("title")?
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| Error::parse(line, "missing title"))?;
    let abstract_text = string_field("abstract")?.unwrap_or_default();

    for key in object.keys() {
        if !RESERVED_KEYS.contains(&key.as_str()) && !aspects.iter().any(|a| a.as_str() == key) {
            return Err(Error::parse(line, format!("unknown aspect key `{key}`")));
        }
    }

    let mut labels = BTreeMap::new();
    for aspect in aspects {
        let mut set = BTreeSet::new();
        match object.get(aspect.as_str()) {
            None | Some(Value::Null) => {}
            Some(Value::Array(items)) => {
                for item in items {
                    let Value::String(label) = item else {
                        return Err(Error::parse(
                            line,
                            format!("`{aspect}` labels must be strings"),
                        ));
                    };
                    let label = label.trim();
                    if !label.is_empty() {
                        set.insert(label.to_string());
                    }
                }
            }
            Some(_) => return Err(Error::parse(line, format!("`{aspect}` must be an array"))),
        }
        labels.insert(aspect.clone(), set);
    }
    Ok(PaperRecord {
        paper_id,
        title,
        abstract_text,
        labels,
    })
}

impl Corpus {
    pub fn from_records(mut records: Vec<PaperRecord>, aspects: &[AspectId]) -> Result<Self> {
        validate_aspects(aspects)?;
        records.sort_by(|a, b| a.paper_id.cmp(&b.paper_id));
        for pair in records.windows(2) {
            if pair[0].paper_id == pair[1].paper_id {
                return Err(Error::DuplicatePaper(pair[0].paper_id.clone()));
            }
        }
        let mut vocabularies: BTreeMap<AspectId, LabelVocabulary> = aspects
            .iter()
            .map(|a| {
                let vocab = LabelVocabulary {
                    aspect: a.clone(),
                    entries: BTreeMap::new(),
                };
                (a.clone(), vocab)
            })
            .collect();
        for record in &mut records {
            if record.paper_id.trim().is_empty() {
                return Err(Error::invalid("empty paper_id"));
            }
            if record.title.trim().is_empty() {
                return Err(Error::invalid(format!(
                    "paper `{}` has an empty title",
                    record.paper_id
                )));
            }
            if let Some(extra) = record.labels.keys().find(|k| !aspects.contains(k)) {
                return Err(Error::UnknownAspect(extra.to_string()));
            }
            for aspect in aspects {
                let labels = record.labels.entry(aspect.clone()).or_default();
                let vocab = vocabularies.get_mut(aspect).expect("vocabulary per aspect");
                for label in labels.iter() {
                    vocab
                        .entries
                        .entry(label.clone())
                        .or_insert_with(|| LabelEntry {
                            display_name: label.clone(),
                            paper_count: 0,
                        })
                        .paper_count += 1;
                }
            }
        }
        let positions = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.paper_id.clone(), i))
            .collect();
        Ok(Corpus {
            aspects: aspects.to_vec(),
            papers: records,
            positions,
            vocabularies,
        })
    }

    pub fn aspects(&self) -> &[AspectId] {
        &self.aspects
    }

    pub fn papers(&self) -> &[PaperRecord] {
        &self.papers
    }

    pub fn len(&self) -> usize {
        self.papers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.papers.is_empty()
    }

    pub fn get(&self, paper_id: &str) -> Option<&PaperRecord> {
        self.positions.get(paper_id).map(|&i| &self.papers[i])
    }

    pub fn position(&self, paper_id: &str) -> Option<usize> {
        self.positions.get(paper_id).copied()
    }

    pub fn has_aspect(&self, aspect: &AspectId) -> bool {
        self.vocabularies.contains_key(aspect)
    }

    pub fn vocabulary(&self, aspect: &AspectId) -> Result<&LabelVocabulary> {
        self.vocabularies
            .get(aspect)
            .ok_or_else(|| Error::UnknownAspect(aspect.to_string()))
    }

    pub fn label_stats(&self, aspect: &AspectId) -> Result<LabelStats> {
        let vocab = self.vocabulary(aspect)?;
        let papers_with_label = self
            .papers
            .iter()
            .filter(|p| p.labels_for(aspect).is_some())
            .count();
        let label_count = vocab.len();
        let total: usize = vocab.entries.values().map(|e| e.paper_count).sum();
        let avg_papers_per_label = if label_count == 0 {
            0.0
        } else {
            total as f64 / label_count as f64
        };
        Ok(LabelStats {
            papers_with_label,
            label_count,
            avg_papers_per_label,
        })
    }

    /// Writes the canonical snapshot: one JSON object per line, sorted by id.
    pub fn write_snapshot<W: Write>(&self, mut out: W) -> Result<()> {
        for paper in &self.papers {
            let mut object = Map::new();
            object.insert("paper_id".into(), Value::String(paper.paper_id.clone()));
            object.insert("title".into(), Value::String(paper.title.clone()));
            object.insert(
                "abstract".into(),
                Value::String(paper.abstract_text.clone()),
            );
            for aspect in &self.aspects {
                let labels = paper.labels.get(aspect).into_iter().flatten();
                let labels = labels.map(|l| Value::String(l.clone())).collect();
                object.insert(aspect.to_string(), Value::Array(labels));
            }
            serde_json::to_writer(&mut out, &Value::Object(object))
                .map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Saves the snapshot at `path` and one vocabulary sidecar per aspect.
    /// Returns every written path.
    pub fn save(&self, path: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(1 + self.aspects.len());
        let mut out = BufWriter::new(File::create(path)?);
        self.write_snapshot(&mut out)?;
        out.flush()?;
        written.push(path.to_path_buf());
        for aspect in &self.aspects {
            let sidecar = vocabulary_path(path, aspect);
            let mut out = BufWriter::new(File::create(&sidecar)?);
            self.vocabulary(aspect)?.write_tsv(&mut out)?;
            out.flush()?;
            written.push(sidecar);
        }
        Ok(written)
    }
}

/// `dir/corpus.jsonl` → `dir/corpus.<aspect>.vocab.tsv`.
pub fn vocabulary_path(snapshot: &Path, aspect: &AspectId) -> PathBuf {
    let stem = snapshot
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    snapshot.with_file_name(format!("{stem}.{aspect}.vocab.tsv"))
}
