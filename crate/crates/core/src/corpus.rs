//! Labeled email corpora: loading (CSV / JSONL), descriptive statistics,
//! the seeded train/test split and a template-based synthetic generator.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub const IMPOLITE: u8 = 0;
pub const POLITE: u8 = 1;

/// Human-readable name of a label.
pub fn label_name(label: u8) -> &'static str {
    match label {
        IMPOLITE => "impolite",
        POLITE => "polite",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub id: String,
    pub text: String,
    pub label: u8,
}

impl LabeledDocument {
    /// Validates the document invariants; `row` is used in error messages.
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: u8, row: usize) -> Result<Self> {
        let text = text.into();
        if label > 1 {
            return Err(Error::Value {
                row,
                message: format!("label {label} is not 0 or 1"),
            });
        }
        if text.trim().is_empty() {
            return Err(Error::Value {
                row,
                message: "text is empty".into(),
            });
        }
        Ok(Self {
            id: id.into(),
            text,
            label,
        })
    }

    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

/// An ordered collection of labeled documents with unique ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    documents: Vec<LabeledDocument>,
}

impl Corpus {
    pub fn new(documents: Vec<LabeledDocument>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Value {
                    row: i + 1,
                    message: format!("duplicate document id {:?}", doc.id),
                });
            }
        }
        Ok(Self { documents })
    }

    pub fn documents(&self) -> &[LabeledDocument] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.documents.iter().map(|d| d.label).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.documents.iter().map(|d| d.text.as_str()).collect()
    }

    pub fn label_names(&self) -> BTreeMap<u8, &'static str> {
        BTreeMap::from([(IMPOLITE, label_name(IMPOLITE)), (POLITE, label_name(POLITE))])
    }

    /// Per-label document counts, `[impolite, polite]`.
    pub fn class_counts(&self) -> [usize; 2] {
        let mut counts = [0usize; 2];
        for d in &self.documents {
            counts[d.label as usize] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct CsvRecord {
    id: Option<String>,
    text: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct JsonRecord {
    id: Option<serde_json::Value>,
    text: String,
    label: serde_json::Value,
}

fn parse_label(raw: &str, row: usize) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(IMPOLITE),
        "1" => Ok(POLITE),
        other => Err(Error::Value {
            row,
            message: format!("label {other:?} is not 0 or 1"),
        }),
    }
}

/// Reads a corpus from a CSV (`text,label`, optional `id`) or JSONL file.
///
/// Rows are numbered from 1 (the first data record) in error messages. When a
/// record carries no id, its row number is used.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Csv => read_csv(file),
        CorpusFormat::Jsonl => read_jsonl(BufReader::new(file)),
    }
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Corpus> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in ["text", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Schema(format!("missing column {required:?}")));
        }
    }
    let mut docs = Vec::new();
    for (i, record) in rdr.deserialize::<CsvRecord>().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Value {
            row,
            message: e.to_string(),
        })?;
        let label = parse_label(&record.label, row)?;
        let id = record.id.filter(|s| !s.is_empty()).unwrap_or_else(|| row.to_string());
        docs.push(LabeledDocument::new(id, record.text, label, row)?);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(docs)
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut docs = Vec::new();
    let mut row = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<jsonl>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| Error::Value {
            row,
            message: e.to_string(),
        })?;
        for required in ["text", "label"] {
            if value.get(required).is_none() {
                return Err(Error::Schema(format!("row {row}: missing key {required:?}")));
            }
        }
        let record: JsonRecord = serde_json::from_value(value).map_err(|e| Error::Value {
            row,
            message: e.to_string(),
        })?;
        let label = match &record.label {
            serde_json::Value::Number(n) => parse_label(&n.to_string(), row)?,
            serde_json::Value::String(s) => parse_label(s, row)?,
            other => {
                return Err(Error::Value {
                    row,
                    message: format!("label {other} is not 0 or 1"),
                })
            }
        };
        let id = match record.id {
            Some(serde_json::Value::String(s)) => s,
            Some(serde_json::Value::Null) | None => row.to_string(),
            Some(other) => other.to_string(),
        };
        docs.push(LabeledDocument::new(id, record.text, label, row)?);
    }
    if docs.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Corpus::new(docs)
}

/// Writes a corpus with an `id,text,label` header (RFC 4180 quoting) or as JSONL.
pub fn write_corpus(corpus: &Corpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(file);
            wtr.write_record(["id", "text", "label"])?;
            for d in corpus.documents() {
                wtr.write_record([d.id.as_str(), d.text.as_str(), &d.label.to_string()])?;
            }
            wtr.flush().map_err(|e| Error::io(path, e))?;
        }
        CorpusFormat::Jsonl => {
            let mut w = BufWriter::new(file);
            for d in corpus.documents() {
                serde_json::to_writer(&mut w, d)?;
                w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub class_counts: BTreeMap<u8, usize>,
    pub class_fractions: BTreeMap<u8, f64>,
    pub mean_words: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single document.
    pub sd_words: f64,
    pub median_words: f64,
    pub max_words: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let n = corpus.len();
    let counts = corpus.class_counts();
    let mut words: Vec<usize> = corpus.documents().iter().map(|d| d.word_count()).collect();
    words.sort_unstable();
    let mean = words.iter().sum::<usize>() as f64 / n as f64;
    let sd = if n > 1 {
        let ss: f64 = words.iter().map(|&w| (w as f64 - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let median = if n % 2 == 1 {
        words[n / 2] as f64
    } else {
        (words[n / 2 - 1] + words[n / 2]) as f64 / 2.0
    };
    Ok(CorpusStats {
        n_docs: n,
        class_counts: BTreeMap::from([(IMPOLITE, counts[0]), (POLITE, counts[1])]),
        class_fractions: BTreeMap::from([
            (IMPOLITE, counts[0] as f64 / n as f64),
            (POLITE, counts[1] as f64 / n as f64),
        ]),
        mean_words: mean,
        sd_words: sd,
        median_words: median,
        max_words: *words.last().unwrap_or(&0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.30,
            seed: 42,
        }
    }
}

impl SplitSpec {
    /// Number of test documents, `ceil(test_fraction * n)`.
    ///
    /// A 1e-9 slack absorbs binary representation error so that e.g.
    /// `0.3 * 10` yields 3 rather than 4.
    pub fn test_size(&self, n: usize) -> usize {
        let raw = self.test_fraction * n as f64;
        (raw - 1e-9).ceil().max(0.0) as usize
    }
}

/// Seeded, unstratified train/test split.
///
/// Document indices `0..n` are Fisher-Yates shuffled with [`SplitMix64`]
/// seeded by `spec.seed`; the last `ceil(fraction * n)` shuffled indices form
/// the test set, the rest the training set, both in shuffled order.
pub fn split(corpus: &Corpus, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test fraction {} outside (0, 1)",
            spec.test_fraction
        )));
    }
    let n = corpus.len();
    let n_test = spec.test_size(n);
    if n < 2 || n_test == 0 || n_test >= n {
        return Err(Error::Split(format!(
            "corpus of {n} documents cannot be split with test fraction {}",
            spec.test_fraction
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SplitMix64::new(spec.seed).shuffle(&mut order);
    let (train_idx, test_idx) = order.split_at(n - n_test);
    Ok((corpus.subset(train_idx), corpus.subset(test_idx)))
}

const POLITE_OPENINGS: &[&str] = &[
    "Sehr geehrte Frau Müller,",
    "Sehr geehrter Herr Schmidt,",
    "Liebe Kolleginnen und Kollegen,",
    "Guten Tag Frau Weber,",
    "Hallo Herr Fischer,",
];

const IMPOLITE_OPENINGS: &[&str] = &["Hey,", "Also,", "Na toll,", "Hören Sie,", "Mal ehrlich,"];

const POLITE_CLOSINGS: &[&str] = &[
    "Mit freundlichen Grüßen",
    "Vielen herzlichen Dank und beste Grüße",
    "Herzliche Grüße",
    "Mit bestem Dank im Voraus",
];

const IMPOLITE_CLOSINGS: &[&str] = &["Erledigen Sie das endlich.", "Das reicht jetzt.", "Keine Ausreden mehr.", "Tschüss."];

/// Courteous vocabulary, disjoint from [`RUDE_PHRASES`] and the filler.
const COURTEOUS_PHRASES: &[&str] = &[
    "bitte",
    "gerne",
    "freundlicherweise",
    "dankbar",
    "verständnisvoll",
    "entschuldigen",
    "wertschätzen",
    "geduldig",
    "hilfsbereit",
    "aufmerksam",
    "höflich",
    "zuvorkommend",
];

const RUDE_PHRASES: &[&str] = &[
    "gefälligst",
    "unverschämt",
    "lächerlich",
    "inkompetent",
    "frechheit",
    "blödsinn",
    "unfähig",
    "sofort",
    "zumutung",
    "katastrophe",
    "peinlich",
    "schlamperei",
];

const FILLER: &[&str] = &[
    "Lieferung",
    "Rechnung",
    "Bestellung",
    "Termin",
    "Projekt",
    "Unterlagen",
    "Angebot",
    "Vertrag",
    "Kunde",
    "Ware",
    "Nummer",
    "Woche",
    "Montag",
    "Freitag",
    "Büro",
    "Lager",
    "Paket",
    "Auftrag",
    "Preis",
    "Zahlung",
    "Antwort",
    "Frage",
    "Abteilung",
    "Besprechung",
    "Prüfung",
    "Abrechnung",
    "Versand",
    "Adresse",
    "Formular",
    "Zeitplan",
];

const CONNECTIVES: &[&str] = &["wegen", "zur", "für", "über", "mit", "nach", "vor", "bezüglich"];

/// Word pools used by [`generate_synthetic`], exposed for separability checks.
pub fn synthetic_pools() -> (&'static [&'static str], &'static [&'static str]) {
    (COURTEOUS_PHRASES, RUDE_PHRASES)
}

fn pick<'a>(rng: &mut SplitMix64, pool: &[&'a str]) -> &'a str {
    pool[rng.below(pool.len() as u64) as usize]
}

fn synthetic_email(rng: &mut SplitMix64, label: u8) -> String {
    let (openings, closings, tone) = if label == POLITE {
        (POLITE_OPENINGS, POLITE_CLOSINGS, COURTEOUS_PHRASES)
    } else {
        (IMPOLITE_OPENINGS, IMPOLITE_CLOSINGS, RUDE_PHRASES)
    };
    let mut parts = vec![pick(rng, openings).to_string()];
    let sentences = 2 + rng.below(3) as usize;
    for _ in 0..sentences {
        let mut words = Vec::new();
        let filler = 2 + rng.below(4) as usize;
        for k in 0..filler {
            if k > 0 && rng.below(2) == 0 {
                words.push(pick(rng, CONNECTIVES).to_string());
            }
            words.push(pick(rng, FILLER).to_string());
        }
        let insert_at = rng.below(words.len() as u64 + 1) as usize;
        words.insert(insert_at, pick(rng, tone).to_string());
        let mut sentence = words.join(" ");
        sentence.push(if label == IMPOLITE && rng.below(2) == 0 { '!' } else { '.' });
        parts.push(sentence);
    }
    parts.push(format!("\n{}", pick(rng, closings)));
    parts.join(" ")
}

/// Template-based stand-in corpus with `round(n_docs * impolite_fraction)`
/// impolite emails. Polite emails draw from a courteous word pool, impolite
/// ones from a rude pool, both mixed with shared business filler.
pub fn generate_synthetic(n_docs: usize, impolite_fraction: f64, seed: u64) -> Result<Corpus> {
    if !(impolite_fraction > 0.0 && impolite_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "impolite fraction {impolite_fraction} outside (0, 1)"
        )));
    }
    let n_impolite = (n_docs as f64 * impolite_fraction).round() as usize;
    if n_impolite < 1 || n_impolite >= n_docs {
        return Err(Error::InvalidArgument(format!(
            "{n_docs} documents at impolite fraction {impolite_fraction} leave a class empty"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut labels: Vec<u8> = (0..n_docs)
        .map(|i| if i < n_impolite { IMPOLITE } else { POLITE })
        .collect();
    rng.shuffle(&mut labels);
    let width = n_docs.to_string().len();
    let docs = labels
        .into_iter()
        .enumerate()
        .map(|(i, label)| LabeledDocument {
            id: format!("syn-{:0width$}", i + 1, width = width),
            text: synthetic_email(&mut rng, label),
            label,
        })
        .collect();
    Corpus::new(docs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str, label: u8) -> LabeledDocument {
        LabeledDocument::new(id, text, label, 0).unwrap()
    }

    #[test]
    fn csv_with_embedded_newline_and_comma() {
        let body = "text,label\n\"Dear Sir,\nthanks\",1\n";
        let c = read_csv(body.as_bytes()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.documents()[0].label, 1);
        assert_eq!(c.documents()[0].text, "Dear Sir,\nthanks");
        assert_eq!(c.documents()[0].id, "1");
    }

    #[test]
    fn csv_bad_label_names_row() {
        let body = "text,label\na,1\nb,0\nc,2\n";
        match read_csv(body.as_bytes()) {
            Err(Error::Value { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected value error, got {other:?}"),
        }
    }

    #[test]
    fn csv_missing_column_is_schema_error() {
        let body = "body,label\na,1\n";
        assert!(matches!(read_csv(body.as_bytes()), Err(Error::Schema(_))));
    }

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(read_csv("text,label\n".as_bytes()), Err(Error::EmptyCorpus)));
        assert!(matches!(read_jsonl("".as_bytes()), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn blank_text_is_rejected() {
        let body = "text,label\n\"   \",1\n";
        assert!(matches!(read_csv(body.as_bytes()), Err(Error::Value { row: 1, .. })));
    }

    #[test]
    fn jsonl_literal_backslash_n_preserved() {
        let body = r#"{"id":"a","text":"Hallo\\nWelt","label":1}
{"id":"b","text":"Nein","label":"0"}
"#;
        let c = read_jsonl(body.as_bytes()).unwrap();
        assert_eq!(c.documents()[0].text, "Hallo\\nWelt");
        assert_eq!(c.class_counts(), [1, 1]);
    }

    #[test]
    fn jsonl_duplicate_ids_rejected() {
        let body = "{\"id\":\"a\",\"text\":\"x\",\"label\":1}\n{\"id\":\"a\",\"text\":\"y\",\"label\":0}\n";
        assert!(read_jsonl(body.as_bytes()).is_err());
    }

    #[test]
    fn jsonl_class_balance() {
        let mut body = String::new();
        for i in 0..2088 {
            let label = if i < 146 { 0 } else { 1 };
            body.push_str(&format!("{{\"id\":\"{i}\",\"text\":\"mail {i}\",\"label\":{label}}}\n"));
        }
        let c = read_jsonl(body.as_bytes()).unwrap();
        assert_eq!(c.len(), 2088);
        assert_eq!(c.class_counts(), [146, 1942]);
    }

    #[test]
    fn stats_hand_counted() {
        let c = Corpus::new(vec![doc("1", "a b c", 1), doc("2", "d e", 0)]).unwrap();
        let s = corpus_stats(&c).unwrap();
        assert_eq!(s.n_docs, 2);
        assert_eq!(s.class_counts[&1], 1);
        assert_eq!(s.class_counts[&0], 1);
        assert_eq!(s.mean_words, 2.5);
        assert_eq!(s.median_words, 2.5);
        assert_eq!(s.max_words, 3);
    }

    #[test]
    fn stats_single_and_uniform() {
        let c = Corpus::new(vec![doc("1", "hi", 1)]).unwrap();
        let s = corpus_stats(&c).unwrap();
        assert_eq!((s.mean_words, s.median_words, s.max_words, s.sd_words), (1.0, 1.0, 1, 0.0));

        let c = Corpus::new((0..4).map(|i| doc(&i.to_string(), "w w w w", 1)).collect()).unwrap();
        let s = corpus_stats(&c).unwrap();
        assert_eq!(s.sd_words, 0.0);
        assert_eq!(s.mean_words, 4.0);
        assert!(corpus_stats(&Corpus::default()).is_err());
    }

    #[test]
    fn split_sizes() {
        let make = |n: usize| {
            Corpus::new((0..n).map(|i| doc(&i.to_string(), "x", (i % 2) as u8)).collect()).unwrap()
        };
        let (tr, te) = split(&make(10), &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (7, 3));
        let (tr, te) = split(&make(2088), &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), te.len()), (1461, 627));
        assert!(split(&make(1), &SplitSpec::default()).is_err());
        let tiny = SplitSpec {
            test_fraction: 0.99,
            seed: 1,
        };
        assert!(split(&make(3), &tiny).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let c = generate_synthetic(50, 0.2, 9).unwrap();
        let a = split(&c, &SplitSpec::default()).unwrap();
        let b = split(&c, &SplitSpec::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthetic_label_counts() {
        let c = generate_synthetic(2000, 0.075, 5).unwrap();
        assert_eq!(c.class_counts(), [150, 1850]);
        let c = generate_synthetic(10, 0.5, 5).unwrap();
        assert_eq!(c.class_counts(), [5, 5]);
        assert_eq!(generate_synthetic(2000, 0.075, 5).unwrap(), generate_synthetic(2000, 0.075, 5).unwrap());
        assert!(generate_synthetic(10, 0.0, 1).is_err());
        assert!(generate_synthetic(10, 0.01, 1).is_err());
        assert!(generate_synthetic(2, 0.9, 1).is_err());
    }

    #[test]
    fn synthetic_pools_disjoint() {
        let (polite, rude) = synthetic_pools();
        let filler: HashSet<String> = FILLER.iter().chain(CONNECTIVES).map(|w| w.to_lowercase()).collect();
        for w in polite {
            assert!(!rude.contains(w));
            assert!(!filler.contains(*w));
        }
        for w in rude {
            assert!(!filler.contains(*w));
        }
    }
}
