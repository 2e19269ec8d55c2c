//! Corpus ingestion: DiscoGeM-style delimiter-separated files with one
//! implicit relation per row, a 28-column crowd sense distribution, and the
//! corpus's own train/validation/test split column.
//!
//! Gold level-1/2 distributions are always recomputed as marginals of the
//! level-3 distribution, which guarantees the hierarchy-consistency
//! invariant the model exploits.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::{Language, Level, SenseDistribution, SenseHierarchy};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("missing column: {0}")]
    MissingColumn(String),
    #[error("unknown language {language:?} in row {row}")]
    UnknownLanguage { language: String, row: usize },
    #[error("unknown split {split:?} in row {row}")]
    UnknownSplit { split: String, row: usize },
    #[error("corpus is empty after filtering")]
    EmptyCorpus,
    #[error("all-zero sense votes for item {0}")]
    AllZero(String),
    #[error("bad numeric value {value:?} in row {row}")]
    BadNumber { value: String, row: usize },
    #[error("duplicate item id across splits: {0}")]
    DuplicateItem(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("store error at line {line}: {reason}")]
    Store { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s.to_ascii_lowercase().as_str() {
            "train" | "training" => Some(Split::Train),
            "validation" | "valid" | "dev" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    Discogem1,
    Discogem2,
}

/// One implicit discourse relation with gold distributions at all levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationInstance {
    pub item_id: String,
    pub language: Language,
    pub arg1: String,
    pub arg2: String,
    pub split: Split,
    pub gold1: SenseDistribution,
    pub gold2: SenseDistribution,
    pub gold3: SenseDistribution,
}

impl RelationInstance {
    pub fn gold(&self, level: Level) -> &SenseDistribution {
        match level {
            Level::One => &self.gold1,
            Level::Two => &self.gold2,
            Level::Three => &self.gold3,
        }
    }

    /// Builds an instance from a level-3 gold distribution, deriving the
    /// upper levels as marginals.
    pub fn from_level3(
        hierarchy: &SenseHierarchy,
        item_id: String,
        language: Language,
        arg1: String,
        arg2: String,
        split: Split,
        gold3: SenseDistribution,
    ) -> RelationInstance {
        let gold2 = hierarchy.aggregate_up(&gold3).expect("level-3 aggregates");
        let gold1 = hierarchy.aggregate_up(&gold2).expect("level-2 aggregates");
        RelationInstance {
            item_id,
            language,
            arg1,
            arg2,
            split,
            gold1,
            gold2,
            gold3,
        }
    }
}

/// Maps corpus file columns onto instance fields. The shipped default
/// matches the canonical store layout documented in the repository; the
/// official release layout is configured through this structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub item_id: String,
    pub language: String,
    pub arg1: String,
    pub arg2: String,
    pub split: String,
    /// Column names of the 28 level-3 senses, in canonical order.
    pub senses: Vec<String>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_delimiter() -> char {
    ','
}

impl ColumnMapping {
    /// Default mapping: lower-cased canonical level-3 sense names (without
    /// the projection `*`) as sense columns.
    pub fn default_for(hierarchy: &SenseHierarchy) -> ColumnMapping {
        ColumnMapping {
            item_id: "itemid".into(),
            language: "language".into(),
            arg1: "arg1".into(),
            arg2: "arg2".into(),
            split: "split".into(),
            senses: hierarchy
                .senses_at(Level::Three)
                .map(|s| s.name.to_ascii_lowercase())
                .collect(),
            delimiter: ',',
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub instances: Vec<RelationInstance>,
    pub languages: BTreeSet<Language>,
    pub source: CorpusSource,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances in a split, optionally restricted to a language set.
    pub fn select(
        &self,
        split: Option<Split>,
        languages: Option<&BTreeSet<Language>>,
    ) -> Vec<&RelationInstance> {
        self.instances
            .iter()
            .filter(|i| split.map_or(true, |s| i.split == s))
            .filter(|i| languages.map_or(true, |l| l.contains(&i.language)))
            .collect()
    }

    pub fn count_language(&self, language: Language) -> usize {
        self.instances.iter().filter(|i| i.language == language).count()
    }
}

/// Divides raw crowd votes by their sum. Errors on an all-zero vector.
pub fn normalize_votes(raw: &[f64]) -> Result<Vec<f64>, CorpusError> {
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return Err(CorpusError::AllZero(String::new()));
    }
    Ok(raw.iter().map(|v| v / sum).collect())
}

/// Loads a corpus file, deriving per-level gold distributions. Rows whose
/// sense mass is off unit sum by more than 1e-3 are renormalized and logged
/// with their item id.
pub fn load_corpus(
    path: &Path,
    source: CorpusSource,
    languages_filter: Option<&BTreeSet<Language>>,
    mapping: &ColumnMapping,
    hierarchy: &SenseHierarchy,
) -> Result<Corpus, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(mapping.delimiter as u8)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize, CorpusError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CorpusError::MissingColumn(name.to_string()))
    };
    let idx_item = col(&mapping.item_id)?;
    let idx_lang = col(&mapping.language)?;
    let idx_arg1 = col(&mapping.arg1)?;
    let idx_arg2 = col(&mapping.arg2)?;
    let idx_split = col(&mapping.split)?;
    let idx_senses: Vec<usize> = mapping
        .senses
        .iter()
        .map(|s| col(s))
        .collect::<Result<_, _>>()?;

    let mut instances = Vec::new();
    let mut seen: std::collections::BTreeMap<String, Split> = std::collections::BTreeMap::new();
    for (rowno, record) in reader.records().enumerate() {
        let record = record?;
        let lang_raw = record.get(idx_lang).unwrap_or("").to_string();
        let language = Language::parse(&lang_raw).ok_or(CorpusError::UnknownLanguage {
            language: lang_raw,
            row: rowno + 2,
        })?;
        if let Some(filter) = languages_filter {
            if !filter.contains(&language) {
                continue;
            }
        }
        let item_id = record.get(idx_item).unwrap_or("").to_string();
        let split_raw = record.get(idx_split).unwrap_or("").to_string();
        let split = Split::parse(&split_raw).ok_or(CorpusError::UnknownSplit {
            split: split_raw,
            row: rowno + 2,
        })?;
        if let Some(prev) = seen.insert(item_id.clone(), split) {
            if prev != split {
                return Err(CorpusError::DuplicateItem(item_id));
            }
        }
        let mut raw = Vec::with_capacity(28);
        for &i in &idx_senses {
            let cell = record.get(i).unwrap_or("");
            let v: f64 = cell.trim().parse().map_err(|_| CorpusError::BadNumber {
                value: cell.to_string(),
                row: rowno + 2,
            })?;
            raw.push(v);
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(CorpusError::AllZero(item_id));
        }
        if (sum - 1.0).abs() > 1e-3 {
            log::warn!("renormalizing {item_id}: sense mass sums to {sum}");
        }
        let values = normalize_votes(&raw).map_err(|_| CorpusError::AllZero(item_id.clone()))?;
        let gold3 = SenseDistribution {
            level: Level::Three,
            values,
        };
        instances.push(RelationInstance::from_level3(
            hierarchy,
            item_id,
            language,
            record.get(idx_arg1).unwrap_or("").to_string(),
            record.get(idx_arg2).unwrap_or("").to_string(),
            split,
            gold3,
        ));
    }
    if instances.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let languages = instances.iter().map(|i| i.language).collect();
    Ok(Corpus {
        instances,
        languages,
        source,
    })
}

/// One sense row of a statistics table: per-language mass sums.
#[derive(Debug, Clone, Serialize)]
pub struct StatsRow {
    pub sense: String,
    pub per_language: Vec<f64>,
    pub total: f64,
}

/// Table-shaped per-language mass sums at one level, plus per-language
/// totals (which equal instance counts).
#[derive(Debug, Clone, Serialize)]
pub struct StatsTable {
    pub level: Level,
    pub languages: Vec<Language>,
    pub rows: Vec<StatsRow>,
    pub language_totals: Vec<f64>,
}

impl StatsTable {
    pub fn cell(&self, sense: &str, language: Language) -> Option<f64> {
        let li = self.languages.iter().position(|l| *l == language)?;
        self.rows
            .iter()
            .find(|r| r.sense == sense || r.sense.trim_end_matches('*') == sense)
            .map(|r| r.per_language[li])
    }

    /// Renders the table as a delimiter-separated file.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("sense");
        for l in &self.languages {
            out.push('\t');
            out.push_str(l.code());
        }
        out.push_str("\tall\n");
        for row in &self.rows {
            out.push_str(&row.sense);
            for v in &row.per_language {
                out.push_str(&format!("\t{v:.1}"));
            }
            out.push_str(&format!("\t{:.1}\n", row.total));
        }
        out.push_str("total");
        let mut grand = 0.0;
        for v in &self.language_totals {
            out.push_str(&format!("\t{v:.1}"));
            grand += v;
        }
        out.push_str(&format!("\t{grand:.1}\n"));
        out
    }
}

/// Sums each sense's gold mass over all instances, per language.
pub fn corpus_stats(corpus: &Corpus, level: Level, hierarchy: &SenseHierarchy) -> StatsTable {
    let languages: Vec<Language> = corpus.languages.iter().copied().collect();
    let mut rows: Vec<StatsRow> = hierarchy
        .senses_at(level)
        .map(|s| StatsRow {
            sense: s.display_name(),
            per_language: vec![0.0; languages.len()],
            total: 0.0,
        })
        .collect();
    let mut language_totals = vec![0.0; languages.len()];
    for inst in &corpus.instances {
        let li = languages.iter().position(|l| *l == inst.language).unwrap();
        for (i, v) in inst.gold(level).values.iter().enumerate() {
            rows[i].per_language[li] += v;
            rows[i].total += v;
        }
        language_totals[li] += inst.gold(level).sum();
    }
    StatsTable {
        level,
        languages,
        rows,
        language_totals,
    }
}

/// Canonical instance store schema: one JSON record per line with stable
/// field names; upper-level gold distributions are marginals, so only the
/// level-3 vector is stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StoredInstance {
    pub item_id: String,
    pub language: Language,
    pub split: Split,
    pub arg1: String,
    pub arg2: String,
    pub gold3: Vec<f64>,
}

/// Writes the corpus to the canonical line-delimited store.
pub fn save_store(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for inst in &corpus.instances {
        let rec = StoredInstance {
            item_id: inst.item_id.clone(),
            language: inst.language,
            split: inst.split,
            arg1: inst.arg1.clone(),
            arg2: inst.arg2.clone(),
            gold3: inst.gold3.values.clone(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| CorpusError::Store { line: 0, reason: e.to_string() })?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Loads a corpus from the canonical store.
pub fn load_store(
    path: &Path,
    source: CorpusSource,
    hierarchy: &SenseHierarchy,
) -> Result<Corpus, CorpusError> {
    let file = BufReader::new(std::fs::File::open(path)?);
    let mut instances = Vec::new();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StoredInstance = serde_json::from_str(&line).map_err(|e| CorpusError::Store {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        let values = normalize_votes(&rec.gold3).map_err(|_| CorpusError::AllZero(rec.item_id.clone()))?;
        instances.push(RelationInstance::from_level3(
            hierarchy,
            rec.item_id,
            rec.language,
            rec.arg1,
            rec.arg2,
            rec.split,
            SenseDistribution {
                level: Level::Three,
                values,
            },
        ));
    }
    if instances.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let languages = instances.iter().map(|i| i.language).collect();
    Ok(Corpus {
        instances,
        languages,
        source,
    })
}
