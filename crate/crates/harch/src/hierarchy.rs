//! The PDTB 3.0 sense taxonomy as annotated in DiscoGeM 2.0: 4 level-1,
//! 17 level-2 and 28 level-3 senses (level-2 senses without level-3
//! children are projected down and marked with a `*`).
//!
//! The canonical index order of each level fixes the layout of every
//! probability vector in the crate.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for treating a distribution as normalized at API boundaries.
pub const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("level-2 sense {0} has real level-3 children")]
    HasRealChildren(String),
    #[error("cannot aggregate a level-1 distribution upward")]
    Level1Aggregation,
    #[error("unknown sense name: {0}")]
    UnknownSenseName(String),
    #[error("connective map is not a bijection: {0}")]
    NotABijection(String),
    #[error("expected 28 connective pairs, found {0}")]
    WrongCount(usize),
    #[error("14-label mapping is not configured")]
    MappingUnavailable,
    #[error("distribution over level {level:?} must have {expected} entries, found {found}")]
    LengthMismatch {
        level: Level,
        expected: usize,
        found: usize,
    },
    #[error("distribution sums to {0}, expected 1")]
    Unnormalized(f64),
    #[error("negative probability mass at index {0}")]
    NegativeMass(usize),
    #[error("malformed record on line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One of the three sense levels of the PDTB 3.0 hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    One,
    Two,
    Three,
}

impl Level {
    /// Number of senses at this level as annotated in DiscoGeM 2.0.
    pub fn count(self) -> usize {
        match self {
            Level::One => 4,
            Level::Two => 17,
            Level::Three => 28,
        }
    }

    pub fn parent_level(self) -> Option<Level> {
        match self {
            Level::One => None,
            Level::Two => Some(Level::One),
            Level::Three => Some(Level::Two),
        }
    }

    pub fn from_index(i: usize) -> Option<Level> {
        match i {
            1 => Some(Level::One),
            2 => Some(Level::Two),
            3 => Some(Level::Three),
            _ => None,
        }
    }

    pub fn as_number(self) -> usize {
        match self {
            Level::One => 1,
            Level::Two => 2,
            Level::Three => 3,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "level-{}", self.as_number())
    }
}

/// The four languages of DiscoGeM 2.0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Eng,
    Ger,
    Fre,
    Cze,
}

impl Language {
    pub const ALL: [Language; 4] = [Language::Eng, Language::Ger, Language::Fre, Language::Cze];

    pub fn code(self) -> &'static str {
        match self {
            Language::Eng => "eng",
            Language::Ger => "ger",
            Language::Fre => "fre",
            Language::Cze => "cze",
        }
    }

    pub fn parse(s: &str) -> Option<Language> {
        match s.to_ascii_lowercase().as_str() {
            "eng" | "en" | "english" => Some(Language::Eng),
            "ger" | "de" | "german" => Some(Language::Ger),
            "fre" | "fr" | "french" => Some(Language::Fre),
            "cze" | "cs" | "czech" => Some(Language::Cze),
            _ => None,
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// A single sense in the taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sense {
    pub name: String,
    pub level: Level,
    /// Name of the sense one level up; `None` for level-1 senses.
    pub parent: Option<String>,
    /// Position within the level's canonical order.
    pub index: usize,
    /// True for level-3 entries created by projecting a level-2 sense.
    pub projected: bool,
    /// Reference per-language mass sums (eng, ger, fre, cze) from the
    /// shipped taxonomy data file.
    pub ref_mass: [f64; 4],
}

impl Sense {
    /// Display name; projected level-3 entries carry a `*` suffix.
    pub fn display_name(&self) -> String {
        if self.projected {
            format!("{}*", self.name)
        } else {
            self.name.clone()
        }
    }
}

/// A probability vector over one level's senses, in canonical index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseDistribution {
    pub level: Level,
    pub values: Vec<f64>,
}

impl SenseDistribution {
    /// Builds a distribution, enforcing length, non-negativity and unit sum.
    pub fn new(level: Level, values: Vec<f64>) -> Result<Self, HierarchyError> {
        if values.len() != level.count() {
            return Err(HierarchyError::LengthMismatch {
                level,
                expected: level.count(),
                found: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| *v < 0.0 || !v.is_finite()) {
            return Err(HierarchyError::NegativeMass(i));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(HierarchyError::Unnormalized(sum));
        }
        Ok(SenseDistribution { level, values })
    }

    /// One-hot distribution on the sense at `index`.
    pub fn one_hot(level: Level, index: usize) -> Self {
        let mut values = vec![0.0; level.count()];
        values[index] = 1.0;
        SenseDistribution { level, values }
    }

    /// Uniform distribution over the level.
    pub fn uniform(level: Level) -> Self {
        let n = level.count();
        SenseDistribution {
            level,
            values: vec![1.0 / n as f64; n],
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// An ordered bijection between 28 connectives and the 28 level-3 senses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectiveMap {
    pub language: Language,
    /// `(connective, level-3 index)` pairs in prompt order.
    pub entries: Vec<(String, usize)>,
}

impl ConnectiveMap {
    /// Ordered connective strings as they appear in the prompt.
    pub fn connectives(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(c, _)| c.as_str())
    }

    /// Level-3 sense index for the connective at prompt position `i`.
    pub fn sense_index(&self, i: usize) -> usize {
        self.entries[i].1
    }
}

/// Mapping from the 17 level-2 senses onto a reduced 14-label set.
///
/// Each level-2 sense either maps to one of the 14 output labels or is
/// dropped; dropped mass is removed and the result renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Label14Mapping {
    /// The 14 output labels in order.
    pub labels: Vec<String>,
    /// For each level-2 index, the target label index or `None` (dropped).
    pub targets: Vec<Option<usize>>,
}

/// A distribution over the reduced 14-label set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedDistribution {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

/// The full taxonomy plus derived lookup structures.
#[derive(Debug, Clone)]
pub struct SenseHierarchy {
    senses: Vec<Sense>,
    by_level: BTreeMap<Level, Vec<usize>>,
    /// sense name -> position in `senses` (names are unique per level; a
    /// projected level-3 entry shares its level-2 name, so keys carry the
    /// display name for level 3).
    child_map: BTreeMap<(Level, usize), Vec<usize>>,
    /// Child level index -> parent index at the level above.
    parent_index: BTreeMap<(Level, usize), usize>,
    connective_maps: BTreeMap<Language, ConnectiveMap>,
    label14: Option<Label14Mapping>,
}

const HIERARCHY_TSV: &str = include_str!("../data/hierarchy.tsv");

/// Bundled connective-map data. Only the English map ships with the crate;
/// other languages are supplied by the user as data files of the same
/// format.
pub fn builtin_connectives(language: Language) -> Option<&'static str> {
    match language {
        Language::Eng => Some(include_str!("../data/connectives/eng.tsv")),
        _ => None,
    }
}

impl SenseHierarchy {
    /// Builds the taxonomy from the shipped data file: Temporal{Synchronous,
    /// Asynchronous}, Contingency{Cause, Condition, Neg-Condition, Purpose},
    /// Comparison{Concession, Contrast, Similarity}, Expansion{Conjunction,
    /// Disjunction, Equivalence, Exception, Instantiation, Level-of-Detail,
    /// Manner, Substitution}, with level-3 children and projections.
    pub fn build_default() -> SenseHierarchy {
        Self::parse_tsv(HIERARCHY_TSV).expect("shipped taxonomy data is valid")
    }

    /// Loads a taxonomy from a delimiter-separated data file.
    pub fn load(path: &Path) -> Result<SenseHierarchy, HierarchyError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_tsv(&text)
    }

    fn parse_tsv(text: &str) -> Result<SenseHierarchy, HierarchyError> {
        let mut senses = Vec::new();
        let mut per_level_counts: BTreeMap<Level, usize> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(HierarchyError::Malformed {
                    line: lineno + 1,
                    reason: format!("expected 7 tab-separated columns, found {}", cols.len()),
                });
            }
            let level = cols[0]
                .parse::<usize>()
                .ok()
                .and_then(Level::from_index)
                .ok_or_else(|| HierarchyError::Malformed {
                    line: lineno + 1,
                    reason: format!("bad level {:?}", cols[0]),
                })?;
            let raw_name = cols[1];
            let projected = raw_name.ends_with('*');
            let name = raw_name.trim_end_matches('*').to_string();
            let parent = match cols[2] {
                "-" => None,
                p => Some(p.to_string()),
            };
            let mut ref_mass = [0.0; 4];
            for (k, raw) in cols[3..7].iter().enumerate() {
                ref_mass[k] = raw.parse::<f64>().map_err(|_| HierarchyError::Malformed {
                    line: lineno + 1,
                    reason: format!("bad mass {:?}", raw),
                })?;
            }
            let index = *per_level_counts.entry(level).or_insert(0);
            *per_level_counts.get_mut(&level).unwrap() += 1;
            senses.push(Sense {
                name,
                level,
                parent,
                index,
                projected,
                ref_mass,
            });
        }
        Self::from_senses(senses)
    }

    fn from_senses(senses: Vec<Sense>) -> Result<SenseHierarchy, HierarchyError> {
        let mut by_level: BTreeMap<Level, Vec<usize>> = BTreeMap::new();
        for (i, s) in senses.iter().enumerate() {
            by_level.entry(s.level).or_default().push(i);
        }
        for level in [Level::One, Level::Two, Level::Three] {
            let found = by_level.get(&level).map_or(0, Vec::len);
            if found != level.count() {
                return Err(HierarchyError::Malformed {
                    line: 0,
                    reason: format!("{level} has {found} senses, expected {}", level.count()),
                });
            }
        }
        let mut parent_index = BTreeMap::new();
        let mut child_map: BTreeMap<(Level, usize), Vec<usize>> = BTreeMap::new();
        for s in &senses {
            if let Some(parent_level) = s.level.parent_level() {
                let pname = s.parent.as_deref().ok_or_else(|| HierarchyError::Malformed {
                    line: 0,
                    reason: format!("{} lacks a parent", s.name),
                })?;
                let parent = by_level[&parent_level]
                    .iter()
                    .map(|&i| &senses[i])
                    .find(|p| p.name == pname)
                    .ok_or_else(|| HierarchyError::UnknownSenseName(pname.to_string()))?;
                parent_index.insert((s.level, s.index), parent.index);
                child_map
                    .entry((parent_level, parent.index))
                    .or_default()
                    .push(s.index);
            }
        }
        Ok(SenseHierarchy {
            senses,
            by_level,
            child_map,
            parent_index,
            connective_maps: BTreeMap::new(),
            label14: None,
        })
    }

    /// Serializes the taxonomy back to the data-file format. Loading the
    /// output reproduces the same taxonomy byte-for-byte on re-serialize.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# level\tname\tparent\teng\tger\tfre\tcze\n");
        for level in [Level::One, Level::Two, Level::Three] {
            for s in self.senses_at(level) {
                out.push_str(&format!(
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                    s.level.as_number(),
                    s.display_name(),
                    s.parent.as_deref().unwrap_or("-"),
                    s.ref_mass[0],
                    s.ref_mass[1],
                    s.ref_mass[2],
                    s.ref_mass[3],
                ));
            }
        }
        out
    }

    /// Senses at `level` in canonical index order.
    pub fn senses_at(&self, level: Level) -> impl Iterator<Item = &Sense> {
        self.by_level[&level].iter().map(move |&i| &self.senses[i])
    }

    pub fn sense(&self, level: Level, index: usize) -> &Sense {
        let i = self.by_level[&level][index];
        &self.senses[i]
    }

    /// Looks a sense up by name at a given level. Projected level-3 names
    /// may carry the `*` suffix or not.
    pub fn find(&self, level: Level, name: &str) -> Option<&Sense> {
        let bare = name.trim_end_matches('*');
        let starred = name.ends_with('*');
        self.senses_at(level)
            .find(|s| s.name == bare && (!starred || s.projected))
    }

    /// Index of the parent sense one level up.
    pub fn parent_of(&self, level: Level, index: usize) -> Option<usize> {
        self.parent_index.get(&(level, index)).copied()
    }

    /// Child indices at the level below, in canonical order.
    pub fn children_of(&self, level: Level, index: usize) -> &[usize] {
        self.child_map
            .get(&(level, index))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Returns the projected level-3 counterpart of a level-2 sense, or
    /// `HasRealChildren` if the sense has genuine level-3 children.
    pub fn project_l2_to_l3(&self, l2_index: usize) -> Result<&Sense, HierarchyError> {
        let l2 = self.sense(Level::Two, l2_index);
        let children = self.children_of(Level::Two, l2_index);
        let projected: Vec<&Sense> = children
            .iter()
            .map(|&i| self.sense(Level::Three, i))
            .filter(|s| s.projected)
            .collect();
        if projected.is_empty() {
            return Err(HierarchyError::HasRealChildren(l2.name.clone()));
        }
        Ok(projected[0])
    }

    /// Sums each parent's children's masses, producing the distribution one
    /// level up. Preserves the total mass of the input.
    pub fn aggregate_up(&self, dist: &SenseDistribution) -> Result<SenseDistribution, HierarchyError> {
        let parent_level = dist
            .level
            .parent_level()
            .ok_or(HierarchyError::Level1Aggregation)?;
        if dist.values.len() != dist.level.count() {
            return Err(HierarchyError::LengthMismatch {
                level: dist.level,
                expected: dist.level.count(),
                found: dist.values.len(),
            });
        }
        let mut values = vec![0.0; parent_level.count()];
        for (i, v) in dist.values.iter().enumerate() {
            let p = self.parent_index[&(dist.level, i)];
            values[p] += v;
        }
        Ok(SenseDistribution {
            level: parent_level,
            values,
        })
    }

    /// Reduces a level-2 distribution to the configured 14-label set.
    pub fn reduce_to_14(&self, dist: &SenseDistribution) -> Result<ReducedDistribution, HierarchyError> {
        if dist.level != Level::Two {
            return Err(HierarchyError::LengthMismatch {
                level: Level::Two,
                expected: Level::Two.count(),
                found: dist.values.len(),
            });
        }
        let mapping = self.label14.as_ref().ok_or(HierarchyError::MappingUnavailable)?;
        let mut values = vec![0.0; mapping.labels.len()];
        for (i, v) in dist.values.iter().enumerate() {
            if let Some(t) = mapping.targets[i] {
                values[t] += v;
            }
        }
        let sum: f64 = values.iter().sum();
        if sum > 0.0 {
            for v in &mut values {
                *v /= sum;
            }
        }
        Ok(ReducedDistribution {
            labels: mapping.labels.clone(),
            values,
        })
    }

    /// Loads and validates a connective map data file for `language`.
    ///
    /// The file lists exactly 28 `connective<TAB>level-3 sense` pairs in
    /// prompt order; connectives and target senses must each be distinct.
    pub fn load_connective_map(
        &mut self,
        language: Language,
        path: &Path,
    ) -> Result<&ConnectiveMap, HierarchyError> {
        let text = std::fs::read_to_string(path)?;
        let map = self.parse_connective_map(language, &text)?;
        self.connective_maps.insert(language, map);
        Ok(&self.connective_maps[&language])
    }

    pub fn parse_connective_map(
        &self,
        language: Language,
        text: &str,
    ) -> Result<ConnectiveMap, HierarchyError> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (conn, sense_name) = line.split_once('\t').ok_or_else(|| HierarchyError::Malformed {
                line: lineno + 1,
                reason: "expected connective<TAB>sense".into(),
            })?;
            let sense = self
                .find(Level::Three, sense_name.trim())
                .ok_or_else(|| HierarchyError::UnknownSenseName(sense_name.trim().to_string()))?;
            entries.push((conn.trim().to_string(), sense.index));
        }
        if entries.len() != Level::Three.count() {
            return Err(HierarchyError::WrongCount(entries.len()));
        }
        let mut seen_conn = std::collections::BTreeSet::new();
        let mut seen_sense = std::collections::BTreeSet::new();
        for (c, s) in &entries {
            if !seen_conn.insert(c.clone()) {
                return Err(HierarchyError::NotABijection(format!("duplicate connective {c:?}")));
            }
            if !seen_sense.insert(*s) {
                return Err(HierarchyError::NotABijection(format!(
                    "duplicate sense target {:?}",
                    self.sense(Level::Three, *s).display_name()
                )));
            }
        }
        Ok(ConnectiveMap { language, entries })
    }

    pub fn connective_map(&self, language: Language) -> Option<&ConnectiveMap> {
        self.connective_maps.get(&language)
    }

    pub fn set_connective_map(&mut self, map: ConnectiveMap) {
        self.connective_maps.insert(map.language, map);
    }

    /// Loads the 14-label reduction mapping: one `level-2 sense<TAB>target`
    /// line per level-2 sense, target `-` meaning dropped.
    pub fn load_label14(&mut self, path: &Path) -> Result<(), HierarchyError> {
        let text = std::fs::read_to_string(path)?;
        self.set_label14_from_str(&text)
    }

    pub fn set_label14_from_str(&mut self, text: &str) -> Result<(), HierarchyError> {
        let mut raw: BTreeMap<usize, Option<String>> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (src, target) = line.split_once('\t').ok_or_else(|| HierarchyError::Malformed {
                line: lineno + 1,
                reason: "expected source<TAB>target".into(),
            })?;
            let sense = self
                .find(Level::Two, src.trim())
                .ok_or_else(|| HierarchyError::UnknownSenseName(src.trim().to_string()))?;
            let target = match target.trim() {
                "-" => None,
                t => Some(t.to_string()),
            };
            raw.insert(sense.index, target);
        }
        if raw.len() != Level::Two.count() {
            return Err(HierarchyError::Malformed {
                line: 0,
                reason: format!("14-label mapping covers {} of 17 level-2 senses", raw.len()),
            });
        }
        // Output labels in first-appearance order over the canonical level-2 order.
        let mut labels: Vec<String> = Vec::new();
        let mut targets = vec![None; Level::Two.count()];
        for (idx, target) in &raw {
            if let Some(name) = target {
                let pos = match labels.iter().position(|l| l == name) {
                    Some(p) => p,
                    None => {
                        labels.push(name.clone());
                        labels.len() - 1
                    }
                };
                targets[*idx] = Some(pos);
            }
        }
        self.label14 = Some(Label14Mapping { labels, targets });
        Ok(())
    }

    pub fn label14(&self) -> Option<&Label14Mapping> {
        self.label14.as_ref()
    }
}

/// Permutes a 28-entry connective-probability vector into the canonical
/// level-3 order and derives the level-2/level-1 marginals.
pub fn connective_to_senses(
    hierarchy: &SenseHierarchy,
    language: Language,
    values: &[f64],
) -> Result<(SenseDistribution, SenseDistribution, SenseDistribution), HierarchyError> {
    let map = hierarchy
        .connective_map(language)
        .ok_or(HierarchyError::MappingUnavailable)?;
    if values.len() != Level::Three.count() {
        return Err(HierarchyError::LengthMismatch {
            level: Level::Three,
            expected: Level::Three.count(),
            found: values.len(),
        });
    }
    let mut l3 = vec![0.0; Level::Three.count()];
    for (pos, v) in values.iter().enumerate() {
        l3[map.sense_index(pos)] = *v;
    }
    let d3 = SenseDistribution {
        level: Level::Three,
        values: l3,
    };
    let d2 = hierarchy.aggregate_up(&d3)?;
    let d1 = hierarchy.aggregate_up(&d2)?;
    Ok((d1, d2, d3))
}
