//! Language registry: metadata for every language in a run and the grouping
//! logic used by the aggregation analyses.
//!
//! Registry order is load-bearing: it defines the row/column order of every
//! matrix produced by the pipeline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const REGISTRY_HEADER: &str = "code,script,family,resource_level,corpus_source";

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("failed to read registry {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("registry line {line}: expected header `{REGISTRY_HEADER}`, got `{got}`")]
    BadHeader { line: usize, got: String },
    #[error("registry line {line}: expected 5 comma-separated fields, got {got}")]
    BadFieldCount { line: usize, got: usize },
    #[error("registry line {line}: code `{code}` must contain exactly one underscore")]
    BadCode { line: usize, code: String },
    #[error("registry line {line}: script `{script}` does not match code suffix `{suffix}`")]
    ScriptMismatch {
        line: usize,
        script: String,
        suffix: String,
    },
    #[error("registry line {line}: unknown resource level `{got}` (expected high/low/unknown)")]
    BadResourceLevel { line: usize, got: String },
    #[error("registry line {line}: duplicate code `{code}`")]
    DuplicateCode { line: usize, code: String },
    #[error("registry is empty")]
    Empty,
}

/// NLLB-style resource classification. Languages with an unknown level are
/// excluded from resource-level statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResourceLevel {
    High,
    Low,
    Unknown,
}

impl ResourceLevel {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "high" => Some(ResourceLevel::High),
            "low" => Some(ResourceLevel::Low),
            "unknown" | "" => Some(ResourceLevel::Unknown),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ResourceLevel::High => "high",
            ResourceLevel::Low => "low",
            ResourceLevel::Unknown => "unknown",
        }
    }
}

impl fmt::Display for ResourceLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Identity, script, family, resource level, and corpus source of one language.
///
/// `code` has the form `name_Script`; the script attribute always equals the
/// suffix after the underscore. An empty `family` marks an unaffiliated
/// language, which joins no family group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageSpec {
    pub code: String,
    pub script: String,
    pub family: String,
    pub resource_level: ResourceLevel,
    pub corpus_source: String,
}

impl LanguageSpec {
    /// Script suffix of a `name_Script` code, if well-formed.
    pub fn script_suffix(code: &str) -> Option<&str> {
        let mut parts = code.split('_');
        let name = parts.next()?;
        let script = parts.next()?;
        if parts.next().is_some() || name.is_empty() || script.is_empty() {
            return None;
        }
        Some(script)
    }
}

/// Grouping keys accepted by [`Registry::group_by`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    Script,
    Family,
    ResourceLevel,
}

/// Ordered language list with lookup by code. Immutable after load; shared
/// read-only by sweep workers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Registry {
    specs: Vec<LanguageSpec>,
}

impl Registry {
    pub fn new(specs: Vec<LanguageSpec>) -> Result<Self, RegistryError> {
        if specs.is_empty() {
            return Err(RegistryError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, spec) in specs.iter().enumerate() {
            let suffix = LanguageSpec::script_suffix(&spec.code).ok_or_else(|| {
                RegistryError::BadCode {
                    line: i + 2,
                    code: spec.code.clone(),
                }
            })?;
            if suffix != spec.script {
                return Err(RegistryError::ScriptMismatch {
                    line: i + 2,
                    script: spec.script.clone(),
                    suffix: suffix.to_string(),
                });
            }
            if !seen.insert(spec.code.clone()) {
                return Err(RegistryError::DuplicateCode {
                    line: i + 2,
                    code: spec.code.clone(),
                });
            }
        }
        Ok(Registry { specs })
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[LanguageSpec] {
        &self.specs
    }

    /// Language codes in registry (= matrix) order.
    pub fn codes(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.code.clone()).collect()
    }

    pub fn get(&self, code: &str) -> Option<&LanguageSpec> {
        self.specs.iter().find(|s| s.code == code)
    }

    pub fn index_of(&self, code: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.code == code)
    }

    /// Registry restricted to the languages not named in `exclude`, in the
    /// original order.
    pub fn without(&self, exclude: &[String]) -> Result<Registry, RegistryError> {
        Registry::new(
            self.specs
                .iter()
                .filter(|s| !exclude.contains(&s.code))
                .cloned()
                .collect(),
        )
    }

    /// Partition codes by the chosen attribute. Group order follows the first
    /// occurrence of each label in registry order; codes keep registry order
    /// within a group. Languages with an empty family form no family group,
    /// and `unknown` resource level forms no resource group.
    pub fn group_by(&self, key: GroupKey) -> Vec<(String, Vec<String>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for spec in &self.specs {
            let label = match key {
                GroupKey::Script => spec.script.clone(),
                GroupKey::Family => {
                    if spec.family.is_empty() {
                        continue;
                    }
                    spec.family.clone()
                }
                GroupKey::ResourceLevel => {
                    if spec.resource_level == ResourceLevel::Unknown {
                        continue;
                    }
                    spec.resource_level.label().to_string()
                }
            };
            if !groups.contains_key(&label) {
                order.push(label.clone());
            }
            groups.entry(label).or_default().push(spec.code.clone());
        }
        order
            .into_iter()
            .map(|label| {
                let codes = groups.remove(&label).unwrap();
                (label, codes)
            })
            .collect()
    }
}

/// Parse a registry CSV. Header must be exactly `{REGISTRY_HEADER}`; fields
/// may not contain commas, so no quoting is involved.
pub fn parse_registry(text: &str) -> Result<Registry, RegistryError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(RegistryError::Empty)?;
    if header.trim_end_matches('\r') != REGISTRY_HEADER {
        return Err(RegistryError::BadHeader {
            line: 1,
            got: header.to_string(),
        });
    }
    let mut specs = Vec::new();
    for (idx, raw) in lines {
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(RegistryError::BadFieldCount {
                line: idx + 1,
                got: fields.len(),
            });
        }
        let resource_level = ResourceLevel::parse(fields[3]).ok_or_else(|| {
            RegistryError::BadResourceLevel {
                line: idx + 1,
                got: fields[3].to_string(),
            }
        })?;
        specs.push(LanguageSpec {
            code: fields[0].to_string(),
            script: fields[1].to_string(),
            family: fields[2].to_string(),
            resource_level,
            corpus_source: fields[4].to_string(),
        });
    }
    Registry::new(specs)
}

/// Load a registry CSV from disk. Duplicate codes and script/suffix
/// mismatches are rejected.
pub fn load_registry(path: &Path) -> Result<Registry, RegistryError> {
    let text = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_registry(&text)
}

/// Serialize a registry back to its CSV form.
pub fn registry_to_csv(registry: &Registry) -> String {
    let mut out = String::from(REGISTRY_HEADER);
    out.push('\n');
    for s in registry.specs() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.code,
            s.script,
            s.family,
            s.resource_level.label(),
            s.corpus_source
        ));
    }
    out
}
