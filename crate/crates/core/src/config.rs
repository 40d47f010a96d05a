//! Runtime configuration.
//!
//! ```json
//! {"ontologies": ["meeting.ontology.json"],
//!  "rules": "default.rules.json",
//!  "mapping": "default.mapping.json",
//!  "strict": true,
//!  "confidence": {"Defined": 1.0, "Sensed": 0.9, "Planned": 0.8, "Aggregated": 0.7},
//!  "listen": "127.0.0.1:7878",
//!  "journal": "kb.journal",
//!  "providers": []}
//! ```
//!
//! Every key is optional. Relative paths resolve against the config file's
//! directory. Omitted files fall back to the bundled meeting-domain data; an
//! explicit empty `ontologies` list means the upper ontology alone.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::acquisition::{ConfidenceTable, MappingRuleSet, ProviderDescriptor};
use crate::bundled;
use crate::kb::ValidationMode;
use crate::ontology::{DomainOntologyDoc, Ontology};
use crate::reasoner::{RuleSet, DEFAULT_ACTIVITY_PREDICATE};

pub const CONFIG_ENV: &str = "CONTEXT_KERNEL_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {reason}")]
    Invalid { path: PathBuf, reason: String },
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    ontologies: Option<Vec<PathBuf>>,
    rules: Option<PathBuf>,
    mapping: Option<PathBuf>,
    strict: Option<bool>,
    confidence: Option<ConfidenceTable>,
    listen: Option<String>,
    journal: Option<PathBuf>,
    activity_predicate: Option<String>,
    #[serde(default)]
    providers: Vec<ProviderDescriptor>,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub ontology: Arc<Ontology>,
    pub rules: RuleSet,
    pub mapping: MappingRuleSet,
    pub mode: ValidationMode,
    pub confidence: ConfidenceTable,
    pub listen: Option<String>,
    pub journal: Option<PathBuf>,
    pub activity_predicate: String,
    /// Providers registered before any session connects.
    pub providers: Vec<ProviderDescriptor>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            ontology: Arc::new(bundled::meeting_ontology_plugged()),
            rules: bundled::default_rules(),
            mapping: bundled::default_mapping(),
            mode: ValidationMode::Strict,
            confidence: ConfidenceTable::default(),
            listen: None,
            journal: None,
            activity_predicate: DEFAULT_ACTIVITY_PREDICATE.to_string(),
            providers: Vec::new(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = read(path)?;
        Config::from_json(&text, path)
    }

    /// Parses config text; `origin` names the file for relative paths and
    /// error messages.
    pub fn from_json(text: &str, origin: &Path) -> Result<Config, ConfigError> {
        let invalid = |reason: String| ConfigError::Invalid { path: origin.to_path_buf(), reason };
        let file: ConfigFile = serde_json::from_str(text).map_err(|e| invalid(e.to_string()))?;
        let base = origin.parent().unwrap_or(Path::new("."));
        let resolve = |p: &PathBuf| if p.is_absolute() { p.clone() } else { base.join(p) };

        let mut cfg = Config::default();
        if let Some(docs) = &file.ontologies {
            let mut ontology = Ontology::load_upper();
            for p in docs {
                let p = resolve(p);
                let doc = DomainOntologyDoc::from_json(&read(&p)?, true)
                    .map_err(|e| ConfigError::Invalid { path: p.clone(), reason: e.to_string() })?;
                ontology = ontology.plug_domain(&doc).map_err(|e| ConfigError::Invalid { path: p.clone(), reason: e.to_string() })?;
            }
            cfg.ontology = Arc::new(ontology);
        }
        if let Some(p) = &file.rules {
            let p = resolve(p);
            cfg.rules = RuleSet::from_json(&read(&p)?).map_err(|e| ConfigError::Invalid { path: p.clone(), reason: e.to_string() })?;
        }
        if let Some(p) = &file.mapping {
            let p = resolve(p);
            cfg.mapping =
                MappingRuleSet::from_json(&read(&p)?).map_err(|e| ConfigError::Invalid { path: p.clone(), reason: e.to_string() })?;
        }
        if let Some(strict) = file.strict {
            cfg.mode = if strict { ValidationMode::Strict } else { ValidationMode::Lenient };
        }
        if let Some(t) = file.confidence {
            cfg.confidence = t;
        }
        cfg.listen = file.listen;
        cfg.journal = file.journal.as_ref().map(resolve);
        if let Some(a) = file.activity_predicate {
            cfg.activity_predicate = a;
        }
        cfg.providers = file.providers;
        cfg.validate().map_err(invalid)?;
        Ok(cfg)
    }

    /// Loads `path`, else the file named by `CONTEXT_KERNEL_CONFIG`, else
    /// the defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Config, ConfigError> {
        match path {
            Some(p) => Config::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
                _ => Ok(Config::default()),
            },
        }
    }

    /// Cross-file consistency: rule and mapping predicates are declared and
    /// the confidence table is ordered.
    pub fn validate(&self) -> Result<(), String> {
        self.confidence.validate()?;
        self.rules.check_against(&self.ontology).map_err(|e| e.to_string())?;
        self.mapping.check_against(&self.ontology).map_err(|e| e.to_string())?;
        if self.ontology.predicate(&self.activity_predicate).is_none() {
            return Err(format!("activity predicate `{}` is not in the ontology", self.activity_predicate));
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}
