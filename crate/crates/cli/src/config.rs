//! Run configuration: one TOML file, overridable per key from the command line.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use qream_core::backend::{BackendKind, BackendSpec};
use qream_core::evalkit::DocSource;
use qream_core::judge::FilterTarget;
use qream_core::records::digest_json;
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Shared response cache; disabled when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    /// Questions processed concurrently within a stage.
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Extra `*.tmpl` files overlaying the built-in templates.
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub backends: Vec<BackendConfig>,
    pub roles: Roles,
    #[serde(default)]
    pub hyper: Hyper,
    #[serde(default)]
    pub templates: TemplateVersions,
    #[serde(default)]
    pub sweep: Sweep,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_workers() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Pool from which stylistic seed questions are drawn.
    pub train: PathBuf,
    /// Questions to rewrite, score, distill and evaluate.
    pub questions: PathBuf,
    /// Prebuilt context-conflicting set; built from `questions` when absent.
    #[serde(default)]
    pub cc: Option<PathBuf>,
    /// Top-K passages kept per question.
    #[serde(default = "default_k")]
    pub max_passages: usize,
    /// At most this many questions are used, sampled under `sample_seed`.
    #[serde(default = "default_cap")]
    pub sample_cap: usize,
    #[serde(default)]
    pub sample_seed: Option<u64>,
}

fn default_k() -> usize {
    5
}

fn default_cap() -> usize {
    1000
}

/// How a mock backend produces text it has no fixture for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockResponder {
    /// Digest-seeded word salad drawn from the prompt.
    #[default]
    Fallback,
    /// The role-aware simulated world.
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    #[serde(flatten)]
    pub spec: BackendSpec,
    /// Mock only: fixture table consulted before the responder.
    #[serde(default)]
    pub fixtures: Option<PathBuf>,
    /// Mock only.
    #[serde(default)]
    pub responder: MockResponder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roles {
    pub generator: String,
    pub rewriter: String,
    pub reader: String,
    pub verifier: String,
    pub scorer: String,
}

impl Roles {
    pub fn as_map(&self) -> BTreeMap<String, String> {
        [
            ("generator", &self.generator),
            ("rewriter", &self.rewriter),
            ("reader", &self.reader),
            ("verifier", &self.verifier),
            ("scorer", &self.scorer),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    /// Stylistic seeds in the exemplar bank.
    pub m: usize,
    /// Rewrite rounds.
    pub n: usize,
    /// Words of the previous round kept as the next round's input.
    pub l: usize,
    pub separator: String,
    pub filter_target: FilterTarget,
    pub gen_temperature: f64,
    pub rewrite_temperature: f64,
    /// Reader and verifier.
    pub judge_temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            m: 4,
            n: 3,
            l: 100,
            separator: "\n".into(),
            filter_target: FilterTarget::Both,
            gen_temperature: 0.7,
            rewrite_temperature: 0.7,
            judge_temperature: 0.0,
            max_output_tokens: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplateVersions {
    pub gen: String,
    pub rewrite: String,
    pub reader: String,
    pub fact_extract: String,
    pub fact_verify: String,
    pub reconstruct: String,
    pub ft: String,
}

impl Default for TemplateVersions {
    fn default() -> Self {
        let v1 = || "v1".to_string();
        TemplateVersions {
            gen: v1(),
            rewrite: v1(),
            reader: v1(),
            fact_extract: v1(),
            fact_verify: v1(),
            reconstruct: v1(),
            ft: v1(),
        }
    }
}

/// Extra rewrite settings run alongside the main one, each producing its own
/// pools, scores, dataset and reports.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub n_values: Vec<usize>,
    pub rewrite_versions: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderMode {
    #[default]
    Fixed,
    Shuffled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub doc_sources: Vec<DocSource>,
    /// Also compute s_orient and r_inc for every evaluated document.
    pub doc_quality: bool,
    pub cc_order: OrderMode,
    pub cc_separator: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            doc_sources: vec![DocSource::Retrieved, DocSource::Rewritten],
            doc_quality: true,
            cc_order: OrderMode::Fixed,
            cc_separator: "\n\n".into(),
        }
    }
}

/// One rewrite setting: rounds and rewrite template version.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RewriteSet {
    pub n: usize,
    pub version: String,
}

impl RewriteSet {
    pub fn name(&self) -> String {
        format!("n{}-{}", self.n, self.version)
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(format!("{}: {e}", path.display())))?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    /// Relative paths are taken relative to the config file.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.corpus.train);
        fix(&mut self.corpus.questions);
        for p in [&mut self.cache_dir, &mut self.templates_dir, &mut self.corpus.cc]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        for b in &mut self.backends {
            if let Some(p) = &mut b.fixtures {
                fix(p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let h = &self.hyper;
        if h.m == 0 || h.n == 0 || h.l == 0 {
            return Err(Failure::Config(format!(
                "hyper.m, hyper.n and hyper.l must all be >= 1 (got {}, {}, {})",
                h.m, h.n, h.l
            )));
        }
        if self.corpus.max_passages == 0 || self.corpus.sample_cap == 0 {
            return Err(Failure::Config(
                "corpus.max_passages and corpus.sample_cap must be >= 1".into(),
            ));
        }
        if self.workers == 0 {
            return Err(Failure::Config("workers must be >= 1".into()));
        }
        if self.sweep.n_values.contains(&0) {
            return Err(Failure::Config("sweep.n_values entries must be >= 1".into()));
        }
        let mut ids = BTreeSet::new();
        for b in &self.backends {
            if !ids.insert(b.spec.id.as_str()) {
                return Err(Failure::Config(format!("backend id `{}` is declared twice", b.spec.id)));
            }
            b.spec.validate().map_err(|e| Failure::Config(e.to_string()))?;
            if b.spec.kind == BackendKind::Remote && (b.fixtures.is_some() || b.responder != MockResponder::Fallback) {
                return Err(Failure::Config(format!(
                    "backend `{}`: fixtures and responder apply to mock backends only",
                    b.spec.id
                )));
            }
        }
        for (role, id) in self.roles.as_map() {
            if !ids.contains(id.as_str()) {
                return Err(Failure::Config(format!("role `{role}` names unknown backend `{id}`")));
            }
        }
        Ok(())
    }

    pub fn backend(&self, id: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.spec.id == id)
    }

    pub fn sample_seed(&self) -> u64 {
        self.corpus.sample_seed.unwrap_or(self.seed)
    }

    /// The main rewrite setting followed by sweep settings, without repeats.
    pub fn rewrite_sets(&self) -> Vec<RewriteSet> {
        let main = RewriteSet {
            n: self.hyper.n,
            version: self.templates.rewrite.clone(),
        };
        let mut sets = vec![main.clone()];
        let extra = self
            .sweep
            .n_values
            .iter()
            .map(|&n| RewriteSet {
                n,
                version: main.version.clone(),
            })
            .chain(self.sweep.rewrite_versions.iter().map(|v| RewriteSet {
                n: main.n,
                version: v.clone(),
            }));
        for set in extra {
            if !sets.contains(&set) {
                sets.push(set);
            }
        }
        sets
    }

    /// Digest of everything that affects artifact contents. Locations
    /// (output, cache and template directories, corpus paths) and the worker
    /// count are excluded; corpus files enter through their content digests.
    pub fn digest(&self, corpus_digests: &BTreeMap<String, String>) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.cache_dir = None;
        c.workers = 0;
        c.corpus.train = PathBuf::new();
        c.corpus.questions = PathBuf::new();
        c.corpus.cc = None;
        for b in &mut c.backends {
            b.fixtures = None;
        }
        c.templates_dir = None;
        digest_json(&(&c, corpus_digests))
    }
}

/// Applies `dotted.key=value`; the value is read as TOML and falls back to a
/// plain string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), Failure> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("override `{item}` is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cursor = table;
    for part in parents {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
