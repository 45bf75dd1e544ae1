//! Versioned prompt templates with `${name}` placeholders.
//!
//! A template file starts with a front-matter line
//! `#template name=<name> version=<version>`. The body may be split into role
//! segments by lines consisting solely of `[[system]]`, `[[user]]` or
//! `[[assistant]]`; text before any marker belongs to a user segment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backend::{GenParams, Prompt, Role, Segment};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template `{template}` has no binding for placeholder `{placeholder}`")]
    Unbound { template: String, placeholder: String },
    #[error("template `{template}`: unterminated placeholder at byte {offset}")]
    Unterminated { template: String, offset: usize },
    #[error("template file {path}: {message}")]
    Malformed { path: String, message: String },
    #[error("unknown template name `{0}`")]
    UnknownName(String),
    #[error("no template `{name}` with version `{version}`")]
    Missing { name: String, version: String },
    #[error("expected a `{expected}` template, got `{found}`")]
    WrongKind { expected: String, found: String },
    #[error("exemplar question {0:?} equals the target question")]
    ExemplarOverlap(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Gen,
    Rewrite,
    Ft,
    Reader,
    FactExtract,
    FactVerify,
    Reconstruct,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Gen,
        TemplateName::Rewrite,
        TemplateName::Ft,
        TemplateName::Reader,
        TemplateName::FactExtract,
        TemplateName::FactVerify,
        TemplateName::Reconstruct,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Gen => "gen",
            TemplateName::Rewrite => "rewrite",
            TemplateName::Ft => "ft",
            TemplateName::Reader => "reader",
            TemplateName::FactExtract => "fact_extract",
            TemplateName::FactVerify => "fact_verify",
            TemplateName::Reconstruct => "reconstruct",
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateName {
    type Err = TemplateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| TemplateError::UnknownName(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub version: String,
    pub body: String,
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

impl PromptTemplate {
    /// Parses a template file's contents.
    pub fn parse(source: &str, origin: &str) -> Result<Self, TemplateError> {
        let malformed = |message: &str| TemplateError::Malformed {
            path: origin.to_string(),
            message: message.to_string(),
        };
        let (front, body) = source.split_once('\n').unwrap_or((source, ""));
        let front = front
            .trim()
            .strip_prefix("#template")
            .ok_or_else(|| malformed("missing `#template name=.. version=..` front-matter line"))?;
        let mut name = None;
        let mut version = None;
        for field in front.split_whitespace() {
            match field.split_once('=') {
                Some(("name", v)) => name = Some(v.parse::<TemplateName>()?),
                Some(("version", v)) => version = Some(v.to_string()),
                _ => return Err(malformed(&format!("unexpected front-matter field `{field}`"))),
            }
        }
        let template = PromptTemplate {
            name: name.ok_or_else(|| malformed("front-matter lacks name"))?,
            version: version.ok_or_else(|| malformed("front-matter lacks version"))?,
            body: body.to_string(),
        };
        template.pieces()?;
        Ok(template)
    }

    pub fn label(&self) -> String {
        format!("{}@{}", self.name, self.version)
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, TemplateError> {
        let mut out = Vec::new();
        let mut rest = self.body.as_str();
        let mut consumed = 0;
        while let Some(start) = rest.find("${") {
            if start > 0 {
                out.push(Piece::Text(&rest[..start]));
            }
            let after = &rest[start + 2..];
            let end = after.find('}').ok_or(TemplateError::Unterminated {
                template: self.label(),
                offset: consumed + start,
            })?;
            out.push(Piece::Slot(&after[..end]));
            let advance = start + 2 + end + 1;
            consumed += advance;
            rest = &rest[advance..];
        }
        if !rest.is_empty() {
            out.push(Piece::Text(rest));
        }
        Ok(out)
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.pieces()
            .unwrap_or_default()
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.to_string()),
                Piece::Text(_) => None,
            })
            .collect()
    }

    /// Substitutes every placeholder in one pass; bound values are not re-scanned.
    pub fn render_text(&self, bindings: &BTreeMap<&str, &str>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in self.pieces()? {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => match bindings.get(name) {
                    Some(v) => out.push_str(v),
                    None => {
                        return Err(TemplateError::Unbound {
                            template: self.label(),
                            placeholder: name.to_string(),
                        })
                    }
                },
            }
        }
        Ok(out)
    }

    /// Renders into a prompt with default decoding parameters.
    pub fn render(&self, bindings: &BTreeMap<&str, &str>) -> Result<Prompt, TemplateError> {
        let text = self.render_text(bindings)?;
        Ok(Prompt {
            segments: split_segments(&text),
            params: GenParams::default(),
        })
    }

    pub fn expect(&self, name: TemplateName) -> Result<&Self, TemplateError> {
        if self.name == name {
            Ok(self)
        } else {
            Err(TemplateError::WrongKind {
                expected: name.to_string(),
                found: self.name.to_string(),
            })
        }
    }
}

fn split_segments(text: &str) -> Vec<Segment> {
    let mut segments = Vec::new();
    let mut role = Role::User;
    let mut buf = String::new();
    let flush = |role: Role, buf: &mut String, segments: &mut Vec<Segment>| {
        let trimmed = buf.trim_matches('\n');
        if !trimmed.trim().is_empty() {
            segments.push(Segment {
                role,
                text: trimmed.to_string(),
            });
        }
        buf.clear();
    };
    for line in text.split_inclusive('\n') {
        let marker = match line.trim_end() {
            "[[system]]" => Some(Role::System),
            "[[user]]" => Some(Role::User),
            "[[assistant]]" => Some(Role::Assistant),
            _ => None,
        };
        match marker {
            Some(next) => {
                flush(role, &mut buf, &mut segments);
                role = next;
            }
            None => buf.push_str(line),
        }
    }
    flush(role, &mut buf, &mut segments);
    if segments.is_empty() {
        segments.push(Segment {
            role: Role::User,
            text: String::new(),
        });
    }
    segments
}

const BUILTIN: &[(&str, &str)] = &[
    ("gen.v1.tmpl", include_str!("../../templates/gen.v1.tmpl")),
    ("rewrite.v1.tmpl", include_str!("../../templates/rewrite.v1.tmpl")),
    ("rewrite.v2.tmpl", include_str!("../../templates/rewrite.v2.tmpl")),
    ("rewrite.v3.tmpl", include_str!("../../templates/rewrite.v3.tmpl")),
    ("rewrite.v4.tmpl", include_str!("../../templates/rewrite.v4.tmpl")),
    ("rewrite.v5.tmpl", include_str!("../../templates/rewrite.v5.tmpl")),
    ("ft.v1.tmpl", include_str!("../../templates/ft.v1.tmpl")),
    ("reader.v1.tmpl", include_str!("../../templates/reader.v1.tmpl")),
    (
        "fact_extract.v1.tmpl",
        include_str!("../../templates/fact_extract.v1.tmpl"),
    ),
    (
        "fact_verify.v1.tmpl",
        include_str!("../../templates/fact_verify.v1.tmpl"),
    ),
    (
        "reconstruct.v1.tmpl",
        include_str!("../../templates/reconstruct.v1.tmpl"),
    ),
];

/// All known templates keyed by (name, version).
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<(TemplateName, String), PromptTemplate>,
}

impl TemplateSet {
    /// The templates shipped in the crate's `templates/` directory.
    pub fn builtin() -> Self {
        let mut set = TemplateSet::default();
        for (file, source) in BUILTIN {
            set.insert(PromptTemplate::parse(source, file).expect("built-in templates parse"));
        }
        set
    }

    /// Built-ins overlaid with every `*.tmpl` file in `dir`.
    pub fn builtin_with_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = Self::builtin();
        let entries = fs::read_dir(dir).map_err(|e| TemplateError::Malformed {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tmpl"))
            .collect();
        paths.sort();
        for path in paths {
            let source = fs::read_to_string(&path).map_err(|e| TemplateError::Malformed {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            set.insert(PromptTemplate::parse(&source, &path.display().to_string())?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, template: PromptTemplate) {
        self.templates
            .insert((template.name, template.version.clone()), template);
    }

    pub fn get(&self, name: TemplateName, version: &str) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .get(&(name, version.to_string()))
            .ok_or_else(|| TemplateError::Missing {
                name: name.to_string(),
                version: version.to_string(),
            })
    }

    pub fn versions(&self, name: TemplateName) -> Vec<&str> {
        self.templates
            .keys()
            .filter(|(n, _)| *n == name)
            .map(|(_, v)| v.as_str())
            .collect()
    }
}
