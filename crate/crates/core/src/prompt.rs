//! Prompt templates for every generation strategy, plus the template
//! library file format.
//!
//! A template is a format string with exactly one `{}` class placeholder.
//! Generated templates carry namespaced provenance tokens (`clip:image`,
//! `ctx:cartoon`, `feat:scary`, `fmt:2`) recording what produced them;
//! these become the items mined by [`crate::apriori`].
//!
//! Library files hold one template per line. Lines starting with `#` are
//! comments. A comment of the form `#@<TAB>key=value<TAB>...` attaches
//! metadata (`id`, `strategy`, `class`, `tokens`) to the next template, so
//! generated sets survive a write/read cycle while staying readable by
//! tools that only understand plain template lists.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::ClassLabel;

pub const PLACEHOLDER: &str = "{}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Default,
    Context,
    Pair,
    Feature,
    Apriori,
    Library,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Default => "default",
            Strategy::Context => "context",
            Strategy::Pair => "pair",
            Strategy::Feature => "feature",
            Strategy::Apriori => "apriori",
            Strategy::Library => "library",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "default" => Ok(Strategy::Default),
            "context" => Ok(Strategy::Context),
            "pair" => Ok(Strategy::Pair),
            "feature" => Ok(Strategy::Feature),
            "apriori" => Ok(Strategy::Apriori),
            "library" => Ok(Strategy::Library),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    pub format: String,
    pub strategy: Strategy,
    /// Namespaced generating tokens, in generation order.
    pub provenance: Vec<String>,
    /// Set only for feature-strategy templates, which describe one class.
    pub class: Option<ClassLabel>,
}

impl PromptTemplate {
    pub fn new(
        id: impl Into<String>,
        format: impl Into<String>,
        strategy: Strategy,
        provenance: Vec<String>,
    ) -> Result<Self> {
        let format = format.into();
        let n = format.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::InvalidArgument(format!(
                "template {format:?} has {n} placeholders, expected exactly one"
            )));
        }
        Ok(PromptTemplate {
            id: id.into(),
            format,
            strategy,
            provenance,
            class: None,
        })
    }

    fn for_class(mut self, class: ClassLabel) -> Self {
        self.class = Some(class);
        self
    }

    pub fn render(&self, class_name: &str) -> String {
        render(self, class_name)
    }
}

/// Ordered, id-unique collection of templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
    /// Number of templates produced before format-string deduplication.
    pub generated_before_dedup: usize,
}

impl PromptSet {
    pub fn new(templates: Vec<PromptTemplate>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(templates.len());
        for t in &templates {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate template id {:?}", t.id)));
            }
            if t.class.is_some() && t.strategy != Strategy::Feature {
                return Err(Error::InvalidArgument(format!(
                    "template {:?}: only feature-strategy templates may be class-specific",
                    t.id
                )));
            }
        }
        let n = templates.len();
        Ok(PromptSet {
            templates,
            generated_before_dedup: n,
        })
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// Templates used to describe `class`: class-specific ones assigned to
    /// it plus every class-agnostic one.
    pub fn for_class(&self, class: ClassLabel) -> impl Iterator<Item = &PromptTemplate> {
        self.templates
            .iter()
            .filter(move |t| t.class.is_none_or(|c| c == class))
    }

    pub fn has_class_specific(&self) -> bool {
        self.templates.iter().any(|t| t.class.is_some())
    }

    /// Distinct strategies in first-appearance order.
    pub fn strategies(&self) -> Vec<Strategy> {
        let mut out = Vec::new();
        for t in &self.templates {
            if !out.contains(&t.strategy) {
                out.push(t.strategy);
            }
        }
        out
    }

    pub fn subset(&self, strategy: Strategy) -> PromptSet {
        let templates: Vec<_> = self
            .templates
            .iter()
            .filter(|t| t.strategy == strategy)
            .cloned()
            .collect();
        let n = templates.len();
        PromptSet {
            templates,
            generated_before_dedup: n,
        }
    }

    pub fn get(&self, id: &str) -> Option<&PromptTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }
}

/// Token vocabularies for generated strategies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLists {
    pub clip_tokens: Vec<String>,
    pub context_tokens: Vec<String>,
    #[serde(default)]
    pub malicious_features: Vec<String>,
    #[serde(default)]
    pub benign_features: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl TokenLists {
    pub const MALICIOUS_FEATURES: [&'static str; 8] = [
        "fast-moving",
        "scary",
        "disgusting",
        "hurting",
        "destructive",
        "killing",
        "obscene",
        "indecent",
    ];
    pub const BENIGN_FEATURES: [&'static str; 10] = [
        "good", "friendly", "happy", "joyful", "singing", "enjoying", "loving", "caring", "playing",
        "funny",
    ];

    /// Exhaustive clip/context lists.
    pub fn initial() -> Self {
        TokenLists {
            clip_tokens: strings(&["photo", "video", "example", "demonstration", "image"]),
            context_tokens: strings(&["cartoon", "animation", "caricature", "comic", "character"]),
            malicious_features: strings(&Self::MALICIOUS_FEATURES),
            benign_features: strings(&Self::BENIGN_FEATURES),
        }
    }

    /// Clip/context lists narrowed to tokens of the best zero-shot prompts.
    pub fn candidate() -> Self {
        TokenLists {
            clip_tokens: strings(&["image", "example"]),
            context_tokens: strings(&["cartoon", "caricature", "comic"]),
            ..Self::initial()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let lists: TokenLists = toml::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("token lists: {e}")))?;
        lists.validate()?;
        Ok(lists)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lists: TokenLists =
            toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        lists.validate()?;
        Ok(lists)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("token lists serialize")
    }

    pub fn validate(&self) -> Result<()> {
        for (name, list) in [
            ("clip_tokens", &self.clip_tokens),
            ("context_tokens", &self.context_tokens),
            ("malicious_features", &self.malicious_features),
            ("benign_features", &self.benign_features),
        ] {
            let mut seen = HashSet::new();
            for tok in list {
                if tok.trim().is_empty() || tok.contains(PLACEHOLDER) || tok.contains('\t') {
                    return Err(Error::InvalidArgument(format!("{name}: invalid token {tok:?}")));
                }
                if !seen.insert(tok) {
                    return Err(Error::InvalidArgument(format!("{name}: duplicate token {tok:?}")));
                }
            }
        }
        Ok(())
    }
}

/// The standard prompt plus its two cartoon-context variants.
pub fn default_templates() -> PromptSet {
    let t = |id: &str, format: &str, strategy| {
        PromptTemplate::new(id, format, strategy, Vec::new()).expect("valid built-in template")
    };
    PromptSet::new(vec![
        t("default-photo", "a photo of a {}.", Strategy::Default),
        t("context-cartoon", "a {} cartoon.", Strategy::Context),
        t("context-photo-cartoon", "a photo of a {} cartoon.", Strategy::Context),
    ])
    .expect("built-in ids are unique")
}

/// Format string of the three clip/context prompt shapes (1-based `shape`).
pub fn pair_format(shape: u8, clip: &str, context: &str) -> String {
    match shape {
        1 => format!("a {clip} of a {{}} {context}."),
        2 => format!("a {clip} of a {context} which is {{}}."),
        3 => format!("a {context} which is {{}}."),
        _ => panic!("pair prompt shapes are numbered 1..=3, got {shape}"),
    }
}

/// Rebuild a pair-shaped format string from its provenance tokens.
pub fn format_from_provenance(tokens: &[String]) -> Option<String> {
    let get = |prefix: &str| tokens.iter().find_map(|t| t.strip_prefix(prefix));
    let shape: u8 = get("fmt:")?.parse().ok()?;
    let context = get("ctx:")?;
    match shape {
        1 | 2 => Some(pair_format(shape, get("clip:")?, context)),
        3 => Some(pair_format(3, "", context)),
        _ => None,
    }
}

/// All three prompt shapes for each (clip, context) pair, in pair order.
/// Shape 3 ignores the clip token; repeats of it are dropped.
pub fn pair_templates(pairs: &[(String, String)], strategy: Strategy) -> Result<PromptSet> {
    let mut templates = Vec::with_capacity(pairs.len() * 3);
    let mut seen = HashSet::new();
    let mut generated = 0;
    for (clip, ctx) in pairs {
        for shape in 1u8..=3 {
            generated += 1;
            let format = pair_format(shape, clip, ctx);
            if !seen.insert(format.clone()) {
                continue;
            }
            let (id, provenance) = if shape == 3 {
                (
                    format!("{strategy}-3-{ctx}"),
                    vec![format!("ctx:{ctx}"), "fmt:3".to_string()],
                )
            } else {
                (
                    format!("{strategy}-{shape}-{clip}-{ctx}"),
                    vec![format!("clip:{clip}"), format!("ctx:{ctx}"), format!("fmt:{shape}")],
                )
            };
            templates.push(PromptTemplate::new(id, format, strategy, provenance)?);
        }
    }
    let mut set = PromptSet::new(templates)?;
    set.generated_before_dedup = generated;
    Ok(set)
}

pub fn generate_pair_templates(tokens: &TokenLists) -> Result<PromptSet> {
    if tokens.clip_tokens.is_empty() || tokens.context_tokens.is_empty() {
        return Err(Error::Empty("clip and context token lists"));
    }
    let pairs: Vec<(String, String)> = tokens
        .clip_tokens
        .iter()
        .flat_map(|c| tokens.context_tokens.iter().map(move |x| (c.clone(), x.clone())))
        .collect();
    pair_templates(&pairs, Strategy::Pair)
}

/// For each class, every (clip, context) pair and every unordered pair of
/// distinct class features: `a {clip} of a {} {context} which is {f_a} and {f_b}.`
pub fn generate_feature_templates(tokens: &TokenLists) -> Result<PromptSet> {
    if tokens.clip_tokens.is_empty() || tokens.context_tokens.is_empty() {
        return Err(Error::Empty("clip and context token lists"));
    }
    let mut templates = Vec::new();
    for class in ClassLabel::ALL {
        let features = match class {
            ClassLabel::Malicious => &tokens.malicious_features,
            ClassLabel::Benign => &tokens.benign_features,
        };
        if features.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "{class} feature list needs at least 2 tokens, got {}",
                features.len()
            )));
        }
        for clip in &tokens.clip_tokens {
            for ctx in &tokens.context_tokens {
                for (i, fa) in features.iter().enumerate() {
                    for fb in &features[i + 1..] {
                        let format = format!("a {clip} of a {{}} {ctx} which is {fa} and {fb}.");
                        let t = PromptTemplate::new(
                            format!("feature-{class}-{clip}-{ctx}-{fa}-{fb}"),
                            format,
                            Strategy::Feature,
                            vec![
                                format!("clip:{clip}"),
                                format!("ctx:{ctx}"),
                                format!("feat:{fa}"),
                                format!("feat:{fb}"),
                            ],
                        )?;
                        templates.push(t.for_class(class));
                    }
                }
            }
        }
    }
    PromptSet::new(templates)
}

/// Substitute the class name for the placeholder, leaving everything else verbatim.
pub fn render(template: &PromptTemplate, class_name: &str) -> String {
    template.format.replacen(PLACEHOLDER, class_name, 1)
}

pub fn load_template_library(path: &Path) -> Result<PromptSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template_library(&text, path)
}

pub fn parse_template_library(text: &str, origin: &Path) -> Result<PromptSet> {
    let mut templates = Vec::new();
    let mut pending: Option<(usize, Vec<(String, String)>)> = None;
    let mut ids = HashSet::new();
    let mut plain = 0usize;

    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(rest) = line.strip_prefix("#@") {
            let mut fields = Vec::new();
            for field in rest.split('\t').filter(|f| !f.trim().is_empty()) {
                let (k, v) = field.split_once('=').ok_or_else(|| {
                    Error::parse(origin, lineno, format!("malformed metadata field {field:?}"))
                })?;
                fields.push((k.trim().to_string(), v.to_string()));
            }
            pending = Some((lineno, fields));
            continue;
        }
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let n = line.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("template must contain exactly one {{}} placeholder, found {n}"),
            ));
        }

        plain += 1;
        let mut id = format!("lib-{plain}");
        let mut strategy = Strategy::Library;
        let mut provenance = Vec::new();
        let mut class = None;
        if let Some((meta_line, fields)) = pending.take() {
            for (k, v) in fields {
                let bad = |msg: String| Error::parse(origin, meta_line, msg);
                match k.as_str() {
                    "id" => id = v,
                    "strategy" => strategy = v.parse().map_err(bad)?,
                    "class" => class = Some(v.parse().map_err(bad)?),
                    "tokens" => {
                        provenance = v
                            .split(';')
                            .filter(|s| !s.is_empty())
                            .map(str::to_string)
                            .collect()
                    }
                    other => return Err(bad(format!("unknown metadata key {other:?}"))),
                }
            }
        }
        if !ids.insert(id.clone()) {
            return Err(Error::parse(origin, lineno, format!("duplicate template id {id:?}")));
        }
        let mut t = PromptTemplate::new(id, line, strategy, provenance)
            .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
        if let Some(c) = class {
            if strategy != Strategy::Feature {
                return Err(Error::parse(
                    origin,
                    lineno,
                    "only feature-strategy templates may carry a class",
                ));
            }
            t = t.for_class(c);
        }
        templates.push(t);
    }

    if templates.is_empty() {
        return Err(Error::Empty("template library has no templates"));
    }
    PromptSet::new(templates)
}

pub fn format_template_library(set: &PromptSet) -> String {
    let mut out = String::from("# prompt templates: one per line, {} marks the class name\n");
    for t in set.templates() {
        out.push_str("#@\tid=");
        out.push_str(&t.id);
        out.push_str("\tstrategy=");
        out.push_str(t.strategy.name());
        if let Some(c) = t.class {
            out.push_str("\tclass=");
            out.push_str(c.name());
        }
        if !t.provenance.is_empty() {
            out.push_str("\ttokens=");
            out.push_str(&t.provenance.join(";"));
        }
        out.push('\n');
        out.push_str(&t.format);
        out.push('\n');
    }
    out
}

pub fn write_template_library(set: &PromptSet, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_template_library(set).as_bytes())
        .map_err(|e| Error::io(path, e))
}
