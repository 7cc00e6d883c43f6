//! Prompt templates, class prompts, and the hashed tokenizer.

use crate::error::{Error, Result};
use crate::ids::ClassId;
use crate::numerics::rng::fnv1a64;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;

/// Placeholder that templates must contain exactly once.
pub const CLS_PLACEHOLDER: &str = "{CLS}";

/// The canonical hand-crafted template.
pub const CANONICAL_TEMPLATE: &str = "a photo of a {CLS}.";

/// A template string with exactly one `{CLS}` placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        let count = text.matches(CLS_PLACEHOLDER).count();
        if count != 1 {
            return Err(Error::contract(format!(
                "template {text:?} contains {count} {CLS_PLACEHOLDER} placeholders, expected exactly 1"
            )));
        }
        Ok(PromptTemplate { text })
    }

    pub fn canonical() -> Self {
        PromptTemplate::new(CANONICAL_TEMPLATE).unwrap()
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    /// Substitute the class name into the placeholder.
    pub fn render(&self, class_name: &str) -> Result<String> {
        if class_name.trim().is_empty() {
            return Err(Error::contract("class name must be non-empty"));
        }
        Ok(self.text.replace(CLS_PLACEHOLDER, class_name))
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        PromptTemplate::new(s)
    }
}

impl From<PromptTemplate> for String {
    fn from(t: PromptTemplate) -> String {
        t.text
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

/// Render a class name through a template.
pub fn render_prompt(class_name: &str, template: &PromptTemplate) -> Result<String> {
    template.render(class_name)
}

/// A class together with the template used to prompt for it.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrompt {
    pub class_id: ClassId,
    pub class_name: String,
    pub template: PromptTemplate,
}

impl ClassPrompt {
    pub fn new(class_id: ClassId, class_name: impl Into<String>, template: PromptTemplate) -> Self {
        ClassPrompt {
            class_id,
            class_name: class_name.into(),
            template,
        }
    }

    pub fn canonical(class_id: ClassId, class_name: impl Into<String>) -> Self {
        ClassPrompt::new(class_id, class_name, PromptTemplate::canonical())
    }

    pub fn rendered(&self) -> Result<String> {
        self.template.render(&self.class_name)
    }
}

/// Tokenize text into vocabulary ids.
///
/// Lowercase, split on whitespace, and hash each word with 64-bit FNV-1a
/// modulo the vocabulary size. Punctuation stays attached to its word; only
/// determinism matters here, not linguistic fidelity.
pub fn tokenize(text: &str, vocab_size: usize) -> Vec<usize> {
    assert!(vocab_size > 0);
    text.to_lowercase()
        .split_whitespace()
        .map(|w| (fnv1a64(w.as_bytes()) % vocab_size as u64) as usize)
        .collect()
}

/// Built-in template library: a 16-template subset in the style of the
/// widely used zero-shot prompt collections.
pub const BUILTIN_TEMPLATES: [&str; 16] = [
    "a photo of a {CLS}.",
    "a blurry photo of a {CLS}.",
    "a black and white photo of a {CLS}.",
    "a low resolution photo of a {CLS}.",
    "a cropped photo of a {CLS}.",
    "a bright photo of a {CLS}.",
    "a dark photo of a {CLS}.",
    "a close-up photo of a {CLS}.",
    "a photo of the {CLS}.",
    "a good photo of a {CLS}.",
    "a photo of one {CLS}.",
    "a rendition of a {CLS}.",
    "an illustration of a {CLS}.",
    "a sketch of a {CLS}.",
    "a painting of a {CLS}.",
    "a sculpture of a {CLS}.",
];

/// Ordered template collection used for augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateLibrary {
    templates: Vec<PromptTemplate>,
}

impl TemplateLibrary {
    pub fn builtin() -> Self {
        TemplateLibrary {
            templates: BUILTIN_TEMPLATES
                .iter()
                .map(|t| PromptTemplate::new(*t).unwrap())
                .collect(),
        }
    }

    /// First `count` built-in templates.
    pub fn builtin_truncated(count: usize) -> Result<Self> {
        if count == 0 || count > BUILTIN_TEMPLATES.len() {
            return Err(Error::contract(format!(
                "template count {count} out of range 1..={}",
                BUILTIN_TEMPLATES.len()
            )));
        }
        Ok(TemplateLibrary {
            templates: BUILTIN_TEMPLATES[..count]
                .iter()
                .map(|t| PromptTemplate::new(*t).unwrap())
                .collect(),
        })
    }

    /// Load templates from a plain-text file, one per line. Blank lines are
    /// skipped; every template must carry the placeholder.
    pub fn from_file(path: &Path) -> Result<Self> {
        let content = std::fs::read_to_string(path)?;
        let mut templates = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let t = PromptTemplate::new(line).map_err(|e| {
                Error::contract(format!("{}:{}: {e}", path.display(), i + 1))
            })?;
            templates.push(t);
        }
        if templates.is_empty() {
            return Err(Error::contract(format!(
                "template file {} holds no templates",
                path.display()
            )));
        }
        Ok(TemplateLibrary { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, idx: usize) -> &PromptTemplate {
        &self.templates[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.iter()
    }
}
