//! Frozen reference text encoder, prompt handling, and low-rank adapters.

pub mod adapter;
pub mod prompt;
pub mod reference;

pub use adapter::{combine, combine_refs, AdapterModule, AdapterSpace, AdapterVariant, TaskVector};
pub use prompt::{
    render_prompt, tokenize, ClassPrompt, PromptTemplate, TemplateLibrary, BUILTIN_TEMPLATES,
    CANONICAL_TEMPLATE, CLS_PLACEHOLDER,
};
pub use reference::{EncoderConfig, ReferenceEncoder};
