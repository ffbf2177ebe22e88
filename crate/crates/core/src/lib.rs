//! Fine-grained sexism/misogyny classification toolkit for developer-forum
//! comments: a 12-category taxonomy, corpus preparation, versioned few-shot
//! prompts, a provider-agnostic model gateway with offline replay, output
//! parsing, and an MCC-centric evaluation suite.

pub mod corpus;
pub mod errlab;
pub mod evalkit;
pub mod modelgw;
pub mod outparse;
pub mod promptkit;
pub mod taxonomy;

pub use corpus::{balance_sample, corpus_stats, load_corpus, normalize_text, save_corpus, Corpus, LabeledComment};
pub use evalkit::{ConfusionMatrix, MetricsReport};
pub use modelgw::{Gateway, ModelConfig, RawResponse, ResponseCache};
pub use outparse::{parse_response, primary_label, Classification};
pub use promptkit::{prompt_hash, render_prompt, PromptSpec};
pub use taxonomy::{Category, Taxonomy};
