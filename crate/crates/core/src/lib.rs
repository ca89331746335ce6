//! Rare-word paraphrase augmentation for prompt-based clinical NLP.
//!
//! The crate builds corpus frequency tables, selects rare medical words
//! with a single short dictionary gloss, inserts those glosses into dataset
//! sentences, renders cloze prompts, draws seeded few-shot samples and
//! evaluates scorer predictions with a paired t-test.

pub mod augment;
pub mod dataset;
pub mod error;
pub mod evalstats;
pub mod fewshot;
pub mod fixture;
pub mod freqcount;
pub mod lexicon;
pub mod pipeline;
pub mod promptfmt;
pub mod selector;

pub use augment::{augment_dataset, augment_text, strip_annotations, AugmentStats, Matcher};
pub use dataset::{AnnotationSpan, Dataset, Example, Label, Split, Task};
pub use error::{Error, Result};
pub use evalstats::{aggregate, paired_t_test, pearson, student_t_cdf, EvalReport, PredictionRecord, TTest};
pub use fewshot::{sample_fewshot, FewShotSplit, SamplePlan, SplitMix64};
pub use freqcount::{build_table, fold, tokenize, FrequencyTable, Token};
pub use lexicon::{normalize_gloss, parse_entries, prepare_medical, DictionaryEntry, MedicalTagPolicy};
pub use pipeline::{run_pipeline, Manifest, PipelineConfig, PipelineRun};
pub use promptfmt::{prediction_to_score, render_prompt, score_to_target, PromptInstance, PromptTemplate, Target};
pub use selector::{build_paraphrase_map, ParaphraseMap, SelectionStats, SelectorConfig};
