//! Claim–evidence record format, knowledge filtering, and synthetic data.

mod filter;
mod record;
mod synthetic;

pub use filter::{filter_and_dedup, FilterConfig};
pub use record::{
    load_dataset, Dataset, DatasetHeader, KnowledgeItem, KnowledgeRecord, KnowledgeSource,
};
pub use synthetic::{
    class_names, generate_synthetic, random_record, split_dataset, KnowledgeCounts, LabelSignal,
    SyntheticSpec, PROTOTYPE_NOISE, SIGNAL_SCORE_RANGE,
};
