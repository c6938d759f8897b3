//! Frequency-stratified zero-shot probing, cloze scoring, and the metrics
//! used for tagging and span extraction.

mod buckets;
mod cloze;
mod jsonl;
mod probe;
mod span;
mod tagging;

pub use buckets::{bucket_of, Bucket, FrequencyBuckets};
pub use cloze::{choose_option, cloze_accuracy, cloze_option_logits, score_cloze, ClozeItem, BLANK};
pub use jsonl::{read_jsonl, write_jsonl};
pub use probe::{build_probe_set, probe_topk, BucketTally, ProbeExample, ProbeReport};
pub use span::{span_em_f1, SpanItem, SpanScore};
pub use tagging::{bio_spans, tag_counts, tag_f1, tag_f1_corpus, Prf, TagCounts, TagMode, TaggedSequence};
