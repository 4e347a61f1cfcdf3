//! Annotation parsing, tokenization, vocabularies, trim plans, feature
//! files and synthetic data.

mod annotation;
mod dataset;
mod features;
mod synthetic;
mod tokenizer;
mod trim;
mod vocab;

pub use annotation::{parse_annotations, Agent, CameraView, Domain, EventAnnotation, VideoAnnotation};
pub use dataset::{write_synthetic, Dataset, VideoSample};
pub use features::{resample_features, FeatureSequence, FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION};
pub use synthetic::{generate_synthetic_dataset, ReferenceCaption, SyntheticDataset, SyntheticSpec};
pub use tokenizer::{detokenize, is_punctuation, split_pieces, tokenize, words, Piece, PUNCTUATION};
pub use trim::{compute_trim_plan, TrimPlan, TrimSegment};
pub use vocab::{align_vocabularies, build_vocabulary, Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};
