//! Topic classification: tokenizer, TF-IDF vectorizer and multinomial
//! logistic regression trained by full-batch gradient descent.

mod logreg;
mod model_file;
mod split;
mod tfidf;
mod tokenize;

use thiserror::Error;

use crate::binio::FormatError;

pub use logreg::{objective, train, TopicModel, TrainConfig, TrainReport};
pub use split::stratified_split;
pub use tfidf::{fit_tfidf, SparseVector, Vocabulary, DEFAULT_MAX_FEATURES};
pub use tokenize::tokenize;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("training needs at least two distinct labels")]
    DegenerateLabels,
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("non-finite value in {0}")]
    Numeric(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("feature index {index} outside vocabulary of size {size}")]
    FeatureIndex { index: usize, size: usize },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
