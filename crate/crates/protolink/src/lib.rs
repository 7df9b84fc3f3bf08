//! protolink: parse header diagrams out of plaintext RFCs, pair each field
//! with its description paragraph, and link the pair to a protocol
//! knowledge-base entity with a joint text classifier.
//!
//! The pipeline runs in stages, each usable on its own:
//!
//! 1. [`corpus`] fetches and normalizes RFC plaintext;
//! 2. [`diagram`] extracts `HeaderField` records from ASCII header diagrams;
//! 3. [`dataset`] links fields to descriptions and builds labeled triples;
//! 4. [`numerics`], [`encoder`] and [`model`] implement the classifier and
//!    its baselines on a small autodiff substrate;
//! 5. [`train`] runs training, metrics, and k-fold cross-validation;
//! 6. [`checkpoint`] persists trained models.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod diagram;
pub mod encoder;
pub mod model;
pub mod numerics;
pub mod train;

pub use config::RunConfig;
pub use corpus::{clean_document, fetch_rfc, CorpusError, RfcDocument};
pub use dataset::{
    build_samples, link_description, load_samples, make_folds, save_samples, Annotation,
    DatasetError, DatasetSplit, PkbSchema, Sample,
};
pub use diagram::{
    detect_diagrams, parse_diagram, parse_document, parse_row, DiagramError, HeaderDiagram,
    HeaderField,
};
pub use encoder::{tokenize, EncoderConfig, Vocab};
pub use model::{build_model, Classifier, DomainModelKind, JointModel, ModelError, ModelKind};
pub use numerics::{ParamStore, Scalar, Tensor};
pub use train::{cross_validate, train, Metrics, TrainConfig, TrainError};
