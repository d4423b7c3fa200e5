//! Trainable policies, featurization, checkpoints and behavior cloning.

pub mod checkpoint;
pub mod features;
pub mod model;
pub mod optim;
pub mod pretrain;
pub mod vocab;

pub use checkpoint::CheckpointRecord;
pub use features::{featurize, FeatureVector};
pub use model::{Family, Policy, PolicyConfig, PolicyOutput, PolicyParams, Target};
pub use pretrain::{pretrain_bc, PretrainConfig};
pub use vocab::{TokenVocabulary, VocabSpec};
