//! Data-free class-incremental learning on frozen embeddings by synthetic
//! feature replay.
//!
//! Each class is summarised by a Gaussian prototype (mean and covariance of
//! its embeddings). When new classes arrive, old classes are replayed by
//! sampling from their prototypes and keeping the samples the previous
//! classifier still recognises; few-shot new classes can be enlarged by
//! sampling, rejecting samples close to other classes in Mahalanobis
//! distance, refitting, and sampling again. A linear softmax head is the
//! only trained component.
//!
//! Modules:
//! - [`features`]: dataset manifest, `f32le` class files, CSV input
//! - [`prototype`]: prototype fitting, SVD reduction, Mahalanobis distance
//! - [`normality`]: principal-component Q-Q report
//! - [`sampler`]: Gaussian sampling, replay and augmentation
//! - [`classifier`]: linear head and Adam training
//! - [`protocol`]: session plans, incremental runs, metrics
//! - [`benchgen`]: synthetic benchmark datasets
//! - [`store_io`]: binary prototype / classifier checkpoints
//! - [`report`]: JSON / CSV / table output

pub mod benchgen;
pub mod classifier;
pub mod error;
pub mod features;
pub mod normality;
pub mod protocol;
pub mod prototype;
pub mod report;
pub mod sampler;
pub mod seed;
pub mod store_io;

pub use benchgen::{generate, generate_in_memory, nearest_mean_oracle, BenchSpec};
pub use classifier::{loss_and_grad, train, Gradient, LinearClassifier, TrainConfig};
pub use error::{Error, Result};
pub use features::{
    load_manifest, read_csv_features, read_feature_file, write_feature_file, Dataset, DatasetManifest,
    FeatureSet,
};
pub use normality::{principal_component_report, NormalityReport};
pub use protocol::{
    compute_ifm, compute_sad, evaluate, joint_oracle, replay_size_sweep, run_dfcil, run_fscil,
    FeatureSource, MetricsRecord, RunConfig, RunReport, RunSettings, SessionPlan,
};
pub use prototype::{
    fit_prototype, mahalanobis, svd_reduce, ClassPrototype, CovariancePath, PrototypeStore, ProtoConfig,
};
pub use sampler::{
    filter_by_classifier, filter_by_mahalanobis, sample_gaussian, synthetic_augment, synthetic_replay,
    Provenance, SamplerConfig, SyntheticBatch,
};
