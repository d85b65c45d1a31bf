//! Classification diffusion models: a classifier over noise levels serves as
//! both a denoiser (through its input gradient) and a single-pass likelihood
//! estimator (through its logits).

pub mod cdm;
pub mod checkpoint;
pub mod classifier;
pub mod data;
pub mod error;
pub mod eval;
pub mod net;
pub mod oracle;
pub mod sample;
pub mod schedule;
pub mod train;

pub use cdm::{
    denoise_eps, log_likelihood, reverse_step, vector_field_ot, DenoisingOutput, LogLikelihood,
    SigmaChoice,
};
pub use checkpoint::{Checkpoint, CheckpointMeta, ParamSet};
pub use classifier::{CountingClassifier, NoiseClassifier, UniformClassifier};
pub use data::{DataSource, DataSpec};
pub use error::{CdmError, Result};
pub use net::{Activation, ClassifierNet, NetSpec, Params};
pub use sample::{sample, SamplerConfig, SamplerKind};
pub use schedule::{NoiseSchedule, ScheduleKind, ScheduleSpec};
pub use train::{train, LossMode, TrainConfig, TrainReport};
