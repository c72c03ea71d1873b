//! Toy universe: procedural real videos and small diffusion video generators.

mod generator;
mod predictor;
mod scene;
mod schedule;

pub(crate) use generator::shuffle;
pub use generator::{
    chain_generators, noise_prediction_loss, repeat_frame, second_stage_seed, standard_variants,
    time_embedding, train_toy_generator, ChainedSample, Decoder, GeneratorTraining,
    GeneratorVariant, ToyGenerator, TrainingTrace, TIME_EMBED_DIM,
};
pub use predictor::NextFramePredictor;
pub use scene::{
    render_real_video, Background, MotionProgram, SceneObject, SceneSpec, ShapeKind, Texture,
};
pub use schedule::{diffuse_forward, posterior_mean, NoiseSchedule};
