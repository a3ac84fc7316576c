//! Minimal differentiable compute kit.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod param;
pub mod tape;
pub mod tensor;

pub use layers::{film_modulate, sinusoidal_embedding, Conv1d, FilmProj, Linear};
pub use optim::{adamw_step, ema_update, AdamWState, EmaState, LrSchedule};
pub use param::{Gradients, ParamId, ParamStore, Parameter};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
