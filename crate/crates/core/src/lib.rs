pub mod autoencoder;
pub mod clustering;
pub mod evaluation;
pub mod signal;
pub mod synthetic;
pub mod trainer;
pub mod tensor;
