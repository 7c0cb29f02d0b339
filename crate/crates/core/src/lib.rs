pub mod env_model;
pub mod experiments;
pub mod numeric;
pub mod potential;
pub mod quenched;
pub mod seeding;
pub mod trajectory;
pub mod walker;
