pub mod clustering;
pub mod error;
pub mod evaluation;
pub mod multitask;
pub mod nutrient_data;
pub mod pipeline;
pub mod report;
pub mod similarity;
pub mod synthkit;

pub use error::{Error, Result};
