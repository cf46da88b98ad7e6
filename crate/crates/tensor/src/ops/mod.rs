mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod shape;

pub use norm::{dropout_seed, Dropout, LAYERNORM_EPS};
