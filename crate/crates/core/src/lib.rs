pub mod altmin;
pub mod baselines;
pub mod bnb;
pub mod conic;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod problem;
pub mod relax;

pub use error::{Result, SlrError};
pub use linalg::{Cell, DenseMatrix};
pub use problem::{ProblemInstance, SlrSolution};
