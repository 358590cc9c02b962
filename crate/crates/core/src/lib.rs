pub mod binary;
pub mod data;
pub mod dtm;
pub mod error;
pub mod experiment;
pub mod fisher;
pub mod laplace;
pub mod metalearner;
pub mod model_io;
pub mod multiclass;
pub mod quantile;
pub mod scenario;
pub mod seed;
pub mod selection;
pub mod selftest;
