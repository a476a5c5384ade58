pub mod aligndp;
pub mod archive;
pub mod config;
pub mod decode;
pub mod error;
pub mod evalsuite;
pub mod matrix;
pub mod paf;
pub mod objectives;
pub mod quantizer;
pub mod rng;
pub mod seqcore;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use seqcore::{Alphabet, TokenId, TokenSequence};
