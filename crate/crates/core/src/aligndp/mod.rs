//! Dynamic-programming alignments: DTW pairing, no-blank CTC, and
//! attention-based timing recovery.

mod ctc;
mod dtw;
pub mod timing;

pub use ctc::ctc_noblank_logprob;
pub use dtw::{dtw_pairs, DtwAlignment};
pub use timing::{
    apply_beta_prior, frame_to_token_posterior, monotone_viterbi, slice_attention,
    token_timestamps, AttentionMatrix, AttentionTensor, MonotonePath, TimedToken,
};
