//! Desk-scale binaural mixture synthesis: toy speech sources, toy binaural
//! room impulse responses, ambient binaural noise, SNR scaling and
//! identity-disjoint splits.

mod brir;
mod corpus;
mod mixture;
mod noise;
mod source;

#[cfg(test)]
mod tests;

pub use brir::{convolve_sparse, ToyBrir, MAX_ITD, MAX_SUPPORT};
pub use corpus::{build_corpus, check_disjoint, CorpusSpec, PoolSizes, SplitSizes};
pub use mixture::{
    make_mixture, measure_snr, scale_noise_to_snr, EnrollmentRecipe, Identity, Mixture, MixtureRecipe, Split, Task,
    ENROLLMENT_SECONDS, MIXTURE_SECONDS, SNR_RANGE, SPEECH_POWER,
};
pub use noise::binaural_noise;
pub use source::{speech_like, Voice};
