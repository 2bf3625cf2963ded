//! Media diet modeling: adapt language models to a subpopulation's news
//! diet, probe them with survey-derived cloze prompts, and relate the
//! resulting scores to survey response proportions.

pub mod analysis;
pub mod backend;
pub mod corpus;
pub mod explain;
pub mod ngram;
pub mod paraphrase;
pub mod pipeline;
pub mod probe;
pub mod survey;
pub mod synth;
