pub mod corpus;
pub mod embed;
pub mod vindex;
pub mod matching;
pub mod analytics;
pub mod amr;
pub mod pipeline;
pub mod synth;
