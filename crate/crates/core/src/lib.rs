//! Experiment harness for prompting chat LLMs as machine translation systems:
//! corpora, prompt construction, demonstration selection, a cached and
//! retrying chat client, output scrubbing, metrics and an experiment runner.

pub mod corpus;
pub mod llmclient;
pub mod metrics;
pub mod postedit;
pub mod prompt;
pub mod runner;
pub mod select;
