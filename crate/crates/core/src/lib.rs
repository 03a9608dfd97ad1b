pub mod cli;
pub mod corpus;
pub mod embedding;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod sig_retrieval;
pub mod snip_retrieval;
pub mod validation;
#[doc(hidden)]
pub mod testing;
