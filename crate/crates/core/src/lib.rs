pub mod checks;
pub mod cli;
pub mod corpus;
pub mod forge;
pub mod fuzzer;
pub mod mutator;
pub mod ondisk;
pub mod program;
pub mod reader;
pub mod target;
