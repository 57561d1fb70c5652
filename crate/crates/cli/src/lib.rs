pub mod cli;
pub mod jobs;
pub mod server;
pub mod workspace;
