pub mod bench;
pub mod build_db;
pub mod flutter;
pub mod optimize;
pub mod query;
