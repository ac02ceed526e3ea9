pub mod chart;
pub mod config;
pub mod db;
pub mod domain;
pub mod eval;
pub mod hdc;
pub mod llm;
pub mod pipeline;
pub mod prompt;
pub mod question;
pub mod sql;
pub mod sqltext;
pub mod vector;
pub mod workspace;
