//! Pipeline plumbing for the `dpgen` command-line tool and its local
//! train/predict service.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod service;
