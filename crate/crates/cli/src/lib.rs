//! Scenario runner, verification suites and example gallery.

pub mod gallery;
pub mod instances;
pub mod report;
pub mod run;
pub mod scenario;
pub mod suites;
