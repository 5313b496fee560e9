//! Training driver and benchmarks behind the `slide` command.

pub mod bench;
pub mod config;
pub mod train;

use std::fs::File;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use slide_core::data::DataError;
use slide_core::net::NetError;
use slide_core::table::TableError;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Writes `# config-hash: <hash>`, then the header and rows as CSV.
pub fn write_csv(path: &Path, config_hash: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut file = File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    writeln!(file, "# config-hash: {config_hash}")?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}
