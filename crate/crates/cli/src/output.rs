//! CSV output with a provenance comment line.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use crate::CliError;

pub struct CsvOut {
    writer: csv::Writer<Box<dyn Write>>,
    target: String,
}

impl CsvOut {
    /// Opens `path` (stdout when `None`) and writes the comment lines and header.
    ///
    /// The first line is always `# softlif <version> config_sha256=<hash>`.
    pub fn create(path: Option<&Path>, config_hash: &str, notes: &[&str], header: &[&str]) -> Result<Self, CliError> {
        let target = path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
        let mut sink: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(
                File::create(p).map_err(|e| CliError::Io(format!("creating {target}: {e}")))?,
            )),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        let io_err = |e: io::Error| CliError::Io(format!("writing {target}: {e}"));
        writeln!(
            sink,
            "# softlif {} config_sha256={config_hash}",
            env!("CARGO_PKG_VERSION")
        )
        .map_err(io_err)?;
        for note in notes {
            writeln!(sink, "# {note}").map_err(io_err)?;
        }
        let mut out = Self {
            writer: csv::Writer::from_writer(sink),
            target,
        };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<S: AsRef<[u8]>>(&mut self, fields: &[S]) -> Result<(), CliError> {
        self.writer
            .write_record(fields)
            .and_then(|_| self.writer.flush().map_err(csv::Error::from))
            .map_err(|e| CliError::Io(format!("writing {}: {e}", self.target)))
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer
            .flush()
            .map_err(|e| CliError::Io(format!("writing {}: {e}", self.target)))
    }
}
