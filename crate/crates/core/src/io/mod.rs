//! File formats, configuration and report serialization.
//!
//! Tables are UTF-8, tab-separated, LF-terminated, unquoted, with a header
//! row. List-valued cells use `;` as separator and `.` as decimal point.
//! Sources in other formats (columnar files, vendor raw files) are expected
//! to be converted to this layout before ingestion; [`table::TableReader`]
//! accepts any `Read` so a converter can stream straight into it.

pub mod config;
pub mod predictions;
pub mod report;
pub mod table;

pub use config::RunConfig;
pub use predictions::{JoinColumns, JoinKey, PredictionTable};
pub use report::{Manifest, Report, SCHEMA_VERSION};
pub use table::{ErrorPolicy, RecordStream, Schema, TableReader, TableRow, TableWriter};
