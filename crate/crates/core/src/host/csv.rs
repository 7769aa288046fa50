//! CSV persistence for [`SampleRecord`]s.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use super::record::{format_metric, SampleRecord};
use crate::configspace::{Configuration, FIELD_NAMES, PARAM_COUNT};
use crate::protocol::SampleStatus;

pub const COLUMNS: [&str; 15] = [
    "sample_id",
    "client_id",
    "cores_c1",
    "cores_c2",
    "cores_c3",
    "freq_c1_khz",
    "freq_c2_khz",
    "freq_c3_khz",
    "gpu_freq_khz",
    "emc_freq_khz",
    "time_s",
    "power_w",
    "memory_mb",
    "status",
    "timestamp",
];

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("csv schema mismatch: missing columns [{}], unexpected columns [{}]", .missing.join(", "), .extra.join(", "))]
    Schema { missing: Vec<String>, extra: Vec<String> },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("csv error: {0}")]
    Csv(String),
}

struct Counting<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Incremental CSV writer: header on creation, one flushed row per record.
pub struct CsvSink {
    writer: csv::Writer<Counting<BufWriter<File>>>,
    path: String,
}

impl CsvSink {
    pub fn create(path: &Path) -> Result<Self, CsvError> {
        let display = path.display().to_string();
        let file = File::create(path).map_err(|source| CsvError::Io { path: display.clone(), source })?;
        let writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Counting { inner: BufWriter::new(file), bytes: 0 });
        let mut sink = Self { writer, path: display };
        sink.writer.write_record(COLUMNS).map_err(|e| sink.csv_err(e))?;
        sink.flush()?;
        Ok(sink)
    }

    fn csv_err(&self, e: csv::Error) -> CsvError {
        match e.into_kind() {
            csv::ErrorKind::Io(source) => CsvError::Io { path: self.path.clone(), source },
            other => CsvError::Csv(format!("{other:?}")),
        }
    }

    pub fn append(&mut self, record: &SampleRecord) -> Result<(), CsvError> {
        let row = row_of(record);
        self.writer.write_record(&row).map_err(|e| self.csv_err(e))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<(), CsvError> {
        self.writer.flush().map_err(|source| CsvError::Io { path: self.path.clone(), source })
    }

    pub fn bytes_written(&self) -> u64 {
        self.writer.get_ref().bytes
    }
}

fn opt_metric(v: Option<f64>) -> String {
    v.map(format_metric).unwrap_or_default()
}

fn row_of(r: &SampleRecord) -> Vec<String> {
    let mut row = Vec::with_capacity(COLUMNS.len());
    row.push(r.sample_id.clone());
    row.push(r.client_id.clone());
    row.extend(r.config.values().iter().map(u64::to_string));
    row.push(opt_metric(r.time_s));
    row.push(opt_metric(r.power_w));
    row.push(opt_metric(r.memory_mb));
    row.push(r.status.as_str().to_string());
    row.push(r.timestamp.clone());
    row
}

/// Writes `records` to `path`, returning the number of bytes written.
pub fn write_csv(records: &[SampleRecord], path: &Path) -> Result<u64, CsvError> {
    let mut sink = CsvSink::create(path)?;
    for r in records {
        sink.append(r)?;
    }
    Ok(sink.bytes_written())
}

pub fn read_csv(path: &Path) -> Result<Vec<SampleRecord>, CsvError> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|source| CsvError::Io { path: display, source })?;
    read_csv_from(file)
}

pub fn read_csv_from<R: io::Read>(reader: R) -> Result<Vec<SampleRecord>, CsvError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| CsvError::Csv(e.to_string()))?.clone();

    let missing: Vec<String> =
        COLUMNS.iter().filter(|c| !headers.iter().any(|h| h == **c)).map(|c| c.to_string()).collect();
    let extra: Vec<String> = headers.iter().filter(|h| !COLUMNS.contains(h)).map(str::to_string).collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(CsvError::Schema { missing, extra });
    }
    let pos: Vec<usize> =
        COLUMNS.iter().map(|c| headers.iter().position(|h| h == *c).expect("checked above")).collect();

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CsvError::Row { line, message: e.to_string() }
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let err = |message: String| CsvError::Row { line, message };
        let cell = |i: usize| row.get(pos[i]).unwrap_or("");

        let mut values = [0u64; PARAM_COUNT];
        for (k, slot) in values.iter_mut().enumerate() {
            let text = cell(2 + k);
            *slot = text
                .parse()
                .map_err(|_| err(format!("column {}: `{text}` is not an unsigned integer", FIELD_NAMES[k])))?;
        }
        let config = Configuration::from_values(values).map_err(|e| err(e.to_string()))?;

        let metric = |i: usize| -> Result<Option<f64>, CsvError> {
            let text = cell(i);
            if text.is_empty() {
                return Ok(None);
            }
            text.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(Some)
                .ok_or_else(|| err(format!("column {}: `{text}` is not a number", COLUMNS[i])))
        };
        let status_text = cell(13);
        let status = SampleStatus::parse(status_text)
            .ok_or_else(|| err(format!("column status: unknown status `{status_text}`")))?;

        out.push(SampleRecord {
            sample_id: cell(0).to_string(),
            client_id: cell(1).to_string(),
            config,
            time_s: metric(10)?,
            power_w: metric(11)?,
            memory_mb: metric(12)?,
            status,
            timestamp: cell(14).to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::configspace::ConfigSpace;

    fn record(id: &str) -> SampleRecord {
        SampleRecord {
            sample_id: id.into(),
            client_id: "sim-0".into(),
            config: ConfigSpace::orin().max_config(),
            time_s: Some(20.0),
            power_w: Some(42.0),
            memory_mb: Some(26000.0),
            status: SampleStatus::Ok,
            timestamp: "0".into(),
        }
    }

    const HEADER: &str = "sample_id,client_id,cores_c1,cores_c2,cores_c3,freq_c1_khz,freq_c2_khz,freq_c3_khz,gpu_freq_khz,emc_freq_khz,time_s,power_w,memory_mb,status,timestamp\n";

    #[test]
    fn empty_list_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let n = write_csv(&[], &path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), HEADER);
        assert_eq!(n, HEADER.len() as u64);
        assert!(read_csv(&path).unwrap().is_empty());
    }

    #[test]
    fn all_max_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_csv(&[record("000000")], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().nth(1).unwrap(),
            "000000,sim-0,4,4,4,2200000,2200000,2200000,1300000,3200000,20.0,42.0,26000.0,ok,0"
        );
        assert_eq!(read_csv(&path).unwrap(), vec![record("000000")]);
    }

    #[test]
    fn disabled_metrics_are_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut r = record("1");
        r.memory_mb = None;
        r.power_w = None;
        write_csv(&[r.clone()], &path).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().contains(",20.0,,,ok,"));
        assert_eq!(read_csv(&path).unwrap(), vec![r]);
    }

    #[test]
    fn bad_power_cell_names_line() {
        let text = format!("{HEADER}1,a,1,0,0,115000,115000,115000,306000,204000,1.0,lots,2.0,ok,0\n");
        match read_csv_from(text.as_bytes()) {
            Err(CsvError::Row { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("power_w"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_columns() {
        let text = "sample_id,client_id,bogus\n";
        match read_csv_from(text.as_bytes()) {
            Err(CsvError::Schema { missing, extra }) => {
                assert!(missing.contains(&"power_w".to_string()));
                assert_eq!(extra, vec!["bogus".to_string()]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing-dir").join("r.csv");
        assert!(matches!(write_csv(&[], &path), Err(CsvError::Io { .. })));
    }
}
