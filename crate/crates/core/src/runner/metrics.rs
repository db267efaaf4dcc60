//! Per-epoch training metrics and their CSV form.

use std::io::Write;

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 11] = [
    "epoch",
    "env_steps",
    "mean_train_return",
    "l_clust",
    "l_pred",
    "l_rl",
    "entropy",
    "silhouette",
    "occupied_clusters",
    "anchors",
    "mined_pairs",
];

/// One epoch. Optional fields are written as empty cells.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub env_steps: u64,
    /// Mean undiscounted return of episodes that ended this epoch.
    pub mean_train_return: Option<f64>,
    pub l_clust: f64,
    pub l_pred: f64,
    pub l_rl: f64,
    pub entropy: f64,
    pub silhouette: Option<f64>,
    pub occupied_clusters: usize,
    pub anchors: usize,
    pub mined_pairs: usize,
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

impl MetricsRow {
    fn fields(&self) -> [String; 11] {
        [
            self.epoch.to_string(),
            self.env_steps.to_string(),
            opt(self.mean_train_return),
            self.l_clust.to_string(),
            self.l_pred.to_string(),
            self.l_rl.to_string(),
            self.entropy.to_string(),
            opt(self.silhouette),
            self.occupied_clusters.to_string(),
            self.anchors.to_string(),
            self.mined_pairs.to_string(),
        ]
    }
}

/// Appends rows to a metrics file, flushing after each one.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Csv {
            line,
            reason: format!("{other:?}"),
        },
    }
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(sink: W) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        inner.write_record(METRICS_HEADER).map_err(csv_err)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields()).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> Result<W> {
        self.inner
            .into_inner()
            .map_err(|e| Error::Io(e.into_error()))
    }
}

/// Renders rows as a complete CSV document.
pub fn metrics_to_csv(rows: &[MetricsRow]) -> Result<String> {
    let mut w = MetricsWriter::new(Vec::new())?;
    for r in rows {
        w.push(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?).expect("csv output is ascii"))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: u64) -> Result<T> {
    let raw = &rec[i];
    raw.parse().map_err(|_| Error::Csv {
        line,
        reason: format!("column {} has invalid value `{raw}`", METRICS_HEADER[i]),
    })
}

fn optional(rec: &csv::StringRecord, i: usize, line: u64) -> Result<Option<f64>> {
    if rec[i].is_empty() {
        Ok(None)
    } else {
        field(rec, i, line).map(Some)
    }
}

/// Parses a metrics file. The header must match exactly and `env_steps`
/// must not decrease.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        None => {
            return Err(Error::Csv {
                line: 1,
                reason: "missing header".into(),
            })
        }
        Some(r) => r.map_err(csv_err)?,
    };
    if header.iter().ne(METRICS_HEADER.iter().copied()) {
        return Err(Error::Csv {
            line: 1,
            reason: format!(
                "unexpected header `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut rows: Vec<MetricsRow> = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != METRICS_HEADER.len() {
            return Err(Error::Csv {
                line,
                reason: format!(
                    "expected {} fields, found {}",
                    METRICS_HEADER.len(),
                    rec.len()
                ),
            });
        }
        let row = MetricsRow {
            epoch: field(&rec, 0, line)?,
            env_steps: field(&rec, 1, line)?,
            mean_train_return: optional(&rec, 2, line)?,
            l_clust: field(&rec, 3, line)?,
            l_pred: field(&rec, 4, line)?,
            l_rl: field(&rec, 5, line)?,
            entropy: field(&rec, 6, line)?,
            silhouette: optional(&rec, 7, line)?,
            occupied_clusters: field(&rec, 8, line)?,
            anchors: field(&rec, 9, line)?,
            mined_pairs: field(&rec, 10, line)?,
        };
        if let Some(prev) = rows.last() {
            if row.env_steps < prev.env_steps {
                return Err(Error::Csv {
                    line,
                    reason: format!(
                        "env_steps decreased from {} to {}",
                        prev.env_steps, row.env_steps
                    ),
                });
            }
        }
        rows.push(row);
    }
    Ok(rows)
}
