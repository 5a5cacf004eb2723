//! CSV datasets: `timestamp,v1,...,vm[,y]`.

use std::io::{Read, Write};
use std::path::Path;

use softsense_core::datagen::Dataset;
use softsense_core::Series;

use crate::error::{CliError, CliResult};

/// Parse a dataset; the `y` column is optional. Timestamps must strictly increase.
pub fn read_csv<R: Read>(reader: R) -> CliResult<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::data(format!("line 1: {e}")))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names.first() != Some(&"timestamp") {
        return Err(CliError::data("line 1: first column must be `timestamp`"));
    }
    let has_y = names.last() == Some(&"y");
    let vars = names.len() - 1 - usize::from(has_y);
    if vars == 0 {
        return Err(CliError::data("line 1: no input columns"));
    }
    for (i, name) in names[1..=vars].iter().enumerate() {
        if *name != format!("v{}", i + 1) {
            return Err(CliError::data(format!("line 1: expected column `v{}`, found `{name}`", i + 1)));
        }
    }

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| CliError::data(format!("malformed CSV: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != names.len() {
            return Err(CliError::data(format!("line {line}: expected {} fields, found {}", names.len(), record.len())));
        }
        let mut fields = record.iter().enumerate().map(|(col, f)| {
            f.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::data(format!("line {line}: column `{}` is not a finite number: `{f}`", names[col])))
        });
        let t = fields.next().unwrap()?;
        if let Some(&prev) = timestamps.last() {
            if t <= prev {
                return Err(CliError::data(format!("line {line}: timestamp {t} does not increase (previous {prev})")));
            }
        }
        timestamps.push(t);
        for _ in 0..vars {
            values.push(fields.next().unwrap()?);
        }
        if has_y {
            labels.push(fields.next().unwrap()?);
        }
    }
    if timestamps.is_empty() {
        return Err(CliError::data("no data rows"));
    }
    let series = Series::new(values, vars, has_y.then_some(labels))?;
    Ok(Dataset::new(timestamps, series)?)
}

pub fn load_csv(path: &Path) -> CliResult<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    read_csv(std::io::BufReader::new(file)).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().from_writer(writer);
    let m = data.series.vars;
    let mut header = vec!["timestamp".to_string()];
    header.extend((1..=m).map(|i| format!("v{i}")));
    if data.labels().is_some() {
        header.push("y".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for t in 0..data.len() {
        let mut row = vec![format_value(data.timestamps[t])];
        row.extend(data.series.step(t).iter().map(|&v| format_value(v)));
        if let Some(l) = data.labels() {
            row.push(format_value(l[t]));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: &Path) -> CliResult<()> {
    let mut buf = Vec::new();
    write_csv(data, &mut buf)?;
    crate::atomic_write(path, &buf)
}

/// Write rows of numbers under a header.
pub fn save_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    if !header.is_empty() {
        w.write_record(header).map_err(csv_err)?;
    }
    for row in rows {
        w.write_record(row.iter().map(|&v| format_value(v))).map_err(csv_err)?;
    }
    let buf = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    crate::atomic_write(path, &buf)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::data(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn errors_name_the_line() {
        let text = "timestamp,v1,v2,y\n0,1,2,3\n1,1,2\n";
        let err = read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
        let err = read_csv("timestamp,v1\n5,1\n5,2\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("does not increase"), "{err}");
        let err = read_csv("timestamp,v1\n5,abc\n".as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        assert!(read_csv("time,v1\n5,1\n".as_bytes()).is_err());
    }

    #[test]
    fn labels_are_optional() {
        let d = read_csv("timestamp,v1,v2\n0,1.5,2\n65,1,-2e-3\n".as_bytes()).unwrap();
        assert!(d.labels().is_none());
        assert_eq!(d.series.values, vec![1.5, 2.0, 1.0, -0.002]);
    }
}
