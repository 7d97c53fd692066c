//! CSV input and output.

use std::io::{Read, Write};

use conboost::Dataset;

/// Read a numeric CSV with a header row. An empty input gives an empty dataset.
pub fn read_dataset<R: Read>(input: R) -> Result<Dataset, String> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.iter().any(String::is_empty) && !(names.len() == 1 && names[0].is_empty()) {
        return Err("empty column name in header".into());
    }
    let names: Vec<String> = names.into_iter().filter(|n| !n.is_empty()).collect();
    let mut columns = vec![Vec::new(); names.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| e.to_string())?;
        for ((col, name), field) in columns.iter_mut().zip(&names).zip(record.iter()) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| format!("row {row}, column `{name}`: cannot parse `{field}` as a number"))?;
            col.push(v);
        }
    }
    Dataset::new(names, columns).map_err(|e| e.to_string())
}

pub fn write_table<W: Write>(out: W, header: &[String], rows: &[Vec<f64>]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.to_string()))?;
    }
    w.flush()
}
