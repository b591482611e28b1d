//! CSV ingestion and export. The header row names columns, one column is the
//! response, and a missing cell is the literal token `NA` or an empty field.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::patterns::{group_by_pattern, MissingDataset, RawRow};

/// A dataset read from CSV together with its covariate column names.
#[derive(Debug, Clone)]
pub struct CsvDataset {
    pub dataset: MissingDataset,
    pub covariate_names: Vec<String>,
    pub response_name: String,
}

fn parse_cell(raw: &str, row: usize, col: &str) -> Result<Option<f64>> {
    let trimmed = raw.trim();
    if trimmed.is_empty() || trimmed == "NA" {
        return Ok(None);
    }
    trimmed
        .parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("row {row}, column {col}: cannot parse {trimmed:?}")))
}

/// Reads a dataset from CSV text. Rows with a missing response and fully
/// observed covariates become the unlabelled block.
pub fn read_csv(reader: impl Read, response: &str) -> Result<CsvDataset> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = csv_reader.headers()?.clone();
    let response_idx = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::Parse(format!("no column named {response:?} in the header")))?;
    let covariate_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != response_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut rows: Vec<RawRow> = Vec::new();
    for (ridx, record) in csv_reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {ridx} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let mut cov = Vec::with_capacity(covariate_names.len());
        let mut resp = None;
        for (cidx, field) in record.iter().enumerate() {
            let value = parse_cell(field, ridx, &headers[cidx])?;
            if cidx == response_idx {
                resp = value;
            } else {
                cov.push(value);
            }
        }
        rows.push((cov, resp));
    }

    let dataset = group_by_pattern(&rows)?;
    Ok(CsvDataset {
        dataset,
        covariate_names,
        response_name: response.to_string(),
    })
}

/// Reads a dataset from a CSV file.
pub fn read_csv_file(path: impl AsRef<Path>, response: &str) -> Result<CsvDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(file), response)
}

/// Writes the grouped data back out as one CSV, unlabelled rows last. The
/// output round-trips through [`read_csv`] to an identical dataset.
pub fn write_grouped_csv(
    writer: impl Write,
    data: &CsvDataset,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let p = data.dataset.p();
    let mut header: Vec<&str> = data.covariate_names.iter().map(|s| s.as_str()).collect();
    header.push(&data.response_name);
    w.write_record(&header)?;

    let mut record: Vec<String> = vec![String::new(); p + 1];
    for g in data.dataset.groups() {
        for r in 0..g.n() {
            for cell in record.iter_mut() {
                cell.clear();
                cell.push_str("NA");
            }
            for (c, &j) in g.pattern().observed().iter().enumerate() {
                record[j] = g.x()[(r, c)].to_string();
            }
            record[p] = g.y()[r].to_string();
            w.write_record(&record)?;
        }
    }
    let u = data.dataset.unlabelled();
    for r in 0..u.nrows() {
        for j in 0..p {
            record[j] = u[(r, j)].to_string();
        }
        record[p] = "NA".to_string();
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Centers every covariate column at the mean of its observed entries,
/// pooling labelled and unlabelled rows. Returns the centered dataset and the
/// subtracted means. Off by default in the CLI; the estimators treat second
/// moments as the covariance.
pub fn center_columns(dataset: &MissingDataset) -> Result<(MissingDataset, DVector<f64>)> {
    let p = dataset.p();
    let mut sums = vec![0.0; p];
    let mut counts = vec![0usize; p];
    for g in dataset.groups() {
        for (c, &j) in g.pattern().observed().iter().enumerate() {
            for r in 0..g.n() {
                sums[j] += g.x()[(r, c)];
            }
            counts[j] += g.n();
        }
    }
    let u = dataset.unlabelled();
    for r in 0..u.nrows() {
        for j in 0..p {
            sums[j] += u[(r, j)];
            counts[j] += 1;
        }
    }
    let means = DVector::from_fn(p, |j, _| sums[j] / counts[j] as f64);

    let groups = dataset
        .groups()
        .iter()
        .map(|g| {
            let x = DMatrix::from_fn(g.n(), g.pattern().len(), |r, c| {
                g.x()[(r, c)] - means[g.pattern().observed()[c]]
            });
            crate::patterns::LabelledGroup::new(g.pattern().clone(), x, g.y().clone())
        })
        .collect::<Result<Vec<_>>>()?;
    let unlabelled = DMatrix::from_fn(u.nrows(), p, |r, j| u[(r, j)] - means[j]);
    Ok((
        MissingDataset::new(groups, unlabelled, p)?,
        means,
    ))
}

/// Writes a vector as `index,value` CSV rows with a header.
pub fn write_vector_csv(writer: impl Write, name: &str, v: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", name])?;
    for (i, value) in v.iter().enumerate() {
        w.write_record([i.to_string(), value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes only the nonzero entries of a vector as `index,value` rows.
pub fn write_sparse_vector_csv(writer: impl Write, v: &DVector<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["index", "value"])?;
    for (i, value) in v.iter().enumerate() {
        if *value != 0.0 {
            w.write_record([i.to_string(), value.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a square matrix as `row,col,value` triples.
pub fn write_matrix_csv(writer: impl Write, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "col", "value"])?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            w.write_record([i.to_string(), j.to_string(), m[(i, j)].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a square matrix from `row,col,value` triples.
pub fn read_matrix_csv(reader: impl Read, p: usize) -> Result<DMatrix<f64>> {
    let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut m = DMatrix::zeros(p, p);
    let mut seen = vec![false; p * p];
    for record in csv_reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(Error::Parse("matrix CSV rows must be row,col,value".into()));
        }
        let i: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad row index {:?}", &record[0])))?;
        let j: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad col index {:?}", &record[1])))?;
        let v: f64 = record[2]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("bad value {:?}", &record[2])))?;
        if i >= p || j >= p {
            return Err(Error::Parse(format!("matrix index ({i}, {j}) out of range")));
        }
        m[(i, j)] = v;
        seen[i * p + j] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Parse("matrix CSV is missing entries".into()));
    }
    Ok(m)
}
