//! CSV ingestion for datasets and query lists.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Dataset, Sample};
use crate::retrieval::Query;

fn parse_error(record: &csv::StringRecord, reason: impl Into<String>) -> Error {
    let line = record.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

/// Loads a dataset from CSV with header `id,identity,age,f0,...,f{D-1}`.
/// Rejects malformed numbers, inconsistent widths, and duplicate ids with
/// the offending line number.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader.headers()?.clone();
    if header.len() < 4 {
        return Err(Error::format(
            "csv header",
            format!("expected `id,identity,age,f0,...`, got {} columns", header.len()),
        ));
    }
    for (i, want) in ["id", "identity", "age"].iter().enumerate() {
        if header.get(i).map(str::trim) != Some(*want) {
            return Err(Error::format(
                "csv header",
                format!("column {} must be `{}`", i + 1, want),
            ));
        }
    }
    let dim = header.len() - 3;
    for (j, field) in header.iter().skip(3).enumerate() {
        if field.trim() != format!("f{j}") {
            return Err(Error::format(
                "csv header",
                format!("feature column {} must be `f{j}`", j + 4),
            ));
        }
    }

    let mut samples = Vec::new();
    let mut seen: HashMap<String, u64> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != dim + 3 {
            return Err(parse_error(
                &record,
                format!("expected {} fields, got {}", dim + 3, record.len()),
            ));
        }
        let id = record.get(0).unwrap_or("").trim();
        if id.is_empty() {
            return Err(parse_error(&record, "empty sample id"));
        }
        let identity: u32 = record
            .get(1)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| parse_error(&record, format!("bad identity: {e}")))?;
        let age: u16 = record
            .get(2)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|e| parse_error(&record, format!("bad age: {e}")))?;
        let mut features = Vec::with_capacity(dim);
        for j in 0..dim {
            let raw = record.get(3 + j).unwrap_or("").trim();
            let v: f64 = raw
                .parse()
                .map_err(|e| parse_error(&record, format!("bad feature f{j}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_error(&record, format!("non-finite feature f{j}")));
            }
            features.push(v);
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if let Some(prev) = seen.insert(id.to_string(), line) {
            return Err(parse_error(
                &record,
                format!("duplicate id `{id}` (first seen on line {prev})"),
            ));
        }
        samples.push(Sample::new(id, identity, age, features));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("csv file has no data rows"));
    }
    Ok(Dataset::new(samples, dim))
}

/// Writes a dataset as CSV. Feature values use the shortest representation
/// that parses back to the same 64-bit float.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    if dataset.is_empty() || dataset.dim() == 0 {
        return Err(Error::EmptyInput("cannot save an empty dataset"));
    }
    let mut out = String::from("id,identity,age");
    for j in 0..dataset.dim() {
        let _ = write!(out, ",f{j}");
    }
    out.push('\n');
    for s in dataset.samples() {
        let _ = write!(out, "{},{},{}", s.id, s.identity, s.age);
        for v in &s.features {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    std::fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Loads a query file (`identity_ref_id,age_ref_id,target_id`). Reference
/// ids resolve in `refs`, target ids in `gallery`.
pub fn load_queries(
    path: impl AsRef<Path>,
    refs: &Dataset,
    gallery: &Dataset,
) -> Result<Vec<(Query, usize)>> {
    let file = File::open(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader.headers()?.clone();
    let want = ["identity_ref_id", "age_ref_id", "target_id"];
    if header.len() != 3 || header.iter().map(str::trim).ne(want.iter().copied()) {
        return Err(Error::format(
            "query header",
            "expected `identity_ref_id,age_ref_id,target_id`".to_string(),
        ));
    }

    let mut queries = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() != 3 {
            return Err(parse_error(
                &record,
                format!("expected 3 fields, got {}", record.len()),
            ));
        }
        let identity_ref_id = record.get(0).unwrap_or("").trim();
        let age_ref_id = record.get(1).unwrap_or("").trim();
        let target_id = record.get(2).unwrap_or("").trim();
        let identity_ref = refs
            .index_of_id(identity_ref_id)
            .ok_or_else(|| Error::UnknownSampleId(identity_ref_id.to_string()))?;
        let age_ref = refs
            .index_of_id(age_ref_id)
            .ok_or_else(|| Error::UnknownSampleId(age_ref_id.to_string()))?;
        let target = gallery
            .index_of_id(target_id)
            .ok_or_else(|| Error::UnknownSampleId(target_id.to_string()))?;
        queries.push((
            Query {
                identity_ref: refs.sample(identity_ref).clone(),
                age_ref: refs.sample(age_ref).clone(),
            },
            target,
        ));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("query file has no data rows"));
    }
    Ok(queries)
}
