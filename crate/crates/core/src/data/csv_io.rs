use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AttributeKind, AttributeSchema, Dataset, Record, Value};
use crate::error::{Error, Result};

/// What to do with a row that has an empty or `?` field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    DropRow,
    #[default]
    Fail,
}

/// Side information gathered while loading.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    /// Numeric values clipped into their declared range.
    pub clipped: usize,
    /// Rows dropped for missing values.
    pub dropped: usize,
}

fn is_missing(field: &str) -> bool {
    field.is_empty() || field == "?"
}

/// Reads a CSV whose header is the schema's attribute names followed by
/// `label`. Numeric values outside `[min, max]` are clipped and counted.
pub fn load_csv(path: impl AsRef<Path>, schema: &AttributeSchema, missing: MissingPolicy) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    read_records(&mut reader, schema, missing)
}

pub(crate) fn read_records<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    schema: &AttributeSchema,
    missing: MissingPolicy,
) -> Result<(Dataset, LoadReport)> {
    schema.validate()?;
    let header = reader.headers()?.clone();
    let expected: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).chain(["label"]).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            message: format!("header {:?} does not match schema {:?}", header.iter().collect::<Vec<_>>(), expected),
        });
    }

    let mut report = LoadReport::default();
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| Error::Parse { line, message };
        if row.len() != expected.len() {
            return Err(parse_err(format!("expected {} fields, found {}", expected.len(), row.len())));
        }
        if row.iter().any(is_missing) {
            match missing {
                MissingPolicy::DropRow => {
                    report.dropped += 1;
                    continue;
                }
                MissingPolicy::Fail => return Err(parse_err("missing value".into())),
            }
        }
        let mut values = Vec::with_capacity(schema.attributes.len());
        for (attr, field) in schema.attributes.iter().zip(row.iter()) {
            let value = match &attr.kind {
                AttributeKind::Categorical { values } => values
                    .iter()
                    .position(|v| v == field)
                    .map(Value::Category)
                    .ok_or_else(|| parse_err(format!("unknown value `{field}` for attribute `{}`", attr.name)))?,
                AttributeKind::Numeric { min, max } => {
                    let x: f64 = field
                        .parse()
                        .map_err(|_| parse_err(format!("`{field}` is not a number for attribute `{}`", attr.name)))?;
                    if !x.is_finite() {
                        return Err(parse_err(format!("non-finite value for attribute `{}`", attr.name)));
                    }
                    if x < *min || x > *max {
                        report.clipped += 1;
                    }
                    Value::Numeric(x.clamp(*min, *max))
                }
            };
            values.push(value);
        }
        let label_field = &row[schema.attributes.len()];
        let label = schema
            .label_index(label_field)
            .ok_or_else(|| parse_err(format!("unknown label `{label_field}`")))?;
        records.push(Record { values, label });
    }
    Ok((Dataset { schema: schema.clone(), records }, report))
}

/// Writes `dataset` in the format [`load_csv`] reads.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let schema = &dataset.schema;
    let mut header: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).collect();
    header.push("label");
    writer.write_record(&header)?;
    for r in &dataset.records {
        let mut fields: Vec<String> = Vec::with_capacity(header.len());
        for (attr, v) in schema.attributes.iter().zip(&r.values) {
            fields.push(match (&attr.kind, v) {
                (AttributeKind::Categorical { values }, Value::Category(c)) => values[*c].clone(),
                (_, Value::Numeric(x)) => x.to_string(),
                (_, Value::Category(c)) => c.to_string(),
            });
        }
        fields.push(schema.label_values[r.label].clone());
        writer.write_record(&fields)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::Attribute;
    use super::*;
    use std::io::Write;

    fn schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![Attribute::categorical("colour", ["red", "dark, blue"]), Attribute::numeric("size", 0.0, 10.0)],
            vec!["small".into(), "large".into()],
        )
        .unwrap()
    }

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_lines_round_trip() {
        let f = write("colour,size,label\nred,1.5,small\n\"dark, blue\",9,large\nred,0,large\n");
        let (ds, report) = load_csv(f.path(), &schema(), MissingPolicy::Fail).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(report, LoadReport::default());
        assert_eq!(ds.records[1].values[0], Value::Category(1));

        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path()).unwrap();
        let (back, _) = load_csv(out.path(), &schema(), MissingPolicy::Fail).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn unknown_label_names_line() {
        let f = write("colour,size,label\nred,1,small\nred,2,medium\n");
        match load_csv(f.path(), &schema(), MissingPolicy::Fail) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("medium"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_category_rejected() {
        let f = write("colour,size,label\ngreen,1,small\n");
        assert!(matches!(load_csv(f.path(), &schema(), MissingPolicy::Fail), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn missing_values_policy() {
        let f = write("colour,size,label\nred,?,small\nred,3,large\n");
        assert!(load_csv(f.path(), &schema(), MissingPolicy::Fail).is_err());
        let (ds, report) = load_csv(f.path(), &schema(), MissingPolicy::DropRow).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(report.dropped, 1);
    }

    #[test]
    fn out_of_range_numeric_is_clipped() {
        let f = write("colour,size,label\nred,12,small\nred,-1,small\n");
        let (ds, report) = load_csv(f.path(), &schema(), MissingPolicy::Fail).unwrap();
        assert_eq!(report.clipped, 2);
        assert_eq!(ds.records[0].values[1], Value::Numeric(10.0));
        assert_eq!(ds.records[1].values[1], Value::Numeric(0.0));
    }

    #[test]
    fn header_mismatch_rejected() {
        let f = write("size,colour,label\n1,red,small\n");
        assert!(matches!(load_csv(f.path(), &schema(), MissingPolicy::Fail), Err(Error::Parse { line: 1, .. })));
    }
}
