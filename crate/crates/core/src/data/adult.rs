//! UCI Adult in its raw `adult.data` layout, recast as a four-class
//! education-level task.
//!
//! The raw file has 14 attributes and an income column, no header, and `?`
//! for missing values. Education becomes the label (grouped into Low,
//! Medium-Low, Medium-High and High), income becomes an attribute, and
//! `education-num` is dropped because it is a numeric code of the label.

use std::path::Path;

use super::{Attribute, AttributeSchema, Dataset, LoadReport, MissingPolicy};
use crate::error::{Error, Result};

pub const EDUCATION_GROUPS: [&str; 4] = ["Low", "Medium-Low", "Medium-High", "High"];

/// Raw column order of `adult.data`.
pub const RAW_COLUMNS: [&str; 15] = [
    "age",
    "workclass",
    "fnlwgt",
    "education",
    "education-num",
    "marital-status",
    "occupation",
    "relationship",
    "race",
    "sex",
    "capital-gain",
    "capital-loss",
    "hours-per-week",
    "native-country",
    "income",
];

/// Education level to group index.
pub fn education_group(level: &str) -> Option<usize> {
    Some(match level {
        "Preschool" | "1st-4th" | "5th-6th" | "7th-8th" | "9th" | "10th" | "11th" | "12th" => 0,
        "HS-grad" => 1,
        "Some-college" | "Assoc-voc" | "Assoc-acdm" => 2,
        "Bachelors" | "Masters" | "Prof-school" | "Doctorate" => 3,
        _ => return None,
    })
}

pub fn education_schema() -> AttributeSchema {
    let attributes = vec![
        Attribute::numeric("age", 17.0, 90.0),
        Attribute::categorical(
            "workclass",
            [
                "Private",
                "Self-emp-not-inc",
                "Self-emp-inc",
                "Federal-gov",
                "Local-gov",
                "State-gov",
                "Without-pay",
                "Never-worked",
            ],
        ),
        Attribute::numeric("fnlwgt", 12285.0, 1_484_705.0),
        Attribute::categorical(
            "marital-status",
            [
                "Married-civ-spouse",
                "Divorced",
                "Never-married",
                "Separated",
                "Widowed",
                "Married-spouse-absent",
                "Married-AF-spouse",
            ],
        ),
        Attribute::categorical(
            "occupation",
            [
                "Tech-support",
                "Craft-repair",
                "Other-service",
                "Sales",
                "Exec-managerial",
                "Prof-specialty",
                "Handlers-cleaners",
                "Machine-op-inspct",
                "Adm-clerical",
                "Farming-fishing",
                "Transport-moving",
                "Priv-house-serv",
                "Protective-serv",
                "Armed-Forces",
            ],
        ),
        Attribute::categorical(
            "relationship",
            ["Wife", "Own-child", "Husband", "Not-in-family", "Other-relative", "Unmarried"],
        ),
        Attribute::categorical("race", ["White", "Asian-Pac-Islander", "Amer-Indian-Eskimo", "Other", "Black"]),
        Attribute::categorical("sex", ["Female", "Male"]),
        Attribute::numeric("capital-gain", 0.0, 99999.0),
        Attribute::numeric("capital-loss", 0.0, 4356.0),
        Attribute::numeric("hours-per-week", 1.0, 99.0),
        Attribute::categorical(
            "native-country",
            [
                "United-States",
                "Cambodia",
                "England",
                "Puerto-Rico",
                "Canada",
                "Germany",
                "Outlying-US(Guam-USVI-etc)",
                "India",
                "Japan",
                "Greece",
                "South",
                "China",
                "Cuba",
                "Iran",
                "Honduras",
                "Philippines",
                "Italy",
                "Poland",
                "Jamaica",
                "Vietnam",
                "Mexico",
                "Portugal",
                "Ireland",
                "France",
                "Dominican-Republic",
                "Laos",
                "Ecuador",
                "Taiwan",
                "Haiti",
                "Columbia",
                "Hungary",
                "Guatemala",
                "Nicaragua",
                "Scotland",
                "Thailand",
                "Yugoslavia",
                "El-Salvador",
                "Trinadad&Tobago",
                "Peru",
                "Hong",
                "Holand-Netherlands",
            ],
        ),
        Attribute::categorical("income", ["<=50K", ">50K"]),
    ];
    AttributeSchema {
        attributes,
        label_values: EDUCATION_GROUPS.iter().map(|s| s.to_string()).collect(),
    }
}

/// Loads a raw Adult file (headerless, comma separated, `?` for missing).
/// Trailing periods on income (as in `adult.test`) and `|` comment lines are
/// accepted.
pub fn load_raw(path: impl AsRef<Path>, missing: MissingPolicy) -> Result<(Dataset, LoadReport)> {
    let text = std::fs::read_to_string(path)?;
    let schema = education_schema();
    let mut out = String::new();
    let header: Vec<&str> = schema.attributes.iter().map(|a| a.name.as_str()).chain(["label"]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    // Line numbers in errors refer to the raw file.
    let mut line_map = vec![0usize];
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if fields.len() != RAW_COLUMNS.len() {
            return Err(Error::Parse { line: i + 1, message: format!("expected 15 fields, found {}", fields.len()) });
        }
        let education = fields[3];
        let label = match education_group(education) {
            Some(g) => EDUCATION_GROUPS[g],
            None if education == "?" => "?",
            None => {
                return Err(Error::Parse { line: i + 1, message: format!("unknown education level `{education}`") })
            }
        };
        let income = fields[14].trim_end_matches('.');
        let row: Vec<&str> = [0, 1, 2, 5, 6, 7, 8, 9, 10, 11, 12, 13]
            .iter()
            .map(|&c| fields[c])
            .chain([income, label])
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
        line_map.push(i + 1);
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(out.as_bytes());
    super::csv_io::read_records(&mut reader, &schema, missing).map_err(|e| match e {
        Error::Parse { line, message } if line >= 2 => Error::Parse { line: line_map[line - 1], message },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn regrouped_raw_file() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "39, State-gov, 77516, Bachelors, 13, Never-married, Adm-clerical, Not-in-family, White, Male, 2174, 0, 40, United-States, <=50K").unwrap();
        writeln!(f, "50, Self-emp-not-inc, 83311, HS-grad, 9, Married-civ-spouse, Exec-managerial, Husband, Black, Male, 0, 0, 13, United-States, >50K.").unwrap();
        writeln!(f, "38, ?, 215646, 11th, 7, Divorced, ?, Not-in-family, White, Male, 0, 0, 40, United-States, <=50K").unwrap();
        let (ds, report) = load_raw(f.path(), MissingPolicy::DropRow).unwrap();
        assert_eq!(ds.schema.attributes.len(), 13);
        assert_eq!(ds.schema.num_classes(), 4);
        assert_eq!(ds.schema.label_values, EDUCATION_GROUPS);
        assert_eq!(ds.len(), 2);
        assert_eq!(report.dropped, 1);
        assert_eq!(ds.labels(), vec![3, 1]);

        let err = load_raw(f.path(), MissingPolicy::Fail).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn every_level_has_a_group() {
        for level in [
            "Preschool", "1st-4th", "5th-6th", "7th-8th", "9th", "10th", "11th", "12th", "HS-grad", "Some-college",
            "Assoc-voc", "Assoc-acdm", "Bachelors", "Masters", "Prof-school", "Doctorate",
        ] {
            assert!(education_group(level).is_some(), "{level}");
        }
        assert!(education_schema().validate().is_ok());
    }
}
