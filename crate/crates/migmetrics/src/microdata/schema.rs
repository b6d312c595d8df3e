//! Column bindings and categorical code maps describing one microdata
//! extract.
//!
//! A schema is a JSON document. Code maps translate raw cell values
//! into the fixed categories; an empty map means the cells already
//! carry category names (`"secondary"`, `"female"`, ...).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Education, Reason, Sex, UrbanStatus};

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed schema document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("missing required binding '{0}'")]
    MissingBinding(&'static str),
    #[error("column '{0}' bound more than once")]
    DuplicateBinding(String),
    #[error("delimiter must be a single byte")]
    BadDelimiter,
    #[error("migration interval must be at least 1 year")]
    BadInterval,
}

/// Column name for each record field; unbound fields are `None`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnBindings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    pub age: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sex: Option<String>,
    pub education_level: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub years_schooling: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_minor_now: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_major_now: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_minor_prev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_major_prev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urban_now: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub urban_prev: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_years: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Raw code -> category maps for the coded fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeMaps {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub education_level: BTreeMap<String, Education>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sex: BTreeMap<String, Sex>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub urban_now: BTreeMap<String, UrbanStatus>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub urban_prev: BTreeMap<String, UrbanStatus>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reason: BTreeMap<String, Reason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// Cell values treated as missing, in addition to the empty cell.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_values: Vec<String>,
    /// Length of the migration interval in years.
    #[serde(default = "default_interval")]
    pub interval_years: u32,
    /// Duration values at this bound mean "this many years or more".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_top_code: Option<u32>,
    pub columns: ColumnBindings,
    #[serde(default)]
    pub codes: CodeMaps,
}

fn default_delimiter() -> char {
    ','
}

fn default_interval() -> u32 {
    5
}

impl Schema {
    pub fn delimiter_byte(&self) -> u8 {
        let mut buf = [0u8; 4];
        self.delimiter.encode_utf8(&mut buf);
        buf[0]
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        if self.delimiter.len_utf8() != 1 {
            return Err(SchemaError::BadDelimiter);
        }
        if self.interval_years == 0 {
            return Err(SchemaError::BadInterval);
        }
        let c = &self.columns;
        if c.age.is_empty() {
            return Err(SchemaError::MissingBinding("age"));
        }
        if c.education_level.is_empty() {
            return Err(SchemaError::MissingBinding("education_level"));
        }
        if c.region_minor_now.is_none() && c.region_major_now.is_none() {
            return Err(SchemaError::MissingBinding(
                "region_minor_now or region_major_now",
            ));
        }
        if c.region_minor_prev.is_none() && c.region_major_prev.is_none() {
            return Err(SchemaError::MissingBinding(
                "region_minor_prev or region_major_prev",
            ));
        }
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for name in self.bound_columns() {
            if seen.insert(name, ()).is_some() {
                return Err(SchemaError::DuplicateBinding(name.to_string()));
            }
        }
        Ok(())
    }

    pub fn bound_columns(&self) -> Vec<&str> {
        let c = &self.columns;
        let mut out: Vec<&str> = vec![c.age.as_str(), c.education_level.as_str()];
        for opt in [
            &c.weight,
            &c.sex,
            &c.years_schooling,
            &c.region_minor_now,
            &c.region_major_now,
            &c.region_minor_prev,
            &c.region_major_prev,
            &c.urban_now,
            &c.urban_prev,
            &c.duration_years,
            &c.reason,
        ] {
            if let Some(name) = opt {
                out.push(name.as_str());
            }
        }
        out
    }

    pub fn is_missing(&self, cell: &str) -> bool {
        cell.is_empty() || self.missing_values.iter().any(|m| m == cell)
    }
}

/// Read and validate a schema document.
pub fn load_schema(path: &Path) -> Result<Schema, SchemaError> {
    let text = std::fs::read_to_string(path)?;
    parse_schema(&text)
}

pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let schema: Schema = serde_json::from_str(text)?;
    schema.validate()?;
    Ok(schema)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "columns": {
                "age": "age",
                "education_level": "edu",
                "region_major_now": "geo1",
                "region_major_prev": "geo1_prev"
            }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_schema_defaults() {
        let s = parse_schema(&minimal()).unwrap();
        assert_eq!(s.delimiter, ',');
        assert_eq!(s.interval_years, 5);
        assert!(s.columns.weight.is_none());
        assert!(s.codes.education_level.is_empty());
    }

    #[test]
    fn missing_prev_region_rejected() {
        let bad = r#"{"columns": {"age": "age", "education_level": "edu", "region_major_now": "geo1"}}"#;
        assert!(matches!(
            parse_schema(bad),
            Err(SchemaError::MissingBinding(_))
        ));
    }

    #[test]
    fn duplicate_binding_rejected() {
        let bad = r#"{"columns": {"age": "x", "education_level": "x",
            "region_major_now": "geo1", "region_major_prev": "geo1_prev"}}"#;
        assert!(matches!(
            parse_schema(bad),
            Err(SchemaError::DuplicateBinding(_))
        ));
    }

    #[test]
    fn education_code_map_round_trips() {
        let doc = r#"{
            "columns": {
                "age": "age", "education_level": "edu",
                "region_major_now": "geo1", "region_major_prev": "geo1_prev"
            },
            "codes": {
                "education_level": {
                    "0": "lt_primary", "1": "primary", "2": "secondary",
                    "3": "tertiary", "9": "unknown"
                }
            }
        }"#;
        let schema = parse_schema(doc).unwrap();
        assert_eq!(
            schema.codes.education_level.get("2"),
            Some(&Education::Secondary)
        );
        // Serialise-then-parse identity.
        let text = serde_json::to_string_pretty(&schema).unwrap();
        let again = parse_schema(&text).unwrap();
        assert_eq!(schema, again);
    }

    #[test]
    fn malformed_document_rejected() {
        assert!(matches!(
            parse_schema("{not json"),
            Err(SchemaError::Malformed(_))
        ));
    }
}
