//! Column-oriented numeric data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Named columns of equal length. Categorical columns hold 1-based level ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    nrows: usize,
}

impl Dataset {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::DimensionMismatch {
                context: "column names",
                expected: columns.len(),
                found: names.len(),
            });
        }
        let nrows = columns.first().map_or(0, Vec::len);
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != nrows {
                return Err(Error::invalid(format!(
                    "column `{name}` has {} rows, expected {nrows}",
                    col.len()
                )));
            }
        }
        for (i, name) in names.iter().enumerate() {
            if names[..i].contains(name) {
                return Err(Error::invalid(format!("duplicate column `{name}`")));
            }
        }
        Ok(Self {
            names,
            columns,
            nrows,
        })
    }

    pub fn from_pairs<S: Into<String>>(pairs: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let (names, columns) = pairs.into_iter().map(|(n, c)| (n.into(), c)).unzip();
        Self::new(names, columns)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Rows in the given order; indices may repeat.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&r| c[r]).collect())
                .collect(),
            nrows: rows.len(),
        }
    }

    /// Replace or append a column.
    pub fn with_column(mut self, name: &str, values: Vec<f64>) -> Result<Self> {
        if !self.names.is_empty() && values.len() != self.nrows {
            return Err(Error::DimensionMismatch {
                context: "new column",
                expected: self.nrows,
                found: values.len(),
            });
        }
        self.nrows = values.len();
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
            }
        }
        Ok(self)
    }
}
