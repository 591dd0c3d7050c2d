use std::collections::HashMap;
use std::path::Path;

use crate::error::{CliError, Result};

/// A rectangular CSV table held column-wise as raw text, with numeric
/// columns generated by transforms kept alongside.
#[derive(Debug, Clone, Default)]
pub struct Table {
    names: Vec<String>,
    raw: Vec<Vec<String>>,
    numeric: HashMap<String, Vec<f64>>,
    rows: usize,
}

impl Table {
    pub fn from_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let names: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::Data(format!("cannot read header row: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if names.is_empty() || names.iter().all(String::is_empty) {
            return Err(CliError::Data("empty file: no header row".into()));
        }
        let mut seen = HashMap::new();
        for (c, name) in names.iter().enumerate() {
            if let Some(prev) = seen.insert(name.clone(), c) {
                return Err(CliError::Data(format!(
                    "duplicate column '{name}' (columns {} and {})",
                    prev + 1,
                    c + 1
                )));
            }
        }
        let mut raw = vec![Vec::new(); names.len()];
        let mut rows = 0;
        for (r, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| CliError::Data(format!("row {}: {e}", r + 1)))?;
            for (c, cell) in record.iter().enumerate() {
                raw[c].push(cell.to_string());
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(CliError::Data("empty file: no data rows".into()));
        }
        Ok(Self {
            names,
            raw,
            numeric: HashMap::new(),
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| CliError::Data(format!("cannot open '{}': {e}", path.display())))?;
        Self::from_reader(file)
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn has(&self, name: &str) -> bool {
        self.numeric.contains_key(name) || self.names.iter().any(|n| n == name)
    }

    fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Data(format!("missing column '{name}'")))
    }

    /// Column parsed as finite reals. Errors name the 1-based data row.
    pub fn numeric(&self, name: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.numeric.get(name) {
            return Ok(v.clone());
        }
        let c = self.column_index(name)?;
        self.raw[c]
            .iter()
            .enumerate()
            .map(|(r, cell)| match cell.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(CliError::Data(format!(
                    "row {}, column '{name}': '{cell}' is not a finite number",
                    r + 1
                ))),
            })
            .collect()
    }

    /// Column as category codes numbered by first appearance. Labels are
    /// compared verbatim.
    pub fn categorical(&self, name: &str) -> Result<Vec<i64>> {
        let labels: Vec<String> = match self.numeric.get(name) {
            Some(v) => v.iter().map(|x| x.to_bits().to_string()).collect(),
            None => self.raw[self.column_index(name)?].clone(),
        };
        let mut codes = HashMap::new();
        Ok(labels
            .iter()
            .map(|l| {
                let next = codes.len() as i64;
                *codes.entry(l.as_str()).or_insert(next)
            })
            .collect())
    }

    /// Adds or replaces a numeric column.
    pub fn set_numeric(&mut self, name: &str, values: Vec<f64>) {
        debug_assert_eq!(values.len(), self.rows);
        self.numeric.insert(name.to_string(), values);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_file() {
        let t = Table::from_reader("y,x,cluster\n1,2,a\n3,4,b\n5,6,a\n".as_bytes()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.numeric("x").unwrap(), [2.0, 4.0, 6.0]);
        assert_eq!(t.categorical("cluster").unwrap(), [0, 1, 0]);
    }

    #[test]
    fn errors_carry_locations() {
        let mut text = String::from("y,x\n");
        for r in 1..=8 {
            text.push_str(&format!("{r},{}\n", if r == 7 { "abc" } else { "1.5" }));
        }
        let t = Table::from_reader(text.as_bytes()).unwrap();
        let err = t.numeric("x").unwrap_err().to_string();
        assert!(err.contains("row 7") && err.contains("'x'"), "{err}");
        assert!(t
            .numeric("z")
            .unwrap_err()
            .to_string()
            .contains("missing column 'z'"));
        assert!(Table::from_reader("".as_bytes()).is_err());
        assert!(Table::from_reader("y,x\n".as_bytes())
            .unwrap_err()
            .to_string()
            .contains("no data rows"));
        assert!(Table::from_reader("y,y\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn ragged_rows_are_rejected() {
        let err = Table::from_reader("y,x\n1,2\n3\n".as_bytes())
            .unwrap_err()
            .to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}
