use std::io;
use std::path::{Path, PathBuf};

/// One CSV file's worth of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable threshold, e.g. `>= 5`.
    pub bound: String,
    pub pass: bool,
}

impl Check {
    pub fn at_least(name: &str, value: f64, min: f64) -> Self {
        Check { name: name.into(), value, bound: format!(">= {min}"), pass: value >= min }
    }

    pub fn at_most(name: &str, value: f64, max: f64) -> Self {
        Check { name: name.into(), value, bound: format!("<= {max}"), pass: value <= max }
    }

    pub fn above(name: &str, value: f64, min: f64) -> Self {
        Check { name: name.into(), value, bound: format!("> {min}"), pass: value > min }
    }

    pub fn below(name: &str, value: f64, max: f64) -> Self {
        Check { name: name.into(), value, bound: format!("< {max}"), pass: value < max }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub experiment: String,
    pub seed: u64,
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
}

pub fn fmt(x: f64) -> String {
    format!("{x:.6}")
}

impl Report {
    pub fn new(experiment: &str) -> Self {
        Report { experiment: experiment.into(), ..Default::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn merge(&mut self, other: Report) {
        self.tables.extend(other.tables);
        self.checks.extend(other.checks);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new("checks", &["check", "value", "bound", "pass"]);
        for c in &self.checks {
            t.push(vec![c.name.clone(), fmt(c.value), c.bound.clone(), c.pass.to_string()]);
        }
        t
    }

    /// Writes `<experiment>_<table>.csv` for every table plus the checks.
    pub fn write_csv(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in self.tables.iter().chain(std::iter::once(&self.checks_table())) {
            let path = dir.join(format!("{}_{}.csv", self.experiment, t.name));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(&t.header)?;
            for r in &t.rows {
                w.write_record(r)?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}
