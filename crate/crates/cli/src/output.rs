//! CSV files with a provenance header.

use std::fs;
use std::path::Path;

use mutn_core::config::Config;

use crate::Result;

/// Bumped whenever a CSV layout changes.
pub const FORMAT_VERSION: u32 = 1;

/// `#` lines: tool and format version, config hash, seed, config echo.
pub fn header(cfg: &Config) -> String {
    let mut s = format!(
        "# mutn {} format {FORMAT_VERSION}\n# config_hash {}\n# seed {}\n",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.raw("seed").unwrap_or("0")
    );
    for line in cfg.echo().lines() {
        s.push_str("# config ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

/// Writes `header(cfg)` followed by `body` (column line plus rows).
pub fn write_csv(path: &Path, cfg: &Config, body: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format!("{}{body}", header(cfg)))?;
    Ok(())
}

/// A parsed CSV: column names and string cells, header block skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Table> {
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.is_empty());
        let columns = lines
            .next()
            .ok_or_else(|| crate::Failure::Config("empty CSV".into()))?
            .split(',')
            .map(str::to_string)
            .collect();
        let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
        Ok(Table { columns, rows })
    }

    pub fn load(path: &Path) -> Result<Table> {
        Table::parse(&fs::read_to_string(path)?)
    }

    pub fn col(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| crate::Failure::Config(format!("no column `{name}`")))
    }

    /// Rows whose `key` column equals `value`.
    pub fn filter(&self, key: &str, value: &str) -> Result<Vec<&Vec<String>>> {
        let i = self.col(key)?;
        Ok(self.rows.iter().filter(|r| r[i] == value).collect())
    }

    /// Numeric cell `column` of `row`.
    pub fn num(&self, row: &[String], column: &str) -> Result<f64> {
        let i = self.col(column)?;
        row[i]
            .parse()
            .map_err(|_| crate::Failure::Config(format!("`{}` is not a number", row[i])))
    }
}
