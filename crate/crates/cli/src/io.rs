//! Flat record files and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Float formatting with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// An in-memory CSV table with a fixed column order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().context("flushing csv")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
            .collect::<Result<Vec<Vec<String>>>>()
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))
    }
}

/// Parses a numeric CSV cell.
pub fn cell<T: std::str::FromStr>(row: &[String], col: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    row[col]
        .parse()
        .map_err(|e| anyhow::anyhow!("cell {col} `{}`: {e}", row[col]))
}

/// Output directory that refuses to clobber existing files unless forced.
#[derive(Clone, Debug)]
pub struct OutputDir {
    pub path: PathBuf,
    force: bool,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(path: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            force,
            written: Vec::new(),
        })
    }

    /// Fails before anything is written if any of `names` already exists.
    pub fn check(&self, names: &[&str]) -> Result<()> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.path.join(n);
            if p.exists() {
                bail!("{} exists; pass --force to overwrite", p.display());
            }
        }
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path.join(name);
        if !self.force && p.exists() {
            bail!("{} exists; pass --force to overwrite", p.display());
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn write_table(&mut self, name: &str, table: &Table) -> Result<()> {
        self.write(name, &table.to_bytes()?)
    }

    /// Writes `manifest_<command>.json` listing everything written so far.
    /// The output path is left out so runs into different directories agree.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let cfg = &ExperimentConfig {
            out: PathBuf::new(),
            ..cfg.clone()
        };
        let manifest = Manifest {
            command: command.to_string(),
            scenario: cfg.scenario.name().to_string(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            repetitions: cfg.repetitions,
            versions: Versions {
                pvbi: pvbi::VERSION.to_string(),
                cli: env!("CARGO_PKG_VERSION").to_string(),
            },
            files: self.written.clone(),
            config: cfg.clone(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let name = format!("manifest_{command}.json");
        self.write(&name, text.as_bytes())?;
        Ok(self.path.join(name))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub pvbi: String,
    pub cli: String,
}

/// Run manifest. Contains no timestamps so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub config_hash: String,
    pub seed: u64,
    pub repetitions: usize,
    pub versions: Versions,
    pub files: Vec<String>,
    pub config: ExperimentConfig,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
