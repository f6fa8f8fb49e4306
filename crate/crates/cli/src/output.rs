use std::path::{Path, PathBuf};

use anyhow::Context;

use flexenv_core::envelope::fmt_num;

/// Output directory whose files all start with the same provenance header.
#[derive(Debug, Clone)]
pub struct OutputDir {
    root: PathBuf,
    config_hash: String,
}

impl OutputDir {
    pub fn create(root: &Path, config_hash: String) -> anyhow::Result<Self> {
        std::fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            config_hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `body` below the header `# config_hash=<sha256> seed=<seed>`.
    pub fn write(&self, name: &str, seed: u64, body: &str) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        let text = format!("# config_hash={} seed={seed}\n{body}", self.config_hash);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        log::info!("wrote {}", path.display());
        Ok(path)
    }
}

/// One row of a long-format results table.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub seed: u64,
    pub formulation: String,
    pub scenario: String,
    pub metric: String,
    pub value: f64,
}

impl Record {
    pub fn new(seed: u64, formulation: &str, scenario: &str, metric: &str, value: f64) -> Self {
        Self {
            seed,
            formulation: formulation.to_string(),
            scenario: scenario.to_string(),
            metric: metric.to_string(),
            value,
        }
    }
}

/// `seed,formulation,scenario,metric,value`.
pub fn long_table(records: &[Record]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["seed", "formulation", "scenario", "metric", "value"])?;
    for r in records {
        w.write_record([
            r.seed.to_string(),
            r.formulation.clone(),
            r.scenario.clone(),
            r.metric.clone(),
            fmt_num(r.value),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Plain CSV with the given header and rows of numbers.
pub fn numeric_table(header: &[&str], rows: &[Vec<f64>]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| fmt_num(*v)))?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
