use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::config::ExperimentConfig;

/// Mean and standard error of one table cell across runs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellStat {
    pub mean: f64,
    pub se: f64,
}

impl CellStat {
    /// Sample standard error (n - 1 denominator); zero for a single run.
    pub fn from_samples(samples: &[f64]) -> CellStat {
        let n = samples.len();
        if n == 0 {
            return CellStat { mean: f64::NAN, se: f64::NAN };
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return CellStat { mean, se: 0.0 };
        }
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        CellStat {
            mean,
            se: (var / n as f64).sqrt(),
        }
    }
}

/// `# key: value` lines written ahead of every CSV artifact.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn for_config(cfg: &ExperimentConfig, runs: usize) -> Self {
        let mut meta = Metadata::default();
        meta.push("experiment", cfg.experiment)
            .push("config_hash", cfg.hash())
            .push("seed", cfg.seed)
            .push("runs", runs)
            .push("weighting", cfg.weighting)
            .push("boundary", cfg.boundary);
        meta
    }

    pub fn push(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn with(&self, key: &str, value: impl ToString) -> Metadata {
        let mut out = self.clone();
        out.push(key, value);
        out
    }

    fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }
}

/// Fixed-precision formatting so artifacts are stable byte for byte.
pub fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Writes a metadata header followed by a CSV table into `dir/name`.
pub fn write_table(
    dir: &Path,
    name: &str,
    meta: &Metadata,
    header: &[String],
    rows: &[Vec<String>],
) -> Result<PathBuf> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    meta.write_to(&mut out).map_err(|e| Error::io(&path, e))?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Runs a writer callback against `dir/name`, prefixed by the metadata.
pub fn write_with<F>(dir: &Path, name: &str, meta: &Metadata, body: F) -> Result<PathBuf>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = BufWriter::new(file);
    meta.write_to(&mut out).map_err(|e| Error::io(&path, e))?;
    body(&mut out)?;
    out.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentKind;

    #[test]
    fn standard_error_of_known_samples() {
        let s = CellStat::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        // sd = sqrt(5/3), se = sd / 2
        assert!((s.se - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(CellStat::from_samples(&[7.0]).se, 0.0);
    }

    #[test]
    fn table_has_header_lines_then_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::new(ExperimentKind::Exp1);
        let meta = Metadata::for_config(&cfg, 3);
        let header = vec!["a".to_string(), "b".to_string()];
        let rows = vec![vec!["1".to_string(), fmt_value(0.5)]];
        let path = write_table(dir.path(), "t.csv", &meta, &header, &rows).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# experiment: exp1");
        assert!(lines[1].starts_with("# config_hash: "));
        assert_eq!(lines[3], "# runs: 3");
        assert_eq!(lines[4], "# weighting: uniform");
        assert_eq!(lines[5], "# boundary: stay");
        assert_eq!(&lines[6..], ["a,b", "1,0.500000"]);
    }
}
