use std::fs;
use std::path::Path;

use crate::experiment::{BenchError, ExperimentReport};
use crate::plot;

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String, BenchError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn runs_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.runs {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    pub fn summary_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.summary {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is utf-8"))
    }

    /// Writes `report.json`, `runs.csv`, `summary.csv` and, when the sweep
    /// has more than one budget or noise level, SVG plots into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<Vec<String>, BenchError> {
        fs::create_dir_all(dir)?;
        let mut files = vec![
            ("report.json".to_string(), self.to_json()?),
            ("runs.csv".to_string(), self.runs_csv()?),
            ("summary.csv".to_string(), self.summary_csv()?),
        ];
        if self.spec.budgets.len() > 1 {
            files.push(("f1_vs_budget.svg".into(), plot::f1_vs_budget(self)));
        }
        if self.spec.fn_rates.len() > 1 {
            files.push(("f1_vs_noise.svg".into(), plot::f1_vs_noise(self)));
        }
        let mut written = Vec::new();
        for (name, body) in files {
            fs::write(dir.join(&name), body)?;
            written.push(name);
        }
        Ok(written)
    }
}
