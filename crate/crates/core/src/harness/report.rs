use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One measurement. Failed runs carry `NaN` and a non-`ok` status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub suite: String,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub solver: String,
    pub seed: u64,
    pub metric: String,
    #[serde(with = "nan_as_null")]
    pub value: f64,
    pub status: String,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_nan() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Aggregate of one `(suite, d, K, N, solver, metric)` cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub suite: String,
    pub d: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub solver: String,
    pub metric: String,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    pub iqr: Option<f64>,
    /// Number of runs per non-`ok` status.
    pub failures: BTreeMap<String, usize>,
}

/// Linear-interpolation quantile of sorted data.
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl Report {
    /// Cells in order of first appearance.
    pub fn summary(&self) -> Vec<CellSummary> {
        type Key = (String, usize, usize, usize, String, String);
        let mut order: Vec<Key> = Vec::new();
        let mut groups: BTreeMap<Key, Vec<&ReportRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.suite.clone(), r.d, r.k, r.n, r.solver.clone(), r.metric.clone());
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(r);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let mut vals: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.status == "ok")
                    .map(|r| r.value)
                    .collect();
                vals.sort_by(f64::total_cmp);
                let mut failures = BTreeMap::new();
                for r in rows.iter().filter(|r| r.status != "ok") {
                    *failures.entry(r.status.clone()).or_insert(0) += 1;
                }
                let stats = (!vals.is_empty()).then(|| {
                    let q1 = quantile(&vals, 0.25);
                    let q3 = quantile(&vals, 0.75);
                    (
                        vals.iter().sum::<f64>() / vals.len() as f64,
                        quantile(&vals, 0.5),
                        q1,
                        q3,
                    )
                });
                let (suite, d, k, n, solver, metric) = key;
                CellSummary {
                    suite,
                    d,
                    k,
                    n,
                    solver,
                    metric,
                    count: vals.len(),
                    mean: stats.map(|s| s.0),
                    median: stats.map(|s| s.1),
                    q1: stats.map(|s| s.2),
                    q3: stats.map(|s| s.3),
                    iqr: stats.map(|s| s.3 - s.2),
                    failures,
                }
            })
            .collect()
    }

    /// Looks up the summary of one cell.
    pub fn cell(&self, d: usize, k: usize, solver: &str, metric: &str) -> Option<CellSummary> {
        self.summary()
            .into_iter()
            .find(|c| c.d == d && c.k == k && c.solver == solver && c.metric == metric)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(Self { rows })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.rows)?)
    }

    pub fn summary_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }

    /// Writes `report.csv` or `report.json`, plus `summary.json`, into `dir`.
    pub fn write_dir(&self, dir: &Path, json: bool) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        if json {
            std::fs::write(dir.join("report.json"), self.to_json()?)?;
        } else {
            self.write_csv(std::fs::File::create(dir.join("report.csv"))?)?;
        }
        std::fs::write(dir.join("summary.json"), self.summary_json()?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(solver: &str, value: f64, status: &str) -> ReportRow {
        ReportRow {
            suite: "s".into(),
            d: 2,
            k: 3,
            n: 10,
            solver: solver.into(),
            seed: 1,
            metric: "l2_error".into(),
            value,
            status: status.into(),
        }
    }

    #[test]
    fn summary_statistics() {
        let report = Report {
            rows: vec![
                row("a", 1.0, "ok"),
                row("a", 3.0, "ok"),
                row("a", 2.0, "ok"),
                row("a", 4.0, "ok"),
                row("a", f64::NAN, "rank-error"),
                row("b", f64::NAN, "rank-error"),
            ],
        };
        let s = report.summary();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].count, 4);
        assert_eq!(s[0].median, Some(2.5));
        assert_eq!(s[0].mean, Some(2.5));
        assert_eq!(s[0].q1, Some(1.75));
        assert_eq!(s[0].iqr, Some(1.5));
        assert_eq!(s[0].failures["rank-error"], 1);
        assert_eq!(s[1].median, None);
    }

    #[test]
    fn csv_round_trip() {
        let report = Report {
            rows: vec![row("a", 0.125, "ok"), row("b", f64::NAN, "degenerate-component")],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("suite,d,K,N,solver,seed,metric,value,status"));
        let back = Report::read_csv(&buf[..]).unwrap();
        assert_eq!(back.rows[0], report.rows[0]);
        assert!(back.rows[1].value.is_nan());
    }
}
