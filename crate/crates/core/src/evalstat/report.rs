//! Metric tables and the strategy comparison suite.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{anova_oneway, box_cox, hedges_g, holm, kruskal_wallis, levene, mann_whitney, welch_t, TestResult};
use crate::error::{Error, Result};

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub strategy: String,
    pub material: String,
    pub geometry: String,
    pub completion_time: f64,
    pub path_dev: f64,
    pub avg_force: f64,
    pub mrv: f64,
    pub dtw: f64,
    pub seed: u64,
    pub fault: bool,
    pub no_contact: bool,
}

pub const METRICS: [&str; 5] = ["completion_time", "path_dev", "avg_force", "mrv", "dtw"];

impl MetricsRow {
    pub fn metric(&self, name: &str) -> Option<f64> {
        Some(match name {
            "completion_time" => self.completion_time,
            "path_dev" => self.path_dev,
            "avg_force" => self.avg_force,
            "mrv" => self.mrv,
            "dtw" => self.dtw,
            _ => return None,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::trajdata::io::csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| crate::trajdata::io::csv_error(path, e))?;
    }
    if rows.is_empty() {
        w.write_record([
            "strategy", "material", "geometry", "completion_time", "path_dev", "avg_force", "mrv", "dtw", "seed", "fault", "no_contact",
        ])
        .map_err(|e| crate::trajdata::io::csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    crate::io::require(path, "run the evaluate stage first")?;
    let mut r = csv::Reader::from_path(path).map_err(|e| crate::trajdata::io::csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<MetricsRow>, _>>()
        .map_err(|e| crate::trajdata::io::csv_error(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Transform {
    None,
    BoxCox { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEffect {
    pub a: String,
    pub b: String,
    /// Hedges' g of `a` relative to `b` on the untransformed metric.
    pub hedges_g: Option<f64>,
    pub mean_diff: f64,
    pub method: String,
    pub p_raw: f64,
    pub p_holm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub metric: String,
    pub test: String,
    pub statistic: f64,
    pub p_value: f64,
    pub transform: Transform,
    pub levene_p: Option<f64>,
    pub pairs: Vec<PairEffect>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub strategy: String,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub metric: String,
    pub groups: Vec<GroupSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tables: Vec<MetricTable>,
    pub statistics: Vec<StatReport>,
    pub notes: Vec<String>,
}

pub const POSTHOC_NOTE: &str =
    "post-hoc comparisons use Holm-corrected pairwise Welch t tests (after ANOVA) or Mann-Whitney U tests (after Kruskal-Wallis) in place of Tukey HSD and Dunn";

const ALPHA: f64 = 0.05;

fn summarise(name: &str, x: &[f64]) -> GroupSummary {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n.max(1) as f64;
    let std = if n > 1 {
        (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    };
    GroupSummary {
        strategy: name.to_string(),
        n,
        mean,
        std,
        median,
    }
}

/// Group rows by strategy, in first-appearance order.
pub fn groups_by_strategy(rows: &[MetricsRow], metric: &str) -> Vec<(String, Vec<f64>)> {
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in rows {
        if !map.contains_key(&r.strategy) {
            order.push(r.strategy.clone());
        }
        map.entry(r.strategy.clone()).or_default().push(r.metric(metric).expect("known metric"));
    }
    order.into_iter().map(|s| {
        let v = map.remove(&s).expect("present");
        (s, v)
    }).collect()
}

/// ANOVA when group variances look homogeneous (directly or after a
/// Box-Cox transform of the pooled data), otherwise Kruskal-Wallis; then
/// Holm-corrected pairwise tests and Hedges' g.
pub fn compare_groups(metric: &str, groups: &[(String, Vec<f64>)]) -> Result<StatReport> {
    let raw: Vec<Vec<f64>> = groups.iter().map(|(_, v)| v.clone()).collect();
    let mut notes = vec![POSTHOC_NOTE.to_string()];
    let mut transform = Transform::None;
    let mut data = raw.clone();
    let mut lev = levene(&raw).ok().map(|r| r.p_value);
    if lev.is_some_and(|p| p < ALPHA) && raw.iter().flatten().all(|&v| v > 0.0) {
        let pooled: Vec<f64> = raw.concat();
        if let Ok((_, lambda)) = box_cox(&pooled, None) {
            let t: Vec<Vec<f64>> = raw.iter().map(|g| box_cox(g, Some(lambda)).expect("positive").0).collect();
            let lt = levene(&t).ok().map(|r| r.p_value);
            if lt.is_some_and(|p| p >= ALPHA) {
                transform = Transform::BoxCox { lambda };
                data = t;
                lev = lt;
                notes.push(format!("Box-Cox transform with λ = {lambda:.4} restored homogeneity of variance"));
            }
        }
    }
    let use_anova = lev.is_some_and(|p| p >= ALPHA);
    let (test, omnibus): (&str, Result<TestResult>) = if use_anova {
        ("one-way ANOVA", anova_oneway(&data))
    } else {
        notes.push("variance homogeneity rejected or untestable; Kruskal-Wallis on untransformed data".into());
        ("Kruskal-Wallis", kruskal_wallis(&raw))
    };
    let omnibus = omnibus?;
    let data = if use_anova { data } else { raw.clone() };

    let mut pairs = Vec::new();
    let mut p_raw = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let r = if use_anova { welch_t(&data[i], &data[j]) } else { mann_whitney(&data[i], &data[j]) };
            let p = r.map(|r| r.p_value).unwrap_or(1.0);
            p_raw.push(p);
            let (a, b) = (&raw[i], &raw[j]);
            pairs.push(PairEffect {
                a: groups[i].0.clone(),
                b: groups[j].0.clone(),
                hedges_g: hedges_g(a, b).ok(),
                mean_diff: a.iter().sum::<f64>() / a.len() as f64 - b.iter().sum::<f64>() / b.len() as f64,
                method: if use_anova { "welch-t" } else { "mann-whitney" }.into(),
                p_raw: p,
                p_holm: 0.0,
            });
        }
    }
    for (pe, p) in pairs.iter_mut().zip(holm(&p_raw)) {
        pe.p_holm = p;
    }
    Ok(StatReport {
        metric: metric.to_string(),
        test: test.to_string(),
        statistic: omnibus.statistic,
        p_value: omnibus.p_value,
        transform,
        levene_p: lev,
        pairs,
        notes,
    })
}

/// Summary tables for every metric and, with two or more strategies, the
/// statistics suite.
pub fn build_report(rows: &[MetricsRow]) -> Report {
    let mut tables = Vec::new();
    let mut statistics = Vec::new();
    let mut notes = Vec::new();
    let n_strategies = groups_by_strategy(rows, "dtw").len();
    for m in METRICS {
        let groups = groups_by_strategy(rows, m);
        tables.push(MetricTable {
            metric: m.to_string(),
            groups: groups.iter().map(|(s, v)| summarise(s, v)).collect(),
        });
        if n_strategies >= 2 {
            match compare_groups(m, &groups) {
                Ok(r) => statistics.push(r),
                Err(e) => notes.push(format!("{m}: statistics skipped ({e})")),
            }
        }
    }
    if n_strategies < 2 {
        notes.push(format!(
            "only {n_strategies} strategy present; statistics suite skipped because there is nothing to compare"
        ));
    }
    Report { tables, statistics, notes }
}

pub fn render_text(report: &Report) -> String {
    let mut s = String::new();
    for t in &report.tables {
        let _ = writeln!(s, "== {} ==", t.metric);
        let _ = writeln!(s, "{:<16} {:>4} {:>12} {:>12} {:>12}", "strategy", "n", "mean", "std", "median");
        for g in &t.groups {
            let _ = writeln!(s, "{:<16} {:>4} {:>12.5} {:>12.5} {:>12.5}", g.strategy, g.n, g.mean, g.std, g.median);
        }
        if let Some(st) = report.statistics.iter().find(|r| r.metric == t.metric) {
            let tr = match st.transform {
                Transform::None => String::new(),
                Transform::BoxCox { lambda } => format!(" (Box-Cox λ={lambda:.4})"),
            };
            let _ = writeln!(s, "{}{}: statistic {:.5}, p = {:.4e}", st.test, tr, st.statistic, st.p_value);
            for p in &st.pairs {
                let g = p.hedges_g.map_or("n/a".to_string(), |g| format!("{g:.3}"));
                let _ = writeln!(
                    s,
                    "  {} vs {}: diff {:.5}, g {}, {} p = {:.4e} (Holm {:.4e})",
                    p.a, p.b, p.mean_diff, g, p.method, p.p_raw, p.p_holm
                );
            }
        }
        s.push('\n');
    }
    if !report.statistics.is_empty() {
        let _ = writeln!(s, "note: {POSTHOC_NOTE}");
    }
    for n in &report.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Per-strategy, per-metric CSV for box plots: `strategy,metric,value`.
pub fn write_plot_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut s = String::from("strategy,material,geometry,metric,value\n");
    for m in METRICS {
        for r in rows {
            let _ = writeln!(s, "{},{},{},{},{:.10e}", r.strategy, r.material, r.geometry, m, r.metric(m).expect("known metric"));
        }
    }
    crate::io::write_text(path, &s)
}
