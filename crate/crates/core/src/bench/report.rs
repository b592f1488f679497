use std::collections::BTreeSet;
use std::str::FromStr;

use super::{BenchError, SummaryRow};
use crate::aggregate::Method;
use crate::dataset::{StatsSummary, WorkerAccuracyReport, WorkerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Tsv,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "tsv" => Ok(ReportFormat::Tsv),
            _ => Err(BenchError::UnknownFormat(s.to_string())),
        }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn render(&self, format: ReportFormat) -> String {
        let mut out = String::new();
        match format {
            ReportFormat::Tsv => {
                for line in std::iter::once(&self.header).chain(&self.rows) {
                    out.push_str(&line.join("\t"));
                    out.push('\n');
                }
            }
            ReportFormat::Markdown => {
                let line = |cells: &[String]| {
                    let escaped: Vec<String> = cells.iter().map(|c| c.replace('|', "\\|")).collect();
                    format!("| {} |\n", escaped.join(" | "))
                };
                out.push_str(&line(&self.header));
                let sep: Vec<String> = self.header.iter().map(|_| "---".to_string()).collect();
                out.push_str(&line(&sep));
                for r in &self.rows {
                    out.push_str(&line(r));
                }
            }
        }
        out
    }
}

fn cell(row: &SummaryRow) -> String {
    if row.trials > 1 {
        format!("{:.3} ± {:.3}", row.mean, row.std)
    } else {
        format!("{:.3}", row.mean)
    }
}

/// Accuracy grid: one row per (dataset, mix), one column per method.
pub fn emit_report(summary: &[SummaryRow], format: ReportFormat) -> Result<String, BenchError> {
    if summary.is_empty() {
        return Err(BenchError::Config("nothing to report: summary is empty".into()));
    }
    let mut methods: Vec<Method> = Vec::new();
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in summary {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !keys.contains(&(r.dataset.as_str(), r.mix.as_str())) {
            keys.push((r.dataset.as_str(), r.mix.as_str()));
        }
    }
    let mut header = vec!["Dataset".to_string(), "Mix".to_string()];
    header.extend(methods.iter().map(|m| m.display_name().to_string()));
    let rows = keys
        .iter()
        .map(|&(dataset, mix)| {
            let mut row = vec![dataset.to_string(), mix.to_string()];
            for m in &methods {
                let found = summary.iter().find(|r| r.dataset == dataset && r.mix == mix && r.method == *m);
                row.push(found.map(cell).unwrap_or_else(|| "-".to_string()));
            }
            row
        })
        .collect();
    Ok(Table { header, rows }.render(format))
}

/// Dataset size table: |B|, |A|, |Y|, K and average labels per instance and per worker.
pub fn emit_stats_report(stats: &[(String, StatsSummary)], format: ReportFormat) -> String {
    let header = ["Dataset", "|B|", "|A|", "|Y|", "K", "|Y_*j|_avg", "|Y_i*|_avg"].map(String::from).to_vec();
    let rows = stats
        .iter()
        .map(|(name, s)| {
            vec![
                name.clone(),
                s.instances.to_string(),
                s.workers.to_string(),
                s.records.to_string(),
                s.classes_display(),
                format!("{:.2}", s.avg_labels_per_instance),
                format!("{:.2}", s.avg_labels_per_worker),
            ]
        })
        .collect();
    Table { header, rows }.render(format)
}

/// Individual-worker accuracy table: crowd min/max/mean/median, then one
/// column per LLM worker.
pub fn emit_worker_report(reports: &[(String, WorkerAccuracyReport)], format: ReportFormat) -> String {
    let llm: BTreeSet<&str> = reports
        .iter()
        .flat_map(|(_, r)| r.workers.values().filter(|w| w.kind == WorkerKind::Llm).map(|w| w.worker_id.as_str()))
        .collect();
    let mut header = ["Dataset", "Min", "Max", "Mean", "Median"].map(String::from).to_vec();
    header.extend(llm.iter().map(|s| s.to_string()));
    let rows = reports
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone()];
            match &r.crowd_summary {
                Some(s) => {
                    for v in [s.min, s.max, s.mean, s.median] {
                        row.push(format!("{v:.3}"));
                    }
                }
                None => row.extend(std::iter::repeat_n("-".to_string(), 4)),
            }
            for id in &llm {
                row.push(r.workers.get(*id).map_or("-".to_string(), |w| format!("{:.3}", w.accuracy)));
            }
            row
        })
        .collect();
    Table { header, rows }.render(format)
}
