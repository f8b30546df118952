//! Report serialization. JSON carries the whole report; CSV carries the
//! four headline numbers at three decimals.

use infraplace_core::MetricsReport;
use serde::{Deserialize, Serialize};

use crate::DocError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl ReportFormat {
    pub fn render(self, report: &MetricsReport) -> String {
        match self {
            ReportFormat::Json => report_json(report),
            ReportFormat::Csv => report_csv(report),
        }
    }
}

pub fn report_json(report: &MetricsReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
    s.push('\n');
    s
}

pub fn parse_report_json(text: &str) -> Result<MetricsReport, DocError> {
    serde_json::from_str(text).map_err(|e| DocError::Parse(e.to_string()))
}

fn fmt3(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.3}"),
        None => "n/a".to_string(),
    }
}

fn row(r: &MetricsReport) -> [String; 4] {
    [
        fmt3(Some(r.coverage)),
        fmt3(r.occlusion),
        fmt3(Some(r.information_gain)),
        fmt3(r.score),
    ]
}

pub fn report_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["C", "O", "IG", "P_sm"]).unwrap();
    w.write_record(row(report)).unwrap();
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// One row per named report, best fused score first; reports without a
/// score go last in their given order.
pub fn compare_csv(reports: &[(String, MetricsReport)]) -> String {
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&a, &b| match (reports[a].1.score, reports[b].1.score) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["placement", "C", "O", "IG", "P_sm"]).unwrap();
    for i in order {
        let (name, r) = &reports[i];
        let [c, o, ig, p] = row(r);
        w.write_record([name.as_str(), &c, &o, &ig, &p]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}

/// One row per swept value, in the order given.
pub fn sweep_csv(param: &str, rows: &[(String, MetricsReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([param, "C", "O", "IG", "P_sm"]).unwrap();
    for (value, r) in rows {
        let [c, o, ig, p] = row(r);
        w.write_record([value.as_str(), &c, &o, &ig, &p]).unwrap();
    }
    String::from_utf8(w.into_inner().unwrap()).unwrap()
}
