//! `frcr report`: the summary as an aligned text table.

use frcr::datasets::DatasetKind;
use frcr::harness::StrategyConfig;

use crate::run::{StrategySummary, Summary};

fn cell(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
        _ => "n/a".into(),
    }
}

/// One row per strategy, ACC then AMF for each dataset present.
pub fn render(summary: &Summary) -> String {
    let mut datasets: Vec<&str> = DatasetKind::ALL
        .iter()
        .map(|k| k.name())
        .filter(|n| summary.datasets.contains_key(*n))
        .collect();
    datasets.extend(
        summary
            .datasets
            .keys()
            .map(String::as_str)
            .filter(|k| !DatasetKind::ALL.iter().any(|d| d.name() == *k)),
    );

    let mut strategies: Vec<&str> = Vec::new();
    let all = summary.datasets.values().flat_map(|d| d.strategies.iter().map(|s| s.strategy.as_str()));
    let known = StrategyConfig::NAMES.iter().copied().filter(|n| all.clone().any(|s| s == *n));
    strategies.extend(known);
    for s in all {
        if !strategies.contains(&s) {
            strategies.push(s);
        }
    }

    let mut header = vec!["strategy".to_string()];
    for d in &datasets {
        header.push(format!("{d} ACC"));
        header.push(format!("{d} AMF"));
    }
    let mut table = vec![header];
    for s in &strategies {
        let mut row = vec![s.to_string()];
        for d in &datasets {
            let entry: Option<&StrategySummary> = summary.datasets[*d].strategies.iter().find(|x| x.strategy == *s);
            match entry {
                Some(e) => {
                    row.push(cell(e.acc_mean, e.acc_std));
                    row.push(cell(e.amf_mean, e.amf_std));
                }
                None => row.extend(["-".to_string(), "-".to_string()]),
            }
        }
        table.push(row);
    }

    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (text, w))| {
                let pad = w - text.chars().count();
                if c == 0 {
                    format!("{text}{}", " ".repeat(pad))
                } else {
                    format!("{}{text}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("  "));
            out.push('\n');
        }
    }
    out
}
