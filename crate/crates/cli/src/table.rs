//! Plain-text views of the JSON reports. Rates are percentages.

use partfuse::metrics::{format_percent, EvalReport};
use partfuse::protocol::{CrossReport, EerResult, KfoldReport, SingleDatasetReport, YmuReport};

fn pct(rate: f64) -> String {
    format_percent(rate)
}

fn opt_pct(rate: Option<f64>) -> String {
    rate.map_or_else(|| "-".into(), pct)
}

/// Left-aligned first column, right-aligned rest.
fn render(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn threshold(t: f64) -> String {
    if t.is_infinite() {
        if t > 0.0 { "+inf".into() } else { "-inf".into() }
    } else {
        format!("{t:.6}")
    }
}

pub fn eval(r: &EvalReport) -> String {
    let mut rows = vec![
        vec!["genuine / impostor".into(), format!("{} / {}", r.counts.genuine, r.counts.impostor)],
        vec!["EER (%)".into(), pct(r.eer)],
        vec!["EER threshold".into(), threshold(r.eer_threshold)],
    ];
    if let Some(t) = r.threshold {
        rows.push(vec!["threshold".into(), threshold(t)]);
        rows.push(vec!["FAR (%)".into(), opt_pct(r.far)]);
        rows.push(vec!["FRR (%)".into(), opt_pct(r.frr)]);
        rows.push(vec!["HTER (%)".into(), opt_pct(r.hter)]);
        rows.push(vec!["accuracy (%)".into(), opt_pct(r.accuracy)]);
    }
    render(&rows)
}

fn eer_header(first: &str, result: &EerResult) -> Vec<String> {
    let mut h = vec![first.to_string()];
    h.extend(result.per_region.iter().map(|x| x.region.to_string()));
    if result.fused.is_some() {
        h.push("fused".into());
    }
    h
}

fn eer_cells(first: String, result: &EerResult) -> Vec<String> {
    let mut row = vec![first];
    row.extend(result.per_region.iter().map(|x| pct(x.report.eer)));
    if let Some(f) = &result.fused {
        row.push(pct(f.eer));
    }
    row
}

pub fn eer(reports: &[SingleDatasetReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut rows = vec![eer_header("EER (%)", &first.result)];
    for r in reports {
        rows.push(eer_cells(format!("{} {}", r.dataset_id, r.mode), &r.result));
    }
    render(&rows)
}

pub fn ymu(reports: &[YmuReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let Some(first) = r.rows.first() else { continue };
        let mut rows = vec![eer_header(&format!("{} EER (%)", r.dataset_id), &first.result)];
        for row in &r.rows {
            let label = match row.mode {
                partfuse::protocol::TrialMode::BeforeVsBefore => "B vs B",
                partfuse::protocol::TrialMode::AfterVsAfter => "A vs A",
                partfuse::protocol::TrialMode::BeforeVsAfter => "A vs B",
            };
            rows.push(eer_cells(label.into(), &row.result));
        }
        out.push_str(&render(&rows));
    }
    out
}

pub fn cross(r: &CrossReport) -> String {
    let Some(first) = r.rows.first() else {
        return String::new();
    };
    let mut header = vec!["HTER (%) source \\ target".to_string()];
    header.extend(first.cells.iter().map(|c| c.target.clone()));
    header.push("avg ± sd".into());
    header.push("max".into());
    let mut rows = vec![header];
    for row in &r.rows {
        let mut cells = vec![row.source.clone()];
        cells.extend(row.cells.iter().map(|c| opt_pct(c.report.hter)));
        cells.push(format!("{} ± {}", pct(row.mean_hter), pct(row.std_hter)));
        cells.push(pct(row.max_hter));
        rows.push(cells);
    }
    render(&rows)
}

pub fn kfold(reports: &[KfoldReport]) -> String {
    let mut rows = Vec::new();
    let folds = reports.iter().map(|r| r.folds.len()).max().unwrap_or(0);
    let mut header = vec!["accuracy (%)".to_string()];
    header.extend((1..=folds).map(|k| format!("fold {k}")));
    header.push("mean".into());
    rows.push(header);
    for r in reports {
        let mut cells = vec![r.dataset_id.clone()];
        cells.extend(r.folds.iter().map(|f| pct(f.accuracy)));
        cells.extend(std::iter::repeat_n(String::new(), folds - r.folds.len()));
        cells.push(pct(r.mean_accuracy));
        rows.push(cells);
    }
    render(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn columns_line_up() {
        let t = render(&[vec!["a".into(), "1.00".into()], vec!["long".into(), "12.50".into()]]);
        assert_eq!(t, "a      1.00\nlong  12.50\n");
    }
}
