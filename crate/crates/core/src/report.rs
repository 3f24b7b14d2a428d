//! Result tables rendered as Markdown, CSV and LaTeX.

use std::fs;
use std::path::Path;

use crate::metrics::{format_delta, format_percent, MetricsReport};
use crate::perturb::{IntensityLevel, PerturbationKind};
use crate::Fraction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub caption: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// Index of the first summary row (drawn below a rule), if any.
    pub footer_from: Option<usize>,
}

fn cells<S: AsRef<str>>(xs: &[S]) -> Vec<String> {
    xs.iter().map(|s| s.as_ref().to_string()).collect()
}

impl Table {
    pub fn new(caption: impl Into<String>, header: &[&str]) -> Self {
        Self {
            caption: caption.into(),
            header: cells(header),
            rows: Vec::new(),
            footer_from: None,
        }
    }

    pub fn push<S: AsRef<str>>(&mut self, row: &[S]) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(cells(row));
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
        out.push_str(&line(&self.header));
        let align: Vec<String> = (0..self.header.len())
            .map(|i| if i == 0 { "---".into() } else { "---:".into() })
            .collect();
        out.push_str(&line(&align));
        for row in &self.rows {
            out.push_str(&line(row));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    /// One `a & b & c \\` line per row.
    pub fn latex_row(row: &[String]) -> String {
        let escaped: Vec<String> = row.iter().map(|c| latex_escape(c)).collect();
        format!("{} \\\\", escaped.join(" & "))
    }

    pub fn to_latex(&self) -> String {
        let cols = format!("l{}", "c".repeat(self.header.len() - 1));
        let header: Vec<String> = self.header.iter().map(|h| format!("\\textbf{{{}}}", latex_escape(h))).collect();
        let mut out = format!(
            "\\begin{{table}}[!htbp]\n\\centering\n\\caption{{{}}}\n\\begin{{tabular}}{{{cols}}}\n\\toprule\n{} \\\\\n\\midrule\n",
            latex_escape(&self.caption),
            header.join(" & ")
        );
        for (i, row) in self.rows.iter().enumerate() {
            if Some(i) == self.footer_from {
                out.push_str("\\midrule\n");
            }
            out.push_str(&Self::latex_row(row));
            out.push('\n');
        }
        out.push_str("\\bottomrule\n\\end{tabular}\n\\end{table}\n");
        out
    }

    /// Writes `<dir>/<stem>.md`, `.csv` and `.tex`.
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        fs::write(dir.join(format!("{stem}.md")), self.to_markdown())?;
        fs::write(dir.join(format!("{stem}.csv")), self.to_csv())?;
        fs::write(dir.join(format!("{stem}.tex")), self.to_latex())
    }
}

fn latex_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' | '%' | '$' | '#' | '_' | '{' | '}' => {
                out.push('\\');
                out.push(c);
            }
            '~' => out.push_str("\\textasciitilde{}"),
            '^' => out.push_str("\\textasciicircum{}"),
            '\\' => out.push_str("\\textbackslash{}"),
            _ => out.push(c),
        }
    }
    out
}

/// One model's headline numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadlineRow {
    pub label: String,
    pub ca: Fraction,
    pub prs: Fraction,
    pub vdc: Fraction,
}

impl HeadlineRow {
    pub fn from_report(label: impl Into<String>, r: &MetricsReport) -> Self {
        Self {
            label: label.into(),
            ca: r.ca,
            prs: r.prs,
            vdc: r.vdc,
        }
    }

    fn cells(&self) -> [String; 4] {
        [
            self.label.clone(),
            format_percent(self.ca),
            format_percent(self.prs),
            format_percent(self.vdc),
        ]
    }
}

/// Model comparison: CA, PRS and VDC per model.
pub fn performance_table(rows: &[HeadlineRow]) -> Table {
    let mut t = Table::new(
        "Performance comparison. All values are percentages (%).",
        &["Model Name", "CA", "PRS", "VDC"],
    );
    for r in rows {
        t.push(&r.cells());
    }
    t
}

/// Ablation: one row per resolution variant.
pub fn ablation_table(model: &str, variants: &[MetricsReport; 3]) -> Table {
    let mut t = Table::new(
        format!("Ablation of the resolution components on {model}. All values are percentages (%)."),
        &["Variant", "CA", "PRS", "VDC"],
    );
    let labels = [
        format!("{model} (Single View)"),
        "Multi-View Majority Vote".to_string(),
        "Full AMCV".to_string(),
    ];
    for (label, r) in labels.iter().zip(variants) {
        t.push(&HeadlineRow::from_report(label, r).cells());
    }
    t
}

/// PRS per perturbation kind, one column per log, with an average row.
/// The average is the unweighted mean of the kind rows shown.
pub fn kind_table(columns: &[(String, &MetricsReport)]) -> Table {
    let header: Vec<String> = std::iter::once("Perturbation Type".to_string())
        .chain(columns.iter().map(|(l, _)| format!("{l} PRS")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("Perturbation Robustness Score (PRS) by perturbation type. Values are percentages (%).", &header);
    let kinds: Vec<PerturbationKind> = PerturbationKind::ALL
        .into_iter()
        .filter(|k| columns.iter().any(|(_, r)| r.by_kind.contains_key(k)))
        .collect();
    for k in &kinds {
        let mut row = vec![k.title().to_string()];
        row.extend(columns.iter().map(|(_, r)| r.by_kind.get(k).map_or("-".into(), |p| format_percent(*p))));
        t.push(&row);
    }
    t.footer_from = Some(t.rows.len());
    let mut avg = vec!["Average PRS".to_string()];
    for (_, r) in columns {
        let vals: Vec<Fraction> = r.by_kind.values().copied().collect();
        avg.push(if vals.is_empty() {
            "-".into()
        } else {
            format_percent(vals.iter().sum::<Fraction>() / vals.len() as i64)
        });
    }
    t.push(&avg);
    t
}

/// PRS per intensity level, one column per log; with two or more logs an
/// Improvement column gives last minus first.
pub fn intensity_table(columns: &[(String, &MetricsReport)]) -> Table {
    let improvement = columns.len() >= 2;
    let mut header: Vec<String> = std::iter::once("Intensity Level".to_string())
        .chain(columns.iter().map(|(l, _)| format!("{l} PRS")))
        .collect();
    if improvement {
        header.push("Improvement".into());
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut t = Table::new("Perturbation Robustness Score (PRS) by perturbation intensity. Values are percentages (%).", &header);
    for lvl in IntensityLevel::ALL {
        let vals: Vec<Option<Fraction>> = columns.iter().map(|(_, r)| r.by_intensity.get(&lvl).copied()).collect();
        if vals.iter().all(Option::is_none) {
            continue;
        }
        let mut row = vec![lvl.title().to_string()];
        row.extend(vals.iter().map(|v| v.map_or("-".into(), format_percent)));
        if improvement {
            row.push(match (vals[0], vals[vals.len() - 1]) {
                (Some(a), Some(b)) => format_delta(b - a),
                _ => "-".into(),
            });
        }
        t.push(&row);
    }
    t
}

fn calls_cell(r: &MetricsReport) -> String {
    let e = &r.efficiency;
    if e.min_calls == e.max_calls {
        e.min_calls.to_string()
    } else {
        format!("{} -- {}", e.min_calls, e.max_calls)
    }
}

fn one_decimal(x: Fraction) -> String {
    // Same half-up rule as percentages; the value is not scaled.
    format_percent(x)
}

/// Cost per question: mean wall time, call range and mean calls.
pub fn efficiency_table(rows: &[(String, &MetricsReport)]) -> Table {
    let mut t = Table::new(
        "Efficiency comparison.",
        &["Model", "Time per Question (seconds)", "API Calls per Question", "Mean API Calls"],
    );
    for (label, r) in rows {
        t.push(&[
            label.clone(),
            one_decimal(r.efficiency.mean_wall_s),
            calls_cell(r),
            one_decimal(r.efficiency.mean_calls),
        ]);
    }
    t
}
