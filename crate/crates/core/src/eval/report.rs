use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 7] = [
    "Dist-1",
    "Dist-2",
    "Bleu-1",
    "Bleu-2",
    "Bleu-3",
    "Bleu-4",
    "Adversarial Accuracy",
];

/// Automatic evaluation results; every field lies in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub dist1: f64,
    pub dist2: f64,
    pub bleu: [f64; 4],
    pub adversarial_accuracy: f64,
}

impl MetricReport {
    /// Values in column order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.dist1,
            self.dist2,
            self.bleu[0],
            self.bleu[1],
            self.bleu[2],
            self.bleu[3],
            self.adversarial_accuracy,
        ]
    }

    pub fn from_values(v: [f64; 7]) -> Result<Self> {
        let report = MetricReport {
            dist1: v[0],
            dist2: v[1],
            bleu: [v[2], v[3], v[4], v[5]],
            adversarial_accuracy: v[6],
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in REPORT_COLUMNS.iter().zip(self.values()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(Error::Config(format!("unknown report format `{other}` (expected text|csv)"))),
        }
    }
}

/// Renders a report. Text mode shows BLEU scaled by 1e3 under `(1e-3)`
/// headers; csv mode prints raw values with six decimals.
pub fn emit_report(report: &MetricReport, format: ReportFormat) -> String {
    let values = report.values();
    match format {
        ReportFormat::Csv => {
            let row: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
            format!("{}\n{}\n", REPORT_COLUMNS.join(","), row.join(","))
        }
        ReportFormat::Text => {
            let cells: Vec<(String, String)> = REPORT_COLUMNS
                .iter()
                .zip(values)
                .map(|(name, v)| {
                    if name.starts_with("Bleu") {
                        (format!("{name} (1e-3)"), format!("{:.3}", v * 1e3))
                    } else {
                        (name.to_string(), format!("{v:.4}"))
                    }
                })
                .collect();
            let mut header = Vec::new();
            let mut row = Vec::new();
            for (h, v) in &cells {
                let w = h.len().max(v.len());
                header.push(format!("{h:>w$}"));
                row.push(format!("{v:>w$}"));
            }
            format!("{}\n{}\n", header.join("  "), row.join("  "))
        }
    }
}

/// Parses the csv form produced by [`emit_report`].
pub fn parse_csv_report(text: &str) -> Result<MetricReport> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::invalid("empty report"))?;
    let names: Vec<&str> = header.split(',').collect();
    if names != REPORT_COLUMNS {
        return Err(Error::invalid(format!("unexpected report header `{header}`")));
    }
    let row = lines.next().ok_or_else(|| Error::invalid("report has no data row"))?;
    let fields: Vec<f64> = row
        .split(',')
        .map(|f| f.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad value `{f}`: {e}"))))
        .collect::<Result<_>>()?;
    let values: [f64; 7] = fields
        .try_into()
        .map_err(|_| Error::invalid("report row must have 7 values"))?;
    MetricReport::from_values(values)
}
