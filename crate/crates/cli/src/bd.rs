use std::path::{Path, PathBuf};

use clap::Args;
use pcgc::metrics::{bd_rate, MetricKind, RDCurve, RDPoint};

use crate::error::{CliError, Result};
use crate::records::{read_csv, SettingRow};

#[derive(Debug, Clone, Args)]
pub struct BdArgs {
    /// Per-setting CSV of the reference.
    pub reference: PathBuf,
    /// Per-setting CSV under test.
    pub test: PathBuf,
    /// Compare only this codec of the reference file.
    #[arg(long)]
    pub ref_codec: Option<String>,
    /// Compare only this codec of the test file.
    #[arg(long)]
    pub test_codec: Option<String>,
}

/// BD-rate in percent for D1 and D2 PSNR, or why it could not be computed.
#[derive(Clone, Debug)]
pub struct BdEntry {
    pub label: String,
    pub d1: std::result::Result<f64, String>,
    pub d2: std::result::Result<f64, String>,
}

#[derive(Clone, Debug)]
pub struct BdReport {
    pub entries: Vec<BdEntry>,
}

impl BdReport {
    /// Mean over the labels that produced a value.
    pub fn mean(&self, kind: MetricKind) -> Option<f64> {
        let values: Vec<f64> = self
            .entries
            .iter()
            .filter_map(|e| match kind {
                MetricKind::D1 => e.d1.as_ref().ok(),
                MetricKind::D2 => e.d2.as_ref().ok(),
            })
            .copied()
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    pub fn failures(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.d1.is_err() || e.d2.is_err())
            .count()
    }

    /// A data error when any comparison failed.
    pub fn into_result(self) -> Result<()> {
        match self.failures() {
            0 => Ok(()),
            n => Err(CliError::Data(format!(
                "{n} of {} comparisons failed",
                self.entries.len()
            ))),
        }
    }
}

fn curves(path: &Path) -> Result<Vec<(String, Vec<RDPoint>)>> {
    let rows: Vec<SettingRow> = read_csv(path)?;
    let mut out: Vec<(String, Vec<RDPoint>)> = Vec::new();
    for r in rows {
        let p = RDPoint {
            bpov: r.bpov,
            psnr_d1: r.psnr_d1,
            psnr_d2: r.psnr_d2,
        };
        match out.iter_mut().find(|(c, _)| *c == r.codec) {
            Some((_, pts)) => pts.push(p),
            None => out.push((r.codec, vec![p])),
        }
    }
    Ok(out)
}

fn compare(label: &str, reference: Option<&Vec<RDPoint>>, test: Option<&Vec<RDPoint>>) -> BdEntry {
    let both = |kind| -> std::result::Result<f64, String> {
        let r = reference.ok_or("codec missing from the reference file")?;
        let t = test.ok_or("codec missing from the test file")?;
        let r =
            RDCurve::new(format!("{label} (reference)"), r.clone()).map_err(|e| e.to_string())?;
        let t = RDCurve::new(format!("{label} (test)"), t.clone()).map_err(|e| e.to_string())?;
        bd_rate(&r, &t, kind).map_err(|e| e.to_string())
    };
    BdEntry {
        label: label.to_string(),
        d1: both(MetricKind::D1),
        d2: both(MetricKind::D2),
    }
}

/// Matches codecs by name across the two files, or compares the two
/// selected codecs. Failed comparisons are reported without stopping the
/// others.
pub fn report(args: &BdArgs) -> Result<BdReport> {
    let reference = curves(&args.reference)?;
    let test = curves(&args.test)?;
    let find = |set: &[(String, Vec<RDPoint>)], codec: &str| {
        set.iter().find(|(c, _)| c == codec).map(|(_, p)| p.clone())
    };
    let entries = match (&args.ref_codec, &args.test_codec) {
        (None, None) => reference
            .iter()
            .map(|(codec, pts)| compare(codec, Some(pts), find(&test, codec).as_ref()))
            .collect(),
        (r, t) => {
            let rc = r.as_deref().or(t.as_deref()).unwrap();
            let tc = t.as_deref().or(r.as_deref()).unwrap();
            let label = if rc == tc {
                rc.to_string()
            } else {
                format!("{tc} vs {rc}")
            };
            vec![compare(
                &label,
                find(&reference, rc).as_ref(),
                find(&test, tc).as_ref(),
            )]
        }
    };
    if entries.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no rows",
            args.reference.display()
        )));
    }
    Ok(BdReport { entries })
}

fn cell(v: &std::result::Result<f64, String>) -> String {
    match v {
        Ok(x) => format!("{x:+.2}%"),
        Err(_) => "error".into(),
    }
}

/// Computes the report and prints it as a table.
pub fn run(args: &BdArgs) -> Result<BdReport> {
    let rep = report(args)?;
    println!("{:<24} {:>12} {:>12}", "codec", "BD-rate D1", "BD-rate D2");
    for e in &rep.entries {
        println!("{:<24} {:>12} {:>12}", e.label, cell(&e.d1), cell(&e.d2));
        for err in [&e.d1, &e.d2].into_iter().filter_map(|r| r.as_ref().err()) {
            eprintln!("  {}: {err}", e.label);
        }
    }
    let mean = |k| {
        rep.mean(k)
            .map_or("n/a".to_string(), |m| format!("{m:+.2}%"))
    };
    println!(
        "{:<24} {:>12} {:>12}",
        "mean",
        mean(MetricKind::D1),
        mean(MetricKind::D2)
    );
    Ok(rep)
}
