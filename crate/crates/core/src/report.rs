//! Report files: `report.json`, `report.csv`, `sweep.csv` and the
//! plain-text session table.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::protocol::{RunReport, SweepPoint};

pub fn to_json(report: &RunReport) -> Result<String> {
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| Error::parse("report", e))
}

pub fn write_json(report: &RunReport, path: &Path) -> Result<()> {
    fs::write(path, to_json(report)?).map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

/// One row per trial and session: `trial,seed,session,G,L,IFM`.
pub fn sessions_csv(report: &RunReport) -> String {
    let mut out = String::from("trial,seed,session,G,L,IFM\n");
    for (t, trial) in report.trials.iter().enumerate() {
        for s in &trial.sessions {
            let _ = writeln!(out, "{t},{},{},{:.4},{:.4},{:.4}", trial.seed, s.session_id, s.g, s.l, s.ifm);
        }
    }
    out
}

/// One row per buffer size with across-trial means and deviations.
pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("replay_per_class,mean_G,std_G,mean_IFM,std_IFM,final_G,std_final_G,SAD\n");
    for p in points {
        let a = &p.report.aggregate;
        let sad = a.sad.map(|s| format!("{:.4}", s.mean)).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{sad}",
            p.replay_per_class, a.mean_g.mean, a.mean_g.std, a.mean_ifm.mean, a.mean_ifm.std, a.final_g.mean, a.final_g.std
        );
    }
    out
}

/// Table with one column per task (G, and IFM from task 1 on) and a final
/// mean column over tasks 1..N-1, averaged across trials.
pub fn format_table(report: &RunReport) -> String {
    let a = &report.aggregate;
    let n = a.per_session.len();
    let mut header = vec!["Metric".to_string()];
    header.extend((0..n).map(|i| format!("Task {i}")));
    if n > 1 {
        header.push(format!("Mean (Task 1→{})", n - 1));
    }
    let mut g_row = vec!["G".to_string()];
    let mut ifm_row = vec!["IFM".to_string()];
    for s in &a.per_session {
        g_row.push(format!("{:.1}", s.g.mean));
        ifm_row.push(if s.session_id == 0 {
            "-".into()
        } else {
            format!("{:.1}", s.ifm.mean)
        });
    }
    if n > 1 {
        g_row.push(format!("{:.1}", a.mean_g.mean));
        ifm_row.push(format!("{:.1}", a.mean_ifm.mean));
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|j| header[j].chars().count().max(g_row[j].len()).max(ifm_row[j].len()))
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} run, {} trial(s){}",
        match report.mode {
            crate::protocol::RunMode::Dfcil => "DFCIL",
            crate::protocol::RunMode::Fscil => "FSCIL",
        },
        report.trials.len(),
        report
            .shots
            .map(|k| format!(", {k}-shot{}", if report.augment { " + augmentation" } else { "" }))
            .unwrap_or_default()
    );
    let _ = writeln!(out, "{}", line(&header));
    let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
    let _ = writeln!(out, "{}", line(&g_row));
    let _ = writeln!(out, "{}", line(&ifm_row));
    if let Some(sad) = a.sad {
        let _ = writeln!(out, "SAD {:.1} ± {:.1}", sad.mean, sad.std);
    }
    out
}
