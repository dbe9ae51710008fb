//! CSV and JSON output. Every file is written to a temporary sibling and
//! renamed into place, so readers never see a partial file.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::orchestrator::{RoundReport, RunSummary};

pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn csv_header(n_concepts: usize) -> String {
    let mut h = String::from("round");
    for c in 0..n_concepts {
        write!(h, ",acc_c{c}").unwrap();
    }
    h.push_str(",weighted_acc,ari,cluster_count,match_correct,match_total");
    h
}

fn csv_row(r: &RoundReport) -> String {
    let mut row = r.round.to_string();
    for a in &r.concept_accuracy {
        write!(row, ",{a:.6}").unwrap();
    }
    write!(row, ",{:.6}", r.weighted_accuracy).unwrap();
    match r.ari {
        Some(a) => write!(row, ",{a:.6}").unwrap(),
        None => row.push(','),
    }
    write!(row, ",{},{},{}", r.cluster_count, r.match_correct(), r.match_total()).unwrap();
    row
}

/// Per-round series. The `ari` cell is empty for the baseline.
pub fn rounds_csv(summary: &RunSummary) -> String {
    let mut out = csv_header(summary.config.n_concepts_true);
    out.push('\n');
    for r in &summary.rounds {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

/// Two runs over the same rounds, one row per round, columns prefixed
/// `cm_` and `vanilla_`.
pub fn compare_csv(cm: &RunSummary, vanilla: &RunSummary) -> Result<String> {
    if cm.rounds.len() != vanilla.rounds.len() {
        return Err(Error::shape(format!("{} rounds", cm.rounds.len()), vanilla.rounds.len()));
    }
    let k = cm.config.n_concepts_true;
    let mut out = String::from("round");
    for prefix in ["cm", "vanilla"] {
        for c in 0..k {
            write!(out, ",{prefix}_acc_c{c}").unwrap();
        }
        write!(out, ",{prefix}_weighted_acc").unwrap();
    }
    out.push_str(",cm_ari,cm_cluster_count,cm_match_correct,cm_match_total\n");
    for (a, b) in cm.rounds.iter().zip(&vanilla.rounds) {
        write!(out, "{}", a.round).unwrap();
        for r in [a, b] {
            for acc in &r.concept_accuracy {
                write!(out, ",{acc:.6}").unwrap();
            }
            write!(out, ",{:.6}", r.weighted_accuracy).unwrap();
        }
        let ari = a.ari.map(|x| format!("{x:.6}")).unwrap_or_default();
        writeln!(out, ",{ari},{},{},{}", a.cluster_count, a.match_correct(), a.match_total()).unwrap();
    }
    Ok(out)
}

pub fn summary_json(summary: &RunSummary) -> Result<String> {
    let mut s = serde_json::to_string_pretty(summary)?;
    s.push('\n');
    Ok(s)
}

/// Writes `<stem>.csv` and `<stem>.json` under `dir`; returns both paths.
pub fn write_run(dir: &Path, stem: &str, summary: &RunSummary) -> Result<(PathBuf, PathBuf)> {
    let csv = dir.join(format!("{stem}.csv"));
    let json = dir.join(format!("{stem}.json"));
    write_atomic(&csv, rounds_csv(summary).as_bytes())?;
    write_atomic(&json, summary_json(summary)?.as_bytes())?;
    Ok((csv, json))
}
