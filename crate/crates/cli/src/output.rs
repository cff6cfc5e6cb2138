//! Plot-ready CSV and JSON writers. Floats carry 17 significant digits and
//! lines end in LF on every platform.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mde_core::montecarlo::{ComparisonReport, RepRecord};
use mde_core::Trajectory;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

/// Version of the files written by this tool.
pub const FORMAT_VERSION: u32 = 1;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn paths_csv(paths: &[Trajectory]) -> String {
    let mut out = String::from("rep,t,X\n");
    for (rep, path) in paths.iter().enumerate() {
        for (k, x) in path.values().iter().enumerate() {
            let _ = writeln!(out, "{rep},{},{}", num(path.grid().time(k)), num(*x));
        }
    }
    out
}

pub fn estimates_csv(records: &[RepRecord]) -> String {
    let mut out = String::from("eps,rep,coord,theta_hat,rescaled_error,is_zero,contrast,converged\n");
    for r in records {
        for j in 0..r.theta_hat.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                num(r.eps),
                r.rep,
                j,
                num(r.theta_hat[j]),
                num(r.rescaled_error[j]),
                r.zero_pattern[j],
                num(r.contrast),
                r.converged
            );
        }
    }
    out
}

pub fn limit_csv(draws: &[Vec<f64>]) -> String {
    let mut out = String::from("draw,coord,u_star\n");
    for (i, u) in draws.iter().enumerate() {
        for (j, v) in u.iter().enumerate() {
            let _ = writeln!(out, "{i},{j},{}", num(*v));
        }
    }
    out
}

#[derive(Debug, Serialize)]
struct Tool {
    name: &'static str,
    version: &'static str,
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    format_version: u32,
    tool: Tool,
    config: &'a RunConfig,
    #[serde(flatten)]
    report: &'a ComparisonReport,
}

pub fn report_json(config: &RunConfig, report: &ComparisonReport) -> Result<String, CliError> {
    let file = ReportFile {
        format_version: FORMAT_VERSION,
        tool: Tool {
            name: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
        },
        config,
        report,
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use mde_core::build_time_grid;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 7.0, f64::MAX] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.7), "6.9999999999999996e-1");
    }

    #[test]
    fn csv_layout() {
        let g = build_time_grid(1.0, 2).unwrap();
        let p = Trajectory::from_fn(g, |t| 2.0 * t).unwrap();
        let text = paths_csv(&[p.clone(), p]);
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().nth(3).unwrap(), "0,1.0000000000000000e0,2.0000000000000000e0");
        let text = limit_csv(&[vec![1.0, 0.0], vec![2.0, 0.0], vec![3.0, 0.0]]);
        assert_eq!(text.lines().count(), 7);
        assert_eq!(text.lines().last().unwrap(), "2,1,0.0000000000000000e0");
    }
}
