//! Result files: CSV tables with one header row and numbers at 9 significant
//! digits, plus a JSON metrics record. Wall-clock times are never written so
//! that repeated runs produce identical bytes.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{PlannerError, Result};
use crate::path::RefPath;
use crate::sim::{Metrics, SimResult, StepLog};
use crate::trajectory::{CombinedVector, Trajectory};

pub const TRAJECTORY_COLUMNS: [&str; 8] = ["step", "t", "x", "y", "s", "v", "a", "jerk"];
pub const COMBINED_COLUMNS: [&str; 7] = ["index", "segment", "t", "x", "y", "s", "d"];
pub const REPLAN_COLUMNS: [&str; 12] = [
    "t", "w_a", "w_b", "p_exist", "J_A", "J_B", "total", "min_margin", "committed", "iterations", "converged", "fallback",
];
pub const SUMMARY_COLUMNS: [&str; 7] = ["p_exist", "max_decel", "max_jerk", "min_margin", "collision", "fallbacks", "bundle"];

const SIG_DIGITS: usize = 9;

/// Formats `x` with 9 significant digits, `%g` style: plain decimals for
/// moderate exponents, scientific otherwise, trailing zeros dropped.
pub fn fmt_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let rounded: f64 = sci.parse().expect("round trip of formatted float");
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{rounded:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// `x` rounded to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x.is_finite() {
        fmt_sig(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

/// Executed or planned trajectory with along-path speed, acceleration and
/// jerk from forward differences; cells past the end of a stencil stay empty.
pub fn write_trajectory(path: &Path, t: &Trajectory, ref_path: &RefPath) -> Result<()> {
    let s: Vec<f64> = t.points().iter().map(|p| ref_path.project(p).s).collect();
    let h = t.step();
    let diff = |i: usize, order: usize| -> Option<f64> {
        let c = crate::trajectory::stencil(order);
        (i + order < s.len()).then(|| c.iter().enumerate().map(|(k, ck)| ck * s[i + k]).sum::<f64>() / h.powi(order as i32))
    };
    let mut w = writer(path, &TRAJECTORY_COLUMNS)?;
    for (i, p) in t.points().iter().enumerate() {
        w.write_record([
            i.to_string(),
            fmt_sig(t.time_at(i)),
            fmt_sig(p.x),
            fmt_sig(p.y),
            fmt_sig(s[i]),
            opt(diff(i, 1)),
            opt(diff(i, 2)),
            opt(diff(i, 3)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Storage points of a combined vector labelled by segment.
pub fn write_combined(path: &Path, v: &CombinedVector, ref_path: &RefPath) -> Result<()> {
    let layout = v.layout();
    let mut w = writer(path, &COMBINED_COLUMNS)?;
    let b_start = *layout.branch_range(crate::trajectory::ManeuverId::B).start();
    for (j, p) in v.points().iter().enumerate() {
        let (segment, local) = if j <= layout.n_pin {
            ("pinned", j)
        } else if layout.shared_range().contains(&j) {
            ("shared", j)
        } else if j < b_start {
            ("branch_a", j)
        } else {
            ("branch_b", j - b_start + 2 * layout.n_pin + 1)
        };
        let proj = ref_path.project(p);
        w.write_record([
            j.to_string(),
            segment.to_string(),
            fmt_sig(v.t0() + local as f64 * v.step()),
            fmt_sig(p.x),
            fmt_sig(p.y),
            fmt_sig(proj.s),
            fmt_sig(proj.d),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replans(path: &Path, steps: &[StepLog]) -> Result<()> {
    let mut w = writer(path, &REPLAN_COLUMNS)?;
    for s in steps {
        w.write_record([
            fmt_sig(s.t),
            fmt_sig(s.w_a),
            fmt_sig(s.w_b),
            opt(s.p_exist),
            opt(s.j_a),
            opt(s.j_b),
            opt(s.total),
            opt(s.min_margin),
            s.committed.to_string(),
            s.iterations.to_string(),
            s.converged.to_string(),
            s.fallback.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PlannerError::Io(e.to_string()))?;
    text.push('\n');
    File::create(path)?.write_all(text.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub scenario: String,
    pub duration: f64,
    /// Existence probability substituted by a sweep, if any.
    pub p_exist: Option<f64>,
    pub max_decel: f64,
    pub max_jerk: f64,
    pub min_margin: Option<f64>,
    pub collision: bool,
    pub fallback_count: usize,
    pub replans: usize,
    pub pinned_consistent: bool,
    pub max_velocity_jump: f64,
}

impl RunRecord {
    pub fn new(scenario: &str, duration: f64, p_exist: Option<f64>, result: &SimResult) -> Self {
        let Metrics { max_decel, max_jerk, min_margin, collision, fallback_count, replans, .. } = result.metrics;
        RunRecord {
            scenario: scenario.to_string(),
            duration: round_sig(duration),
            p_exist: p_exist.map(round_sig),
            max_decel: round_sig(max_decel),
            max_jerk: round_sig(max_jerk),
            min_margin: min_margin.map(round_sig),
            collision,
            fallback_count,
            replans,
            pinned_consistent: result.pinned_consistent(),
            max_velocity_jump: round_sig(result.max_velocity_jump()),
        }
    }
}

/// Writes `trajectory.csv`, `replans.csv` and `metrics.json` into `dir`.
pub fn write_sim_bundle(dir: &Path, record: &RunRecord, result: &SimResult, ref_path: &RefPath) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_trajectory(&dir.join("trajectory.csv"), &result.executed, ref_path)?;
    write_replans(&dir.join("replans.csv"), &result.steps)?;
    write_json(&dir.join("metrics.json"), record)
}

pub fn write_summary(path: &Path, rows: &[(RunRecord, String)]) -> Result<()> {
    let mut w = writer(path, &SUMMARY_COLUMNS)?;
    for (r, bundle) in rows {
        w.write_record([
            opt(r.p_exist),
            fmt_sig(r.max_decel),
            fmt_sig(r.max_jerk),
            opt(r.min_margin),
            r.collision.to_string(),
            r.fallback_count.to_string(),
            bundle.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
