//! Sweep orchestration and CSV emission.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rfuwoc::altitude::optimal_altitude;
use rfuwoc::channel::{db_to_linear, Geometry};
use rfuwoc::mc::{estimate_metric, McConfig, McEstimate};
use rfuwoc::metrics::{evaluate, evaluate_asymptotic, Metric, MetricCurve};
use rfuwoc::stats::LinkEnsemble;

use crate::scenario::{Curve, Scenario, Sweep, SweepAxis};
use crate::CliError;

pub const CSV_HEADER: &str = "x,exact,asymptotic,mc_estimate,mc_stderr";
pub const ALTITUDE_HEADER: &str = "r1,theta_deg,h_opt_m,op_at_opt";

/// Fraction of failed points above which a sweep aborts.
const MAX_FAILED_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub x: f64,
    pub exact: Result<f64, String>,
    pub asymptotic: Option<Result<f64, String>>,
    pub mc: Option<Result<McEstimate, String>>,
}

impl PointResult {
    fn failure(&self) -> Option<&str> {
        fn bad(r: &Result<f64, String>) -> Option<&str> {
            r.as_ref().err().map(String::as_str)
        }
        bad(&self.exact)
            .or_else(|| self.asymptotic.as_ref().and_then(bad))
            .or_else(|| self.mc.as_ref().and_then(|r| r.as_ref().err().map(String::as_str)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveResult {
    pub label: Option<String>,
    pub points: Vec<PointResult>,
}

impl CurveResult {
    pub fn metric_curve(&self, unit: &str) -> MetricCurve {
        let has_asym = self.points.iter().any(|p| p.asymptotic.is_some());
        let has_mc = self.points.iter().any(|p| p.mc.is_some());
        MetricCurve {
            abscissa: self.points.iter().map(|p| p.x).collect(),
            unit: unit.to_string(),
            exact: self.points.iter().map(|p| *p.exact.as_ref().unwrap_or(&f64::NAN)).collect(),
            asymptotic: has_asym.then(|| {
                self.points
                    .iter()
                    .map(|p| p.asymptotic.as_ref().and_then(|r| r.as_ref().ok().copied()).unwrap_or(f64::NAN))
                    .collect()
            }),
            mc: has_mc.then(|| {
                self.points
                    .iter()
                    .map(|p| match &p.mc {
                        Some(Ok(e)) => (e.value, e.stderr),
                        _ => (f64::NAN, f64::NAN),
                    })
                    .collect()
            }),
        }
    }

    /// Exact column; failed points are NaN.
    pub fn exact(&self) -> Vec<f64> {
        self.points.iter().map(|p| *p.exact.as_ref().unwrap_or(&f64::NAN)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        let cell = |r: Option<&Result<f64, String>>| match r {
            None => String::new(),
            Some(Ok(v)) => format!("{v:e}"),
            Some(Err(_)) => "failed".into(),
        };
        for p in &self.points {
            let (mc, se) = match &p.mc {
                None => (String::new(), String::new()),
                Some(Ok(e)) => (format!("{:e}", e.value), format!("{:e}", e.stderr)),
                Some(Err(_)) => ("failed".into(), "failed".into()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{mc},{se}",
                p.x,
                cell(Some(&p.exact)),
                cell(p.asymptotic.as_ref())
            );
        }
        out
    }
}

/// Ensemble at abscissa `x` of the sweep.
pub fn ensemble_at(ens: &LinkEnsemble, axis: SweepAxis, x: f64) -> Result<LinkEnsemble, CliError> {
    Ok(match axis {
        SweepAxis::AvgSnrDb => {
            let g = db_to_linear(x);
            LinkEnsemble {
                avg_snr1: g,
                avg_snr2: g,
                ..ens.clone()
            }
        }
        SweepAxis::H1 => ens.with_geometry(Geometry::new(x, ens.geometry.r1)?),
        SweepAxis::R1 => ens.with_geometry(Geometry::new(ens.geometry.h1, x)?),
    })
}

pub fn curve_metric(metric: &Metric, curve: &Curve) -> Metric {
    match metric {
        Metric::Outage { .. } => Metric::Outage {
            threshold: curve.threshold,
        },
        m => m.clone(),
    }
}

/// Seed of one grid point; depends only on the base seed and the position.
fn point_seed(seed: u64, curve: usize, point: usize) -> u64 {
    let pos = ((curve as u64) << 32) | point as u64;
    seed ^ pos.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn eval_point(curve: &Curve, sweep: &Sweep, mc: Option<&McConfig>, ci: usize, i: usize, x: f64) -> PointResult {
    let ens = match ensemble_at(&curve.ensemble, sweep.axis, x) {
        Ok(e) => e,
        Err(e) => {
            let msg = e.to_string();
            return PointResult {
                x,
                exact: Err(msg.clone()),
                asymptotic: sweep.asymptotic.then(|| Err(msg.clone())),
                mc: mc.map(|_| Err(msg)),
            };
        }
    };
    let metric = curve_metric(&sweep.metric, curve);
    let exact = evaluate(&metric, &ens).map_err(|e| e.to_string());
    let asymptotic = if sweep.asymptotic {
        match evaluate_asymptotic(&metric, &ens) {
            Ok(Some(v)) => Some(Ok(v)),
            Ok(None) => None,
            Err(e) => Some(Err(e.to_string())),
        }
    } else {
        None
    };
    let mc = mc.map(|cfg| {
        let cfg = McConfig {
            seed: point_seed(cfg.seed, ci, i),
            ..*cfg
        };
        estimate_metric(&metric, &ens, &cfg).map_err(|e| e.to_string())
    });
    PointResult { x, exact, asymptotic, mc }
}

/// Evaluates one curve over the sweep grid. Points run concurrently and are
/// stored by grid index, so the result does not depend on scheduling.
pub fn run_curve(curve: &Curve, sweep: &Sweep, mc: Option<&McConfig>, ci: usize) -> Result<CurveResult, CliError> {
    let grid = sweep.grid();
    let slots: Vec<Mutex<Option<PointResult>>> = grid.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(grid.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= grid.len() {
                    break;
                }
                let r = eval_point(curve, sweep, mc, ci, i, grid[i]);
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let points: Vec<PointResult> = slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("every point evaluated"))
        .collect();
    let failed: Vec<&PointResult> = points.iter().filter(|p| p.failure().is_some()).collect();
    for p in &failed {
        log::warn!("point x = {}: {}", p.x, p.failure().unwrap_or_default());
    }
    if failed.len() as f64 > MAX_FAILED_FRACTION * points.len() as f64 {
        return Err(CliError::TooManyFailures {
            failed: failed.len(),
            total: points.len(),
            first: failed[0].failure().unwrap_or_default().to_string(),
        });
    }
    Ok(CurveResult {
        label: curve.label.clone(),
        points,
    })
}

pub fn run_sweep(s: &Scenario) -> Result<Vec<CurveResult>, CliError> {
    let sweep = s
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::field("sweep", "scenario has no [sweep] section"))?;
    s.curves
        .iter()
        .enumerate()
        .map(|(ci, c)| run_curve(c, sweep, s.mc.as_ref(), ci))
        .collect()
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Rows of the optimal-altitude table for one curve, plus per-row failures.
pub fn altitude_table(curve: &Curve, r1s: &[f64]) -> (String, Vec<(f64, rfuwoc::Error)>) {
    let mut out = String::from(ALTITUDE_HEADER);
    out.push('\n');
    let mut failures = Vec::new();
    for &r1 in r1s {
        match optimal_altitude(r1, curve.threshold, &curve.ensemble) {
            Ok(sol) => {
                let _ = writeln!(
                    out,
                    "{r1},{:.4},{:.2},{:e}",
                    sol.theta_opt.to_degrees(),
                    sol.h_opt,
                    sol.op_at_opt
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{r1},failed,failed,failed");
                failures.push((r1, e));
            }
        }
    }
    (out, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse_scenario;
    use rfuwoc::channel::EggTable;

    fn scenario(extra: &str) -> Scenario {
        parse_scenario(
            &format!("[link]\nrelay = \"DF\"\ndetection = \"HD\"\negg = \"thermal, 2.4, 0.05\"\n{extra}"),
            EggTable::shipped(),
        )
        .unwrap()
    }

    #[test]
    fn csv_layout_and_determinism() {
        let s = scenario(
            "[sweep]\naxis = \"avg_snr_db\"\nfrom = 0.0\nto = 20.0\npoints = 5\nmetric = \"op\"\n\
             [mc]\nsamples = 20000\nseed = 4\n",
        );
        let a = run_sweep(&s).unwrap();
        let b = run_sweep(&s).unwrap();
        let csv = a[0].to_csv();
        assert_eq!(csv, b[0].to_csv());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 6);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 5 && !l.contains(",,")));
        let ys = a[0].exact();
        assert!(ys.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn disabled_columns_are_empty() {
        let s = scenario(
            "[sweep]\naxis = \"h1\"\nfrom = 500.0\nto = 3000.0\npoints = 3\nmetric = \"acc\"\nasymptotic = false\n\
             [mc]\nenabled = false\n",
        );
        let csv = run_sweep(&s).unwrap()[0].to_csv();
        for l in csv.lines().skip(1) {
            assert!(l.ends_with(",,,"), "{l}");
        }
    }

    #[test]
    fn point_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for c in 0..3 {
            for p in 0..50 {
                assert!(seen.insert(point_seed(7, c, p)));
            }
        }
    }

    #[test]
    fn altitude_rows() {
        let s = scenario("");
        let (csv, fails) = altitude_table(&s.curves[0], &[500.0, 1000.0]);
        assert!(fails.is_empty());
        assert_eq!(csv.lines().count(), 3);
        assert_eq!(csv.lines().next().unwrap(), ALTITUDE_HEADER);
    }
}
