//! Oracle suite: closed forms checked against elementary forms, quadrature,
//! Monte Carlo, reference tables and figure-shape properties.

use std::fmt::Write as _;

use rfuwoc::altitude::{grid_optimal_altitude, optimal_altitude};
use rfuwoc::channel::{
    db_to_linear, scintillation_index, DetectionMode, EggParams, EggSnr, EggTable, LosModel, RfLinkParams, RicianHop,
    RicianSeries, Water,
};
use rfuwoc::mc::{estimate_metrics, McConfig};
use rfuwoc::metrics::{
    aber_from_cdf, diversity_order, evaluate, evaluate_asymptotic, af_aber_correction, Metric, ModulationSpec,
};
use rfuwoc::stats::{af_cdf_correction, af_cdf_correction_quadrature, reference_ensemble, LinkEnsemble, RelayMode};

use crate::scenario::{parse_scenario, Curve, Scenario};
use crate::sweep::{run_sweep, CurveResult};
use crate::CliError;

/// One oracle comparison. `measured` and `limit` are in the check's own
/// units (relative error, absolute error, standard errors, degrees, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    pub measured: f64,
    pub limit: f64,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn within(group: &'static str, name: impl Into<String>, measured: f64, limit: f64, detail: String) -> Check {
        Check {
            group,
            name: name.into(),
            measured,
            limit,
            pass: measured <= limit,
            detail,
        }
    }

    fn flag(group: &'static str, name: impl Into<String>, pass: bool, detail: String) -> Check {
        Check {
            group,
            name: name.into(),
            measured: f64::from(u8::from(!pass)),
            limit: 0.0,
            pass,
            detail,
        }
    }

    fn failed(group: &'static str, name: impl Into<String>, err: impl std::fmt::Display) -> Check {
        Check {
            group,
            name: name.into(),
            measured: f64::NAN,
            limit: f64::NAN,
            pass: false,
            detail: format!("error: {err}"),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}/{}: measured {:.3e} limit {:.3e} {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.group,
            self.name,
            self.measured,
            self.limit,
            self.detail
        )
    }
}

pub fn render(checks: &[Check]) -> String {
    let mut out = String::new();
    for c in checks {
        out.push_str(&c.line());
        out.push('\n');
    }
    let failed = checks.iter().filter(|c| !c.pass).count();
    let _ = writeln!(out, "{} checks, {} failed", checks.len(), failed);
    out
}

/// Check groups run by `validate` unless a subset is requested.
pub const DEFAULT_GROUPS: [&str; 7] = ["tables", "foxh", "bivariate", "mc", "slopes", "altitude", "series"];
pub const ALL_GROUPS: [&str; 8] = ["tables", "foxh", "bivariate", "mc", "slopes", "altitude", "series", "figures"];

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub table: EggTable,
    pub seed: u64,
    pub samples: u64,
    pub shards: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        let mc = McConfig::default();
        SuiteConfig {
            table: EggTable::shipped().clone(),
            seed: mc.seed,
            samples: mc.samples,
            shards: mc.shards,
        }
    }
}

pub fn run_groups(cfg: &SuiteConfig, groups: &[&str]) -> Result<Vec<Check>, CliError> {
    let mut out = Vec::new();
    for g in groups {
        let checks = match *g {
            "tables" => scintillation_checks(&cfg.table),
            "foxh" => foxh_identity_checks(&cfg.table),
            "bivariate" => bivariate_checks(&cfg.table),
            "mc" => mc_checks(&mc_references(&cfg.table)?, cfg.seed, cfg.samples, cfg.shards),
            "slopes" => slope_checks(&cfg.table),
            "altitude" => altitude_checks(&cfg.table),
            "series" => series_checks(),
            "figures" => figure_checks(&cfg.table),
            other => {
                return Err(CliError::field(
                    "checks",
                    format!("unknown group '{other}'; available: {}", ALL_GROUPS.join(", ")),
                ))
            }
        };
        out.extend(checks);
    }
    Ok(out)
}

fn reference(table: &EggTable) -> Result<LinkEnsemble, rfuwoc::Error> {
    Ok(LinkEnsemble {
        egg: table.lookup(Water::Thermal, 2.4, Some(0.05))?,
        ..reference_ensemble()
    })
}

// ------------------------------------------------------------ table rows

pub fn scintillation_checks(table: &EggTable) -> Vec<Check> {
    table
        .rows
        .iter()
        .map(|row| {
            let got = scintillation_index(&row.params);
            match row.params.sigma2 {
                Some(want) => Check::within(
                    "tables",
                    format!("sigma2 {}", row.key()),
                    (got / want - 1.0).abs(),
                    0.01,
                    format!("(computed {got:.5}, table {want})"),
                ),
                None => Check::failed("tables", format!("sigma2 {}", row.key()), "row has no sigma2 entry"),
            }
        })
        .collect()
}

// ------------------------------------------------- univariate identities

/// Rows spanning weak to strong turbulence.
const IDENTITY_ROWS: [(Water, f64, Option<f64>); 4] = [
    (Water::Thermal, 2.4, Some(0.05)),
    (Water::Thermal, 2.4, Some(0.20)),
    (Water::Salty, 16.5, None),
    (Water::Fresh, 16.5, None),
];

pub fn foxh_identity_checks(table: &EggTable) -> Vec<Check> {
    let mut out = Vec::new();
    for (w, bl, tg) in IDENTITY_ROWS {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let name = format!("cdf {w}/{bl}/{} {}", tg.map_or("none".into(), |t| t.to_string()), mode.label());
            let res = table
                .lookup(w, bl, tg)
                .and_then(|egg| EggSnr::new(&egg, mode, db_to_linear(15.0)))
                .and_then(|opt| {
                    let mut worst: f64 = 0.0;
                    for i in 0..100 {
                        let g = opt.mu * 10f64.powf(-4.0 + 7.0 * i as f64 / 99.0);
                        worst = worst.max((opt.cdf_foxh(g)? - opt.cdf(g)?).abs());
                    }
                    Ok(worst)
                });
            out.push(match res {
                Ok(e) => Check::within("foxh", name, e, 1e-8, "(max abs error, 100 points)".into()),
                Err(e) => Check::failed("foxh", name, e),
            });
        }
    }
    out
}

// --------------------------------------------------- bivariate vs quadrature

/// Operating points of the two bivariate terms: average SNR in dB.
const BIVARIATE_SNR_DB: [f64; 10] = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0, 45.0];

pub fn bivariate_checks(table: &EggTable) -> Vec<Check> {
    let base = match reference(table) {
        Ok(e) => e,
        Err(e) => return vec![Check::failed("bivariate", "reference", e)],
    };
    let gth = db_to_linear(1.5);
    let m = ModulationSpec::bpsk();
    let mut out = Vec::new();
    for db in BIVARIATE_SNR_DB {
        let ens = base.with_avg_snr_db(db);
        let rel = |h: f64, q: f64| (h / q - 1.0).abs();
        let name = format!("cdf term {db} dB");
        out.push(
            match (af_cdf_correction(gth, &ens), af_cdf_correction_quadrature(gth, &ens)) {
                (Ok(h), Ok(q)) => Check::within("bivariate", name, rel(h.value, q), 1e-4, format!("(H {:.6e}, quad {q:.6e})", h.value)),
                (Err(e), _) | (_, Err(e)) => Check::failed("bivariate", name, e),
            },
        );
        let name = format!("aber term {db} dB");
        let quad = aber_from_cdf(&m, |g| af_cdf_correction_quadrature(g, &ens));
        out.push(match (af_aber_correction(&m, &ens), quad) {
            (Ok(h), Ok(q)) => Check::within("bivariate", name, rel(h.value, q), 1e-4, format!("(H {:.6e}, quad {q:.6e})", h.value)),
            (Err(e), _) | (_, Err(e)) => Check::failed("bivariate", name, e),
        });
    }
    out
}

// ------------------------------------------------------------ Monte Carlo

pub const MC_SNR_DB: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

/// Closed-form values compared against simulation: one entry per ensemble
/// with its three metrics.
#[derive(Debug, Clone)]
pub struct McReference {
    pub label: String,
    pub ensemble: LinkEnsemble,
    pub metrics: [Metric; 3],
    pub exact: [Result<f64, String>; 3],
}

pub fn mc_references(table: &EggTable) -> Result<Vec<McReference>, CliError> {
    let base = reference(table)?;
    let gth = db_to_linear(1.5);
    let mut out = Vec::new();
    for relay in [RelayMode::FixedGainAf { c: 1.3 }, RelayMode::Df] {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            for db in MC_SNR_DB {
                let ens = base.with_relay(relay).with_detection(mode).with_avg_snr_db(db);
                let metrics = [
                    Metric::Outage { threshold: gth },
                    Metric::Aber(ModulationSpec::bpsk()),
                    Metric::Capacity,
                ];
                let exact = [0, 1, 2].map(|i| evaluate(&metrics[i], &ens).map_err(|e| e.to_string()));
                out.push(McReference {
                    label: format!("{}/{}/{db} dB", relay.label(), mode.label()),
                    ensemble: ens,
                    metrics,
                    exact,
                });
            }
        }
    }
    Ok(out)
}

/// Seed of the i-th ensemble under a base seed.
fn ensemble_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn mc_checks(refs: &[McReference], seed: u64, samples: u64, shards: usize) -> Vec<Check> {
    let mut out = Vec::new();
    for (i, r) in refs.iter().enumerate() {
        let cfg = McConfig {
            samples,
            seed: ensemble_seed(seed, i),
            shards,
        };
        let est = estimate_metrics(&r.metrics, &r.ensemble, &cfg);
        for k in 0..3 {
            let name = format!("{} {}", r.label, r.metrics[k].label());
            out.push(match (&r.exact[k], &est) {
                (Ok(x), Ok(e)) => {
                    let e = e[k];
                    let z = if e.stderr > 0.0 {
                        (x - e.value).abs() / e.stderr
                    } else if *x == e.value {
                        0.0
                    } else {
                        f64::INFINITY
                    };
                    Check::within(
                        "mc",
                        name,
                        z,
                        3.0,
                        format!("(stderrs; exact {x:.6e}, mc {:.6e} +- {:.2e})", e.value, e.stderr),
                    )
                }
                (Err(e), _) => Check::failed("mc", name, e),
                (_, Err(e)) => Check::failed("mc", name, e),
            });
        }
    }
    out
}

// ---------------------------------------------------------- high-SNR slopes

pub fn slope_checks(table: &EggTable) -> Vec<Check> {
    let base = match reference(table) {
        Ok(e) => e,
        Err(e) => return vec![Check::failed("slopes", "reference", e)],
    };
    let gth = db_to_linear(1.5);
    let mut out = Vec::new();
    for relay in [RelayMode::FixedGainAf { c: 1.3 }, RelayMode::Df] {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = base.with_relay(relay).with_detection(mode);
            let want = diversity_order(&relay, mode);
            for metric in [Metric::Outage { threshold: gth }, Metric::Aber(ModulationSpec::bpsk())] {
                let tag = format!("{} {} {}", relay.label(), mode.label(), metric.label());
                // Least-squares slope of log10(asymptote) against γ̄/10 dB.
                let pts: Result<Vec<(f64, f64)>, String> = (0..=20)
                    .map(|i| {
                        let db = 50.0 + i as f64;
                        match evaluate_asymptotic(&metric, &ens.with_avg_snr_db(db)) {
                            Ok(Some(v)) if v > 0.0 => Ok((db / 10.0, v.log10())),
                            Ok(_) => Err("no positive asymptote".to_string()),
                            Err(e) => Err(e.to_string()),
                        }
                    })
                    .collect();
                out.push(match pts {
                    Ok(p) => {
                        let s = -ls_slope(&p);
                        Check::within("slopes", format!("{tag} order"), (s - want).abs(), 0.01, format!("(slope {s:.4}, expected {want:.2})"))
                    }
                    Err(e) => Check::failed("slopes", format!("{tag} order"), e),
                });
                let e60 = ens.with_avg_snr_db(60.0);
                let name = format!("{tag} ratio at 60 dB");
                out.push(match (evaluate(&metric, &e60), evaluate_asymptotic(&metric, &e60)) {
                    (Ok(x), Ok(Some(a))) => {
                        Check::within("slopes", name, (x / a - 1.0).abs(), 0.1, format!("(exact {x:.4e}, asymptote {a:.4e})"))
                    }
                    (Err(e), _) | (_, Err(e)) => Check::failed("slopes", name, e),
                    (_, Ok(None)) => Check::failed("slopes", name, "no asymptote"),
                });
            }
        }
    }
    out
}

fn ls_slope(p: &[(f64, f64)]) -> f64 {
    let n = p.len() as f64;
    let mx = p.iter().map(|q| q.0).sum::<f64>() / n;
    let my = p.iter().map(|q| q.1).sum::<f64>() / n;
    let sxy: f64 = p.iter().map(|q| (q.0 - mx) * (q.1 - my)).sum();
    let sxx: f64 = p.iter().map(|q| (q.0 - mx) * (q.0 - mx)).sum();
    sxy / sxx
}

// ------------------------------------------------------ optimal altitude

/// Reference optimal elevation (degrees) and altitude (m) per distance.
pub const ALTITUDE_TABLE: [(f64, f64, f64); 11] = [
    (500.0, 70.9, 1443.9),
    (600.0, 69.0, 1563.1),
    (700.0, 67.1, 1657.1),
    (800.0, 65.3, 1793.3),
    (900.0, 63.6, 1813.0),
    (1000.0, 62.0, 1880.7),
    (1100.0, 60.4, 1936.4),
    (1200.0, 58.8, 1981.4),
    (1300.0, 57.3, 2025.0),
    (1400.0, 55.8, 2060.0),
    (1500.0, 54.3, 2087.5),
];

/// RF-hop average SNR (dB) at which the optimal-altitude table is computed.
pub const ALTITUDE_TABLE_SNR_DB: f64 = 20.815;

pub fn altitude_ensemble(table: &EggTable) -> Result<LinkEnsemble, rfuwoc::Error> {
    let base = reference(table)?.with_relay(RelayMode::Df);
    Ok(LinkEnsemble {
        rf: RfLinkParams {
            los: LosModel::calibrated(),
            ..base.rf.clone()
        },
        avg_snr1: db_to_linear(ALTITUDE_TABLE_SNR_DB),
        ..base
    })
}

pub fn altitude_checks(table: &EggTable) -> Vec<Check> {
    let gth = db_to_linear(1.5);
    let (weak, strong) = match (
        altitude_ensemble(table),
        table.lookup(Water::Salty, 16.5, None),
    ) {
        (Ok(e), Ok(s)) => (e.clone(), LinkEnsemble { egg: s, ..e }),
        (Err(e), _) | (_, Err(e)) => return vec![Check::failed("altitude", "setup", e)],
    };
    let mut out = Vec::new();
    for (r1, theta, h) in ALTITUDE_TABLE {
        let a = optimal_altitude(r1, gth, &weak);
        let b = optimal_altitude(r1, gth, &strong);
        let (a, b) = match (a, b) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                out.push(Check::failed("altitude", format!("r1 {r1}"), e));
                continue;
            }
        };
        let dt = (a.theta_opt.to_degrees() - theta).abs();
        out.push(Check::within(
            "altitude",
            format!("r1 {r1} elevation"),
            dt,
            0.2,
            format!("(deg; got {:.3}, table {theta})", a.theta_opt.to_degrees()),
        ));
        out.push(Check::within(
            "altitude",
            format!("r1 {r1} altitude"),
            (a.h_opt - h).abs(),
            10.0,
            format!("(m; got {:.2}, table {h})", a.h_opt),
        ));
        out.push(Check::flag(
            "altitude",
            format!("r1 {r1} optical independence"),
            a.h_opt.to_bits() == b.h_opt.to_bits(),
            format!("(sigma2 0.1484 -> {:.6}, 1.1273 -> {:.6})", a.h_opt, b.h_opt),
        ));
        let (lo, hi, n) = (0.5 * a.h_opt, 1.5 * a.h_opt, 401);
        out.push(match grid_optimal_altitude(r1, gth, &strong, lo, hi, n) {
            Ok((hg, cell)) => Check::within(
                "altitude",
                format!("r1 {r1} grid"),
                (hg - a.h_opt).abs() / cell,
                1.0,
                format!("(cells; grid {hg:.2}, root {:.2})", a.h_opt),
            ),
            Err(e) => Check::failed("altitude", format!("r1 {r1} grid"), e),
        });
    }
    out
}

// ------------------------------------------------------------ series budget

pub fn series_checks() -> Vec<Check> {
    [5.0, 10.0, 15.0]
        .iter()
        .map(|&db| {
            let k = db_to_linear(db);
            let hop = RicianHop {
                k,
                vartheta: 1.0 + k,
                avg_snr: 1.0,
            };
            // Order exactly 30: the budget of 1 never raises it.
            let s = RicianSeries::with_budget(&hop, 30, 1.0);
            let top = 10.0 * (1.0 + k) / hop.beta();
            let mut worst: f64 = 0.0;
            for i in 0..=1000 {
                let g = top * i as f64 / 1000.0;
                if let Ok(f) = hop.cdf(g) {
                    worst = worst.max((s.cdf(g) - f).abs());
                }
            }
            Check::within(
                "series",
                format!("order 30 at K = {db} dB"),
                worst,
                1e-3,
                format!("(sup-norm CDF error, order {})", s.order()),
            )
        })
        .collect()
}

// ---------------------------------------------------------- figure shapes

pub const FIGURE_SCENARIOS: [(&str, &str); 8] = [
    ("fig2", include_str!("../scenarios/fig2.cfg")),
    ("fig3", include_str!("../scenarios/fig3.cfg")),
    ("fig4", include_str!("../scenarios/fig4.cfg")),
    ("fig5", include_str!("../scenarios/fig5.cfg")),
    ("fig6", include_str!("../scenarios/fig6.cfg")),
    ("fig7", include_str!("../scenarios/fig7.cfg")),
    ("fig8", include_str!("../scenarios/fig8.cfg")),
    ("fig9", include_str!("../scenarios/fig9.cfg")),
];

pub fn figure_scenario(name: &str, table: &EggTable) -> Result<Scenario, CliError> {
    let text = FIGURE_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| CliError::field("figure", format!("unknown figure '{name}'")))?;
    let mut s = parse_scenario(text, table)?;
    s.mc = None;
    Ok(s)
}

/// Sign pattern of successive differences; one change means unimodal.
fn unique_interior_extremum(ys: &[f64], minimum: bool) -> Result<usize, String> {
    if ys.iter().any(|y| !y.is_finite()) {
        return Err("non-finite values".into());
    }
    let best = if minimum {
        (0..ys.len()).min_by(|&a, &b| ys[a].total_cmp(&ys[b]))
    } else {
        (0..ys.len()).max_by(|&a, &b| ys[a].total_cmp(&ys[b]))
    }
    .ok_or("empty curve")?;
    if best == 0 || best + 1 == ys.len() {
        return Err(format!("extremum at the grid edge (index {best})"));
    }
    let toward = |a: f64, b: f64| if minimum { b < a } else { b > a };
    let before = ys[..=best].windows(2).all(|w| toward(w[0], w[1]));
    let after = ys[best..].windows(2).all(|w| !toward(w[0], w[1]));
    if before && after {
        Ok(best)
    } else {
        Err("curve is not unimodal".into())
    }
}

fn run_figure(name: &str, table: &EggTable) -> Result<(Scenario, Vec<CurveResult>), CliError> {
    let s = figure_scenario(name, table)?;
    let r = run_sweep(&s)?;
    Ok((s, r))
}

fn optimum_checks(name: &'static str, table: &EggTable, minimum: bool, out: &mut Vec<Check>) {
    match run_figure(name, table) {
        Ok((s, res)) => {
            for (c, r) in s.curves.iter().zip(&res) {
                let label = format!("{name} {} interior optimum", c.label.as_deref().unwrap_or("curve"));
                let xs: Vec<f64> = r.points.iter().map(|p| p.x).collect();
                out.push(match unique_interior_extremum(&r.exact(), minimum) {
                    Ok(i) => Check::flag("figures", label, true, format!("(h1 = {} m)", xs[i])),
                    Err(e) => Check::flag("figures", label, false, format!("({e})")),
                });
            }
        }
        Err(e) => out.push(Check::failed("figures", name, e)),
    }
}

fn same_except_detection(a: &Curve, b: &Curve) -> bool {
    a.egg_key == b.egg_key
        && a.ensemble.detection != b.ensemble.detection
        && LinkEnsemble {
            detection: b.ensemble.detection,
            ..a.ensemble.clone()
        } == b.ensemble
}

fn ordering_checks(name: &'static str, table: &EggTable, out: &mut Vec<Check>) {
    let (s, res) = match run_figure(name, table) {
        Ok(v) => v,
        Err(e) => return out.push(Check::failed("figures", name, e)),
    };
    let label = |c: &Curve| c.label.clone().unwrap_or_default();
    // Heterodyne detection never does worse than IM/DD.
    for (i, a) in s.curves.iter().enumerate() {
        if a.ensemble.detection != DetectionMode::Heterodyne {
            continue;
        }
        for (j, b) in s.curves.iter().enumerate() {
            if !same_except_detection(a, b) {
                continue;
            }
            let (ya, yb) = (res[i].exact(), res[j].exact());
            let worst = ya.iter().zip(&yb).map(|(x, y)| x - y).fold(f64::NEG_INFINITY, f64::max);
            out.push(Check::flag(
                "figures",
                format!("{name} {} <= {}", label(a), label(b)),
                worst <= 0.0,
                format!("(max OP(HD) - OP(IM/DD) = {worst:.3e})"),
            ));
        }
    }
    // Outage grows with the scintillation index at each average SNR.
    for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
        let mut idx: Vec<usize> = (0..s.curves.len()).filter(|&i| s.curves[i].ensemble.detection == mode).collect();
        if idx.len() < 2 {
            continue;
        }
        idx.sort_by(|&a, &b| sigma2(&s.curves[a].ensemble.egg).total_cmp(&sigma2(&s.curves[b].ensemble.egg)));
        let mut bad = Vec::new();
        for w in idx.windows(2) {
            let (lo, hi) = (res[w[0]].exact(), res[w[1]].exact());
            for (k, (a, b)) in lo.iter().zip(&hi).enumerate() {
                if !(b >= a) {
                    bad.push(format!("{} vs {} at {}", label(&s.curves[w[0]]), label(&s.curves[w[1]]), res[0].points[k].x));
                }
            }
        }
        out.push(Check::flag(
            "figures",
            format!("{name} {} OP increasing in sigma2", mode.label()),
            bad.is_empty(),
            if bad.is_empty() { String::new() } else { format!("({})", bad.join("; ")) },
        ));
    }
}

fn sigma2(egg: &EggParams) -> f64 {
    scintillation_index(egg)
}

fn capacity_bubble_checks(table: &EggTable, out: &mut Vec<Check>) {
    let (s, res) = match run_figure("fig8", table) {
        Ok(v) => v,
        Err(e) => return out.push(Check::failed("figures", "fig8", e)),
    };
    for water in [Water::Salty, Water::Fresh] {
        let mut idx: Vec<usize> = (0..s.curves.len()).filter(|&i| s.curves[i].egg_key.water == water).collect();
        idx.sort_by(|&a, &b| s.curves[a].egg_key.bubble_level.total_cmp(&s.curves[b].egg_key.bubble_level));
        let ok = idx.len() >= 2
            && idx.windows(2).all(|w| {
                let (a, b) = (res[w[0]].exact(), res[w[1]].exact());
                a.iter().zip(&b).all(|(x, y)| y < x)
            });
        out.push(Check::flag(
            "figures",
            format!("fig8 {water} ACC decreasing in bubble level"),
            ok,
            format!("({} curves)", idx.len()),
        ));
    }
}

pub fn figure_checks(table: &EggTable) -> Vec<Check> {
    let mut out = Vec::new();
    optimum_checks("fig2", table, true, &mut out);
    optimum_checks("fig6", table, true, &mut out);
    optimum_checks("fig9", table, false, &mut out);
    ordering_checks("fig4", table, &mut out);
    ordering_checks("fig5", table, &mut out);
    capacity_bubble_checks(table, &mut out);
    out
}
