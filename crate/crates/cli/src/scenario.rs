//! Scenario files: TOML documents with a `[link]` section, optional `[rf]`,
//! `[sweep]`, `[altitude]`, `[mc]`, `[eval]` and `[output]` sections, and any
//! number of `[[variant]]` sections that override link keys per curve.
//!
//! Every key is optional except `link.relay`, `link.detection` and
//! `link.egg`; missing keys take the defaults listed on [`LinkDefaults`].

use std::path::{Path, PathBuf};

use rfuwoc::channel::{db_to_linear, DetectionMode, EggParams, EggTable, Geometry, LosModel, RfLinkParams, Water};
use rfuwoc::mc::McConfig;
use rfuwoc::metrics::{Metric, ModulationSpec};
use rfuwoc::stats::{EvalConfig, LinkEnsemble, RelayMode};
use serde::Deserialize;

use crate::CliError;

/// Output-directory override; the only environment variable consulted.
pub const OUTPUT_DIR_VAR: &str = "RFUWOC_OUTPUT_DIR";

/// Default scenario constants.
pub struct LinkDefaults;

impl LinkDefaults {
    pub const THRESHOLD_DB: f64 = 1.5;
    pub const GAIN_C: f64 = 1.3;
    pub const AVG_SNR_DB: f64 = 15.0;
    pub const H1: f64 = 1500.0;
    pub const R1: f64 = 1200.0;
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLink {
    label: Option<String>,
    relay: Option<String>,
    gain_c: Option<f64>,
    detection: Option<String>,
    egg: Option<String>,
    avg_snr_db: Option<f64>,
    avg_snr1_db: Option<f64>,
    avg_snr2_db: Option<f64>,
    threshold_db: Option<f64>,
    h1: Option<f64>,
    r1: Option<f64>,
}

impl RawLink {
    fn overlay(&self, over: &RawLink) -> RawLink {
        macro_rules! pick {
            ($($f:ident),*) => { RawLink { $($f: over.$f.clone().or_else(|| self.$f.clone()),)* } };
        }
        pick!(label, relay, gain_c, detection, egg, avg_snr_db, avg_snr1_db, avg_snr2_db, threshold_db, h1, r1)
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRf {
    path_loss_const: Option<f64>,
    a1: Option<f64>,
    b1: Option<f64>,
    k0_db: Option<f64>,
    k90_db: Option<f64>,
    series_order: Option<usize>,
    los: Option<String>,
    los_a: Option<f64>,
    los_b: Option<f64>,
    ref_distance: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    axis: String,
    from: f64,
    to: f64,
    points: usize,
    metric: String,
    modulation: Option<String>,
    mod_p: Option<f64>,
    mod_q: Option<f64>,
    #[serde(default = "yes")]
    asymptotic: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAltitude {
    r1: Option<Vec<f64>>,
    r1_from: Option<f64>,
    r1_to: Option<f64>,
    r1_step: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    enabled: Option<bool>,
    samples: Option<u64>,
    seed: Option<u64>,
    shards: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEval {
    quadrature_fallback: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    path: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    link: RawLink,
    #[serde(default)]
    rf: RawRf,
    sweep: Option<RawSweep>,
    altitude: Option<RawAltitude>,
    #[serde(default)]
    mc: RawMc,
    #[serde(default)]
    eval: RawEval,
    #[serde(default)]
    output: RawOutput,
    #[serde(default)]
    variant: Vec<RawLink>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Average SNR of both hops, dB.
    AvgSnrDb,
    /// UAV altitude, m.
    H1,
    /// Horizontal UAV-relay distance, m.
    R1,
}

impl SweepAxis {
    fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "avg_snr_db" => Ok(SweepAxis::AvgSnrDb),
            "h1" => Ok(SweepAxis::H1),
            "r1" => Ok(SweepAxis::R1),
            _ => Err(CliError::field("sweep.axis", format!("unknown axis '{s}' (avg_snr_db, h1, r1)"))),
        }
    }

    pub fn unit(&self) -> &'static str {
        match self {
            SweepAxis::AvgSnrDb => "dB",
            SweepAxis::H1 | SweepAxis::R1 => "m",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub from: f64,
    pub to: f64,
    pub points: usize,
    pub metric: Metric,
    pub asymptotic: bool,
}

impl Sweep {
    pub fn grid(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.from];
        }
        let step = (self.to - self.from) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.from + step * i as f64).collect()
    }
}

/// One curve of a scenario: a labelled link configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub label: Option<String>,
    /// Table key of the optical-hop row.
    pub egg_key: EggKey,
    pub ensemble: LinkEnsemble,
    /// Outage threshold, linear.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub curves: Vec<Curve>,
    pub sweep: Option<Sweep>,
    pub altitude_r1: Option<Vec<f64>>,
    pub mc: Option<McConfig>,
    pub output: Option<PathBuf>,
}

impl Scenario {
    /// Applies command-line overrides.
    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<(), CliError> {
        if o.no_mc {
            self.mc = None;
        }
        if let Some(mc) = self.mc.as_mut() {
            if let Some(s) = o.seed {
                mc.seed = s;
            }
            if let Some(n) = o.samples {
                mc.samples = n;
            }
            mc.validate()?;
        }
        if o.quadrature_fallback {
            for c in &mut self.curves {
                c.ensemble.eval.force_quadrature = true;
            }
        }
        if let Some(p) = &o.output {
            self.output = Some(p.clone());
        }
        Ok(())
    }

    /// Output file of curve `i`; multi-curve scenarios append the label.
    pub fn output_path(&self, i: usize) -> Option<PathBuf> {
        let base = self.output.as_ref()?;
        let base = match std::env::var_os(OUTPUT_DIR_VAR) {
            Some(dir) if base.is_relative() => Path::new(&dir).join(base),
            _ => base.clone(),
        };
        if self.curves.len() == 1 {
            return Some(base);
        }
        let label = self.curves[i].label.clone().unwrap_or_else(|| format!("curve{i}"));
        let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let ext = base.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
        Some(base.with_file_name(format!("{stem}-{}{ext}", sanitize(&label))))
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Command-line flags that take precedence over scenario keys.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub samples: Option<u64>,
    pub no_mc: bool,
    pub output: Option<PathBuf>,
    pub quadrature_fallback: bool,
}

pub fn parse_scenario_file(path: &Path, table: &EggTable) -> Result<Scenario, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, table)
}

pub fn parse_scenario(text: &str, table: &EggTable) -> Result<Scenario, CliError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
    if raw.link.label.is_some() {
        return Err(CliError::field("link.label", "labels belong to [[variant]] sections"));
    }
    let rf = build_rf(&raw.rf)?;
    let force_quadrature = raw.eval.quadrature_fallback.unwrap_or(false);
    let links: Vec<RawLink> = if raw.variant.is_empty() {
        vec![raw.link.clone()]
    } else {
        raw.variant.iter().map(|v| raw.link.overlay(v)).collect()
    };
    let curves = links
        .iter()
        .map(|l| build_curve(l, &rf, force_quadrature, table))
        .collect::<Result<Vec<_>, _>>()?;
    let sweep = raw.sweep.as_ref().map(build_sweep).transpose()?;
    if let Some(s) = &sweep {
        if s.axis != SweepAxis::AvgSnrDb && !(s.from > 0.0) {
            return Err(CliError::field(
                if s.axis == SweepAxis::H1 { "h1" } else { "r1" },
                format!("sweep start {} must be positive", s.from),
            ));
        }
    }
    let altitude_r1 = raw.altitude.as_ref().map(build_altitude).transpose()?;
    let mc = if raw.mc.enabled.unwrap_or(true) {
        let d = McConfig::default();
        let cfg = McConfig {
            samples: raw.mc.samples.unwrap_or(d.samples),
            seed: raw.mc.seed.unwrap_or(d.seed),
            shards: raw.mc.shards.unwrap_or(d.shards),
        };
        cfg.validate()?;
        Some(cfg)
    } else {
        None
    };
    Ok(Scenario {
        curves,
        sweep,
        altitude_r1,
        mc,
        output: raw.output.path.map(PathBuf::from),
    })
}

fn build_rf(raw: &RawRf) -> Result<RfLinkParams, CliError> {
    let d = RfLinkParams::default();
    let mut los = match raw.los.as_deref() {
        None => d.los,
        Some(name) => LosModel::preset(name).ok_or_else(|| {
            CliError::field("rf.los", format!("unknown preset '{name}'; available: {}", LosModel::PRESETS.join(", ")))
        })?,
    };
    if raw.los_a.is_some() || raw.los_b.is_some() {
        los = LosModel::new(raw.los_a.unwrap_or(los.a), raw.los_b.unwrap_or(los.b))?;
    }
    let rf = RfLinkParams {
        path_loss_const: raw.path_loss_const.unwrap_or(d.path_loss_const),
        a1: raw.a1.unwrap_or(d.a1),
        b1: raw.b1.unwrap_or(d.b1),
        k0_db: raw.k0_db.unwrap_or(d.k0_db),
        k90_db: raw.k90_db.unwrap_or(d.k90_db),
        series_order: raw.series_order.unwrap_or(d.series_order),
        los,
        ref_distance: raw.ref_distance.unwrap_or(d.ref_distance),
    };
    rf.validate()?;
    Ok(rf)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EggKey {
    pub water: Water,
    pub bubble_level: f64,
    pub temp_gradient: Option<f64>,
}

/// Parses an EGG key such as `thermal, 2.4, 0.05` or `(salty, 16.5, none)`.
pub fn parse_egg_key(key: &str, table: &EggTable) -> Result<(EggKey, EggParams), CliError> {
    let inner = key.trim().trim_start_matches('(').trim_end_matches(')');
    let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
    if !(2..=3).contains(&parts.len()) {
        return Err(CliError::field("egg", format!("'{key}' is not (water, bubble_level, temp_gradient|none)")));
    }
    let water: Water = parts[0].parse()?;
    let bl: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::field("egg", format!("bubble level '{}' is not a number", parts[1])))?;
    let tg = match parts.get(2).copied() {
        None | Some("none") | Some("") => None,
        Some(t) => Some(
            t.parse::<f64>()
                .map_err(|_| CliError::field("egg", format!("temperature gradient '{t}' is not a number")))?,
        ),
    };
    let params = table.lookup(water, bl, tg)?;
    Ok((
        EggKey {
            water,
            bubble_level: bl,
            temp_gradient: tg,
        },
        params,
    ))
}

fn build_curve(l: &RawLink, rf: &RfLinkParams, force_quadrature: bool, table: &EggTable) -> Result<Curve, CliError> {
    let relay = match l.relay.as_deref() {
        None => return Err(CliError::field("relay", "missing (AF or DF)")),
        Some(s) if s.eq_ignore_ascii_case("af") => RelayMode::FixedGainAf {
            c: l.gain_c.unwrap_or(LinkDefaults::GAIN_C),
        },
        Some(s) if s.eq_ignore_ascii_case("df") => RelayMode::Df,
        Some(s) => return Err(CliError::field("relay", format!("unknown relay '{s}' (AF or DF)"))),
    };
    let detection: DetectionMode = l
        .detection
        .as_deref()
        .ok_or_else(|| CliError::field("detection", "missing (HD or IM/DD)"))?
        .parse()?;
    let (egg_key, egg) = parse_egg_key(l.egg.as_deref().ok_or_else(|| CliError::field("egg", "missing"))?, table)?;
    let snr = l.avg_snr_db.unwrap_or(LinkDefaults::AVG_SNR_DB);
    let h1 = l.h1.unwrap_or(LinkDefaults::H1);
    let r1 = l.r1.unwrap_or(LinkDefaults::R1);
    for (name, v) in [("h1", h1), ("r1", r1)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(CliError::field(name, format!("{v} must be positive")));
        }
    }
    if let Some(c) = l.gain_c {
        if !(c > 0.0) {
            return Err(CliError::field("gain_c", format!("{c} must be positive")));
        }
    }
    let ensemble = LinkEnsemble {
        geometry: Geometry::new(h1, r1)?,
        rf: rf.clone(),
        egg,
        detection,
        avg_snr1: db_to_linear(l.avg_snr1_db.unwrap_or(snr)),
        avg_snr2: db_to_linear(l.avg_snr2_db.unwrap_or(snr)),
        relay,
        eval: EvalConfig {
            force_quadrature,
            ..EvalConfig::default()
        },
    };
    ensemble.validate()?;
    Ok(Curve {
        label: l.label.clone(),
        egg_key,
        ensemble,
        threshold: db_to_linear(l.threshold_db.unwrap_or(LinkDefaults::THRESHOLD_DB)),
    })
}

fn build_sweep(raw: &RawSweep) -> Result<Sweep, CliError> {
    let axis = SweepAxis::parse(&raw.axis)?;
    if raw.points == 0 {
        return Err(CliError::field("sweep.points", "must be at least 1"));
    }
    if !(raw.from.is_finite() && raw.to.is_finite()) || raw.to < raw.from || (raw.points > 1 && raw.to == raw.from) {
        return Err(CliError::field(
            "sweep.to",
            format!("range [{}, {}] must be ordered and non-empty", raw.from, raw.to),
        ));
    }
    let metric = match raw.metric.to_ascii_lowercase().as_str() {
        // The threshold is per curve and filled in at evaluation time.
        "op" | "outage" => Metric::Outage { threshold: f64::NAN },
        "aber" => {
            let m = match (raw.mod_p, raw.mod_q) {
                (Some(p), Some(q)) => ModulationSpec::new(p, q, raw.modulation.clone().unwrap_or_else(|| "custom".into()))?,
                (None, None) => ModulationSpec::preset(raw.modulation.as_deref().unwrap_or("BPSK"))?,
                _ => return Err(CliError::field("sweep.mod_p", "mod_p and mod_q go together")),
            };
            Metric::Aber(m)
        }
        "acc" | "capacity" => Metric::Capacity,
        other => return Err(CliError::field("sweep.metric", format!("unknown metric '{other}' (op, aber, acc)"))),
    };
    Ok(Sweep {
        axis,
        from: raw.from,
        to: raw.to,
        points: raw.points,
        metric,
        asymptotic: raw.asymptotic,
    })
}

fn build_altitude(raw: &RawAltitude) -> Result<Vec<f64>, CliError> {
    let list = match (&raw.r1, raw.r1_from, raw.r1_to, raw.r1_step) {
        (Some(l), None, None, None) => l.clone(),
        (None, Some(a), Some(b), Some(s)) => {
            if !(s > 0.0) || b < a {
                return Err(CliError::field("altitude.r1_step", "range must be ordered with a positive step"));
            }
            let n = ((b - a) / s + 1e-9).floor() as usize;
            (0..=n).map(|i| a + s * i as f64).collect()
        }
        _ => return Err(CliError::field("altitude", "give either r1 = [...] or r1_from/r1_to/r1_step")),
    };
    if list.is_empty() || list.iter().any(|r| !(*r > 0.0)) {
        return Err(CliError::field("altitude.r1", "distances must be positive"));
    }
    Ok(list)
}
