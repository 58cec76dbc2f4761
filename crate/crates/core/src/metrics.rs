//! Outage probability, average bit error rate and ergodic capacity of the
//! dual-hop link: exact forms, high-SNR asymptotes and quadrature oracles.

use std::f64::consts::LN_2;

use crate::channel::DetectionMode;
use crate::error::{invalid, Error, Result};
use crate::foxh::{bivariate_h_eval_weighted, foxh_eval_weighted, BivariateHSpec, FoxHSpec, JointParam};
use crate::quad;
use crate::specfun::{gamma, gamma_q, gauss_2f1, ln_gamma};
use crate::stats::{
    af_e2e_cdf, af_pdf_quadrature, clamp_probability, df_e2e_cdf, df_e2e_pdf, e2e_cdf, optical_components,
    optical_support, terms_by_mass, HSum, LinkEnsemble, RelayMode,
};

/// Binary modulation with conditional error Γ(p, qγ)/(2Γ(p)).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSpec {
    pub p: f64,
    pub q: f64,
    pub name: String,
}

impl ModulationSpec {
    pub fn new(p: f64, q: f64, name: impl Into<String>) -> Result<Self> {
        for (field, v) in [("p", p), ("q", q)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(field, format!("{v} must be positive")));
            }
        }
        Ok(ModulationSpec { p, q, name: name.into() })
    }

    pub fn bpsk() -> Self {
        ModulationSpec {
            p: 0.5,
            q: 1.0,
            name: "BPSK".into(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "BPSK" => Ok(Self::bpsk()),
            _ => Err(invalid("modulation", format!("unknown preset {name:?}; available: BPSK"))),
        }
    }

    /// Error probability conditioned on the instantaneous SNR.
    pub fn conditional_error(&self, g: f64) -> f64 {
        0.5 * gamma_q(self.p, self.q * g).unwrap_or(0.0)
    }
}

impl Default for ModulationSpec {
    fn default() -> Self {
        Self::bpsk()
    }
}

/// Which performance measure to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Outage { threshold: f64 },
    Aber(ModulationSpec),
    /// Ergodic capacity with the detection mode's τ.
    Capacity,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::Outage { .. } => "OP",
            Metric::Aber(_) => "ABER",
            Metric::Capacity => "ACC",
        }
    }

    pub fn is_probability(&self) -> bool {
        !matches!(self, Metric::Capacity)
    }
}

/// A swept metric with optional asymptote and Monte Carlo columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricCurve {
    pub abscissa: Vec<f64>,
    pub unit: String,
    pub exact: Vec<f64>,
    pub asymptotic: Option<Vec<f64>>,
    /// (estimate, standard error) per point.
    pub mc: Option<Vec<(f64, f64)>>,
}

impl MetricCurve {
    pub fn validate(&self, probability: bool) -> Result<()> {
        let n = self.abscissa.len();
        let lens_ok = self.exact.len() == n
            && self.asymptotic.as_ref().map_or(true, |v| v.len() == n)
            && self.mc.as_ref().map_or(true, |v| v.len() == n);
        if !lens_ok {
            return Err(Error::Consistency("metric curve columns differ in length".into()));
        }
        for &v in self.exact.iter().filter(|v| !v.is_nan()) {
            let bad = if probability { !(0.0..=1.0).contains(&v) } else { v < 0.0 };
            if bad {
                return Err(Error::Consistency(format!("metric value {v:e} outside its range")));
            }
        }
        Ok(())
    }
}

/// Diversity order predicted for the relay and detection modes.
pub fn diversity_order(relay: &RelayMode, detection: DetectionMode) -> f64 {
    match relay {
        RelayMode::FixedGainAf { .. } => 1.0,
        RelayMode::Df => (1.0 / detection.r()).min(1.0),
    }
}

/// Sum of power laws Σ c·γ^e describing a high-SNR asymptote.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PowerLaw {
    /// (coefficient, exponent) pairs.
    pub terms: Vec<(f64, f64)>,
}

impl PowerLaw {
    pub fn eval(&self, g: f64) -> f64 {
        self.terms.iter().map(|&(c, e)| c * g.powf(e)).sum()
    }

    /// Average of the power law against the modulation's error kernel,
    /// ∫ q^p γ^{p-1} e^{-qγ}/(2Γ(p)) · cγ^e dγ.
    pub fn aber(&self, m: &ModulationSpec) -> f64 {
        self.terms
            .iter()
            .map(|&(c, e)| c * (ln_gamma(m.p + e) - ln_gamma(m.p) - e * m.q.ln()).exp() / 2.0)
            .sum()
    }

    fn extend(&mut self, other: PowerLaw) {
        self.terms.extend(other.terms);
    }

    /// Smallest exponent carried by a non-zero coefficient.
    pub fn leading_exponent(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.0 != 0.0)
            .map(|t| t.1)
            .fold(f64::INFINITY, f64::min)
    }
}

fn check_threshold(g: f64) -> Result<()> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(invalid("threshold", format!("{g} must be positive")));
    }
    Ok(())
}

fn use_h(ens: &LinkEnsemble, what: &str, h: &HSum) -> bool {
    let ok = h.trusted(ens.eval.fallback_rel);
    if !ok {
        log::warn!(
            "{what}: H-function error {:.2e} on {:.4e}; using quadrature",
            h.abs_err,
            h.value
        );
    }
    ok
}

// ---------------------------------------------------------------- outage

pub fn outage_af(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    af_e2e_cdf(threshold, ens)
}

pub fn outage_df(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    df_e2e_cdf(threshold, ens)
}

pub fn outage(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    e2e_cdf(threshold, ens)
}

/// Small-SNR behaviour of the RF-hop CDF, βe^{-K}γ.
pub fn rf_cdf_asymptote(ens: &LinkEnsemble) -> Result<PowerLaw> {
    let hop = ens.rician()?;
    Ok(PowerLaw {
        terms: vec![(hop.beta() * (-hop.k).exp(), 1.0)],
    })
}

/// Small-SNR behaviour of the optical-hop CDF, one power per mixture component.
pub fn optical_cdf_asymptote(ens: &LinkEnsemble) -> Result<PowerLaw> {
    let opt = ens.optical()?;
    let terms = optical_components(&opt)
        .iter()
        .map(|c| {
            let e = c.b / c.k;
            ((c.ln_cdf_weight - (c.k * c.b).ln() - e * c.scale.ln()).exp(), e)
        })
        .collect();
    Ok(PowerLaw { terms })
}

const COLLISION_EPS: f64 = 1e-6;

/// Integer j ≥ 0 with x = j, if any.
fn as_index(x: f64) -> Option<u64> {
    let r = x.round();
    if r >= 0.0 && (x - r).abs() < 1e-9 {
        Some(r as u64)
    } else {
        None
    }
}

fn factorial(j: u64) -> f64 {
    gamma(j as f64 + 1.0)
}

/// Leading residues of Γ(b+ks)Γ(m+1+s)Γ(-ks)/Γ(1-ks) z^{-s} at small z, as
/// (coefficient, power of z). Coinciding poles of the two families are split
/// by shifting b and the partner pole is kept so that the pair stays finite.
fn correction_residues(m: usize, b: f64, k: f64) -> Vec<(f64, f64)> {
    let n = m as f64 + 1.0;
    let hit_right = as_index(b / k - n);
    let hit_left = as_index(n * k - b);
    let b = if hit_right.is_some() || hit_left.is_some() {
        log::debug!("coinciding asymptotic exponents for term {m} (b = {b}, k = {k}); shifting b by {COLLISION_EPS}");
        b + COLLISION_EPS * b.max(1.0)
    } else {
        b
    };
    let first = |j: u64| {
        let e = (b + j as f64) / k;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        (sign / (factorial(j) * k) * gamma(n - e) / (b + j as f64), e)
    };
    let second = |j: u64| {
        let e = n + j as f64;
        let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
        (sign / factorial(j) * gamma(b - k * e) / (k * e), e)
    };
    let mut out = vec![first(0), second(0)];
    if let Some(j) = hit_right.filter(|&j| j > 0) {
        out.push(second(j));
    }
    if let Some(j) = hit_left.filter(|&j| j > 0) {
        out.push(first(j));
    }
    out
}

/// High-SNR power law of the AF CDF correction term.
pub fn af_correction_asymptote(ens: &LinkEnsemble) -> Result<PowerLaw> {
    let c = ens.gain_const()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let mut out = PowerLaw::default();
    for t in terms_by_mass(&series) {
        for comp in optical_components(&opt) {
            let lz = (c * series.beta / comp.scale).ln();
            for (coef, e) in correction_residues(t.m, comp.b, comp.k) {
                let w = (t.ln_weight + comp.ln_cdf_weight + e * lz).exp();
                out.terms.push((w * coef, e));
            }
        }
    }
    Ok(out)
}

/// Power law of the end-to-end CDF at high SNR.
pub fn cdf_asymptote(ens: &LinkEnsemble) -> Result<PowerLaw> {
    let mut p = rf_cdf_asymptote(ens)?;
    match ens.relay {
        RelayMode::FixedGainAf { .. } => p.extend(af_correction_asymptote(ens)?),
        RelayMode::Df => p.extend(optical_cdf_asymptote(ens)?),
    }
    Ok(p)
}

pub fn outage_af_asymptotic(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    ens.gain_const()?;
    Ok(cdf_asymptote(ens)?.eval(threshold))
}

pub fn outage_df_asymptotic(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    ens.require_df()?;
    Ok(cdf_asymptote(ens)?.eval(threshold))
}

pub fn outage_asymptotic(threshold: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_threshold(threshold)?;
    Ok(cdf_asymptote(ens)?.eval(threshold))
}

// ------------------------------------------------------------------ ABER

/// ABER of a CDF by direct quadrature, ∫ q^p γ^{p-1}e^{-qγ}F(γ)/(2Γ(p)) dγ.
pub fn aber_from_cdf<F: FnMut(f64) -> Result<f64>>(m: &ModulationSpec, mut cdf: F) -> Result<f64> {
    let mut err = None;
    let lg = ln_gamma(m.p);
    let f = |g: f64| match cdf(g) {
        Ok(v) => v * (m.p * (m.q * g).ln() - m.q * g - lg).exp() / (2.0 * g),
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let lo = 1e-14 / m.q;
    let hi = (80.0 + 4.0 * m.p) / m.q;
    let r = quad::integrate_log_axis(f, lo, hi, &[1.0 / m.q, m.p / m.q], 1e-300, 1e-10);
    if let Some(e) = err {
        return Err(e);
    }
    if !r.converged {
        return Err(Error::Convergence {
            what: "ABER quadrature".into(),
            partial: r.value,
            bound: r.abs_err,
        });
    }
    Ok(r.value)
}

/// ABER of the RF hop alone from the gamma-mixture expansion.
pub fn rf_aber(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    let series = ens.series()?;
    let beta = series.beta;
    let z = beta / (m.q + beta);
    let base = m.p * m.q.ln() - LN_2 - ln_gamma(m.p);
    let mut sum = 0.0;
    for t in terms_by_mass(&series) {
        let n = t.m as f64 + 1.0;
        let ln_term = base + t.ln_weight + n * beta.ln() + ln_gamma(m.p + n)
            - n.ln()
            - (m.p + n) * (m.q + beta).ln();
        sum += ln_term.exp() * gauss_2f1(1.0, n + m.p, n + 1.0, z)?;
    }
    Ok(sum)
}

/// ABER of the optical hop alone via univariate H-functions.
pub fn optical_aber(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    let opt = ens.optical()?;
    let opts = ens.h_options();
    let mut acc = HSum::default();
    for c in optical_components(&opt) {
        let spec = FoxHSpec::new(1, 2, vec![(1.0, c.k), (1.0 - m.p, 1.0)], vec![(c.b, c.k), (0.0, c.k)])?;
        let lw = c.ln_cdf_weight - LN_2 - ln_gamma(m.p);
        acc.add(foxh_eval_weighted(&spec, -(c.scale * m.q).ln(), lw, &opts)?);
    }
    if ens.eval.force_quadrature || !use_h(ens, "optical ABER", &acc) {
        return aber_from_cdf(m, |g| opt.cdf(g));
    }
    Ok(acc.value)
}

/// AF correction to the ABER: the error kernel averaged against the CDF
/// correction term.
pub fn af_aber_correction(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<HSum> {
    let c = ens.gain_const()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let ln_beta = series.beta.ln();
    let ln_y = m.q.ln() - ln_beta;
    let mut acc = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let ybranch = FoxHSpec::new(1, 1, vec![(1.0, 1.0)], vec![(mf + 1.0 + m.p, 1.0), (mf + 1.0, 1.0)])?;
        let ln_a1 = t.ln_weight + (mf + 1.0) * ln_beta;
        for comp in &comps {
            let joint = vec![JointParam {
                a: mf + 2.0,
                alpha: -1.0,
                beta: 1.0,
            }];
            let spec = BivariateHSpec::new(joint, comp.cdf_branch(), ybranch.clone())?;
            let lw = comp.ln_cdf_weight + ln_a1 - LN_2 - ln_gamma(m.p) - (mf + 1.0) * m.q.ln();
            acc.add(bivariate_h_eval_weighted(&spec, (comp.scale / c).ln(), ln_y, lw, &acc.next_opts(&opts))?);
        }
    }
    Ok(acc)
}

pub fn aber_af_quadrature(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    let q = LinkEnsemble {
        eval: crate::stats::EvalConfig {
            force_quadrature: true,
            ..ens.eval
        },
        ..ens.clone()
    };
    aber_from_cdf(m, |g| af_e2e_cdf(g, &q))
}

pub fn aber_af(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    ens.gain_const()?;
    if ens.eval.force_quadrature {
        return aber_af_quadrature(m, ens);
    }
    let h = af_aber_correction(m, ens)?;
    if !use_h(ens, "AF ABER", &h) {
        return aber_af_quadrature(m, ens);
    }
    clamp_probability(rf_aber(m, ens)? + h.value, "aber_af")
}

/// Cross term of the DF ABER: the error kernel averaged against F₁·F₂.
pub fn df_aber_cross(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<HSum> {
    ens.require_df()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let ln_beta = series.beta.ln();
    let joint = vec![JointParam {
        a: 1.0 - m.p,
        alpha: 1.0,
        beta: 1.0,
    }];
    let mut acc = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let xbranch = FoxHSpec::new(1, 1, vec![(1.0, 1.0)], vec![(mf + 1.0, 1.0), (0.0, 1.0)])?;
        for comp in &comps {
            let spec = BivariateHSpec::new(joint.clone(), xbranch.clone(), comp.cdf_spec())?;
            let lw = t.ln_weight + comp.ln_cdf_weight - LN_2 - ln_gamma(m.p);
            let ly = -(m.q * comp.scale).ln();
            acc.add(bivariate_h_eval_weighted(&spec, ln_beta - m.q.ln(), ly, lw, &acc.next_opts(&opts))?);
        }
    }
    Ok(acc)
}

pub fn aber_df_quadrature(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    aber_from_cdf(m, |g| df_e2e_cdf(g, ens))
}

pub fn aber_df(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    ens.require_df()?;
    if ens.eval.force_quadrature {
        return aber_df_quadrature(m, ens);
    }
    let x = df_aber_cross(m, ens)?;
    if !use_h(ens, "DF ABER", &x) {
        return aber_df_quadrature(m, ens);
    }
    clamp_probability(rf_aber(m, ens)? + optical_aber(m, ens)? - x.value, "aber_df")
}

pub fn aber(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    match ens.relay {
        RelayMode::FixedGainAf { .. } => aber_af(m, ens),
        RelayMode::Df => aber_df(m, ens),
    }
}

pub fn aber_af_asymptotic(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    ens.gain_const()?;
    Ok(cdf_asymptote(ens)?.aber(m))
}

pub fn aber_df_asymptotic(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    ens.require_df()?;
    Ok(cdf_asymptote(ens)?.aber(m))
}

pub fn aber_asymptotic(m: &ModulationSpec, ens: &LinkEnsemble) -> Result<f64> {
    Ok(cdf_asymptote(ens)?.aber(m))
}

// ------------------------------------------------------------------- ACC

/// Ergodic capacity (1/2)E[log₂(1+τγ)] of a density by direct quadrature.
pub fn capacity_from_pdf<F: FnMut(f64) -> Result<f64>>(
    tau: f64,
    mut pdf: F,
    lo: f64,
    hi: f64,
    breaks: &[f64],
) -> Result<f64> {
    let mut err = None;
    let f = |g: f64| match pdf(g) {
        Ok(v) => 0.5 * (tau * g).ln_1p() / LN_2 * v,
        Err(e) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let r = quad::integrate_log_axis(f, lo, hi, breaks, 1e-300, 1e-9);
    if let Some(e) = err {
        return Err(e);
    }
    if !r.converged {
        return Err(Error::Convergence {
            what: "capacity quadrature".into(),
            partial: r.value,
            bound: r.abs_err,
        });
    }
    Ok(r.value)
}

/// Integration range covering the end-to-end SNR density.
fn snr_support(ens: &LinkEnsemble) -> Result<(f64, f64, Vec<f64>)> {
    let hop = ens.rician()?;
    let opt = ens.optical()?;
    let (olo, ohi, mut breaks) = optical_support(&opt);
    let s = hop.k.sqrt() + 12.0;
    let rhi = (s * s + 60.0) / hop.beta();
    breaks.extend([1.0 / hop.beta(), (1.0 + hop.k) / hop.beta()]);
    Ok((olo.min(1e-12 / hop.beta()), ohi.min(rhi), breaks))
}

pub fn acc_quadrature(ens: &LinkEnsemble) -> Result<f64> {
    let tau = ens.detection.tau();
    let (lo, hi, breaks) = snr_support(ens)?;
    match ens.relay {
        RelayMode::FixedGainAf { .. } => capacity_from_pdf(tau, |g| af_pdf_quadrature(g, ens), lo, hi, &breaks),
        RelayMode::Df => capacity_from_pdf(tau, |g| df_e2e_pdf(g, ens), lo, hi, &breaks),
    }
}

/// x-branch of ln(1+τγ) written as an H-function.
fn log_branch() -> FoxHSpec {
    FoxHSpec::new(1, 2, vec![(1.0, 1.0), (1.0, 1.0)], vec![(1.0, 1.0), (0.0, 1.0)]).expect("valid spec")
}

pub fn acc_af_h(ens: &LinkEnsemble) -> Result<HSum> {
    let c = ens.gain_const()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let tau = ens.detection.tau();
    let ln_beta = series.beta.ln();
    let ln_y = tau.ln() - ln_beta;
    let mut acc = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let ybranch = FoxHSpec::new(
            1,
            2,
            vec![(1.0, 1.0), (mf + 2.0, 1.0)],
            vec![(mf + 2.0, 1.0), (mf + 1.0, 1.0)],
        )?;
        let ln_a1 = t.ln_weight + (mf + 1.0) * ln_beta;
        for comp in &comps {
            let joint = vec![JointParam {
                a: mf + 2.0,
                alpha: -1.0,
                beta: 1.0,
            }];
            let spec = BivariateHSpec::new(joint, comp.pdf_branch(), ybranch.clone())?;
            let lw = comp.ln_pdf_weight + ln_a1 - (2.0 * LN_2).ln() - (mf + 1.0) * tau.ln();
            acc.add(bivariate_h_eval_weighted(&spec, (comp.scale / c).ln(), ln_y, lw, &acc.next_opts(&opts))?);
        }
    }
    Ok(acc)
}

pub fn acc_af(ens: &LinkEnsemble) -> Result<f64> {
    ens.gain_const()?;
    if ens.eval.force_quadrature {
        return acc_quadrature(ens);
    }
    let h = acc_af_h(ens)?;
    if !use_h(ens, "AF ACC", &h) {
        return acc_quadrature(ens);
    }
    Ok(h.value.max(0.0))
}

/// Capacity of the RF hop alone from the gamma-mixture expansion.
pub fn rf_capacity(ens: &LinkEnsemble) -> Result<HSum> {
    let series = ens.series()?;
    let opts = ens.h_options();
    let tau = ens.detection.tau();
    let mut acc = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let spec = FoxHSpec::new(1, 3, vec![(-mf, 1.0), (1.0, 1.0), (1.0, 1.0)], vec![(1.0, 1.0), (0.0, 1.0)])?;
        let lw = t.ln_weight - (2.0 * LN_2).ln();
        acc.add(foxh_eval_weighted(&spec, (tau / series.beta).ln(), lw, &opts)?);
    }
    Ok(acc)
}

/// Capacity of the optical hop alone.
pub fn optical_capacity(ens: &LinkEnsemble) -> Result<HSum> {
    let opt = ens.optical()?;
    let opts = ens.h_options();
    let tau = ens.detection.tau();
    let mut acc = HSum::default();
    for c in optical_components(&opt) {
        let spec = FoxHSpec::new(
            3,
            1,
            vec![(0.0, 1.0), (1.0, c.k)],
            vec![(c.b, c.k), (0.0, c.k), (0.0, 1.0)],
        )?;
        let lw = c.ln_cdf_weight - (2.0 * LN_2).ln();
        acc.add(foxh_eval_weighted(&spec, -(c.scale * tau).ln(), lw, &opts)?);
    }
    Ok(acc)
}

/// Cross terms of the DF capacity: the RF density against the optical CDF
/// and the optical density against the RF CDF.
pub fn df_capacity_cross(ens: &LinkEnsemble) -> Result<(HSum, HSum)> {
    ens.require_df()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let tau = ens.detection.tau();
    let beta = series.beta;
    let ln2x2 = (2.0 * LN_2).ln();
    let mut rf_side = HSum::default();
    let mut opt_side = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let joint = vec![JointParam {
            a: -mf,
            alpha: 1.0,
            beta: 1.0,
        }];
        let ybranch = FoxHSpec::new(1, 1, vec![(1.0, 1.0)], vec![(mf + 1.0, 1.0), (0.0, 1.0)])?;
        for comp in &comps {
            let spec = BivariateHSpec::new(joint.clone(), log_branch(), comp.cdf_spec())?;
            let lw = t.ln_weight + comp.ln_cdf_weight - ln2x2;
            let h = bivariate_h_eval_weighted(
                &spec,
                (tau / beta).ln(),
                -(beta * comp.scale).ln(),
                lw,
                &rf_side.next_opts(&opts),
            )?;
            rf_side.add(h);

            let joint4 = vec![JointParam {
                a: 1.0 - comp.b,
                alpha: comp.k,
                beta: comp.k,
            }];
            let spec = BivariateHSpec::new(joint4, log_branch(), ybranch.clone())?;
            let lw = t.ln_weight + comp.ln_pdf_weight - ln2x2;
            let h = bivariate_h_eval_weighted(
                &spec,
                (tau * comp.scale).ln(),
                (beta * comp.scale).ln(),
                lw,
                &opt_side.next_opts(&opts),
            )?;
            opt_side.add(h);
        }
    }
    Ok((rf_side, opt_side))
}

pub fn acc_df(ens: &LinkEnsemble) -> Result<f64> {
    ens.require_df()?;
    if ens.eval.force_quadrature {
        return acc_quadrature(ens);
    }
    let c1 = rf_capacity(ens)?;
    let c2 = optical_capacity(ens)?;
    let (c3, c4) = df_capacity_cross(ens)?;
    let total = HSum {
        value: c1.value + c2.value - c3.value - c4.value,
        abs_err: c1.abs_err + c2.abs_err + c3.abs_err + c4.abs_err,
    };
    if !use_h(ens, "DF ACC", &total) {
        return acc_quadrature(ens);
    }
    Ok(total.value.max(0.0))
}

pub fn acc(ens: &LinkEnsemble) -> Result<f64> {
    match ens.relay {
        RelayMode::FixedGainAf { .. } => acc_af(ens),
        RelayMode::Df => acc_df(ens),
    }
}

// ------------------------------------------------------------- dispatch

/// Exact value of a metric.
pub fn evaluate(metric: &Metric, ens: &LinkEnsemble) -> Result<f64> {
    match metric {
        Metric::Outage { threshold } => outage(*threshold, ens),
        Metric::Aber(m) => aber(m, ens),
        Metric::Capacity => acc(ens),
    }
}

/// High-SNR asymptote of a metric; capacity has none.
pub fn evaluate_asymptotic(metric: &Metric, ens: &LinkEnsemble) -> Result<Option<f64>> {
    match metric {
        Metric::Outage { threshold } => outage_asymptotic(*threshold, ens).map(Some),
        Metric::Aber(m) => aber_asymptotic(m, ens).map(Some),
        Metric::Capacity => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::db_to_linear;
    use crate::stats::reference_ensemble;

    fn df() -> LinkEnsemble {
        reference_ensemble().with_relay(RelayMode::Df)
    }

    #[test]
    fn modulation_validation() {
        assert!(ModulationSpec::new(0.0, 1.0, "x").is_err());
        assert!(ModulationSpec::new(1.0, f64::NAN, "x").is_err());
        assert_eq!(ModulationSpec::preset("bpsk").unwrap(), ModulationSpec::bpsk());
        assert!(ModulationSpec::preset("qam").is_err());
    }

    #[test]
    fn diversity_orders() {
        let af = RelayMode::FixedGainAf { c: 1.0 };
        assert_eq!(diversity_order(&af, DetectionMode::IntensityModulation), 1.0);
        assert_eq!(diversity_order(&RelayMode::Df, DetectionMode::Heterodyne), 1.0);
        assert_eq!(diversity_order(&RelayMode::Df, DetectionMode::IntensityModulation), 0.5);
    }

    #[test]
    fn rf_aber_matches_quadrature() {
        let m = ModulationSpec::bpsk();
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = df().with_detection(mode);
            let hop = ens.rician().unwrap();
            let want = aber_from_cdf(&m, |g| hop.cdf(g)).unwrap();
            let got = rf_aber(&m, &ens).unwrap();
            assert!((got / want - 1.0).abs() < 1e-7, "{got} vs {want}");
        }
    }

    #[test]
    fn optical_aber_matches_quadrature() {
        let m = ModulationSpec::new(1.0, 0.5, "DPSK-like").unwrap();
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = df().with_detection(mode);
            let opt = ens.optical().unwrap();
            let want = aber_from_cdf(&m, |g| opt.cdf(g)).unwrap();
            let got = optical_aber(&m, &ens).unwrap();
            assert!((got - want).abs() < 1e-6 * want, "{got} vs {want}");
        }
    }

    #[test]
    fn df_aber_matches_quadrature() {
        let m = ModulationSpec::bpsk();
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = df().with_detection(mode);
            let want = aber_df_quadrature(&m, &ens).unwrap();
            let got = aber_df(&m, &ens).unwrap();
            assert!((got / want - 1.0).abs() < 1e-4, "{mode:?}: {got} vs {want}");
            assert!(df_aber_cross(&m, &ens).unwrap().trusted(ens.eval.fallback_rel));
            // The classical P1 + P2 - 2 P1 P2 combination is a different quantity.
            let (p1, p2) = (rf_aber(&m, &ens).unwrap(), optical_aber(&m, &ens).unwrap());
            assert!(((p1 + p2 - 2.0 * p1 * p2) / want - 1.0).abs() > 1e-3);
        }
    }

    #[test]
    fn df_capacity_matches_quadrature() {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = df().with_detection(mode);
            let want = acc_quadrature(&ens).unwrap();
            let got = acc_df(&ens).unwrap();
            assert!((got / want - 1.0).abs() < 1e-3, "{mode:?}: {got} vs {want}");
            let (c3, c4) = df_capacity_cross(&ens).unwrap();
            assert!(c3.trusted(ens.eval.fallback_rel) && c4.trusted(ens.eval.fallback_rel));
        }
    }

    #[test]
    fn single_hop_capacities_match_quadrature() {
        let ens = df();
        let tau = ens.detection.tau();
        let hop = ens.rician().unwrap();
        let opt = ens.optical().unwrap();
        let (lo, hi, br) = snr_support(&ens).unwrap();
        let rf = capacity_from_pdf(tau, |g| hop.pdf(g), lo, hi, &br).unwrap();
        let (olo, ohi, obr) = optical_support(&opt);
        let op = capacity_from_pdf(tau, |g| opt.pdf(g), olo, ohi, &obr).unwrap();
        let c1 = rf_capacity(&ens).unwrap().value;
        let c2 = optical_capacity(&ens).unwrap().value;
        assert!((c1 / rf - 1.0).abs() < 1e-6, "{c1} vs {rf}");
        assert!((c2 / op - 1.0).abs() < 1e-6, "{c2} vs {op}");
        // Bottleneck: min(γ₁, γ₂) never beats either hop.
        let c = acc_df(&ens).unwrap();
        assert!(c <= rf.min(op) + 1e-6);
    }

    #[test]
    fn af_aber_and_capacity_match_quadrature() {
        let m = ModulationSpec::bpsk();
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = reference_ensemble().with_detection(mode);
            let want = aber_af_quadrature(&m, &ens).unwrap();
            let got = aber_af(&m, &ens).unwrap();
            assert!((got / want - 1.0).abs() < 1e-4, "{mode:?} ABER: {got} vs {want}");
            assert!(af_aber_correction(&m, &ens).unwrap().trusted(ens.eval.fallback_rel));
            let want = acc_quadrature(&ens).unwrap();
            let got = acc_af(&ens).unwrap();
            assert!((got / want - 1.0).abs() < 1e-3, "{mode:?} ACC: {got} vs {want}");
            assert!(acc_af_h(&ens).unwrap().trusted(ens.eval.fallback_rel));
        }
    }

    #[test]
    fn rf_aber_asymptote_formula() {
        let m = ModulationSpec::bpsk();
        let ens = df().with_avg_snr_db(60.0);
        let hop = ens.rician().unwrap();
        let p = rf_cdf_asymptote(&ens).unwrap().aber(&m);
        let direct = hop.beta() * (-hop.k).exp() * gamma(1.5) / (2.0 * gamma(0.5));
        assert!((p / direct - 1.0).abs() < 1e-12);
    }

    #[test]
    fn collision_residues_stay_finite() {
        // Exponential component under heterodyne detection: both leading poles
        // coincide for the first series term.
        let r = correction_residues(0, 1.0, 1.0);
        let z: f64 = 1e-6;
        let v: f64 = r.iter().map(|&(c, e)| c * z.powf(e)).sum();
        assert!(v.is_finite() && v > 0.0);
        // Shifting b slightly must not change the sum materially.
        let r2 = correction_residues(0, 1.0 + 3e-6, 1.0);
        let v2: f64 = r2.iter().map(|&(c, e)| c * z.powf(e)).sum();
        assert!((v / v2 - 1.0).abs() < 1e-3, "{v} vs {v2}");
    }

    #[test]
    fn df_outage_asymptote_exponential_limit() {
        let mut ens = df().with_avg_snr_db(60.0);
        ens.egg.omega = 1.0;
        let opt = ens.optical().unwrap();
        let p = optical_cdf_asymptote(&ens).unwrap();
        let g = 1.4;
        assert!((p.eval(g) / (g / opt.scale_exp).powf(1.0 / opt.r()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asymptotes_track_exact_at_high_snr() {
        let m = ModulationSpec::bpsk();
        let gth = db_to_linear(1.5);
        for relay in [RelayMode::FixedGainAf { c: 1.3 }, RelayMode::Df] {
            for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
                let ens = reference_ensemble().with_relay(relay).with_detection(mode).with_avg_snr_db(60.0);
                let r = outage(gth, &ens).unwrap() / outage_asymptotic(gth, &ens).unwrap();
                assert!((r - 1.0).abs() < 0.1, "{relay:?} {mode:?} OP ratio {r}");
                let r = aber(&m, &ens).unwrap() / aber_asymptotic(&m, &ens).unwrap();
                assert!((r - 1.0).abs() < 0.1, "{relay:?} {mode:?} ABER ratio {r}");
            }
        }
    }

    #[test]
    fn outage_monotone_in_snr() {
        let gth = db_to_linear(1.5);
        let ens = df().with_detection(DetectionMode::IntensityModulation);
        let mut prev = 1.0;
        for i in 0..20 {
            let op = outage_df(gth, &ens.with_avg_snr_db(i as f64 * 2.0)).unwrap();
            assert!(op <= prev + 1e-15);
            prev = op;
        }
        assert!(outage_df(0.0, &ens).is_err());
    }

    #[test]
    fn curve_validation() {
        let mut c = MetricCurve {
            abscissa: vec![1.0, 2.0],
            unit: "dB".into(),
            exact: vec![0.1, 0.05],
            asymptotic: None,
            mc: Some(vec![(0.1, 0.01), (0.05, 0.01)]),
        };
        assert!(c.validate(true).is_ok());
        c.exact[1] = 1.5;
        assert!(c.validate(true).is_err());
        assert!(c.validate(false).is_ok());
        c.exact.pop();
        assert!(c.validate(false).is_err());
    }
}
