//! End-to-end SNR statistics for fixed-gain amplify-and-forward and
//! decode-and-forward relaying.

use crate::channel::{
    db_to_linear, EggParams, EggSnr, Geometry, DetectionMode, RfLinkParams, RicianHop, RicianSeries,
    SeriesTerm,
};
use crate::error::{invalid, Error, Result};
use crate::foxh::{bivariate_h_eval_weighted, BivariateHSpec, EvalOptions, FoxHSpec, HValue, JointParam};
use crate::quad;
use crate::specfun::ln_gamma;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelayMode {
    /// Fixed-gain amplify-and-forward; `c` = 1/(G²N₀₁).
    FixedGainAf { c: f64 },
    Df,
}

impl RelayMode {
    pub fn label(&self) -> &'static str {
        match self {
            RelayMode::FixedGainAf { .. } => "AF",
            RelayMode::Df => "DF",
        }
    }
}

/// Numerical knobs shared by the closed-form evaluators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Use direct quadrature instead of the H-function forms.
    pub force_quadrature: bool,
    /// Mixture mass the Rician series may leave out.
    pub series_tail: f64,
    /// Relative tolerance handed to the contour evaluator.
    pub h_rel_tol: f64,
    /// H-function results whose error estimate exceeds this fraction of the
    /// value are recomputed by quadrature.
    pub fallback_rel: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            force_quadrature: false,
            series_tail: 1e-10,
            h_rel_tol: 1e-9,
            fallback_rel: 1e-6,
        }
    }
}

/// Everything needed to evaluate the dual-hop link.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkEnsemble {
    pub geometry: Geometry,
    pub rf: RfLinkParams,
    pub egg: EggParams,
    pub detection: DetectionMode,
    /// Average SNR of the RF hop, linear.
    pub avg_snr1: f64,
    /// Average SNR of the optical hop, linear.
    pub avg_snr2: f64,
    pub relay: RelayMode,
    pub eval: EvalConfig,
}

impl LinkEnsemble {
    pub fn validate(&self) -> Result<()> {
        self.rf.validate()?;
        Geometry::new(self.geometry.h1, self.geometry.r1)?;
        EggParams::new(self.egg.omega, self.egg.lambda, self.egg.a, self.egg.b, self.egg.c)?;
        for (name, v) in [("avg_snr1", self.avg_snr1), ("avg_snr2", self.avg_snr2)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("{v} must be positive")));
            }
        }
        if let RelayMode::FixedGainAf { c } = self.relay {
            if !(c > 0.0) || !c.is_finite() {
                return Err(invalid("C", format!("relay gain constant {c} must be positive")));
            }
        }
        Ok(())
    }

    /// Copy with γ̄₁ = γ̄₂ set from decibels.
    pub fn with_avg_snr_db(&self, db: f64) -> Self {
        let g = db_to_linear(db);
        LinkEnsemble {
            avg_snr1: g,
            avg_snr2: g,
            ..self.clone()
        }
    }

    pub fn with_geometry(&self, geometry: Geometry) -> Self {
        LinkEnsemble {
            geometry,
            ..self.clone()
        }
    }

    pub fn with_relay(&self, relay: RelayMode) -> Self {
        LinkEnsemble { relay, ..self.clone() }
    }

    pub fn with_detection(&self, detection: DetectionMode) -> Self {
        LinkEnsemble {
            detection,
            ..self.clone()
        }
    }

    pub fn rician(&self) -> Result<RicianHop> {
        RicianHop::new(&self.geometry, &self.rf, self.avg_snr1)
    }

    pub fn optical(&self) -> Result<EggSnr> {
        EggSnr::new(&self.egg, self.detection, self.avg_snr2)
    }

    /// Gamma-mixture expansion of the RF hop, at least the configured order
    /// and long enough to meet the series tail budget.
    pub fn series(&self) -> Result<RicianSeries> {
        Ok(RicianSeries::with_budget(
            &self.rician()?,
            self.rf.series_order,
            self.eval.series_tail,
        ))
    }

    pub fn gain_const(&self) -> Result<f64> {
        match self.relay {
            RelayMode::FixedGainAf { c } => Ok(c),
            RelayMode::Df => Err(invalid("relay", "operation requires fixed-gain AF relaying")),
        }
    }

    pub(crate) fn require_df(&self) -> Result<()> {
        match self.relay {
            RelayMode::Df => Ok(()),
            _ => Err(invalid("relay", "operation requires DF relaying")),
        }
    }

    pub(crate) fn h_options(&self) -> EvalOptions {
        EvalOptions {
            rel_tol: self.eval.h_rel_tol,
            ..EvalOptions::default()
        }
    }
}

/// Slack for probabilities that leave [0, 1] through rounding.
pub const PROB_SLACK: f64 = 1e-6;

/// Snap values within `PROB_SLACK` of [0, 1] onto it; reject the rest.
pub fn clamp_probability(v: f64, what: &str) -> Result<f64> {
    if v.is_nan() {
        return Err(Error::Consistency(format!("{what}: NaN")));
    }
    if v < -PROB_SLACK || v > 1.0 + PROB_SLACK {
        return Err(Error::Consistency(format!("{what}: value {v:e} outside [0, 1]")));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// One mixture component of the optical-hop SNR in Mellin-Barnes form.
/// The CDF of the component is `cdf_weight · H^{1,1}_{1,2}[γ/scale | (1,k); (b,k),(0,k)]`
/// and its density `(pdf_weight/γ) · H^{1,0}_{0,1}[γ/scale | (b,k)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OpticalComponent {
    pub ln_cdf_weight: f64,
    pub ln_pdf_weight: f64,
    pub scale: f64,
    pub k: f64,
    pub b: f64,
}

pub(crate) fn optical_components(opt: &EggSnr) -> Vec<OpticalComponent> {
    let r = opt.r();
    let mut out = Vec::with_capacity(2);
    if opt.egg.omega > 0.0 {
        out.push(OpticalComponent {
            ln_cdf_weight: (opt.egg.omega * r).ln(),
            ln_pdf_weight: opt.egg.omega.ln(),
            scale: opt.scale_exp,
            k: r,
            b: 1.0,
        });
    }
    if opt.egg.omega < 1.0 {
        let k = r / opt.egg.c;
        let w = (1.0 - opt.egg.omega).ln() - ln_gamma(opt.egg.a);
        out.push(OpticalComponent {
            ln_cdf_weight: w + k.ln(),
            ln_pdf_weight: w,
            scale: opt.scale_gg,
            k,
            b: opt.egg.a,
        });
    }
    out
}

impl OpticalComponent {
    /// Univariate CDF spec of the component.
    pub fn cdf_spec(&self) -> FoxHSpec {
        FoxHSpec::new(1, 1, vec![(1.0, self.k)], vec![(self.b, self.k), (0.0, self.k)]).expect("valid spec")
    }

    /// Branch built from the CDF kernel times Γ(1 + ξ).
    pub fn cdf_branch(&self) -> FoxHSpec {
        FoxHSpec::new(
            1,
            2,
            vec![(1.0 - self.b, self.k), (0.0, 1.0), (1.0, self.k)],
            vec![(0.0, self.k)],
        )
        .expect("valid spec")
    }

    /// Branch built from the density kernel times Γ(ξ).
    pub fn pdf_branch(&self) -> FoxHSpec {
        FoxHSpec::new(0, 2, vec![(1.0 - self.b, self.k), (1.0, 1.0)], vec![]).expect("valid spec")
    }
}

/// Running sum of H-function evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HSum {
    pub value: f64,
    pub abs_err: f64,
}

impl HSum {
    pub(crate) fn add(&mut self, h: HValue) {
        self.value += h.value;
        self.abs_err += h.abs_err;
    }

    /// Options for the next term: its absolute error only needs to be small
    /// next to what has been accumulated so far.
    pub(crate) fn next_opts(&self, base: &EvalOptions) -> EvalOptions {
        EvalOptions {
            abs_tol: 1e-3 * base.rel_tol * self.value.abs(),
            ..*base
        }
    }

    /// True when the accumulated error estimate is within `rel` of the value.
    pub fn trusted(&self, rel: f64) -> bool {
        self.abs_err.is_finite() && self.abs_err <= rel * self.value.abs() + 1e-14
    }
}

/// Series terms whose mixture mass is below this are skipped.
pub(crate) const NEGLIGIBLE_TERM: f64 = 1e-17;

/// ln of the Poisson mass carried by series term `m`; bounds the term's
/// contribution to any probability.
pub(crate) fn term_mass_ln(t: &SeriesTerm) -> f64 {
    t.ln_weight + ln_gamma(t.m as f64 + 1.0)
}

/// Non-negligible series terms, heaviest first.
pub(crate) fn terms_by_mass(series: &RicianSeries) -> Vec<&SeriesTerm> {
    let mut v: Vec<&SeriesTerm> = series
        .terms
        .iter()
        .filter(|t| term_mass_ln(t) >= NEGLIGIBLE_TERM.ln())
        .collect();
    v.sort_by(|a, b| term_mass_ln(b).total_cmp(&term_mass_ln(a)));
    v
}

fn af_joint(m: usize) -> Vec<JointParam> {
    vec![JointParam {
        a: m as f64 + 2.0,
        alpha: -1.0,
        beta: 1.0,
    }]
}

/// Second term of the AF CDF, F_AF = F₁ + 𝓘₁, via the bivariate H-function.
///
/// 𝓘₁ only sees the Rician tail above `g`, which the high-order series terms
/// carry. When 𝓘₁ is tiny the default truncation can dominate the result, so
/// terms are added until each left-out one is bounded well below the
/// relative tolerance.
pub fn af_cdf_correction(g: f64, ens: &LinkEnsemble) -> Result<HSum> {
    let c = ens.gain_const()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let ln_beta = series.beta.ln();
    let ln_y = -(ln_beta + g.ln());
    let mut acc = HSum::default();
    let add_term = |acc: &mut HSum, t: &SeriesTerm| -> Result<()> {
        let mf = t.m as f64;
        let ybranch = FoxHSpec::new(0, 1, vec![(1.0, 1.0)], vec![(mf + 1.0, 1.0)])?;
        let ln_a1 = t.ln_weight + (mf + 1.0) * ln_beta;
        for comp in &comps {
            let spec = BivariateHSpec::new(af_joint(t.m), comp.cdf_branch(), ybranch.clone())?;
            let lw = comp.ln_cdf_weight + ln_a1 + (mf + 1.0) * g.ln();
            acc.add(bivariate_h_eval_weighted(&spec, (comp.scale / c).ln(), ln_y, lw, &acc.next_opts(&opts))?);
        }
        Ok(())
    };
    let mut done = vec![false; series.terms.len()];
    for t in terms_by_mass(&series) {
        add_term(&mut acc, t)?;
        done[t.m] = true;
    }

    // Term m contributes at most its mass times P(X_m > g).
    let target = 0.1 * opts.rel_tol * acc.value.abs();
    let bound = |t: &SeriesTerm| term_mass_ln(t).exp() * crate::specfun::gamma_q(t.m as f64 + 1.0, series.beta * g).unwrap_or(1.0);
    let left_out = series.tail + series.terms.iter().filter(|t| !done[t.m]).map(bound).sum::<f64>();
    if left_out <= target || target == 0.0 {
        return Ok(acc);
    }
    let hop = ens.rician()?;
    let longer = RicianSeries::with_budget(&hop, series.order(), target);
    let per_term = target / longer.terms.len() as f64;
    let extra = longer.terms.iter().filter(|t| t.m >= done.len() || !done[t.m]).filter(|t| bound(t) > per_term);
    for t in extra {
        add_term(&mut acc, t)?;
    }
    log::debug!(
        "AF CDF correction: series extended to order {} (left-out bound {left_out:e})",
        longer.order()
    );
    Ok(acc)
}

/// Upper limit for integrals against the Rician density.
fn rician_upper(hop: &RicianHop) -> f64 {
    let s = hop.k.sqrt() + 12.0;
    (s * s + 60.0) / hop.beta()
}

/// 𝓘₁ by direct quadrature over the exact Rician density.
pub fn af_cdf_correction_quadrature(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    let c = ens.gain_const()?;
    let hop = ens.rician()?;
    let opt = ens.optical()?;
    let mut err = None;
    let mut f = |x: f64| match (opt.cdf(c * g / x), hop.pdf(x + g)) {
        (Ok(a), Ok(b)) => a * b,
        (Err(e), _) | (_, Err(e)) => {
            err.get_or_insert(e);
            0.0
        }
    };
    let hi = rician_upper(&hop);
    let lo = 1e-16 * hi;
    let breaks = [
        c * g / opt.scale_exp,
        c * g / opt.scale_gg,
        1.0 / hop.beta(),
        hop.k / hop.beta(),
    ];
    let r = quad::integrate_log_axis(&mut f, lo, hi, &breaks, 1e-300, 1e-11);
    if let Some(e) = err {
        return Err(e);
    }
    if !r.converged {
        return Err(Error::Convergence {
            what: "AF CDF quadrature".into(),
            partial: r.value,
            bound: r.abs_err,
        });
    }
    Ok(r.value + lo * hop.pdf(g)?)
}

fn check_snr(g: f64, what: &'static str) -> Result<()> {
    if !(g >= 0.0) || !g.is_finite() {
        return Err(crate::error::domain(what, format!("snr {g} must be >= 0")));
    }
    Ok(())
}

/// CDF of the fixed-gain AF end-to-end SNR.
pub fn af_e2e_cdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_snr(g, "af_e2e_cdf")?;
    ens.gain_const()?;
    if g == 0.0 {
        return Ok(0.0);
    }
    let f1 = ens.rician()?.cdf(g)?;
    let i1 = if ens.eval.force_quadrature {
        af_cdf_correction_quadrature(g, ens)?
    } else {
        let h = af_cdf_correction(g, ens)?;
        if h.trusted(ens.eval.fallback_rel) {
            h.value
        } else {
            log::warn!(
                "AF CDF at {g:.4e}: H-function error {:.2e} on {:.4e}; using quadrature",
                h.abs_err,
                h.value
            );
            af_cdf_correction_quadrature(g, ens)?
        }
    };
    clamp_probability(f1 + i1, "af_e2e_cdf")
}

/// Density of the AF end-to-end SNR via the bivariate H-function.
pub fn af_pdf_h(g: f64, ens: &LinkEnsemble) -> Result<HSum> {
    let c = ens.gain_const()?;
    let series = ens.series()?;
    let opt = ens.optical()?;
    let comps = optical_components(&opt);
    let opts = ens.h_options();
    let ln_beta = series.beta.ln();
    let ln_y = -(ln_beta + g.ln());
    let mut acc = HSum::default();
    for t in terms_by_mass(&series) {
        let mf = t.m as f64;
        let ybranch = FoxHSpec::new(0, 1, vec![(1.0, 1.0)], vec![(mf + 2.0, 1.0)])?;
        let ln_a1 = t.ln_weight + (mf + 1.0) * ln_beta;
        for comp in &comps {
            let spec = BivariateHSpec::new(af_joint(t.m), comp.pdf_branch(), ybranch.clone())?;
            let lw = comp.ln_pdf_weight + ln_a1 + mf * g.ln();
            acc.add(bivariate_h_eval_weighted(&spec, (comp.scale / c).ln(), ln_y, lw, &acc.next_opts(&opts))?);
        }
    }
    Ok(acc)
}

/// Range and breakpoints covering the optical-hop density on a log axis.
pub(crate) fn optical_support(opt: &EggSnr) -> (f64, f64, Vec<f64>) {
    let r = opt.r();
    let lo = 1e-30 * opt.scale_exp.min(opt.scale_gg);
    let hi = (opt.scale_exp * 60f64.powf(r)).max(opt.scale_gg * 3f64.powf(opt.r() / opt.egg.c) * 10.0);
    let mut breaks = vec![opt.scale_exp];
    let k = opt.r() / opt.egg.c;
    for j in -6..=3 {
        breaks.push(opt.scale_gg * (j as f64 * k).exp());
    }
    (lo, hi, breaks)
}

/// AF density by quadrature, conditioning on the optical SNR.
pub fn af_pdf_quadrature(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    let c = ens.gain_const()?;
    let hop = ens.rician()?;
    let opt = ens.optical()?;
    let (lo, hi, breaks) = optical_support(&opt);
    let mut err = None;
    let mut f = |x: f64| {
        let s = 1.0 + c / x;
        match (hop.pdf(g * s), opt.pdf(x)) {
            (Ok(a), Ok(b)) => s * a * b,
            (Err(e), _) | (_, Err(e)) => {
                err.get_or_insert(e);
                0.0
            }
        }
    };
    let r = quad::integrate_log_axis(&mut f, lo, hi, &breaks, 1e-300, 1e-11);
    if let Some(e) = err {
        return Err(e);
    }
    if !r.converged {
        return Err(Error::Convergence {
            what: "AF PDF quadrature".into(),
            partial: r.value,
            bound: r.abs_err,
        });
    }
    Ok(r.value)
}

/// Density of the fixed-gain AF end-to-end SNR.
pub fn af_e2e_pdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(crate::error::domain("af_e2e_pdf", format!("snr {g} must be > 0")));
    }
    ens.gain_const()?;
    if ens.eval.force_quadrature {
        return af_pdf_quadrature(g, ens);
    }
    let h = af_pdf_h(g, ens)?;
    if h.trusted(ens.eval.fallback_rel) {
        if h.value < -PROB_SLACK * h.value.abs().max(1.0) {
            return Err(Error::Consistency(format!("af_e2e_pdf: negative density {:e}", h.value)));
        }
        Ok(h.value.max(0.0))
    } else {
        log::warn!("AF PDF at {g:.4e}: H-function error {:.2e}; using quadrature", h.abs_err);
        af_pdf_quadrature(g, ens)
    }
}

/// CDF of the DF end-to-end SNR min(γ₁, γ₂).
pub fn df_e2e_cdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    check_snr(g, "df_e2e_cdf")?;
    ens.require_df()?;
    let f1 = ens.rician()?.cdf(g)?;
    let f2 = ens.optical()?.cdf(g)?;
    clamp_probability(f1 + f2 - f1 * f2, "df_e2e_cdf")
}

/// Density of the DF end-to-end SNR.
pub fn df_e2e_pdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    if !(g > 0.0) || !g.is_finite() {
        return Err(crate::error::domain("df_e2e_pdf", format!("snr {g} must be > 0")));
    }
    ens.require_df()?;
    let hop = ens.rician()?;
    let opt = ens.optical()?;
    let (f1, c1) = (hop.pdf(g)?, hop.cdf(g)?);
    let (f2, c2) = (opt.pdf(g)?, opt.cdf(g)?);
    Ok(f1 + f2 - f1 * c2 - f2 * c1)
}

/// End-to-end CDF for whichever relay mode the ensemble carries.
pub fn e2e_cdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    match ens.relay {
        RelayMode::FixedGainAf { .. } => af_e2e_cdf(g, ens),
        RelayMode::Df => df_e2e_cdf(g, ens),
    }
}

pub fn e2e_pdf(g: f64, ens: &LinkEnsemble) -> Result<f64> {
    match ens.relay {
        RelayMode::FixedGainAf { .. } => af_e2e_pdf(g, ens),
        RelayMode::Df => df_e2e_pdf(g, ens),
    }
}

/// Scenario used throughout the numerical section, with AF relaying.
pub fn reference_ensemble() -> LinkEnsemble {
    let egg = crate::channel::egg_table_lookup(crate::channel::Water::Thermal, 2.4, Some(0.05))
        .expect("shipped table row");
    let g = db_to_linear(15.0);
    LinkEnsemble {
        geometry: Geometry { h1: 1500.0, r1: 1200.0 },
        rf: RfLinkParams::default(),
        egg,
        detection: DetectionMode::Heterodyne,
        avg_snr1: g,
        avg_snr2: g,
        relay: RelayMode::FixedGainAf { c: 1.3 },
        eval: EvalConfig::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{egg_table_lookup, Water};
    use std::time::Instant;

    fn grid() -> Vec<f64> {
        (0..10).map(|i| 10f64.powf(-1.5 + 0.3 * i as f64)).collect()
    }

    #[test]
    fn af_correction_matches_quadrature() {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = reference_ensemble().with_detection(mode);
            for g in grid() {
                let t = Instant::now();
                let h = af_cdf_correction(g, &ens).unwrap();
                let dt = t.elapsed();
                let q = af_cdf_correction_quadrature(g, &ens).unwrap();
                assert!(
                    (h.value - q).abs() <= 1e-6 * q.abs() + 1e-12,
                    "{mode:?} g={g}: {} vs {q} ({dt:?})",
                    h.value
                );
            }
        }
    }

    #[test]
    fn af_correction_tiny_tail() {
        // At 0 dB the correction is ~1e-11 and lives in the far Rician tail.
        let ens = reference_ensemble().with_avg_snr_db(0.0);
        let g = db_to_linear(1.5);
        let h = af_cdf_correction(g, &ens).unwrap();
        let q = af_cdf_correction_quadrature(g, &ens).unwrap();
        assert!(q < 1e-9);
        assert!((h.value - q).abs() <= 1e-6 * q, "{} vs {q}", h.value);
    }

    #[test]
    fn af_pdf_matches_quadrature() {
        for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
            let ens = reference_ensemble().with_detection(mode);
            for g in grid() {
                let h = af_pdf_h(g, &ens).unwrap();
                let q = af_pdf_quadrature(g, &ens).unwrap();
                assert!((h.value - q).abs() <= 1e-6 * q.abs() + 1e-12, "{mode:?} g={g}: {} vs {q}", h.value);
            }
        }
    }

    #[test]
    fn af_cdf_small_argument() {
        let ens = reference_ensemble();
        assert!(af_e2e_cdf(1e-9, &ens).unwrap() < 1e-6);
        assert_eq!(af_e2e_cdf(0.0, &ens).unwrap(), 0.0);
        assert!(af_e2e_cdf(-1.0, &ens).is_err());
        assert!(af_e2e_cdf(1.0, &ens.with_relay(RelayMode::Df)).is_err());
    }

    #[test]
    fn af_pdf_is_derivative_of_cdf() {
        let ens = reference_ensemble().with_detection(DetectionMode::IntensityModulation);
        for i in 0..5 {
            let g = 10f64.powf(-1.0 + 3.0 * i as f64 / 4.0);
            let h = 1e-4 * g;
            let fd = (af_e2e_cdf(g + h, &ens).unwrap() - af_e2e_cdf(g - h, &ens).unwrap()) / (2.0 * h);
            let p = af_e2e_pdf(g, &ens).unwrap();
            assert!((fd - p).abs() <= 1e-4 * p + 1e-9, "g={g}: {fd} vs {p}");
        }
    }

    #[test]
    fn af_pdf_integrates_to_cdf_increment() {
        let ens = reference_ensemble();
        let (a, b) = (0.5, 4.0);
        let r = quad::adaptive(|g| af_e2e_pdf(g, &ens).unwrap(), a, b, 0.0, 1e-9, 1);
        let inc = af_e2e_cdf(b, &ens).unwrap() - af_e2e_cdf(a, &ens).unwrap();
        assert!((r.value - inc).abs() < 1e-7 * inc + r.abs_err, "{} vs {inc}", r.value);
        for i in 0..8 {
            let g = 10f64.powf(-4.0 + 7.0 * i as f64 / 7.0);
            assert!(af_e2e_pdf(g, &ens).unwrap() >= 0.0);
        }
    }

    #[test]
    fn af_cdf_bounds_and_series_order() {
        let ens = reference_ensemble();
        let hop = ens.rician().unwrap();
        let mut prev = 0.0;
        let ens40 = LinkEnsemble {
            rf: RfLinkParams {
                series_order: 40,
                ..ens.rf.clone()
            },
            eval: EvalConfig {
                series_tail: 1.0,
                ..ens.eval
            },
            ..ens.clone()
        };
        let ens30 = LinkEnsemble {
            eval: EvalConfig {
                series_tail: 1.0,
                ..ens.eval
            },
            ..ens.clone()
        };
        for i in 0..6 {
            let g = 10f64.powf(-2.0 + 4.0 * i as f64 / 5.0);
            let f = af_e2e_cdf(g, &ens).unwrap();
            assert!(f >= hop.cdf(g).unwrap() - 1e-12);
            assert!(f >= prev);
            prev = f;
            let d = (af_e2e_cdf(g, &ens40).unwrap() - af_e2e_cdf(g, &ens30).unwrap()).abs();
            assert!(d <= 1e-4, "g={g}: {d}");
        }
        assert!(af_e2e_cdf(1e5, &ens).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn df_identities() {
        let ens = reference_ensemble().with_relay(RelayMode::Df);
        let hop = ens.rician().unwrap();
        let opt = ens.optical().unwrap();
        assert_eq!(df_e2e_cdf(0.0, &ens).unwrap(), 0.0);
        let mut prev = 0.0;
        for i in 0..40 {
            let g = 10f64.powf(-3.0 + 5.0 * i as f64 / 39.0);
            let (f1, f2) = (hop.cdf(g).unwrap(), opt.cdf(g).unwrap());
            let f = df_e2e_cdf(g, &ens).unwrap();
            assert!((f - (1.0 - (1.0 - f1) * (1.0 - f2))).abs() < 1e-12);
            assert!(f >= f1.max(f2) - 1e-15 && f >= prev - 1e-15, "g={g}: {f} {prev}");
            prev = f;
            let h = 1e-5 * g;
            let fd = (df_e2e_cdf(g + h, &ens).unwrap() - df_e2e_cdf(g - h, &ens).unwrap()) / (2.0 * h);
            let p = df_e2e_pdf(g, &ens).unwrap();
            assert!((fd - p).abs() <= 1e-5 * p + 1e-12);
        }
        let r = quad::integrate_log_axis(|g| df_e2e_pdf(g, &ens).unwrap(), 1e-14, 1e5, &[1.0, 10.0, 30.0], 0.0, 1e-10);
        assert!((r.value - 1.0).abs() < 1e-6);
    }

    #[test]
    fn df_degenerate_exponentials() {
        let egg = EggParams::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        let mut ens = reference_ensemble().with_relay(RelayMode::Df);
        ens.egg = egg;
        ens.rf.k0_db = -200.0;
        ens.rf.k90_db = -200.0;
        let b1 = ens.rician().unwrap().beta();
        let b2 = 1.0 / ens.optical().unwrap().scale_exp;
        for &g in &[0.01, 0.3, 2.0] {
            let want = (b1 + b2) * (-(b1 + b2) * g as f64).exp();
            assert!((df_e2e_pdf(g, &ens).unwrap() / want - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn clamp_policy() {
        assert_eq!(clamp_probability(-5e-7, "x").unwrap(), 0.0);
        assert_eq!(clamp_probability(1.0 + 5e-7, "x").unwrap(), 1.0);
        assert!(clamp_probability(-1e-3, "x").is_err());
        assert!(clamp_probability(f64::NAN, "x").is_err());
    }

    #[test]
    fn strong_turbulence_rows() {
        for (w, bl) in [(Water::Salty, 16.5), (Water::Fresh, 16.5)] {
            let mut ens = reference_ensemble().with_detection(DetectionMode::IntensityModulation);
            ens.egg = egg_table_lookup(w, bl, None).unwrap();
            for &g in &[0.1, 1.41, 10.0] {
                let h = af_cdf_correction(g, &ens).unwrap();
                let q = af_cdf_correction_quadrature(g, &ens).unwrap();
                assert!((h.value - q).abs() <= 1e-5 * q + 1e-12, "{w:?} g={g}: {} vs {q}", h.value);
            }
        }
    }
}
