//! Physical-layer models of both hops: the air-to-ground Rician link with
//! elevation-dependent K-factor and path loss, and the mixture EGG
//! underwater optical link.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{domain, invalid, Error, Result};
use crate::foxh::{foxh_eval_weighted, EvalOptions, FoxHSpec};
use crate::specfun::{bessel_i_scaled, gamma_p, ln_gamma, marcum_q1};

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

/// UAV placement relative to the relay, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    pub h1: f64,
    pub r1: f64,
}

impl Geometry {
    pub fn new(h1: f64, r1: f64) -> Result<Self> {
        if !(h1 > 0.0) || !h1.is_finite() {
            return Err(invalid("h1", format!("altitude {h1} must be positive")));
        }
        if !(r1 > 0.0) || !r1.is_finite() {
            return Err(invalid("r1", format!("horizontal distance {r1} must be positive")));
        }
        Ok(Geometry { h1, r1 })
    }

    /// Geometry with elevation `theta` (radians) at horizontal distance r1.
    pub fn from_elevation(r1: f64, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < FRAC_PI_2) {
            return Err(invalid("theta", format!("elevation {theta} outside (0, pi/2)")));
        }
        Geometry::new(r1 * theta.tan(), r1)
    }

    /// Elevation angle in radians.
    pub fn theta(&self) -> f64 {
        self.h1.atan2(self.r1)
    }

    /// Slant range UAV to relay, meters.
    pub fn distance(&self) -> f64 {
        self.h1.hypot(self.r1)
    }
}

/// Modified-sigmoid line-of-sight probability
/// P(θ) = 1 / (1 + a·exp(-b(θ_deg - a))).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LosModel {
    pub a: f64,
    pub b: f64,
}

impl Default for LosModel {
    fn default() -> Self {
        LosModel::suburban()
    }
}

impl LosModel {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || !(b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(invalid("los_model", format!("constants ({a}, {b}) must be positive")));
        }
        Ok(LosModel { a, b })
    }

    pub fn suburban() -> Self {
        LosModel { a: 4.88, b: 0.43 }
    }

    pub fn urban() -> Self {
        LosModel { a: 9.61, b: 0.16 }
    }

    pub fn dense_urban() -> Self {
        LosModel { a: 12.08, b: 0.11 }
    }

    pub fn high_rise() -> Self {
        LosModel { a: 27.23, b: 0.08 }
    }

    /// Constants fitted so that the outage-optimal elevations of the
    /// reference sea-surface scenario match the reference optimum table.
    pub fn calibrated() -> Self {
        LosModel { a: 19.91, b: 0.087_47 }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "suburban" => Some(Self::suburban()),
            "urban" => Some(Self::urban()),
            "dense-urban" | "dense_urban" => Some(Self::dense_urban()),
            "high-rise" | "high_rise" => Some(Self::high_rise()),
            "calibrated" => Some(Self::calibrated()),
            _ => None,
        }
    }

    pub const PRESETS: [&'static str; 5] = ["suburban", "urban", "dense-urban", "high-rise", "calibrated"];

    fn check(theta: f64) -> Result<()> {
        if !(theta >= -1e-12 && theta <= FRAC_PI_2 + 1e-12) {
            return Err(domain("los_probability", format!("elevation {theta} outside [0, pi/2]")));
        }
        Ok(())
    }

    fn shape(&self, theta: f64) -> (f64, f64) {
        let e = (-self.b * (theta.to_degrees() - self.a)).exp();
        (1.0 / (1.0 + self.a * e), e)
    }

    pub fn probability(&self, theta: f64) -> Result<f64> {
        Self::check(theta)?;
        Ok(self.shape(theta).0)
    }

    /// dP/dθ per radian.
    pub fn derivative(&self, theta: f64) -> Result<f64> {
        Self::check(theta)?;
        let (p, e) = self.shape(theta);
        Ok(180.0 / PI * self.a * self.b * e * p * p)
    }
}

pub fn los_probability(theta: f64, model: &LosModel) -> Result<f64> {
    model.probability(theta)
}

/// Constants of the air-to-ground RF hop.
#[derive(Debug, Clone, PartialEq)]
pub struct RfLinkParams {
    pub path_loss_const: f64,
    pub a1: f64,
    pub b1: f64,
    pub k0_db: f64,
    pub k90_db: f64,
    pub series_order: usize,
    pub los: LosModel,
    /// Distance unit of the path-loss law, meters.
    pub ref_distance: f64,
}

impl Default for RfLinkParams {
    fn default() -> Self {
        RfLinkParams {
            path_loss_const: 1.0,
            a1: -1.5,
            b1: 3.5,
            k0_db: 5.0,
            k90_db: 15.0,
            series_order: 30,
            los: LosModel::default(),
            ref_distance: 1000.0,
        }
    }
}

impl RfLinkParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.path_loss_const > 0.0) {
            return Err(invalid("A", "path-loss constant must be positive"));
        }
        if !(self.ref_distance > 0.0) {
            return Err(invalid("ref_distance", "must be positive"));
        }
        if self.series_order == 0 {
            return Err(invalid("series_order", "must be at least 1"));
        }
        for v in [self.k0_db, self.k90_db, self.a1, self.b1] {
            if !v.is_finite() {
                return Err(invalid("rf", "non-finite link constant"));
            }
        }
        // P_LoS is monotone, so α is extremal at the endpoints.
        for th in [0.0, FRAC_PI_2] {
            let alpha = self.pathloss_exponent(th)?;
            if !(alpha > 0.0) {
                return Err(invalid("a1/b1", format!("path-loss exponent {alpha} <= 0 at elevation {th}")));
            }
        }
        Ok(())
    }

    /// ln-slope of K(θ) = K(0)·e^{b₂θ}.
    pub fn k_slope(&self) -> f64 {
        2.0 / PI * (db_to_linear(self.k90_db) / db_to_linear(self.k0_db)).ln()
    }

    pub fn k_factor(&self, theta: f64) -> f64 {
        db_to_linear(self.k0_db) * (self.k_slope() * theta).exp()
    }

    pub fn pathloss_exponent(&self, theta: f64) -> Result<f64> {
        Ok(self.a1 * self.los.probability(theta)? + self.b1)
    }

    pub fn pathloss_exponent_derivative(&self, theta: f64) -> Result<f64> {
        Ok(self.a1 * self.los.derivative(theta)?)
    }
}

/// Path loss A·(d/d_ref)^{α(θ)}.
pub fn pathloss(geom: &Geometry, rf: &RfLinkParams) -> Result<f64> {
    let alpha = rf.pathloss_exponent(geom.theta())?;
    Ok(rf.path_loss_const * (geom.distance() / rf.ref_distance).powf(alpha))
}

/// Per-geometry Rician hop quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RicianHop {
    pub k: f64,
    /// (1 + K)·L.
    pub vartheta: f64,
    pub avg_snr: f64,
}

impl RicianHop {
    pub fn new(geom: &Geometry, rf: &RfLinkParams, avg_snr: f64) -> Result<Self> {
        if !(avg_snr > 0.0) || !avg_snr.is_finite() {
            return Err(invalid("avg_snr1", format!("{avg_snr} must be positive")));
        }
        let k = rf.k_factor(geom.theta());
        let l = pathloss(geom, rf)?;
        Ok(RicianHop {
            k,
            vartheta: (1.0 + k) * l,
            avg_snr,
        })
    }

    /// ϑ/γ̄₁, the rate of the exponential envelope.
    pub fn beta(&self) -> f64 {
        self.vartheta / self.avg_snr
    }

    pub fn pdf(&self, g: f64) -> Result<f64> {
        if !(g >= 0.0) {
            return Err(domain("rician_snr_pdf", format!("snr {g} must be >= 0")));
        }
        let beta = self.beta();
        let x = 2.0 * (self.k * beta * g).sqrt();
        Ok(beta * (-self.k - beta * g + x).exp() * bessel_i_scaled(0, x)?)
    }

    pub fn cdf(&self, g: f64) -> Result<f64> {
        if !(g >= 0.0) {
            return Err(domain("rician_snr_cdf", format!("snr {g} must be >= 0")));
        }
        Ok(1.0 - marcum_q1((2.0 * self.k).sqrt(), (2.0 * self.beta() * g).sqrt())?)
    }

    /// Complementary CDF, accurate in the far tail.
    pub fn ccdf(&self, g: f64) -> Result<f64> {
        marcum_q1((2.0 * self.k).sqrt(), (2.0 * self.beta() * g).sqrt())
    }
}

pub fn rician_snr_pdf(g: f64, geom: &Geometry, rf: &RfLinkParams, avg_snr: f64) -> Result<f64> {
    RicianHop::new(geom, rf, avg_snr)?.pdf(g)
}

pub fn rician_snr_cdf(g: f64, geom: &Geometry, rf: &RfLinkParams, avg_snr: f64) -> Result<f64> {
    RicianHop::new(geom, rf, avg_snr)?.cdf(g)
}

/// One term a₁(m)·γ^m·e^{-βγ} of the gamma-mixture expansion of the Rician PDF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTerm {
    pub m: usize,
    /// Mixture weight ϖ_m = e^{-K} K^m / (m! Γ(m+1)).
    pub weight: f64,
    pub ln_weight: f64,
    /// a₁(m) = ϖ_m β^{m+1}.
    pub coeff: f64,
}

/// Gamma-mixture expansion of the Rician SNR density.
#[derive(Debug, Clone, PartialEq)]
pub struct RicianSeries {
    pub k: f64,
    pub beta: f64,
    pub terms: Vec<SeriesTerm>,
    /// Sup-norm CDF error: mixture mass beyond the last term.
    pub tail: f64,
}

/// Accuracy budget for the series CDF against the exact Marcum form.
pub const SERIES_CDF_BUDGET: f64 = 1e-3;

fn poisson_tail(k: f64, n: usize) -> f64 {
    // P(M > n) for M ~ Poisson(K) equals the regularized lower gamma P(n+1, K).
    gamma_p(n as f64 + 1.0, k).unwrap_or(1.0)
}

/// Smallest order whose truncation mass is at most `budget`.
pub fn series_order_for(k: f64, budget: f64) -> usize {
    let mut n = 0;
    while poisson_tail(k, n) > budget {
        n += 1;
    }
    n
}

impl RicianSeries {
    fn build(hop: &RicianHop, n: usize) -> Self {
        let k = hop.k;
        let beta = hop.beta();
        let terms = (0..=n)
            .map(|m| {
                let mf = m as f64;
                let ln_weight = -k + mf * k.ln() - 2.0 * ln_gamma(mf + 1.0);
                let weight = ln_weight.exp();
                SeriesTerm {
                    m,
                    weight,
                    ln_weight,
                    coeff: (ln_weight + (mf + 1.0) * beta.ln()).exp(),
                }
            })
            .collect();
        RicianSeries {
            k,
            beta,
            terms,
            tail: poisson_tail(k, n),
        }
    }

    /// Series with order at least `rf.series_order`, raised until the
    /// truncated mixture mass is below `budget`.
    pub fn with_budget(hop: &RicianHop, min_order: usize, budget: f64) -> Self {
        let n = min_order.max(series_order_for(hop.k, budget));
        if n > min_order {
            log::debug!("series order raised from {min_order} to {n} for K = {:.3}", hop.k);
        }
        RicianSeries::build(hop, n)
    }

    pub fn order(&self) -> usize {
        self.terms.len() - 1
    }

    /// Σ ϖ_m m! P(m+1, βγ), the CDF induced by the truncated series.
    pub fn cdf(&self, g: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mf = t.m as f64;
                (t.ln_weight + ln_gamma(mf + 1.0)).exp() * gamma_p(mf + 1.0, self.beta * g).unwrap_or(0.0)
            })
            .sum()
    }

    pub fn pdf(&self, g: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mf = t.m as f64;
                (t.ln_weight + (mf + 1.0) * self.beta.ln() + mf * g.ln() - self.beta * g).exp()
            })
            .sum()
    }
}

/// Gamma-mixture coefficients with the configured order; fails when the
/// truncation cannot meet the CDF budget.
pub fn rician_series_coeffs(rf: &RfLinkParams, geom: &Geometry, avg_snr: f64) -> Result<RicianSeries> {
    let hop = RicianHop::new(geom, rf, avg_snr)?;
    let s = RicianSeries::build(&hop, rf.series_order);
    if s.tail > SERIES_CDF_BUDGET {
        let rec = series_order_for(hop.k, SERIES_CDF_BUDGET);
        return Err(Error::Accuracy {
            msg: format!(
                "series order {} leaves CDF error {:.3e} at K = {:.3}; order {} meets {:.0e}",
                rf.series_order, s.tail, hop.k, rec, SERIES_CDF_BUDGET
            ),
            recommended: rec,
        });
    }
    Ok(s)
}

/// Mixture-EGG irradiance fading parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EggParams {
    pub omega: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Scintillation index as listed in the parameter table.
    pub sigma2: Option<f64>,
}

impl EggParams {
    pub fn new(omega: f64, lambda: f64, a: f64, b: f64, c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&omega) {
            return Err(invalid("omega", format!("{omega} outside [0, 1]")));
        }
        for (name, v) in [("lambda", lambda), ("a", a), ("b", b), ("c", c)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid("egg", format!("{name} = {v} must be positive")));
            }
        }
        Ok(EggParams {
            omega,
            lambda,
            a,
            b,
            c,
            sigma2: None,
        })
    }

    /// Irradiance density of the mixture.
    pub fn irradiance_pdf(&self, i: f64) -> f64 {
        if i <= 0.0 {
            return 0.0;
        }
        let e = self.omega / self.lambda * (-i / self.lambda).exp();
        let ac = self.a * self.c;
        let g = (1.0 - self.omega)
            * (self.c.ln() + (ac - 1.0) * i.ln() - ac * self.b.ln() - (i / self.b).powf(self.c) - ln_gamma(self.a))
                .exp();
        e + g
    }
}

/// 𝔼[Iⁿ] of the mixture for real n ≥ 0.
pub fn egg_moment(egg: &EggParams, n: f64) -> Result<f64> {
    if !(n >= 0.0) || !(egg.a + n / egg.c > 0.0) {
        return Err(domain("egg_moment", format!("order {n} invalid")));
    }
    let e = egg.omega * (n * egg.lambda.ln() + ln_gamma(n + 1.0)).exp();
    let g = (1.0 - egg.omega) * (n * egg.b.ln() + ln_gamma(egg.a + n / egg.c) - ln_gamma(egg.a)).exp();
    Ok(e + g)
}

pub fn scintillation_index(egg: &EggParams) -> f64 {
    let m1 = egg_moment(egg, 1.0).expect("first moment exists");
    let m2 = egg_moment(egg, 2.0).expect("second moment exists");
    m2 / (m1 * m1) - 1.0
}

/// Optical receiver type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DetectionMode {
    /// Heterodyne detection, r = 1.
    Heterodyne,
    /// Intensity modulation with direct detection, r = 2.
    IntensityModulation,
}

impl DetectionMode {
    pub fn r(&self) -> f64 {
        match self {
            DetectionMode::Heterodyne => 1.0,
            DetectionMode::IntensityModulation => 2.0,
        }
    }

    /// Capacity constant τ.
    pub fn tau(&self) -> f64 {
        match self {
            DetectionMode::Heterodyne => 1.0,
            DetectionMode::IntensityModulation => std::f64::consts::E / (2.0 * PI),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DetectionMode::Heterodyne => "HD",
            DetectionMode::IntensityModulation => "IM/DD",
        }
    }
}

impl FromStr for DetectionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace(['-', '_'], "/").as_str() {
            "HD" | "HETERODYNE" => Ok(DetectionMode::Heterodyne),
            "IM/DD" | "IMDD" | "IM" => Ok(DetectionMode::IntensityModulation),
            _ => Err(invalid("detection", format!("unknown mode '{s}' (HD or IM/DD)"))),
        }
    }
}

/// Average electrical SNR μ_r for a given average SNR γ̄₂ (linear).
pub fn mu_r(egg: &EggParams, mode: DetectionMode, avg_snr2: f64) -> f64 {
    match mode {
        DetectionMode::Heterodyne => avg_snr2,
        DetectionMode::IntensityModulation => {
            let den = 2.0 * egg.omega * egg.lambda * egg.lambda
                + egg.b * egg.b * (1.0 - egg.omega) * (ln_gamma(egg.a + 2.0 / egg.c) - ln_gamma(egg.a)).exp();
            avg_snr2 / den
        }
    }
}

/// Which evaluation route to use for the optical-hop CDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CdfPath {
    /// Exponential / regularized incomplete-gamma mixture.
    #[default]
    Elementary,
    /// Contour-integral H-function form.
    FoxH,
}

const LN_TINY: f64 = -30.0;

/// Regularized P(a, e^{lx}); keeps the x^a/Γ(a+1) behaviour when e^{lx} underflows.
fn gamma_p_ln(a: f64, lx: f64) -> Result<f64> {
    if lx < LN_TINY {
        Ok((a * lx - ln_gamma(a + 1.0)).exp())
    } else {
        gamma_p(a, lx.exp())
    }
}

/// Optical-hop SNR γ₂ = (I/𝔼[I])^r μ_r with its derived scales.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EggSnr {
    pub egg: EggParams,
    pub mode: DetectionMode,
    pub mu: f64,
    /// Scale of the exponential component, (λ/𝔼[I])^r μ_r.
    pub scale_exp: f64,
    /// Scale of the generalized-gamma component, (b/𝔼[I])^r μ_r.
    pub scale_gg: f64,
}

impl EggSnr {
    pub fn new(egg: &EggParams, mode: DetectionMode, avg_snr2: f64) -> Result<Self> {
        if !(avg_snr2 > 0.0) {
            return Err(invalid("avg_snr2", format!("{avg_snr2} must be positive")));
        }
        let mean = egg_moment(egg, 1.0)?;
        let mu = mu_r(egg, mode, avg_snr2);
        let r = mode.r();
        Ok(EggSnr {
            egg: *egg,
            mode,
            mu,
            scale_exp: (egg.lambda / mean).powf(r) * mu,
            scale_gg: (egg.b / mean).powf(r) * mu,
        })
    }

    pub fn r(&self) -> f64 {
        self.mode.r()
    }

    /// Exponent c/r of the generalized-gamma component in the SNR domain.
    pub fn gg_power(&self) -> f64 {
        self.egg.c / self.r()
    }

    pub fn cdf(&self, g: f64) -> Result<f64> {
        if !(g >= 0.0) {
            return Err(domain("egg_snr_cdf", format!("snr {g} must be >= 0")));
        }
        if g == 0.0 {
            return Ok(0.0);
        }
        let r = self.r();
        let e = -(-(g / self.scale_exp).powf(1.0 / r)).exp_m1();
        let gg = gamma_p_ln(self.egg.a, self.gg_power() * (g / self.scale_gg).ln())?;
        Ok(self.egg.omega * e + (1.0 - self.egg.omega) * gg)
    }

    /// 1 - F, computed without cancellation.
    pub fn ccdf(&self, g: f64) -> Result<f64> {
        if g <= 0.0 {
            return Ok(1.0);
        }
        let r = self.r();
        let e = (-(g / self.scale_exp).powf(1.0 / r)).exp();
        let lx = self.gg_power() * (g / self.scale_gg).ln();
        let gg = if lx < LN_TINY {
            1.0 - gamma_p_ln(self.egg.a, lx)?
        } else {
            crate::specfun::gamma_q(self.egg.a, lx.exp())?
        };
        Ok(self.egg.omega * e + (1.0 - self.egg.omega) * gg)
    }

    pub fn pdf(&self, g: f64) -> Result<f64> {
        if !(g > 0.0) {
            return Err(domain("egg_snr_pdf", format!("snr {g} must be > 0")));
        }
        let r = self.r();
        let ze = (g / self.scale_exp).powf(1.0 / r);
        let e = self.egg.omega / (r * g) * ze * (-ze).exp();
        let p = self.gg_power();
        let lz = p * (g / self.scale_gg).ln();
        let gg = (1.0 - self.egg.omega) * p / g * (self.egg.a * lz - lz.exp() - ln_gamma(self.egg.a)).exp();
        Ok(e + gg)
    }

    /// H-function specs of the CDF: exponential and generalized-gamma components.
    pub fn cdf_specs(&self) -> (FoxHSpec, FoxHSpec) {
        let r = self.r();
        let k = r / self.egg.c;
        (
            FoxHSpec::new(1, 1, vec![(1.0, r)], vec![(1.0, r), (0.0, r)]).expect("valid spec"),
            FoxHSpec::new(1, 1, vec![(1.0, k)], vec![(self.egg.a, k), (0.0, k)]).expect("valid spec"),
        )
    }

    /// CDF through the contour-integral representation.
    pub fn cdf_foxh(&self, g: f64) -> Result<f64> {
        if g == 0.0 {
            return Ok(0.0);
        }
        let r = self.r();
        let (se, sg) = self.cdf_specs();
        let opts = EvalOptions::default();
        let mut v = 0.0;
        if self.egg.omega > 0.0 {
            v += foxh_eval_weighted(&se, (g / self.scale_exp).ln(), (self.egg.omega * r).ln(), &opts)?.value;
        }
        if self.egg.omega < 1.0 {
            let w = ((1.0 - self.egg.omega) * r / self.egg.c).ln() - ln_gamma(self.egg.a);
            v += foxh_eval_weighted(&sg, (g / self.scale_gg).ln(), w, &opts)?.value;
        }
        Ok(v)
    }

    /// PDF through the contour-integral representation.
    pub fn pdf_foxh(&self, g: f64) -> Result<f64> {
        let r = self.r();
        let opts = EvalOptions::default();
        let se = FoxHSpec::new(1, 0, vec![], vec![(1.0, r)])?;
        let sg = FoxHSpec::new(1, 0, vec![], vec![(self.egg.a, r / self.egg.c)])?;
        let mut v = 0.0;
        if self.egg.omega > 0.0 {
            v += foxh_eval_weighted(&se, (g / self.scale_exp).ln(), (self.egg.omega / g).ln(), &opts)?.value;
        }
        if self.egg.omega < 1.0 {
            let w = ((1.0 - self.egg.omega) / g).ln() - ln_gamma(self.egg.a);
            v += foxh_eval_weighted(&sg, (g / self.scale_gg).ln(), w, &opts)?.value;
        }
        Ok(v)
    }

    pub fn cdf_via(&self, g: f64, path: CdfPath) -> Result<f64> {
        match path {
            CdfPath::Elementary => self.cdf(g),
            CdfPath::FoxH => self.cdf_foxh(g),
        }
    }
}

pub fn egg_snr_cdf(g: f64, egg: &EggParams, mode: DetectionMode, avg_snr2: f64, path: CdfPath) -> Result<f64> {
    EggSnr::new(egg, mode, avg_snr2)?.cdf_via(g, path)
}

pub fn egg_snr_pdf(g: f64, egg: &EggParams, mode: DetectionMode, avg_snr2: f64, path: CdfPath) -> Result<f64> {
    let s = EggSnr::new(egg, mode, avg_snr2)?;
    match path {
        CdfPath::Elementary => s.pdf(g),
        CdfPath::FoxH => s.pdf_foxh(g),
    }
}

/// Water type keying the parameter tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Water {
    Salty,
    Fresh,
    /// Fresh water with a temperature gradient.
    Thermal,
}

impl FromStr for Water {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "salty" | "salt" => Ok(Water::Salty),
            "fresh" => Ok(Water::Fresh),
            "thermal" => Ok(Water::Thermal),
            other => Err(Error::Lookup {
                key: other.to_string(),
                available: "salty, fresh, thermal".into(),
            }),
        }
    }
}

impl fmt::Display for Water {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Water::Salty => "salty",
            Water::Fresh => "fresh",
            Water::Thermal => "thermal",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EggRow {
    pub water: Water,
    pub bubble_level: f64,
    pub temp_gradient: Option<f64>,
    pub params: EggParams,
}

impl EggRow {
    pub fn key(&self) -> String {
        match self.temp_gradient {
            Some(t) => format!("({}, {}, {})", self.water, self.bubble_level, t),
            None => format!("({}, {}, none)", self.water, self.bubble_level),
        }
    }
}

/// Parameter table loaded from delimiter-separated text.
#[derive(Debug, Clone, PartialEq)]
pub struct EggTable {
    pub rows: Vec<EggRow>,
}

const SHIPPED_TABLE: &str = include_str!("../data/egg_tables.csv");

const COLUMNS: [&str; 9] = [
    "water",
    "bubble_level",
    "temp_gradient",
    "sigma2",
    "omega",
    "lambda",
    "a",
    "b",
    "c",
];

impl EggTable {
    pub fn shipped() -> &'static EggTable {
        static TABLE: OnceLock<EggTable> = OnceLock::new();
        TABLE.get_or_init(|| EggTable::parse(SHIPPED_TABLE).expect("shipped EGG table parses"))
    }

    pub fn shipped_text() -> &'static str {
        SHIPPED_TABLE
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            line: 0,
            msg: format!("{}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut header_seen = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !header_seen {
                if fields != COLUMNS {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("header must be '{}'", COLUMNS.join(",")),
                    });
                }
                header_seen = true;
                continue;
            }
            if fields.len() != COLUMNS.len() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected {} fields, found {}", COLUMNS.len(), fields.len()),
                });
            }
            let num = |i: usize| -> Result<f64> {
                fields[i].parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("column {} is not a number: '{}'", COLUMNS[i], fields[i]),
                })
            };
            let water: Water = fields[0].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("unknown water type '{}'", fields[0]),
            })?;
            let temp_gradient = if fields[2].is_empty() { None } else { Some(num(2)?) };
            let mut params = EggParams::new(num(4)?, num(5)?, num(6)?, num(7)?, num(8)?).map_err(|e| Error::Parse {
                line: line_no,
                msg: e.to_string(),
            })?;
            params.sigma2 = Some(num(3)?);
            rows.push(EggRow {
                water,
                bubble_level: num(1)?,
                temp_gradient,
                params,
            });
        }
        if !header_seen {
            return Err(Error::Parse {
                line: 0,
                msg: "missing header row".into(),
            });
        }
        Ok(EggTable { rows })
    }

    pub fn lookup(&self, water: Water, bubble_level: f64, temp_gradient: Option<f64>) -> Result<EggParams> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(1.0);
        self.rows
            .iter()
            .find(|r| {
                r.water == water
                    && close(r.bubble_level, bubble_level)
                    && match (r.temp_gradient, temp_gradient) {
                        (None, None) => true,
                        (Some(a), Some(b)) => close(a, b),
                        _ => false,
                    }
            })
            .map(|r| r.params)
            .ok_or_else(|| {
                let same: Vec<String> = self.rows.iter().filter(|r| r.water == water).map(EggRow::key).collect();
                let list = if same.is_empty() {
                    self.rows.iter().map(EggRow::key).collect::<Vec<_>>()
                } else {
                    same
                };
                Error::Lookup {
                    key: match temp_gradient {
                        Some(t) => format!("({water}, {bubble_level}, {t})"),
                        None => format!("({water}, {bubble_level}, none)"),
                    },
                    available: list.join(", "),
                }
            })
    }
}

pub fn egg_table_lookup(water: Water, bubble_level: f64, temp_gradient: Option<f64>) -> Result<EggParams> {
    EggTable::shipped().lookup(water, bubble_level, temp_gradient)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad;
    use approx::assert_relative_eq;

    fn row1() -> EggParams {
        egg_table_lookup(Water::Thermal, 2.4, Some(0.05)).unwrap()
    }

    fn scenario_rf() -> RfLinkParams {
        RfLinkParams {
            los: LosModel::calibrated(),
            ..RfLinkParams::default()
        }
    }

    #[test]
    fn geometry_derived_values() {
        let g = Geometry::new(1443.9, 500.0).unwrap();
        assert!((g.distance() - 1528.0).abs() < 0.1);
        assert!((g.theta().to_degrees() - 70.9).abs() < 0.05);
        assert!(Geometry::new(-1.0, 500.0).is_err());
        let g2 = Geometry::from_elevation(500.0, g.theta()).unwrap();
        assert_relative_eq!(g2.h1, 1443.9, max_relative = 1e-12);
    }

    #[test]
    fn los_examples() {
        let m = LosModel::default();
        assert!(m.probability(FRAC_PI_2).unwrap() >= 0.99);
        let p0 = LosModel::urban().probability(0.0).unwrap();
        // 1/(1 + 9.61 e^{0.16·9.61})
        assert_relative_eq!(p0, 0.021_872_621_233_283_41, max_relative = 1e-9);
        assert!(p0 <= 0.2);
        assert!(m.probability(0.0).unwrap() <= 0.2);
        for model in LosModel::PRESETS.iter().map(|n| LosModel::preset(n).unwrap()) {
            let mut prev = 0.0;
            for i in 0..100 {
                let p = model.probability(FRAC_PI_2 * i as f64 / 99.0).unwrap();
                assert!(p >= prev && (0.0..=1.0).contains(&p));
                prev = p;
            }
        }
        assert!(m.probability(2.0).is_err());
    }

    #[test]
    fn los_derivative_matches_finite_difference() {
        let m = LosModel::calibrated();
        for &th in &[0.2, 0.7, 1.1, 1.4] {
            let h = 1e-6;
            let fd = (m.probability(th + h).unwrap() - m.probability(th - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(m.derivative(th).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn pathloss_examples() {
        let rf = RfLinkParams {
            a1: 0.0,
            b1: 2.0,
            ref_distance: 1.0,
            ..RfLinkParams::default()
        };
        let g = Geometry::new(6.0, 8.0).unwrap();
        assert_relative_eq!(pathloss(&g, &rf).unwrap(), 100.0, max_relative = 1e-12);
        // With full line of sight the scenario exponent is a1 + b1 = 2.
        let rf = RfLinkParams {
            ref_distance: 1.0,
            los: LosModel::new(1e-9, 1.0).unwrap(),
            ..RfLinkParams::default()
        };
        let g = Geometry::new(1443.9, 500.0).unwrap();
        let alpha = rf.pathloss_exponent(g.theta()).unwrap();
        assert!((alpha - 2.0).abs() < 1e-8);
        assert_relative_eq!(pathloss(&g, &rf).unwrap(), g.distance().powf(alpha), max_relative = 1e-12);
    }

    #[test]
    fn pathloss_exponent_bounds() {
        let rf = scenario_rf();
        for i in 0..=50 {
            let a = rf.pathloss_exponent(FRAC_PI_2 * i as f64 / 50.0).unwrap();
            assert!(a >= rf.b1 + rf.a1 && a <= rf.b1);
        }
    }

    #[test]
    fn k_factor_log_linear() {
        let rf = RfLinkParams::default();
        assert_relative_eq!(rf.k_factor(0.0), db_to_linear(5.0), max_relative = 1e-14);
        assert_relative_eq!(rf.k_factor(FRAC_PI_2), db_to_linear(15.0), max_relative = 1e-13);
        let mut prev = 0.0;
        for i in 0..20 {
            let k = rf.k_factor(i as f64 * 0.08);
            assert!(k > prev);
            prev = k;
        }
    }

    #[test]
    fn rician_pdf_normalization_and_mean() {
        let rf = scenario_rf();
        let g = Geometry::new(1500.0, 1200.0).unwrap();
        let hop = RicianHop::new(&g, &rf, db_to_linear(15.0)).unwrap();
        let scale = 1.0 / hop.beta();
        let norm = quad::integrate_to_infinity(|x| hop.pdf(x).unwrap(), 0.0, scale, 0.0, 1e-10);
        assert!((norm.value - 1.0).abs() < 1e-6);
        let mean = quad::integrate_to_infinity(|x| x * hop.pdf(x).unwrap(), 0.0, scale, 0.0, 1e-10);
        let expect = hop.avg_snr / pathloss(&g, &rf).unwrap();
        assert_relative_eq!(mean.value, expect, max_relative = 1e-4);
    }

    #[test]
    fn rician_small_k_is_exponential() {
        let hop = RicianHop {
            k: 1e-12,
            vartheta: 2.0,
            avg_snr: 10.0,
        };
        for &x in &[0.1, 1.0, 7.0] {
            assert_relative_eq!(hop.pdf(x).unwrap(), 0.2 * (-0.2 * x as f64).exp(), max_relative = 1e-9);
        }
    }

    #[test]
    fn rician_cdf_consistency() {
        let rf = scenario_rf();
        let hop = RicianHop::new(&Geometry::new(1500.0, 1200.0).unwrap(), &rf, db_to_linear(15.0)).unwrap();
        assert_eq!(hop.cdf(0.0).unwrap(), 0.0);
        assert!(hop.cdf(1e6 / hop.beta()).unwrap() > 1.0 - 1e-12);
        for i in 1..=50 {
            let x = i as f64 * 0.06 / hop.beta();
            let h = 1e-5 * x;
            let fd = (hop.cdf(x + h).unwrap() - hop.cdf(x - h).unwrap()) / (2.0 * h);
            let p = hop.pdf(x).unwrap();
            assert!((fd - p).abs() <= 1e-5 * p + 1e-12, "x = {x}");
        }
    }

    fn series_sup_error(k: f64, n: usize) -> f64 {
        let hop = RicianHop {
            k,
            vartheta: 1.0 + k,
            avg_snr: 1.0,
        };
        let s = RicianSeries::build(&hop, n);
        let top = 10.0 / hop.beta() * (1.0 + k);
        (0..500)
            .map(|i| {
                let g = top * i as f64 / 499.0;
                (s.cdf(g) - hop.cdf(g).unwrap()).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn series_budget() {
        assert!(series_sup_error(db_to_linear(5.0), 30) <= 1e-3);
        assert!(series_sup_error(db_to_linear(10.0), 30) <= 1e-3);
        let hop = RicianHop {
            k: 1e-14,
            vartheta: 1.0,
            avg_snr: 1.0,
        };
        let s = RicianSeries::build(&hop, 1);
        for &g in &[0.5, 2.0] {
            assert!((s.cdf(g) + (-g as f64).exp_m1()).abs() < 1e-12);
        }
    }

    #[test]
    fn series_coeffs_reports_insufficient_order() {
        let rf = RfLinkParams::default();
        // Overhead geometry drives K toward 15 dB.
        let g = Geometry::new(10_000.0, 10.0).unwrap();
        match rician_series_coeffs(&rf, &g, 31.6) {
            Err(Error::Accuracy { recommended, .. }) => assert!(recommended > 30),
            other => panic!("expected accuracy error, got {other:?}"),
        }
        let rf = RfLinkParams {
            series_order: 80,
            ..rf
        };
        let s = rician_series_coeffs(&rf, &g, 31.6).unwrap();
        assert!(s.terms.iter().all(|t| t.coeff.is_finite() && t.coeff >= 0.0));
        let top = 10.0 / s.beta * (1.0 + s.k);
        assert!((0..100).all(|i| s.pdf(top * (i as f64 + 0.5) / 100.0) >= 0.0));
    }

    #[test]
    fn moments_match_quadrature() {
        let egg = row1();
        assert_relative_eq!(egg_moment(&egg, 0.0).unwrap(), 1.0, max_relative = 1e-14);
        for n in [1.0, 2.0] {
            let q = quad::integrate_log_axis(
                |i: f64| i.powf(n) * egg.irradiance_pdf(i),
                1e-12,
                60.0,
                &[0.5, 1.0, 1.2, 2.0],
                0.0,
                1e-12,
            );
            assert_relative_eq!(egg_moment(&egg, n).unwrap(), q.value, max_relative = 1e-8);
        }
    }

    #[test]
    fn scintillation_examples() {
        assert!((scintillation_index(&row1()) / 0.1484 - 1.0).abs() < 0.01);
        let s = egg_table_lookup(Water::Salty, 16.5, None).unwrap();
        assert_eq!((s.omega, s.lambda, s.a, s.b, s.c), (0.4951, 0.1368, 0.0161, 3.2033, 82.1030));
        assert!((scintillation_index(&s) / 1.1273 - 1.0).abs() < 0.01);
        let e = EggParams::new(1.0, 0.7, 1.0, 1.0, 1.0).unwrap();
        assert!((scintillation_index(&e) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn every_row_reproduces_declared_scintillation() {
        for row in &EggTable::shipped().rows {
            let s = scintillation_index(&row.params);
            let d = row.params.sigma2.unwrap();
            assert!((s / d - 1.0).abs() < 0.01, "{}: {s} vs {d}", row.key());
        }
    }

    #[test]
    fn every_row_has_near_unit_mean() {
        for row in &EggTable::shipped().rows {
            let m = egg_moment(&row.params, 1.0).unwrap();
            assert!((m - 1.0).abs() < 0.02, "{}: mean {m}", row.key());
        }
    }

    #[test]
    fn mu_r_examples() {
        let egg = row1();
        assert_eq!(mu_r(&egg, DetectionMode::Heterodyne, 10.0), 10.0);
        let e = EggParams::new(1.0, 1.0, 1.0, 1.0, 1.0).unwrap();
        assert_relative_eq!(mu_r(&e, DetectionMode::IntensityModulation, 10.0), 5.0, max_relative = 1e-14);
        let den = 2.0 * 0.2130 * 0.3291f64.powi(2)
            + 1.1817f64.powi(2) * 0.7870 * crate::specfun::gamma(1.4299 + 2.0 / 17.1984) / crate::specfun::gamma(1.4299);
        assert_relative_eq!(mu_r(&egg, DetectionMode::IntensityModulation, 10.0), 10.0 / den, max_relative = 1e-12);
        assert_relative_eq!(den, egg_moment(&egg, 2.0).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn table_lookup_examples() {
        let e = row1();
        assert_eq!((e.omega, e.lambda, e.a, e.b, e.c, e.sigma2), (0.2130, 0.3291, 1.4299, 1.1817, 17.1984, Some(0.1484)));
        let f = egg_table_lookup(Water::Fresh, 16.5, None).unwrap();
        assert_eq!((f.omega, f.lambda, f.a, f.b, f.c, f.sigma2), (0.5117, 0.1602, 0.0075, 2.9963, 216.8356, Some(1.0409)));
        let s = egg_table_lookup(Water::Salty, 7.1, None).unwrap();
        assert_eq!((s.omega, s.lambda, s.a, s.b, s.c, s.sigma2), (0.4344, 0.4747, 0.3935, 1.4506, 77.0245, Some(0.3111)));
        match egg_table_lookup(Water::Salty, 3.0, None) {
            Err(Error::Lookup { available, .. }) => {
                for bl in ["2.4", "4.7", "7.1", "16.5"] {
                    assert!(available.contains(bl));
                }
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn table_parse_errors() {
        assert!(EggTable::parse("water,bubble_level\n").is_err());
        let bad = "water,bubble_level,temp_gradient,sigma2,omega,lambda,a,b,c\nsalty,2.4,,x,0.1,0.1,1,1,1\n";
        match EggTable::parse(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn egg_cdf_paths_agree() {
        for water in [
            (Water::Thermal, 2.4, Some(0.05)),
            (Water::Salty, 16.5, None),
            (Water::Fresh, 16.5, None),
            (Water::Thermal, 4.7, Some(0.05)),
        ] {
            let egg = egg_table_lookup(water.0, water.1, water.2).unwrap();
            for mode in [DetectionMode::Heterodyne, DetectionMode::IntensityModulation] {
                let s = EggSnr::new(&egg, mode, 10.0).unwrap();
                for i in 0..100 {
                    let g = 10f64.powf(-3.0 + 5.0 * i as f64 / 99.0);
                    let a = s.cdf(g).unwrap();
                    let b = s.cdf_foxh(g).unwrap();
                    assert!((a - b).abs() < 1e-8, "{water:?} {mode:?} g={g}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn egg_cdf_limits_and_pdf() {
        let s = EggSnr::new(&row1(), DetectionMode::IntensityModulation, 10.0).unwrap();
        assert!(s.cdf(1e-12).unwrap() < 1e-6);
        assert!(s.cdf(1e4).unwrap() > 1.0 - 1e-12);
        let norm = quad::integrate_log_axis(|g| s.pdf(g).unwrap(), 1e-14, 1e4, &[1.0, 10.0], 0.0, 1e-10);
        assert!((norm.value - 1.0).abs() < 1e-6);
        for i in 1..=50 {
            let g = 0.4 * i as f64;
            let h = 1e-5 * g;
            let fd = (s.cdf(g + h).unwrap() - s.cdf(g - h).unwrap()) / (2.0 * h);
            let p = s.pdf(g).unwrap();
            assert!((fd - p).abs() <= 1e-5 * p + 1e-10, "g = {g}");
            assert_relative_eq!(s.pdf_foxh(g).unwrap(), p, max_relative = 1e-8);
        }
    }

    #[test]
    fn snr_mean_is_average_snr() {
        let egg = row1();
        let s = EggSnr::new(&egg, DetectionMode::Heterodyne, 7.0).unwrap();
        let m = quad::integrate_log_axis(|g| g * s.pdf(g).unwrap(), 1e-12, 1e3, &[1.0, 7.0], 0.0, 1e-11);
        assert_relative_eq!(m.value, 7.0, max_relative = 1e-6);
    }
}
