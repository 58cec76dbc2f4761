//! Fox H-function and the bivariate (EGBFHF) extension by direct
//! Mellin-Barnes contour quadrature.
//!
//! Univariate convention:
//!
//! ```text
//! H[z] = 1/(2πi) ∫ Θ(s) z^{-s} ds,
//! Θ(s) = Π_{j≤m} Γ(b_j + B_j s) Π_{j≤n} Γ(1 - a_j - A_j s)
//!        / (Π_{j>m} Γ(1 - b_j - B_j s) Π_{j>n} Γ(a_j + A_j s))
//! ```
//!
//! Bivariate convention (positive exponents):
//!
//! ```text
//! H[x, y] = 1/(2πi)² ∫∫ Π_k Γ(1 - a_k + α_k ξ + β_k η) θ_x(ξ) θ_y(η) x^ξ y^η dξ dη
//! ```
//!
//! where each branch θ is the univariate Θ with ξ = -s, so a univariate spec
//! used as a branch keeps its meaning.
//!
//! Every contour is a vertical line placed where all numerator gamma
//! arguments have positive real part; within that region the abscissa is
//! moved to the real-axis minimum of the integrand modulus (the saddle),
//! which keeps cancellation along the line small.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};
use crate::quad;
use crate::specfun::{ln_gamma, ln_gamma_c};

/// Parameters of a univariate H^{m,n}_{p,q}.
#[derive(Debug, Clone, PartialEq)]
pub struct FoxHSpec {
    pub m: usize,
    pub n: usize,
    /// (a_j, A_j), length p.
    pub upper: Vec<(f64, f64)>,
    /// (b_j, B_j), length q.
    pub lower: Vec<(f64, f64)>,
}

impl FoxHSpec {
    pub fn new(m: usize, n: usize, upper: Vec<(f64, f64)>, lower: Vec<(f64, f64)>) -> Result<Self> {
        if n > upper.len() {
            return Err(invalid("n", format!("n = {n} exceeds p = {}", upper.len())));
        }
        if m > lower.len() {
            return Err(invalid("m", format!("m = {m} exceeds q = {}", lower.len())));
        }
        for &(a, coef) in upper.iter().chain(lower.iter()) {
            if !a.is_finite() || !(coef > 0.0) || !coef.is_finite() {
                return Err(invalid(
                    "params",
                    format!("parameter ({a}, {coef}) must be finite with positive coefficient"),
                ));
            }
        }
        Ok(FoxHSpec { m, n, upper, lower })
    }

    pub fn p(&self) -> usize {
        self.upper.len()
    }

    pub fn q(&self) -> usize {
        self.lower.len()
    }

    /// Gamma factors in the variable s of the kernel z^{-s}.
    fn terms_s(&self) -> Vec<Term> {
        let mut t = Vec::with_capacity(self.p() + self.q());
        for (j, &(b, bb)) in self.lower.iter().enumerate() {
            if j < self.m {
                t.push(Term::num(b, bb, 0.0));
            } else {
                t.push(Term::den(1.0 - b, -bb, 0.0));
            }
        }
        for (j, &(a, aa)) in self.upper.iter().enumerate() {
            if j < self.n {
                t.push(Term::num(1.0 - a, -aa, 0.0));
            } else {
                t.push(Term::den(a, aa, 0.0));
            }
        }
        t
    }

    /// Gamma factors in the positive-exponent variable ξ = -s, placed on
    /// axis `axis` (0 or 1) of a bivariate kernel.
    fn terms_branch(&self, axis: usize) -> Vec<Term> {
        self.terms_s()
            .into_iter()
            .map(|t| {
                let c = -t.cu;
                if axis == 0 {
                    Term { cu: c, cv: 0.0, ..t }
                } else {
                    Term { cu: 0.0, cv: c, ..t }
                }
            })
            .collect()
    }

    fn key_bits(&self, out: &mut Vec<u64>) {
        out.push(self.m as u64);
        out.push(self.n as u64);
        out.push(self.upper.len() as u64);
        for &(a, b) in self.upper.iter().chain(self.lower.iter()) {
            out.push(a.to_bits());
            out.push(b.to_bits());
        }
    }
}

/// Vertical line separating the two pole families of a univariate spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contour {
    pub abscissa: f64,
    /// Rightmost pole of the left family (-inf when absent).
    pub left_pole: f64,
    /// Leftmost pole of the right family (+inf when absent).
    pub right_pole: f64,
}

/// Value of an H-function evaluation with its error bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    /// Quadrature plus truncation error estimate.
    pub abs_err: f64,
    /// Magnitude of the imaginary part of the raw contour integral.
    pub imag_residual: f64,
}

impl HValue {
    fn scaled(self, f: f64) -> HValue {
        HValue {
            value: self.value * f,
            abs_err: self.abs_err * f.abs(),
            imag_residual: self.imag_residual * f.abs(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Relative tolerance of the contour quadrature.
    pub rel_tol: f64,
    /// Integrate the full outer line of a bivariate integral instead of
    /// folding it with conjugate symmetry, exposing the imaginary residual.
    pub full_line: bool,
    pub use_cache: bool,
    /// Absolute error that is acceptable on the weighted result; lets terms
    /// that are small next to a running sum use a coarser grid.
    pub abs_tol: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            rel_tol: 1e-10,
            full_line: false,
            use_cache: true,
            abs_tol: 0.0,
        }
    }
}

/// One factor Γ(c0 + cu·u + cv·v)^{±1}.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Term {
    c0: f64,
    cu: f64,
    cv: f64,
    numer: bool,
}

impl Term {
    fn num(c0: f64, cu: f64, cv: f64) -> Term {
        Term { c0, cu, cv, numer: true }
    }
    fn den(c0: f64, cu: f64, cv: f64) -> Term {
        Term { c0, cu, cv, numer: false }
    }
    fn real_arg(&self, u: f64, v: f64) -> f64 {
        self.c0 + self.cu * u + self.cv * v
    }
    /// Contribution to the log-modulus on the real axis, with denominator
    /// arguments clamped so that zeros of 1/Γ do not attract the saddle search.
    fn real_log(&self, u: f64, v: f64) -> f64 {
        let x = self.real_arg(u, v);
        if self.numer {
            if x <= 0.0 {
                f64::INFINITY
            } else {
                ln_gamma(x)
            }
        } else {
            -ln_gamma(x.max(1.0))
        }
    }
    fn log(&self, u: Complex64, v: Complex64) -> Complex64 {
        let z = u * self.cu + v * self.cv + self.c0;
        let l = ln_gamma_c(z);
        if self.numer {
            l
        } else {
            -l
        }
    }
}

const T_START: f64 = 40.0;
const MAX_DOUBLINGS: usize = 10;

/// Interval of u where every numerator argument with nonzero u-coefficient is
/// positive at fixed v; returns the binding constraints' pole positions.
fn feasible_interval(terms: &[Term], v: f64) -> (f64, f64, f64) {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut fixed_min = f64::INFINITY;
    for t in terms.iter().filter(|t| t.numer) {
        let base = t.c0 + t.cv * v;
        if t.cu > 0.0 {
            lo = lo.max(-base / t.cu);
        } else if t.cu < 0.0 {
            hi = hi.min(-base / t.cu);
        } else {
            fixed_min = fixed_min.min(base);
        }
    }
    (lo, hi, fixed_min)
}

/// Sample-then-golden minimization of `f` over the open interval (lo, hi).
fn minimize_1d<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, scale: f64) -> (f64, f64) {
    const N: usize = 24;
    let mut xs: Vec<f64> = Vec::with_capacity(N + 1);
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            for i in 0..N {
                xs.push(lo + (hi - lo) * (i as f64 + 0.5) / N as f64);
            }
        }
        (true, false) => {
            for i in 0..N {
                xs.push(lo + scale * 10f64.powf(-3.0 + 6.0 * i as f64 / (N - 1) as f64));
            }
        }
        (false, true) => {
            for i in (0..N).rev() {
                xs.push(hi - scale * 10f64.powf(-3.0 + 6.0 * i as f64 / (N - 1) as f64));
            }
        }
        (false, false) => {
            for i in 0..=N {
                xs.push(scale * 100.0 * (2.0 * i as f64 / N as f64 - 1.0));
            }
        }
    }
    let fs: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    let mut best = 0;
    for i in 1..xs.len() {
        if fs[i] < fs[best] {
            best = i;
        }
    }
    let mut a = if best == 0 { lo.max(xs[0] - scale * 1e3) } else { xs[best - 1] };
    let mut b = if best + 1 == xs.len() {
        hi.min(xs[best] + scale * 1e3)
    } else {
        xs[best + 1]
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..48 {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = f(x2);
        }
    }
    let (xm, fm) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fm <= fs[best] {
        (xm, fm)
    } else {
        (xs[best], fs[best])
    }
}

fn max_coef(terms: &[Term], axis: usize) -> f64 {
    terms
        .iter()
        .map(|t| if axis == 0 { t.cu.abs() } else { t.cv.abs() })
        .fold(0.0, f64::max)
}

/// Exponential decay rate of the integrand modulus along an axis.
fn decay_rate(terms: &[Term], axis: usize) -> f64 {
    let net: f64 = terms
        .iter()
        .map(|t| {
            let c = if axis == 0 { t.cu.abs() } else { t.cv.abs() };
            if t.numer {
                c
            } else {
                -c
            }
        })
        .sum();
    0.5 * PI * net
}

fn breakpoints(t_max: f64, unit: f64, symmetric: bool) -> Vec<f64> {
    let mut pos = vec![0.0];
    let mut w = unit;
    while w < t_max {
        pos.push(w);
        w *= 2.0;
    }
    pos.push(t_max);
    if !symmetric {
        return pos;
    }
    let mut all: Vec<f64> = pos.iter().skip(1).rev().map(|x| -x).collect();
    all.extend(pos);
    all
}

fn cache() -> &'static Mutex<HashMap<Vec<u64>, HValue>> {
    static CACHE: OnceLock<Mutex<HashMap<Vec<u64>, HValue>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

const CACHE_CAPACITY: usize = 1 << 14;

fn cache_get(key: &[u64]) -> Option<HValue> {
    cache().lock().ok().and_then(|c| c.get(key).copied())
}

fn cache_put(key: Vec<u64>, v: HValue) {
    if let Ok(mut c) = cache().lock() {
        if c.len() >= CACHE_CAPACITY {
            c.clear();
        }
        c.insert(key, v);
    }
}

/// Check that the two pole families of `spec` admit a separating vertical
/// line and return the maximal-margin abscissa.
pub fn validate_spec(spec: &FoxHSpec) -> Result<Contour> {
    let terms = spec.terms_s();
    let (lo, hi, _) = feasible_interval(&terms, 0.0);
    if !(lo < hi) {
        return Err(Error::PoleCollision {
            left: lo,
            right: hi,
            detail: "left family Γ(b_j + B_j s) reaches past right family Γ(1 - a_j - A_j s)".into(),
        });
    }
    let abscissa = match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo + 1.0,
        (false, true) => hi - 1.0,
        (false, false) => 0.0,
    };
    Ok(Contour {
        abscissa,
        left_pole: lo,
        right_pole: hi,
    })
}

/// Evaluate H[z] for z > 0.
pub fn foxh_eval(spec: &FoxHSpec, z: f64) -> Result<HValue> {
    if !(z > 0.0) || !z.is_finite() {
        return Err(invalid("z", format!("argument {z} must be positive and finite")));
    }
    foxh_eval_weighted(spec, z.ln(), 0.0, &EvalOptions::default())
}

/// Evaluate e^{ln_weight}·H[e^{ln_z}], keeping every intermediate in log space.
pub fn foxh_eval_weighted(
    spec: &FoxHSpec,
    ln_z: f64,
    ln_weight: f64,
    opts: &EvalOptions,
) -> Result<HValue> {
    if !ln_z.is_finite() {
        return Err(invalid("z", "logarithm of argument must be finite"));
    }
    validate_spec(spec)?;
    let mut key = Vec::new();
    if opts.use_cache {
        key.push(1);
        spec.key_bits(&mut key);
        key.extend([ln_z.to_bits(), ln_weight.to_bits(), opts.rel_tol.to_bits()]);
        if let Some(v) = cache_get(&key) {
            return Ok(v);
        }
    }
    let terms = spec.terms_s();
    let v = line_integral_1d(&terms, -ln_z, ln_weight, opts.rel_tol, "foxh_eval")?;
    if opts.use_cache {
        cache_put(key, v);
    }
    Ok(v)
}

/// 1/(2πi) ∫ Π Γ(...) e^{s·lx + lw} ds over the saddle line of the admissible strip.
fn line_integral_1d(terms: &[Term], lx: f64, lw: f64, rel_tol: f64, what: &str) -> Result<HValue> {
    let (lo, hi, _) = feasible_interval(terms, 0.0);
    if !(lo < hi) {
        return Err(Error::PoleCollision {
            left: lo,
            right: hi,
            detail: what.to_string(),
        });
    }
    let sc = 1.0 / max_coef(terms, 0).max(1e-300);
    let phi = |s: f64| terms.iter().map(|t| t.real_log(s, 0.0)).sum::<f64>() + s * lx;
    let (sigma, phi0) = minimize_1d(phi, lo, hi, sc);
    let kappa = decay_rate(terms, 0) / sc;
    if !(kappa > 0.0) {
        return Err(Error::Convergence {
            what: format!("{what}: integrand does not decay along the contour"),
            partial: f64::NAN,
            bound: f64::INFINITY,
        });
    }
    let g = |w: f64| {
        let s = Complex64::new(sigma, w);
        let l: Complex64 = terms.iter().map(|t| t.log(s, Complex64::new(0.0, 0.0))).sum::<Complex64>()
            + s * lx
            - phi0;
        l.exp()
    };
    let modulus = |w: f64| {
        let s = Complex64::new(sigma, w);
        (terms.iter().map(|t| t.log(s, Complex64::new(0.0, 0.0)).re).sum::<f64>() + sigma * lx - phi0).exp()
    };
    let mut t_max = T_START * sc;
    let mut partial = f64::NAN;
    for _ in 0..=MAX_DOUBLINGS {
        let tail = (modulus(t_max) + modulus(-t_max)) / kappa;
        if tail > 1e-3 * rel_tol * sc && t_max < T_START * sc * 2f64.powi(MAX_DOUBLINGS as i32) {
            t_max *= 2.0;
            continue;
        }
        let pts = breakpoints(t_max, sc, true);
        let mut gm = g;
        let r = quad::adaptive_breaks(&mut gm, &pts, 1e-17 * sc, rel_tol, 4000);
        partial = r.value.re;
        let tol = rel_tol * r.value.norm() + 1e-15 * sc;
        if r.converged && tail <= tol.max(1e-17 * sc) * 10.0 {
            let f = (phi0 + lw).exp() / (2.0 * PI);
            let out = HValue {
                value: r.value.re,
                abs_err: r.abs_err + tail,
                imag_residual: r.value.im.abs(),
            };
            return Ok(out.scaled(f));
        }
        if !r.converged {
            break;
        }
        t_max *= 2.0;
    }
    let f = (phi0 + lw).exp() / (2.0 * PI);
    Err(Error::Convergence {
        what: format!("{what}: contour quadrature"),
        partial: partial * f,
        bound: f * (modulus(t_max) + modulus(-t_max)) / kappa,
    })
}

/// One joint parameter (a; α, β) contributing Γ(1 - a + α ξ + β η).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointParam {
    pub a: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Parameters of the bivariate H-function.
#[derive(Debug, Clone, PartialEq)]
pub struct BivariateHSpec {
    pub joint: Vec<JointParam>,
    pub branch_x: FoxHSpec,
    pub branch_y: FoxHSpec,
}

impl BivariateHSpec {
    pub fn new(joint: Vec<JointParam>, branch_x: FoxHSpec, branch_y: FoxHSpec) -> Result<Self> {
        for j in &joint {
            if !j.a.is_finite() || !j.alpha.is_finite() || !j.beta.is_finite() {
                return Err(invalid("joint", format!("non-finite joint parameter {j:?}")));
            }
        }
        Ok(BivariateHSpec {
            joint,
            branch_x,
            branch_y,
        })
    }

    fn terms(&self) -> Vec<Term> {
        let mut t: Vec<Term> = self
            .joint
            .iter()
            .map(|j| Term::num(1.0 - j.a, j.alpha, j.beta))
            .collect();
        t.extend(self.branch_x.terms_branch(0));
        t.extend(self.branch_y.terms_branch(1));
        t
    }

    fn key_bits(&self, out: &mut Vec<u64>) {
        out.push(self.joint.len() as u64);
        for j in &self.joint {
            out.extend([j.a.to_bits(), j.alpha.to_bits(), j.beta.to_bits()]);
        }
        self.branch_x.key_bits(out);
        self.branch_y.key_bits(out);
    }
}

/// Evaluate the bivariate H-function at x, y > 0.
pub fn bivariate_h_eval(spec: &BivariateHSpec, x: f64, y: f64) -> Result<HValue> {
    if !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(invalid("x, y", format!("arguments ({x}, {y}) must be positive and finite")));
    }
    bivariate_h_eval_weighted(spec, x.ln(), y.ln(), 0.0, &EvalOptions::default())
}

/// Candidate v values for the widest admissible u-interval.
fn widest_v(terms: &[Term], sv: f64) -> Vec<f64> {
    let num: Vec<&Term> = terms.iter().filter(|t| t.numer).collect();
    let mut bps = Vec::new();
    for (i, a) in num.iter().enumerate() {
        if a.cu == 0.0 {
            if a.cv != 0.0 {
                bps.push(-a.c0 / a.cv);
            }
            continue;
        }
        for b in &num[i + 1..] {
            let det = a.cu * b.cv - b.cu * a.cv;
            if b.cu != 0.0 && det != 0.0 {
                bps.push((b.cu * a.c0 - a.cu * b.c0) / det);
            }
        }
    }
    bps.retain(|v| v.is_finite());
    bps.sort_by(f64::total_cmp);
    bps.dedup();
    let mut out = vec![0.0];
    if let (Some(&lo), Some(&hi)) = (bps.first(), bps.last()) {
        let pad = sv.max(hi - lo);
        out.extend([lo - pad, lo - sv, hi + sv, hi + pad]);
    }
    out.extend(bps.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.extend(bps);
    out
}

/// Saddle of the real-axis log-modulus over the admissible polygon.
fn bivariate_saddle(terms: &[Term], lx: f64, ly: f64, su: f64, sv: f64) -> Result<(f64, f64, f64)> {
    let phi = |u: f64, v: f64| terms.iter().map(|t| t.real_log(u, v)).sum::<f64>() + u * lx + v * ly;
    // Width of the admissible u-interval at fixed v (negative when empty).
    let width = |v: f64| {
        let (lo, hi, fixed) = feasible_interval(terms, v);
        if fixed <= 0.0 {
            return -1.0;
        }
        let w = hi - lo;
        if w.is_nan() {
            -1.0
        } else {
            w.min(1e6)
        }
    };
    // Feasible v-range: the width is concave and piecewise linear in v with
    // breakpoints where two constraint lines cross, so its maximum sits at a
    // breakpoint (midpoints guard against pinched vertices), then find the
    // two roots.
    let (vbest, wbest) = widest_v(terms, sv)
        .into_iter()
        .map(|v| (v, width(v)))
        .fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if !(wbest > 0.0) {
        let (lo, hi, _) = feasible_interval(terms, vbest);
        return Err(Error::PoleCollision {
            left: lo,
            right: hi,
            detail: "bivariate contours admit no common line".into(),
        });
    }
    let edge = |dir: f64| -> f64 {
        let mut step = sv;
        let mut inside = vbest;
        let mut outside = vbest + dir * step;
        let mut n = 0;
        while width(outside) > 0.0 {
            inside = outside;
            step *= 2.0;
            outside = vbest + dir * step;
            n += 1;
            if n > 40 {
                return dir * f64::INFINITY;
            }
        }
        for _ in 0..80 {
            let mid = 0.5 * (inside + outside);
            if width(mid) > 0.0 {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        inside
    };
    let vlo = edge(-1.0);
    let vhi = edge(1.0);
    let inner = |v: f64| -> (f64, f64) {
        let (lo, hi, fixed) = feasible_interval(terms, v);
        if fixed <= 0.0 || !(lo < hi) {
            return (f64::NAN, f64::INFINITY);
        }
        minimize_1d(|u| phi(u, v), lo, hi, su)
    };
    let (vs, _) = minimize_1d(|v| inner(v).1, vlo, vhi, sv);
    let (us, phi0) = inner(vs);
    if !phi0.is_finite() {
        return Err(Error::PoleCollision {
            left: vlo,
            right: vhi,
            detail: "no finite saddle in the admissible region".into(),
        });
    }
    Ok((us, vs, phi0))
}

/// Evaluate e^{ln_weight}·H[e^{ln_x}, e^{ln_y}].
pub fn bivariate_h_eval_weighted(
    spec: &BivariateHSpec,
    ln_x: f64,
    ln_y: f64,
    ln_weight: f64,
    opts: &EvalOptions,
) -> Result<HValue> {
    if !ln_x.is_finite() || !ln_y.is_finite() {
        return Err(invalid("x, y", "logarithms of arguments must be finite"));
    }
    let mut key = Vec::new();
    if opts.use_cache {
        key.push(2);
        spec.key_bits(&mut key);
        key.extend([
            ln_x.to_bits(),
            ln_y.to_bits(),
            ln_weight.to_bits(),
            opts.rel_tol.to_bits(),
            opts.abs_tol.to_bits(),
            opts.full_line as u64,
        ]);
        if let Some(v) = cache_get(&key) {
            return Ok(v);
        }
    }
    let terms = spec.terms();
    let v = double_integral(&terms, ln_x, ln_y, ln_weight, opts)?;
    if opts.use_cache {
        cache_put(key, v);
    }
    Ok(v)
}

fn double_integral(terms: &[Term], lx: f64, ly: f64, lw: f64, opts: &EvalOptions) -> Result<HValue> {
    let su = 1.0 / max_coef(terms, 0).max(1e-300);
    let sv = 1.0 / max_coef(terms, 1).max(1e-300);
    let (us, vs, phi0) = bivariate_saddle(terms, lx, ly, su, sv)?;
    let ku = decay_rate(terms, 0);
    let kv = decay_rate(terms, 1);
    if !(ku > 0.0) || !(kv > 0.0) {
        return Err(Error::Convergence {
            what: format!(
                "bivariate H: no exponential decay along the {} axis",
                if ku > 0.0 { "y" } else { "x" }
            ),
            partial: f64::NAN,
            bound: f64::INFINITY,
        });
    }
    let saddle = Saddle { us, vs, phi0, ku, kv };
    if let Some(v) = trapezoid_double(terms, lx, ly, lw, opts, &saddle) {
        return Ok(v);
    }
    adaptive_double(terms, lx, ly, lw, opts, &saddle)
}

#[derive(Clone, Copy)]
struct Saddle {
    us: f64,
    vs: f64,
    phi0: f64,
    ku: f64,
    kv: f64,
}

/// Stirling power of the modulus along one axis at the saddle; the envelope
/// |t|^p e^{-k|t|} is decreasing beyond p/k.
fn stirling_power(terms: &[Term], axis: usize, us: f64, vs: f64) -> f64 {
    terms
        .iter()
        .filter(|t| if axis == 0 { t.cu != 0.0 } else { t.cv != 0.0 })
        .map(|t| {
            let p = t.real_arg(us, vs) - 0.5;
            if t.numer {
                p
            } else {
                -p
            }
        })
        .sum()
}

/// Distance from the saddle to the nearest pole along each axis.
fn pole_distances(terms: &[Term], us: f64, vs: f64) -> (f64, f64) {
    let (lo, hi, _) = feasible_interval(terms, vs);
    let swapped: Vec<Term> = terms
        .iter()
        .map(|t| Term { cu: t.cv, cv: t.cu, ..*t })
        .collect();
    let (vlo, vhi, _) = feasible_interval(&swapped, us);
    ((us - lo).min(hi - us), (vs - vlo).min(vhi - vs))
}

const MAX_TRAPEZOID_NODES: usize = 20_000_000;

/// Values on an integer grid, filled on demand in both directions.
struct GridLine<F: FnMut(i64) -> Complex64> {
    pos: Vec<Complex64>,
    neg: Vec<Complex64>,
    f: F,
}

impl<F: FnMut(i64) -> Complex64> GridLine<F> {
    fn new(f: F) -> Self {
        GridLine { pos: Vec::new(), neg: Vec::new(), f }
    }
    fn get(&mut self, i: i64) -> Complex64 {
        if i >= 0 {
            let k = i as usize;
            while self.pos.len() <= k {
                let n = self.pos.len() as i64;
                let v = (self.f)(n);
                self.pos.push(v);
            }
            self.pos[k]
        } else {
            let k = (-i - 1) as usize;
            while self.neg.len() <= k {
                let n = -(self.neg.len() as i64) - 1;
                let v = (self.f)(n);
                self.neg.push(v);
            }
            self.neg[k]
        }
    }
}

fn exp_or_zero(l: Complex64) -> Complex64 {
    if l.re < -745.0 {
        Complex64::new(0.0, 0.0)
    } else {
        l.exp()
    }
}

/// Tensor trapezoid rule on the saddle lines. Steps follow from the distance
/// to the nearest pole, so the discretization error is exponentially small;
/// the double-step subgrid gives the error estimate. Coupled factors must
/// satisfy |cu| = |cv|, so each depends on one grid index and the integrand
/// is a product of tabulated lines. Returns None when that structure is
/// missing, the grid would be impractical, or the estimate is not trusted.
fn trapezoid_double(
    terms: &[Term],
    lx: f64,
    ly: f64,
    lw: f64,
    opts: &EvalOptions,
    sd: &Saddle,
) -> Option<HValue> {
    let Saddle { us, vs, phi0, ku, kv } = *sd;
    let tol = opts.rel_tol.max(1e-13);
    let (du, dv) = pole_distances(terms, us, vs);
    if !(du > 0.0 && dv > 0.0) {
        return None;
    }
    let scale = (phi0 + lw).exp() / (4.0 * PI * PI);
    // Absolute target in units where the saddle modulus is one.
    let target = tol.max(opts.abs_tol / scale).min(1e-3);
    let depth = -target.ln() + 2.3;
    let raw_hu = 2.0 * PI * 0.8 * du.min(1e3) / depth;
    let raw_hv = 2.0 * PI * 0.8 * dv.min(1e3) / depth;
    let h = raw_hu.min(raw_hv);
    let mu = (raw_hu / h).floor().max(1.0) as i64;
    let mv = (raw_hv / h).floor().max(1.0) as i64;
    let hu = mu as f64 * h;
    let hv = mv as f64 * h;

    let u_only: Vec<Term> = terms.iter().copied().filter(|t| t.cv == 0.0).collect();
    let v_only: Vec<Term> = terms.iter().copied().filter(|t| t.cu == 0.0 && t.cv != 0.0).collect();
    let coupled: Vec<Term> = terms.iter().copied().filter(|t| t.cu != 0.0 && t.cv != 0.0).collect();
    if coupled
        .iter()
        .any(|t| ((t.cv / t.cu).abs() - 1.0).abs() > 1e-14)
    {
        return None;
    }
    // Index multipliers (per u-step, per v-step) of each coupled factor.
    let idx: Vec<(i64, i64)> = coupled
        .iter()
        .map(|t| (mu, if t.cv / t.cu > 0.0 { mv } else { -mv }))
        .collect();
    let mut tables: Vec<_> = coupled
        .iter()
        .map(|t| {
            let (re, step, numer) = (t.real_arg(us, vs), t.cu * h, t.numer);
            GridLine::new(move |n: i64| {
                let g = ln_gamma_c(Complex64::new(re, step * n as f64));
                exp_or_zero(if numer { g } else { -g })
            })
        })
        .collect();
    // |Γ(x+iy)| ≤ Γ(x) bounds the coupled factors when all are numerators.
    let coupled_bound = if coupled.iter().all(|t| t.numer) {
        coupled.iter().map(|t| ln_gamma(t.real_arg(us, vs))).sum::<f64>().exp()
    } else {
        f64::INFINITY
    };
    let a_star: Vec<f64> = coupled.iter().map(|t| -t.cv / t.cu).collect();
    let hump_u = (stirling_power(terms, 0, us, vs) / ku).max(0.0);
    let hump_v = (stirling_power(terms, 1, us, vs) / kv).max(0.0);
    let u_decay = decay_rate(&u_only, 0);
    let hump_u_only = if u_decay > 0.0 {
        (stirling_power(&u_only, 0, us, vs) / u_decay).max(0.0)
    } else {
        f64::INFINITY
    };
    let zero = Complex64::new(0.0, 0.0);
    let mut ucol = GridLine::new(|i: i64| {
        let uc = Complex64::new(us, i as f64 * hu);
        exp_or_zero(u_only.iter().map(|t| t.log(uc, zero)).sum::<Complex64>() + uc * lx)
    });
    let wu = ((0.5 / hu).ceil() as usize).max(3);
    let wv = ((0.5 / hv).ceil() as usize).max(3);
    let eps = 1e-5 * tol.max(1e-3 * target);

    let mut nodes = 0usize;
    let mut fine = zero;
    let mut coarse = zero;
    let mut abs = 0.0;
    let dirs: &[i64] = if opts.full_line { &[1, -1] } else { &[1] };
    for &jdir in dirs {
        let mut j = if jdir == 1 { 0 } else { -1 };
        let mut small_rows = 0usize;
        loop {
            let b = j as f64 * hv;
            let vc = Complex64::new(vs, b);
            let vp = v_only.iter().map(|t| t.log(zero, vc)).sum::<Complex64>() + vc * ly - phi0;
            let vmag = vp.re.exp();
            let vmag2 = vmag * vmag;
            let small_thr = (eps * ku) * (eps * ku);
            let lo_req = a_star.iter().map(|s| s * b).fold(-hump_u, f64::min);
            let hi_req = a_star.iter().map(|s| s * b).fold(hump_u, f64::max);
            let mut rf = zero;
            let mut rc = zero;
            let mut ra = 0.0;
            for idir in [1i64, -1] {
                let mut i = if idir == 1 { 0 } else { -1 };
                let mut small = 0usize;
                loop {
                    let uval = ucol.get(i);
                    let mut f = uval;
                    for (tab, &(ci, cj)) in tables.iter_mut().zip(&idx) {
                        f *= tab.get(i * ci + j * cj);
                    }
                    nodes += 1;
                    rf += f;
                    if i % 2 == 0 {
                        rc += f;
                    }
                    let m2 = f.norm_sqr() * vmag2;
                    ra += m2.sqrt();
                    if m2 < small_thr {
                        small += 1;
                    } else {
                        small = 0;
                    }
                    if small >= wu {
                        let a = i as f64 * hu;
                        let past = if idir == 1 { a >= hi_req } else { a <= lo_req };
                        let bounded = a.abs() >= hump_u_only
                            && uval.norm() * vmag * coupled_bound < eps * u_decay.max(1e-300);
                        if past || bounded {
                            break;
                        }
                    }
                    if nodes > MAX_TRAPEZOID_NODES {
                        return None;
                    }
                    i += idir;
                }
            }
            let ev = exp_or_zero(vp);
            let (mut rf, mut rc) = (rf * ev * hu, rc * ev * (2.0 * hu));
            if !(rf.re.is_finite() && rf.im.is_finite()) {
                return None;
            }
            // Half-line mode folds the conjugate rows in.
            let w = if !opts.full_line && j != 0 { 2.0 } else { 1.0 };
            if !opts.full_line {
                rf.im = 0.0;
                rc.im = 0.0;
            }
            fine += rf * w;
            if j % 2 == 0 {
                coarse += rc * w;
            }
            let ra = ra * hu;
            abs += ra * w;
            if ra < eps * kv {
                small_rows += 1;
            } else {
                small_rows = 0;
            }
            if b.abs() >= hump_v && small_rows >= wv {
                break;
            }
            j += jdir;
        }
    }
    let fine = fine * hv;
    let coarse = coarse * (2.0 * hv);
    let abs = abs * hv;
    let mag = fine.re.abs().max(1e-300);
    let diff = (fine - coarse).norm();
    // Discretization error scales with the mass of |f|, not with the
    // (possibly cancelling) value; the fine-grid error is roughly the square
    // of the coarse one in those units.
    let mass = abs.max(mag);
    if diff > 1e-3 * mass {
        return None;
    }
    let err = 10.0 * diff * diff / mass + 1e-14 * mass + 10.0 * eps;
    Some(
        HValue {
            value: fine.re,
            abs_err: err,
            imag_residual: fine.im.abs(),
        }
        .scaled(scale),
    )
}


fn adaptive_double(terms: &[Term], lx: f64, ly: f64, lw: f64, opts: &EvalOptions, sd: &Saddle) -> Result<HValue> {
    let su = 1.0 / max_coef(terms, 0).max(1e-300);
    let sv = 1.0 / max_coef(terms, 1).max(1e-300);
    let Saddle { us, vs, phi0, ku, kv } = *sd;
    let u_only: Vec<Term> = terms.iter().copied().filter(|t| t.cv == 0.0).collect();
    let v_only: Vec<Term> = terms.iter().copied().filter(|t| t.cu == 0.0 && t.cv != 0.0).collect();
    let coupled: Vec<Term> = terms.iter().copied().filter(|t| t.cu != 0.0 && t.cv != 0.0).collect();
    let zero = Complex64::new(0.0, 0.0);
    let mut u_memo: HashMap<u64, Complex64> = HashMap::new();
    let mut u_part = |w: f64| -> Complex64 {
        *u_memo.entry(w.to_bits()).or_insert_with(|| {
            let u = Complex64::new(us, w);
            u_only.iter().map(|t| t.log(u, zero)).sum::<Complex64>() + u * lx
        })
    };
    let v_part = |w: f64| -> Complex64 {
        let v = Complex64::new(vs, w);
        v_only.iter().map(|t| t.log(zero, v)).sum::<Complex64>() + v * ly - phi0
    };
    let log_integrand = |u_part: &mut dyn FnMut(f64) -> Complex64, a: f64, vp: Complex64, b: f64| -> Complex64 {
        let u = Complex64::new(us, a);
        let v = Complex64::new(vs, b);
        u_part(a) + vp + coupled.iter().map(|t| t.log(u, v)).sum::<Complex64>()
    };

    let inner_tol = 0.1 * opts.rel_tol.max(1e-12);
    let outer_tol = opts.rel_tol.max(1e-11);
    let mut tu = T_START * su;
    let mut tv = T_START * sv;

    // Fix the inner truncation from the envelope along the saddle row.
    for _ in 0..MAX_DOUBLINGS {
        let vp = v_part(0.0);
        let edge = log_integrand(&mut u_part, tu, vp, 0.0).re.exp()
            + log_integrand(&mut u_part, -tu, vp, 0.0).re.exp();
        if edge / ku * su <= 1e-4 * inner_tol * su {
            break;
        }
        tu *= 2.0;
    }
    let upts = breakpoints(tu, su, true);
    let mut inner_err_total = 0.0;
    let mut inner_failed: Option<(f64, f64)> = None;
    let mut inner = |b: f64, err_acc: &mut f64, failed: &mut Option<(f64, f64)>| -> Complex64 {
        let vp = v_part(b);
        let mut f = |a: f64| log_integrand(&mut u_part, a, vp, b).exp();
        let r = quad::adaptive_breaks(&mut f, &upts, 1e-16 * su, inner_tol, 2000);
        let edge = f(tu).norm() + f(-tu).norm();
        *err_acc += r.abs_err + edge / ku;
        if !r.converged && failed.is_none() {
            *failed = Some((r.value.norm(), r.abs_err));
        }
        r.value
    };

    let mut last_partial = f64::NAN;
    for _ in 0..=MAX_DOUBLINGS {
        let mut err_acc = 0.0;
        let mut failed = None;
        let edge = inner(tv, &mut err_acc, &mut failed).norm()
            + if opts.full_line {
                inner(-tv, &mut err_acc, &mut failed).norm()
            } else {
                0.0
            };
        if edge / kv > 1e-4 * outer_tol * su * sv && tv < T_START * sv * 2f64.powi(MAX_DOUBLINGS as i32) {
            tv *= 2.0;
            continue;
        }
        let vpts = breakpoints(tv, sv, opts.full_line);
        // Per-node inner error, weighted later by the outer quadrature
        // through its own error estimate; accumulate for reporting.
        let mut inner_errs = 0.0;
        let mut g = |b: f64| inner(b, &mut inner_errs, &mut failed);
        let r = quad::adaptive_breaks(&mut g, &vpts, 1e-16 * su * sv, outer_tol, 2000);
        inner_err_total += inner_errs / r.evals.max(1) as f64 * 2.0 * tv;
        if let Some((val, bound)) = failed {
            inner_failed = Some((val, bound));
        }
        let total = if opts.full_line {
            r.value
        } else {
            Complex64::new(2.0 * r.value.re, 0.0)
        };
        last_partial = total.re;
        let tail = edge / kv;
        let scale = (phi0 + lw).exp() / (4.0 * PI * PI);
        if inner_failed.is_some() {
            break;
        }
        if !r.converged {
            return Err(Error::Convergence {
                what: "bivariate H: outer (y-axis) quadrature".into(),
                partial: total.re * scale,
                bound: r.abs_err * scale,
            });
        }
        let sym = if opts.full_line { 1.0 } else { 2.0 };
        let out = HValue {
            value: total.re,
            abs_err: sym * (r.abs_err + tail) + inner_err_total,
            imag_residual: total.im.abs(),
        };
        return Ok(out.scaled(scale));
    }
    let scale = (phi0 + lw).exp() / (4.0 * PI * PI);
    let bound = inner_failed.map(|f| f.1).unwrap_or(f64::INFINITY);
    Err(Error::Convergence {
        what: if inner_failed.is_some() {
            "bivariate H: inner (x-axis) quadrature".into()
        } else {
            "bivariate H: outer (y-axis) truncation".into()
        },
        partial: last_partial * scale,
        bound: bound * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::{gamma_p, lower_incomplete_gamma};
    use approx::assert_relative_eq;

    fn exp_kernel() -> FoxHSpec {
        FoxHSpec::new(1, 0, vec![], vec![(0.0, 1.0)]).unwrap()
    }

    fn cdf_exp_branch(r: f64) -> FoxHSpec {
        FoxHSpec::new(1, 1, vec![(1.0, r)], vec![(1.0, r), (0.0, r)]).unwrap()
    }

    fn cdf_gg_branch(a: f64, c: f64, r: f64) -> FoxHSpec {
        FoxHSpec::new(1, 1, vec![(1.0, r / c)], vec![(a, r / c), (0.0, r / c)]).unwrap()
    }

    #[test]
    fn validate_single_family() {
        let c = validate_spec(&exp_kernel()).unwrap();
        assert_eq!(c.left_pole, 0.0);
        assert!(c.abscissa > 0.0);
        assert!(c.right_pole.is_infinite());
    }

    #[test]
    fn validate_exponential_branch_gap() {
        let c = validate_spec(&cdf_exp_branch(1.0)).unwrap();
        assert_eq!(c.left_pole, -1.0);
        assert_eq!(c.right_pole, 0.0);
        assert!(c.abscissa > -1.0 && c.abscissa < 0.0);
    }

    #[test]
    fn validate_rejects_coincident_poles() {
        // Γ(s) and Γ(-s) both have a pole at s = 0.
        let spec = FoxHSpec::new(1, 1, vec![(1.0, 1.0)], vec![(0.0, 1.0)]).unwrap();
        match validate_spec(&spec) {
            Err(Error::PoleCollision { left, right, .. }) => {
                assert_eq!(left, 0.0);
                assert_eq!(right, 0.0);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
        // Interleaved families.
        let spec = FoxHSpec::new(1, 1, vec![(1.5, 1.0)], vec![(0.0, 1.0)]).unwrap();
        assert!(validate_spec(&spec).is_err());
    }

    #[test]
    fn structural_checks() {
        assert!(FoxHSpec::new(2, 0, vec![], vec![(0.0, 1.0)]).is_err());
        assert!(FoxHSpec::new(1, 0, vec![], vec![(0.0, -1.0)]).is_err());
    }

    #[test]
    fn exponential_kernel() {
        for &z in &[1e-6, 0.01, 1.0, 5.0, 30.0] {
            let h = foxh_eval(&exp_kernel(), z).unwrap();
            assert!((h.value - (-z as f64).exp()).abs() < 1e-10 * (-z as f64).exp().max(1e-3), "z = {z}: {h:?}");
        }
        let h = foxh_eval(&exp_kernel(), 1.0).unwrap();
        assert!((h.value - 0.367_879_4).abs() < 1e-7);
    }

    #[test]
    fn exponential_branch_cdf() {
        let h = foxh_eval(&cdf_exp_branch(2.0), 2.0).unwrap();
        let expect = 1.0 - (-(2f64.sqrt())).exp();
        assert!((2.0 * h.value - expect).abs() < 1e-10);
        assert!((expect - 0.756_883).abs() < 1e-6);
    }

    #[test]
    fn gg_branch_matches_incomplete_gamma() {
        let (a, c) = (1.4299, 17.1984);
        for &r in &[1.0, 2.0] {
            for &x in &[1e-3, 0.3, 0.9, 1.0, 1.1, 3.0] {
                let h = foxh_eval(&cdf_gg_branch(a, c, r), x).unwrap();
                let expect = gamma_p(a, x.powf(c / r)).unwrap();
                let got = h.value * r / (c * crate::specfun::gamma(a));
                assert!((got - expect).abs() < 1e-9, "r={r} x={x}: {got} vs {expect}");
            }
        }
        assert!(lower_incomplete_gamma(a, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn weighted_matches_plain() {
        let spec = cdf_exp_branch(1.0);
        let a = foxh_eval(&spec, 0.7).unwrap();
        let b = foxh_eval_weighted(&spec, 0.7f64.ln(), 3.0, &EvalOptions::default()).unwrap();
        assert_relative_eq!(a.value * 3f64.exp(), b.value, max_relative = 1e-14);
    }

    #[test]
    fn tighter_tolerance_within_error_estimate() {
        for spec in [cdf_exp_branch(2.0), cdf_gg_branch(0.0161, 82.103, 2.0), exp_kernel()] {
            for &z in &[0.05, 1.0, 4.0] {
                let coarse = foxh_eval_weighted(
                    &spec,
                    f64::ln(z),
                    0.0,
                    &EvalOptions { rel_tol: 1e-8, use_cache: false, ..Default::default() },
                )
                .unwrap();
                let fine = foxh_eval_weighted(
                    &spec,
                    f64::ln(z),
                    0.0,
                    &EvalOptions { rel_tol: 1e-13, use_cache: false, ..Default::default() },
                )
                .unwrap();
                assert!((coarse.value - fine.value).abs() <= coarse.abs_err.max(1e-15));
            }
        }
    }

    #[test]
    fn separable_bivariate() {
        let spec = BivariateHSpec::new(
            vec![],
            cdf_exp_branch(1.0),
            FoxHSpec::new(0, 1, vec![(1.0, 1.0)], vec![]).unwrap(),
        )
        .unwrap();
        for &(x, y) in &[(0.5, 2.0), (3.0, 0.4)] {
            let h = bivariate_h_eval(&spec, x, y).unwrap();
            let hx = foxh_eval(&cdf_exp_branch(1.0), x).unwrap().value;
            let expect = hx * (-1.0 / y as f64).exp();
            assert_relative_eq!(h.value, expect, max_relative = 1e-8);
        }
    }

    #[test]
    fn full_line_imaginary_residual() {
        let spec = BivariateHSpec::new(
            vec![JointParam { a: 2.0, alpha: -1.0, beta: 1.0 }],
            FoxHSpec::new(1, 2, vec![(0.0, 1.0), (0.0, 1.0), (1.0, 1.0)], vec![(0.0, 1.0)]).unwrap(),
            FoxHSpec::new(0, 1, vec![(1.0, 1.0)], vec![(1.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let opts = EvalOptions { full_line: true, use_cache: false, ..Default::default() };
        let h = bivariate_h_eval_weighted(&spec, 0.3f64.ln(), 2.0f64.ln(), 0.0, &opts).unwrap();
        assert!(h.imag_residual <= 1e-8 * h.value.abs());
        let folded = bivariate_h_eval(&spec, 0.3, 2.0).unwrap();
        assert_relative_eq!(h.value, folded.value, max_relative = 1e-7);
    }

    #[test]
    fn trapezoid_matches_adaptive() {
        // Coupled spec with a generalized-gamma x-branch.
        let spec = BivariateHSpec::new(
            vec![JointParam { a: 4.0, alpha: -1.0, beta: 1.0 }],
            FoxHSpec::new(1, 2, vec![(0.0, 1.0), (0.5, 0.5), (1.0, 1.0)], vec![(0.0, 1.0)]).unwrap(),
            FoxHSpec::new(0, 1, vec![(1.0, 1.0)], vec![(3.0, 1.0)]).unwrap(),
        )
        .unwrap();
        let terms = spec.terms();
        let opts = EvalOptions { use_cache: false, ..Default::default() };
        for &(lx, ly) in &[(-1.0, 0.5), (0.7, -2.0), (2.5, 1.5)] {
            let su = 1.0 / max_coef(&terms, 0);
            let sv = 1.0 / max_coef(&terms, 1);
            let (us, vs, phi0) = bivariate_saddle(&terms, lx, ly, su, sv).unwrap();
            let sd = Saddle { us, vs, phi0, ku: decay_rate(&terms, 0), kv: decay_rate(&terms, 1) };
            let t = trapezoid_double(&terms, lx, ly, 0.0, &opts, &sd).expect("trapezoid path applies");
            let a = adaptive_double(&terms, lx, ly, 0.0, &opts, &sd).unwrap();
            assert_relative_eq!(t.value, a.value, max_relative = 1e-7);
        }
    }
}
