//! Monte Carlo estimates of the link metrics, used as an independent oracle
//! for the closed forms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::channel::{EggSnr, RicianHop};
use crate::error::{invalid, Result};
use crate::metrics::Metric;
use crate::stats::{LinkEnsemble, RelayMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McConfig {
    pub samples: u64,
    pub seed: u64,
    pub shards: usize,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            samples: 10_000_000,
            seed: 1,
            shards: 8,
        }
    }
}

impl McConfig {
    pub const MIN_SAMPLES: u64 = 10_000;

    pub fn validate(&self) -> Result<()> {
        if self.samples < Self::MIN_SAMPLES {
            return Err(invalid("samples", format!("{} < {}", self.samples, Self::MIN_SAMPLES)));
        }
        if self.shards == 0 || self.shards as u64 > self.samples {
            return Err(invalid("shards", format!("{} shards for {} samples", self.shards, self.samples)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub value: f64,
    pub stderr: f64,
    pub samples: u64,
}

/// One draw of the RF-hop SNR: |h|²·γ̄₁/L with unit-power Rician h.
pub fn sample_rician_snr<R: Rng + ?Sized>(hop: &RicianHop, rng: &mut R) -> f64 {
    let k = hop.k;
    let s = (0.5 / (1.0 + k)).sqrt();
    let re = (k / (1.0 + k)).sqrt() + s * rng.sample::<f64, _>(StandardNormal);
    let im = s * rng.sample::<f64, _>(StandardNormal);
    (re * re + im * im) * (1.0 + k) / hop.beta()
}

/// ln G for G ~ Gamma(shape, 1), valid for any positive shape. Small shapes
/// use G = G'·U^{1/shape} with G' ~ Gamma(shape + 1), kept in logs because
/// U^{1/shape} underflows for shapes near zero.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, boosted: &Gamma<f64>, rng: &mut R) -> f64 {
    let g = boosted.sample(rng).ln();
    if shape >= 1.0 {
        g
    } else {
        let u: f64 = rng.gen::<f64>();
        g + (1.0 - u).ln() / shape
    }
}

/// Sampler for the optical-hop SNR.
pub struct EggSampler {
    omega: f64,
    r: f64,
    ln_scale_exp: f64,
    ln_scale_gg: f64,
    gg_power: f64,
    shape: f64,
    boosted: Gamma<f64>,
}

impl EggSampler {
    pub fn new(opt: &EggSnr) -> Result<Self> {
        let a = opt.egg.a;
        let boosted_shape = if a >= 1.0 { a } else { a + 1.0 };
        let boosted = Gamma::new(boosted_shape, 1.0).map_err(|e| invalid("a", e.to_string()))?;
        Ok(EggSampler {
            omega: opt.egg.omega,
            r: opt.r(),
            ln_scale_exp: opt.scale_exp.ln(),
            ln_scale_gg: opt.scale_gg.ln(),
            gg_power: opt.r() / opt.egg.c,
            shape: a,
            boosted,
        })
    }

    /// Irradiance maps to SNR as scale·X^{r} (exponential part, X ~ Exp(1))
    /// or scale·G^{r/c} (generalized-gamma part).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if rng.gen::<f64>() < self.omega {
            let x: f64 = rng.sample(Exp1);
            (self.ln_scale_exp + self.r * x.ln()).exp()
        } else {
            let lg = ln_gamma_variate(self.shape, &self.boosted, rng);
            (self.ln_scale_gg + self.gg_power * lg).exp()
        }
    }
}

pub fn sample_egg_snr<R: Rng + ?Sized>(opt: &EggSnr, rng: &mut R) -> Result<f64> {
    Ok(EggSampler::new(opt)?.sample(rng))
}

/// Running mean and centered second moment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn merge(a: Moments, b: Moments) -> Moments {
        if a.n == 0 {
            return b;
        }
        if b.n == 0 {
            return a;
        }
        let n = a.n + b.n;
        let d = b.mean - a.mean;
        Moments {
            n,
            mean: a.mean + d * b.n as f64 / n as f64,
            m2: a.m2 + b.m2 + d * d * (a.n as f64 * b.n as f64 / n as f64),
        }
    }

    fn estimate(&self) -> McEstimate {
        let var = if self.n > 1 { self.m2 / (self.n - 1) as f64 } else { 0.0 };
        McEstimate {
            value: self.mean,
            stderr: (var / self.n as f64).sqrt(),
            samples: self.n,
        }
    }
}

fn metric_sample(metric: &Metric, g: f64, tau: f64) -> f64 {
    match metric {
        Metric::Outage { threshold } => {
            if g < *threshold {
                1.0
            } else {
                0.0
            }
        }
        Metric::Aber(m) => m.conditional_error(g),
        Metric::Capacity => 0.5 * (tau * g).ln_1p() / std::f64::consts::LN_2,
    }
}

fn run_shard(
    metrics: &[Metric],
    hop: &RicianHop,
    egg: &EggSampler,
    relay: RelayMode,
    tau: f64,
    seed: u64,
    shard: usize,
    n: u64,
) -> Vec<Moments> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(shard as u64);
    let mut acc = vec![Moments::default(); metrics.len()];
    for _ in 0..n {
        let g1 = sample_rician_snr(hop, &mut rng);
        let g2 = egg.sample(&mut rng);
        let g = match relay {
            RelayMode::FixedGainAf { c } => g1 * g2 / (g2 + c),
            RelayMode::Df => g1.min(g2),
        };
        for (a, m) in acc.iter_mut().zip(metrics) {
            a.push(metric_sample(m, g, tau));
        }
    }
    acc
}

/// Estimates several metrics from one set of end-to-end SNR draws. Shards use
/// independent ChaCha streams of the same seed and are merged in shard order,
/// so results depend only on (seed, shards).
pub fn estimate_metrics(metrics: &[Metric], ens: &LinkEnsemble, cfg: &McConfig) -> Result<Vec<McEstimate>> {
    cfg.validate()?;
    ens.validate()?;
    let hop = ens.rician()?;
    let egg = EggSampler::new(&ens.optical()?)?;
    let tau = ens.detection.tau();
    let per = cfg.samples / cfg.shards as u64;
    let extra = cfg.samples % cfg.shards as u64;
    let counts: Vec<u64> = (0..cfg.shards as u64).map(|s| per + u64::from(s < extra)).collect();
    let parts: Vec<Vec<Moments>> = std::thread::scope(|scope| {
        let handles: Vec<_> = counts
            .iter()
            .enumerate()
            .map(|(s, &n)| {
                let (hop, egg) = (&hop, &egg);
                scope.spawn(move || run_shard(metrics, hop, egg, ens.relay, tau, cfg.seed, s, n))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
    });
    Ok((0..metrics.len())
        .map(|i| {
            parts
                .iter()
                .fold(Moments::default(), |acc, p| Moments::merge(acc, p[i]))
                .estimate()
        })
        .collect())
}

pub fn estimate_metric(metric: &Metric, ens: &LinkEnsemble, cfg: &McConfig) -> Result<McEstimate> {
    Ok(estimate_metrics(std::slice::from_ref(metric), ens, cfg)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{egg_moment, egg_table_lookup, scintillation_index, Water};
    use crate::metrics::ModulationSpec;
    use crate::stats::reference_ensemble;

    fn cfg(samples: u64, seed: u64) -> McConfig {
        McConfig { samples, seed, shards: 4 }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(100, 1).validate().is_err());
        assert!(McConfig { shards: 0, ..cfg(20_000, 1) }.validate().is_err());
        assert!(McConfig::default().validate().is_ok());
    }

    #[test]
    fn rician_mean_and_cdf() {
        let ens = reference_ensemble();
        let hop = ens.rician().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_rician_snr(&hop, &mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let want = (1.0 + hop.k) / hop.beta();
        assert!((mean - want).abs() < 4.0 * sd / (n as f64).sqrt());
        for q in [0.05, 0.3, 0.7, 0.95] {
            let mut s = xs.clone();
            s.sort_by(f64::total_cmp);
            let x = s[(q * n as f64) as usize];
            let f = hop.cdf(x).unwrap();
            assert!((f - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt(), "{q}: {f}");
        }
    }

    #[test]
    fn rayleigh_limit_ks() {
        let mut ens = reference_ensemble();
        ens.rf.k0_db = -300.0;
        ens.rf.k90_db = -300.0;
        let hop = ens.rician().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50_000;
        let mut xs: Vec<f64> = (0..n).map(|_| sample_rician_snr(&hop, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let d = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = 1.0 - (-hop.beta() * x).exp();
                (f - i as f64 / n as f64).abs().max((f - (i + 1) as f64 / n as f64).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.63 / (n as f64).sqrt(), "KS {d}");
    }

    #[test]
    fn egg_moments_and_scintillation() {
        let egg = egg_table_lookup(Water::Thermal, 2.4, Some(0.05)).unwrap();
        let ens = reference_ensemble();
        let opt = ens.optical().unwrap();
        let s = EggSampler::new(&opt).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 400_000;
        // Back out the irradiance normalized by its mean.
        let r = opt.r();
        let xs: Vec<f64> = (0..n).map(|_| (s.sample(&mut rng) / opt.mu).powf(1.0 / r)).collect();
        let m1 = xs.iter().sum::<f64>() / n as f64;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        let e1 = egg_moment(&egg, 1.0).unwrap();
        let e2 = egg_moment(&egg, 2.0).unwrap() / (e1 * e1);
        let sd2 = (xs.iter().map(|x| (x * x - m2).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((m1 - 1.0).abs() < 0.005);
        assert!((m2 - e2).abs() < 4.0 * sd2 / (n as f64).sqrt(), "{m2} vs {e2}");
        assert!((m2 - 1.0 - scintillation_index(&egg)).abs() < 0.01);
    }

    #[test]
    fn egg_cdf_quantiles_tiny_shape() {
        for (w, bl) in [(Water::Fresh, 16.5), (Water::Salty, 16.5), (Water::Thermal, 2.4)] {
            let mut ens = reference_ensemble();
            ens.egg = egg_table_lookup(w, bl, if w == Water::Thermal { Some(0.20) } else { None }).unwrap();
            let opt = ens.optical().unwrap();
            let s = EggSampler::new(&opt).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let n = 100_000;
            let mut xs: Vec<f64> = (0..n).map(|_| s.sample(&mut rng)).collect();
            xs.sort_by(f64::total_cmp);
            for q in [0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98] {
                let x = xs[(q * n as f64) as usize];
                let f = opt.cdf(x).unwrap();
                assert!((f - q).abs() < 4.0 * (q * (1.0 - q) / n as f64).sqrt() + 1e-4, "{w:?} {q}: {f}");
            }
        }
    }

    #[test]
    fn deterministic_and_shard_consistent() {
        let ens = reference_ensemble();
        let m = [Metric::Outage { threshold: 1.41 }, Metric::Capacity];
        let a = estimate_metrics(&m, &ens, &cfg(40_000, 9)).unwrap();
        let b = estimate_metrics(&m, &ens, &cfg(40_000, 9)).unwrap();
        assert_eq!(a, b);
        let c = estimate_metrics(&m, &ens, &McConfig { shards: 3, ..cfg(40_000, 9) }).unwrap();
        for (x, y) in a.iter().zip(&c) {
            assert!((x.value - y.value).abs() < 4.0 * (x.stderr.hypot(y.stderr)));
            assert_eq!(y.samples, 40_000);
        }
    }

    #[test]
    fn degenerate_df_indicator() {
        let mut ens = reference_ensemble().with_relay(RelayMode::Df);
        // Nearly deterministic hops: huge K and a single narrow gamma component.
        ens.rf.k0_db = 90.0;
        ens.rf.k90_db = 90.0;
        ens.egg.omega = 0.0;
        ens.egg.a = 1e7;
        ens.egg.c = 1.0;
        let e = estimate_metric(&Metric::Outage { threshold: 1e-3 }, &ens, &cfg(20_000, 1)).unwrap();
        assert_eq!(e.value, 0.0);
        let e = estimate_metric(&Metric::Outage { threshold: 1e9 }, &ens, &cfg(20_000, 1)).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn conditional_error_matches_bit_simulation() {
        let ens = reference_ensemble().with_avg_snr_db(5.0);
        let m = ModulationSpec::bpsk();
        let hop = ens.rician().unwrap();
        let egg = EggSampler::new(&ens.optical().unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100_000;
        let (mut cond, mut bits) = (0.0, 0.0);
        for _ in 0..n {
            let (g1, g2) = (sample_rician_snr(&hop, &mut rng), egg.sample(&mut rng));
            let g = g1 * g2 / (g2 + 1.3);
            cond += m.conditional_error(g);
            // BPSK symbol +√(2γ) in unit-variance noise.
            let noise: f64 = rng.sample(StandardNormal);
            if (2.0 * g).sqrt() + noise < 0.0 {
                bits += 1.0;
            }
        }
        let (pc, pb) = (cond / n as f64, bits / n as f64);
        let se = (pb * (1.0 - pb) / n as f64).sqrt();
        assert!((pc - pb).abs() < 4.0 * se, "{pc} vs {pb}");
    }

    #[test]
    fn stderr_scales_with_samples() {
        let ens = reference_ensemble();
        let m = Metric::Outage { threshold: 3.0 };
        let a = estimate_metric(&m, &ens, &cfg(50_000, 2)).unwrap();
        let b = estimate_metric(&m, &ens, &cfg(200_000, 2)).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio - 2.0).abs() < 0.4, "{ratio}");
    }
}
