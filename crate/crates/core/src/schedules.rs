//! Noise levels, step sizes and temperatures for the sampling template.
//!
//! A [`SamplerPlan`] holds the three coupled sequences `{σ_k}`, `{τ_k}`,
//! `{T_k}`. The builders here cover the classical presets (NCSN, VE-SDE,
//! DDPM written in template form) and the simplified rule `τ_k = ε σ_k²`
//! with a linear temperature ramp.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Decreasing sequence of positive noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule<F> {
    sigmas: Vec<F>,
}

impl<F: Scalar> NoiseSchedule<F> {
    pub fn new(sigmas: Vec<F>) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::config("noise schedule must contain at least one level"));
        }
        for (k, &s) in sigmas.iter().enumerate() {
            if !(s > F::zero()) || !s.is_finite() {
                return Err(Error::config(format!(
                    "noise level sigma_{k} = {s} must be positive and finite"
                )));
            }
        }
        if let Some(k) = sigmas.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::config(format!(
                "noise schedule must be non-increasing (sigma_{} < sigma_{})",
                k,
                k + 1
            )));
        }
        Ok(Self { sigmas })
    }

    pub fn sigmas(&self) -> &[F] {
        &self.sigmas
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn first(&self) -> F {
        self.sigmas[0]
    }

    pub fn last(&self) -> F {
        self.sigmas[self.sigmas.len() - 1]
    }

    pub fn into_inner(self) -> Vec<F> {
        self.sigmas
    }
}

fn check_bounds<F: Scalar>(sigma_max: F, sigma_min: F, steps: usize) -> Result<()> {
    if !(sigma_min > F::zero()) || !(sigma_max > sigma_min) || !sigma_max.is_finite() {
        return Err(Error::config(format!(
            "need sigma_max > sigma_min > 0, got sigma_max = {sigma_max}, sigma_min = {sigma_min}"
        )));
    }
    if steps < 2 {
        return Err(Error::config(format!("need at least 2 noise levels, got {steps}")));
    }
    Ok(())
}

/// `σ_k = σ_max (σ_min/σ_max)^{k/(K-1)}`: constant ratio between neighbours.
pub fn make_geometric_schedule<F: Scalar>(
    sigma_max: F,
    sigma_min: F,
    steps: usize,
) -> Result<NoiseSchedule<F>> {
    check_bounds(sigma_max, sigma_min, steps)?;
    let ratio = sigma_min / sigma_max;
    let last = F::from_usize_lossy(steps - 1);
    let mut sigmas: Vec<F> = (0..steps)
        .map(|k| sigma_max * ratio.powf(F::from_usize_lossy(k) / last))
        .collect();
    sigmas[steps - 1] = sigma_min;
    NoiseSchedule::new(sigmas)
}

/// Equally spaced levels from `sigma_max` down to `sigma_min`, inclusive.
pub fn make_linear_schedule<F: Scalar>(
    sigma_max: F,
    sigma_min: F,
    steps: usize,
) -> Result<NoiseSchedule<F>> {
    check_bounds(sigma_max, sigma_min, steps)?;
    let last = F::from_usize_lossy(steps - 1);
    let mut sigmas: Vec<F> = (0..steps)
        .map(|k| sigma_max + (sigma_min - sigma_max) * (F::from_usize_lossy(k) / last))
        .collect();
    sigmas[steps - 1] = sigma_min;
    NoiseSchedule::new(sigmas)
}

/// Parameters of the sigmoid-shaped schedule that matches only the two
/// endpoint noise levels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmoidScheduleParams<F> {
    /// Stiffness of the transition.
    pub zeta: F,
    pub c_start: F,
    pub c_end: F,
    pub sigma_first: F,
    pub sigma_last: F,
    pub steps: usize,
}

fn logistic<F: Scalar>(z: F) -> F {
    F::one() / (F::one() + (-z).exp())
}

/// `logistic(a) - logistic(b)` for `a >= b`, taken from the upper tail
/// when both arguments are positive so saturation does not cancel it.
fn logistic_gap<F: Scalar>(a: F, b: F) -> F {
    if b >= F::zero() {
        logistic(-b) - logistic(-a)
    } else {
        logistic(a) - logistic(b)
    }
}

pub fn make_sigmoid_schedule<F: Scalar>(p: &SigmoidScheduleParams<F>) -> Result<NoiseSchedule<F>> {
    if !(p.zeta > F::zero()) {
        return Err(Error::config(format!("sigmoid stiffness must be positive, got {}", p.zeta)));
    }
    if !(p.c_start < p.c_end) {
        return Err(Error::config("sigmoid schedule needs c_start < c_end"));
    }
    check_bounds(p.sigma_first, p.sigma_last, p.steps)?;
    let a = p.c_end / p.zeta;
    let denom = logistic_gap(a, p.c_start / p.zeta);
    if !(denom > F::zero()) {
        return Err(Error::config("sigmoid schedule is flat at this stiffness"));
    }
    let span = p.sigma_first - p.sigma_last;
    let last = F::from_usize_lossy(p.steps - 1);
    let mut sigmas: Vec<F> = (0..p.steps)
        .map(|k| {
            let u = F::from_usize_lossy(k) / last * (p.c_end - p.c_start) + p.c_start;
            span * logistic_gap(a, u / p.zeta) / denom + p.sigma_last
        })
        .collect();
    // Both endpoints are exact in real arithmetic; pin them against rounding.
    sigmas[0] = p.sigma_first;
    sigmas[p.steps - 1] = p.sigma_last;
    NoiseSchedule::new(sigmas)
}

/// Variance-preserving retention factors `α_t` and their running products
/// `ᾱ_t`, for `t = 1..=T` (stored zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaBarSchedule<F> {
    alphas: Vec<F>,
    alpha_bars: Vec<F>,
}

impl<F: Scalar> AlphaBarSchedule<F> {
    pub fn from_alphas(alphas: Vec<F>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::config("alpha schedule must be non-empty"));
        }
        if let Some((t, a)) = alphas
            .iter()
            .enumerate()
            .find(|(_, &a)| !(a > F::zero() && a <= F::one()))
        {
            return Err(Error::config(format!("alpha_{} = {a} outside (0, 1]", t + 1)));
        }
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = F::one();
        for &a in &alphas {
            acc = acc * a;
            alpha_bars.push(acc);
        }
        if alpha_bars.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::config("cumulative alpha products must strictly decrease"));
        }
        if !(alpha_bars[alpha_bars.len() - 1] > F::zero()) {
            return Err(Error::config("cumulative alpha product underflowed to zero"));
        }
        Ok(Self { alphas, alpha_bars })
    }

    /// Number of diffusion times `T`.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    pub fn alphas(&self) -> &[F] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[F] {
        &self.alpha_bars
    }

    /// `α_t` for one-based `t`.
    pub fn alpha(&self, t: usize) -> F {
        self.alphas[t - 1]
    }

    /// `ᾱ_t` for one-based `t`.
    pub fn alpha_bar(&self, t: usize) -> F {
        self.alpha_bars[t - 1]
    }

    /// Equivalent variance-exploding noise level `√((1-ᾱ_t)/ᾱ_t)`.
    pub fn sigma(&self, t: usize) -> F {
        let ab = self.alpha_bar(t);
        ((F::one() - ab) / ab).sqrt()
    }

    pub fn sigmas(&self) -> Vec<F> {
        (1..=self.len()).map(|t| self.sigma(t)).collect()
    }

    /// Noise level at continuous time `u ∈ [0, T]`, piecewise linear in the
    /// integer-time levels with `σ(0) = 0`.
    pub fn sigma_at(&self, u: F) -> F {
        let big_t = self.len();
        if u <= F::zero() {
            return F::zero();
        }
        if u >= F::from_usize_lossy(big_t) {
            return self.sigma(big_t);
        }
        let lo = u.floor().to_usize().unwrap_or(0).min(big_t - 1);
        let frac = u - F::from_usize_lossy(lo);
        let s_lo = if lo == 0 { F::zero() } else { self.sigma(lo) };
        let s_hi = self.sigma(lo + 1);
        if frac == F::zero() {
            s_lo
        } else {
            s_lo + (s_hi - s_lo) * frac
        }
    }

    pub fn sigma_min(&self) -> F {
        self.sigma(1)
    }

    pub fn sigma_max(&self) -> F {
        self.sigma(self.len())
    }
}

/// `α_t` linearly interpolated between `alpha_first` (t = 1) and
/// `alpha_last` (t = T).
pub fn make_linear_alpha_schedule<F: Scalar>(
    alpha_first: F,
    alpha_last: F,
    steps: usize,
) -> Result<AlphaBarSchedule<F>> {
    let inside = |a: F| a > F::zero() && a < F::one();
    if !inside(alpha_first) || !inside(alpha_last) {
        return Err(Error::config(format!(
            "alpha bounds must lie in (0, 1), got {alpha_first} and {alpha_last}"
        )));
    }
    if steps == 0 {
        return Err(Error::config("alpha schedule needs at least one step"));
    }
    let alphas = if steps == 1 {
        vec![alpha_first]
    } else {
        let last = F::from_usize_lossy(steps - 1);
        (0..steps)
            .map(|i| alpha_first + (alpha_last - alpha_first) * (F::from_usize_lossy(i) / last))
            .collect()
    };
    AlphaBarSchedule::from_alphas(alphas)
}

/// Result of mapping a noise level onto the time axis of a VP schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseTime<F> {
    /// Continuous time in `(0, T]`.
    pub time: F,
    /// Grid index `t'` in `1..=grid_size`.
    pub grid_index: usize,
    /// The query was outside the schedule's noise range and was clamped.
    pub clamped: bool,
}

/// Default resolution multiplier for [`noise_to_time`]: `grid_size = 10·T`.
pub const DEFAULT_GRID_FACTOR: usize = 10;

/// Maps `σ` to the conditioning time of a VP network.
///
/// The integer-time levels `√((1-ᾱ_t)/ᾱ_t)` are linearly interpolated onto
/// `grid_size` points, grid point `j` sitting at time `T·j/grid_size`. The
/// nearest grid level wins (lowest index on ties) and `T·j/grid_size` is
/// returned. Queries outside `[σ_1, σ_T]` are clamped and flagged.
pub fn noise_to_time<F: Scalar>(
    sigma: F,
    schedule: &AlphaBarSchedule<F>,
    grid_size: usize,
) -> Result<NoiseTime<F>> {
    let big_t = schedule.len();
    if grid_size < big_t {
        return Err(Error::config(format!(
            "noise-to-time grid ({grid_size}) must be at least the schedule length ({big_t})"
        )));
    }
    if !sigma.is_finite() || sigma < F::zero() {
        return Err(Error::Precondition(format!("noise level {sigma} must be finite and >= 0")));
    }
    let (lo, hi) = (schedule.sigma_min(), schedule.sigma_max());
    let mut clamped = false;
    let target = if sigma < lo {
        clamped = true;
        lo
    } else if sigma > hi {
        clamped = true;
        hi
    } else {
        sigma
    };
    if clamped {
        log::warn!("noise level {sigma} outside VP range [{lo}, {hi}]; clamped");
    }

    let tf = F::from_usize_lossy(big_t);
    let gf = F::from_usize_lossy(grid_size);
    let level = |j: usize| schedule.sigma_at(tf * F::from_usize_lossy(j) / gf);
    // Grid levels increase with j: binary search, then compare neighbours.
    let (mut a, mut b) = (1usize, grid_size);
    while a < b {
        let mid = a + (b - a) / 2;
        if level(mid) < target {
            a = mid + 1;
        } else {
            b = mid;
        }
    }
    let mut best = a;
    if a > 1 && (target - level(a - 1)).abs() <= (level(a) - target).abs() {
        best = a - 1;
    }
    Ok(NoiseTime {
        time: tf * F::from_usize_lossy(best) / gf,
        grid_index: best,
        clamped,
    })
}

/// The three coupled sequences of the sampling template, plus the noise
/// level used to draw the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerPlan<F> {
    sigmas: Vec<F>,
    taus: Vec<F>,
    temps: Vec<F>,
    init_sigma: F,
}

impl<F: Scalar> SamplerPlan<F> {
    pub fn new(sigmas: NoiseSchedule<F>, taus: Vec<F>, temps: Vec<F>) -> Result<Self> {
        let init_sigma = sigmas.first();
        Self::from_parts(sigmas.into_inner(), taus, temps, init_sigma)
    }

    fn from_parts(sigmas: Vec<F>, taus: Vec<F>, temps: Vec<F>, init_sigma: F) -> Result<Self> {
        if taus.len() != sigmas.len() {
            return Err(Error::dim("plan step sizes", sigmas.len(), taus.len()));
        }
        if temps.len() != sigmas.len() {
            return Err(Error::dim("plan temperatures", sigmas.len(), temps.len()));
        }
        if let Some(k) = taus.iter().position(|&t| !(t > F::zero()) || !t.is_finite()) {
            return Err(Error::config(format!("step size tau_{k} = {} must be positive", taus[k])));
        }
        if let Some(k) = temps.iter().position(|&t| !(t >= F::zero()) || !t.is_finite()) {
            return Err(Error::config(format!(
                "temperature T_{k} = {} must be non-negative",
                temps[k]
            )));
        }
        Ok(Self {
            sigmas,
            taus,
            temps,
            init_sigma,
        })
    }

    /// Number of template iterations `K`.
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigmas(&self) -> &[F] {
        &self.sigmas
    }

    pub fn taus(&self) -> &[F] {
        &self.taus
    }

    pub fn temps(&self) -> &[F] {
        &self.temps
    }

    pub fn sigma(&self, k: usize) -> F {
        self.sigmas[k]
    }

    pub fn tau(&self, k: usize) -> F {
        self.taus[k]
    }

    pub fn temp(&self, k: usize) -> F {
        self.temps[k]
    }

    /// Noise level of the initial state distribution `N(0, σ_0² I)`.
    pub fn init_sigma(&self) -> F {
        self.init_sigma
    }

    /// Effective step `τ_k / σ_k²`.
    pub fn effective_step(&self, k: usize) -> F {
        self.taus[k] / (self.sigmas[k] * self.sigmas[k])
    }

    /// A plan whose final temperature is not 1 samples a tempered law.
    pub fn is_tempered(&self) -> bool {
        self.temps.last().is_some_and(|&t| t != F::one())
    }

    /// Keeps the first `k` iterations; the initial noise level is retained.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            sigmas: self.sigmas[..k].to_vec(),
            taus: self.taus[..k].to_vec(),
            temps: self.temps[..k].to_vec(),
            init_sigma: self.init_sigma,
        }
    }

    /// Replaces every step size, e.g. after clamping.
    pub fn with_taus(&self, taus: Vec<F>) -> Result<Self> {
        Self::from_parts(self.sigmas.clone(), taus, self.temps.clone(), self.init_sigma)
    }

    pub fn with_temps(&self, temps: Vec<F>) -> Result<Self> {
        Self::from_parts(self.sigmas.clone(), self.taus.clone(), temps, self.init_sigma)
    }

    /// Appends `extra` iterations that repeat the final `(σ, τ, T)` triple.
    pub fn with_terminal_hold(&self, extra: usize) -> Self {
        let mut out = self.clone();
        if let (Some(&s), Some(&t), Some(&temp)) =
            (self.sigmas.last(), self.taus.last(), self.temps.last())
        {
            out.sigmas.extend(std::iter::repeat_n(s, extra));
            out.taus.extend(std::iter::repeat_n(t, extra));
            out.temps.extend(std::iter::repeat_n(temp, extra));
        }
        out
    }

    /// Writes one row per iteration: `index,sigma,tau,temperature`.
    /// Values use shortest round-trip formatting, so reading back is exact.
    pub fn write_columns<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,sigma,tau,temperature")?;
        for k in 0..self.len() {
            writeln!(w, "{},{},{},{}", k, self.sigmas[k], self.taus[k], self.temps[k])?;
        }
        Ok(())
    }

    /// Parses the output of [`SamplerPlan::write_columns`]; `#` lines are skipped.
    pub fn read_columns<R: BufRead>(r: R) -> Result<Self> {
        let mut sigmas = Vec::new();
        let mut taus = Vec::new();
        let mut temps = Vec::new();
        let mut seen_header = false;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !seen_header {
                seen_header = true;
                if line != "index,sigma,tau,temperature" {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!("unexpected plan header {line:?}"),
                    });
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("expected 4 columns, found {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<F> {
                s.trim()
                    .parse::<f64>()
                    .map(F::lit)
                    .map_err(|e| Error::Parse {
                        line: n + 1,
                        message: format!("{s:?}: {e}"),
                    })
            };
            sigmas.push(parse(fields[1])?);
            taus.push(parse(fields[2])?);
            temps.push(parse(fields[3])?);
        }
        let schedule = NoiseSchedule::new(sigmas)?;
        Self::new(schedule, taus, temps)
    }
}

/// Rule for the DDPM reverse-process standard deviations `σ'_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaPrimeRule {
    /// `σ'_t² = 1 - α_t`
    Beta,
    /// `σ'_t² = (1 - ᾱ_{t-1})/(1 - ᾱ_t) · (1 - α_t)`
    PosteriorBeta,
    /// `σ'_t² = 2(1 - α_t)/α_t`, which makes every template temperature 1.
    UnitTemperature,
}

pub fn ddpm_sigma_prime<F: Scalar>(schedule: &AlphaBarSchedule<F>, rule: SigmaPrimeRule) -> Vec<F> {
    let two = F::lit(2.0);
    (1..=schedule.len())
        .map(|t| {
            let a = schedule.alpha(t);
            let beta = F::one() - a;
            let var = match rule {
                SigmaPrimeRule::Beta => beta,
                SigmaPrimeRule::PosteriorBeta => {
                    let prev = if t == 1 { F::one() } else { schedule.alpha_bar(t - 1) };
                    (F::one() - prev) / (F::one() - schedule.alpha_bar(t)) * beta
                }
                SigmaPrimeRule::UnitTemperature => two * beta / a,
            };
            var.sqrt()
        })
        .collect()
}

/// Classical samplers written as parameter choices of the template.
#[derive(Debug, Clone)]
pub enum Preset<F> {
    /// Annealed Langevin: `τ_k = ε σ_k²/(2σ_max²)`, `T_k = 1`.
    Ncsn { sigmas: NoiseSchedule<F>, epsilon: F },
    /// Reverse VE SDE: `τ_k = σ_k² - σ_{k+1}²`, `T_k = 1/2`.
    VeSde { sigmas: NoiseSchedule<F> },
    /// DDPM ancestral sampling in rescaled coordinates `s_t = x_t/√ᾱ_t`.
    Ddpm {
        schedule: AlphaBarSchedule<F>,
        sigma_prime: Option<Vec<F>>,
    },
}

pub fn plan_from_preset<F: Scalar>(preset: &Preset<F>) -> Result<SamplerPlan<F>> {
    match preset {
        Preset::Ncsn { sigmas, epsilon } => plan_ncsn(sigmas, *epsilon),
        Preset::VeSde { sigmas } => plan_ve_sde(sigmas),
        Preset::Ddpm {
            schedule,
            sigma_prime,
        } => {
            let sp = sigma_prime
                .as_deref()
                .ok_or_else(|| Error::config("DDPM preset requires the sigma' sequence"))?;
            plan_ddpm(schedule, sp)
        }
    }
}

pub fn plan_ncsn<F: Scalar>(sigmas: &NoiseSchedule<F>, epsilon: F) -> Result<SamplerPlan<F>> {
    if !(epsilon > F::zero()) {
        return Err(Error::config("NCSN step scale epsilon must be positive"));
    }
    let smax = sigmas.first();
    let two = F::lit(2.0);
    let taus = sigmas
        .sigmas()
        .iter()
        .map(|&s| epsilon * s.powi(2) / (two * smax.powi(2)))
        .collect();
    let temps = vec![F::one(); sigmas.len()];
    SamplerPlan::new(sigmas.clone(), taus, temps)
}

/// Needs `σ_{k+1}` at the final index; the schedule is continued
/// geometrically with `σ_K = σ_{K-1}²/σ_{K-2}`.
pub fn plan_ve_sde<F: Scalar>(sigmas: &NoiseSchedule<F>) -> Result<SamplerPlan<F>> {
    let s = sigmas.sigmas();
    let k = s.len();
    if k < 2 {
        return Err(Error::config("VE-SDE preset needs at least two noise levels"));
    }
    let terminal = s[k - 1] * (s[k - 1] / s[k - 2]);
    let taus: Vec<F> = (0..k)
        .map(|i| {
            let next = if i + 1 < k { s[i + 1] } else { terminal };
            s[i].powi(2) - next.powi(2)
        })
        .collect();
    let temps = vec![F::lit(0.5); k];
    SamplerPlan::new(sigmas.clone(), taus, temps)
}

/// Template row for DDPM: iteration `k` uses diffusion time `t = T - k`.
pub fn plan_ddpm<F: Scalar>(
    schedule: &AlphaBarSchedule<F>,
    sigma_prime: &[F],
) -> Result<SamplerPlan<F>> {
    let big_t = schedule.len();
    if sigma_prime.len() != big_t {
        return Err(Error::dim("DDPM sigma' sequence", big_t, sigma_prime.len()));
    }
    let two = F::lit(2.0);
    let mut sigmas = Vec::with_capacity(big_t);
    let mut taus = Vec::with_capacity(big_t);
    let mut temps = Vec::with_capacity(big_t);
    for k in 0..big_t {
        let t = big_t - k;
        let a = schedule.alpha(t);
        let ab = schedule.alpha_bar(t);
        sigmas.push(((F::one() - ab) / ab).sqrt());
        taus.push((F::one() - a) / ab);
        temps.push(sigma_prime[t - 1].powi(2) * a / (two - two * a));
    }
    SamplerPlan::new(NoiseSchedule::new(sigmas)?, taus, temps)
}

/// `τ_k = ε σ_k²` with `T_k` linear from `temp_start` to `temp_end`.
pub fn plan_simplified<F: Scalar>(
    sigmas: &NoiseSchedule<F>,
    epsilon: F,
    temp_start: F,
    temp_end: F,
) -> Result<SamplerPlan<F>> {
    if !(epsilon > F::zero()) {
        return Err(Error::config("step scale epsilon must be positive"));
    }
    let taus = sigmas.sigmas().iter().map(|&s| epsilon * s.powi(2)).collect();
    let temps = linear_ramp(temp_start, temp_end, sigmas.len());
    SamplerPlan::new(sigmas.clone(), taus, temps)
}

/// `n` values from `start` to `end`; a single value is `end`.
pub fn linear_ramp<F: Scalar>(start: F, end: F, n: usize) -> Vec<F> {
    match n {
        0 => Vec::new(),
        1 => vec![end],
        _ => {
            let last = F::from_usize_lossy(n - 1);
            let mut v: Vec<F> = (0..n)
                .map(|k| start + (end - start) * (F::from_usize_lossy(k) / last))
                .collect();
            v[n - 1] = end;
            v
        }
    }
}
