//! Metropolis sampler for `e^{-beta U} d omega` on the ordered simplex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, EnergyModel, Mode};
use crate::error::{Error, Result};
use crate::kfield::{KView, Side};
use crate::model::{wrap_y, Configuration, Domain, ModelParams, Point};

const TARGET_ACCEPTANCE: f64 = 0.4;
const TUNE_WINDOW: u64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSpec {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub n_steps: u64,
    pub burn_in: u64,
    pub thin: u64,
    pub resync_interval: u64,
    pub mode: Mode,
    pub seed: u64,
    /// Adapt `sigma_x` during burn-in. It is frozen afterwards.
    pub auto_tune: bool,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec {
            sigma_x: 0.5,
            sigma_y: 0.25,
            n_steps: 1_000_000,
            burn_in: 100_000,
            thin: 10,
            resync_interval: 10_000,
            mode: Mode::Quasi1d,
            seed: 0,
            auto_tune: true,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| {
            Err(Error::InvalidParameter {
                name,
                reason: reason.to_string(),
            })
        };
        if !(self.sigma_x > 0.0 && self.sigma_x.is_finite()) {
            return bad("sigma_x", "must be positive and finite");
        }
        if !(self.sigma_y >= 0.0 && self.sigma_y.is_finite()) {
            return bad("sigma_y", "must be non-negative and finite");
        }
        if self.thin == 0 {
            return bad("thin", "must be at least 1");
        }
        if self.resync_interval == 0 {
            return bad("resync_interval", "must be at least 1");
        }
        Ok(())
    }
}

/// Receives every kept sample of a chain.
pub trait Observer {
    fn observe(&mut self, step: u64, cfg: &Configuration) -> Result<()>;
}

impl<F: FnMut(u64, &Configuration) -> Result<()>> Observer for F {
    fn observe(&mut self, step: u64, cfg: &Configuration) -> Result<()> {
        self(step, cfg)
    }
}

#[derive(Debug, Clone)]
pub struct ChainState {
    pub cfg: Configuration,
    pub cached_energy: EnergyBreakdown,
    pub step_count: u64,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Accepted,
    Rejected,
    /// Proposal left the domain or hit an occupied `x`; counts as a rejection.
    Invalid,
}

impl StepOutcome {
    pub fn accepted(self) -> bool {
        self == StepOutcome::Accepted
    }
}

/// One Metropolis update of a uniformly chosen particle.
pub fn metropolis_step(
    state: &mut ChainState,
    model: &EnergyModel,
    sigma_x: f64,
    sigma_y: f64,
) -> StepOutcome {
    state.step_count += 1;
    let rng = &mut state.rng;
    let rank = rng.random_range(0..state.cfg.len());
    let old = state.cfg.point(rank);
    let nx: f64 = rng.sample(StandardNormal);
    let x = old.x + sigma_x * nx;
    let y = if model.mode == Mode::Pure1d {
        old.y
    } else {
        let ny: f64 = rng.sample(StandardNormal);
        wrap_y(old.y + sigma_y * ny, model.domain.w_width)
    };
    let u: f64 = rng.random();
    if !model.domain.contains_open(x) {
        return StepOutcome::Invalid;
    }
    let to = Point::new(x, y);
    let delta = match model.delta_move(&state.cfg, rank, to) {
        Ok(d) => d,
        Err(_) => return StepOutcome::Invalid,
    };
    let du = delta.total();
    let beta = model.params.beta;
    let accept = du <= 0.0 || beta == 0.0 || u < (-beta * du).exp();
    if accept {
        state.cfg.relocate(rank, to);
        let e = &mut state.cached_energy;
        *e = EnergyBreakdown::new(e.u1 + delta.du1, e.v2_total + delta.dv2);
        StepOutcome::Accepted
    } else {
        StepOutcome::Rejected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub seed: u64,
    pub acceptance_rate: f64,
    pub burn_in_acceptance_rate: f64,
    pub sigma_x: f64,
    pub kept_samples: u64,
    /// `1 + 2 sum_t rho(t)` of the `K(0)` series in kept-sample units, so the
    /// effective sample size is `kept_samples / tau_int`.
    pub tau_int_k0: f64,
    pub max_resync_drift: f64,
    pub energy_finite: bool,
    pub final_energy: f64,
}

impl ChainReport {
    pub fn effective_samples(&self) -> f64 {
        self.kept_samples as f64 / self.tau_int_k0.max(1.0)
    }
}

pub struct Chain {
    pub model: EnergyModel,
    pub spec: SamplerSpec,
    pub state: ChainState,
    sigma_x: f64,
    max_drift: f64,
    energy_finite: bool,
}

impl Chain {
    /// Starts from the lattice `x_j = l1 + (j - 1/2) lambda`, `y_j = W/2`,
    /// perturbed by a jitter of relative size `1e-3` drawn from the chain's
    /// own generator.
    pub fn new(domain: Domain, params: ModelParams, spec: SamplerSpec) -> Result<Self> {
        params.validate()?;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let lattice = Configuration::lattice(&domain);
        let jitter = 1e-3;
        let pts: Vec<(f64, f64)> = lattice
            .points()
            .map(|p| {
                let dx: f64 = rng.random::<f64>() - 0.5;
                let dy: f64 = rng.random::<f64>() - 0.5;
                (
                    p.x + jitter * domain.lambda * dx,
                    p.y + jitter * domain.w_width * dy,
                )
            })
            .collect();
        let cfg = crate::model::canonicalize(&pts, &domain)?;
        let model = EnergyModel::new(domain, params, spec.mode);
        let cached_energy = model.breakdown(&cfg)?;
        Ok(Chain {
            model,
            sigma_x: spec.sigma_x.min(domain.length()),
            spec,
            state: ChainState {
                cfg,
                cached_energy,
                step_count: 0,
                rng,
            },
            max_drift: 0.0,
            energy_finite: true,
        })
    }

    pub fn sigma_x(&self) -> f64 {
        self.sigma_x
    }

    pub fn config(&self) -> &Configuration {
        &self.state.cfg
    }

    pub fn step(&mut self) -> StepOutcome {
        let acc = metropolis_step(
            &mut self.state,
            &self.model,
            self.sigma_x,
            self.spec.sigma_y,
        );
        if !self.state.cached_energy.total.is_finite() {
            self.energy_finite = false;
        }
        if self
            .state
            .step_count
            .is_multiple_of(self.spec.resync_interval)
        {
            self.resync();
        }
        acc
    }

    /// Recomputes the cached energy and returns the relative drift found.
    pub fn resync(&mut self) -> f64 {
        let fresh = self
            .model
            .breakdown(&self.state.cfg)
            .expect("sampler state holds a valid configuration");
        let scale = fresh.total.abs().max(1.0);
        let drift = (self.state.cached_energy.total - fresh.total).abs() / scale;
        self.max_drift = self.max_drift.max(drift);
        self.state.cached_energy = fresh;
        drift
    }

    /// Burn-in (with tuning) followed by `n_steps` measured steps; every
    /// `thin`-th configuration goes to the observers.
    pub fn run(&mut self, observers: &mut [&mut dyn Observer]) -> Result<ChainReport> {
        let mut window_acc = 0u64;
        let mut burn_acc = 0u64;
        for i in 1..=self.spec.burn_in {
            let acc = self.step().accepted() as u64;
            window_acc += acc;
            burn_acc += acc;
            if self.spec.auto_tune && i % TUNE_WINDOW == 0 {
                let rate = window_acc as f64 / TUNE_WINDOW as f64;
                let factor = ((rate + 0.01) / (TARGET_ACCEPTANCE + 0.01)).clamp(0.5, 2.0);
                let cap = self.model.domain.length();
                self.sigma_x = (self.sigma_x * factor).clamp(1e-4 * self.model.domain.lambda, cap);
                window_acc = 0;
            }
        }

        let view_domain = self.model.domain;
        let mut k0 = Vec::with_capacity((self.spec.n_steps / self.spec.thin) as usize);
        let mut accepted = 0u64;
        let mut kept = 0u64;
        for i in 1..=self.spec.n_steps {
            accepted += self.step().accepted() as u64;
            if i % self.spec.thin == 0 {
                kept += 1;
                let cfg = &self.state.cfg;
                k0.push(KView::new(&view_domain, cfg.xs()).eval(0.0, Side::Right));
                for obs in observers.iter_mut() {
                    obs.observe(i, cfg)?;
                }
            }
        }
        self.resync();

        let rate = |a: u64, n: u64| if n == 0 { 0.0 } else { a as f64 / n as f64 };
        Ok(ChainReport {
            seed: self.spec.seed,
            acceptance_rate: rate(accepted, self.spec.n_steps),
            burn_in_acceptance_rate: rate(burn_acc, self.spec.burn_in),
            sigma_x: self.sigma_x,
            kept_samples: kept,
            tau_int_k0: integrated_autocorrelation(&k0),
            max_resync_drift: self.max_drift,
            energy_finite: self.energy_finite,
            final_energy: self.state.cached_energy.total,
        })
    }
}

/// Runs one chain from its spec; see [`Chain::run`].
pub fn run_chain(
    domain: &Domain,
    params: &ModelParams,
    spec: &SamplerSpec,
    observers: &mut [&mut dyn Observer],
) -> Result<ChainReport> {
    Chain::new(*domain, *params, spec.clone())?.run(observers)
}

/// `1 + 2 sum_{t=1}^{M} rho(t)` with Sokal's self-consistent window: the
/// smallest `M` with `M >= 5 tau(M)`. A constant series gives 1.
pub fn integrated_autocorrelation(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 2 {
        return 1.0;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return 1.0;
    }
    let mut tau = 1.0;
    for t in 1..n {
        let ct = centered[..n - t]
            .iter()
            .zip(&centered[t..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64;
        tau += 2.0 * ct / c0;
        if t as f64 >= 5.0 * tau {
            break;
        }
    }
    tau.max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_domain;

    fn short_spec(seed: u64) -> SamplerSpec {
        SamplerSpec {
            n_steps: 20_000,
            burn_in: 5_000,
            thin: 10,
            seed,
            ..SamplerSpec::default()
        }
    }

    #[test]
    fn identical_seeds_give_identical_streams() {
        let p = ModelParams::default();
        let d = build_domain(4, 4, &p).unwrap();
        let collect = |seed| {
            let mut xs = Vec::new();
            let mut obs = |_: u64, c: &Configuration| {
                xs.extend_from_slice(c.xs());
                xs.extend_from_slice(c.ys());
                Ok(())
            };
            let rep = run_chain(&d, &p, &short_spec(seed), &mut [&mut obs]).unwrap();
            (xs, rep)
        };
        let (a, ra) = collect(3);
        let (b, rb) = collect(3);
        assert_eq!(ra, rb);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        let (c, _) = collect(4);
        assert_ne!(a, c);
    }

    #[test]
    fn acceptance_in_band_and_energy_stays_synced() {
        let p = ModelParams::default();
        let d = build_domain(8, 8, &p).unwrap();
        let spec = SamplerSpec {
            resync_interval: 10_000,
            ..short_spec(1)
        };
        let mut chain = Chain::new(d, p, spec).unwrap();
        let rep = chain.run(&mut []).unwrap();
        assert!(
            rep.acceptance_rate > 0.1 && rep.acceptance_rate < 0.9,
            "{rep:?}"
        );
        assert!(rep.max_resync_drift < 1e-6, "{rep:?}");
        assert!(rep.energy_finite);
    }

    #[test]
    fn beta_zero_accepts_every_in_domain_proposal() {
        let p = ModelParams {
            beta: 0.0,
            ..ModelParams::default()
        };
        let d = build_domain(1, 1, &p).unwrap();
        let spec = SamplerSpec {
            sigma_x: 0.1,
            auto_tune: false,
            ..short_spec(2)
        };
        let mut chain = Chain::new(d, p, spec).unwrap();
        let (mut valid, mut accepted) = (0u64, 0u64);
        for _ in 0..20_000 {
            match chain.step() {
                StepOutcome::Accepted => {
                    valid += 1;
                    accepted += 1;
                }
                StepOutcome::Rejected => valid += 1,
                StepOutcome::Invalid => {}
            }
        }
        assert!(valid > 10_000);
        assert_eq!(accepted, valid);
    }

    #[test]
    fn pure1d_keeps_y_fixed() {
        let p = ModelParams::default();
        let d = build_domain(3, 3, &p).unwrap();
        let spec = SamplerSpec {
            mode: Mode::Pure1d,
            ..short_spec(5)
        };
        let mut chain = Chain::new(d, p, spec).unwrap();
        let mut ys0: Vec<f64> = chain.config().ys().to_vec();
        ys0.sort_by(f64::total_cmp);
        chain.run(&mut []).unwrap();
        let mut ys: Vec<f64> = chain.config().ys().to_vec();
        ys.sort_by(f64::total_cmp);
        assert_eq!(ys0, ys);
        assert_eq!(chain.state.cached_energy.v2_total, 0.0);
    }

    #[test]
    fn autocorrelation_of_white_noise_is_near_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s: Vec<f64> = (0..20_000).map(|_| rng.random::<f64>()).collect();
        let t = integrated_autocorrelation(&s);
        assert!((t - 1.0).abs() < 0.2, "{t}");
        // AR(1) with phi = 0.8 has tau = (1 + phi) / (1 - phi) = 9
        let mut v = 0.0;
        let s: Vec<f64> = (0..200_000)
            .map(|_| {
                let e: f64 = rng.sample(StandardNormal);
                v = 0.8 * v + e;
                v
            })
            .collect();
        let t = integrated_autocorrelation(&s);
        assert!((t - 9.0).abs() < 1.5, "{t}");
        assert_eq!(integrated_autocorrelation(&[2.0; 10]), 1.0);
    }

    #[test]
    fn invalid_spec_rejected() {
        let p = ModelParams::default();
        let d = build_domain(1, 1, &p).unwrap();
        let spec = SamplerSpec {
            sigma_x: 0.0,
            ..SamplerSpec::default()
        };
        assert!(Chain::new(d, p, spec).is_err());
    }
}
