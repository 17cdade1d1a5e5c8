//! Streaming, mergeable statistics over sampled configurations, and the
//! estimators built on them.
//!
//! Grid lengths in [`ObservableSpec`] are in units of `lambda`. Error bars
//! divide the sample count by the integrated autocorrelation time stored in
//! [`Accumulators::tau_int`].

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::energy::{EnergyModel, Mode};
use crate::error::{Error, Result};
use crate::kfield::{CrossingKind, KField, KView, Side};
use crate::model::{Configuration, Domain, ModelParams};
use crate::potential::Envelope;
use crate::sampler::Observer;

/// Tolerance for level comparisons on `K`, whose values sit on a shifted
/// integer lattice and pick up rounding noise.
const LEVEL_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableSpec {
    pub density_bins_per_lambda: u32,
    pub gamma_max: f64,
    /// Observation point of the tail statistics.
    pub x_star: f64,
    /// The tail is pooled over this many equally spaced points of the cell
    /// `[x_star, x_star + lambda)`. With one point `K(x_star)` only takes
    /// values on a shifted integer lattice.
    pub tail_points_per_lambda: u32,
    /// Volume-average window lengths, centred on the domain centre.
    pub r_grid: Vec<f64>,
    pub deltas: Vec<f64>,
    pub phase_r_grid: Vec<f64>,
    /// Charge-variance window lengths, centred on the domain centre.
    pub u_grid: Vec<f64>,
    pub identity_checks: bool,
}

impl Default for ObservableSpec {
    fn default() -> Self {
        ObservableSpec {
            density_bins_per_lambda: 10,
            gamma_max: 4.0,
            x_star: 0.0,
            tail_points_per_lambda: 10,
            r_grid: vec![2.0, 4.0, 8.0, 16.0],
            deltas: vec![0.25, 0.5],
            phase_r_grid: vec![0.5, 1.0, 2.0, 3.0, 4.0],
            u_grid: vec![0.0, 1.0, 2.0, 4.0, 8.0, 16.0],
            identity_checks: true,
        }
    }
}

impl ObservableSpec {
    pub fn validate(&self, domain: &Domain) -> Result<()> {
        let lam = domain.lambda;
        let fail = |m: String| Err(Error::Validation(m));
        if self.density_bins_per_lambda == 0 {
            return fail("observables.density_bins_per_lambda must be positive".into());
        }
        if !(self.gamma_max >= 0.5) {
            return fail("observables.gamma_max must be at least 0.5".into());
        }
        let len = domain.length();
        if self.tail_points_per_lambda == 0 {
            return fail("observables.tail_points_per_lambda must be positive".into());
        }
        if !(self.x_star * lam > domain.l1 && (self.x_star + 1.0) * lam <= domain.l2 + 1e-12) {
            return fail(format!(
                "observables.x_star = {} needs the cell [x_star, x_star + 1) inside the domain",
                self.x_star
            ));
        }
        for &r in &self.r_grid {
            if !(r > 0.0 && r * lam <= len + 1e-12) {
                return fail(format!(
                    "observables.r_grid entry {r} does not fit in the domain"
                ));
            }
        }
        for &d in &self.deltas {
            if !(d > 0.0) {
                return fail(format!("observables.deltas entry {d} must be positive"));
            }
        }
        for &r in &self.phase_r_grid {
            if !(r > 0.0 && r * lam <= domain.l2 + 1e-12) {
                return fail(format!(
                    "observables.phase_r_grid entry {r} must lie in (0, l2]"
                ));
            }
        }
        for &u in &self.u_grid {
            if !(u >= 0.0 && u * lam <= len + 1e-12) {
                return fail(format!(
                    "observables.u_grid entry {u} does not fit in the domain"
                ));
            }
        }
        Ok(())
    }

    pub fn gamma_grid(&self) -> Vec<f64> {
        let n = (self.gamma_max / 0.5).floor() as usize;
        (1..=n).map(|i| 0.5 * i as f64).collect()
    }
}

/// Count, mean and centred second moment, merged with Chan's formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    pub m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64 * o.n as f64) / n as f64;
        self.n = n;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseSums {
    pub cos: f64,
    pub sin: f64,
    pub cos2: f64,
    pub sin2: f64,
}

impl PhaseSums {
    fn push(&mut self, angle: f64) {
        self.cos += angle.cos();
        self.sin += angle.sin();
        self.cos2 += (2.0 * angle).cos();
        self.sin2 += (2.0 * angle).sin();
    }

    fn merge(&mut self, o: &PhaseSums) {
        self.cos += o.cos;
        self.sin += o.sin;
        self.cos2 += o.cos2;
        self.sin2 += o.sin2;
    }
}

/// Largest residuals of the exact per-sample identities, plus crossing-event
/// and cell-bound statistics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IdentityChecks {
    pub reconstruction: f64,
    pub cocycle: f64,
    pub phase_shift: f64,
    pub neutrality: f64,
    pub g_events: u64,
    pub gplus_events: u64,
    pub min_gplus_margin: Option<f64>,
    pub cell_bound_min_slack: Option<f64>,
    pub cell_bound_violations: u64,
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, None) => a,
        (None, b) => b,
    }
}

impl IdentityChecks {
    fn merge(&mut self, o: &IdentityChecks) {
        self.reconstruction = self.reconstruction.max(o.reconstruction);
        self.cocycle = self.cocycle.max(o.cocycle);
        self.phase_shift = self.phase_shift.max(o.phase_shift);
        self.neutrality = self.neutrality.max(o.neutrality);
        self.g_events += o.g_events;
        self.gplus_events += o.gplus_events;
        self.min_gplus_margin = min_opt(self.min_gplus_margin, o.min_gplus_margin);
        self.cell_bound_min_slack = min_opt(self.cell_bound_min_slack, o.cell_bound_min_slack);
        self.cell_bound_violations += o.cell_bound_violations;
    }

    pub fn passed(&self) -> bool {
        self.reconstruction < 1e-10
            && self.cocycle < 1e-12
            && self.phase_shift < 1e-10
            && self.neutrality < 1e-10
            && self.min_gplus_margin.is_none_or(|m| m >= -1e-9)
            && self.cell_bound_violations == 0
    }
}

/// Identifies what an accumulator measures; merging needs equal schemas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub domain: Domain,
    pub params: ModelParams,
    pub mode: Mode,
    pub spec: ObservableSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulators {
    pub schema: Schema,
    pub samples: u64,
    /// Sample-weighted integrated autocorrelation time of the chains merged in.
    pub tau_int: f64,
    pub density_counts: Vec<u64>,
    pub density_sumsq: Vec<u64>,
    pub k_star: Moments,
    pub tail_hits: Vec<u64>,
    pub phase: Vec<PhaseSums>,
    pub volavg_abs: Vec<Moments>,
    /// `[r][delta]` exceedance counts.
    pub volavg_exceed: Vec<Vec<u64>>,
    pub charge: Vec<Moments>,
    pub checks: IdentityChecks,
    cell_constant: f64,
}

impl Accumulators {
    pub fn new(
        domain: &Domain,
        params: &ModelParams,
        mode: Mode,
        spec: &ObservableSpec,
    ) -> Result<Self> {
        spec.validate(domain)?;
        let bins = spec.density_bins_per_lambda as usize * domain.n_particles();
        let env = Envelope::new(domain.w_width, domain.lambda / 10.0);
        Ok(Accumulators {
            schema: Schema {
                domain: *domain,
                params: *params,
                mode,
                spec: spec.clone(),
            },
            samples: 0,
            tau_int: 1.0,
            density_counts: vec![0; bins],
            density_sumsq: vec![0; bins],
            k_star: Moments::default(),
            tail_hits: vec![0; spec.gamma_grid().len()],
            phase: vec![PhaseSums::default(); spec.phase_r_grid.len()],
            volavg_abs: vec![Moments::default(); spec.r_grid.len()],
            volavg_exceed: vec![vec![0; spec.deltas.len()]; spec.r_grid.len()],
            charge: vec![Moments::default(); spec.u_grid.len()],
            checks: IdentityChecks::default(),
            cell_constant: env.cell_constant(domain.lambda),
        })
    }

    pub fn domain(&self) -> &Domain {
        &self.schema.domain
    }

    pub fn accumulate(&mut self, cfg: &Configuration) -> Result<()> {
        let d = self.schema.domain;
        if cfg.len() != d.n_particles() {
            return Err(Error::DomainMismatch {
                expected: d.n_particles(),
                got: cfg.len(),
            });
        }
        let spec = &self.schema.spec;
        let lam = d.lambda;
        self.samples += 1;

        let nb = self.density_counts.len();
        let width = d.length() / nb as f64;
        let mut run: Option<(usize, u64)> = None;
        for &x in cfg.xs() {
            let b = (((x - d.l1) / width) as usize).min(nb - 1);
            run = match run {
                Some((cur, n)) if cur == b => Some((cur, n + 1)),
                Some((cur, n)) => {
                    self.density_counts[cur] += n;
                    self.density_sumsq[cur] += n * n;
                    Some((b, 1))
                }
                None => Some((b, 1)),
            };
        }
        if let Some((cur, n)) = run {
            self.density_counts[cur] += n;
            self.density_sumsq[cur] += n * n;
        }

        let k = KView::new(&d, cfg.xs());
        self.k_star.push(k.eval(spec.x_star * lam, Side::Right));
        let m = spec.tail_points_per_lambda;
        for j in 0..m {
            let x = (spec.x_star + j as f64 / m as f64) * lam;
            let kx = k.eval(x, Side::Right).abs();
            for (hits, g) in self.tail_hits.iter_mut().zip(spec.gamma_grid()) {
                if kx >= g - LEVEL_EPS {
                    *hits += 1;
                }
            }
        }

        let field = KField::new(&d, cfg);
        for (sums, &r) in self.phase.iter_mut().zip(&spec.phase_r_grid) {
            let rec = field.reconstruction(r * lam);
            sums.push(TAU * rec.estimator);
        }

        let c = d.center();
        for (i, &r) in spec.r_grid.iter().enumerate() {
            let len = r * lam;
            let avg = k.integral(c - 0.5 * len, c + 0.5 * len, 1) / len;
            self.volavg_abs[i].push(avg.abs());
            for (j, &delta) in spec.deltas.iter().enumerate() {
                if avg.abs() >= delta {
                    self.volavg_exceed[i][j] += 1;
                }
            }
        }

        for (m, &u) in self.charge.iter_mut().zip(&spec.u_grid) {
            let h = 0.5 * u * lam;
            m.push(field.charge_cocycle(c + h) - field.charge_cocycle(c - h));
        }

        if spec.identity_checks {
            self.check_identities(cfg, &field)?;
        }
        Ok(())
    }

    fn check_identities(&mut self, cfg: &Configuration, field: &KField) -> Result<()> {
        let d = self.schema.domain;
        let lam = d.lambda;
        let spec = &self.schema.spec;
        let c = &mut self.checks;
        let k0 = field.eval(0.0, Side::Right);

        for &r in &spec.phase_r_grid {
            let len = r * lam;
            let est = field.reconstruction(len).estimator;
            let direct = k0 - field.integral(0.0, len, 1) / len;
            c.reconstruction = c.reconstruction.max((est - direct).abs());
        }

        let (u, v) = (0.37 * lam, 1.21 * lam);
        let lhs = field.charge_cocycle(u + v);
        let rhs = field.charge_cocycle(u) + field.shifted(u).charge_cocycle(v);
        c.cocycle = c.cocycle.max((lhs - rhs).abs());

        if d.contains_open(u) {
            let moved = field.shifted(u).phase(0.0);
            let expect = field.phase(0.0) * crate::kfield::unit_phase(u / lam);
            c.phase_shift = c.phase_shift.max((moved - expect).norm());
        }

        c.neutrality = c.neutrality.max(field.eval(d.l2, Side::Left).abs());

        let top = spec.gamma_max.floor() as u32;
        for gamma in 1..=top {
            if let Some(ev) = field.detect_crossing_event(gamma) {
                c.g_events += 1;
                if ev.kind == CrossingKind::GPlus {
                    c.gplus_events += 1;
                    let m = field.improved_bound_margin(&ev)?;
                    c.min_gplus_margin = min_opt(c.min_gplus_margin, Some(m));
                }
            }
        }

        if self.schema.mode == Mode::Quasi1d {
            let model = EnergyModel::new(d, self.schema.params, Mode::Quasi1d);
            let v2 = model.v2_total(cfg)?;
            let q2 = self.schema.params.q * self.schema.params.q;
            let mut counts: Vec<u64> = Vec::new();
            let mut last = None;
            for &x in cfg.xs() {
                let cell = (x / lam).floor() as i64;
                if last == Some(cell) {
                    *counts.last_mut().unwrap() += 1;
                } else {
                    counts.push(1);
                    last = Some(cell);
                }
            }
            let bound =
                -q2 * self.cell_constant * counts.iter().map(|n| (n * n) as f64).sum::<f64>();
            let slack = v2 - bound;
            c.cell_bound_min_slack = min_opt(c.cell_bound_min_slack, Some(slack));
            if slack < -1e-12 {
                c.cell_bound_violations += 1;
            }
        }
        Ok(())
    }

    /// Combines two accumulators over the same schema.
    pub fn merge(&mut self, o: &Accumulators) -> Result<()> {
        if self.schema != o.schema {
            return Err(Error::SchemaMismatch(
                "domain, parameters, mode or observable grids differ".into(),
            ));
        }
        let n = self.samples + o.samples;
        if n > 0 {
            self.tau_int =
                (self.tau_int * self.samples as f64 + o.tau_int * o.samples as f64) / n as f64;
        }
        self.samples = n;
        let add = |a: &mut [u64], b: &[u64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.density_counts, &o.density_counts);
        add(&mut self.density_sumsq, &o.density_sumsq);
        add(&mut self.tail_hits, &o.tail_hits);
        self.k_star.merge(&o.k_star);
        self.phase
            .iter_mut()
            .zip(&o.phase)
            .for_each(|(a, b)| a.merge(b));
        self.volavg_abs
            .iter_mut()
            .zip(&o.volavg_abs)
            .for_each(|(a, b)| a.merge(b));
        for (a, b) in self.volavg_exceed.iter_mut().zip(&o.volavg_exceed) {
            add(a, b);
        }
        self.charge
            .iter_mut()
            .zip(&o.charge)
            .for_each(|(a, b)| a.merge(b));
        self.checks.merge(&o.checks);
        Ok(())
    }

    pub fn effective_samples(&self) -> f64 {
        self.samples as f64 / self.tau_int.max(1.0)
    }

    /// Number of `(sample, point)` pairs behind each tail count.
    pub fn tail_trials(&self) -> f64 {
        self.samples as f64 * self.schema.spec.tail_points_per_lambda as f64
    }

    fn require(&self, need: f64) -> Result<f64> {
        let have = self.effective_samples();
        if have < need || self.samples == 0 {
            return Err(Error::InsufficientSamples { have, need });
        }
        Ok(have)
    }
}

impl Observer for Accumulators {
    fn observe(&mut self, _step: u64, cfg: &Configuration) -> Result<()> {
        self.accumulate(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
    pub bins_per_lambda: u32,
}

impl DensityProfile {
    /// Largest `|rho_i - rho_mirror| / sigma` over mirror bin pairs.
    pub fn max_reflection_z(&self) -> f64 {
        let n = self.density.len();
        (0..n / 2)
            .map(|i| {
                let j = n - 1 - i;
                let s = (self.stderr[i].powi(2) + self.stderr[j].powi(2)).sqrt();
                let diff = (self.density[i] - self.density[j]).abs();
                if s > 0.0 {
                    diff / s
                } else if diff == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    /// Piecewise-constant density at `x`, zero outside the bins.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.bin_edges.partition_point(|&e| e <= x);
        if i == 0 || i >= self.bin_edges.len() {
            0.0
        } else {
            self.density[i - 1]
        }
    }
}

pub fn density_profile(acc: &Accumulators) -> Result<DensityProfile> {
    acc.require(1.0)?;
    let d = acc.domain();
    let nb = acc.density_counts.len();
    let width = d.length() / nb as f64;
    let s = acc.samples as f64;
    let n_eff = acc.effective_samples();
    let bin_edges = (0..=nb).map(|i| d.l1 + i as f64 * width).collect();
    let density = acc
        .density_counts
        .iter()
        .map(|&c| c as f64 / (s * width))
        .collect();
    let stderr = acc
        .density_counts
        .iter()
        .zip(&acc.density_sumsq)
        .map(|(&c, &sq)| {
            let mean = c as f64 / s;
            let var = (sq as f64 / s - mean * mean).max(0.0);
            (var / n_eff).sqrt() / width
        })
        .collect();
    Ok(DensityProfile {
        bin_edges,
        counts: acc.density_counts.clone(),
        density,
        stderr,
        bins_per_lambda: acc.schema.spec.density_bins_per_lambda,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub x_star: f64,
    pub gamma_grid: Vec<f64>,
    pub tail_probs: Vec<f64>,
    pub tail_stderr: Vec<f64>,
    /// Levels entering the fit.
    pub fit_mask: Vec<bool>,
    /// Slope of `-ln P` against `gamma^2`.
    pub fitted_a: f64,
    pub fitted_c: f64,
    pub a_stderr: f64,
    pub a_ci: (f64, f64),
    pub k_mean: f64,
    pub k_variance: f64,
}

/// Empirical tail of `|K|` over the observation cell and a weighted
/// least-squares fit of `-ln P` against `gamma^2` over levels with at least
/// 10 hits and `P < 1`. The binomial weights use the effective sample count
/// of single snapshots, not the pooled point count.
pub fn k_tail(acc: &Accumulators) -> Result<TailFit> {
    let n_eff = acc.require(1000.0)?;
    let s = acc.tail_trials();
    let grid = acc.schema.spec.gamma_grid();
    let probs: Vec<f64> = acc.tail_hits.iter().map(|&h| h as f64 / s).collect();
    let stderr: Vec<f64> = probs
        .iter()
        .map(|p| (p * (1.0 - p) / n_eff).sqrt())
        .collect();
    let mask: Vec<bool> = acc
        .tail_hits
        .iter()
        .zip(&probs)
        .map(|(&h, &p)| h >= 10 && p < 1.0)
        .collect();

    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut pts = Vec::new();
    for i in (0..grid.len()).filter(|&i| mask[i]) {
        let p = probs[i];
        let x = grid[i] * grid[i];
        let y = -p.ln();
        let w = n_eff * p / (1.0 - p);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
        pts.push((x, y, w));
    }
    if pts.len() < 3 {
        return Err(Error::InsufficientSamples {
            have: pts.len() as f64,
            need: 3.0,
        });
    }
    let det = sw * sxx - sx * sx;
    let a = (sw * sxy - sx * sy) / det;
    let c = (sy - a * sx) / sw;
    let df = (pts.len() - 2) as f64;
    let s2 = pts
        .iter()
        .map(|&(x, y, w)| w * (y - a * x - c).powi(2))
        .sum::<f64>()
        / df;
    // never report a tighter error than the binomial weights alone give
    let a_stderr = (s2.max(1.0) * sw / det).sqrt();
    let t = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::Validation(e.to_string()))?
        .inverse_cdf(0.975);
    Ok(TailFit {
        x_star: acc.schema.spec.x_star,
        gamma_grid: grid,
        tail_probs: probs,
        tail_stderr: stderr,
        fit_mask: mask,
        fitted_a: a,
        fitted_c: c,
        a_stderr,
        a_ci: (a - t * a_stderr, a + t * a_stderr),
        k_mean: acc.k_star.mean,
        k_variance: acc.k_star.variance(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub r_grid: Vec<f64>,
    pub circular_mean: Vec<f64>,
    pub resultant_length: Vec<f64>,
    pub stderr_angle: Vec<f64>,
}

impl PhaseEstimate {
    /// Index of the largest cutoff not beyond `limit` (in units of lambda).
    pub fn largest_within(&self, limit: f64) -> Option<usize> {
        (0..self.r_grid.len())
            .filter(|&i| self.r_grid[i] <= limit + 1e-12)
            .max_by(|&a, &b| self.r_grid[a].total_cmp(&self.r_grid[b]))
    }
}

/// Circular mean and resultant length of `e^{i 2 pi estimator_R}` per cutoff.
pub fn phase_estimate(acc: &Accumulators) -> Result<PhaseEstimate> {
    let n_eff = acc.require(1.0)?;
    let s = acc.samples as f64;
    let mut out = PhaseEstimate {
        r_grid: acc.schema.spec.phase_r_grid.clone(),
        circular_mean: Vec::new(),
        resultant_length: Vec::new(),
        stderr_angle: Vec::new(),
    };
    for p in &acc.phase {
        let mu = p.sin.atan2(p.cos);
        let r1 = (p.cos.hypot(p.sin) / s).min(1.0);
        let r2 = (p.cos2 * (2.0 * mu).cos() + p.sin2 * (2.0 * mu).sin()) / s;
        let se = if r1 > 0.0 {
            ((1.0 - r2).max(0.0) / (2.0 * n_eff * r1 * r1)).sqrt()
        } else {
            f64::INFINITY
        };
        out.circular_mean.push(mu);
        out.resultant_length.push(r1);
        out.stderr_angle.push(se);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeAverageStats {
    pub r_grid: Vec<f64>,
    pub mean_abs: Vec<f64>,
    pub mean_abs_stderr: Vec<f64>,
    pub deltas: Vec<f64>,
    /// `[r][delta]`.
    pub exceed_probs: Vec<Vec<f64>>,
}

pub fn volume_average_stats(acc: &Accumulators) -> Result<VolumeAverageStats> {
    let n_eff = acc.require(1.0)?;
    let s = acc.samples as f64;
    Ok(VolumeAverageStats {
        r_grid: acc.schema.spec.r_grid.clone(),
        mean_abs: acc.volavg_abs.iter().map(|m| m.mean).collect(),
        mean_abs_stderr: acc
            .volavg_abs
            .iter()
            .map(|m| (m.variance() / n_eff).sqrt())
            .collect(),
        deltas: acc.schema.spec.deltas.clone(),
        exceed_probs: acc
            .volavg_exceed
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / s).collect())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeVariance {
    pub u_grid: Vec<f64>,
    pub var_q: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// `Var Q` of the charge in windows centred on the domain centre. The error bar
/// uses the Gaussian approximation `var sqrt(2 / (n_eff - 1))`.
pub fn charge_variance(acc: &Accumulators) -> Result<ChargeVariance> {
    let n_eff = acc.require(1.0)?;
    let var_q: Vec<f64> = acc.charge.iter().map(|m| m.variance()).collect();
    let stderr = var_q
        .iter()
        .map(|v| v * (2.0 / (n_eff - 1.0).max(1.0)).sqrt())
        .collect();
    Ok(ChargeVariance {
        u_grid: acc.schema.spec.u_grid.clone(),
        var_q,
        stderr,
    })
}

/// Shift that best aligns two density profiles: the `tau` in `[-lambda,
/// lambda)` maximising the correlation of `a(x)` and `b(x + tau)` over the
/// `x` where both are defined, reported modulo `lambda`.
pub fn density_lag(a: &DensityProfile, b: &DensityProfile, lambda: f64) -> f64 {
    let (a_lo, a_hi) = (a.bin_edges[0], *a.bin_edges.last().unwrap());
    let (b_lo, b_hi) = (b.bin_edges[0], *b.bin_edges.last().unwrap());
    let width = |p: &DensityProfile| p.bin_edges[1] - p.bin_edges[0];
    let dx = 0.25 * width(a).min(width(b));
    let lags = 400;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..lags {
        let tau = -lambda + 2.0 * lambda * k as f64 / lags as f64;
        let (lo, hi) = (a_lo.max(b_lo - tau), a_hi.min(b_hi - tau));
        if hi - lo < lambda {
            continue;
        }
        let n = ((hi - lo) / dx) as usize;
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * dx;
                (a.at(x), b.at(x + tau))
            })
            .collect();
        let nf = n as f64;
        let (ma, mb) = (
            pts.iter().map(|p| p.0).sum::<f64>() / nf,
            pts.iter().map(|p| p.1).sum::<f64>() / nf,
        );
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for &(u, v) in &pts {
            sab += (u - ma) * (v - mb);
            saa += (u - ma) * (u - ma);
            sbb += (v - mb) * (v - mb);
        }
        if saa > 0.0 && sbb > 0.0 {
            let r = sab / (saa * sbb).sqrt();
            if r > best.0 {
                best = (r, tau);
            }
        }
    }
    best.1.rem_euclid(lambda)
}

/// One-sided values of `K` at both endpoints and at every particle.
pub fn k_trace(field: &KField) -> Vec<(f64, f64, f64)> {
    let mut rows = Vec::with_capacity(field.jumps().len() + 2);
    let l1 = field.l1();
    rows.push((l1, 0.0, field.eval(l1, Side::Right)));
    for &x in field.jumps() {
        rows.push((x, field.eval(x, Side::Left), field.eval(x, Side::Right)));
    }
    let l2 = field.l2();
    rows.push((l2, field.eval(l2, Side::Left), 0.0));
    rows
}

/// Keeps every `every`-th kept sample, and always the latest one.
#[derive(Debug, Clone)]
pub struct SnapshotRecorder {
    pub every: u64,
    pub store: bool,
    pub rows: Vec<(u64, Configuration)>,
    pub last: Option<(u64, Configuration)>,
    seen: u64,
}

impl SnapshotRecorder {
    pub fn new(every: u64, store: bool) -> Self {
        SnapshotRecorder {
            every: every.max(1),
            store,
            rows: Vec::new(),
            last: None,
            seen: 0,
        }
    }
}

impl Observer for SnapshotRecorder {
    fn observe(&mut self, step: u64, cfg: &Configuration) -> Result<()> {
        self.seen += 1;
        if self.seen.is_multiple_of(self.every) {
            if self.store {
                self.rows.push((step, cfg.clone()));
            }
            self.last = Some((step, cfg.clone()));
        }
        Ok(())
    }
}
