//! Deterministic references for tiny systems: the analytic one-particle
//! density and direct quadrature of Gibbs expectations for `N <= 3`.
//!
//! The ordered simplex `l1 < x_1 < ... < x_N < l2` is integrated as nested
//! one-dimensional integrals, each split at the caller's breakpoints (bin
//! edges, observation points) and at multiples of `lambda`, with a
//! Gauss-Legendre rule on every piece. `y_1` is pinned to 0 by translation
//! invariance in `y`; the remaining `y_j` use a midpoint periodic rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyModel, Mode};
use crate::error::{Error, Result};
use crate::model::{Configuration, Domain, ModelParams};
use crate::quad::{gauss_legendre, integrate};

/// `e^{-beta q^2 rho (x - c)^2 / 2} / Z` on the single-particle domain.
#[derive(Debug, Clone, Copy)]
pub struct SingleParticleDensity {
    pub domain: Domain,
    pub params: ModelParams,
    norm: f64,
}

impl SingleParticleDensity {
    pub fn new(domain: &Domain, params: &ModelParams) -> Result<Self> {
        if domain.n_particles() != 1 {
            return Err(Error::Validation(format!(
                "single-particle density needs N = 1, domain holds {}",
                domain.n_particles()
            )));
        }
        let mut d = SingleParticleDensity {
            domain: *domain,
            params: *params,
            norm: 1.0,
        };
        d.norm = integrate(|x| d.weight(x), domain.l1, domain.l2, 1e-15);
        Ok(d)
    }

    fn weight(&self, x: f64) -> f64 {
        let p = &self.params;
        let c = self.domain.center();
        (-0.5 * p.beta * p.q * p.q * p.rho * (x - c) * (x - c)).exp()
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        let d = &self.domain;
        if !(x >= d.l1 && x <= d.l2) {
            return Err(Error::OutOfDomain {
                x,
                l1: d.l1,
                l2: d.l2,
            });
        }
        Ok(self.weight(x) / self.norm)
    }

    /// Probability of `[a, b]`, clipped to the domain.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let (a, b) = (a.max(self.domain.l1), b.min(self.domain.l2));
        if b <= a {
            return 0.0;
        }
        integrate(|x| self.weight(x), a, b, 1e-15) / self.norm
    }
}

pub fn density_n1(domain: &Domain, params: &ModelParams, x: f64) -> Result<f64> {
    SingleParticleDensity::new(domain, params)?.density(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Gauss-Legendre points per piece in every `x` direction.
    pub points_per_dim: usize,
    /// Periodic midpoint nodes per free `y` coordinate.
    pub y_points: usize,
    /// Extra split points in `x`, where observables have kinks or jumps.
    pub breakpoints: Vec<f64>,
    pub max_nodes: u64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            points_per_dim: 8,
            y_points: 16,
            breakpoints: Vec::new(),
            max_nodes: 100_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    /// Estimates at `2 P` points per piece.
    pub value: Vec<f64>,
    /// `|I(2P) - I(P)|` per component.
    pub error: Vec<f64>,
    pub nodes: u64,
}

struct Grid<'a> {
    model: EnergyModel,
    cuts: Vec<f64>,
    gl: (Vec<f64>, Vec<f64>),
    ys: Vec<f64>,
    observable: &'a (dyn Fn(&Configuration) -> Vec<f64> + Sync),
    dim: usize,
    e_ref: f64,
}

impl Grid<'_> {
    /// Quadrature nodes on `[a, b]` split at every cut inside.
    fn nodes(&self, a: f64, b: f64) -> Vec<(f64, f64)> {
        let mut out = Vec::new();
        let mut lo = a;
        let inner = self.cuts.iter().copied().filter(|&c| c > a && c < b);
        for hi in inner.chain(std::iter::once(b)) {
            let (h, m) = (0.5 * (hi - lo), 0.5 * (hi + lo));
            for (t, w) in self.gl.0.iter().zip(&self.gl.1) {
                out.push((m + h * t, w * h));
            }
            lo = hi;
        }
        out
    }

    /// Adds `weight * (e^{-beta dU}, observable * e^{-beta dU})` over the
    /// remaining coordinates into `acc`.
    fn accumulate(&self, xs: &mut Vec<f64>, weight: f64, acc: &mut [f64]) {
        let d = &self.model.domain;
        let n = d.n_particles();
        if xs.len() < n {
            let lo = xs.last().copied().unwrap_or(d.l1);
            for (x, w) in self.nodes(lo, d.l2) {
                xs.push(x);
                self.accumulate(xs, weight * w, acc);
                xs.pop();
            }
            return;
        }
        let free = n - 1;
        let ny = self.ys.len();
        let combos = ny.pow(free as u32);
        let wy = 1.0 / combos as f64;
        let mut ys = vec![0.0; n];
        for idx in 0..combos {
            let mut k = idx;
            for y in ys.iter_mut().skip(1) {
                *y = self.ys[k % ny];
                k /= ny;
            }
            let cfg = match Configuration::from_sorted(xs.clone(), ys.clone(), d) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let e = match self.model.breakdown(&cfg) {
                Ok(e) => e.total,
                Err(_) => continue,
            };
            let b = weight * wy * (-self.model.params.beta * (e - self.e_ref)).exp();
            acc[0] += b;
            for (slot, v) in acc[1..].iter_mut().zip((self.observable)(&cfg)) {
                *slot += b * v;
            }
        }
        debug_assert_eq!(acc.len(), self.dim + 1);
    }

    fn run(&self) -> Vec<f64> {
        let d = &self.model.domain;
        let outer = self.nodes(d.l1, d.l2);
        let parts: Vec<Vec<f64>> = outer
            .par_iter()
            .map(|&(x, w)| {
                let mut acc = vec![0.0; self.dim + 1];
                let mut xs = vec![x];
                self.accumulate(&mut xs, w, &mut acc);
                acc
            })
            .collect();
        let mut total = vec![0.0; self.dim + 1];
        for p in parts {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }
}

/// Gibbs expectation of a vector-valued observable for `N <= 3`, with an
/// error estimate from doubling `points_per_dim`.
///
/// Observables must be invariant under a common translation of all `y`.
pub fn expectation_quadrature(
    domain: &Domain,
    params: &ModelParams,
    dim: usize,
    observable: &(dyn Fn(&Configuration) -> Vec<f64> + Sync),
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    let n = domain.n_particles();
    if n > 3 {
        return Err(Error::TooManyParticles(n));
    }
    if spec.points_per_dim < 8 {
        return Err(Error::InvalidParameter {
            name: "points_per_dim",
            reason: format!("must be at least 8, got {}", spec.points_per_dim),
        });
    }
    if spec.y_points == 0 {
        return Err(Error::InvalidParameter {
            name: "y_points",
            reason: "must be positive".into(),
        });
    }
    params.validate()?;

    let mut cuts: Vec<f64> = spec
        .breakpoints
        .iter()
        .copied()
        .filter(|&c| c > domain.l1 && c < domain.l2)
        .collect();
    let cells = (domain.length() / domain.lambda).round() as i64;
    cuts.extend((1..cells).map(|k| domain.l1 + k as f64 * domain.lambda));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let pieces = (cuts.len() + 1) as u64;
    let per_dim = |p: usize| pieces * p as u64;
    let y_nodes = (spec.y_points as u64).pow(n as u32 - 1);
    let needed = [spec.points_per_dim, 2 * spec.points_per_dim]
        .iter()
        .map(|&p| per_dim(p).saturating_pow(n as u32).saturating_mul(y_nodes))
        .fold(0u64, u64::saturating_add);
    if needed > spec.max_nodes {
        return Err(Error::BudgetExceeded {
            needed,
            budget: spec.max_nodes,
        });
    }

    let model = EnergyModel::new(*domain, *params, Mode::Quasi1d);
    let e_ref = model.breakdown(&Configuration::lattice(domain))?.total;
    let ys: Vec<f64> = (0..spec.y_points)
        .map(|i| (i as f64 + 0.5) * domain.w_width / spec.y_points as f64)
        .collect();

    let estimate = |p: usize| -> Vec<f64> {
        let grid = Grid {
            model,
            cuts: cuts.clone(),
            gl: gauss_legendre(p),
            ys: ys.clone(),
            observable,
            dim,
            e_ref,
        };
        let sums = grid.run();
        sums[1..].iter().map(|s| s / sums[0]).collect()
    };
    let coarse = estimate(spec.points_per_dim);
    let fine = estimate(2 * spec.points_per_dim);
    let error = coarse
        .iter()
        .zip(&fine)
        .map(|(a, b)| (a - b).abs())
        .collect();
    Ok(QuadratureResult {
        value: fine,
        error,
        nodes: needed,
    })
}

/// Expected number of particles in each `[edges[i], edges[i+1])`.
pub fn bin_occupation(
    domain: &Domain,
    params: &ModelParams,
    edges: &[f64],
    spec: &QuadratureSpec,
) -> Result<QuadratureResult> {
    let mut spec = spec.clone();
    spec.breakpoints.extend_from_slice(edges);
    let bins = edges.len().saturating_sub(1);
    let edges = edges.to_vec();
    let obs = move |c: &Configuration| {
        let mut out = vec![0.0; bins];
        for &x in c.xs() {
            let i = edges.partition_point(|&e| e <= x);
            if i >= 1 && i <= bins {
                out[i - 1] += 1.0;
            }
        }
        out
    };
    expectation_quadrature(domain, params, bins, &obs, &spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfield::{KView, Side};
    use crate::model::build_domain;

    #[test]
    fn n1_density_properties() {
        let p = ModelParams::default();
        let d = Domain::single_particle(&p).unwrap();
        let rho = SingleParticleDensity::new(&d, &p).unwrap();
        let c = d.center();
        for a in [0.0, 0.1, 0.37, 0.5] {
            let (l, r) = (rho.density(c - a).unwrap(), rho.density(c + a).unwrap());
            assert!((l - r).abs() < 1e-12);
        }
        assert!((rho.mass(d.l1, d.l2) - 1.0).abs() < 1e-10);
        assert!(matches!(
            rho.density(d.l2 + 0.1),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(SingleParticleDensity::new(&build_domain(1, 1, &p).unwrap(), &p).is_err());
    }

    #[test]
    fn n1_flat_limit() {
        let p = ModelParams {
            beta: 1e-12,
            ..ModelParams::default()
        };
        let d = Domain::single_particle(&p).unwrap();
        for x in [-0.9, -0.5, -0.01] {
            assert!((density_n1(&d, &p, x).unwrap() - 1.0 / d.length()).abs() < 1e-10);
        }
    }

    #[test]
    fn quadrature_of_one_is_one() {
        let p = ModelParams::default();
        let d = build_domain(1, 1, &p).unwrap();
        let r =
            expectation_quadrature(&d, &p, 1, &|_| vec![1.0], &QuadratureSpec::default()).unwrap();
        assert_eq!(r.value[0], 1.0);
        assert_eq!(r.error[0], 0.0);
    }

    #[test]
    fn quadrature_matches_n1_density() {
        let p = ModelParams {
            theta: 0.3,
            ..ModelParams::default()
        };
        let d = Domain::single_particle(&p).unwrap();
        let rho = SingleParticleDensity::new(&d, &p).unwrap();
        let edges: Vec<f64> = (0..=10)
            .map(|i| d.l1 + 0.1 * i as f64 * d.length())
            .collect();
        let r = bin_occupation(&d, &p, &edges, &QuadratureSpec::default()).unwrap();
        for i in 0..10 {
            assert!((r.value[i] - rho.mass(edges[i], edges[i + 1])).abs() < 1e-8);
        }
    }

    #[test]
    fn k0_converges_under_refinement() {
        let p = ModelParams::default();
        let d = build_domain(1, 1, &p).unwrap();
        let obs = |c: &Configuration| vec![KView::new(&d, c.xs()).eval(0.0, Side::Right)];
        let mut spec = QuadratureSpec {
            breakpoints: vec![0.0],
            ..QuadratureSpec::default()
        };
        let a = expectation_quadrature(&d, &p, 1, &obs, &spec).unwrap();
        spec.points_per_dim *= 2;
        let b = expectation_quadrature(&d, &p, 1, &obs, &spec).unwrap();
        assert!((a.value[0] - b.value[0]).abs() <= a.error[0].max(1e-12));
        // theta = 0 measure is reflection symmetric, so E K(0) = 0
        assert!(b.value[0].abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn guards() {
        let p = ModelParams::default();
        let d = build_domain(2, 2, &p).unwrap();
        let spec = QuadratureSpec::default();
        assert!(matches!(
            expectation_quadrature(&d, &p, 1, &|_| vec![1.0], &spec),
            Err(Error::TooManyParticles(4))
        ));
        let d = build_domain(2, 1, &p).unwrap();
        let tight = QuadratureSpec {
            max_nodes: 1000,
            ..spec
        };
        assert!(matches!(
            expectation_quadrature(&d, &p, 1, &|_| vec![1.0], &tight),
            Err(Error::BudgetExceeded { .. })
        ));
    }
}
