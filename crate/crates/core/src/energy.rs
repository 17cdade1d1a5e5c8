//! Gibbs energy of a configuration.
//!
//! Two equivalent forms are provided: the pairwise form (full pair kernel
//! plus the background confinement) and the decomposed form
//! `U = (q^2 / 2W) int K^2 + q^2 sum_{j<k} V2`. They differ by a constant
//! that depends only on `N` and the domain; only differences are used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfield::KView;
use crate::model::{wrap_y, Configuration, Domain, ModelParams, Point};
use crate::potential::{periodic_dy, v2_strip_unchecked, v_pair, Envelope};

/// Interaction model of the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Strip kernel: one-dimensional part plus `V2`.
    #[default]
    Quasi1d,
    /// Strictly one-dimensional jellium, `V2 = 0`.
    Pure1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub u1: f64,
    pub v2_total: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn new(u1: f64, v2_total: f64) -> Self {
        EnergyBreakdown {
            u1,
            v2_total,
            total: u1 + v2_total,
        }
    }
}

/// Energy change of a single-particle move, split like [`EnergyBreakdown`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveDelta {
    pub du1: f64,
    pub dv2: f64,
}

impl MoveDelta {
    pub fn total(&self) -> f64 {
        self.du1 + self.dv2
    }
}

#[inline]
fn pair_v2(a: Point, b: Point, w: f64) -> Result<f64> {
    let dx = (a.x - b.x).abs();
    let dy = periodic_dy(a.y, b.y, w);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::SingularKernel { dx, dy });
    }
    Ok(v2_strip_unchecked(dx, dy, w))
}

/// Everything needed to evaluate energies of configurations on one domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyModel {
    pub domain: Domain,
    pub params: ModelParams,
    pub mode: Mode,
    /// Optional x-distance beyond which `V2` pairs are skipped. The error is
    /// bounded by [`Envelope::cutoff_error_bound`].
    pub pair_cutoff: Option<f64>,
}

impl EnergyModel {
    pub fn new(domain: Domain, params: ModelParams, mode: Mode) -> Self {
        EnergyModel {
            domain,
            params,
            mode,
            pair_cutoff: None,
        }
    }

    fn q2(&self) -> f64 {
        self.params.q * self.params.q
    }

    fn kview<'a>(&self, xs: &'a [f64]) -> KView<'a> {
        KView::new(&self.domain, xs)
    }

    pub fn u1(&self, cfg: &Configuration) -> f64 {
        let k = self.kview(cfg.xs());
        self.q2() / (2.0 * self.domain.w_width) * k.integral(self.domain.l1, self.domain.l2, 2)
    }

    pub fn v2_total(&self, cfg: &Configuration) -> Result<f64> {
        if self.mode == Mode::Pure1d {
            return Ok(0.0);
        }
        let w = self.domain.w_width;
        let cut = self.pair_cutoff.unwrap_or(f64::INFINITY);
        let (xs, ys) = (cfg.xs(), cfg.ys());
        let mut acc = 0.0;
        for j in 0..xs.len() {
            for k in j + 1..xs.len() {
                if xs[k] - xs[j] > cut {
                    break;
                }
                acc += pair_v2(Point::new(xs[j], ys[j]), Point::new(xs[k], ys[k]), w)?;
            }
        }
        Ok(self.q2() * acc)
    }

    pub fn breakdown(&self, cfg: &Configuration) -> Result<EnergyBreakdown> {
        Ok(EnergyBreakdown::new(self.u1(cfg), self.v2_total(cfg)?))
    }

    /// `q^2 sum_{k != i} V2(z_i, z_k)`: all short-range terms of one particle.
    pub fn v2_of_particle(&self, cfg: &Configuration, rank: usize) -> Result<f64> {
        self.v2_against_others(cfg, rank, cfg.point(rank))
    }

    fn v2_against_others(&self, cfg: &Configuration, rank: usize, z: Point) -> Result<f64> {
        if self.mode == Mode::Pure1d {
            return Ok(0.0);
        }
        let w = self.domain.w_width;
        let cut = self.pair_cutoff.unwrap_or(f64::INFINITY);
        let mut acc = 0.0;
        for (k, other) in cfg.points().enumerate() {
            if k == rank || (other.x - z.x).abs() > cut {
                continue;
            }
            acc += pair_v2(z, other, w)?;
        }
        Ok(self.q2() * acc)
    }

    /// Energy change when particle `rank` moves to `to`, in `O(N)`.
    ///
    /// Only the stretch between the old and new `x` sees `K` change, by
    /// exactly one unit, so the one-dimensional part reduces to an integral
    /// of the old field over that stretch.
    pub fn delta_move(&self, cfg: &Configuration, rank: usize, to: Point) -> Result<MoveDelta> {
        let d = &self.domain;
        if !d.contains_open(to.x) {
            return Err(Error::OutOfDomain {
                x: to.x,
                l1: d.l1,
                l2: d.l2,
            });
        }
        let to = Point::new(to.x, wrap_y(to.y, d.w_width));
        let xs = cfg.xs();
        let old = cfg.point(rank);
        if to.x != old.x {
            let pos = xs.partition_point(|&x| x < to.x);
            if pos < xs.len() && xs[pos] == to.x {
                return Err(Error::CoincidentX { x: to.x });
            }
        }

        let k = self.kview(xs);
        let integral = if to.x >= old.x {
            2.0 * k.integral(old.x, to.x, 1) + (to.x - old.x)
        } else {
            -2.0 * k.integral(to.x, old.x, 1) + (old.x - to.x)
        };
        let du1 = self.q2() / (2.0 * d.w_width) * integral;

        let dv2 = if self.mode == Mode::Pure1d || to == old {
            0.0
        } else {
            self.v2_against_others(cfg, rank, to)? - self.v2_against_others(cfg, rank, old)?
        };
        Ok(MoveDelta { du1, dv2 })
    }
}

/// `U = U1 + V2` with `U1 = (q^2 / 2W) int K^2`.
pub fn energy_decomposed(
    cfg: &Configuration,
    domain: &Domain,
    params: &ModelParams,
) -> Result<EnergyBreakdown> {
    EnergyModel::new(*domain, *params, Mode::Quasi1d).breakdown(cfg)
}

/// `sum_{j<k} q^2 V(z_j, z_k) + (q^2 rho / 2) sum_j (x_j - (l1 + l2)/2)^2`,
/// the configuration-dependent part of the pairwise energy.
pub fn energy_pairwise(cfg: &Configuration, domain: &Domain, params: &ModelParams) -> Result<f64> {
    let q2 = params.q * params.q;
    let w = domain.w_width;
    let pts: Vec<Point> = cfg.points().collect();
    let mut pairs = 0.0;
    for (j, &a) in pts.iter().enumerate() {
        for &b in &pts[j + 1..] {
            pairs += v_pair(a, b, w)?;
        }
    }
    let c = domain.center();
    let confinement: f64 = cfg.xs().iter().map(|x| (x - c) * (x - c)).sum();
    Ok(q2 * pairs + 0.5 * q2 * params.rho * confinement)
}

/// `U(omega') - U(omega)` for moving particle `rank` to `new_z`.
pub fn delta_u_move(
    cfg: &Configuration,
    domain: &Domain,
    params: &ModelParams,
    rank: usize,
    new_z: Point,
) -> Result<f64> {
    EnergyModel::new(*domain, *params, Mode::Quasi1d)
        .delta_move(cfg, rank, new_z)
        .map(|d| d.total())
}

/// Energy released by replacing every particle with `x` in `[a, b]` by a
/// uniformly charged rod: the `V2` terms with at least one member inside.
pub fn rod_replacement_delta(
    cfg: &Configuration,
    domain: &Domain,
    params: &ModelParams,
    region: (f64, f64),
) -> Result<f64> {
    let (a, b) = region;
    let inside = |x: f64| x >= a && x <= b;
    let w = domain.w_width;
    let pts: Vec<Point> = cfg.points().collect();
    let mut acc = 0.0;
    for (j, &p) in pts.iter().enumerate() {
        for &o in &pts[j + 1..] {
            if inside(p.x) || inside(o.x) {
                acc += pair_v2(p, o, w)?;
            }
        }
    }
    Ok(params.q * params.q * acc)
}

/// Cell lower bound `-q^2 C sum_k n_k^2` on the total `V2` energy, with
/// cells `[k lambda, (k+1) lambda)` and `C` from the envelope.
pub fn v2_cell_lower_bound(
    cfg: &Configuration,
    domain: &Domain,
    params: &ModelParams,
    envelope: &Envelope,
) -> f64 {
    let lambda = domain.lambda;
    let mut counts: Vec<(i64, u64)> = Vec::new();
    for &x in cfg.xs() {
        let k = (x / lambda).floor() as i64;
        match counts.last_mut() {
            Some((cell, n)) if *cell == k => *n += 1,
            _ => counts.push((k, 1)),
        }
    }
    let sum_sq: f64 = counts.iter().map(|&(_, n)| (n * n) as f64).sum();
    -params.q * params.q * envelope.cell_constant(lambda) * sum_sq
}

/// Both sides of the rod-replacement Jensen inequality for particle `rank`,
/// in log form: `-beta U(rod)` and `ln((1/W) int e^{-beta U} dy_rank)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JensenCheck {
    pub log_rod_weight: f64,
    pub log_mean_weight: f64,
}

impl JensenCheck {
    pub fn gap(&self) -> f64 {
        self.log_mean_weight - self.log_rod_weight
    }
}

/// Evaluates [`JensenCheck`] with a `y_nodes`-point periodic trapezoid rule.
pub fn rod_jensen_check(
    cfg: &Configuration,
    domain: &Domain,
    params: &ModelParams,
    rank: usize,
    y_nodes: usize,
) -> Result<JensenCheck> {
    let model = EnergyModel::new(*domain, *params, Mode::Quasi1d);
    let total = model.breakdown(cfg)?.total;
    let rod_energy = total - model.v2_of_particle(cfg, rank)?;
    let x = cfg.xs()[rank];
    let w = domain.w_width;
    let beta = params.beta;

    let mut exps = Vec::with_capacity(y_nodes);
    for i in 0..y_nodes {
        let y = (i as f64 + 0.5) * w / y_nodes as f64;
        let v = model.v2_against_others(cfg, rank, Point::new(x, y))?;
        exps.push(-beta * v);
    }
    let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = exps.iter().map(|e| (e - m).exp()).sum::<f64>() / y_nodes as f64;
    Ok(JensenCheck {
        log_rod_weight: -beta * rod_energy,
        log_mean_weight: -beta * rod_energy + m + mean.ln(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_domain;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cfg(rng: &mut ChaCha8Rng, d: &Domain) -> Configuration {
        let pts: Vec<(f64, f64)> = (0..d.n_particles())
            .map(|_| {
                (
                    rng.random_range(d.l1..d.l2),
                    rng.random_range(0.0..d.w_width),
                )
            })
            .collect();
        crate::model::canonicalize(&pts, d).unwrap()
    }

    #[test]
    fn single_particle() {
        let p = ModelParams::default();
        let d = Domain::single_particle(&p).unwrap();
        let cfg = Configuration::from_sorted(vec![-0.3], vec![0.1], &d).unwrap();
        let e = energy_decomposed(&cfg, &d, &p).unwrap();
        assert_eq!(e.v2_total, 0.0);
        // s = 0.7: lambda/3 (s^3 + (1-s)^3) / 2W
        let expect = (0.343 + 0.027) / 3.0 / 2.0;
        assert!((e.u1 - expect).abs() < 1e-15);
        let pw = energy_pairwise(&cfg, &d, &p).unwrap();
        assert!((pw - 0.5 * 0.2f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn y_translation_invariance() {
        let p = ModelParams::default();
        let d = build_domain(4, 4, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let cfg = random_cfg(&mut rng, &d);
            let s = rng.random_range(0.0..1.0);
            let moved = Configuration::from_sorted(
                cfg.xs().to_vec(),
                cfg.ys().iter().map(|y| y + s).collect(),
                &d,
            )
            .unwrap();
            let a = energy_decomposed(&cfg, &d, &p).unwrap().total;
            let b = energy_decomposed(&moved, &d, &p).unwrap().total;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reflection_symmetry_at_theta_zero() {
        let p = ModelParams::default();
        let d = build_domain(5, 5, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let cfg = random_cfg(&mut rng, &d);
            let pts: Vec<(f64, f64)> = cfg.points().map(|z| (d.l1 + d.l2 - z.x, z.y)).collect();
            let refl = crate::model::canonicalize(&pts, &d).unwrap();
            let a = energy_pairwise(&cfg, &d, &p).unwrap();
            let b = energy_pairwise(&refl, &d, &p).unwrap();
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
            let a = energy_decomposed(&cfg, &d, &p).unwrap().total;
            let b = energy_decomposed(&refl, &d, &p).unwrap().total;
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
    }

    #[test]
    fn null_and_y_only_moves() {
        let p = ModelParams::default();
        let d = build_domain(3, 3, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = random_cfg(&mut rng, &d);
        let m = EnergyModel::new(d, p, Mode::Quasi1d);
        for i in 0..cfg.len() {
            assert_eq!(delta_u_move(&cfg, &d, &p, i, cfg.point(i)).unwrap(), 0.0);
            let to = Point::new(cfg.xs()[i], cfg.ys()[i] + 0.3);
            assert_eq!(m.delta_move(&cfg, i, to).unwrap().du1, 0.0);
        }
    }

    #[test]
    fn move_errors() {
        let p = ModelParams::default();
        let d = build_domain(3, 3, &p).unwrap();
        let cfg = Configuration::lattice(&d);
        assert!(matches!(
            delta_u_move(&cfg, &d, &p, 0, Point::new(10.0, 0.0)),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            delta_u_move(&cfg, &d, &p, 0, Point::new(cfg.xs()[2], 0.0)),
            Err(Error::CoincidentX { .. })
        ));
    }

    #[test]
    fn moves_match_recomputation() {
        let p = ModelParams {
            w_width: 1.3,
            ..ModelParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..1000 {
            let n = 1 + trial % 10;
            let d = build_domain(n as i64, (1 + trial % 7) as i64, &p).unwrap();
            let cfg = random_cfg(&mut rng, &d);
            let i = rng.random_range(0..cfg.len());
            let to = Point::new(rng.random_range(d.l1..d.l2), rng.random_range(0.0..2.0));
            let delta = delta_u_move(&cfg, &d, &p, i, to).unwrap();
            let mut moved = cfg.clone();
            moved.relocate(i, Point::new(to.x, wrap_y(to.y, d.w_width)));
            let before = energy_decomposed(&cfg, &d, &p).unwrap().total;
            let after = energy_decomposed(&moved, &d, &p).unwrap().total;
            assert!(
                (delta - (after - before)).abs() < 1e-9,
                "{delta} vs {}",
                after - before
            );
        }
    }

    #[test]
    fn rod_replacement_edges() {
        let p = ModelParams::default();
        let d = build_domain(4, 4, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = random_cfg(&mut rng, &d);
        let gap = (cfg.xs()[3], cfg.xs()[4]);
        let empty = (
            gap.0 + 0.25 * (gap.1 - gap.0),
            gap.0 + 0.75 * (gap.1 - gap.0),
        );
        assert_eq!(rod_replacement_delta(&cfg, &d, &p, empty).unwrap(), 0.0);
        let all = rod_replacement_delta(&cfg, &d, &p, (d.l1, d.l2)).unwrap();
        let v2 = energy_decomposed(&cfg, &d, &p).unwrap().v2_total;
        assert!((all - v2).abs() < 1e-14);
    }

    #[test]
    fn rod_replacement_matches_masked_recomputation() {
        let p = ModelParams::default();
        let d = build_domain(5, 5, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let cfg = random_cfg(&mut rng, &d);
            let a = rng.random_range(d.l1..d.l2);
            let b = rng.random_range(a..d.l2);
            let total = energy_decomposed(&cfg, &d, &p).unwrap();
            // masked: only pairs with both members outside [a, b] keep V2
            let mut outside = 0.0;
            for j in 0..cfg.len() {
                for k in j + 1..cfg.len() {
                    let (xj, xk) = (cfg.xs()[j], cfg.xs()[k]);
                    if (xj < a || xj > b) && (xk < a || xk > b) {
                        outside += v2_strip_unchecked(
                            (xj - xk).abs(),
                            periodic_dy(cfg.ys()[j], cfg.ys()[k], d.w_width),
                            d.w_width,
                        );
                    }
                }
            }
            let expect = total.total - (total.u1 + outside);
            let got = rod_replacement_delta(&cfg, &d, &p, (a, b)).unwrap();
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn pure1d_drops_short_range() {
        let p = ModelParams::default();
        let d = build_domain(4, 4, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = random_cfg(&mut rng, &d);
        let m = EnergyModel::new(d, p, Mode::Pure1d);
        assert_eq!(m.v2_total(&cfg).unwrap(), 0.0);
        let to = Point::new(0.123, 0.9);
        let delta = m.delta_move(&cfg, 2, to).unwrap();
        assert_eq!(delta.dv2, 0.0);
    }

    #[test]
    fn cutoff_error_is_bounded() {
        let p = ModelParams::default();
        let d = build_domain(10, 10, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let env = Envelope::new(d.w_width, d.lambda / 10.0);
        let mut m = EnergyModel::new(d, p, Mode::Quasi1d);
        for _ in 0..20 {
            let cfg = random_cfg(&mut rng, &d);
            let exact = m.v2_total(&cfg).unwrap();
            m.pair_cutoff = Some(2.0);
            let cut = m.v2_total(&cfg).unwrap();
            m.pair_cutoff = None;
            let bound = env.cutoff_error_bound(cfg.len(), 2.0);
            assert!((exact - cut).abs() <= bound);
        }
    }

    #[test]
    fn jensen_direction() {
        let p = ModelParams::default();
        let d = build_domain(2, 1, &p).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let cfg = random_cfg(&mut rng, &d);
            let k = rng.random_range(0..cfg.len());
            let j = rod_jensen_check(&cfg, &d, &p, k, 4096).unwrap();
            assert!(j.gap() >= -1e-12, "{j:?}");
        }
    }
}
