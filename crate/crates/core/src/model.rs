//! Physical parameters, finite-tube geometry and the rank-ordered particle
//! configuration shared by the rest of the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical constants of the strip jellium.
///
/// Lengths are in the same unit throughout; `w_width` is the period of the
/// cross-section `[0, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub beta: f64,
    pub q: f64,
    pub rho: f64,
    pub w_width: f64,
    pub theta: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            beta: 2.0,
            q: 1.0,
            rho: 1.0,
            w_width: 1.0,
            theta: 0.0,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {v}"),
        })
    }
}

impl ModelParams {
    pub fn new(beta: f64, q: f64, rho: f64, w_width: f64, theta: f64) -> Result<Self> {
        let p = ModelParams {
            beta,
            q,
            rho,
            w_width,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks every invariant. `beta = 0` is accepted as the ideal-gas
    /// control; all other quantities must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be finite and >= 0, got {}", self.beta),
            });
        }
        positive("q", self.q)?;
        positive("rho", self.rho)?;
        positive("w", self.w_width)?;
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidParameter {
                name: "theta",
                reason: format!("must lie in [0, 1), got {}", self.theta),
            });
        }
        Ok(())
    }

    /// Cell length `1 / (rho W)` holding one particle on average.
    pub fn lambda(&self) -> f64 {
        1.0 / (self.rho * self.w_width)
    }

    /// `beta q^2`, the only combination of the two that enters the measure.
    pub fn coupling(&self) -> f64 {
        self.beta * self.q * self.q
    }

    /// Plasma parameter `beta q^2 rho^((d-2)/d)` with `d = 2`.
    pub fn plasma_parameter(&self) -> f64 {
        self.coupling() * self.rho.powf(0.0)
    }
}

/// Finite tube `[l1, l2] x [0, W)` holding exactly `n1 + n2` particles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub n1: u32,
    pub n2: u32,
    pub theta: f64,
    pub lambda: f64,
    pub w_width: f64,
    pub l1: f64,
    pub l2: f64,
}

/// Builds the neutral domain with endpoints `-(n1 + theta) lambda` and
/// `(n2 - theta) lambda`.
pub fn build_domain(n1: i64, n2: i64, params: &ModelParams) -> Result<Domain> {
    params.validate()?;
    for (name, v) in [("n1", n1), ("n2", n2)] {
        if v < 1 || v > u32::MAX as i64 {
            return Err(Error::InvalidParameter {
                name,
                reason: format!("must be a positive cell count, got {v}"),
            });
        }
    }
    Ok(Domain::with_counts(n1 as u32, n2 as u32, params))
}

impl Domain {
    pub fn new(n1: u32, n2: u32, params: &ModelParams) -> Result<Self> {
        build_domain(n1 as i64, n2 as i64, params)
    }

    /// Single-particle domain (`n1 = 1`, `n2 = 0`). Only meant for checking
    /// the sampler against the analytic one-particle density.
    pub fn single_particle(params: &ModelParams) -> Result<Self> {
        params.validate()?;
        Ok(Domain::with_counts(1, 0, params))
    }

    fn with_counts(n1: u32, n2: u32, params: &ModelParams) -> Self {
        let lambda = params.lambda();
        Domain {
            n1,
            n2,
            theta: params.theta,
            lambda,
            w_width: params.w_width,
            l1: -(n1 as f64 + params.theta) * lambda,
            l2: (n2 as f64 - params.theta) * lambda,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n1 as usize + self.n2 as usize
    }

    pub fn length(&self) -> f64 {
        self.l2 - self.l1
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.l1 + self.l2)
    }

    pub fn contains_open(&self, x: f64) -> bool {
        x > self.l1 && x < self.l2
    }
}

/// Reduces `y` onto the periodic cross-section `[0, w)`.
pub fn wrap_y(y: f64, w: f64) -> f64 {
    let r = y.rem_euclid(w);
    // rem_euclid can round up to exactly w for tiny negative inputs
    if r >= w {
        0.0
    } else {
        r
    }
}

/// A point of the strip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Particle positions ordered by strictly increasing `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Configuration {
    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn point(&self, rank: usize) -> Point {
        Point::new(self.xs[rank], self.ys[rank])
    }

    pub fn points(&self) -> impl Iterator<Item = Point> + '_ {
        self.xs
            .iter()
            .zip(&self.ys)
            .map(|(&x, &y)| Point::new(x, y))
    }

    /// Evenly spaced configuration `x_j = l1 + (j - 1/2) lambda`, `y_j = W/2`.
    pub fn lattice(domain: &Domain) -> Self {
        let n = domain.n_particles();
        let xs = (0..n)
            .map(|j| domain.l1 + (j as f64 + 0.5) * domain.lambda)
            .collect();
        Configuration {
            xs,
            ys: vec![0.5 * domain.w_width; n],
        }
    }

    /// Builds a configuration from already sorted coordinates, checking every
    /// invariant.
    pub fn from_sorted(xs: Vec<f64>, ys: Vec<f64>, domain: &Domain) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidParameter {
                name: "ys",
                reason: format!("expected {} entries, got {}", xs.len(), ys.len()),
            });
        }
        for &x in &xs {
            if !domain.contains_open(x) {
                return Err(Error::OutOfDomain {
                    x,
                    l1: domain.l1,
                    l2: domain.l2,
                });
            }
        }
        for w in xs.windows(2) {
            if w[0] == w[1] {
                return Err(Error::CoincidentX { x: w[0] });
            }
            if w[0] > w[1] {
                return Err(Error::InvalidParameter {
                    name: "xs",
                    reason: "coordinates must be sorted".into(),
                });
            }
        }
        let ys = ys.into_iter().map(|y| wrap_y(y, domain.w_width)).collect();
        Ok(Configuration { xs, ys })
    }

    /// Moves the particle of rank `rank` to `to` and restores the ordering.
    /// Returns the new rank. The caller guarantees the result is valid.
    pub(crate) fn relocate(&mut self, rank: usize, to: Point) -> usize {
        let new_rank = if to.x > self.xs[rank] {
            let rest = &self.xs[rank + 1..];
            rank + rest.partition_point(|&x| x < to.x)
        } else {
            self.xs[..rank].partition_point(|&x| x < to.x)
        };
        if new_rank > rank {
            self.xs[rank..=new_rank].rotate_left(1);
            self.ys[rank..=new_rank].rotate_left(1);
        } else if new_rank < rank {
            self.xs[new_rank..=rank].rotate_right(1);
            self.ys[new_rank..=rank].rotate_right(1);
        }
        self.xs[new_rank] = to.x;
        self.ys[new_rank] = to.y;
        new_rank
    }

    /// Same positions translated by `-u` in x: the configuration seen from `u`.
    pub fn shifted(&self, u: f64) -> Self {
        Configuration {
            xs: self.xs.iter().map(|x| x - u).collect(),
            ys: self.ys.clone(),
        }
    }
}

/// Sorts unordered points by `x`, carrying each `y` along.
pub fn canonicalize(points: &[(f64, f64)], domain: &Domain) -> Result<Configuration> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    for &(x, _) in &pts {
        if !domain.contains_open(x) {
            return Err(Error::OutOfDomain {
                x,
                l1: domain.l1,
                l2: domain.l2,
            });
        }
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (xs, ys) = pts.into_iter().unzip();
    Configuration::from_sorted(xs, ys, domain)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(theta: f64) -> ModelParams {
        ModelParams {
            theta,
            ..ModelParams::default()
        }
    }

    #[test]
    fn domain_endpoints() {
        let d = build_domain(1, 1, &unit(0.0)).unwrap();
        assert_eq!((d.l1, d.l2, d.n_particles()), (-1.0, 1.0, 2));

        let d = build_domain(2, 3, &unit(0.25)).unwrap();
        assert_eq!((d.l1, d.l2, d.n_particles()), (-2.25, 2.75, 5));

        // lambda = 0.5 via rho = 2
        let p = ModelParams {
            rho: 2.0,
            theta: 0.5,
            ..ModelParams::default()
        };
        let d = build_domain(8, 8, &p).unwrap();
        assert_eq!((d.l1, d.l2, d.n_particles()), (-4.25, 3.75, 16));
    }

    #[test]
    fn domain_rejects_empty_halves() {
        assert!(build_domain(0, 3, &unit(0.0)).is_err());
        assert!(build_domain(3, -1, &unit(0.0)).is_err());
    }

    #[test]
    fn params_reject_bad_theta() {
        assert!(ModelParams::new(2.0, 1.0, 1.0, 1.0, 1.0).is_err());
        assert!(ModelParams::new(2.0, 1.0, 1.0, 1.0, -0.1).is_err());
        assert!(ModelParams::new(2.0, 0.0, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn canonicalize_sorts_and_carries_y() {
        let d = build_domain(1, 1, &unit(0.0)).unwrap();
        let c = canonicalize(&[(0.5, 0.1), (-0.5, 0.2)], &d).unwrap();
        assert_eq!(c.xs(), &[-0.5, 0.5]);
        assert_eq!(c.ys(), &[0.2, 0.1]);
    }

    #[test]
    fn canonicalize_errors() {
        let d = build_domain(1, 1, &unit(0.0)).unwrap();
        assert!(matches!(
            canonicalize(&[(3.0, 0.0)], &d),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(matches!(
            canonicalize(&[(0.3, 0.0), (0.3, 0.5)], &d),
            Err(Error::CoincidentX { .. })
        ));
    }

    #[test]
    fn relocate_keeps_order() {
        let d = build_domain(3, 3, &unit(0.0)).unwrap();
        let mut c = Configuration::lattice(&d);
        let r = c.relocate(0, Point::new(2.9, 0.1));
        assert_eq!(r, 5);
        assert!(c.xs().windows(2).all(|w| w[0] < w[1]));
        let r = c.relocate(5, Point::new(-2.9, 0.2));
        assert_eq!(r, 0);
        assert!(c.xs().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(c.ys()[0], 0.2);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn length_is_cell_count(n1 in 1i64..200, n2 in 1i64..200, theta in 0.0f64..1.0,
                                    rho in 0.1f64..5.0, w in 0.1f64..7.0) {
                let p = ModelParams { rho, w_width: w, theta, ..ModelParams::default() };
                let d = build_domain(n1, n2, &p).unwrap();
                let cells = (d.l2 - d.l1) / d.lambda;
                prop_assert!((cells - (n1 + n2) as f64).abs() < 1e-12 * (n1 + n2) as f64);
            }

            #[test]
            fn canonicalize_idempotent(pts in proptest::collection::vec((-3.99f64..3.99, 0.0f64..1.0), 1..12)) {
                let d = build_domain(4, 4, &ModelParams::default()).unwrap();
                if let Ok(c) = canonicalize(&pts, &d) {
                    let again: Vec<(f64, f64)> = c.points().map(|p| (p.x, p.y)).collect();
                    prop_assert_eq!(canonicalize(&again, &d).unwrap(), c);
                }
            }
        }
    }
}
