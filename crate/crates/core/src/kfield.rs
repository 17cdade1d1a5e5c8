//! The particle-excess function
//! `K(u) = (u - l1) / lambda - #{j : x_j <= u}` on `[l1, l2]`, zero outside.
//!
//! `K` is stored symbolically as its jump locations; every integral is a sum
//! of exact per-segment antiderivatives.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Configuration, Domain};

/// Which one-sided value to take at a jump.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Side {
    #[default]
    Right,
    Left,
}

/// Borrowed form of a [`KField`], used on hot paths to avoid copying the
/// jump list.
#[derive(Debug, Clone, Copy)]
pub struct KView<'a> {
    pub l1: f64,
    pub l2: f64,
    pub lambda: f64,
    pub jumps: &'a [f64],
}

#[inline]
fn segment_integral(k_start: f64, k_end: f64, len: f64, power: u8) -> f64 {
    match power {
        1 => 0.5 * len * (k_start + k_end),
        _ => len * (k_start * k_start + k_start * k_end + k_end * k_end) / 3.0,
    }
}

impl<'a> KView<'a> {
    pub fn new(domain: &Domain, jumps: &'a [f64]) -> Self {
        KView {
            l1: domain.l1,
            l2: domain.l2,
            lambda: domain.lambda,
            jumps,
        }
    }

    /// Number of jumps at or left of `u`.
    pub fn count_le(&self, u: f64) -> usize {
        self.jumps.partition_point(|&x| x <= u)
    }

    pub fn eval(&self, u: f64, side: Side) -> f64 {
        match side {
            Side::Right => {
                if u < self.l1 || u > self.l2 {
                    return 0.0;
                }
                (u - self.l1) / self.lambda - self.count_le(u) as f64
            }
            Side::Left => {
                if u <= self.l1 || u > self.l2 {
                    return 0.0;
                }
                let below = self.jumps.partition_point(|&x| x < u);
                (u - self.l1) / self.lambda - below as f64
            }
        }
    }

    /// `int_a^b K^power du` for `power` 1 or 2.
    pub fn integral(&self, a: f64, b: f64, power: u8) -> f64 {
        debug_assert!(power == 1 || power == 2);
        let (a, b) = (a.max(self.l1), b.min(self.l2));
        if b <= a {
            return 0.0;
        }
        let mut i = self.count_le(a);
        let mut s = a;
        let mut acc = 0.0;
        loop {
            let e = match self.jumps.get(i) {
                Some(&x) if x < b => x,
                _ => b,
            };
            let offset = i as f64;
            let ks = (s - self.l1) / self.lambda - offset;
            let ke = (e - self.l1) / self.lambda - offset;
            acc += segment_integral(ks, ke, e - s, power);
            if e >= b {
                break;
            }
            s = e;
            i += 1;
        }
        acc
    }
}

/// Owned particle-excess function of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KField {
    l1: f64,
    l2: f64,
    lambda: f64,
    jumps: Vec<f64>,
}

/// Reconstruction of the phase from particle positions in `(0, R)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reconstruction {
    pub estimator: f64,
    pub phase: Complex64,
}

/// `e^{i 2 pi v}` with the argument reduced first.
pub fn unit_phase(v: f64) -> Complex64 {
    Complex64::cis(TAU * (v - v.floor()))
}

impl KField {
    pub fn new(domain: &Domain, cfg: &Configuration) -> Self {
        KField {
            l1: domain.l1,
            l2: domain.l2,
            lambda: domain.lambda,
            jumps: cfg.xs().to_vec(),
        }
    }

    /// Raw constructor; `jumps` must be sorted and lie inside `(l1, l2)`.
    pub fn from_parts(l1: f64, l2: f64, lambda: f64, jumps: Vec<f64>) -> Self {
        debug_assert!(jumps.windows(2).all(|w| w[0] <= w[1]));
        KField {
            l1,
            l2,
            lambda,
            jumps,
        }
    }

    pub fn view(&self) -> KView<'_> {
        KView {
            l1: self.l1,
            l2: self.l2,
            lambda: self.lambda,
            jumps: &self.jumps,
        }
    }

    pub fn l1(&self) -> f64 {
        self.l1
    }

    pub fn l2(&self) -> f64 {
        self.l2
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn jumps(&self) -> &[f64] {
        &self.jumps
    }

    pub fn eval(&self, u: f64, side: Side) -> f64 {
        self.view().eval(u, side)
    }

    pub fn integral(&self, a: f64, b: f64, power: u8) -> f64 {
        self.view().integral(a, b, power)
    }

    /// The field seen from `u`: everything translated by `-u`, so that the
    /// new field at 0 equals this one at `u`.
    pub fn shifted(&self, u: f64) -> Self {
        KField {
            l1: self.l1 - u,
            l2: self.l2 - u,
            lambda: self.lambda,
            jumps: self.jumps.iter().map(|x| x - u).collect(),
        }
    }

    /// Charge of `(0, u]` in units of `q`: `u / lambda - #{x_j in (0, u]}`,
    /// extended to `u < 0` so that it stays additive.
    pub fn charge_cocycle(&self, u: f64) -> f64 {
        let v = self.view();
        u / self.lambda - (v.count_le(u) as f64 - v.count_le(0.0) as f64)
    }

    /// `e^{i 2 pi K(x)}`.
    pub fn phase(&self, x: f64) -> Complex64 {
        unit_phase(self.eval(x, Side::Right))
    }

    /// `sum_{0 < x_j < R} (1 - x_j / R) - R / (2 lambda)` and its phase.
    ///
    /// For `R <= l2` the estimator equals `K(0) - (1/R) int_0^R K` exactly.
    pub fn reconstruction(&self, r_cut: f64) -> Reconstruction {
        let start = self.jumps.partition_point(|&x| x <= 0.0);
        let end = self.jumps.partition_point(|&x| x < r_cut);
        let sum: f64 = self.jumps[start..end.max(start)]
            .iter()
            .map(|x| 1.0 - x / r_cut)
            .sum();
        let estimator = sum - r_cut / (2.0 * self.lambda);
        Reconstruction {
            estimator,
            phase: unit_phase(estimator),
        }
    }

    /// Looks for the crossing event of level `gamma` around the origin.
    ///
    /// The event is reported when `K(0) > gamma`: `-ell lambda` is where `K`
    /// last rises through `gamma` left of the origin and `r` is the first
    /// particle right of it where `K` drops to `gamma` or below. The left
    /// crossing must sit on a cell boundary `k lambda`, which is the case
    /// for `theta = 0`.
    pub fn detect_crossing_event(&self, gamma: u32) -> Option<CrossingEvent> {
        if gamma == 0 || !(self.l1 < 0.0 && self.l2 > 0.0) {
            return None;
        }
        let g = gamma as f64;
        let v = self.view();
        let k0 = v.eval(0.0, Side::Right);
        if !(k0 > g) {
            return None;
        }
        let at_origin = v.count_le(0.0);

        // walk segments leftwards until K(segment start) <= gamma
        let mut left = None;
        for j in (0..=at_origin).rev() {
            let s = if j == 0 { self.l1 } else { self.jumps[j - 1] };
            let ks = (s - self.l1) / self.lambda - j as f64;
            if ks <= g {
                left = Some(self.l1 + (g + j as f64) * self.lambda);
                break;
            }
        }
        let a = left?;
        let ell_real = -a / self.lambda;
        let ell = ell_real.round();
        if ell < 1.0 || (ell_real - ell).abs() > 1e-9 * ell.max(1.0) {
            return None;
        }

        // first particle right of the origin where K drops to <= gamma
        let mut r = None;
        let mut min_inside = f64::INFINITY;
        for j in at_origin..self.jumps.len() {
            let x = self.jumps[j];
            let k_after = (x - self.l1) / self.lambda - (j + 1) as f64;
            if k_after <= g {
                r = Some(x);
                break;
            }
            min_inside = min_inside.min(k_after);
        }
        let r = r?;
        for j in (0..at_origin).rev() {
            let x = self.jumps[j];
            if x <= a {
                break;
            }
            min_inside = min_inside.min((x - self.l1) / self.lambda - (j + 1) as f64);
        }

        let ell = ell as u32;
        let big_r = (r / self.lambda).floor() as i64;
        let mut cell_counts = Vec::with_capacity(ell as usize + big_r as usize + 1);
        for k in -(ell as i64)..=big_r {
            let lo = k as f64 * self.lambda;
            let hi = if k == big_r {
                r
            } else {
                (k + 1) as f64 * self.lambda
            };
            let n =
                self.jumps.partition_point(|&x| x < hi) - self.jumps.partition_point(|&x| x < lo);
            cell_counts.push(n as u32);
        }

        Some(CrossingEvent {
            gamma,
            ell,
            r,
            kind: if k0 > 3.0 * g {
                CrossingKind::GPlus
            } else {
                CrossingKind::G
            },
            k_origin: k0,
            weak_plus: k0 >= 3.0 * g && min_inside >= g,
            strict_above: min_inside > g,
            cell_counts,
        })
    }

    /// Slack in the improved energy bound for a G+ event, in units where
    /// `lambda = 1`:
    /// `int_{-ell}^{r} K^2 - [gamma^2 (ell + r) + sum_k (gamma n_k^2 + n_k^3 / 3)]`.
    pub fn improved_bound_margin(&self, event: &CrossingEvent) -> Result<f64> {
        if event.kind != CrossingKind::GPlus {
            return Err(Error::NotGPlus);
        }
        let g = event.gamma as f64;
        let lo = -(event.ell as f64) * self.lambda;
        let energy = self.integral(lo, event.r, 2) / self.lambda;
        let span = event.ell as f64 + event.r / self.lambda;
        let cells: f64 = event
            .cell_counts
            .iter()
            .map(|&n| {
                let n = n as f64;
                g * n * n + n * n * n / 3.0
            })
            .sum();
        Ok(energy - (g * g * span + cells))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingKind {
    G,
    GPlus,
}

/// Crossing of level `gamma` at cell `-ell` on the left and particle `r` on
/// the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub gamma: u32,
    pub ell: u32,
    pub r: f64,
    /// `G+` when `K(0) > 3 gamma` on top of the crossing conditions.
    pub kind: CrossingKind,
    pub k_origin: f64,
    /// The non-strict reading: `K(0) >= 3 gamma` and `min K >= gamma`.
    pub weak_plus: bool,
    /// `K > gamma` at every particle strictly between the crossings.
    pub strict_above: bool,
    /// Particle counts of cells `[k lambda, (k+1) lambda)` for
    /// `k = -ell .. R-1`, then of `[R lambda, r)`.
    pub cell_counts: Vec<u32>,
}

impl CrossingEvent {
    pub fn big_r(&self, lambda: f64) -> i64 {
        (self.r / lambda).floor() as i64
    }
}
