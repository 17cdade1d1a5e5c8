//! Coulomb kernel of the periodic strip.
//!
//! The pair potential splits into the one-dimensional term `-|dx| / (2W)`
//! and a short-range correction `V2(y, y'; |dx|)`. The closed form below is
//! the production kernel; the eigenmode series cross-checks it and is the
//! hook for other cross-sections.

use std::f64::consts::{LN_2, PI, TAU};
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::Point;

/// Periodic distance between two cross-section coordinates.
pub fn periodic_dy(y: f64, y_prime: f64, w: f64) -> f64 {
    let d = (y - y_prime).rem_euclid(w);
    d.min(w - d)
}

/// `ln |1 - exp(-2 pi (dx + i dy) / W)|^2`, accurate both near coincidence
/// and in the exponentially small far field.
fn strip_log_modulus_sq(dx: f64, dy: f64, w: f64) -> f64 {
    let t = TAU * dx / w;
    let e = (-t).exp();
    if t > 1.0 {
        (e * (e - 2.0 * (TAU * dy / w).cos())).ln_1p()
    } else {
        let one_minus = -(-t).exp_m1();
        let s = (PI * dy / w).sin();
        (one_minus * one_minus + 4.0 * e * s * s).ln()
    }
}

/// Short-range correction `V2` of the strip kernel, in units of `q^2`.
pub fn v2_strip(y: f64, y_prime: f64, dx: f64, w: f64) -> Result<f64> {
    let dx = dx.abs();
    let dy = periodic_dy(y, y_prime, w);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::SingularKernel { dx, dy });
    }
    Ok(v2_strip_unchecked(dx, dy, w))
}

/// `V2` for a known non-coincident pair; `dy` is already the periodic distance.
#[inline]
pub(crate) fn v2_strip_unchecked(dx: f64, dy: f64, w: f64) -> f64 {
    -strip_log_modulus_sq(dx, dy, w) / (2.0 * TAU)
}

/// Full pair potential `-(2 pi)^-1 log|2 sinh(pi (z - z') / W)|`, in units of
/// `q^2`. Evaluated through the complex hyperbolic sine, independently of
/// [`v2_strip`].
pub fn v_pair(z: Point, z_prime: Point, w: f64) -> Result<f64> {
    let dx = (z.x - z_prime.x).abs();
    let dy = periodic_dy(z.y, z_prime.y, w);
    if dx == 0.0 && dy == 0.0 {
        return Err(Error::SingularKernel { dx, dy });
    }
    let a = Complex64::new(PI * dx / w, PI * dy / w);
    let log_abs = if a.re < 300.0 {
        (2.0 * a.sinh()).norm().ln()
    } else {
        // |2 sinh a| = e^{Re a} |1 - e^{-2a}| and the second factor is 1 to
        // machine precision here
        a.re
    };
    Ok(-log_abs / TAU)
}

/// One eigenpair of the cross-section Laplacian.
#[derive(Clone)]
pub struct EigenMode {
    /// Eigenvalue `E_n > 0`.
    pub energy: f64,
    /// Eigenfunction `y -> phi_n(y)`.
    pub phi: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
    /// `sup_y |phi_n(y)|^2`, used by the truncation bound.
    pub sup_abs_sq: f64,
}

impl fmt::Debug for EigenMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EigenMode")
            .field("energy", &self.energy)
            .field("sup_abs_sq", &self.sup_abs_sq)
            .finish_non_exhaustive()
    }
}

/// Non-constant eigenmodes `W^{-1/2} e^{2 pi i n y / W}` of the periodic
/// strip, ordered `n = +1, -1, +2, -2, ...` so eigenvalues ascend.
pub fn strip_modes(w: f64, count: usize) -> Vec<EigenMode> {
    (0..count)
        .map(|k| {
            let n = (k / 2 + 1) as f64 * if k % 2 == 0 { 1.0 } else { -1.0 };
            let norm = w.sqrt().recip();
            EigenMode {
                energy: (TAU * n / w).powi(2),
                phi: Arc::new(move |y| Complex64::from_polar(norm, TAU * n * y / w)),
                sup_abs_sq: 1.0 / w,
            }
        })
        .collect()
}

/// Kernel description shared by the series evaluation and the envelope.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub w_width: f64,
    pub modes: Option<Vec<EigenMode>>,
    pub series_cutoff: usize,
    /// Distance below which the envelope is capped (`lambda / 10` by default).
    pub g_scale: f64,
}

impl KernelSpec {
    pub fn closed_form(w_width: f64, lambda: f64) -> Self {
        KernelSpec {
            w_width,
            modes: None,
            series_cutoff: 0,
            g_scale: lambda / 10.0,
        }
    }

    pub fn strip_series(w_width: f64, lambda: f64, cutoff: usize) -> Self {
        KernelSpec {
            w_width,
            modes: Some(strip_modes(w_width, cutoff)),
            series_cutoff: cutoff,
            g_scale: lambda / 10.0,
        }
    }
}

/// Truncated series value together with a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// `V2` from the eigenfunction expansion, truncated after
/// `spec.series_cutoff` modes.
///
/// The tail bound assumes `sqrt(E_n)` keeps growing at least at the mean
/// spacing of the supplied modes and that `|phi_n|^2` stays below the
/// largest supplied `sup_abs_sq`. Both hold for the strip.
pub fn v2_series(y: f64, y_prime: f64, dx: f64, spec: &KernelSpec) -> Result<SeriesValue> {
    let modes = match &spec.modes {
        Some(m) if !m.is_empty() => m,
        _ => return Err(Error::EmptyModeList),
    };
    if !(dx > 0.0) {
        return Err(Error::NonPositiveDx(dx));
    }
    let used = &modes[..spec.series_cutoff.clamp(1, modes.len())];
    let mut sum = Complex64::new(0.0, 0.0);
    for m in used {
        let k = m.energy.sqrt();
        let amp = (-dx * k).exp() / (2.0 * k);
        sum += (m.phi)(y).conj() * (m.phi)(y_prime) * amp;
    }

    let first = used[0].energy.sqrt();
    let last = used[used.len() - 1].energy.sqrt();
    let sup = used.iter().map(|m| m.sup_abs_sq).fold(0.0, f64::max);
    let tail_bound = if used.len() < 2 || last <= first {
        f64::INFINITY
    } else {
        let spacing = (last - first) / (used.len() - 1) as f64;
        let ratio = (-dx * spacing).exp();
        sup * (-dx * last).exp() / (2.0 * last) * ratio / (1.0 - ratio)
    };
    Ok(SeriesValue {
        value: sum.re,
        tail_bound,
    })
}

/// Which representation of `V2` to integrate.
#[derive(Debug, Clone)]
pub enum Kernel {
    ClosedForm { w_width: f64 },
    Series(KernelSpec),
}

impl Kernel {
    pub fn w_width(&self) -> f64 {
        match self {
            Kernel::ClosedForm { w_width } => *w_width,
            Kernel::Series(s) => s.w_width,
        }
    }

    pub fn v2(&self, y: f64, y_prime: f64, dx: f64) -> Result<f64> {
        match self {
            Kernel::ClosedForm { w_width } => v2_strip(y, y_prime, dx, *w_width),
            Kernel::Series(s) => v2_series(y, y_prime, dx, s).map(|v| v.value),
        }
    }
}

/// Trapezoid estimate of `int_0^W V2(y, y'; dx) dy` over `points` periodic
/// nodes. The exact value is zero.
pub fn check_zero_average(kernel: &Kernel, dx: f64, y_prime: f64, points: usize) -> Result<f64> {
    if !(dx > 0.0) {
        return Err(Error::NonPositiveDx(dx));
    }
    let w = kernel.w_width();
    let h = w / points as f64;
    let mut acc = 0.0;
    for i in 0..points {
        acc += kernel.v2(i as f64 * h, y_prime, dx)?;
    }
    Ok(acc * h)
}

/// Positive decreasing envelope `g` with `V2 >= -g` and `V2 <= g` past the
/// cap distance.
///
/// Away from the cap `g(dx) = (2 pi)^-1 e^{-t} / (1 - e^{-t})`,
/// `t = 2 pi dx / W`, which dominates `|V2|`. Below that it is held at `g0`,
/// the larger of the grid maximum of `|V2|` at the cap distance and
/// `ln 2 / (2 pi)`, the global supremum of `-V2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope {
    w_width: f64,
    cap_distance: f64,
    g0: f64,
}

impl Envelope {
    pub fn new(w_width: f64, cap_distance: f64) -> Self {
        const GRID: usize = 512;
        let mut g0 = LN_2 / TAU;
        for i in 0..=GRID {
            let dy = 0.5 * w_width * i as f64 / GRID as f64;
            g0 = g0.max(v2_strip_unchecked(cap_distance, dy, w_width).abs());
        }
        Envelope {
            w_width,
            cap_distance,
            g0,
        }
    }

    pub fn from_spec(spec: &KernelSpec) -> Self {
        Envelope::new(spec.w_width, spec.g_scale)
    }

    pub fn cap(&self) -> f64 {
        self.g0
    }

    pub fn cap_distance(&self) -> f64 {
        self.cap_distance
    }

    pub fn eval(&self, dx: f64) -> f64 {
        let t = TAU * dx.abs() / self.w_width;
        if t == 0.0 {
            return self.g0;
        }
        let tail = (-t).exp() / (-(-t).exp_m1()) / TAU;
        tail.min(self.g0)
    }

    /// `C = (5/2) g(0) + 2 sum_{D >= 1} g(D lambda)`, the constant of the cell
    /// lower bound on `V2`.
    pub fn cell_constant(&self, lambda: f64) -> f64 {
        let mut sum = 0.0;
        let mut d = 1usize;
        loop {
            let g = self.eval(d as f64 * lambda);
            sum += g;
            if g < 1e-18 * sum || d > 1_000_000 {
                break;
            }
            d += 1;
        }
        2.5 * self.g0 + 2.0 * sum
    }

    /// Bound on the pair energy dropped when pairs further apart than
    /// `x_cut` are skipped, for any `n` particles, in units of `q^2`.
    pub fn cutoff_error_bound(&self, n: usize, x_cut: f64) -> f64 {
        let pairs = (n * n.saturating_sub(1) / 2) as f64;
        pairs * self.eval(x_cut)
    }
}

/// Envelope value `g(dx)` for the kernel described by `spec`.
pub fn g_envelope(dx: f64, spec: &KernelSpec) -> f64 {
    Envelope::from_spec(spec).eval(dx)
}
