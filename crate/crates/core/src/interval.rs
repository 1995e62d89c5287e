//! Exact sampling of Brownian first-exit data from intervals.
//!
//! The exit side of `(0, R)` from `x` is drawn from the scale function
//! (`P(exit at R) = x/R`); the exit time conditioned on the side is sampled
//! by inverse transform on the side-conditioned distribution. The
//! distribution function is evaluated through two complementary series: the
//! reflection (image) series for small times and the spectral series for
//! large times, switching at `t = 0.35 R^2`. Both are truncated far below
//! the target accuracy of the inverse solve.

use statrs::function::erf::{erfc, erfc_inv};

use crate::stream::RandomStream;

const CROSSOVER: f64 = 0.35;
const SOLVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitSide {
    /// Exit at coordinate 0.
    Lower,
    /// Exit at coordinate R.
    Upper,
}

/// Sub-distribution function `P_x(τ_0 <= t, τ_0 < τ_1)` for the unit
/// interval. Its total mass is `1 - x`.
pub fn lower_exit_cdf(x: f64, t: f64) -> f64 {
    debug_assert!(x > 0.0 && x < 1.0);
    if t <= 0.0 {
        return 0.0;
    }
    if t < CROSSOVER {
        // Image series: sum over signed copies 2k + x of the start point.
        let s = (2.0 * t).sqrt();
        let mut acc = erfc(x / s);
        for k in 1..=64 {
            let up = 2.0 * k as f64 + x;
            let down = 2.0 * k as f64 - x;
            let t1 = erfc(up / s);
            let t2 = erfc(down / s);
            acc += t1 - t2;
            if t1 < 1e-17 && t2 < 1e-17 {
                break;
            }
        }
        acc
    } else {
        let mut acc = 1.0 - x;
        let mut n = 1.0;
        loop {
            let decay = (-n * n * std::f64::consts::PI * std::f64::consts::PI * t / 2.0).exp();
            if decay < 1e-18 {
                break;
            }
            acc -= 2.0 / (n * std::f64::consts::PI)
                * (n * std::f64::consts::PI * x).sin()
                * decay;
            n += 1.0;
        }
        acc.clamp(0.0, 1.0 - x)
    }
}

/// Density of the sub-distribution above.
pub fn lower_exit_density(x: f64, t: f64) -> f64 {
    debug_assert!(x > 0.0 && x < 1.0);
    if t <= 0.0 {
        return 0.0;
    }
    if t < CROSSOVER {
        let norm = 1.0 / (2.0 * std::f64::consts::PI * t.powi(3)).sqrt();
        let mut acc = x * (-x * x / (2.0 * t)).exp();
        for k in 1..=64 {
            let up = 2.0 * k as f64 + x;
            let down = 2.0 * k as f64 - x;
            let t1 = up * (-up * up / (2.0 * t)).exp();
            let t2 = down * (-down * down / (2.0 * t)).exp();
            acc += t1 - t2;
            if t1.abs() < 1e-300 && t2.abs() < 1e-300 {
                break;
            }
        }
        (acc * norm).max(0.0)
    } else {
        let mut acc = 0.0;
        let mut n = 1.0;
        loop {
            let decay = (-n * n * std::f64::consts::PI * std::f64::consts::PI * t / 2.0).exp();
            if n * decay < 1e-18 {
                break;
            }
            acc += n * (n * std::f64::consts::PI * x).sin() * decay;
            n += 1.0;
        }
        (std::f64::consts::PI * acc).max(0.0)
    }
}

/// Inverse of the side-conditioned exit-time distribution on the unit
/// interval: returns `t` with `P(τ_0 <= t | exit at 0) = u`.
fn invert_lower_exit(x: f64, u: f64) -> f64 {
    let mass = 1.0 - x;
    let target = u * mass;
    debug_assert!(target > 0.0 && target < mass);

    // Initial guess from the dominating term of the relevant branch.
    let mut t = if u < 0.5 {
        let z = erfc_inv(target.min(1.0 - 1e-16));
        if z > 0.0 {
            (x / z).powi(2) / 2.0
        } else {
            x * (2.0 - x) / 3.0
        }
    } else {
        let rem = mass - target;
        let lead = 2.0 / std::f64::consts::PI * (std::f64::consts::PI * x).sin();
        if rem < lead && lead > 0.0 {
            (-2.0 / (std::f64::consts::PI * std::f64::consts::PI)) * (rem / lead).ln()
        } else {
            x * (2.0 - x) / 3.0
        }
    };
    if !t.is_finite() || t <= 0.0 {
        t = x * (2.0 - x) / 3.0;
    }

    // Bracket the root, then run guarded Newton.
    let mut lo = 0.0;
    let mut hi = t.max(1e-12);
    let mut g_hi = lower_exit_cdf(x, hi) - target;
    let mut expansions = 0;
    while g_hi < 0.0 {
        lo = hi;
        hi *= 2.0;
        g_hi = lower_exit_cdf(x, hi) - target;
        expansions += 1;
        assert!(expansions < 200, "failed to bracket exit-time quantile");
    }
    t = t.clamp(lo + (hi - lo) * 1e-6, hi - (hi - lo) * 1e-6);
    for _ in 0..200 {
        let g = lower_exit_cdf(x, t) - target;
        if g > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if g.abs() < SOLVE_TOL * mass || (hi - lo) < SOLVE_TOL * hi {
            break;
        }
        let d = lower_exit_density(x, t);
        let mut next = if d > 0.0 { t - g / d } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        t = next;
    }
    t
}

/// Samples the Brownian exit (side, time) from `(0, R)` started at
/// `x ∈ (0, R)`.
pub fn sample_interval_exit(x: f64, r: f64, stream: &mut RandomStream) -> (ExitSide, f64) {
    assert!(
        x > 0.0 && x < r,
        "start point {x} outside the open interval (0, {r})"
    );
    let xs = x / r;
    let upper = stream.bernoulli(xs);
    let u = stream.uniform();
    // Exit at R from x is exit at 0 from R - x by reflection.
    let t_unit = if upper {
        invert_lower_exit(1.0 - xs, u)
    } else {
        invert_lower_exit(xs, u)
    };
    let side = if upper { ExitSide::Upper } else { ExitSide::Lower };
    (side, t_unit * r * r)
}

/// Samples the first exit time of a standard Brownian motion from
/// `(-eps, eps)` started at 0. Mean `eps^2`.
pub fn sample_ball_exit_time(eps: f64, stream: &mut RandomStream) -> f64 {
    assert!(eps > 0.0);
    // Exit from (-eps, eps) at 0 is exit from (0, 2 eps) at eps; by symmetry
    // the side is a fair coin and the conditional laws coincide.
    let _side = stream.bernoulli(0.5);
    let u = stream.uniform();
    4.0 * eps * eps * invert_lower_exit(0.5, u)
}

/// Samples the one-sided passage time to 0 from `x > 0` (external edges).
pub fn sample_one_sided_passage(x: f64, stream: &mut RandomStream) -> f64 {
    assert!(x > 0.0);
    let u = stream.uniform();
    let z = erfc_inv(u);
    if z <= 0.0 {
        // u drawn essentially at 1: an astronomically large passage time.
        return f64::MAX / 4.0;
    }
    (x / z).powi(2) / 2.0
}

/// Survival function of the ball exit time at unit radius,
/// `P(τ_(-1,1) > t)`, via the alternating spectral series.
pub fn ball_exit_survival(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    let mut m = 0u32;
    loop {
        let k = (2 * m + 1) as f64;
        let term = (if m % 2 == 0 { 1.0 } else { -1.0 }) / k
            * (-k * k * std::f64::consts::PI * std::f64::consts::PI * t / 8.0).exp();
        acc += term;
        if term.abs() < 1e-18 || m > 200 {
            break;
        }
        m += 1;
    }
    (4.0 / std::f64::consts::PI * acc).clamp(0.0, 1.0)
}
