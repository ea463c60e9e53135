//! Small derivative-free minimizers over phases.

use std::f64::consts::{PI, TAU};

const GRID: usize = 64;
const GRID_2D: usize = 32;

pub(crate) fn golden_section(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-13 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Grid over `[0, 2pi)` then golden-section around the best cell.
pub(crate) fn minimize_phase(f: impl Fn(f64) -> f64) -> (f64, f64) {
    let step = TAU / GRID as f64;
    let (k, _) = (0..GRID)
        .map(|k| (k, f(k as f64 * step)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    let x0 = k as f64 * step;
    golden_section(&f, x0 - step, x0 + step)
}

/// Minimizes `f(a, b)` over two phases.
///
/// First holds `a = hint` and optimizes `b`. A 2-D grid plus coordinate
/// refinement replaces that answer only if it is lower by more than 1e-12,
/// so phase-insensitive directions keep the hint.
pub(crate) fn minimize_phase_pair(f: impl Fn(f64, f64) -> f64, hint: f64) -> (f64, f64, f64) {
    let (b, v) = minimize_phase(|b| f(hint, b));
    let mut best = (hint, b, v);
    let step = TAU / GRID_2D as f64;
    let mut g = (0.0, 0.0, f64::INFINITY);
    for i in 0..GRID_2D {
        for j in 0..GRID_2D {
            let (a, b) = (i as f64 * step, j as f64 * step);
            let v = f(a, b);
            if v < g.2 {
                g = (a, b, v);
            }
        }
    }
    let mut h = step;
    for _ in 0..12 {
        let (a, _) = golden_section(&|a| f(a, g.1), g.0 - h, g.0 + h);
        let (b, v) = golden_section(&|b| f(a, b), g.1 - h, g.1 + h);
        if v <= g.2 {
            g = (a, b, v);
        }
        h *= 0.5;
    }
    if g.2 < best.2 - 1e-12 {
        best = g;
    }
    best
}

pub(crate) fn wrap_phase(p: f64) -> f64 {
    let w = p.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_section(&|x| (x - 0.3).powi(2) + 1.0, -1.0, 2.0);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn phase_pair_on_separable_function() {
        let f = |a: f64, b: f64| -(a - 1.0).cos() - 2.0 * (b + 2.0).cos();
        let (a, b, v) = minimize_phase_pair(f, 0.0);
        assert!((wrap_phase(a) - 1.0).abs() < 1e-6);
        assert!((wrap_phase(b) + 2.0).abs() < 1e-6);
        assert!((v + 3.0).abs() < 1e-12);
    }

    #[test]
    fn phase_pair_keeps_hint_along_a_valley() {
        let f = |a: f64, b: f64| -(a + b - 0.5).cos();
        let (a, b, _) = minimize_phase_pair(f, 2.0);
        assert_eq!(a, 2.0);
        assert!((wrap_phase(a + b) - 0.5).abs() < 1e-6);
    }
}
