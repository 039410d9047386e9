//! Biologically significant equilibria.
//!
//! E1–E3 have closed forms. The interior equilibrium E4 is found by reducing
//! the nullcline system to a scalar equation in `I`: for a candidate `I` the
//! predator nullcline fixes `S = ((a2 - d3 I)/d2)^(1/r)`, the infectious
//! nullcline fixes `P` as the positive root of
//! `d1 k2 P^2 + (d1 + a1 k2) P + a1 - e0 S = 0`, and what remains is the
//! residual of the susceptible nullcline.

use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{jacobian_interior, spow, vector_field, ParamSet, State};

/// Residual bound for every equilibrium this module reports.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Initial subintervals for the interior scan.
pub const INTERIOR_SUBINTERVALS: usize = 512;
const BISECTION_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EquilibriumKind {
    /// Extinction point; only used to tag trajectory endpoints, never linearized.
    E0,
    /// Susceptible prey only.
    E1,
    /// Predator free.
    E2,
    /// Infectious prey free.
    E3,
    /// Coexistence.
    E4,
}

impl fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EquilibriumKind::E0 => "E0",
            EquilibriumKind::E1 => "E1",
            EquilibriumKind::E2 => "E2",
            EquilibriumKind::E3 => "E3",
            EquilibriumKind::E4 => "E4",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for EquilibriumKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E0" => Ok(EquilibriumKind::E0),
            "E1" => Ok(EquilibriumKind::E1),
            "E2" => Ok(EquilibriumKind::E2),
            "E3" => Ok(EquilibriumKind::E3),
            "E4" => Ok(EquilibriumKind::E4),
            other => Err(Error::Config(format!("unknown equilibrium kind `{other}`"))),
        }
    }
}

impl EquilibriumKind {
    /// Coordinates (0 = S, 1 = I, 2 = P) that are free, i.e. not pinned to zero.
    pub fn active_coordinates(self) -> &'static [usize] {
        match self {
            EquilibriumKind::E0 => &[],
            EquilibriumKind::E1 => &[0],
            EquilibriumKind::E2 => &[0, 1],
            EquilibriumKind::E3 => &[0, 2],
            EquilibriumKind::E4 => &[0, 1, 2],
        }
    }

    /// Whether `x` has this kind's zero pattern (zeros exact, others positive).
    pub fn matches_pattern(self, x: &State) -> bool {
        let a = x.to_array();
        let active = self.active_coordinates();
        (0..3).all(|c| if active.contains(&c) { a[c] > 0.0 } else { a[c] == 0.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub location: State,
    /// `max |G_i|` at the location.
    pub residual: f64,
    pub feasible: bool,
}

impl Equilibrium {
    pub(crate) fn new(p: &ParamSet, kind: EquilibriumKind, location: State) -> Self {
        Equilibrium {
            kind,
            location,
            residual: vector_field(p, &location).max_abs(),
            feasible: true,
        }
    }
}

pub fn equilibrium_e1(p: &ParamSet) -> Result<Equilibrium> {
    if p.b0 <= p.a0 {
        return Err(Error::Infeasible {
            kind: "E1",
            reason: format!("requires b0 > a0 (b0 = {}, a0 = {})", p.b0, p.a0),
        });
    }
    let s1 = p.capacity * (1.0 - p.a0 / p.b0);
    Ok(Equilibrium::new(p, EquilibriumKind::E1, State::new(s1, 0.0, 0.0)))
}

pub fn equilibrium_e2(p: &ParamSet) -> Result<Equilibrium> {
    let threshold = p.b0 * (1.0 - p.a1 / (p.e0 * p.capacity));
    if p.a0 >= threshold {
        return Err(Error::Infeasible {
            kind: "E2",
            reason: format!("requires a0 < b0 (1 - a1/(e0 K)) = {threshold}"),
        });
    }
    let s2 = p.a1 / p.e0;
    let i2 = (p.e0 * p.capacity * (p.b0 - p.a0) - p.a1 * p.b0) / (p.e0 * (p.b0 + p.e0 * p.capacity));
    Ok(Equilibrium::new(p, EquilibriumKind::E2, State::new(s2, i2, 0.0)))
}

/// Prey level of the infectious-free equilibrium, `(a2/d2)^(1/r)`; independent
/// of both fear levels.
pub fn infectious_free_prey(p: &ParamSet) -> f64 {
    (p.a2 / p.d2).powf(1.0 / p.r)
}

/// Coefficients `(h1, h2, h3)` of the predator quadratic at E3.
pub fn e3_coefficients(p: &ParamSet) -> (f64, f64, f64) {
    let s3 = infectious_free_prey(p);
    let s3r1 = spow(s3, p.r) / s3;
    let h1 = -p.k1 * p.d0 * s3r1;
    let h2 = -p.d0 * s3r1 - p.a0 * p.k1;
    let h3 = p.b0 * (1.0 - s3 / p.capacity) - p.a0;
    (h1, h2, h3)
}

pub fn equilibrium_e3(p: &ParamSet) -> Result<Vec<Equilibrium>> {
    let s3 = infectious_free_prey(p);
    let (h1, h2, h3) = e3_coefficients(p);
    let roots = positive_quadratic_roots(h1, h2, h3);
    if roots.is_empty() {
        return Err(Error::NoPositiveRoot);
    }
    Ok(roots
        .into_iter()
        .map(|p3| Equilibrium::new(p, EquilibriumKind::E3, State::new(s3, 0.0, p3)))
        .collect())
}

/// Positive real roots of `a x^2 + b x + c`, ascending. Degenerates to the
/// linear root when `a` vanishes.
pub fn positive_quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let mut roots = Vec::with_capacity(2);
    if a == 0.0 || a.abs() <= 1e-14 * b.abs() {
        if b != 0.0 {
            roots.push(-c / b);
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            if q != 0.0 {
                roots.push(q / a);
                roots.push(c / q);
            } else {
                roots.push(0.0);
            }
        }
    }
    roots.retain(|r| *r > 0.0 && r.is_finite());
    roots.sort_by(f64::total_cmp);
    roots.dedup();
    roots
}

/// Upper end of the interior scan, `a2/d3` (where the predator nullcline forces `S = 0`).
pub fn interior_infectious_limit(p: &ParamSet) -> f64 {
    p.a2 / p.d3
}

/// Scalar reduction of the interior nullclines at a candidate `I`. Returns
/// the susceptible-nullcline residual together with the reconstructed state,
/// or `None` when no positive `S` or `P` exists for this `I`.
pub fn interior_reduction(p: &ParamSet, i: f64) -> Option<(f64, State)> {
    let base = (p.a2 - p.d3 * i) / p.d2;
    if !(base > 0.0) || i <= 0.0 {
        return None;
    }
    let s = base.powf(1.0 / p.r);
    let w1 = p.d1 * p.k2;
    let w2 = p.d1 + p.a1 * p.k2;
    let w3 = p.a1 - p.e0 * s;
    let pred = *positive_quadratic_roots(w1, w2, w3).last()?;
    let x = State::new(s, i, pred);
    let f1 = 1.0 / (1.0 + p.k1 * pred);
    let f2 = 1.0 / (1.0 + p.k2 * pred);
    let residual = p.b0 * f1 * (1.0 - (s + i) / p.capacity)
        - p.a0
        - p.d0 * spow(s, p.r) / s * pred
        - p.e0 * i * f2;
    Some((residual, x))
}

/// Interior equilibria, ascending in `I`.
pub fn equilibrium_e4(p: &ParamSet) -> Result<Vec<Equilibrium>> {
    let upper = interior_infectious_limit(p);
    let eps = 1e-10 * upper;
    let (lo, hi) = (eps, upper - eps);
    let n = INTERIOR_SUBINTERVALS;
    let grid: Vec<f64> = (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect();
    let values: Vec<Option<f64>> = grid.iter().map(|&i| interior_reduction(p, i).map(|r| r.0)).collect();

    let mut found: Vec<Equilibrium> = Vec::new();
    for k in 0..n {
        let (Some(fa), Some(fb)) = (values[k], values[k + 1]) else {
            continue;
        };
        let root_i = if fa == 0.0 {
            grid[k]
        } else if fa * fb < 0.0 {
            bisect(|i| interior_reduction(p, i).map(|r| r.0), grid[k], grid[k + 1], fa)
        } else {
            continue;
        };
        let Some((_, guess)) = interior_reduction(p, root_i) else {
            continue;
        };
        let x = polish(p, guess);
        if x.s > 0.0 && x.i > 0.0 && x.p > 0.0 {
            let e = Equilibrium::new(p, EquilibriumKind::E4, x);
            if e.residual <= RESIDUAL_TOL && !found.iter().any(|f| f.location.max_abs_diff(&x) < 1e-8) {
                found.push(e);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoInteriorEquilibrium);
    }
    found.sort_by(|a, b| a.location.i.total_cmp(&b.location.i));
    Ok(found)
}

fn bisect(f: impl Fn(f64) -> Option<f64>, mut a: f64, mut b: f64, mut fa: f64) -> f64 {
    while b - a > BISECTION_TOL {
        let m = 0.5 * (a + b);
        match f(m) {
            Some(fm) if fm == 0.0 => return m,
            Some(fm) if fm * fa < 0.0 => b = m,
            Some(fm) => {
                a = m;
                fa = fm;
            }
            None => break,
        }
    }
    0.5 * (a + b)
}

/// Damped Newton on the full vector field, started from `x`.
pub(crate) fn polish(p: &ParamSet, x: State) -> State {
    let mut v = x.to_vector();
    let mut res = vector_field(p, &x).max_abs();
    for _ in 0..NEWTON_MAX_ITER {
        if res <= 1e-15 || v[0] <= 0.0 {
            break;
        }
        let st = State::from_vector(&v);
        let g = vector_field(p, &st).to_vector();
        let Some(step) = jacobian_interior(p, &st).lu().solve(&g) else {
            break;
        };
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda > 1e-4 {
            let trial: Vector3<f64> = v - lambda * step;
            if trial[0] > 0.0 {
                let r = vector_field(p, &State::from_vector(&trial)).max_abs();
                if r < res {
                    v = trial;
                    res = r;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    State::from_vector(&v)
}

/// All feasible equilibria E1–E4 (E0 excluded).
pub fn all_equilibria(p: &ParamSet) -> Vec<Equilibrium> {
    let mut out = Vec::new();
    out.extend(equilibrium_e1(p).ok());
    out.extend(equilibrium_e2(p).ok());
    out.extend(equilibrium_e3(p).unwrap_or_default());
    out.extend(equilibrium_e4(p).unwrap_or_default());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::ParamName;
    use approx::assert_relative_eq;

    fn close(x: &State, expected: (f64, f64, f64), tol: f64) {
        let e = State::new(expected.0, expected.1, expected.2);
        assert!(x.max_abs_diff(&e) <= tol, "{x:?} vs {e:?}");
    }

    #[test]
    fn susceptible_only() {
        let e = equilibrium_e1(&hopf_set()).unwrap();
        assert_relative_eq!(e.location.s, 6.8, epsilon = 1e-12);
        assert_eq!(e.residual, 0.0);
        let boundary = hopf_set().with(ParamName::A0, 2.0).unwrap();
        assert!(matches!(equilibrium_e1(&boundary), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn predator_free() {
        let e = equilibrium_e2(&hopf_set()).unwrap();
        close(&e.location, (0.8, 2.0, 0.0), 1e-12);
        assert!(e.residual <= RESIDUAL_TOL);
        // a0 = b0 (1 - a1/(e0 K)) = 1.8 makes I2 vanish; treated as infeasible.
        let edge = hopf_set().with(ParamName::A0, 1.8).unwrap();
        assert!(equilibrium_e2(&edge).is_err());
        let just_inside = hopf_set().with(ParamName::A0, 1.8 - 1e-9).unwrap();
        assert!(equilibrium_e2(&just_inside).unwrap().location.i.abs() < 1e-8);
    }

    #[test]
    fn infectious_free() {
        let p = hopf_set().with(ParamName::K1, 0.4219).unwrap();
        let e = equilibrium_e3(&p).unwrap();
        assert_eq!(e.len(), 1);
        close(&e[0].location, (4.0600, 0.0, 0.9978), 1e-4);
        let s3 = e[0].location.s;
        assert!((p.d2 * s3.powf(p.r) - p.a2).abs() < 1e-12);
        assert!(e[0].residual <= RESIDUAL_TOL);

        let p = hopf_set().with(ParamName::K1, 2.8).unwrap().with(ParamName::K2, 7.0).unwrap();
        close(&equilibrium_e3(&p).unwrap()[0].location, (4.0600, 0.0, 0.4070), 1e-4);

        // Degenerate linear case k1 = 0.
        let p = hopf_set().with(ParamName::K1, 0.0).unwrap();
        close(&equilibrium_e3(&p).unwrap()[0].location, (4.0600, 0.0, 1.7382), 1e-4);

        for k in [0.0, 0.5, 3.0, 10.0] {
            let q = hopf_set().with(ParamName::K1, k).unwrap().with(ParamName::K2, k).unwrap();
            assert!((infectious_free_prey(&q) - (0.8f64 / 0.3).powf(1.0 / 0.7)).abs() < 1e-14);
        }
    }

    #[test]
    fn infectious_free_needs_positive_root() {
        // K below S3 makes h3 < 0; with h1, h2 <= 0 there is no positive root.
        let p = hopf_set().with(ParamName::K, 3.0).unwrap();
        assert_eq!(equilibrium_e3(&p).unwrap_err(), Error::NoPositiveRoot);
    }

    #[test]
    fn interior_matches_reference_values() {
        let e = equilibrium_e4(&fte_set()).unwrap();
        assert!(e.iter().any(|e| e.location.max_abs_diff(&State::new(2.8194, 0.5925, 4.5959)) < 1e-4));

        // The reference k2 = 0.4417 is the rounded fold value (0.441731...), just
        // below which no interior root exists; sample just above it.
        let p = sn_set().with(ParamName::K2, 0.441732).unwrap();
        let roots = equilibrium_e4(&p).unwrap();
        assert_eq!(roots.len(), 2);
        for r in &roots {
            close(&r.location, (0.6418, 0.9591, 1.5854), 5e-3);
        }
        let p = hopf_set().with(ParamName::K1, 4.0).unwrap();
        close(&equilibrium_e4(&p).unwrap()[0].location, (1.2898, 0.8830, 0.2102), 1e-4);
        let p = hopf_set().with(ParamName::K1, 1.2).unwrap();
        close(&equilibrium_e4(&p).unwrap()[0].location, (2.5030, 0.4596, 0.6076), 1e-4);
    }

    #[test]
    fn interior_near_fold_has_two_roots() {
        // Just past the saddle-node value k2* = 0.44173 the two interior roots
        // are born; just before it there are none.
        let before = sn_set().with(ParamName::K2, 0.4415).unwrap();
        assert_eq!(equilibrium_e4(&before).unwrap_err(), Error::NoInteriorEquilibrium);
        let after = sn_set().with(ParamName::K2, 0.45).unwrap();
        let roots = equilibrium_e4(&after).unwrap();
        assert_eq!(roots.len(), 2);
        for r in &roots {
            assert!(r.residual <= RESIDUAL_TOL);
            assert!(EquilibriumKind::E4.matches_pattern(&r.location));
        }
    }

    #[test]
    fn quadratic_roots() {
        assert_eq!(positive_quadratic_roots(1.0, -3.0, 2.0), vec![1.0, 2.0]);
        assert_eq!(positive_quadratic_roots(0.0, 2.0, -4.0), vec![2.0]);
        assert!(positive_quadratic_roots(1.0, 1.0, 1.0).is_empty());
        assert!(positive_quadratic_roots(-1.0, -1.0, -1.0).is_empty());
    }
}
