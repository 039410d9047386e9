//! Local stability from the characteristic cubic
//! `λ³ + ψ1 λ² + ψ2 λ + ψ3 = 0` of the 3×3 Jacobian.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::equilibria::{Equilibrium, EquilibriumKind};
use crate::error::Result;
use crate::model::{jacobian, spow, ParamSet};

/// Half-width of the band around the imaginary axis reported as marginal.
pub const TOL_MARGINAL: f64 = 1e-7;
/// Cubic discriminant above which one real root and a complex pair are reported.
pub const PAIR_DISCRIMINANT_TOL: f64 = 1e-12;

/// `(ψ1, ψ2, ψ3) = (-tr J, sum of principal 2×2 minors, -det J)`.
pub fn characteristic_coefficients(j: &Matrix3<f64>) -> (f64, f64, f64) {
    let psi1 = -j.trace();
    let psi2 = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)] + j[(0, 0)] * j[(2, 2)] - j[(0, 2)] * j[(2, 0)]
        + j[(1, 1)] * j[(2, 2)]
        - j[(1, 2)] * j[(2, 1)];
    let psi3 = -j.determinant();
    (psi1, psi2, psi3)
}

/// Routh–Hurwitz: all roots in the open left half-plane.
pub fn routh_hurwitz_stable(psi1: f64, psi2: f64, psi3: f64) -> bool {
    psi1 > 0.0 && psi3 > 0.0 && psi1 * psi2 > psi3
}

fn cubic_eval(a: f64, b: f64, c: f64, z: Complex64) -> (Complex64, Complex64) {
    let f = ((z + a) * z + b) * z + c;
    let df = (3.0 * z + 2.0 * a) * z + b;
    (f, df)
}

fn newton_polish(a: f64, b: f64, c: f64, z: Complex64) -> Complex64 {
    let (f, df) = cubic_eval(a, b, c, z);
    if df.norm() == 0.0 {
        return z;
    }
    let candidate = z - f / df;
    if cubic_eval(a, b, c, candidate).0.norm() <= f.norm() {
        candidate
    } else {
        z
    }
}

/// Roots of `λ³ + a λ² + b λ + c`, closed form (Cardano / trigonometric),
/// one Newton polish each. Sorted by descending real part; a complex pair is
/// listed with positive imaginary part first.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let half_q = q / 2.0;
    let third_p = p / 3.0;
    let disc = half_q * half_q + third_p * third_p * third_p;
    let scale = (half_q * half_q).max(third_p.abs().powi(3)).max(1.0);

    let mut roots = if disc > PAIR_DISCRIMINANT_TOL * scale {
        let sq = disc.sqrt();
        let u = (-half_q + sq).cbrt();
        let v = (-half_q - sq).cbrt();
        let re = -(u + v) / 2.0 - shift;
        let im = (3f64.sqrt() / 2.0) * (u - v).abs();
        let real = Complex64::new(u + v - shift, 0.0);
        let real = Complex64::new(newton_polish(a, b, c, real).re, 0.0);
        let pair = newton_polish(a, b, c, Complex64::new(re, im));
        let pair = Complex64::new(pair.re, pair.im.abs());
        [real, pair, pair.conj()]
    } else if p < 0.0 {
        let m = 2.0 * (-third_p).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let mut out = [Complex64::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let t = m * (theta - 2.0 * PI * k as f64 / 3.0).cos();
            let z = newton_polish(a, b, c, Complex64::new(t - shift, 0.0));
            *slot = Complex64::new(z.re, 0.0);
        }
        out
    } else {
        let t = (-q).cbrt();
        let z = Complex64::new(t - shift, 0.0);
        [z, z, z]
    };
    roots.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    roots
}

pub fn eigenvalues(j: &Matrix3<f64>) -> [Complex64; 3] {
    let (psi1, psi2, psi3) = characteristic_coefficients(j);
    cubic_roots(psi1, psi2, psi3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        })
    }
}

pub fn verdict_from_spectrum(eigs: &[Complex64; 3]) -> Verdict {
    let max_re = eigs.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    if max_re.abs() <= TOL_MARGINAL {
        Verdict::Marginal
    } else if max_re < 0.0 {
        Verdict::Stable
    } else {
        Verdict::Unstable
    }
}

/// Outcome of the closed-form stability conditions for one equilibrium kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub conditions_hold: bool,
    /// False only when the conditions and a non-marginal spectrum disagree.
    pub agrees: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub eigenvalues: [Complex64; 3],
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub verdict: Verdict,
    /// `min_i(-Re λ_i)`; positive iff strictly stable.
    pub margin: f64,
    pub theorem: Option<TheoremCheck>,
}

impl StabilityReport {
    pub fn from_jacobian(j: &Matrix3<f64>) -> Self {
        let (psi1, psi2, psi3) = characteristic_coefficients(j);
        let eigenvalues = cubic_roots(psi1, psi2, psi3);
        let margin = eigenvalues.iter().map(|z| -z.re).fold(f64::INFINITY, f64::min);
        StabilityReport {
            eigenvalues,
            psi1,
            psi2,
            psi3,
            verdict: verdict_from_spectrum(&eigenvalues),
            margin,
            theorem: None,
        }
    }

    pub fn is_stable(&self) -> bool {
        self.verdict == Verdict::Stable
    }
}

pub fn classify(p: &ParamSet, e: &Equilibrium) -> Result<StabilityReport> {
    let j = jacobian(p, &e.location)?;
    let mut report = StabilityReport::from_jacobian(&j);
    let (holds, detail) = match e.kind {
        EquilibriumKind::E0 => return Ok(report),
        EquilibriumKind::E1 => {
            let s1 = p.capacity - p.a0 * p.capacity / p.b0;
            let c1 = p.a0 < p.b0;
            let c2 = p.a1 > p.e0 * p.capacity * (1.0 - p.a0 / p.b0);
            let c3 = p.a2 > p.d2 * spow(s1, p.r);
            (c1 && c2 && c3, format!("a0<b0: {c1}, a1>e0K(1-a0/b0): {c2}, a2>d2 S1^r: {c3}"))
        }
        EquilibriumKind::E2 => {
            let (a11, a12, a21, a33) = (j[(0, 0)], j[(0, 1)], j[(1, 0)], j[(2, 2)]);
            if !(a12 < 0.0 && a21 > 0.0) {
                log::warn!("E2 off-diagonal signs deviate: A12 = {a12}, A21 = {a21}");
            }
            (
                a33 < 0.0 && a11 < 0.0 && a12 * a21 < 0.0,
                format!("A33 = {a33:.6e}, A11 = {a11:.6e}, A12*A21 = {:.6e}", a12 * a21),
            )
        }
        EquilibriumKind::E3 => {
            let (b11, b13, b22, b31, b33) = (j[(0, 0)], j[(0, 2)], j[(1, 1)], j[(2, 0)], j[(2, 2)]);
            let det2 = b11 * b33 - b13 * b31;
            (
                b22 < 0.0 && b11 + b33 < 0.0 && det2 > 0.0,
                format!("B22 = {b22:.6e}, B11+B33 = {:.6e}, B11B33-B13B31 = {det2:.6e}", b11 + b33),
            )
        }
        EquilibriumKind::E4 => {
            let (a, b, c) = (report.psi1, report.psi2, report.psi3);
            (
                routh_hurwitz_stable(a, b, c),
                format!("psi1 = {a:.6e}, psi3 = {c:.6e}, psi1*psi2 - psi3 = {:.6e}", a * b - c),
            )
        }
    };
    let agrees = match report.verdict {
        Verdict::Marginal => true,
        v => holds == (v == Verdict::Stable),
    };
    if !agrees {
        log::warn!("{} stability conditions disagree with the spectrum: {detail}", e.kind);
    }
    report.theorem = Some(TheoremCheck { conditions_hold: holds, agrees, detail });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::*;
    use crate::model::fixtures::*;
    use crate::model::{ParamName, State};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn complex_det(j: &Matrix3<f64>, z: Complex64) -> Complex64 {
        let m = Matrix3::<Complex64>::from_fn(|r, c| {
            let d = if r == c { z } else { Complex64::new(0.0, 0.0) };
            d - Complex64::new(j[(r, c)], 0.0)
        });
        m.determinant()
    }

    #[test]
    fn trivial_coefficients() {
        assert_eq!(characteristic_coefficients(&Matrix3::identity()), (-3.0, 3.0, -1.0));
        let (a, b, c) = characteristic_coefficients(&Matrix3::zeros());
        assert_eq!((a, b, c), (0.0, 0.0, 0.0));
        let r = cubic_roots(0.0, 0.0, 0.0);
        assert!(r.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn known_roots() {
        // (λ - 1)(λ + 2)(λ + 3) = λ³ + 4λ² + λ - 6
        let r = cubic_roots(4.0, 1.0, -6.0);
        let re: Vec<f64> = r.iter().map(|z| z.re).collect();
        assert!((re[0] - 1.0).abs() < 1e-12 && (re[1] + 2.0).abs() < 1e-12 && (re[2] + 3.0).abs() < 1e-12);
        // λ (λ² + 4) : zero-Hopf signature
        let r = cubic_roots(0.0, 4.0, 0.0);
        assert!(r.iter().all(|z| z.re.abs() < 1e-14));
        assert!(r.iter().any(|z| (z.im - 2.0).abs() < 1e-12));
        assert!(r.iter().any(|z| z.norm() < 1e-14));
    }

    #[test]
    fn eigenvalue_residuals_and_nalgebra_agreement() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let j = Matrix3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let eigs = eigenvalues(&j);
            let norm = j.norm().max(1e-300);
            for z in eigs {
                assert!(complex_det(&j, z).norm() <= 1e-9 * norm.powi(3), "{j} {z}");
            }
            let mut reference: Vec<Complex64> = j.complex_eigenvalues().iter().copied().collect();
            reference.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
            for (a, b) in eigs.iter().zip(&reference) {
                assert!((a - b).norm() < 1e-6 * norm.max(1.0), "{eigs:?} vs {reference:?}");
            }
        }
    }

    #[test]
    fn routh_hurwitz_equivalence_on_model_jacobians() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bases = [sn_set(), hopf_set(), fte_set()];
        let mut checked = 0;
        while checked < 10_000 {
            let p = bases[checked % 3]
                .with(ParamName::K1, rng.random_range(0.0..4.0))
                .unwrap()
                .with(ParamName::K2, rng.random_range(0.0..4.0))
                .unwrap();
            let x = State::new(rng.random_range(0.05..5.0), rng.random_range(0.0..2.0), rng.random_range(0.0..3.0));
            let j = jacobian(&p, &x).unwrap();
            let rep = StabilityReport::from_jacobian(&j);
            if rep.verdict == Verdict::Marginal {
                continue;
            }
            let rh = routh_hurwitz_stable(rep.psi1, rep.psi2, rep.psi3);
            assert_eq!(rh, rep.verdict == Verdict::Stable, "{j}");
            checked += 1;
        }
    }

    #[test]
    fn susceptible_only_is_unstable() {
        let p = hopf_set();
        let rep = classify(&p, &equilibrium_e1(&p).unwrap()).unwrap();
        assert_eq!(rep.verdict, Verdict::Unstable);
        let mut re: Vec<f64> = rep.eigenvalues.iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        assert!((re[0] + 1.7).abs() < 1e-10 && (re[2] - 3.0).abs() < 1e-10);
        assert!((re[1] - 0.3478).abs() < 1e-4);
        assert!(rep.theorem.unwrap().agrees);
    }

    #[test]
    fn infectious_free_stable_without_birth_fear() {
        let p = hopf_set().with(ParamName::K1, 0.0).unwrap();
        let e3 = &equilibrium_e3(&p).unwrap()[0];
        assert!(e3.location.max_abs_diff(&State::new(4.0600, 0.0, 1.7382)) < 1e-4);
        let rep = classify(&p, e3).unwrap();
        assert_eq!(rep.verdict, Verdict::Stable);
        let t = rep.theorem.unwrap();
        assert!(t.conditions_hold && t.agrees);
    }

    #[test]
    fn interior_without_transmission_fear_is_unstable() {
        let p = hopf_set().with(ParamName::K1, 2.8).unwrap().with(ParamName::K2, 0.0).unwrap();
        let e4 = &equilibrium_e4(&p).unwrap()[0];
        assert!(e4.location.max_abs_diff(&State::new(1.1172, 0.9516, 0.2265)) < 1e-4);
        assert_eq!(classify(&p, e4).unwrap().verdict, Verdict::Unstable);
    }

    #[test]
    fn interior_stable_at_moderate_birth_fear() {
        let p = hopf_set().with(ParamName::K1, 1.2).unwrap();
        let e4 = &equilibrium_e4(&p).unwrap()[0];
        let rep = classify(&p, e4).unwrap();
        assert!(rep.psi1 > 0.0 && rep.psi3 > 0.0 && rep.psi1 * rep.psi2 > rep.psi3);
        assert_eq!(rep.verdict, Verdict::Stable);
    }

    #[test]
    fn predator_free_conditions_agree() {
        // Raise predator mortality so E2 becomes stable.
        for a2 in [0.5, 0.8, 1.5, 3.0] {
            let p = hopf_set().with(ParamName::A2, a2).unwrap();
            let e2 = equilibrium_e2(&p).unwrap();
            let rep = classify(&p, &e2).unwrap();
            assert!(rep.theorem.unwrap().agrees, "a2 = {a2}");
        }
    }

    #[test]
    fn singular_state_propagates() {
        let p = hopf_set();
        let e = Equilibrium { kind: EquilibriumKind::E0, location: State::ORIGIN, residual: 0.0, feasible: true };
        assert!(classify(&p, &e).is_err());
    }
}
