//! First Lyapunov coefficient at a Hopf point.
//!
//! With `A q = iω q`, `Aᵀ p = -iω p` and `⟨p, q⟩ = p̄ᵀ q = 1`,
//!
//! ```text
//! l1 = Re[ ⟨p, C(q,q,q̄)⟩ - 2⟨p, B(q, A⁻¹B(q,q̄))⟩ + ⟨p, B(q̄, (2iω - A)⁻¹B(q,q))⟩ ] / (2ω)
//! ```
//!
//! `q` has unit norm. For `ż = iωz + c z|z|²` in `z = x + iy` this gives
//! `l1 = 2 Re c / ω`; only the sign is invariant.
//!
//! `B` and `C` are directional derivatives of the Jacobian, taken by central
//! differences so only the analytic Jacobian is needed.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stability::eigenvalues;

type CVec = Vector3<Complex64>;

/// `|l1|` below this is reported as degenerate.
pub const DEGENERATE_L1: f64 = 1e-10;
const REL_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopfNormalForm {
    pub l1: f64,
    pub omega: f64,
}

struct Forms<F> {
    jac: F,
    x: Vector3<f64>,
    h: f64,
}

impl<F: Fn(&Vector3<f64>) -> Matrix3<f64>> Forms<F> {
    fn b_real(&self, u: &Vector3<f64>, v: &Vector3<f64>) -> Vector3<f64> {
        let nu = u.norm();
        if nu == 0.0 {
            return Vector3::zeros();
        }
        let d = u * (self.h / nu);
        ((self.jac)(&(self.x + d)) - (self.jac)(&(self.x - d))) * v * (nu / (2.0 * self.h))
    }

    fn c_real(&self, u: &Vector3<f64>, v: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
        let (nu, nv) = (u.norm(), v.norm());
        if nu == 0.0 || nv == 0.0 {
            return Vector3::zeros();
        }
        let du = u * (self.h / nu);
        let dv = v * (self.h / nv);
        let j = |d: Vector3<f64>| (self.jac)(&(self.x + d));
        (j(du + dv) - j(du - dv) - j(-du + dv) + j(-du - dv)) * w * (nu * nv / (4.0 * self.h * self.h))
    }

    fn b(&self, u: &CVec, v: &CVec) -> CVec {
        let (ur, ui) = split(u);
        let (vr, vi) = split(v);
        let re = self.b_real(&ur, &vr) - self.b_real(&ui, &vi);
        let im = self.b_real(&ur, &vi) + self.b_real(&ui, &vr);
        join(&re, &im)
    }

    fn c(&self, u: &CVec, v: &CVec, w: &CVec) -> CVec {
        let parts = |z: &CVec| {
            let (r, i) = split(z);
            [(r, Complex64::new(1.0, 0.0)), (i, Complex64::new(0.0, 1.0))]
        };
        let mut out = CVec::zeros();
        for (a, ca) in parts(u) {
            for (b, cb) in parts(v) {
                for (c, cc) in parts(w) {
                    let coef = ca * cb * cc;
                    out += self.c_real(&a, &b, &c).map(|x| coef * x);
                }
            }
        }
        out
    }
}

fn split(z: &CVec) -> (Vector3<f64>, Vector3<f64>) {
    (z.map(|c| c.re), z.map(|c| c.im))
}

fn join(re: &Vector3<f64>, im: &Vector3<f64>) -> CVec {
    CVec::from_fn(|i, _| Complex64::new(re[i], im[i]))
}

fn inner(p: &CVec, q: &CVec) -> Complex64 {
    p.iter().zip(q.iter()).map(|(a, b)| a.conj() * b).sum()
}

/// Kernel vector of a rank-2 complex 3×3 matrix from the best-conditioned
/// cross product of two rows.
fn kernel(m: &Matrix3<Complex64>) -> CVec {
    let row = |i: usize| CVec::new(m[(i, 0)], m[(i, 1)], m[(i, 2)]);
    let cross = |a: CVec, b: CVec| {
        CVec::new(a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])
    };
    let norm = |v: &CVec| v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    let best = [(0, 1), (0, 2), (1, 2)]
        .into_iter()
        .map(|(i, j)| cross(row(i), row(j)))
        .max_by(|a, b| norm(a).total_cmp(&norm(b)))
        .expect("three row pairs");
    let n = norm(&best);
    best.map(|c| c / n)
}

/// First Lyapunov coefficient of `x' = F(x)` at the equilibrium `x0`, given
/// the Jacobian of `F`. Fails unless the linearization has a simple pair
/// `±iω` with `ω > 0`.
pub fn lyapunov_coefficient(
    jac: impl Fn(&Vector3<f64>) -> Matrix3<f64>,
    x0: &Vector3<f64>,
) -> Result<HopfNormalForm> {
    let a = jac(x0);
    let eigs = eigenvalues(&a);
    let pair = eigs
        .iter()
        .copied()
        .filter(|z| z.im > 1e-4)
        .min_by(|p, q| p.re.abs().total_cmp(&q.re.abs()))
        .ok_or_else(|| Error::NotHopf(format!("no complex pair in spectrum {eigs:?}")))?;
    if pair.re.abs() > 1e-6 * pair.im.max(1.0) {
        return Err(Error::NotHopf(format!("pair {pair} is off the imaginary axis")));
    }
    let omega = pair.im;
    let iw = Complex64::new(0.0, omega);
    let ac = a.map(|v| Complex64::new(v, 0.0));
    let eye = Matrix3::<Complex64>::identity();

    let q = kernel(&(ac - eye * iw));
    let p_raw = kernel(&(ac.transpose() + eye * iw));
    let c = inner(&p_raw, &q);
    let p = p_raw.map(|z| z / c.conj());

    let forms = Forms { jac, x: *x0, h: REL_STEP * x0.norm().max(1.0) };
    let qbar = q.map(|z| z.conj());

    let bqqbar = forms.b(&q, &qbar);
    let r1 = a
        .lu()
        .solve(&bqqbar.map(|z| z.re))
        .ok_or_else(|| Error::NotHopf("singular linearization".into()))?;
    let bqq = forms.b(&q, &q);
    let r2 = (eye * (iw * 2.0) - ac)
        .lu()
        .solve(&bqq)
        .ok_or_else(|| Error::NotHopf("resonant linearization".into()))?;

    let r1c = r1.map(|v| Complex64::new(v, 0.0));
    let term = inner(&p, &forms.c(&q, &q, &qbar)) - inner(&p, &forms.b(&q, &r1c)) * 2.0
        + inner(&p, &forms.b(&qbar, &r2));
    let l1 = term.re / (2.0 * omega);
    if l1.abs() < DEGENERATE_L1 {
        return Err(Error::DegenerateHopf(l1.abs()));
    }
    Ok(HopfNormalForm { l1, omega })
}
