//! Pseudo-arclength predictor–corrector shared by equilibrium branches and
//! fold curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stability::Verdict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationOptions {
    pub ds_min: f64,
    pub ds_max: f64,
    pub ds_init: f64,
    /// Corrector iterations allowed for an accepted step.
    pub max_newton: usize,
    /// Accepted points per direction.
    pub max_points: usize,
    /// Arclength width at which bisection of a test-function zero stops.
    pub locate_tol: f64,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        ContinuationOptions {
            ds_min: 1e-5,
            ds_max: 0.05,
            ds_init: 0.01,
            max_newton: 6,
            max_points: 20_000,
            locate_tol: 1e-10,
        }
    }
}

impl ContinuationOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ds_min > 0.0
            && self.ds_min <= self.ds_init
            && self.ds_init <= self.ds_max
            && self.max_newton > 0
            && self.max_points > 0
            && self.locate_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("inconsistent continuation options: {self:?}")))
        }
    }
}

const RESIDUAL_TOL: f64 = 1e-11;
const UPDATE_TOL: f64 = 1e-10;
const LOCATE_NEWTON: usize = 40;
const EASY_ITERATIONS: usize = 3;
const GROWTH: f64 = 1.3;

/// An underdetermined system `F(u) = 0` with one more unknown than equations.
pub(crate) trait Curve {
    /// Residual and Jacobian, or `None` outside the domain of definition.
    fn eval(&self, u: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)>;
    /// Test functions whose sign changes are located.
    fn monitors(&self, u: &DVector<f64>) -> Vec<f64>;
    /// Quantities that must stay positive; a crossing ends the trace.
    fn barriers(&self, u: &DVector<f64>) -> Vec<f64>;
    fn in_range(&self, u: &DVector<f64>) -> bool;
    fn verdict(&self, _u: &DVector<f64>) -> Option<Verdict> {
        None
    }
    /// Called after every accepted point.
    fn accept(&mut self, _u: &DVector<f64>) {}
}

#[derive(Debug, Clone)]
pub(crate) struct TracePoint {
    pub u: DVector<f64>,
    pub monitors: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Crossing {
    pub monitor: usize,
    pub u: DVector<f64>,
    /// Tangents at the accepted points bracketing the zero.
    pub tangent_before: DVector<f64>,
    pub tangent_after: DVector<f64>,
}

#[derive(Debug, Clone)]
pub(crate) enum TraceEnd {
    OutOfRange,
    Barrier { index: usize, u: DVector<f64> },
    /// Corrector failed at the step floor next to the domain boundary.
    Singular,
    MaxPoints,
}

#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub points: Vec<TracePoint>,
    pub crossings: Vec<Crossing>,
    pub end: TraceEnd,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Unit vector spanning the kernel of the `(N-1)×N` matrix `a`, oriented
/// to have positive projection on `reference`.
pub(crate) fn tangent(a: &DMatrix<f64>, reference: &DVector<f64>) -> Option<DVector<f64>> {
    let n = a.ncols();
    let mut candidates = vec![reference.clone()];
    candidates.extend((0..n).map(|k| DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 })));
    for r in candidates {
        let mut m = a.clone().insert_row(n - 1, 0.0);
        m.set_row(n - 1, &r.transpose());
        let mut rhs = DVector::zeros(n);
        rhs[n - 1] = 1.0;
        let Some(x) = m.lu().solve(&rhs) else { continue };
        // A huge solution means `r` is nearly orthogonal to the kernel.
        if x.iter().all(|v| v.is_finite()) && x.norm() < 1e10 {
            let t = x.normalize();
            return Some(if t.dot(reference) < 0.0 { -t } else { t });
        }
    }
    None
}

/// Newton on `[F(u); t·(u - u_pred)] = 0`; returns the point and iteration count.
pub(crate) fn correct(
    curve: &impl Curve,
    u_pred: &DVector<f64>,
    t: &DVector<f64>,
    max_iter: usize,
) -> Option<(DVector<f64>, usize)> {
    let n = u_pred.len();
    let mut u = u_pred.clone();
    for it in 1..=max_iter {
        let (f, a) = curve.eval(&u)?;
        let mut m = a.insert_row(n - 1, 0.0);
        m.set_row(n - 1, &t.transpose());
        let mut h = f.clone().insert_row(n - 1, 0.0);
        h[n - 1] = t.dot(&(&u - u_pred));
        let du = m.lu().solve(&h)?;
        u -= &du;
        if !u.iter().all(|v| v.is_finite()) {
            return None;
        }
        if max_abs(&du) <= UPDATE_TOL * max_abs(&u).max(1.0) {
            let (f, _) = curve.eval(&u)?;
            if max_abs(&f) <= RESIDUAL_TOL {
                return Some((u, it));
            }
        }
    }
    None
}

/// Newton for `F(u) = 0` with component `fixed` held at its current value.
pub(crate) fn correct_fixed(curve: &impl Curve, u0: &DVector<f64>, fixed: usize) -> Option<DVector<f64>> {
    let n = u0.len();
    let mut e = DVector::zeros(n);
    e[fixed] = 1.0;
    correct(curve, u0, &e, 50).map(|(u, _)| u)
}

fn sign_change(a: f64, b: f64) -> bool {
    (a < 0.0 && b >= 0.0) || (a > 0.0 && b <= 0.0)
}

fn flips(a: Option<Verdict>, b: Option<Verdict>) -> bool {
    matches!(
        (a, b),
        (Some(Verdict::Stable), Some(Verdict::Unstable)) | (Some(Verdict::Unstable), Some(Verdict::Stable))
    )
}

/// Bisects on the arclength offset `s` in `[lo, hi]` from `u_a` along `t_a`
/// for a sign change of `g`, with `g(lo)` carrying the sign `g_lo`.
fn locate(
    curve: &impl Curve,
    u_a: &DVector<f64>,
    t_a: &DVector<f64>,
    (mut lo, mut hi): (f64, f64),
    g_lo: f64,
    tol: f64,
    g: impl Fn(&DVector<f64>) -> f64,
) -> Option<DVector<f64>> {
    let at = |s: f64| correct(curve, &(u_a + t_a * s), t_a, LOCATE_NEWTON).map(|(u, _)| u);
    let mut best = at(hi)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        // Near a branch point the corrector can stall; keep the bracket end.
        let Some(u) = at(mid) else {
            log::debug!("locating stopped at arclength width {:e}", hi - lo);
            break;
        };
        if sign_change(g_lo, g(&u)) {
            hi = mid;
            best = u;
        } else {
            lo = mid;
        }
    }
    Some(best)
}

/// Follows the curve from `u0` in the direction of `t0`.
pub(crate) fn trace(
    curve: &mut impl Curve,
    u0: &DVector<f64>,
    t0: &DVector<f64>,
    opts: &ContinuationOptions,
) -> Result<Trace> {
    let (_, a0) = curve.eval(u0).ok_or(Error::SeedResidual(f64::NAN))?;
    let mut t = tangent(&a0, t0).ok_or(Error::AugmentedSingular)?;
    let mut u = u0.clone();
    let mut mon = curve.monitors(&u);
    let mut bar = curve.barriers(&u);
    let mut verdict = curve.verdict(&u);
    let mut points = vec![TracePoint { u: u.clone(), monitors: mon.clone() }];
    let mut crossings = Vec::new();
    let mut ds = opts.ds_init;
    let mut easy = 0;

    while points.len() < opts.max_points {
        let u_pred = &u + &t * ds;
        let Some((u_new, iters)) = correct(curve, &u_pred, &t, opts.max_newton) else {
            if ds <= opts.ds_min {
                if bar.iter().any(|&b| b < 1e-3) {
                    return Ok(Trace { points, crossings, end: TraceEnd::Singular });
                }
                return Err(Error::FoldTurn(ds));
            }
            ds = (ds * 0.5).max(opts.ds_min);
            easy = 0;
            continue;
        };
        if !curve.in_range(&u_new) {
            return Ok(Trace { points, crossings, end: TraceEnd::OutOfRange });
        }
        let Some((_, a_new)) = curve.eval(&u_new) else {
            ds = (ds * 0.5).max(opts.ds_min);
            continue;
        };
        let Some(t_new) = tangent(&a_new, &t) else {
            return Err(Error::AugmentedSingular);
        };
        let mon_new = curve.monitors(&u_new);
        let bar_new = curve.barriers(&u_new);
        let verdict_new = curve.verdict(&u_new);

        let changed: Vec<usize> = (0..mon.len()).filter(|&k| sign_change(mon[k], mon_new[k])).collect();
        let barrier_hit = (0..bar.len()).find(|&k| bar_new[k] <= 0.0 && bar[k] > 0.0);
        if changed.is_empty() && barrier_hit.is_none() && flips(verdict, verdict_new) && ds > opts.ds_min {
            // Stability changed with no test-function zero: look closer.
            ds = (ds * 0.5).max(opts.ds_min);
            easy = 0;
            continue;
        }
        if changed.is_empty() && flips(verdict, verdict_new) {
            log::warn!("stability changed between accepted points without a test-function zero");
        }

        let mut s_end = ds;
        let mut end = None;
        if let Some(k) = barrier_hit {
            let u_exit = locate(curve, &u, &t, (0.0, ds), bar[k], opts.locate_tol, |v| curve.barriers(v)[k])
                .ok_or(Error::FoldTurn(ds))?;
            s_end = t.dot(&(&u_exit - &u));
            end = Some(TraceEnd::Barrier { index: k, u: u_exit });
        }
        for k in changed {
            if let Some(uc) = locate(curve, &u, &t, (0.0, ds), mon[k], opts.locate_tol, |v| curve.monitors(v)[k]) {
                if t.dot(&(&uc - &u)) <= s_end {
                    crossings.push(Crossing {
                        monitor: k,
                        u: uc,
                        tangent_before: t.clone(),
                        tangent_after: t_new.clone(),
                    });
                }
            }
        }
        if let Some(end) = end {
            return Ok(Trace { points, crossings, end });
        }

        u = u_new;
        t = t_new;
        mon = mon_new;
        bar = bar_new;
        verdict = verdict_new;
        curve.accept(&u);
        points.push(TracePoint { u: u.clone(), monitors: mon.clone() });

        if iters <= EASY_ITERATIONS {
            easy += 1;
            if easy >= 2 {
                ds = (ds * GROWTH).min(opts.ds_max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
    }
    Ok(Trace { points, crossings, end: TraceEnd::MaxPoints })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Unit circle `x² + y² = 1` with `x` as a monitor and `y + 0.5` as a barrier.
    struct Circle;

    impl Curve for Circle {
        fn eval(&self, u: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
            let f = DVector::from_vec(vec![u[0] * u[0] + u[1] * u[1] - 1.0]);
            let a = DMatrix::from_row_slice(1, 2, &[2.0 * u[0], 2.0 * u[1]]);
            Some((f, a))
        }
        fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
            vec![u[0]]
        }
        fn barriers(&self, u: &DVector<f64>) -> Vec<f64> {
            vec![u[1] + 0.5]
        }
        fn in_range(&self, _u: &DVector<f64>) -> bool {
            true
        }
    }

    #[test]
    fn follows_circle_through_turning_point() {
        let u0 = DVector::from_vec(vec![1.0, 0.0]);
        let t0 = DVector::from_vec(vec![0.0, 1.0]);
        let tr = trace(&mut Circle, &u0, &t0, &ContinuationOptions::default()).unwrap();
        for p in &tr.points {
            assert!((p.u.norm() - 1.0).abs() < 1e-11);
        }
        // Passes x = 0 at the top, then stops at y = -0.5 on the left.
        assert_eq!(tr.crossings.len(), 1);
        let c = &tr.crossings[0].u;
        assert!(c[0].abs() < 1e-9 && (c[1] - 1.0).abs() < 1e-9);
        match tr.end {
            TraceEnd::Barrier { index: 0, ref u } => {
                assert!((u[1] + 0.5).abs() < 1e-9);
                assert!((u[0] + 0.75f64.sqrt()).abs() < 1e-9);
            }
            ref other => panic!("unexpected end {other:?}"),
        }
    }

    #[test]
    fn steps_respect_bounds() {
        let u0 = DVector::from_vec(vec![1.0, 0.0]);
        let t0 = DVector::from_vec(vec![0.0, 1.0]);
        let opts = ContinuationOptions::default();
        let tr = trace(&mut Circle, &u0, &t0, &opts).unwrap();
        for w in tr.points.windows(2) {
            let d = (&w[1].u - &w[0].u).norm();
            assert!(d <= opts.ds_max * 1.01, "chord {d}");
        }
    }
}
