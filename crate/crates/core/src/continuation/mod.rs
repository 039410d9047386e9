//! Equilibrium branches in one parameter and fold curves in two.
//!
//! One-parameter branches are followed on the invariant face of their
//! equilibrium kind (E3 on `I = 0`, E2 on `P = 0`, ...), so boundary
//! branches never drift into the interior. Test functions along a branch:
//!
//! - saddle-node: determinant of the Jacobian restricted to the face, with a
//!   turning point in the parameter required for a report;
//! - Hopf: `ψ1 ψ2 - ψ3` (interior) or the trace (two-dimensional faces),
//!   reported only where the spectrum has a genuine imaginary pair;
//! - transcritical: the transverse eigenvalue `∂G_c/∂x_c` for every coordinate
//!   `c` pinned to zero on the face. An interior branch that reaches a face
//!   ends there, and the exit is reported as transcritical as well.
//!
//! Fold curves solve `G = 0` together with a bordered test function `g`
//! that vanishes exactly when the Jacobian is singular. Along them `ψ1` flags
//! zero-Hopf points and `I` reaching zero flags saddle-node–transcritical
//! points.

mod engine;
mod lyapunov;

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Vector3, Vector4};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use engine::ContinuationOptions;
pub use lyapunov::{lyapunov_coefficient, HopfNormalForm, DEGENERATE_L1};

use crate::equilibria::{all_equilibria, Equilibrium, EquilibriumKind, RESIDUAL_TOL};
use crate::error::{Error, Result};
use crate::model::{jacobian_interior, param_derivative, vector_field, ParamName, ParamSet, State};
use crate::stability::{characteristic_coefficients, StabilityReport, Verdict};
use engine::{correct_fixed, trace, Crossing, Curve, Trace, TraceEnd};

/// Spectral tolerance for accepting a located bifurcation point.
pub const SPECTRAL_TOL: f64 = 1e-6;
/// Seed of the generator for the initial fold-curve borders.
pub const FOLD_BORDER_SEED: u64 = 0x5eed_f01d;
/// Parameter offset used to restart on the other branch at a transcritical point.
pub const SWITCH_OFFSETS: [f64; 4] = [1e-4, -1e-4, 1e-3, -1e-3];
const SEED_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BifurcationKind {
    #[serde(rename = "SN")]
    SaddleNode,
    Hopf,
    #[serde(rename = "TC")]
    Transcritical,
    #[serde(rename = "ZH")]
    ZeroHopf,
    #[serde(rename = "SNTC")]
    SaddleNodeTranscritical,
}

impl fmt::Display for BifurcationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BifurcationKind::SaddleNode => "SN",
            BifurcationKind::Hopf => "Hopf",
            BifurcationKind::Transcritical => "TC",
            BifurcationKind::ZeroHopf => "ZH",
            BifurcationKind::SaddleNodeTranscritical => "SNTC",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifurcationPoint {
    pub kind: BifurcationKind,
    pub free_params: Vec<ParamName>,
    pub param_values: Vec<f64>,
    /// Full parameter set at the point.
    pub params: ParamSet,
    pub location: State,
    /// Equilibrium kind of the branch the point was found on.
    pub branch: EquilibriumKind,
    /// For transcritical points, the kind of the crossing branch.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partner: Option<EquilibriumKind>,
    pub eigenvalues: [Complex64; 3],
    /// Frequency of the imaginary pair (Hopf and zero-Hopf).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
    /// First Lyapunov coefficient (Hopf).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub params: Vec<f64>,
    pub equilibrium: Equilibrium,
    pub stability: StabilityReport,
    /// Values of the branch's test functions, in the order of `Branch::test_names`.
    pub test_functions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum BranchEnd {
    /// Left the parameter range.
    Range,
    /// A coordinate reached zero.
    Boundary { coordinate: String },
    /// Corrector failure next to the boundary of the domain.
    Singular,
    MaxPoints,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub free_params: Vec<ParamName>,
    pub kind: EquilibriumKind,
    pub test_names: Vec<String>,
    /// Ordered along the curve, from the backward end to the forward end.
    pub points: Vec<BranchPoint>,
    pub bif_points: Vec<BifurcationPoint>,
    /// How the backward and forward traces ended.
    pub ends: [BranchEnd; 2],
}

impl Branch {
    pub fn bifurcations(&self, kind: BifurcationKind) -> impl Iterator<Item = &BifurcationPoint> {
        self.bif_points.iter().filter(move |b| b.kind == kind)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let names: Vec<&str> = self.free_params.iter().map(|n| n.as_str()).collect();
        writeln!(w, "{},S,I,P,psi1,psi2,psi3,stable", names.join(","))?;
        for pt in &self.points {
            let params: Vec<String> = pt.params.iter().map(f64::to_string).collect();
            let x = pt.equilibrium.location;
            let s = &pt.stability;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                params.join(","),
                x.s,
                x.i,
                x.p,
                s.psi1,
                s.psi2,
                s.psi3,
                s.verdict == Verdict::Stable
            )?;
        }
        for b in &self.bif_points {
            let params: Vec<String> = b.param_values.iter().map(f64::to_string).collect();
            let x = b.location;
            writeln!(w, "# bif,{},{},{},{},{}", b.kind, params.join(","), x.s, x.i, x.p)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

fn coordinate_name(c: usize) -> &'static str {
    ["S", "I", "P"][c]
}

fn check_range(name: ParamName, range: [f64; 2], value: f64) -> Result<()> {
    if !(range[0] < range[1]) {
        return Err(Error::Config(format!("empty range {range:?} for {name}")));
    }
    if value < range[0] || value > range[1] {
        return Err(Error::Config(format!("{name} = {value} lies outside {range:?}")));
    }
    Ok(())
}

fn pair_frequency(eigs: &[Complex64; 3]) -> Option<f64> {
    eigs.iter()
        .filter(|z| z.im > 1e-4 && z.re.abs() <= SPECTRAL_TOL)
        .map(|z| z.im)
        .next()
}

// ---------------------------------------------------------------------------
// One-parameter equilibrium branches

#[derive(Debug, Clone)]
struct EquilibriumCurve {
    base: ParamSet,
    free: ParamName,
    kind: EquilibriumKind,
    active: &'static [usize],
    inactive: Vec<usize>,
    range: [f64; 2],
}

impl EquilibriumCurve {
    fn new(base: ParamSet, free: ParamName, kind: EquilibriumKind, range: [f64; 2]) -> Self {
        let active = kind.active_coordinates();
        let inactive = (0..3).filter(|c| !active.contains(c)).collect();
        EquilibriumCurve { base, free, kind, active, inactive, range }
    }

    fn n(&self) -> usize {
        self.active.len()
    }

    fn state(&self, u: &DVector<f64>) -> State {
        let mut a = [0.0; 3];
        for (k, &c) in self.active.iter().enumerate() {
            a[c] = u[k];
        }
        State::from_array(a)
    }

    fn params(&self, u: &DVector<f64>) -> ParamSet {
        self.base.with_unchecked(self.free, u[self.n()])
    }

    fn unknowns(&self, x: &State, lambda: f64) -> DVector<f64> {
        let a = x.to_array();
        let mut v: Vec<f64> = self.active.iter().map(|&c| a[c]).collect();
        v.push(lambda);
        DVector::from_vec(v)
    }

    fn full_jacobian(&self, u: &DVector<f64>) -> Option<Matrix3<f64>> {
        let x = self.state(u);
        (x.s > 0.0).then(|| jacobian_interior(&self.params(u), &x))
    }

    fn block(&self, j: &Matrix3<f64>) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |r, c| j[(self.active[r], self.active[c])])
    }

    fn hopf_index(&self) -> Option<usize> {
        (self.n() >= 2).then_some(1)
    }

    fn tc_offset(&self) -> usize {
        if self.n() >= 2 {
            2
        } else {
            1
        }
    }

    fn test_names(&self) -> Vec<String> {
        let mut names = vec!["SN".to_string()];
        if self.hopf_index().is_some() {
            names.push("Hopf".into());
        }
        names.extend(self.inactive.iter().map(|&c| format!("TC({})", coordinate_name(c))));
        names
    }
}

impl Curve for EquilibriumCurve {
    fn eval(&self, u: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let x = self.state(u);
        if !(x.s > 0.0) {
            return None;
        }
        let p = self.params(u);
        let j = jacobian_interior(&p, &x);
        let g = vector_field(&p, &x).to_array();
        let dp = param_derivative(&p, &x, self.free);
        let n = self.n();
        let f = DVector::from_fn(n, |r, _| g[self.active[r]]);
        let a = DMatrix::from_fn(n, n + 1, |r, c| {
            if c < n {
                j[(self.active[r], self.active[c])]
            } else {
                dp[self.active[r]]
            }
        });
        Some((f, a))
    }

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
        let Some(j) = self.full_jacobian(u) else {
            return vec![f64::NAN; self.test_names().len()];
        };
        let b = self.block(&j);
        let mut out = vec![b.determinant()];
        match self.n() {
            3 => {
                let (p1, p2, p3) = characteristic_coefficients(&j);
                out.push(p1 * p2 - p3);
            }
            2 => out.push(b.trace()),
            _ => {}
        }
        out.extend(self.inactive.iter().map(|&c| j[(c, c)]));
        out
    }

    fn barriers(&self, u: &DVector<f64>) -> Vec<f64> {
        (0..self.n()).map(|k| u[k]).collect()
    }

    fn in_range(&self, u: &DVector<f64>) -> bool {
        let l = u[self.n()];
        l >= self.range[0] && l <= self.range[1]
    }

    fn verdict(&self, u: &DVector<f64>) -> Option<Verdict> {
        self.full_jacobian(u).map(|j| StabilityReport::from_jacobian(&j).verdict)
    }
}

fn branch_end(end: &TraceEnd, coordinate: impl Fn(usize) -> usize) -> BranchEnd {
    match end {
        TraceEnd::OutOfRange => BranchEnd::Range,
        TraceEnd::Barrier { index, .. } => BranchEnd::Boundary { coordinate: coordinate_name(coordinate(*index)).into() },
        TraceEnd::Singular => BranchEnd::Singular,
        TraceEnd::MaxPoints => BranchEnd::MaxPoints,
    }
}

impl EquilibriumCurve {
    fn point(&self, u: &DVector<f64>, monitors: &[f64]) -> BranchPoint {
        let p = self.params(u);
        let x = self.state(u);
        let j = jacobian_interior(&p, &x);
        BranchPoint {
            params: vec![u[self.n()]],
            equilibrium: Equilibrium::new(&p, self.kind, x),
            stability: StabilityReport::from_jacobian(&j),
            test_functions: monitors.to_vec(),
        }
    }

    fn bif(&self, kind: BifurcationKind, u: &DVector<f64>) -> BifurcationPoint {
        let p = self.params(u);
        let x = self.state(u);
        let report = StabilityReport::from_jacobian(&jacobian_interior(&p, &x));
        BifurcationPoint {
            kind,
            free_params: vec![self.free],
            param_values: vec![u[self.n()]],
            params: p,
            location: x,
            branch: self.kind,
            partner: None,
            eigenvalues: report.eigenvalues,
            omega: None,
            l1: None,
        }
    }

    fn classify_crossing(&self, c: &Crossing) -> Option<BifurcationPoint> {
        let n = self.n();
        let j = self.full_jacobian(&c.u)?;
        if c.monitor == 0 {
            // A determinant zero without a turning point is a branch crossing,
            // reported through the transverse test or the face exit instead.
            if c.tangent_before[n] * c.tangent_after[n] >= 0.0 {
                log::debug!("singular point without a parameter turn at {:?}", self.state(&c.u));
                return None;
            }
            return Some(self.bif(BifurcationKind::SaddleNode, &c.u));
        }
        if Some(c.monitor) == self.hopf_index() {
            let b = self.block(&j);
            let genuine = match n {
                3 => characteristic_coefficients(&j).1 > 0.0,
                _ => b.determinant() > 0.0,
            };
            let mut bp = self.bif(BifurcationKind::Hopf, &c.u);
            let omega = pair_frequency(&bp.eigenvalues);
            if !genuine || omega.is_none() {
                log::debug!("neutral saddle at {:?}", bp.location);
                return None;
            }
            bp.omega = omega;
            match lyapunov_coefficient(|v| jacobian_interior(&bp.params, &State::from_vector(v)), &bp.location.to_vector()) {
                Ok(nf) => bp.l1 = Some(nf.l1),
                Err(e) => log::warn!("Lyapunov coefficient unavailable: {e}"),
            }
            return Some(bp);
        }
        let c_idx = self.inactive[c.monitor - self.tc_offset()];
        if j[(c_idx, c_idx)].abs() > SPECTRAL_TOL {
            return None;
        }
        let mut bp = self.bif(BifurcationKind::Transcritical, &c.u);
        bp.partner = Some(kind_with(self.kind, c_idx));
        Some(bp)
    }
}

impl EquilibriumCurve {
    /// Exact crossing with the face `x_c = 0`: the face equilibrium whose
    /// transverse eigenvalue `∂G_c/∂x_c` vanishes, started from `u`.
    fn snap_to_face(&self, u: &DVector<f64>, c: usize) -> Option<DVector<f64>> {
        let face = EquilibriumCurve::new(self.base, self.free, kind_without(self.kind, c), self.range);
        let mut x = self.state(u).to_array();
        x[c] = 0.0;
        let mut v = face.unknowns(&State::from_array(x), u[self.n()]);
        let residual = |v: &DVector<f64>| -> Option<DVector<f64>> {
            let (f, _) = face.eval(v)?;
            let j = face.full_jacobian(v)?;
            let n = f.len();
            Some(f.insert_row(n, j[(c, c)]))
        };
        let m = v.len();
        for _ in 0..30 {
            let r = residual(&v)?;
            if r.amax() <= 1e-13 {
                break;
            }
            let mut jac = DMatrix::zeros(m, m);
            for k in 0..m {
                let h = 1e-7 * v[k].abs().max(1.0);
                let mut up = v.clone();
                let mut dn = v.clone();
                up[k] += h;
                dn[k] -= h;
                let col = (residual(&up)? - residual(&dn)?) / (2.0 * h);
                jac.set_column(k, &col);
            }
            let dv = jac.lu().solve(&r)?;
            v -= dv;
        }
        (residual(&v)?.amax() <= 1e-10).then(|| self.unknowns(&face.state(&v), v[m - 1]))
    }
}

/// Kind obtained by freeing coordinate `c` of `kind`.
fn kind_with(kind: EquilibriumKind, c: usize) -> EquilibriumKind {
    use EquilibriumKind::*;
    match (kind, c) {
        (E1, 1) => E2,
        (E1, 2) => E3,
        (E2, 2) | (E3, 1) => E4,
        (E0, _) => E1,
        _ => kind,
    }
}

/// Kind obtained by pinning coordinate `c` of `kind` to zero.
fn kind_without(kind: EquilibriumKind, c: usize) -> EquilibriumKind {
    use EquilibriumKind::*;
    match (kind, c) {
        (E4, 1) => E3,
        (E4, 2) => E2,
        (E3, 2) | (E2, 1) => E1,
        _ => E0,
    }
}

/// Follows the equilibrium branch through `seed` while `free` stays in
/// `range`, in both directions.
pub fn continue_branch(
    p: &ParamSet,
    free: ParamName,
    range: [f64; 2],
    seed: &Equilibrium,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    opts.validate()?;
    let lambda = p.get(free);
    check_range(free, range, lambda)?;
    if seed.kind == EquilibriumKind::E0 {
        return Err(Error::Config("the extinction point has no branch to follow".into()));
    }
    let curve = EquilibriumCurve::new(*p, free, seed.kind, range);
    let residual = vector_field(p, &seed.location).max_abs();
    if !(residual <= SEED_TOL) {
        return Err(Error::SeedResidual(residual));
    }
    let n = curve.n();
    let u0 = correct_fixed(&curve, &curve.unknowns(&seed.location, lambda), n).ok_or(Error::SeedResidual(residual))?;
    let polished = vector_field(p, &curve.state(&u0)).max_abs();
    if polished > RESIDUAL_TOL {
        return Err(Error::SeedResidual(polished));
    }

    let e = DVector::from_fn(n + 1, |i, _| if i == n { 1.0 } else { 0.0 });
    let fwd = trace(&mut curve.clone(), &u0, &e, opts)?;
    let bwd = trace(&mut curve.clone(), &u0, &(-e), opts)?;

    let mut bifs = Vec::new();
    let collect = |tr: &Trace, reverse: bool| {
        let mut found: Vec<BifurcationPoint> = tr.crossings.iter().filter_map(|c| curve.classify_crossing(c)).collect();
        if let TraceEnd::Barrier { index, u } = &tr.end {
            let c = curve.active[*index];
            if c != 0 {
                let u = curve.snap_to_face(u, c).unwrap_or_else(|| {
                    log::warn!("could not refine the face crossing; reporting the located point");
                    u.clone()
                });
                let mut bp = curve.bif(BifurcationKind::Transcritical, &u);
                bp.partner = Some(kind_without(curve.kind, c));
                found.push(bp);
            } else {
                log::info!("branch reached S = 0");
            }
        }
        if reverse {
            found.reverse();
        }
        found
    };
    bifs.extend(collect(&bwd, true));
    bifs.extend(collect(&fwd, false));

    let mut points: Vec<BranchPoint> = bwd.points.iter().skip(1).rev().map(|t| curve.point(&t.u, &t.monitors)).collect();
    points.extend(fwd.points.iter().map(|t| curve.point(&t.u, &t.monitors)));

    let coord = |k: usize| curve.active[k];
    Ok(Branch {
        free_params: vec![free],
        kind: seed.kind,
        test_names: curve.test_names(),
        points,
        bif_points: bifs,
        ends: [branch_end(&bwd.end, coord), branch_end(&fwd.end, coord)],
    })
}

/// Restarts on the branch crossing `tc`, from equilibria of the partner
/// kind computed at slightly perturbed parameter values.
pub fn switch_at_transcritical(
    p: &ParamSet,
    free: ParamName,
    range: [f64; 2],
    tc: &BifurcationPoint,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    let partner = match (tc.kind, tc.partner) {
        (BifurcationKind::Transcritical, Some(k)) => k,
        _ => return Err(Error::Config("branch switching needs a transcritical point".into())),
    };
    let at = tc.free_params.iter().position(|&n| n == free).map(|k| tc.param_values[k]);
    let lambda = at.ok_or_else(|| Error::Config(format!("{free} is not free at this point")))?;
    for delta in SWITCH_OFFSETS {
        let l = lambda + delta;
        if l < range[0] || l > range[1] {
            continue;
        }
        let Ok(q) = p.with(free, l) else { continue };
        let near = all_equilibria(&q)
            .into_iter()
            .filter(|e| e.kind == partner)
            .map(|e| (e.location.max_abs_diff(&tc.location), e))
            .filter(|(d, _)| *d < 0.05)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, seed)) = near {
            return continue_branch(&q, free, range, &seed, opts);
        }
    }
    Err(Error::Infeasible {
        kind: "branch switch",
        reason: format!("no {partner} equilibrium near the transcritical point"),
    })
}

/// First Lyapunov coefficient at a Hopf point found on a branch of `p`.
pub fn first_lyapunov_coefficient(p: &ParamSet, hopf: &BifurcationPoint) -> Result<f64> {
    if hopf.kind != BifurcationKind::Hopf {
        return Err(Error::NotHopf(format!("point is {}", hopf.kind)));
    }
    let mut q = *p;
    for (&name, &v) in hopf.free_params.iter().zip(&hopf.param_values) {
        q = q.with(name, v)?;
    }
    let nf = lyapunov_coefficient(|v| jacobian_interior(&q, &State::from_vector(v)), &hopf.location.to_vector())?;
    Ok(nf.l1)
}

// ---------------------------------------------------------------------------
// Fold curves

#[derive(Debug, Clone)]
struct FoldCurve {
    base: ParamSet,
    free: [ParamName; 2],
    ranges: [[f64; 2]; 2],
    b: Vector3<f64>,
    c: Vector3<f64>,
}

struct Bordered {
    v: Vector3<f64>,
    w: Vector3<f64>,
    g: f64,
}

impl FoldCurve {
    fn state(u: &DVector<f64>) -> State {
        State::new(u[0], u[1], u[2])
    }

    fn params(&self, u: &DVector<f64>) -> ParamSet {
        self.base.with_unchecked(self.free[0], u[3]).with_unchecked(self.free[1], u[4])
    }

    fn bordered(&self, j: &Matrix3<f64>) -> Option<Bordered> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(j);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.b);
        m.fixed_view_mut::<1, 3>(3, 0).copy_from(&self.c.transpose());
        let e = Vector4::new(0.0, 0.0, 0.0, 1.0);
        let right = m.lu().solve(&e)?;
        let left = m.transpose().lu().solve(&e)?;
        let ok = right.iter().chain(left.iter()).all(|v| v.is_finite());
        ok.then(|| Bordered {
            v: right.fixed_rows::<3>(0).into_owned(),
            w: left.fixed_rows::<3>(0).into_owned(),
            g: right[3],
        })
    }

    /// `∂J/∂z_k` by central differences of the analytic Jacobian.
    fn jacobian_derivative(&self, u: &DVector<f64>, k: usize) -> Matrix3<f64> {
        let h = 1e-6 * u[k].abs().max(1.0);
        let mut up = u.clone();
        let mut dn = u.clone();
        up[k] += h;
        dn[k] -= h;
        let j = |v: &DVector<f64>| jacobian_interior(&self.params(v), &Self::state(v));
        (j(&up) - j(&dn)) / (2.0 * h)
    }
}

impl Curve for FoldCurve {
    fn eval(&self, u: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let x = Self::state(u);
        if !(x.s > 0.0) {
            return None;
        }
        let p = self.params(u);
        let j = jacobian_interior(&p, &x);
        let Some(bd) = self.bordered(&j) else {
            log::warn!("bordered fold system is singular at {x:?}");
            return None;
        };
        let g = vector_field(&p, &x).to_array();
        let d1 = param_derivative(&p, &x, self.free[0]);
        let d2 = param_derivative(&p, &x, self.free[1]);
        let f = DVector::from_vec(vec![g[0], g[1], g[2], bd.g]);
        let mut a = DMatrix::zeros(4, 5);
        for r in 0..3 {
            for c in 0..3 {
                a[(r, c)] = j[(r, c)];
            }
            a[(r, 3)] = d1[r];
            a[(r, 4)] = d2[r];
        }
        for k in 0..5 {
            a[(3, k)] = -bd.w.dot(&(self.jacobian_derivative(u, k) * bd.v));
        }
        Some((f, a))
    }

    fn monitors(&self, u: &DVector<f64>) -> Vec<f64> {
        let x = Self::state(u);
        if !(x.s > 0.0) {
            return vec![f64::NAN];
        }
        let (psi1, _, _) = characteristic_coefficients(&jacobian_interior(&self.params(u), &x));
        vec![psi1]
    }

    fn barriers(&self, u: &DVector<f64>) -> Vec<f64> {
        vec![u[0], u[1], u[2]]
    }

    fn in_range(&self, u: &DVector<f64>) -> bool {
        (0..2).all(|k| u[3 + k] >= self.ranges[k][0] && u[3 + k] <= self.ranges[k][1])
    }

    fn accept(&mut self, u: &DVector<f64>) {
        let j = jacobian_interior(&self.params(u), &Self::state(u));
        if let Some(bd) = self.bordered(&j) {
            if bd.w.norm() > 0.0 && bd.v.norm() > 0.0 {
                self.b = bd.w.normalize();
                self.c = bd.v.normalize();
            }
        }
    }
}

impl FoldCurve {
    fn point(&self, u: &DVector<f64>) -> BranchPoint {
        let p = self.params(u);
        let x = Self::state(u);
        let report = StabilityReport::from_jacobian(&jacobian_interior(&p, &x));
        BranchPoint {
            params: vec![u[3], u[4]],
            equilibrium: Equilibrium::new(&p, EquilibriumKind::E4, x),
            test_functions: vec![report.psi1, x.i],
            stability: report,
        }
    }

    fn bif(&self, kind: BifurcationKind, u: &DVector<f64>) -> BifurcationPoint {
        let p = self.params(u);
        let x = Self::state(u);
        let report = StabilityReport::from_jacobian(&jacobian_interior(&p, &x));
        BifurcationPoint {
            kind,
            free_params: self.free.to_vec(),
            param_values: vec![u[3], u[4]],
            params: p,
            location: x,
            branch: EquilibriumKind::E4,
            partner: None,
            eigenvalues: report.eigenvalues,
            omega: None,
            l1: None,
        }
    }

    fn classify_crossing(&self, c: &Crossing) -> Option<BifurcationPoint> {
        let x = Self::state(&c.u);
        let j = jacobian_interior(&self.params(&c.u), &x);
        let (_, psi2, _) = characteristic_coefficients(&j);
        let mut bp = self.bif(BifurcationKind::ZeroHopf, &c.u);
        let zero = bp.eigenvalues.iter().any(|z| z.norm() <= SPECTRAL_TOL);
        let omega = pair_frequency(&bp.eigenvalues);
        if psi2 <= 0.0 || !zero || omega.is_none() {
            log::debug!("trace zero on the fold curve without an imaginary pair at {x:?}");
            return None;
        }
        bp.omega = omega;
        Some(bp)
    }
}

/// Follows the curve of saddle-node points through `seed` in the two
/// parameters `free`, each restricted to its range.
pub fn continue_fold_curve(
    p: &ParamSet,
    free: [ParamName; 2],
    ranges: [[f64; 2]; 2],
    seed: &BifurcationPoint,
    opts: &ContinuationOptions,
) -> Result<Branch> {
    opts.validate()?;
    if seed.kind != BifurcationKind::SaddleNode || seed.branch != EquilibriumKind::E4 {
        return Err(Error::NotSaddleNode);
    }
    if free[0] == free[1] {
        return Err(Error::Config("fold curves need two distinct parameters".into()));
    }
    let mut base = *p;
    for (&name, &v) in seed.free_params.iter().zip(&seed.param_values) {
        base = base.with(name, v)?;
    }
    let lambdas = [base.get(free[0]), base.get(free[1])];
    for k in 0..2 {
        check_range(free[k], ranges[k], lambdas[k])?;
    }
    let residual = vector_field(&base, &seed.location).max_abs();
    if !(residual <= SEED_TOL) {
        return Err(Error::SeedResidual(residual));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(FOLD_BORDER_SEED);
    let mut unit = || Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)).normalize();
    let mut curve = FoldCurve { base, free, ranges, b: unit(), c: unit() };
    let x = seed.location;
    let u_start = DVector::from_vec(vec![x.s, x.i, x.p, lambdas[0], lambdas[1]]);
    let mut u0 = correct_fixed(&curve, &u_start, 4).ok_or(Error::SeedResidual(residual))?;
    curve.accept(&u0);
    // Re-solve with the refreshed borders so the seed satisfies g = 0 for them.
    u0 = correct_fixed(&curve, &u0, 4).ok_or(Error::AugmentedSingular)?;

    let e = DVector::from_fn(5, |i, _| if i == 3 { 1.0 } else { 0.0 });
    let fwd = trace(&mut curve.clone(), &u0, &e, opts)?;
    let bwd = trace(&mut curve.clone(), &u0, &(-e), opts)?;

    let collect = |tr: &Trace, reverse: bool| {
        let mut found: Vec<BifurcationPoint> = tr.crossings.iter().filter_map(|c| curve.classify_crossing(c)).collect();
        if let TraceEnd::Barrier { index: 1, u } = &tr.end {
            found.push(curve.bif(BifurcationKind::SaddleNodeTranscritical, u));
        }
        if reverse {
            found.reverse();
        }
        found
    };
    let mut bifs = collect(&bwd, true);
    bifs.extend(collect(&fwd, false));

    let mut points: Vec<BranchPoint> = bwd.points.iter().skip(1).rev().map(|t| curve.point(&t.u)).collect();
    points.extend(fwd.points.iter().map(|t| curve.point(&t.u)));

    Ok(Branch {
        free_params: free.to_vec(),
        kind: EquilibriumKind::E4,
        test_names: vec!["ZH".into(), "SNTC".into()],
        points,
        bif_points: bifs,
        ends: [branch_end(&bwd.end, |k| k), branch_end(&fwd.end, |k| k)],
    })
}
