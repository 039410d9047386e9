//! Acceptance criteria 1-10. Each criterion prints one PASS/FAIL line.
//!
//! Criterion 7 (saddle-node transcritical points in (k2, K)) is known not to
//! hold for this model: the fold curve never reaches I = 0. It is evaluated
//! at full strictness and expected to fail; the test fails if any other
//! criterion fails or if criterion 7 unexpectedly passes.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sipfear::continuation::{
    continue_branch, continue_fold_curve, BifurcationKind, BifurcationPoint, Branch, ContinuationOptions,
};
use sipfear::dynamics::{
    check_selective_predation_threshold, classify_endpoint, integrate, integrate_fixed, EventKind, IntegrateOptions,
};
use sipfear::equilibria::{all_equilibria, equilibrium_e3, equilibrium_e4, EquilibriumKind};
use sipfear::stability::{characteristic_coefficients, routh_hurwitz_stable};
use sipfear::{jacobian, vector_field, ParamName, ParamSet, State};

type Outcome = Result<String, String>;

const KNOWN_UNATTAINABLE: [usize; 1] = [7];

fn params(pairs: [(&str, f64); 13]) -> ParamSet {
    ParamSet::from_pairs(pairs).unwrap()
}

fn sn_set() -> ParamSet {
    params([
        ("b0", 8.0),
        ("r", 0.5),
        ("e0", 4.0),
        ("K", 4.0),
        ("a0", 0.5),
        ("a1", 0.4),
        ("a2", 0.8),
        ("d0", 0.7),
        ("d1", 0.7),
        ("d2", 0.4),
        ("d3", 0.5),
        ("k1", 0.1),
        ("k2", 1.0),
    ])
}

fn hopf_set() -> ParamSet {
    params([
        ("b0", 2.0),
        ("r", 0.7),
        ("e0", 0.5),
        ("K", 8.0),
        ("a0", 0.3),
        ("a1", 0.4),
        ("a2", 0.8),
        ("d0", 0.6),
        ("d1", 0.7),
        ("d2", 0.3),
        ("d3", 0.5),
        ("k1", 0.99),
        ("k2", 0.85),
    ])
}

fn fte_set(k1: f64) -> ParamSet {
    params([
        ("b0", 10.0),
        ("r", 0.5),
        ("e0", 6.0),
        ("K", 5.0),
        ("a0", 0.5),
        ("a1", 0.4),
        ("a2", 0.8),
        ("d0", 0.7),
        ("d1", 0.7),
        ("d2", 0.3),
        ("d3", 0.5),
        ("k1", k1),
        ("k2", 0.8),
    ])
}

fn opts() -> ContinuationOptions {
    ContinuationOptions::default()
}

fn check(ok: bool, msg: String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    check((got - want).abs() <= tol, format!("{name} = {got:.6} (want {want} ± {tol})"))
}

fn close_state(name: &str, got: &State, want: (f64, f64, f64), tol: f64) -> Result<(), String> {
    let d = got.max_abs_diff(&State::new(want.0, want.1, want.2));
    check(d <= tol, format!("{name} = ({:.4}, {:.4}, {:.4}) off by {d:.2e} (tol {tol})", got.s, got.i, got.p))
}

fn single(b: &Branch, kind: BifurcationKind) -> Result<BifurcationPoint, String> {
    let found: Vec<_> = b.bifurcations(kind).cloned().collect();
    match found.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(format!("expected one {kind} point, found {}", found.len())),
    }
}

fn min_modulus(b: &BifurcationPoint) -> f64 {
    b.eigenvalues.iter().map(|z| z.norm()).fold(f64::INFINITY, f64::min)
}

fn sn_k1_branch() -> Result<Branch, String> {
    let p = sn_set();
    let seed = equilibrium_e4(&p).map_err(|e| e.to_string())?[0];
    continue_branch(&p, ParamName::K1, [0.0, 5.0], &seed, &opts()).map_err(|e| e.to_string())
}

fn sn_k2_branch() -> Result<(ParamSet, Branch), String> {
    let p = sn_set().with(ParamName::K2, 0.6).unwrap();
    let seed = equilibrium_e4(&p).map_err(|e| e.to_string())?[0];
    let b = continue_branch(&p, ParamName::K2, [0.0, 5.0], &seed, &opts()).map_err(|e| e.to_string())?;
    Ok((p, b))
}

fn criterion_1() -> Outcome {
    let sn = single(&sn_k1_branch()?, BifurcationKind::SaddleNode)?;
    close("k1*", sn.param_values[0], 0.4181, 0.005)?;
    close_state("SN state", &sn.location, (0.4615, 1.0565, 0.8523), 1e-2)?;
    Ok(format!("k1* = {:.6}", sn.param_values[0]))
}

fn criterion_2() -> Outcome {
    let sn = single(&sn_k2_branch()?.1, BifurcationKind::SaddleNode)?;
    close("k2*", sn.param_values[0], 0.4417, 0.005)?;
    close_state("SN state", &sn.location, (0.6418, 0.9591, 1.5854), 1e-2)?;
    Ok(format!("k2* = {:.6}", sn.param_values[0]))
}

fn criterion_3() -> Outcome {
    let p = hopf_set().with(ParamName::K1, 0.0).unwrap();
    let seed = equilibrium_e3(&p).map_err(|e| e.to_string())?[0];
    let e3_branch = continue_branch(&p, ParamName::K1, [0.0, 5.0], &seed, &opts()).map_err(|e| e.to_string())?;
    let tc = single(&e3_branch, BifurcationKind::Transcritical)?;
    check(tc.branch == EquilibriumKind::E3, format!("TC found on {} branch", tc.branch))?;
    close("k1_TC", tc.param_values[0], 0.4219, 0.005)?;
    close_state("E3 at TC", &tc.location, (4.06, 0.0, 0.9978), 1e-2)?;

    let p = hopf_set().with(ParamName::K1, 1.2).unwrap();
    let seed = equilibrium_e4(&p).map_err(|e| e.to_string())?[0];
    let e4_branch = continue_branch(&p, ParamName::K1, [0.0, 5.0], &seed, &opts()).map_err(|e| e.to_string())?;
    let hopf = single(&e4_branch, BifurcationKind::Hopf)?;
    close("k1_H", hopf.param_values[0], 2.5075, 0.01)?;
    close_state("Hopf state", &hopf.location, (1.6184, 0.7596, 0.3308), 1e-2)?;
    let l1 = hopf.l1.ok_or("no l1 at Hopf point")?;
    check(l1 < 0.0, format!("l1 = {l1} is not negative"))?;
    Ok(format!("k1_TC = {:.6}, k1_H = {:.6}, l1 = {l1:.4e}", tc.param_values[0], hopf.param_values[0]))
}

fn criterion_4() -> Outcome {
    let p = hopf_set();
    let seed = equilibrium_e4(&p).map_err(|e| e.to_string())?[0];
    let b = continue_branch(&p, ParamName::K2, [0.0, 8.0], &seed, &opts()).map_err(|e| e.to_string())?;
    let hopf = single(&b, BifurcationKind::Hopf)?;
    close("k2_H", hopf.param_values[0], 0.1536, 0.005)?;
    let l1 = hopf.l1.ok_or("no l1 at Hopf point")?;
    check(l1 < 0.0, format!("l1 = {l1} is not negative"))?;
    let tc = single(&b, BifurcationKind::Transcritical)?;
    close("k2_TC", tc.param_values[0], 1.7885, 0.01)?;
    Ok(format!("k2_H = {:.6} (l1 = {l1:.4e}), k2_TC = {:.6}", hopf.param_values[0], tc.param_values[0]))
}

fn fold_curve(second: ParamName, range: [f64; 2]) -> Result<Branch, String> {
    let (p, b) = sn_k2_branch()?;
    let sn = single(&b, BifurcationKind::SaddleNode)?;
    continue_fold_curve(&p, [ParamName::K2, second], [[0.0, 3.0], range], &sn, &opts()).map_err(|e| e.to_string())
}

fn zero_hopf_matches(zh: &BifurcationPoint, at: (f64, f64), omega: f64) -> Result<(), String> {
    close("k2", zh.param_values[0], at.0, 0.01)?;
    close("second parameter", zh.param_values[1], at.1, 0.01)?;
    check(min_modulus(zh) <= 1e-4, format!("zero eigenvalue has modulus {:.2e}", min_modulus(zh)))?;
    let w = zh.eigenvalues.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    close("omega", w, omega, 0.02)
}

fn criterion_5() -> Outcome {
    let curve = fold_curve(ParamName::D0, [0.0, 3.0])?;
    let zh = single(&curve, BifurcationKind::ZeroHopf)?;
    zero_hopf_matches(&zh, (0.9917, 1.4225), 2.2402)?;
    Ok(format!("ZH at ({:.5}, {:.5})", zh.param_values[0], zh.param_values[1]))
}

fn criterion_6() -> Outcome {
    let curve = fold_curve(ParamName::K, [0.5, 12.0])?;
    let zh: Vec<_> = curve.bifurcations(BifurcationKind::ZeroHopf).collect();
    let mut summary = Vec::new();
    for (at, omega) in [((0.2868, 5.0261), 2.6876), ((0.2585, 5.5590), 1.9754)] {
        let hit = zh
            .iter()
            .find(|z| zero_hopf_matches(z, at, omega).is_ok())
            .ok_or_else(|| format!("no ZH near {at:?} with pair ±{omega}i among {} points", zh.len()))?;
        summary.push(format!("({:.5}, {:.5})", hit.param_values[0], hit.param_values[1]));
    }
    Ok(format!("ZH at {}", summary.join(" and ")))
}

fn criterion_7() -> Outcome {
    let curve = fold_curve(ParamName::K, [0.5, 12.0])?;
    let sntc: Vec<_> = curve.bifurcations(BifurcationKind::SaddleNodeTranscritical).collect();
    let min_i = curve.points.iter().map(|p| p.equilibrium.location.i).fold(f64::INFINITY, f64::min);
    for want in [(0.4508, 3.9784), (0.2271, 5.7454)] {
        let ok = sntc.iter().any(|b| {
            (b.param_values[0] - want.0).abs() <= 0.01
                && (b.param_values[1] - want.1).abs() <= 0.01
                && b.location.i.abs() <= 1e-4
        });
        check(ok, format!("no SNTC near {want:?}; fold curve has min I = {min_i:.4}, ends {:?}", curve.ends))?;
    }
    Ok(format!("{} SNTC points", sntc.len()))
}

fn simulate(p: &ParamSet, x0: State, opts: &IntegrateOptions) -> Result<sipfear::dynamics::Trajectory, String> {
    integrate(p, x0, 500.0, opts).map_err(|e| e.to_string())
}

fn criterion_8() -> Outcome {
    let x0 = State::new(3.0, 2.0, 4.0);
    let base = IntegrateOptions::default();
    let traj = simulate(&fte_set(0.0), x0, &base)?;
    close_state("k1 = 0 endpoint", &traj.final_sample().state, (2.8194, 0.5925, 4.5959), 1e-3)?;

    let t_star = |eps_ext: f64| -> Result<f64, String> {
        let opts = IntegrateOptions { eps_ext, ..base.clone() };
        simulate(&fte_set(0.2), x0, &opts)?
            .event(EventKind::Fte)
            .map(|e| e.time)
            .ok_or_else(|| format!("no FTE event at eps_ext = {eps_ext}"))
    };
    let t = t_star(base.eps_ext)?;
    close("t*", t, 14.3, 0.5)?;
    let spread = (t_star(1e-5)? - t_star(1e-8)?).abs();
    check(spread < 0.05, format!("eps_ext sensitivity {spread}"))?;
    Ok(format!("t* = {t:.4}, eps_ext spread {spread:.2e}"))
}

fn criterion_9() -> Outcome {
    let x0 = State::new(0.8, 0.9, 1.1);
    let base = hopf_set().with(ParamName::K1, 2.8).unwrap().with(ParamName::K2, 1.8).unwrap();
    let mut kinds = Vec::new();
    for (d1, kind, want) in
        [(0.8, EquilibriumKind::E4, (2.3492, 0.5091, 0.3758)), (6.0, EquilibriumKind::E3, (4.06, 0.0, 0.4070))]
    {
        let p = base.with(ParamName::D1, d1).unwrap();
        let traj = simulate(&p, x0, &IntegrateOptions::default())?;
        let end = classify_endpoint(&p, &traj).map_err(|e| e.to_string())?;
        let matched = end.matched.map(|e| e.kind);
        check(matched == Some(kind), format!("d1 = {d1}: endpoint {:?} matched {matched:?}", end.kind))?;
        close_state(&format!("d1 = {d1} endpoint"), &end.state, want, 1e-2)?;
        kinds.push(kind.to_string());
    }
    let threshold = check_selective_predation_threshold(&base).threshold;
    check(threshold == 1.6, format!("threshold = {threshold:?}, want exactly 1.6"))?;
    Ok(format!("endpoints {}, threshold {threshold}", kinds.join("/")))
}

fn random_params(rng: &mut ChaCha8Rng) -> ParamSet {
    let d0 = rng.random_range(0.3..1.0);
    let d1 = rng.random_range(0.3..1.0);
    params([
        ("b0", rng.random_range(1.0..10.0)),
        ("r", rng.random_range(0.3..0.9)),
        ("e0", rng.random_range(0.2..5.0)),
        ("K", rng.random_range(1.0..10.0)),
        ("a0", rng.random_range(0.1..0.6)),
        ("a1", rng.random_range(0.1..0.8)),
        ("a2", rng.random_range(0.1..1.0)),
        ("d0", d0),
        ("d1", d1),
        ("d2", d0 * rng.random_range(0.1..0.95)),
        ("d3", d1 * rng.random_range(0.1..0.95)),
        ("k1", rng.random_range(0.0..3.0)),
        ("k2", rng.random_range(0.0..3.0)),
    ])
}

fn random_state(rng: &mut ChaCha8Rng) -> State {
    State::new(rng.random_range(0.05..5.0), rng.random_range(0.05..3.0), rng.random_range(0.05..3.0))
}

fn fd_jacobian(p: &ParamSet, x: &State) -> Matrix3<f64> {
    let v = x.to_vector();
    let mut j = Matrix3::zeros();
    for c in 0..3 {
        let h = 1e-6 * v[c].abs().max(1.0);
        let mut up = v;
        let mut down = v;
        up[c] += h;
        down[c] -= h;
        let col = (vector_field(p, &State::from_vector(&up)).to_vector()
            - vector_field(p, &State::from_vector(&down)).to_vector())
            / (2.0 * h);
        j.set_column(c, &col);
    }
    j
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);

    // Analytic against central-difference Jacobian.
    for _ in 0..100 {
        let (p, x) = (random_params(&mut rng), random_state(&mut rng));
        let a = jacobian(&p, &x).map_err(|e| e.to_string())?;
        let fd = fd_jacobian(&p, &x);
        let rel = (a - fd).amax() / a.amax().max(1.0);
        check(rel <= 1e-5, format!("Jacobian mismatch {rel:.2e} at {x:?}"))?;
    }

    // Routh-Hurwitz against eigenvalues from a general eigensolver.
    let mut compared = 0;
    for _ in 0..10_000 {
        let (p, x) = (random_params(&mut rng), random_state(&mut rng));
        let j = jacobian(&p, &x).map_err(|e| e.to_string())?;
        let max_re = j.complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        if max_re.abs() < 1e-9 {
            continue;
        }
        let (a, b, c) = characteristic_coefficients(&j);
        check(routh_hurwitz_stable(a, b, c) == (max_re < 0.0), format!("Routh-Hurwitz disagrees at {x:?}"))?;
        compared += 1;
    }

    // Residuals of every computed equilibrium.
    let mut equilibria = 0;
    for _ in 0..200 {
        let p = random_params(&mut rng);
        for e in all_equilibria(&p) {
            check(e.residual <= 1e-10, format!("{} residual {:.2e}", e.kind, e.residual))?;
            check(vector_field(&p, &e.location).max_abs() <= 1e-10, format!("{} vector field nonzero", e.kind))?;
            equilibria += 1;
        }
    }

    // Nonnegativity and population-bound monitors.
    let short = IntegrateOptions { samples: 200, ..Default::default() };
    for _ in 0..100 {
        let p = random_params(&mut rng);
        let x0 = random_state(&mut rng);
        let traj = integrate(&p, x0, 100.0, &short).map_err(|e| e.to_string())?;
        check(traj.event(EventKind::BoundViolation).is_none(), format!("bound monitor fired for {p:?}"))?;
        let negative = traj.samples.iter().any(|s| s.state.s < 0.0 || s.state.i < 0.0 || s.state.p < 0.0);
        check(!negative, format!("negative state for {p:?}"))?;
    }

    // Root-count oracle across each detected fold.
    let count = |p: &ParamSet| equilibrium_e4(p).map(|r| r.len()).unwrap_or(0);
    let k1_fold = single(&sn_k1_branch()?, BifurcationKind::SaddleNode)?;
    let (p2, b2) = sn_k2_branch()?;
    let k2_fold = single(&b2, BifurcationKind::SaddleNode)?;
    for (p, name, fold) in [(sn_set(), ParamName::K1, &k1_fold), (p2, ParamName::K2, &k2_fold)] {
        let k = fold.param_values[0];
        let mut counts = [count(&p.with(name, k - 1e-4).unwrap()), count(&p.with(name, k + 1e-4).unwrap())];
        counts.sort();
        check(counts == [0, 2], format!("root counts {counts:?} across the {name} fold"))?;
    }

    // Integrator order on y' = A y with a rotation-plus-decay matrix.
    let a = Matrix3::new(-0.5, -2.0, 0.0, 2.0, -0.5, 0.0, 0.0, 0.0, -1.0);
    let f = |_: f64, y: &[f64; 3]| {
        let v = a * Vector3::from(*y);
        [v[0], v[1], v[2]]
    };
    let y0 = [1.0, 0.5, -0.3];
    let exact = (a * 2.0).exp() * Vector3::from(y0);
    let err = |steps: usize| (Vector3::from(integrate_fixed(&f, y0, 2.0, steps)) - exact).amax();
    let order = (err(20) / err(40)).log2();
    check(order >= 4.5, format!("observed order {order:.3}"))?;

    Ok(format!("{compared} Routh-Hurwitz comparisons, {equilibria} equilibria, order {order:.2}"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(usize, fn() -> Outcome); 10] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
    ];
    let mut unexpected = Vec::new();
    for (n, run) in criteria {
        let outcome = run();
        let line = match &outcome {
            Ok(detail) => format!("criterion {n}: PASS ({detail})"),
            Err(detail) => format!("criterion {n}: FAIL ({detail})"),
        };
        // Written past the test harness capture so the report always shows.
        let _ = writeln!(std::io::stderr(), "{line}");
        if outcome.is_ok() == KNOWN_UNATTAINABLE.contains(&n) {
            unexpected.push(line);
        }
    }
    assert!(unexpected.is_empty(), "unexpected acceptance outcomes:\n{}", unexpected.join("\n"));
}
