//! Forward-time simulation with extinction, convergence and boundedness events.
//!
//! The susceptible class can vanish in finite time because the aggregation
//! term `d0 S^r P` with `r < 1` is not Lipschitz at `S = 0`. Numerically this
//! is detected as the first crossing of `S = eps_ext`, refined by bisection on
//! the dense output. By default integration stops there; with
//! [`IntegrateOptions::continue_after_fte`] it continues on the face `S = 0`,
//! where the vector field reduces to
//! `I' = -a1 I - d1 I P`, `P' = -a2 P + d3 I P`.

mod integrator;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use integrator::{dopri_step, integrate_fixed, Step, Vec3};

use crate::equilibria::{all_equilibria, Equilibrium, EquilibriumKind};
use crate::error::{Error, Result};
use crate::model::{vector_field, ParamSet, State};

/// Default extinction threshold for `S`.
pub const EPS_EXT: f64 = 1e-6;
/// Roundoff band below zero that is silently clamped.
pub const CLAMP_TOL: f64 = 1e-10;
/// Slack added to the population bound before a violation is reported.
pub const BOUND_SLACK: f64 = 1e-6;
/// Relative distance for matching an endpoint to an equilibrium.
pub const ENDPOINT_TOL: f64 = 1e-3;
/// Level below which `I` counts as extinct.
pub const I_EXTINCT: f64 = 1e-8;

const EVENT_TIME_TOL: f64 = 1e-10;
const MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Number of uniformly spaced output samples on `[0, t_max]`.
    pub samples: usize,
    pub eps_ext: f64,
    pub continue_after_fte: bool,
    /// Stop once `max |G|` drops below this value.
    pub stop_on_convergence: Option<f64>,
    /// Check the a priori population bound whenever it applies.
    pub monitor_bound: bool,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions {
            rtol: 1e-9,
            atol: 1e-12,
            samples: 2000,
            eps_ext: EPS_EXT,
            continue_after_fte: false,
            stop_on_convergence: None,
            monitor_bound: true,
        }
    }
}

pub const DEFAULT_T_MAX: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    #[serde(rename = "FTE")]
    Fte,
    Converged,
    IExtinct,
    BoundViolation,
    /// Endpoint matched no equilibrium and `I` persisted.
    Nonconvergent,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Fte => "FTE",
            EventKind::Converged => "Converged",
            EventKind::IExtinct => "IExtinct",
            EventKind::BoundViolation => "BoundViolation",
            EventKind::Nonconvergent => "Nonconvergent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub state: State,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub matched: Option<Equilibrium>,
}

impl Event {
    fn new(kind: EventKind, time: f64, state: State) -> Self {
        Event { kind, time, state, matched: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxTime,
    Fte,
    Converged,
    BoundViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    #[serde(flatten)]
    pub state: State,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub events: Vec<Event>,
    pub terminated_by: Termination,
}

impl Trajectory {
    pub fn final_sample(&self) -> Sample {
        *self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn event(&self, kind: EventKind) -> Option<&Event> {
        self.events.iter().find(|e| e.kind == kind)
    }

    /// Extinction time `t*` if an FTE event occurred.
    pub fn extinction_time(&self) -> Option<f64> {
        self.event(EventKind::Fte).map(|e| e.time)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,S,I,P")?;
        for s in &self.samples {
            writeln!(w, "{},{},{},{}", s.t, s.state.s, s.state.i, s.state.p)?;
        }
        for e in &self.events {
            writeln!(w, "# event,{},{},{},{},{}", e.kind, e.time, e.state.s, e.state.i, e.state.p)?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

fn clamp_roundoff(y: &mut Vec3) {
    for c in y.iter_mut() {
        if *c < 0.0 && *c >= -CLAMP_TOL {
            *c = 0.0;
        }
    }
}

/// Refines the first root of `g` in `[a, b]` given `g(a) > 0 >= g(b)`.
fn bisect_time(step: &Step, a: f64, b: f64, g: impl Fn(&Vec3) -> f64) -> f64 {
    let (mut lo, mut hi) = (a, b);
    while hi - lo > EVENT_TIME_TOL * hi.abs().max(1.0) {
        let mid = 0.5 * (lo + hi);
        if g(&step.interpolate(mid)) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}

struct Tolerances {
    rtol: f64,
    atol: f64,
}

/// Integrates the model forward from `x0` up to `t_max`.
///
/// ```
/// use sipfear::dynamics::{integrate, IntegrateOptions, Termination};
/// use sipfear::{ParamSet, State};
/// # let p = ParamSet::from_pairs([("b0", 2.0), ("r", 0.7), ("e0", 0.5), ("K", 8.0),
/// #     ("a0", 0.3), ("a1", 0.4), ("a2", 0.8), ("d0", 0.6), ("d1", 0.7), ("d2", 0.3),
/// #     ("d3", 0.5), ("k1", 0.99), ("k2", 0.85)]).unwrap();
/// let traj = integrate(&p, State::ORIGIN, 10.0, &IntegrateOptions::default()).unwrap();
/// assert_eq!(traj.terminated_by, Termination::MaxTime);
/// assert!(traj.events.is_empty());
/// ```
pub fn integrate(p: &ParamSet, x0: State, t_max: f64, opts: &IntegrateOptions) -> Result<Trajectory> {
    if !(t_max > 0.0 && t_max.is_finite()) {
        return Err(Error::Config(format!("t_max must be positive, got {t_max}")));
    }
    if opts.samples < 2 {
        return Err(Error::Config("at least two output samples are required".into()));
    }
    let x0 = State::nonnegative(x0.s, x0.i, x0.p)?;
    let tol = Tolerances { rtol: opts.rtol, atol: opts.atol };
    match run(p, x0, t_max, opts, &tol) {
        Err(Error::StepSizeUnderflow { t, h }) => {
            log::warn!("step size underflow at t = {t} (h = {h:e}); retrying with tighter tolerances");
            let tight = Tolerances { rtol: opts.rtol * 0.1, atol: opts.atol * 0.1 };
            run(p, x0, t_max, opts, &tight)
        }
        other => other,
    }
}

fn run(p: &ParamSet, x0: State, t_max: f64, opts: &IntegrateOptions, tol: &Tolerances) -> Result<Trajectory> {
    let f = |_t: f64, y: &Vec3| vector_field(p, &State::from_array(*y)).to_array();
    let limit = if opts.monitor_bound {
        p.population_bound().map(|b| x0.total().max(b) + BOUND_SLACK)
    } else {
        None
    };
    let grid = |k: usize| t_max * k as f64 / (opts.samples - 1) as f64;

    let mut samples = vec![Sample { t: 0.0, state: x0 }];
    let mut next_k = 1;
    let mut events = Vec::new();
    let mut t = 0.0;
    let mut y = x0.to_array();
    let mut k1 = f(t, &y);
    let mut h = initial_step(&y, &k1, t_max, tol);
    let mut fte_armed = y[0] > opts.eps_ext;
    let mut i_armed = y[1] > I_EXTINCT;

    let finish = |samples: &mut Vec<Sample>, t: f64, y: &Vec3| {
        if samples.last().is_some_and(|s| s.t < t) {
            samples.push(Sample { t, state: State::from_array(*y) });
        }
    };

    for _ in 0..MAX_STEPS {
        if t >= t_max {
            return Ok(Trajectory { samples, events, terminated_by: Termination::MaxTime });
        }
        let last = h >= t_max - t;
        if last {
            h = t_max - t;
        }
        let h_min = 1e-14 * t.abs().max(1.0);
        if h < h_min && !last {
            return Err(Error::StepSizeUnderflow { t, h });
        }

        let step = dopri_step(&f, t, &y, &k1, h);
        let err = step.error_norm(&y, tol.rtol, tol.atol);
        if !err.is_finite() || err > 1.0 {
            h *= if err.is_finite() { integrator::step_factor(err).min(1.0) } else { 0.2 };
            continue;
        }
        let t_new = if last { t_max } else { t + h };
        let mut y_new = step.y_new;

        // Extinction of S, located on the dense output before any
        // negativity check: the crossing precedes any undershoot.
        if fte_armed && y_new[0] <= opts.eps_ext {
            let eps = opts.eps_ext;
            let t_star = bisect_time(&step, t, t_new, |z| z[0] - eps);
            emit_samples(&mut samples, &mut next_k, opts.samples, &grid, &step, t_star, false);
            let mut y_star = step.interpolate(t_star);
            clamp_roundoff(&mut y_star);
            events.push(Event::new(EventKind::Fte, t_star, State::from_array(y_star)));
            if !opts.continue_after_fte {
                finish(&mut samples, t_star, &y_star);
                return Ok(Trajectory { samples, events, terminated_by: Termination::Fte });
            }
            y_star[0] = 0.0;
            for c in &mut y_star[1..] {
                *c = c.max(0.0);
            }
            t = t_star;
            y = y_star;
            k1 = f(t, &y);
            fte_armed = false;
            continue;
        }

        if !fte_armed && y[0] <= opts.eps_ext && y_new[0] < 0.0 {
            // S is already numerically extinct; keep it on the face.
            y_new[0] = 0.0;
        }
        if y_new.iter().any(|&c| c < -CLAMP_TOL) {
            h *= 0.5;
            continue;
        }
        clamp_roundoff(&mut y_new);

        if i_armed && y_new[1] < I_EXTINCT {
            let t_i = bisect_time(&step, t, t_new, |z| z[1] - I_EXTINCT);
            let mut y_i = step.interpolate(t_i);
            clamp_roundoff(&mut y_i);
            events.push(Event::new(EventKind::IExtinct, t_i, State::from_array(y_i)));
            i_armed = false;
        } else if !i_armed && y_new[1] > I_EXTINCT {
            i_armed = true;
        }
        if !fte_armed && y_new[0] > opts.eps_ext {
            fte_armed = true;
        }

        let emitted_from = samples.len();
        emit_samples(&mut samples, &mut next_k, opts.samples, &grid, &step, t_new, last);
        if let Some(limit) = limit {
            let over = samples[emitted_from..]
                .iter()
                .map(|s| (s.t, s.state))
                .chain(std::iter::once((t_new, State::from_array(y_new))))
                .find(|(_, x)| x.total() > limit);
            if let Some((tv, xv)) = over {
                samples.retain(|s| s.t <= tv);
                events.push(Event::new(EventKind::BoundViolation, tv, xv));
                finish(&mut samples, tv, &xv.to_array());
                return Ok(Trajectory { samples, events, terminated_by: Termination::BoundViolation });
            }
        }

        t = t_new;
        y = y_new;
        k1 = step.f_new;
        h *= integrator::step_factor(err);

        if let Some(ctol) = opts.stop_on_convergence {
            if f(t, &y).iter().all(|g| g.abs() < ctol) {
                finish(&mut samples, t, &y);
                events.push(Event::new(EventKind::Converged, t, State::from_array(y)));
                return Ok(Trajectory { samples, events, terminated_by: Termination::Converged });
            }
        }
    }
    Err(Error::StepSizeUnderflow { t, h })
}

/// Pushes every grid sample in `(step.t0, until]` (`until` exclusive unless `inclusive`).
fn emit_samples(
    samples: &mut Vec<Sample>,
    next_k: &mut usize,
    n: usize,
    grid: &impl Fn(usize) -> f64,
    step: &Step,
    until: f64,
    inclusive: bool,
) {
    while *next_k < n {
        let tk = if *next_k == n - 1 && inclusive { until } else { grid(*next_k) };
        let inside = if inclusive { tk <= until } else { tk < until };
        if !inside {
            break;
        }
        let mut yk = if tk == step.t0 + step.h { step.y_new } else { step.interpolate(tk) };
        clamp_roundoff(&mut yk);
        samples.push(Sample { t: tk, state: State::from_array(yk) });
        *next_k += 1;
    }
}

fn initial_step(y: &Vec3, f0: &Vec3, t_max: f64, tol: &Tolerances) -> f64 {
    let mut d0 = 0.0f64;
    let mut d1 = 0.0f64;
    for i in 0..3 {
        let sc = tol.atol + tol.rtol * y[i].abs();
        d0 = d0.max((y[i] / sc).abs());
        d1 = d1.max((f0[i] / sc).abs());
    }
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(1e-2).min(t_max)
}

/// Sufficient condition for the extinction of infectious prey under
/// selective predation: `d1 > (e0 K - a1 b0) / b0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectivePredation {
    pub threshold: f64,
    pub predicted_extinct: bool,
}

pub fn check_selective_predation_threshold(p: &ParamSet) -> SelectivePredation {
    let threshold = (p.e0 * p.capacity - p.a1 * p.b0) / p.b0;
    SelectivePredation { threshold, predicted_extinct: p.d1 > threshold }
}

/// Classifies where a finished trajectory ended up.
///
/// An FTE event wins. Otherwise the final state is matched against the
/// origin and every feasible equilibrium with tolerance
/// `ENDPOINT_TOL * max(1, |e|_inf)`; failing that, `I` below [`I_EXTINCT`]
/// over the last tenth of the horizon gives `IExtinct`, and anything else is
/// `Nonconvergent`.
pub fn classify_endpoint(p: &ParamSet, traj: &Trajectory) -> Result<Event> {
    if let Some(e) = traj.event(EventKind::Fte) {
        return Ok(e.clone());
    }
    if let Some(e) = traj.event(EventKind::BoundViolation) {
        return Ok(e.clone());
    }
    let last = traj.final_sample();
    let origin = Equilibrium { kind: EquilibriumKind::E0, location: State::ORIGIN, residual: 0.0, feasible: true };
    let mut candidates = vec![origin];
    candidates.extend(all_equilibria(p));
    let matches: Vec<&Equilibrium> = candidates
        .iter()
        .filter(|e| {
            let scale = e.location.to_array().iter().fold(1.0f64, |m, v| m.max(v.abs()));
            last.state.max_abs_diff(&e.location) <= ENDPOINT_TOL * scale
        })
        .collect();
    match matches.as_slice() {
        [] => {}
        [e] => {
            return Ok(Event { kind: EventKind::Converged, time: last.t, state: last.state, matched: Some(**e) });
        }
        [a, b, ..] => return Err(Error::AmbiguousEndpoint(a.kind.to_string(), b.kind.to_string())),
    }
    let window_start = 0.9 * last.t;
    let extinct = traj
        .samples
        .iter()
        .filter(|s| s.t >= window_start)
        .all(|s| s.state.i < I_EXTINCT);
    let kind = if extinct { EventKind::IExtinct } else { EventKind::Nonconvergent };
    Ok(Event::new(kind, last.t, last.state))
}
