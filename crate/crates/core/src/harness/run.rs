//! Executes scenarios: dispatch, file output and golden comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::continuation::{
    continue_branch, continue_fold_curve, BifurcationKind, BifurcationPoint, Branch, ContinuationOptions,
};
use crate::dynamics::{
    check_selective_predation_threshold, classify_endpoint, integrate, Event, IntegrateOptions, Trajectory,
};
use crate::equilibria::{all_equilibria, Equilibrium};
use crate::error::{Error, Result};
use crate::model::{ParamName, ParamSet, State};
use crate::stability::{classify, StabilityReport};

use super::scenario::{state_from, Action, Golden, ScenarioSpec, SeedSpec};
use super::sweep::{outcome_tag, sweep, SweepGrid, SweepTable};

/// Environment variable that sets the output directory when no flag does.
pub const OUT_DIR_ENV: &str = "SIPFEAR_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "sipfear-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format `{other}` (expected csv or json)"))),
        }
    }
}

impl Format {
    fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// Tolerance overrides given on the command line as `key=value` pairs.
/// `golden_scale` multiplies every golden tolerance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TolOverrides {
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub eps_ext: Option<f64>,
    pub ds_max: Option<f64>,
    pub locate_tol: Option<f64>,
    pub golden_scale: Option<f64>,
}

impl FromStr for TolOverrides {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut t = TolOverrides::default();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("tolerance override `{item}` is not key=value")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("tolerance override `{item}` has a bad number")))?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("tolerance override `{item}` must be positive")));
            }
            let slot = match key.trim() {
                "rtol" => &mut t.rtol,
                "atol" => &mut t.atol,
                "eps_ext" => &mut t.eps_ext,
                "ds_max" => &mut t.ds_max,
                "locate_tol" => &mut t.locate_tol,
                "golden_scale" => &mut t.golden_scale,
                other => return Err(Error::Config(format!("unknown tolerance `{other}`"))),
            };
            *slot = Some(v);
        }
        Ok(t)
    }
}

impl TolOverrides {
    pub fn integrate(&self, o: &IntegrateOptions) -> IntegrateOptions {
        IntegrateOptions {
            rtol: self.rtol.unwrap_or(o.rtol),
            atol: self.atol.unwrap_or(o.atol),
            eps_ext: self.eps_ext.unwrap_or(o.eps_ext),
            ..o.clone()
        }
    }

    pub fn continuation(&self, o: &ContinuationOptions) -> Result<ContinuationOptions> {
        let mut c = o.clone();
        if let Some(v) = self.ds_max {
            c.ds_max = v;
            c.ds_init = c.ds_init.min(v);
            c.ds_min = c.ds_min.min(c.ds_init);
        }
        if let Some(v) = self.locate_tol {
            c.locate_tol = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn golden(&self, tol: f64) -> f64 {
        tol * self.golden_scale.unwrap_or(1.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    /// Files go to `out_dir/<scenario name>/`. `None` runs without writing.
    pub out_dir: Option<PathBuf>,
    pub format: Format,
    pub tol: TolOverrides,
}

/// Flag value, else [`OUT_DIR_ENV`], else [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Process exit code for an error: 2 configuration, 3 golden mismatch,
/// 4 numerical failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownParameter(_) | Error::InvalidParameter { .. } | Error::Io(_) => 2,
        Error::GoldenMismatch(_) => 3,
        _ => 4,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumRow {
    pub equilibrium: Equilibrium,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stability: Option<StabilityReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub params: ParamSet,
    pub trajectory: Trajectory,
    pub endpoint: Event,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ActionOutput {
    Simulate(SimulationOutput),
    Equilibria { params: ParamSet, equilibria: Vec<EquilibriumRow> },
    Continue1(Branch),
    Continue2(Branch),
    Sweep(SweepTable),
}

impl ActionOutput {
    pub fn to_csv(&self) -> String {
        match self {
            ActionOutput::Simulate(s) => s.trajectory.to_csv(),
            ActionOutput::Equilibria { equilibria, .. } => equilibria_csv(equilibria),
            ActionOutput::Continue1(b) | ActionOutput::Continue2(b) => b.to_csv(),
            ActionOutput::Sweep(t) => t.to_csv(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outputs serialize") + "\n"
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.to_csv(),
            Format::Json => self.to_json(),
        }
    }
}

pub fn equilibria_csv(rows: &[EquilibriumRow]) -> String {
    let mut out = String::from("kind,S,I,P,residual,verdict,psi1,psi2,psi3\n");
    for r in rows {
        let e = &r.equilibrium;
        let _ = write!(out, "{},{},{},{},{:e}", e.kind, e.location.s, e.location.i, e.location.p, e.residual);
        match &r.stability {
            Some(s) => {
                let _ = writeln!(out, ",{},{},{},{}", s.verdict, s.psi1, s.psi2, s.psi3);
            }
            None => out.push_str(",,,,\n"),
        }
    }
    out
}

pub fn equilibria_with_stability(p: &ParamSet) -> Vec<EquilibriumRow> {
    all_equilibria(p)
        .into_iter()
        .map(|equilibrium| EquilibriumRow { stability: classify(p, &equilibrium).ok(), equilibrium })
        .collect()
}

fn pick_seed(p: &ParamSet, seed: &SeedSpec) -> Result<Equilibrium> {
    all_equilibria(p)
        .into_iter()
        .filter(|e| e.kind == seed.kind)
        .nth(seed.index)
        .ok_or_else(|| Error::Config(format!("no {} equilibrium #{} at the seed parameters", seed.kind, seed.index)))
}

/// Runs one action at parameters `p`.
pub fn run_action(action: &Action, p: &ParamSet, tol: &TolOverrides) -> Result<ActionOutput> {
    Ok(match action {
        Action::Simulate(a) => {
            let opts = tol.integrate(&a.options);
            let trajectory = integrate(p, state_from(a.x0)?, a.t_max, &opts)?;
            let endpoint = classify_endpoint(p, &trajectory)?;
            let outcome = outcome_tag(&endpoint);
            ActionOutput::Simulate(SimulationOutput { params: *p, trajectory, endpoint, outcome })
        }
        Action::Equilibria(_) => ActionOutput::Equilibria { params: *p, equilibria: equilibria_with_stability(p) },
        Action::Continue1(a) => {
            let seed = pick_seed(p, &a.seed)?;
            ActionOutput::Continue1(continue_branch(p, a.free, a.range, &seed, &tol.continuation(&a.options)?)?)
        }
        Action::Continue2(a) => {
            let opts = tol.continuation(&a.options)?;
            let seed = pick_seed(p, &a.seed)?;
            let branch = continue_branch(p, a.seed_free, a.seed_range, &seed, &opts)?;
            let sn = branch
                .bifurcations(BifurcationKind::SaddleNode)
                .next()
                .ok_or_else(|| Error::Config("seed branch has no saddle-node point".into()))?;
            ActionOutput::Continue2(continue_fold_curve(p, a.free, a.ranges, sn, &opts)?)
        }
        Action::Sweep(a) => {
            let grid = SweepGrid::new(a.axes.clone())?;
            ActionOutput::Sweep(sweep(p, &grid, state_from(a.x0)?, a.t_max, &tol.integrate(&a.options)))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldenResult {
    pub index: usize,
    pub action: usize,
    pub check: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    /// Written files, relative to the scenario directory.
    pub files: Vec<String>,
    pub goldens: Vec<GoldenResult>,
    #[serde(skip)]
    pub outputs: Vec<ActionOutput>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.goldens.iter().all(|g| g.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GoldenResult> {
        self.goldens.iter().filter(|g| !g.passed)
    }

    /// `Err(GoldenMismatch)` naming the failed checks, if any.
    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            return Ok(self);
        }
        let failed: Vec<String> = self.failures().map(|g| format!("#{} {}: {}", g.index, g.check, g.detail)).collect();
        Err(Error::GoldenMismatch(format!("{}: {}", self.name, failed.join("; "))))
    }
}

/// Runs every action, writes one file per action plus `report.json`, and
/// compares goldens. Golden failures are reported, not raised; see
/// [`ScenarioReport::into_result`].
pub fn run_scenario(spec: &ScenarioSpec, cfg: &RunConfig) -> Result<ScenarioReport> {
    spec.validate()?;
    let mut outputs = Vec::with_capacity(spec.actions.len());
    let mut params = Vec::with_capacity(spec.actions.len());
    for action in &spec.actions {
        let p = action.params(&spec.params)?;
        log::info!("{}: {}", spec.name, action.name());
        outputs.push(run_action(action, &p, &cfg.tol)?);
        params.push(p);
    }
    let goldens = spec
        .golden
        .iter()
        .enumerate()
        .map(|(index, g)| {
            let (passed, detail) = check_golden(g, &outputs[g.action()], &params[g.action()], &cfg.tol);
            GoldenResult { index, action: g.action(), check: describe(g), passed, detail }
        })
        .collect();
    let mut report = ScenarioReport { name: spec.name.clone(), files: Vec::new(), goldens, outputs: Vec::new() };
    if let Some(dir) = &cfg.out_dir {
        report.files = write_outputs(&dir.join(&spec.name), spec, &outputs, &report, cfg.format)?;
    }
    report.outputs = outputs;
    Ok(report)
}

fn write_outputs(
    dir: &Path,
    spec: &ScenarioSpec,
    outputs: &[ActionOutput],
    report: &ScenarioReport,
    format: Format,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for (i, (action, out)) in spec.actions.iter().zip(outputs).enumerate() {
        let name = format!("{i}-{}.{}", action.name(), format.extension());
        fs::write(dir.join(&name), out.render(format))?;
        files.push(name);
    }
    files.push("report.json".into());
    let mut report = report.clone();
    report.files = files.clone();
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    Ok(files)
}

fn describe(g: &Golden) -> String {
    let keys = |m: &BTreeMap<String, f64>| m.keys().cloned().collect::<Vec<_>>().join("/");
    match g {
        Golden::Bifurcation { kind, values, .. } => format!("bifurcation {kind} {}", keys(values)),
        Golden::Event { kind, .. } => format!("event {kind}"),
        Golden::Endpoint { outcome, .. } => format!("endpoint {outcome}"),
        Golden::Equilibrium { kind, .. } => format!("equilibrium {kind}"),
        Golden::Cell { at, outcome, .. } => {
            let coords: Vec<String> = at.iter().map(|(k, v)| format!("{k}={v}")).collect();
            format!("cell {} {outcome}", coords.join(","))
        }
        Golden::Threshold { .. } => "threshold d1".into(),
    }
}

fn state_quantity(x: &State, name: &str) -> Option<f64> {
    match name {
        "S" => Some(x.s),
        "I" => Some(x.i),
        "P" => Some(x.p),
        _ => None,
    }
}

fn bifurcation_quantity(b: &BifurcationPoint, name: &str) -> Option<f64> {
    match name {
        "omega" => b.omega,
        "l1" => b.l1,
        "zero" => b.eigenvalues.iter().map(|z| z.norm()).reduce(f64::min),
        _ => state_quantity(&b.location, name).or_else(|| name.parse::<ParamName>().ok().map(|n| b.params.get(n))),
    }
}

/// Checks `values` within `tol` and the one-sided bounds; returns the first
/// violation.
fn compare(
    get: impl Fn(&str) -> Option<f64>,
    values: &BTreeMap<String, f64>,
    tol: f64,
    upper: &BTreeMap<String, f64>,
    lower: &BTreeMap<String, f64>,
) -> std::result::Result<(), String> {
    let value = |k: &str| get(k).ok_or_else(|| format!("no quantity `{k}`"));
    for (k, want) in values {
        let got = value(k)?;
        if !((got - want).abs() <= tol) {
            return Err(format!("{k} = {got} (want {want} ± {tol})"));
        }
    }
    for (k, bound) in upper {
        let got = value(k)?;
        if !(got < *bound) {
            return Err(format!("{k} = {got} (want < {bound})"));
        }
    }
    for (k, bound) in lower {
        let got = value(k)?;
        if !(got > *bound) {
            return Err(format!("{k} = {got} (want > {bound})"));
        }
    }
    Ok(())
}

fn check_golden(g: &Golden, out: &ActionOutput, p: &ParamSet, t: &TolOverrides) -> (bool, String) {
    let empty = BTreeMap::new();
    let first_match = |results: Vec<std::result::Result<(), String>>, what: &str| {
        if results.is_empty() {
            return (false, format!("no {what} found"));
        }
        match results.iter().position(|r| r.is_ok()) {
            Some(i) => (true, format!("matched {what} #{i}")),
            None => {
                let misses: Vec<String> = results.into_iter().filter_map(|r| r.err()).collect();
                (false, misses.join("; "))
            }
        }
    };
    match (g, out) {
        (
            Golden::Bifurcation { kind, values, tol, upper, lower, .. },
            ActionOutput::Continue1(b) | ActionOutput::Continue2(b),
        ) => {
            let results = b
                .bifurcations(*kind)
                .map(|bp| compare(|k| bifurcation_quantity(bp, k), values, t.golden(*tol), upper, lower))
                .collect();
            first_match(results, &kind.to_string())
        }
        (Golden::Event { kind, values, tol, .. }, ActionOutput::Simulate(s)) => {
            let results = s
                .trajectory
                .events
                .iter()
                .filter(|e| e.kind == *kind)
                .map(|e| {
                    let get = |k: &str| if k == "t" { Some(e.time) } else { state_quantity(&e.state, k) };
                    compare(get, values, t.golden(*tol), &empty, &empty)
                })
                .collect();
            first_match(results, &format!("{kind} event"))
        }
        (Golden::Endpoint { outcome, values, tol, .. }, ActionOutput::Simulate(s)) => {
            if &s.outcome != outcome {
                return (false, format!("outcome {} (want {outcome})", s.outcome));
            }
            let r = compare(|k| state_quantity(&s.endpoint.state, k), values, t.golden(*tol), &empty, &empty);
            (r.is_ok(), r.err().unwrap_or_else(|| format!("{} at t = {}", s.outcome, s.endpoint.time)))
        }
        (Golden::Equilibrium { kind, values, tol, .. }, ActionOutput::Equilibria { equilibria, .. }) => {
            let results = equilibria
                .iter()
                .filter(|r| r.equilibrium.kind == *kind)
                .map(|r| compare(|k| state_quantity(&r.equilibrium.location, k), values, t.golden(*tol), &empty, &empty))
                .collect();
            first_match(results, &kind.to_string())
        }
        (Golden::Cell { at, outcome, .. }, ActionOutput::Sweep(table)) => {
            let coords: Option<Vec<f64>> = table.params.iter().map(|n| at.get(n).copied()).collect();
            match coords.as_deref().and_then(|c| table.cell_at(c)) {
                None => (false, "no such cell".into()),
                Some(c) if &c.outcome == outcome => (true, c.outcome.clone()),
                Some(c) => (false, format!("outcome {} (want {outcome})", c.outcome)),
            }
        }
        (Golden::Threshold { value, tol, .. }, _) => {
            let got = check_selective_predation_threshold(p).threshold;
            let ok = (got - value).abs() <= t.golden(*tol);
            (ok, format!("threshold {got} (want {value} ± {})", t.golden(*tol)))
        }
        _ => (false, "golden check does not apply to this action".into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scenario::catalog_scenario;

    #[test]
    fn tolerance_overrides_parse() {
        let t: TolOverrides = "rtol=1e-10, golden_scale=2".parse().unwrap();
        assert_eq!(t.rtol, Some(1e-10));
        assert_eq!(t.golden(0.5), 1.0);
        assert_eq!(t.integrate(&IntegrateOptions::default()).atol, 1e-12);
        assert!("rtol".parse::<TolOverrides>().is_err());
        assert!("speed=3".parse::<TolOverrides>().is_err());
        assert!("rtol=-1".parse::<TolOverrides>().is_err());
        let c: TolOverrides = "ds_max=0.001".parse().unwrap();
        let o = c.continuation(&ContinuationOptions::default()).unwrap();
        assert!(o.ds_min <= o.ds_init && o.ds_init <= o.ds_max);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::GoldenMismatch("x".into())), 3);
        assert_eq!(exit_code(&Error::NotSaddleNode), 4);
        assert_eq!(exit_code(&Error::StepSizeUnderflow { t: 0.0, h: 0.0 }), 4);
    }

    #[test]
    fn sn_scenario_writes_branch_with_fold_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let report = run_scenario(&catalog_scenario("fig1b-sn-k2").unwrap(), &cfg).unwrap();
        assert!(report.passed(), "{:?}", report.goldens);
        let csv = fs::read_to_string(dir.path().join("fig1b-sn-k2").join("0-continue1.csv")).unwrap();
        let row = csv.lines().find(|l| l.starts_with("# bif,SN,")).unwrap();
        let k2: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert!((k2 - 0.4417).abs() <= 0.005);
        assert!(dir.path().join("fig1b-sn-k2").join("report.json").exists());
    }

    #[test]
    fn fte_scenario_records_event_row() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig { out_dir: Some(dir.path().to_path_buf()), ..Default::default() };
        let report = run_scenario(&catalog_scenario("fig5-fte").unwrap(), &cfg).unwrap();
        assert!(report.passed(), "{:?}", report.goldens);
        let found = report.files.iter().any(|f| {
            let csv = fs::read_to_string(dir.path().join("fig5-fte").join(f)).unwrap();
            csv.lines().any(|l| {
                l.strip_prefix("# event,FTE,")
                    .and_then(|rest| rest.split(',').next())
                    .and_then(|t| t.parse::<f64>().ok())
                    .is_some_and(|t| (t - 14.3).abs() <= 0.5)
            })
        });
        assert!(found);
    }

    #[test]
    fn golden_mismatch_is_reported() {
        let mut spec = catalog_scenario("fig1b-sn-k2").unwrap();
        if let Golden::Bifurcation { values, .. } = &mut spec.golden[0] {
            values.insert("k2".into(), 0.6);
        }
        let report = run_scenario(&spec, &RunConfig::default()).unwrap();
        assert!(!report.passed());
        let err = report.into_result().unwrap_err();
        assert_eq!(exit_code(&err), 3);
    }

    #[test]
    fn json_outputs_are_deterministic() {
        let spec = catalog_scenario("fig6-selective-predation").unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let cfg = RunConfig { out_dir: Some(d.path().to_path_buf()), format: Format::Json, ..Default::default() };
            run_scenario(&spec, &cfg).unwrap();
        }
        for f in ["0-simulate.json", "1-simulate.json", "report.json"] {
            let x = fs::read(a.path().join(&spec.name).join(f)).unwrap();
            let y = fs::read(b.path().join(&spec.name).join(f)).unwrap();
            assert_eq!(x, y, "{f} differs");
        }
        let text = fs::read_to_string(a.path().join(&spec.name).join("0-simulate.json")).unwrap();
        let back: ActionOutput = serde_json::from_str(&text).unwrap();
        assert!(matches!(back, ActionOutput::Simulate(_)));
    }
}
