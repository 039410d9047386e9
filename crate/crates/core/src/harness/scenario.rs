//! Scenario files: a full parameter set, a list of actions and optional
//! golden values.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continuation::{BifurcationKind, ContinuationOptions};
use crate::dynamics::{EventKind, IntegrateOptions, DEFAULT_T_MAX};
use crate::equilibria::EquilibriumKind;
use crate::error::{Error, Result};
use crate::model::{ParamName, ParamSet, State};

use super::sweep::Axis;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub params: ParamSet,
    #[serde(default)]
    pub actions: Vec<Action>,
    #[serde(default)]
    pub golden: Vec<Golden>,
}

/// Parameter overrides applied on top of the scenario's base set.
pub type Overrides = BTreeMap<ParamName, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Action {
    Simulate(SimulateAction),
    Equilibria(EquilibriaAction),
    Continue1(Continue1Action),
    Continue2(Continue2Action),
    Sweep(SweepAction),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateAction {
    #[serde(default)]
    pub set: Overrides,
    pub x0: [f64; 3],
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub options: IntegrateOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriaAction {
    #[serde(default)]
    pub set: Overrides,
}

/// Picks the `index`-th equilibrium of a kind (in the order the solver
/// returns them) as a continuation seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub kind: EquilibriumKind,
    #[serde(default)]
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continue1Action {
    #[serde(default)]
    pub set: Overrides,
    pub free: ParamName,
    pub range: [f64; 2],
    pub seed: SeedSpec,
    #[serde(default)]
    pub options: ContinuationOptions,
}

/// The fold curve starts from the first saddle-node point found on a
/// one-parameter branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Continue2Action {
    #[serde(default)]
    pub set: Overrides,
    pub free: [ParamName; 2],
    pub ranges: [[f64; 2]; 2],
    pub seed_free: ParamName,
    pub seed_range: [f64; 2],
    pub seed: SeedSpec,
    #[serde(default)]
    pub options: ContinuationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAction {
    #[serde(default)]
    pub set: Overrides,
    pub axes: Vec<Axis>,
    pub x0: [f64; 3],
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default)]
    pub options: IntegrateOptions,
}

fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

/// Expected values. Named quantities are compared with `|got - want| <= tol`;
/// `upper` and `lower` give one-sided bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Golden {
    /// Some bifurcation point of `kind` satisfies every value and bound.
    /// Quantities: parameter names, `S`, `I`, `P`, `omega`, `l1` and
    /// `zero` (smallest eigenvalue modulus).
    Bifurcation {
        #[serde(default)]
        action: usize,
        kind: BifurcationKind,
        #[serde(default)]
        values: BTreeMap<String, f64>,
        #[serde(default)]
        tol: f64,
        #[serde(default)]
        upper: BTreeMap<String, f64>,
        #[serde(default)]
        lower: BTreeMap<String, f64>,
    },
    /// An event of `kind` recorded on the trajectory; quantities `t`, `S`, `I`, `P`.
    Event {
        #[serde(default)]
        action: usize,
        kind: EventKind,
        #[serde(default)]
        values: BTreeMap<String, f64>,
        #[serde(default)]
        tol: f64,
    },
    /// The classified endpoint has tag `outcome` and final state `values`.
    Endpoint {
        #[serde(default)]
        action: usize,
        outcome: String,
        #[serde(default)]
        values: BTreeMap<String, f64>,
        #[serde(default)]
        tol: f64,
    },
    /// Some equilibrium of `kind` sits at `values`.
    Equilibrium {
        #[serde(default)]
        action: usize,
        kind: EquilibriumKind,
        #[serde(default)]
        values: BTreeMap<String, f64>,
        #[serde(default)]
        tol: f64,
    },
    /// The sweep cell at coordinates `at` carries `outcome`.
    Cell {
        #[serde(default)]
        action: usize,
        at: BTreeMap<ParamName, f64>,
        outcome: String,
    },
    /// Infection-extinction threshold on `d1` for the action's parameters.
    Threshold {
        #[serde(default)]
        action: usize,
        value: f64,
        #[serde(default)]
        tol: f64,
    },
}

impl Golden {
    pub fn action(&self) -> usize {
        match self {
            Golden::Bifurcation { action, .. }
            | Golden::Event { action, .. }
            | Golden::Endpoint { action, .. }
            | Golden::Equilibrium { action, .. }
            | Golden::Cell { action, .. }
            | Golden::Threshold { action, .. } => *action,
        }
    }
}

impl Action {
    pub fn overrides(&self) -> &Overrides {
        match self {
            Action::Simulate(a) => &a.set,
            Action::Equilibria(a) => &a.set,
            Action::Continue1(a) => &a.set,
            Action::Continue2(a) => &a.set,
            Action::Sweep(a) => &a.set,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Action::Simulate(_) => "simulate",
            Action::Equilibria(_) => "equilibria",
            Action::Continue1(_) => "continue1",
            Action::Continue2(_) => "continue2",
            Action::Sweep(_) => "sweep",
        }
    }

    /// Base parameters with this action's overrides applied.
    pub fn params(&self, base: &ParamSet) -> Result<ParamSet> {
        self.overrides().iter().try_fold(*base, |p, (&name, &v)| p.with(name, v))
    }
}

pub(crate) fn state_from(x0: [f64; 3]) -> Result<State> {
    State::nonnegative(x0[0], x0[1], x0[2])
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ScenarioSpec = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without running the actions.
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("scenario name `{}` must be nonempty [A-Za-z0-9_-]", self.name)));
        }
        if self.actions.is_empty() {
            return Err(Error::Config(format!("scenario `{}` has no actions", self.name)));
        }
        for (i, action) in self.actions.iter().enumerate() {
            let p = action.params(&self.params).map_err(|e| Error::Config(format!("action {i}: {e}")))?;
            match action {
                Action::Simulate(a) => {
                    state_from(a.x0)?;
                    check_t_max(a.t_max)?;
                }
                Action::Equilibria(_) => {}
                Action::Continue1(a) => {
                    a.options.validate()?;
                    check_range(&p, a.free, a.range)?;
                }
                Action::Continue2(a) => {
                    a.options.validate()?;
                    if a.free[0] == a.free[1] {
                        return Err(Error::Config("continue2 needs two distinct parameters".into()));
                    }
                    check_range(&p, a.seed_free, a.seed_range)?;
                    for (name, range) in a.free.iter().zip(a.ranges) {
                        check_range(&p, *name, range)?;
                    }
                }
                Action::Sweep(a) => {
                    state_from(a.x0)?;
                    check_t_max(a.t_max)?;
                    super::sweep::SweepGrid::new(a.axes.clone())?;
                }
            }
        }
        for g in &self.golden {
            let i = g.action();
            let action = self
                .actions
                .get(i)
                .ok_or_else(|| Error::Config(format!("golden refers to missing action {i}")))?;
            let fits = matches!(
                (g, action),
                (Golden::Bifurcation { .. }, Action::Continue1(_) | Action::Continue2(_))
                    | (Golden::Event { .. } | Golden::Endpoint { .. }, Action::Simulate(_))
                    | (Golden::Equilibrium { .. }, Action::Equilibria(_))
                    | (Golden::Cell { .. }, Action::Sweep(_))
                    | (Golden::Threshold { .. }, _)
            );
            if !fits {
                return Err(Error::Config(format!("golden check does not apply to a {} action", action.name())));
            }
        }
        Ok(())
    }
}

fn check_t_max(t_max: f64) -> Result<()> {
    if t_max.is_finite() && t_max > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("t_max must be positive, got {t_max}")))
    }
}

fn check_range(p: &ParamSet, name: ParamName, range: [f64; 2]) -> Result<()> {
    if !(range[0] < range[1]) {
        return Err(Error::Config(format!("empty range for {name}: {range:?}")));
    }
    // Ends may be open (a positive parameter can run down to 0).
    p.with(name, 0.5 * (range[0] + range[1])).map_err(|e| Error::Config(e.to_string()))?;
    Ok(())
}

#[derive(Deserialize)]
struct ParamsOnly {
    params: ParamSet,
}

/// Reads the `[params]` table of a TOML document, ignoring everything else.
pub fn params_from_toml(text: &str) -> Result<ParamSet> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
    let only: ParamsOnly = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    Ok(only.params)
}

/// Parameters from a catalog scenario name or from a TOML file path.
pub fn load_params(source: &str) -> Result<ParamSet> {
    if let Some((_, text)) = CATALOG.iter().find(|(n, _)| *n == source) {
        return params_from_toml(text);
    }
    let text = std::fs::read_to_string(source).map_err(|e| Error::Config(format!("{source}: {e}")))?;
    params_from_toml(&text)
}

/// The built-in catalog: one scenario per one-parameter diagram plus the
/// two-parameter diagrams.
pub const CATALOG: [(&str, &str); 10] = [
    ("fig1a-sn-k1", include_str!("../../../../scenarios/fig1a-sn-k1.toml")),
    ("fig1b-sn-k2", include_str!("../../../../scenarios/fig1b-sn-k2.toml")),
    ("fig2a-hopf-tc-k1", include_str!("../../../../scenarios/fig2a-hopf-tc-k1.toml")),
    ("fig2b-hopf-tc-k2", include_str!("../../../../scenarios/fig2b-hopf-tc-k2.toml")),
    ("fig3-k1-regimes", include_str!("../../../../scenarios/fig3-k1-regimes.toml")),
    ("fig4-k2-regimes", include_str!("../../../../scenarios/fig4-k2-regimes.toml")),
    ("fig5-fte", include_str!("../../../../scenarios/fig5-fte.toml")),
    ("fig6-selective-predation", include_str!("../../../../scenarios/fig6-selective-predation.toml")),
    ("zh-k2-d0", include_str!("../../../../scenarios/zh-k2-d0.toml")),
    ("zh-sntc-k2-capacity", include_str!("../../../../scenarios/zh-sntc-k2-capacity.toml")),
];

pub fn catalog_names() -> impl Iterator<Item = &'static str> {
    CATALOG.iter().map(|(n, _)| *n)
}

pub fn catalog_scenario(name: &str) -> Result<ScenarioSpec> {
    let (_, text) = CATALOG
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("no scenario named `{name}`")))?;
    ScenarioSpec::from_toml(text)
}

pub fn catalog() -> Result<Vec<ScenarioSpec>> {
    catalog_names().map(catalog_scenario).collect()
}
