//! Grids of integrate-and-classify runs over one or two parameters.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{classify_endpoint, integrate, Event, EventKind, IntegrateOptions};
use crate::error::{Error, Result};
use crate::model::{ParamName, ParamSet, State};

/// One grid axis: either explicit `values` or `min`/`max`/`steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub param: ParamName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

impl Axis {
    pub fn values(param: ParamName, values: Vec<f64>) -> Self {
        Axis { param, values: Some(values), min: None, max: None, steps: None }
    }

    pub fn range(param: ParamName, min: f64, max: f64, steps: usize) -> Self {
        Axis { param, values: None, min: Some(min), max: Some(max), steps: Some(steps) }
    }

    fn points(&self) -> Result<Vec<f64>> {
        let pts = match (&self.values, self.min, self.max, self.steps) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(n)) => {
                if n < 2 || !(lo < hi) {
                    return Err(Error::Config(format!("axis {}: need min < max and steps >= 2", self.param)));
                }
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            }
            _ => {
                return Err(Error::Config(format!(
                    "axis {}: give either `values` or all of `min`, `max`, `steps`",
                    self.param
                )))
            }
        };
        if pts.is_empty() || pts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config(format!("axis {}: values must be finite and nonempty", self.param)));
        }
        Ok(pts)
    }
}

/// A validated rectangular grid over one or two distinct parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    names: Vec<ParamName>,
    points: Vec<Vec<f64>>,
}

impl SweepGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::Config(format!("a sweep needs one or two axes, got {}", axes.len())));
        }
        if axes.len() == 2 && axes[0].param == axes[1].param {
            return Err(Error::Config("sweep axes must name different parameters".into()));
        }
        let points = axes.iter().map(Axis::points).collect::<Result<_>>()?;
        Ok(SweepGrid { names: axes.iter().map(|a| a.param).collect(), points })
    }

    pub fn names(&self) -> &[ParamName] {
        &self.names
    }

    fn cells(&self) -> Vec<Vec<f64>> {
        match self.points.as_slice() {
            [a] => a.iter().map(|&x| vec![x]).collect(),
            [a, b] => a.iter().flat_map(|&x| b.iter().map(move |&y| vec![x, y])).collect(),
            _ => unreachable!("grid has one or two axes"),
        }
    }
}

/// Short label for a classified endpoint, used in sweep tables and goldens.
pub fn outcome_tag(e: &Event) -> String {
    match e.kind {
        EventKind::Converged => match &e.matched {
            Some(eq) => format!("converged-{}", eq.kind),
            None => "converged".into(),
        },
        EventKind::Nonconvergent => "oscillatory".into(),
        EventKind::Fte => "fte".into(),
        EventKind::IExtinct => "i-extinct".into(),
        EventKind::BoundViolation => "bound-violation".into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub coords: Vec<f64>,
    pub outcome: String,
    /// Final state; absent when the run failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<State>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub params: Vec<ParamName>,
    /// Row-major over the first axis.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell_at(&self, coords: &[f64]) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.coords.iter().zip(coords).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)))
    }

    /// One row per first-axis value. With two axes the header lists the
    /// second-axis values; with one the single column is `outcome`.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self.params.as_slice() {
            [a] => {
                let _ = writeln!(out, "{a},outcome");
                for c in &self.cells {
                    let _ = writeln!(out, "{},{}", c.coords[0], c.outcome);
                }
            }
            [a, b] => {
                let mut cols: Vec<f64> = Vec::new();
                for c in &self.cells {
                    if !cols.contains(&c.coords[1]) {
                        cols.push(c.coords[1]);
                    }
                }
                let header: Vec<String> = cols.iter().map(f64::to_string).collect();
                let _ = writeln!(out, "{a}\\{b},{}", header.join(","));
                for row in self.cells.chunks(cols.len()) {
                    let tags: Vec<&str> = row.iter().map(|c| c.outcome.as_str()).collect();
                    let _ = writeln!(out, "{},{}", row[0].coords[0], tags.join(","));
                }
            }
            _ => {}
        }
        out
    }
}

fn run_cell(p: &ParamSet, names: &[ParamName], coords: &[f64], x0: State, t_max: f64, opts: &IntegrateOptions) -> SweepCell {
    let result = names
        .iter()
        .zip(coords)
        .try_fold(*p, |q, (&n, &v)| q.with(n, v))
        .and_then(|q| integrate(&q, x0, t_max, opts).and_then(|traj| classify_endpoint(&q, &traj)));
    match result {
        Ok(e) => SweepCell { coords: coords.to_vec(), outcome: outcome_tag(&e), state: Some(e.state), error: None },
        Err(e) => SweepCell { coords: coords.to_vec(), outcome: "error".into(), state: None, error: Some(e.to_string()) },
    }
}

/// Integrates from `x0` in every cell and classifies the endpoint. Cells run
/// in parallel; the table order does not depend on scheduling. Per-cell
/// failures are recorded in the cell.
pub fn sweep(p: &ParamSet, grid: &SweepGrid, x0: State, t_max: f64, opts: &IntegrateOptions) -> SweepTable {
    let cells = grid
        .cells()
        .par_iter()
        .map(|coords| run_cell(p, &grid.names, coords, x0, t_max, opts))
        .collect();
    SweepTable { params: grid.names.clone(), cells }
}
