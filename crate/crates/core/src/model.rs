//! Parameters, state and the vector field of the susceptible–infectious–predator
//! model with dual fear and Rosenzweig prey aggregation:
//!
//! ```text
//! dS/dt = b0 S f(k1,P) (1 - (S+I)/K) - a0 S - d0 S^r P - e0 S I f(k2,P)
//! dI/dt = -a1 I + e0 S I f(k2,P) - d1 I P
//! dP/dt = -a2 P + d2 S^r P + d3 I P
//! ```
//!
//! with the fear factor `f(k, P) = 1 / (1 + k P)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fear factor `1 / (1 + k P)`; equals 1 without fear or without predators.
pub fn fear(k: f64, p: f64) -> f64 {
    1.0 / (1.0 + k * p)
}

/// `s^r` with the convention `0^r = 0`; negative roundoff is treated as zero.
#[inline]
pub fn spow(s: f64, r: f64) -> f64 {
    if s > 0.0 {
        (r * s.ln()).exp()
    } else {
        0.0
    }
}

/// Names of the thirteen model parameters, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamName {
    #[serde(rename = "b0")]
    B0,
    #[serde(rename = "r")]
    R,
    #[serde(rename = "e0")]
    E0,
    #[serde(rename = "K")]
    K,
    #[serde(rename = "a0")]
    A0,
    #[serde(rename = "a1")]
    A1,
    #[serde(rename = "a2")]
    A2,
    #[serde(rename = "d0")]
    D0,
    #[serde(rename = "d1")]
    D1,
    #[serde(rename = "d2")]
    D2,
    #[serde(rename = "d3")]
    D3,
    #[serde(rename = "k1")]
    K1,
    #[serde(rename = "k2")]
    K2,
}

impl ParamName {
    pub const ALL: [ParamName; 13] = [
        ParamName::B0,
        ParamName::R,
        ParamName::E0,
        ParamName::K,
        ParamName::A0,
        ParamName::A1,
        ParamName::A2,
        ParamName::D0,
        ParamName::D1,
        ParamName::D2,
        ParamName::D3,
        ParamName::K1,
        ParamName::K2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamName::B0 => "b0",
            ParamName::R => "r",
            ParamName::E0 => "e0",
            ParamName::K => "K",
            ParamName::A0 => "a0",
            ParamName::A1 => "a1",
            ParamName::A2 => "a2",
            ParamName::D0 => "d0",
            ParamName::D1 => "d1",
            ParamName::D2 => "d2",
            ParamName::D3 => "d3",
            ParamName::K1 => "k1",
            ParamName::K2 => "k2",
        }
    }

    /// Fear levels may be zero; every other parameter must stay strictly positive.
    pub fn allows_zero(self) -> bool {
        matches!(self, ParamName::K1 | ParamName::K2)
    }
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::UnknownParameter(s.to_string()))
    }
}

/// A validated parameter set. Construct with [`ParamSet::new`] or by
/// deserializing a table that names all thirteen parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ParamSet {
    pub b0: f64,
    pub r: f64,
    pub e0: f64,
    /// Carrying capacity `K`.
    pub capacity: f64,
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub d0: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub k1: f64,
    pub k2: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    b0: f64,
    r: f64,
    e0: f64,
    #[serde(rename = "K")]
    capacity: f64,
    a0: f64,
    a1: f64,
    a2: f64,
    d0: f64,
    d1: f64,
    d2: f64,
    d3: f64,
    k1: f64,
    k2: f64,
}

impl TryFrom<RawParams> for ParamSet {
    type Error = Error;

    fn try_from(raw: RawParams) -> Result<Self> {
        let p = ParamSet {
            b0: raw.b0,
            r: raw.r,
            e0: raw.e0,
            capacity: raw.capacity,
            a0: raw.a0,
            a1: raw.a1,
            a2: raw.a2,
            d0: raw.d0,
            d1: raw.d1,
            d2: raw.d2,
            d3: raw.d3,
            k1: raw.k1,
            k2: raw.k2,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<ParamSet> for RawParams {
    fn from(p: ParamSet) -> Self {
        RawParams {
            b0: p.b0,
            r: p.r,
            e0: p.e0,
            capacity: p.capacity,
            a0: p.a0,
            a1: p.a1,
            a2: p.a2,
            d0: p.d0,
            d1: p.d1,
            d2: p.d2,
            d3: p.d3,
            k1: p.k1,
            k2: p.k2,
        }
    }
}

impl ParamSet {
    /// Builds a parameter set from `(name, value)` pairs; every parameter must
    /// appear exactly once.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Self> {
        let mut values: [Option<f64>; 13] = [None; 13];
        for (name, value) in pairs {
            let n: ParamName = name.parse()?;
            let slot = &mut values[n as usize];
            if slot.is_some() {
                return Err(Error::Config(format!("parameter {name} given twice")));
            }
            *slot = Some(value);
        }
        let get = |n: ParamName| {
            values[n as usize].ok_or_else(|| Error::Config(format!("missing parameter {n}")))
        };
        let p = ParamSet {
            b0: get(ParamName::B0)?,
            r: get(ParamName::R)?,
            e0: get(ParamName::E0)?,
            capacity: get(ParamName::K)?,
            a0: get(ParamName::A0)?,
            a1: get(ParamName::A1)?,
            a2: get(ParamName::A2)?,
            d0: get(ParamName::D0)?,
            d1: get(ParamName::D1)?,
            d2: get(ParamName::D2)?,
            d3: get(ParamName::D3)?,
            k1: get(ParamName::K1)?,
            k2: get(ParamName::K2)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for name in ParamName::ALL {
            let value = self.get(name);
            if !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    value,
                    reason: "must be finite",
                });
            }
            if name.allows_zero() {
                if value < 0.0 {
                    return Err(Error::InvalidParameter {
                        name: name.as_str(),
                        value,
                        reason: "fear level must be nonnegative",
                    });
                }
            } else if value <= 0.0 {
                return Err(Error::InvalidParameter {
                    name: name.as_str(),
                    value,
                    reason: "must be strictly positive",
                });
            }
        }
        if self.r >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "r",
                value: self.r,
                reason: "aggregation exponent must lie in (0, 1)",
            });
        }
        Ok(())
    }

    pub fn get(&self, name: ParamName) -> f64 {
        match name {
            ParamName::B0 => self.b0,
            ParamName::R => self.r,
            ParamName::E0 => self.e0,
            ParamName::K => self.capacity,
            ParamName::A0 => self.a0,
            ParamName::A1 => self.a1,
            ParamName::A2 => self.a2,
            ParamName::D0 => self.d0,
            ParamName::D1 => self.d1,
            ParamName::D2 => self.d2,
            ParamName::D3 => self.d3,
            ParamName::K1 => self.k1,
            ParamName::K2 => self.k2,
        }
    }

    fn slot(&mut self, name: ParamName) -> &mut f64 {
        match name {
            ParamName::B0 => &mut self.b0,
            ParamName::R => &mut self.r,
            ParamName::E0 => &mut self.e0,
            ParamName::K => &mut self.capacity,
            ParamName::A0 => &mut self.a0,
            ParamName::A1 => &mut self.a1,
            ParamName::A2 => &mut self.a2,
            ParamName::D0 => &mut self.d0,
            ParamName::D1 => &mut self.d1,
            ParamName::D2 => &mut self.d2,
            ParamName::D3 => &mut self.d3,
            ParamName::K1 => &mut self.k1,
            ParamName::K2 => &mut self.k2,
        }
    }

    /// Returns a copy with one parameter replaced, re-validated.
    pub fn with(&self, name: ParamName, value: f64) -> Result<Self> {
        let mut p = *self;
        *p.slot(name) = value;
        p.validate()?;
        Ok(p)
    }

    /// Unvalidated update for inner loops (continuation correctors) that keep
    /// the parameter inside its admissible range themselves.
    pub(crate) fn with_unchecked(&self, name: ParamName, value: f64) -> Self {
        let mut p = *self;
        *p.slot(name) = value;
        p
    }

    /// Boundedness precondition: `d2 < d0` and `d3 < d1`.
    pub fn boundedness_holds(&self) -> bool {
        self.d2 < self.d0 && self.d3 < self.d1
    }

    /// Total-population bound `W / xi` with `xi = min(a1, a2)` and
    /// `W = (b0 K / 4)(1 - (a0 - xi)/b0)^2`. `None` when the preconditions fail.
    pub fn population_bound(&self) -> Option<f64> {
        if !self.boundedness_holds() {
            return None;
        }
        let xi = self.a1.min(self.a2);
        if xi <= self.a0 - self.b0 {
            return None;
        }
        let w = self.b0 * self.capacity / 4.0 * (1.0 - (self.a0 - xi) / self.b0).powi(2);
        Some(w / xi)
    }
}

/// Population densities `(S, I, P)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "I")]
    pub i: f64,
    #[serde(rename = "P")]
    pub p: f64,
}

impl State {
    pub const ORIGIN: State = State { s: 0.0, i: 0.0, p: 0.0 };

    pub const fn new(s: f64, i: f64, p: f64) -> Self {
        State { s, i, p }
    }

    /// Checked constructor enforcing the nonnegative octant.
    pub fn nonnegative(s: f64, i: f64, p: f64) -> Result<Self> {
        let x = State { s, i, p };
        if s < 0.0 || i < 0.0 || p < 0.0 || !(s.is_finite() && i.is_finite() && p.is_finite()) {
            return Err(Error::NegativeState(x));
        }
        Ok(x)
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.s, self.i, self.p)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        State { s: v[0], i: v[1], p: v[2] }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.s, self.i, self.p]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State { s: a[0], i: a[1], p: a[2] }
    }

    pub fn max_abs_diff(&self, other: &State) -> f64 {
        (self.s - other.s)
            .abs()
            .max((self.i - other.i).abs())
            .max((self.p - other.p).abs())
    }

    pub fn total(&self) -> f64 {
        self.s + self.i + self.p
    }
}

/// Right-hand side `(dS/dt, dI/dt, dP/dt)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VectorFieldValue {
    #[serde(rename = "dS")]
    pub ds: f64,
    #[serde(rename = "dI")]
    pub di: f64,
    #[serde(rename = "dP")]
    pub dp: f64,
}

impl VectorFieldValue {
    pub fn max_abs(&self) -> f64 {
        self.ds.abs().max(self.di.abs()).max(self.dp.abs())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.ds, self.di, self.dp]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.ds, self.di, self.dp)
    }
}

pub fn vector_field(p: &ParamSet, x: &State) -> VectorFieldValue {
    let State { s, i, p: pred } = *x;
    let sr = spow(s, p.r);
    let f1 = fear(p.k1, pred);
    let f2 = fear(p.k2, pred);
    let infection = p.e0 * s * i * f2;
    let ds = p.b0 * s * f1 * (1.0 - (s + i) / p.capacity) - p.a0 * s - p.d0 * sr * pred - infection;
    let di = -p.a1 * i + infection - p.d1 * i * pred;
    let dp = -p.a2 * pred + p.d2 * sr * pred + p.d3 * i * pred;
    VectorFieldValue { ds, di, dp }
}

/// Analytic Jacobian of the vector field. Undefined at `S = 0`, where the
/// aggregation term has an infinite derivative.
pub fn jacobian(p: &ParamSet, x: &State) -> Result<Matrix3<f64>> {
    if x.s <= 0.0 {
        return Err(Error::SingularState(*x));
    }
    Ok(jacobian_interior(p, x))
}

/// Jacobian assuming `S > 0`; callers must check.
pub(crate) fn jacobian_interior(p: &ParamSet, x: &State) -> Matrix3<f64> {
    let State { s, i, p: pred } = *x;
    let sr = spow(s, p.r);
    let sr1 = sr / s;
    let f1 = fear(p.k1, pred);
    let f2 = fear(p.k2, pred);
    let k = p.capacity;

    let j11 = p.b0 * (k - 2.0 * s - i) / k * f1 - p.a0 - p.r * p.d0 * sr1 * pred - p.e0 * i * f2;
    let j12 = -p.b0 * s / k * f1 - p.e0 * s * f2;
    let j13 = p.k1 * p.b0 * s * (-k + s + i) / k * f1 * f1 - p.d0 * sr + p.k2 * p.e0 * s * i * f2 * f2;
    let j21 = p.e0 * i * f2;
    let j22 = p.e0 * s * f2 - p.a1 - p.d1 * pred;
    let j23 = -p.k2 * p.e0 * s * i * f2 * f2 - p.d1 * i;
    let j31 = p.r * p.d2 * sr1 * pred;
    let j32 = p.d3 * pred;
    let j33 = -p.a2 + p.d2 * sr + p.d3 * i;

    Matrix3::new(j11, j12, j13, j21, j22, j23, j31, j32, j33)
}

/// Partial derivative of the vector field with respect to one parameter.
pub fn param_derivative(p: &ParamSet, x: &State, name: ParamName) -> Vector3<f64> {
    let State { s, i, p: pred } = *x;
    let sr = spow(s, p.r);
    let f1 = fear(p.k1, pred);
    let f2 = fear(p.k2, pred);
    let k = p.capacity;
    let crowd = 1.0 - (s + i) / k;
    match name {
        ParamName::B0 => Vector3::new(s * f1 * crowd, 0.0, 0.0),
        ParamName::K => Vector3::new(p.b0 * s * f1 * (s + i) / (k * k), 0.0, 0.0),
        ParamName::A0 => Vector3::new(-s, 0.0, 0.0),
        ParamName::D0 => Vector3::new(-sr * pred, 0.0, 0.0),
        ParamName::E0 => {
            let t = s * i * f2;
            Vector3::new(-t, t, 0.0)
        }
        ParamName::K1 => Vector3::new(-p.b0 * s * pred * f1 * f1 * crowd, 0.0, 0.0),
        ParamName::K2 => {
            let t = p.e0 * s * i * pred * f2 * f2;
            Vector3::new(t, -t, 0.0)
        }
        ParamName::R => {
            let t = if s > 0.0 { sr * s.ln() * pred } else { 0.0 };
            Vector3::new(-p.d0 * t, 0.0, p.d2 * t)
        }
        ParamName::A1 => Vector3::new(0.0, -i, 0.0),
        ParamName::D1 => Vector3::new(0.0, -i * pred, 0.0),
        ParamName::A2 => Vector3::new(0.0, 0.0, -pred),
        ParamName::D2 => Vector3::new(0.0, 0.0, sr * pred),
        ParamName::D3 => Vector3::new(0.0, 0.0, i * pred),
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::ParamSet;

    /// Saddle-node reference set (k1 = 0.1, k2 = 1).
    pub fn sn_set() -> ParamSet {
        ParamSet {
            b0: 8.0,
            r: 0.5,
            e0: 4.0,
            capacity: 4.0,
            a0: 0.5,
            a1: 0.4,
            a2: 0.8,
            d0: 0.7,
            d1: 0.7,
            d2: 0.4,
            d3: 0.5,
            k1: 0.1,
            k2: 1.0,
        }
    }

    /// Hopf/transcritical reference set (k1 = 0.99, k2 = 0.85).
    pub fn hopf_set() -> ParamSet {
        ParamSet {
            b0: 2.0,
            r: 0.7,
            e0: 0.5,
            capacity: 8.0,
            a0: 0.3,
            a1: 0.4,
            a2: 0.8,
            d0: 0.6,
            d1: 0.7,
            d2: 0.3,
            d3: 0.5,
            k1: 0.99,
            k2: 0.85,
        }
    }

    /// Finite-time-extinction set (k1 = 0).
    pub fn fte_set() -> ParamSet {
        ParamSet {
            b0: 10.0,
            r: 0.5,
            e0: 6.0,
            capacity: 5.0,
            a0: 0.5,
            a1: 0.4,
            a2: 0.8,
            d0: 0.7,
            d1: 0.7,
            d2: 0.3,
            d3: 0.5,
            k1: 0.0,
            k2: 0.8,
        }
    }
}
