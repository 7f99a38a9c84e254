//! Parameter-free SimAM feature enhancement.
//!
//! Every time-frequency cell `z` of a single-channel feature map gets the
//! minimal energy
//!
//! ```text
//! e*(z) = 4 (var + lambda) / ((z - mean)^2 + 2 var + 2 lambda)
//! ```
//!
//! where `mean` and `var` are the population statistics of all `F * T`
//! cells, and the weight `w(z) = sigmoid(1 / e*(z))`. The enhanced feature is
//! the elementwise product `W * X`. Cells far from the mean have low energy
//! and therefore larger weights, always inside `(0.5, 1)`.
//!
//! `local` mode runs the same computation independently on tiles (32x32 by
//! default; edge tiles are smaller), and `customized` picks global or local
//! per machine type.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filterbank::LogMelSpectrogram;
use crate::matrix::Matrix;

pub const DEFAULT_LAMBDA: f64 = 1e-4;
pub const DEFAULT_TILE: (usize, usize) = (32, 32);

/// Enhancement applied to a stored feature (also its on-disk tag).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Enhancement {
    None,
    Global,
    Local,
    Customized,
}

impl Enhancement {
    pub fn code(self) -> u8 {
        match self {
            Enhancement::None => 0,
            Enhancement::Global => 1,
            Enhancement::Local => 2,
            Enhancement::Customized => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Enhancement::None),
            1 => Some(Enhancement::Global),
            2 => Some(Enhancement::Local),
            3 => Some(Enhancement::Customized),
            _ => None,
        }
    }
}

impl fmt::Display for Enhancement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Enhancement::None => "none",
            Enhancement::Global => "global",
            Enhancement::Local => "local",
            Enhancement::Customized => "customized",
        })
    }
}

impl FromStr for Enhancement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Enhancement::None),
            "global" => Ok(Enhancement::Global),
            "local" => Ok(Enhancement::Local),
            "customized" => Ok(Enhancement::Customized),
            other => Err(Error::InvalidParam(format!(
                "unknown enhancement {other:?} (expected none, global, local or customized)"
            ))),
        }
    }
}

/// Global or tiled statistics, the per-machine choice in customized mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    Global,
    Local,
}

impl FromStr for Scope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Scope::Global),
            "local" => Ok(Scope::Local),
            other => Err(Error::InvalidParam(format!(
                "unknown scope {other:?} (expected global or local)"
            ))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scope::Global => "global",
            Scope::Local => "local",
        })
    }
}

/// Machine type to scope, with a fallback for unmapped machines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeMap {
    pub default: Scope,
    pub machines: BTreeMap<String, Scope>,
}

impl Default for ModeMap {
    fn default() -> Self {
        ModeMap {
            default: Scope::Global,
            machines: BTreeMap::new(),
        }
    }
}

impl ModeMap {
    pub fn scope_for(&self, machine_type: &str) -> Scope {
        self.machines
            .get(machine_type)
            .copied()
            .unwrap_or(self.default)
    }

    /// Parses `machine=global|local` lines; `default=...` sets the fallback.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = ModeMap::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("mode map line {}: expected key=value", n + 1)))?;
            let scope: Scope = value
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("mode map line {}: {e}", n + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("mode map line {}: empty machine type", n + 1)));
            }
            if key == "default" {
                map.default = scope;
            } else {
                map.machines.insert(key.to_string(), scope);
            }
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form, used in cache keys.
    pub fn to_text(&self) -> String {
        let mut s = format!("default={}\n", self.default);
        for (k, v) in &self.machines {
            s.push_str(&format!("{k}={v}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimamParams {
    pub lambda: f64,
    pub mode: Enhancement,
    /// (frequency bins, frames)
    pub tile: (usize, usize),
    pub mode_map: ModeMap,
}

impl Default for SimamParams {
    fn default() -> Self {
        SimamParams {
            lambda: DEFAULT_LAMBDA,
            mode: Enhancement::Global,
            tile: DEFAULT_TILE,
            mode_map: ModeMap::default(),
        }
    }
}

impl SimamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParam(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.tile.0 == 0 || self.tile.1 == 0 {
            return Err(Error::InvalidParam(format!(
                "tile dimensions must be >= 1, got {}x{}",
                self.tile.0, self.tile.1
            )));
        }
        Ok(())
    }
}

/// SimAM weights, same shape as the input.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub values: Matrix,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn simam_weights(x: &Matrix, lambda: f64) -> Result<WeightMap> {
    if x.is_empty() {
        return Err(Error::EmptyInput("feature map has no cells"));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParam(format!("lambda must be positive, got {lambda}")));
    }
    if let Some(index) = x.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let m = x.as_slice().len() as f64;
    let mean = x.as_slice().iter().sum::<f64>() / m;
    let var = x.as_slice().iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m;
    let num = 4.0 * (var + lambda);
    let denom_base = 2.0 * var + 2.0 * lambda;
    Ok(WeightMap {
        values: x.map(|z| {
            let d = z - mean;
            sigmoid((d * d + denom_base) / num)
        }),
    })
}

fn multiply(x: &Matrix, w: &Matrix) -> Matrix {
    let data = x
        .as_slice()
        .iter()
        .zip(w.as_slice())
        .map(|(&a, &b)| a * b)
        .collect();
    Matrix::from_vec(x.rows(), x.cols(), data).expect("shapes match")
}

fn global_matrix(x: &Matrix, lambda: f64) -> Result<Matrix> {
    Ok(multiply(x, &simam_weights(x, lambda)?.values))
}

fn local_matrix(x: &Matrix, lambda: f64, tile: (usize, usize)) -> Result<Matrix> {
    let (th, tw) = tile;
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r0 in (0..x.rows()).step_by(th) {
        let h = th.min(x.rows() - r0);
        for c0 in (0..x.cols()).step_by(tw) {
            let w = tw.min(x.cols() - c0);
            let block = x.block(r0, c0, h, w);
            out.set_block(r0, c0, &global_matrix(&block, lambda)?);
        }
    }
    Ok(out)
}

pub fn enhance_global(x: &LogMelSpectrogram, p: &SimamParams) -> Result<LogMelSpectrogram> {
    p.validate()?;
    Ok(LogMelSpectrogram {
        values: global_matrix(&x.values, p.lambda)?,
        kind: x.kind,
        enhancement: Enhancement::Global,
    })
}

pub fn enhance_local(x: &LogMelSpectrogram, p: &SimamParams) -> Result<LogMelSpectrogram> {
    p.validate()?;
    if x.values.is_empty() {
        return Err(Error::EmptyInput("feature map has no cells"));
    }
    Ok(LogMelSpectrogram {
        values: local_matrix(&x.values, p.lambda, p.tile)?,
        kind: x.kind,
        enhancement: Enhancement::Local,
    })
}

pub fn enhance_customized(x: &LogMelSpectrogram, machine_type: &str, p: &SimamParams) -> Result<LogMelSpectrogram> {
    let mut out = match p.mode_map.scope_for(machine_type) {
        Scope::Global => enhance_global(x, p)?,
        Scope::Local => enhance_local(x, p)?,
    };
    out.enhancement = Enhancement::Customized;
    Ok(out)
}

/// Applies the mode configured in `p`; `None` returns the input unchanged.
pub fn enhance(x: &LogMelSpectrogram, machine_type: &str, p: &SimamParams) -> Result<LogMelSpectrogram> {
    match p.mode {
        Enhancement::None => Ok(x.clone()),
        Enhancement::Global => enhance_global(x, p),
        Enhancement::Local => enhance_local(x, p),
        Enhancement::Customized => enhance_customized(x, machine_type, p),
    }
}
