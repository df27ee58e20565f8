//! JSON problem files.
//!
//! ```json
//! {
//!   "system": { "chain": { "n": 2, "ns": 0.1 } },
//!   "disturbance": { "gaussian": { "diagonal": [0.01, 0.01] } },
//!   "input_box": { "lower": [-1], "upper": [1] },
//!   "safe": { "lower": [-1, -1], "upper": [1, 1] },
//!   "target": { "lower": [-0.5, -0.5], "upper": [0.5, 0.5] },
//!   "horizon": 10,
//!   "x0": [0.1, 0.9]
//! }
//! ```
//!
//! `null` box bounds are infinite. `x0` is a point, `{"grid": {...}}` or
//! `{"points": [...]}`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

use crate::dp::GridSpec;
use crate::error::{Error, Result};
use crate::lti::{
    chain_of_integrators, Disturbance, GaussianDisturbance, HyperRect, LtiSystem, ReachAvoidQuery, UniformDisturbance,
};
use crate::mvn::QuadConfig;
use crate::solvers::SolverConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub system: SystemSpec,
    pub disturbance: DisturbanceSpec,
    pub input_box: HyperRect,
    pub safe: HyperRect,
    pub target: HyperRect,
    pub horizon: usize,
    pub x0: X0Spec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub quadrature: QuadConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dp: Option<GridSpec>,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: u64,
    /// Seeds the quadrature shifts and Monte-Carlo streams.
    #[serde(default)]
    pub seed: u64,
}

fn default_mc_samples() -> u64 {
    100_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Chain { chain: ChainSpec },
    Matrices { a: Vec<Vec<f64>>, b: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub n: usize,
    pub ns: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceSpec {
    Gaussian {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mean: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        covariance: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        diagonal: Option<Vec<f64>>,
    },
    Uniform {
        center: Vec<f64>,
        half_width: Vec<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum X0Spec {
    Point(Vec<f64>),
    Grid { grid: GridSweep },
    Points { points: Vec<Vec<f64>> },
}

/// Tensor grid with `counts[i]` evenly spaced values from `lower[i]` to
/// `upper[i]` inclusive.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSweep {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub counts: Vec<usize>,
}

impl GridSweep {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.counts.len();
        if self.lower.len() != d || self.upper.len() != d || d == 0 {
            return Err(Error::Dimension("x0 grid lower/upper/counts lengths differ".into()));
        }
        if self.counts.contains(&0) {
            return Err(Error::InvalidArgument("x0 grid counts must be positive".into()));
        }
        let total: usize = self.counts.iter().product();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let mut rem = flat;
            let mut p = vec![0.0; d];
            for i in (0..d).rev() {
                let k = rem % self.counts[i];
                rem /= self.counts[i];
                p[i] = if self.counts[i] == 1 {
                    self.lower[i]
                } else {
                    self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (self.counts[i] - 1) as f64
                };
            }
            out.push(p);
        }
        Ok(out)
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || c == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(Error::Dimension(format!("{what} must be a nonempty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        p.query()?;
        p.x0_points()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn system(&self) -> Result<LtiSystem> {
        let (a, b) = match &self.system {
            SystemSpec::Chain { chain } => chain_of_integrators(chain.n, chain.ns)?,
            SystemSpec::Matrices { a, b } => (matrix(a, "A")?, matrix(b, "B")?),
        };
        let n = a.nrows();
        let disturbance = match &self.disturbance {
            DisturbanceSpec::Gaussian {
                mean,
                covariance,
                diagonal,
            } => {
                let mean = DVector::from_vec(mean.clone().unwrap_or_else(|| vec![0.0; n]));
                let cov = match (covariance, diagonal) {
                    (Some(c), None) => matrix(c, "covariance")?,
                    (None, Some(d)) => DMatrix::from_diagonal(&DVector::from_vec(d.clone())),
                    _ => {
                        return Err(Error::Schema(
                            "gaussian disturbance needs exactly one of covariance, diagonal".into(),
                        ))
                    }
                };
                Disturbance::Gaussian(GaussianDisturbance::new(mean, cov)?)
            }
            DisturbanceSpec::Uniform { center, half_width } => {
                Disturbance::Sampler(Arc::new(UniformDisturbance::new(center.clone(), half_width.clone())?))
            }
        };
        LtiSystem::new(a, b, disturbance, self.input_box.clone())
    }

    /// Query at the first initial state.
    pub fn query(&self) -> Result<ReachAvoidQuery> {
        let x0 = self.x0_points()?.into_iter().next().ok_or_else(|| Error::Schema("x0 list is empty".into()))?;
        ReachAvoidQuery::new(self.system()?, self.safe.clone(), self.target.clone(), self.horizon, x0)
    }

    pub fn x0_points(&self) -> Result<Vec<Vec<f64>>> {
        let pts = match &self.x0 {
            X0Spec::Point(p) => vec![p.clone()],
            X0Spec::Grid { grid } => grid.points()?,
            X0Spec::Points { points } => points.clone(),
        };
        if pts.is_empty() {
            return Err(Error::Schema("x0 list is empty".into()));
        }
        Ok(pts)
    }

    pub fn is_single_point(&self) -> bool {
        matches!(self.x0, X0Spec::Point(_))
    }

    /// DP grid from the file, or spacings 0.05 (state), 0.1 (input) and a
    /// `±5σ` disturbance box at spacing `σ_min / 2`.
    pub fn grid_spec(&self, query: &ReachAvoidQuery) -> Result<GridSpec> {
        if let Some(spec) = &self.dp {
            return Ok(spec.clone());
        }
        let g = query.system.disturbance().as_gaussian()?;
        let sd: Vec<f64> = (0..g.dim()).map(|i| g.covariance()[(i, i)].sqrt()).collect();
        let lower = (0..g.dim()).map(|i| g.mean()[i] - 5.0 * sd[i]).collect();
        let upper = (0..g.dim()).map(|i| g.mean()[i] + 5.0 * sd[i]).collect();
        let s_min = sd.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(GridSpec::new(0.05, 0.1, HyperRect::new(lower, upper)?, 0.5 * s_min))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOUBLE: &str = r#"{
        "system": { "chain": { "n": 2, "ns": 0.1 } },
        "disturbance": { "gaussian": { "diagonal": [0.01, 0.01] } },
        "input_box": { "lower": [-1], "upper": [1] },
        "safe": { "lower": [-1, -1], "upper": [1, 1] },
        "target": { "lower": [-0.5, -0.5], "upper": [0.5, 0.5] },
        "horizon": 10,
        "x0": [0.1, 0.9]
    }"#;

    #[test]
    fn parses_chain_shorthand() {
        let p = ProblemFile::from_json(DOUBLE).unwrap();
        let q = p.query().unwrap();
        assert_eq!(q.system.state_dim(), 2);
        assert_eq!(q.x0, vec![0.1, 0.9]);
        assert_eq!(p.mc_samples, 100_000);
        assert!(p.is_single_point());
    }

    #[test]
    fn round_trips() {
        let p = ProblemFile::from_json(DOUBLE).unwrap();
        let back = ProblemFile::from_json(&p.to_json().unwrap()).unwrap();
        assert_eq!(back.to_json().unwrap(), p.to_json().unwrap());
    }

    #[test]
    fn null_bounds_are_infinite() {
        let text = DOUBLE.replace(r#""safe": { "lower": [-1, -1], "upper": [1, 1] }"#, r#""safe": { "lower": [null, -1], "upper": [null, 1] }"#);
        let q = ProblemFile::from_json(&text).unwrap().query().unwrap();
        assert_eq!(q.safe.lower()[0], f64::NEG_INFINITY);
        assert_eq!(q.safe.upper()[0], f64::INFINITY);
    }

    #[test]
    fn explicit_matrices_and_covariance() {
        let text = r#"{
            "system": { "a": [[1.0]], "b": [[1.0]] },
            "disturbance": { "gaussian": { "mean": [0.0], "covariance": [[0.04]] } },
            "input_box": { "lower": [-1], "upper": [1] },
            "safe": { "lower": [-2], "upper": [2] },
            "target": { "lower": [0.3], "upper": [0.9] },
            "horizon": 1,
            "x0": { "points": [[0.0], [0.5]] }
        }"#;
        let p = ProblemFile::from_json(text).unwrap();
        assert_eq!(p.x0_points().unwrap(), vec![vec![0.0], vec![0.5]]);
    }

    #[test]
    fn grid_sweep_points() {
        let g = GridSweep {
            lower: vec![-1.0, 0.0],
            upper: vec![1.0, 0.0],
            counts: vec![3, 1],
        };
        assert_eq!(g.points().unwrap(), vec![vec![-1.0, 0.0], vec![0.0, 0.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn schema_errors() {
        for bad in [
            DOUBLE.replace("\"horizon\": 10,", ""),
            DOUBLE.replace("\"horizon\"", "\"horizn\""),
            DOUBLE.replace("[0.1, 0.9]", "[0.1]"),
            DOUBLE.replace(r#""diagonal": [0.01, 0.01]"#, r#""diagonal": [0.01]"#),
            DOUBLE.replace(r#"{ "diagonal": [0.01, 0.01] }"#, r#"{ "diagonal": [0.01, 0.01], "covariance": [[1,0],[0,1]] }"#),
            "not json".to_string(),
        ] {
            let err = ProblemFile::from_json(&bad).unwrap_err();
            assert!(err.is_schema(), "{err}");
        }
    }

    #[test]
    fn default_grid_spec() {
        let p = ProblemFile::from_json(DOUBLE).unwrap();
        let spec = p.grid_spec(&p.query().unwrap()).unwrap();
        assert!((spec.disturbance_box.upper()[0] - 0.5).abs() < 1e-12);
        assert!((spec.disturbance_spacing - 0.05).abs() < 1e-12);
    }
}
