//! Gridded dynamic programming for the terminal-time reach-avoid value.
//!
//! The state grid covers the safe set with uniform spacing, inputs are
//! gridded over the input box and the disturbance density is discretized by
//! the midpoint rule on a truncation box. Values are stored for every time
//! step so that the whole recursion can be inspected and serialized.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::{GaussianDisturbance, HyperRect, ReachAvoidQuery};

/// Largest number of stored node values (all layers) accepted by [`dp_solve`].
pub const MAX_NODE_VALUES: u128 = 200_000_000;
/// Largest state dimension accepted by [`dp_solve`].
pub const MAX_DP_DIM: usize = 3;

const MAGIC: &[u8; 8] = b"RKVGRID1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub state_spacing: f64,
    pub input_spacing: f64,
    /// Truncation box of the disturbance support.
    pub disturbance_box: HyperRect,
    pub disturbance_spacing: f64,
    /// Multilinear interpolation of successor values instead of nearest-node lookup.
    #[serde(default)]
    pub interpolate: bool,
}

impl GridSpec {
    pub fn new(state_spacing: f64, input_spacing: f64, disturbance_box: HyperRect, disturbance_spacing: f64) -> Self {
        Self {
            state_spacing,
            input_spacing,
            disturbance_box,
            disturbance_spacing,
            interpolate: false,
        }
    }

    fn validate(&self, disturbance: &GaussianDisturbance) -> Result<()> {
        for (name, v) in [
            ("state_spacing", self.state_spacing),
            ("input_spacing", self.input_spacing),
            ("disturbance_spacing", self.disturbance_spacing),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.disturbance_box.dim() != disturbance.dim() {
            return Err(Error::Dimension(format!(
                "disturbance box has dimension {}, disturbance has {}",
                self.disturbance_box.dim(),
                disturbance.dim()
            )));
        }
        if !self.disturbance_box.is_bounded() || !self.disturbance_box.contains(disturbance.mean().as_slice()) {
            return Err(Error::InvalidArgument(
                "disturbance box must be bounded and contain the disturbance mean".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform tensor grid: `lower[i] + k * spacing` for `k in 0..counts[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axes {
    pub lower: Vec<f64>,
    pub spacing: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Axes {
    /// Nodes from `lower` up to `upper` (inclusive up to rounding).
    fn covering(rect: &HyperRect, spacing: f64) -> Self {
        let counts = rect
            .lower()
            .iter()
            .zip(rect.upper())
            .map(|(lo, hi)| ((hi - lo) / spacing + 1e-9).floor() as usize + 1)
            .collect();
        Self {
            lower: rect.lower().to_vec(),
            spacing: vec![spacing; rect.dim()],
            counts,
        }
    }

    pub fn dim(&self) -> usize {
        self.counts.len()
    }

    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn upper(&self, i: usize) -> f64 {
        self.lower[i] + (self.counts[i] - 1) as f64 * self.spacing[i]
    }

    /// Row-major multi-index of a flat index; the last axis varies fastest.
    fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for i in (0..self.dim()).rev() {
            out[i] = flat % self.counts[i];
            flat /= self.counts[i];
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dim()];
        self.unravel(flat, &mut idx);
        idx.iter()
            .enumerate()
            .map(|(i, &k)| self.lower[i] + k as f64 * self.spacing[i])
            .collect()
    }

    fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lower[i] - 1e-12 && v <= self.upper(i) + 1e-12)
    }

    fn nearest(&self, x: &[f64]) -> usize {
        let mut flat = 0;
        for (i, &v) in x.iter().enumerate() {
            let k = ((v - self.lower[i]) / self.spacing[i]).round().clamp(0.0, (self.counts[i] - 1) as f64);
            flat = flat * self.counts[i] + k as usize;
        }
        flat
    }

    /// Multilinear interpolation of `values` at `x`; coordinates are clamped
    /// into the grid box.
    fn interpolate(&self, values: &[f64], x: &[f64]) -> f64 {
        let n = self.dim();
        debug_assert!(n <= MAX_DP_DIM);
        let mut base = [0usize; MAX_DP_DIM];
        let mut frac = [0.0; MAX_DP_DIM];
        let mut stride = [0usize; MAX_DP_DIM];
        let mut s = 1;
        for i in (0..n).rev() {
            stride[i] = s;
            s *= self.counts[i];
            if self.counts[i] == 1 {
                continue;
            }
            let t = ((x[i] - self.lower[i]) / self.spacing[i]).clamp(0.0, (self.counts[i] - 1) as f64);
            let k = (t as usize).min(self.counts[i] - 2);
            base[i] = k;
            frac[i] = t - k as f64;
        }
        let origin: usize = (0..n).map(|i| base[i] * stride[i]).sum();
        let mut total = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut flat = origin;
            for i in 0..n {
                if (corner >> i) & 1 == 1 {
                    w *= frac[i];
                    flat += stride[i];
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w != 0.0 {
                total += w * values[flat];
            }
        }
        total
    }
}

/// Value functions `V_0 … V_N` on the state grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    pub axes: Axes,
    pub safe: HyperRect,
    pub horizon: usize,
    /// `layers[k][flat]` is `V_k` at grid node `flat`.
    pub layers: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format: String,
    state_dim: usize,
    horizon: usize,
    counts: Vec<usize>,
    lower: Vec<f64>,
    spacing: Vec<f64>,
    safe_lower: Vec<f64>,
    safe_upper: Vec<f64>,
    layer_order: String,
    version: String,
}

impl ValueGrid {
    pub fn state_dim(&self) -> usize {
        self.axes.dim()
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        &self.layers[k]
    }

    /// Flat binary layout (little endian): magic, `n`, `N`, counts (u64),
    /// lower, spacing, safe lower, safe upper (f64), then `N+1` row-major
    /// layers of f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.state_dim();
        let mut out = Vec::with_capacity(24 + n * 40 + 8 * self.layers.len() * self.axes.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(self.horizon as u64).to_le_bytes());
        for &c in &self.axes.counts {
            out.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for v in self
            .axes
            .lower
            .iter()
            .chain(&self.axes.spacing)
            .chain(self.safe.lower())
            .chain(self.safe.upper())
            .chain(self.layers.iter().flatten())
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Schema(format!("value grid file: {what}"));
        let mut pos = 0usize;
        let mut take = |len: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + len).ok_or_else(|| bad("truncated"))?;
            pos += len;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u64_at = || -> Result<u64> { Ok(u64::from_le_bytes(take(8)?.try_into().unwrap())) };
        let n = u64_at()? as usize;
        let horizon = u64_at()? as usize;
        if n == 0 || n > MAX_DP_DIM {
            return Err(bad("bad dimension"));
        }
        let counts: Vec<usize> = (0..n).map(|_| u64_at().map(|c| c as usize)).collect::<Result<_>>()?;
        let nodes = counts
            .iter()
            .try_fold(1usize, |a, &c| a.checked_mul(c))
            .filter(|&v| v > 0)
            .ok_or_else(|| bad("bad counts"))?;
        let expected = 8 * (4 * n + (horizon + 1) * nodes);
        let rest = bytes.get(8 * (3 + n)..).ok_or_else(|| bad("truncated"))?;
        if rest.len() != expected {
            return Err(bad("payload length mismatch"));
        }
        let floats: Vec<f64> = rest.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let (head, payload) = floats.split_at(4 * n);
        let safe = HyperRect::new(head[2 * n..3 * n].to_vec(), head[3 * n..].to_vec())?;
        Ok(Self {
            axes: Axes {
                lower: head[..n].to_vec(),
                spacing: head[n..2 * n].to_vec(),
                counts,
            },
            safe,
            horizon,
            layers: payload.chunks_exact(nodes).map(<[f64]>::to_vec).collect(),
        })
    }

    /// Writes `path` and a JSON sidecar at `path` with `.json` appended.
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        let sidecar = Sidecar {
            format: "reachkit value grid v1".into(),
            state_dim: self.state_dim(),
            horizon: self.horizon,
            counts: self.axes.counts.clone(),
            lower: self.axes.lower.clone(),
            spacing: self.axes.spacing.clone(),
            safe_lower: self.safe.lower().to_vec(),
            safe_upper: self.safe.upper().to_vec(),
            layer_order: "k = 0..N, row-major nodes, last axis fastest".into(),
            version: crate::VERSION.into(),
        };
        let mut side = path.as_os_str().to_owned();
        side.push(".json");
        fs::write(side, serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Midpoint-rule discretization of the disturbance density on the
/// truncation box. Weights are renormalized to sum to 1.
pub fn disturbance_kernel(dist: &GaussianDisturbance, spec: &GridSpec) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    spec.validate(dist)?;
    let b = &spec.disturbance_box;
    let n = b.dim();
    let cells: Vec<usize> = b
        .widths()
        .iter()
        .map(|w| ((w / spec.disturbance_spacing - 1e-9).ceil() as usize).max(1))
        .collect();
    let total = cells.iter().try_fold(1u128, |a, &c| a.checked_mul(c as u128)).unwrap_or(u128::MAX);
    if total > MAX_NODE_VALUES {
        return Err(Error::InvalidArgument(format!(
            "disturbance grid has {total} cells; increase disturbance_spacing"
        )));
    }
    let total = total as usize;
    let prec = dist
        .covariance()
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotPositiveDefinite { pivot: 0, dim: n })?;
    let mean = dist.mean();

    let mut points = Vec::with_capacity(total);
    let mut log_w = Vec::with_capacity(total);
    let mut idx = vec![0usize; n];
    for flat in 0..total {
        let mut rem = flat;
        for i in (0..n).rev() {
            idx[i] = rem % cells[i];
            rem /= cells[i];
        }
        let w: Vec<f64> = (0..n)
            .map(|i| {
                let h = (b.upper()[i] - b.lower()[i]) / cells[i] as f64;
                b.lower()[i] + (idx[i] as f64 + 0.5) * h
            })
            .collect();
        let d = nalgebra::DVector::from_fn(n, |i, _| w[i] - mean[i]);
        log_w.push(-0.5 * d.dot(&(&prec * &d)));
        points.push(w);
    }
    // Cell volume and normalizing constant cancel under renormalization.
    let peak = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = log_w.iter().map(|l| (l - peak).exp()).collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok((points, weights))
}

fn grid_size_check(safe: &HyperRect, spec: &GridSpec, horizon: usize) -> Result<()> {
    let node_values = safe
        .lower()
        .iter()
        .zip(safe.upper())
        .map(|(lo, hi)| {
            let c = ((hi - lo) / spec.state_spacing + 1e-9).floor();
            if c.is_finite() && c < 1e30 {
                c as u128 + 1
            } else {
                u128::MAX
            }
        })
        .fold(horizon as u128 + 1, u128::saturating_mul);
    if node_values > MAX_NODE_VALUES {
        return Err(Error::GridTooLarge {
            node_values,
            limit: MAX_NODE_VALUES,
            megabytes: node_values.saturating_mul(8) / 1_000_000,
        });
    }
    Ok(())
}

/// Backward recursion
/// `V_N = 1_𝒯`, `V_k(x) = 1_𝒮(x) · max_u Σ_w p_w V_{k+1}(x⁺(x, u, w))`
/// over the state grid on 𝒮. Successors outside 𝒮 contribute 0.
pub fn dp_solve(query: &ReachAvoidQuery, spec: &GridSpec) -> Result<ValueGrid> {
    let sys = &query.system;
    let n = sys.state_dim();
    if !query.safe.is_bounded() || query.safe.is_empty() {
        return Err(Error::InvalidArgument("dynamic programming needs a bounded, nonempty safe set".into()));
    }
    if !sys.input_box().is_bounded() {
        return Err(Error::InvalidArgument("dynamic programming needs a bounded input box".into()));
    }
    if spec.state_spacing > 0.0 {
        grid_size_check(&query.safe, spec, query.horizon)?;
    }
    if n > MAX_DP_DIM {
        return Err(Error::DpDimension(n));
    }
    let dist = sys.disturbance().as_gaussian()?;
    let (w_points, w_weights) = disturbance_kernel(dist, spec)?;

    let axes = Axes::covering(&query.safe, spec.state_spacing);
    let inputs = Axes::covering(sys.input_box(), spec.input_spacing);
    let m = sys.input_dim();
    let a = sys.a();
    let b = sys.b();

    // Precomputed B·u for every gridded input.
    let bu: Vec<Vec<f64>> = (0..inputs.len())
        .map(|j| {
            let u = inputs.point(j);
            (0..n).map(|r| (0..m).map(|c| b[(r, c)] * u[c]).sum()).collect()
        })
        .collect();

    let terminal: Vec<f64> = (0..axes.len())
        .map(|f| if query.target.contains(&axes.point(f)) { 1.0 } else { 0.0 })
        .collect();
    let mut layers = vec![terminal];

    for _ in 0..query.horizon {
        let next = layers.last().unwrap();
        let current: Vec<f64> = (0..axes.len())
            .into_par_iter()
            .map(|f| {
                let x = axes.point(f);
                if !query.safe.contains(&x) {
                    return 0.0;
                }
                let ax: Vec<f64> = (0..n).map(|r| (0..n).map(|c| a[(r, c)] * x[c]).sum()).collect();
                let mut succ = vec![0.0; n];
                let mut best = 0.0_f64;
                for bu_j in &bu {
                    let mut acc = 0.0;
                    for (w, p) in w_points.iter().zip(&w_weights) {
                        for i in 0..n {
                            succ[i] = ax[i] + bu_j[i] + w[i];
                        }
                        if !query.safe.contains(&succ) || !axes.in_box(&succ) {
                            continue;
                        }
                        acc += p * if spec.interpolate {
                            axes.interpolate(next, &succ)
                        } else {
                            next[axes.nearest(&succ)]
                        };
                    }
                    // Strict comparison keeps the lowest-index maximizer.
                    if acc > best {
                        best = acc;
                    }
                }
                best.min(1.0)
            })
            .collect();
        layers.push(current);
    }
    layers.reverse();
    Ok(ValueGrid {
        axes,
        safe: query.safe.clone(),
        horizon: query.horizon,
        layers,
    })
}

/// Multilinear interpolation of `V_0` at `x0`. Points outside the safe set
/// have value 0; points inside it but beyond the last grid node are errors.
pub fn dp_value_at(grid: &ValueGrid, x0: &[f64]) -> Result<f64> {
    if x0.len() != grid.state_dim() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, grid has dimension {}",
            x0.len(),
            grid.state_dim()
        )));
    }
    if !grid.safe.contains(x0) {
        return Ok(0.0);
    }
    if !grid.axes.in_box(x0) {
        return Err(Error::OutsideGrid);
    }
    Ok(grid.axes.interpolate(&grid.layers[0], x0).clamp(0.0, 1.0))
}
