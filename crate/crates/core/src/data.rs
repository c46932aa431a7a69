//! Scaling, sliding-window samples and weak-form subdomain layouts.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// Per-dimension affine map of the training range onto `[0, 1]`.
/// Values outside the range are extrapolated, never clipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(data: &Matrix) -> Result<Self> {
        if data.rows() < 2 {
            return Err(Error::config("scaler needs at least two rows"));
        }
        let d = data.cols();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for r in 0..data.rows() {
            for (j, &v) in data.row(r).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        if let Some(j) = (0..d).find(|&j| !(max[j] > min[j])) {
            return Err(Error::config(format!("dimension {j} is constant; cannot scale")));
        }
        Ok(MinMaxScaler { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// `max − min` per dimension; divides physical rates to scaled rates.
    pub fn range(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| b - a).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| v * (hi - lo) + lo)
            .collect()
    }

    pub fn apply_matrix(&self, m: &Matrix) -> Matrix {
        self.map_rows(m, |r| self.apply(r))
    }

    pub fn invert_matrix(&self, m: &Matrix) -> Matrix {
        self.map_rows(m, |r| self.invert(r))
    }

    fn map_rows(&self, m: &Matrix, f: impl Fn(&[f64]) -> Vec<f64>) -> Matrix {
        let mut data = Vec::with_capacity(m.rows() * m.cols());
        for r in 0..m.rows() {
            data.extend(f(m.row(r)));
        }
        Matrix::from_vec(m.rows(), m.cols(), data)
    }
}

/// Overlapping windows of `length` consecutive rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSet {
    pub length: usize,
    pub stride: usize,
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// Initial state of window `i`.
    pub fn y0<'a>(&self, data: &'a Matrix, i: usize) -> &'a [f64] {
        data.row(self.starts[i])
    }

    /// All `length` rows of window `i`, row-major.
    pub fn segment<'a>(&self, data: &'a Matrix, i: usize) -> &'a [f64] {
        let d = data.cols();
        let s = self.starts[i];
        &data.as_slice()[s * d..(s + self.length) * d]
    }

    /// Splits off the final `fraction` of windows (at least one each side
    /// when possible).
    pub fn split_tail(&self, fraction: f64) -> (WindowSet, WindowSet) {
        let (a, b) = split_indices(&self.starts, fraction);
        (
            WindowSet {
                starts: a,
                ..self.clone()
            },
            WindowSet {
                starts: b,
                ..self.clone()
            },
        )
    }
}

fn split_indices(v: &[usize], fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let n = v.len();
    let mut held = ((n as f64) * fraction).round() as usize;
    if n >= 2 {
        held = held.clamp(1, n - 1);
    } else {
        held = 0;
    }
    let cut = n - held;
    (v[..cut].to_vec(), v[cut..].to_vec())
}

/// Windows at starts `0, stride, 2·stride, …` with `start + length ≤ n_rows`;
/// `⌊(N − T)/stride⌋ + 1` of them.
pub fn sliding_windows(n_rows: usize, length: usize, stride: usize) -> Result<WindowSet> {
    if length < 2 || stride < 1 {
        return Err(Error::config("windows need length ≥ 2 and stride ≥ 1"));
    }
    if length > n_rows {
        return Err(Error::config(format!(
            "window length {length} exceeds series length {n_rows}"
        )));
    }
    let starts = (0..=n_rows - length).step_by(stride).collect();
    Ok(WindowSet {
        length,
        stride,
        starts,
    })
}

/// `K` overlapping subdomains of `M` grid points each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubdomainLayout {
    pub size: usize,
    pub starts: Vec<usize>,
    /// `(M − 1)·Δt`
    pub length: f64,
    /// Uniform reference nodes on `[-1, 1]`.
    pub nodes: Vec<f64>,
}

impl SubdomainLayout {
    pub fn count(&self) -> usize {
        self.starts.len()
    }

    pub fn split_tail(&self, fraction: f64) -> (SubdomainLayout, SubdomainLayout) {
        let (a, b) = split_indices(&self.starts, fraction);
        (
            SubdomainLayout {
                starts: a,
                ..self.clone()
            },
            SubdomainLayout {
                starts: b,
                ..self.clone()
            },
        )
    }
}

/// `M` uniform nodes with exact endpoints `−1` and `+1`.
pub fn reference_nodes(m: usize) -> Vec<f64> {
    let mut s: Vec<f64> = (0..m)
        .map(|i| -1.0 + 2.0 * i as f64 / (m - 1) as f64)
        .collect();
    s[0] = -1.0;
    s[m - 1] = 1.0;
    s
}

/// Evenly spaced subdomain starts from 0 to `N − M`. Asking for more
/// subdomains than distinct starts exist caps the count.
pub fn make_subdomains(n_rows: usize, size: usize, count: usize, dt: f64) -> Result<SubdomainLayout> {
    if size < 2 || size > n_rows {
        return Err(Error::config(format!(
            "subdomain size {size} must be in [2, {n_rows}]"
        )));
    }
    if count == 0 {
        return Err(Error::config("need at least one subdomain"));
    }
    let span = n_rows - size;
    let mut k = count;
    if k > span + 1 {
        log::warn!(
            "requested {count} subdomains but only {} distinct starts exist; capping",
            span + 1
        );
        k = span + 1;
    }
    let starts = if k == 1 {
        vec![0]
    } else {
        let stride = span as f64 / (k - 1) as f64;
        (0..k).map(|i| (i as f64 * stride).round() as usize).collect()
    };
    Ok(SubdomainLayout {
        size,
        starts,
        length: (size - 1) as f64 * dt,
        nodes: reference_nodes(size),
    })
}

/// Affine map `τ(s) = (b−a)/2·s + (a+b)/2` from `[-1, 1]` onto `[a, b]`.
pub fn to_reference(a: f64, b: f64, s: f64) -> f64 {
    (b - a) / 2.0 * s + (a + b) / 2.0
}

/// `ds/dt` of the inverse of [`to_reference`].
pub fn reference_slope(a: f64, b: f64) -> f64 {
    2.0 / (b - a)
}
