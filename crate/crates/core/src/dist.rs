//! Empirical distribution machinery: step CDFs and their generalized
//! inverses, ranks, rank correlations and empirical copulas.

use serde::Serialize;

use crate::error::{Error, Result};

/// A right-continuous, nondecreasing step distribution function.
///
/// `F(y) = probs[k]` for the largest `k` with `grid[k] <= y`, and `F(y) = 0`
/// below `grid[0]`. The final probability is exactly one.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepCdf {
    grid: Vec<f64>,
    probs: Vec<f64>,
}

impl StepCdf {
    /// Validating constructor.
    pub fn new(grid: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::EmptySample);
        }
        if grid.len() != probs.len() {
            return Err(Error::LengthMismatch(grid.len(), probs.len()));
        }
        if grid.iter().any(|g| !g.is_finite()) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "grid must be finite and strictly increasing".into(),
            ));
        }
        let mut prev = 0.0;
        for &p in &probs {
            if !(0.0..=1.0).contains(&p) || p < prev {
                return Err(Error::InvalidArgument(
                    "probabilities must be nondecreasing in [0, 1]".into(),
                ));
            }
            prev = p;
        }
        if (probs[probs.len() - 1] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("final probability must be 1".into()));
        }
        let mut probs = probs;
        *probs.last_mut().unwrap() = 1.0;
        Ok(Self { grid, probs })
    }

    /// Builds a CDF from fitted values that may be slightly out of order or
    /// out of range: values are clamped to [0, 1], rearranged by sorting, and
    /// the top grid point absorbs any remaining mass.
    ///
    /// `grid` must be strictly increasing.
    pub fn from_fitted(grid: Vec<f64>, mut values: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        debug_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        for v in values.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        crate::first_step::rearrange(&mut values);
        if let Some(last) = values.last_mut() {
            *last = 1.0;
        }
        Self {
            grid,
            probs: values,
        }
    }

    /// Empirical CDF of a sample.
    pub fn from_sample(sample: &[f64]) -> Result<Self> {
        if sample.is_empty() {
            return Err(Error::EmptySample);
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("sample contains non-finite values".into()));
        }
        let mut sorted = sample.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut grid = Vec::new();
        let mut probs = Vec::new();
        for (i, &v) in sorted.iter().enumerate() {
            if i + 1 < sorted.len() && sorted[i + 1] == v {
                continue;
            }
            grid.push(v);
            probs.push((i + 1) as f64 / n);
        }
        *probs.last_mut().unwrap() = 1.0;
        Ok(Self { grid, probs })
    }

    /// Empirical CDF with nonnegative observation weights.
    pub fn from_weighted(values: &[f64], weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::LengthMismatch(values.len(), weights.len()));
        }
        let mut pairs: Vec<(f64, f64)> = values
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&v, &w)| (v, w))
            .collect();
        if pairs.is_empty() {
            return Err(Error::EmptySample);
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        let mut grid = Vec::new();
        let mut probs = Vec::new();
        let mut acc = 0.0;
        for (i, &(v, w)) in pairs.iter().enumerate() {
            acc += w;
            if i + 1 < pairs.len() && pairs[i + 1].0 == v {
                continue;
            }
            grid.push(v);
            probs.push((acc / total).min(1.0));
        }
        *probs.last_mut().unwrap() = 1.0;
        Ok(Self { grid, probs })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn min(&self) -> f64 {
        self.grid[0]
    }

    pub fn max(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// `F(y)`.
    pub fn eval(&self, y: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= y);
        if k == 0 {
            0.0
        } else {
            self.probs[k - 1]
        }
    }

    /// `F(y-) = P(Y < y)`.
    pub fn eval_left(&self, y: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g < y);
        if k == 0 {
            0.0
        } else {
            self.probs[k - 1]
        }
    }

    /// Generalized inverse `inf{y : F(y) >= tau}` for `tau` in (0, 1].
    pub fn quantile(&self, tau: f64) -> Result<f64> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::TauOutOfRange(tau));
        }
        Ok(self.quantile_clamped(tau))
    }

    /// Generalized inverse with `tau <= 0` mapped to the bottom of the
    /// support and `tau > 1` to the top.
    pub fn quantile_clamped(&self, tau: f64) -> f64 {
        let k = self.probs.partition_point(|&p| p < tau);
        self.grid[k.min(self.grid.len() - 1)]
    }

    pub fn quantile_fn(&self) -> QuantileFn<'_> {
        QuantileFn { cdf: self }
    }

    /// Point masses `(support point, mass)`.
    pub fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let mut prev = 0.0;
        self.grid.iter().zip(&self.probs).map(move |(&g, &p)| {
            let m = p - prev;
            prev = p;
            (g, m)
        })
    }

    pub fn mean(&self) -> f64 {
        self.atoms().map(|(g, m)| g * m).sum()
    }

    /// Translates the support by `a`.
    pub fn shifted(&self, a: f64) -> StepCdf {
        StepCdf {
            grid: self.grid.iter().map(|g| g + a).collect(),
            probs: self.probs.clone(),
        }
    }

    /// Sup-norm distance between two step CDFs (Kolmogorov-Smirnov).
    pub fn ks_distance(&self, other: &StepCdf) -> f64 {
        self.grid
            .iter()
            .chain(other.grid.iter())
            .map(|&y| (self.eval(y) - other.eval(y)).abs())
            .fold(0.0, f64::max)
    }

    /// Sup distance to an arbitrary CDF, checked at both sides of every jump.
    pub fn ks_distance_to<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        let mut worst: f64 = 0.0;
        let mut prev = 0.0;
        for (&g, &p) in self.grid.iter().zip(&self.probs) {
            let truth = cdf(g);
            worst = worst.max((p - truth).abs()).max((prev - truth).abs());
            prev = p;
        }
        worst
    }

    /// Drops grid points that carry no mass.
    pub fn compressed(&self) -> StepCdf {
        let mut grid = Vec::with_capacity(self.grid.len());
        let mut probs = Vec::with_capacity(self.grid.len());
        let mut prev = 0.0;
        for (&g, &p) in self.grid.iter().zip(&self.probs) {
            if p > prev {
                grid.push(g);
                probs.push(p);
                prev = p;
            }
        }
        StepCdf { grid, probs }
    }
}

/// Borrowed view of a [`StepCdf`] as its generalized inverse.
#[derive(Debug, Clone, Copy)]
pub struct QuantileFn<'a> {
    cdf: &'a StepCdf,
}

impl QuantileFn<'_> {
    pub fn eval(&self, tau: f64) -> Result<f64> {
        self.cdf.quantile(tau)
    }

    pub fn eval_many(&self, taus: &[f64]) -> Result<Vec<f64>> {
        taus.iter().map(|&t| self.cdf.quantile(t)).collect()
    }
}

/// `F^{-1}(tau)` for a step CDF.
pub fn quantile(cdf: &StepCdf, tau: f64) -> Result<f64> {
    cdf.quantile(tau)
}

/// Empirical CDF.
pub fn ecdf(sample: &[f64]) -> Result<StepCdf> {
    StepCdf::from_sample(sample)
}

/// A general (not necessarily monotone) right-continuous step function,
/// zero below the first grid point. Used for perturbed first-step
/// estimates, which need not be proper distribution functions.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFn {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFn {
    pub fn eval(&self, y: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= y);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// `self + scale * (other - self)` on the union of both grids.
    pub fn perturbed(&self, other: &StepFn, scale: f64) -> StepFn {
        let mut grid = Vec::with_capacity(self.grid.len() + other.grid.len());
        let (mut i, mut j) = (0, 0);
        while i < self.grid.len() || j < other.grid.len() {
            let next = match (self.grid.get(i), other.grid.get(j)) {
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    a
                }
                (Some(&a), Some(&b)) if b < a => {
                    j += 1;
                    b
                }
                (Some(&a), Some(_)) => {
                    i += 1;
                    j += 1;
                    a
                }
                (Some(&a), None) => {
                    i += 1;
                    a
                }
                (None, Some(&b)) => {
                    j += 1;
                    b
                }
                (None, None) => unreachable!(),
            };
            grid.push(next);
        }
        let values = grid
            .iter()
            .map(|&y| {
                let a = self.eval(y);
                a + scale * (other.eval(y) - a)
            })
            .collect();
        StepFn { grid, values }
    }
}

impl From<&StepCdf> for StepFn {
    fn from(cdf: &StepCdf) -> Self {
        let c = cdf.compressed();
        StepFn {
            grid: c.grid,
            values: c.probs,
        }
    }
}

/// Mid-ranks (average rank for ties), 1-based.
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Number of observations `<= x[i]` for each `i`.
pub fn max_ranks(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = j + 1;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: the sample correlation of mid-ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(
            "spearman_rho needs at least 3 pairs".into(),
        ));
    }
    pearson(&mid_ranks(x), &mid_ranks(y))
}

/// Kendall's tau-b, computed in O(n log n) by counting inversions.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("kendall_tau needs at least 2 pairs".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let pairs = |run: u64| run * (run - 1) / 2;
    let n0 = pairs(n as u64);
    // ties in x, and joint ties in (x, y)
    let (mut tx, mut txy) = (0u64, 0u64);
    let (mut run_x, mut run_xy) = (1u64, 1u64);
    for w in idx.windows(2) {
        if x[w[0]] == x[w[1]] {
            run_x += 1;
            if y[w[0]] == y[w[1]] {
                run_xy += 1;
            } else {
                txy += pairs(run_xy);
                run_xy = 1;
            }
        } else {
            tx += pairs(run_x);
            txy += pairs(run_xy);
            run_x = 1;
            run_xy = 1;
        }
    }
    tx += pairs(run_x);
    txy += pairs(run_xy);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = merge_count(&mut ys);

    let mut ty = 0u64;
    let mut run_y = 1u64;
    for w in ys.windows(2) {
        if w[0] == w[1] {
            run_y += 1;
        } else {
            ty += pairs(run_y);
            run_y = 1;
        }
    }
    ty += pairs(run_y);

    let denom = ((n0 - tx) as f64 * (n0 - ty) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    let concordant_minus_discordant = n0 as f64 - tx as f64 - ty as f64 + txy as f64 - 2.0 * swaps as f64;
    Ok((concordant_minus_discordant / denom).clamp(-1.0, 1.0))
}

// Sorts `v` and returns the number of strict inversions.
fn merge_count(v: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_count(&mut v[..mid]) + merge_count(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            swaps += (mid - i) as u64;
            merged.push(v[j]);
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    swaps
}

/// Default lattice resolution (points per axis) for empirical copulas.
pub const DEFAULT_COPULA_RESOLUTION: usize = 101;

/// Copula values on the regular lattice `u_i = i / (m - 1)`, `i = 0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaGrid {
    resolution: usize,
    values: Vec<f64>,
}

impl CopulaGrid {
    pub fn from_fn<F: Fn(f64, f64) -> f64>(resolution: usize, c: F) -> Self {
        let step = 1.0 / (resolution - 1) as f64;
        let mut values = Vec::with_capacity(resolution * resolution);
        for i in 0..resolution {
            for j in 0..resolution {
                values.push(c(i as f64 * step, j as f64 * step));
            }
        }
        Self { resolution, values }
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn u(&self, i: usize) -> f64 {
        i as f64 / (self.resolution - 1) as f64
    }

    /// `C(u_i, v_j)`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.resolution + j]
    }

    pub fn max_abs_diff(&self, other: &CopulaGrid) -> f64 {
        assert_eq!(self.resolution, other.resolution);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of the boundary conditions
    /// `C(u,0) = C(0,v) = 0`, `C(u,1) = u`, `C(1,v) = v`.
    pub fn boundary_error(&self) -> f64 {
        let m = self.resolution;
        let mut worst: f64 = 0.0;
        for k in 0..m {
            let u = self.u(k);
            worst = worst
                .max(self.get(k, 0).abs())
                .max(self.get(0, k).abs())
                .max((self.get(k, m - 1) - u).abs())
                .max((self.get(m - 1, k) - u).abs());
        }
        worst
    }

    /// Most negative rectangle volume over lattice cells (0 if 2-increasing).
    pub fn min_cell_volume(&self) -> f64 {
        let m = self.resolution;
        let mut worst: f64 = 0.0;
        for i in 1..m {
            for j in 1..m {
                let vol = self.get(i, j) - self.get(i - 1, j) - self.get(i, j - 1)
                    + self.get(i - 1, j - 1);
                worst = worst.min(vol);
            }
        }
        worst
    }
}

/// Empirical copula on a `resolution x resolution` lattice:
/// `C(u, v)` is the fraction of pairs with `rank_x / n <= u` and
/// `rank_y / n <= v`, ranks counted with `<=` so ties share the upper rank.
pub fn empirical_copula(x: &[f64], y: &[f64], resolution: usize) -> Result<CopulaGrid> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    if resolution < 10 {
        return Err(Error::InvalidArgument(
            "copula lattice resolution must be at least 10".into(),
        ));
    }
    let n = x.len();
    let m = resolution;
    let cell = |rank: usize| -> usize {
        // smallest i with rank * (m - 1) <= i * n
        (rank * (m - 1)).div_ceil(n)
    };
    let rx = max_ranks(x);
    let ry = max_ranks(y);
    let mut hist = vec![0u64; m * m];
    for (&a, &b) in rx.iter().zip(&ry) {
        hist[cell(a) * m + cell(b)] += 1;
    }
    // 2-D cumulative sum
    for i in 0..m {
        for j in 1..m {
            hist[i * m + j] += hist[i * m + j - 1];
        }
    }
    for i in 1..m {
        for j in 0..m {
            hist[i * m + j] += hist[(i - 1) * m + j];
        }
    }
    let values = hist.into_iter().map(|c| c as f64 / n as f64).collect();
    Ok(CopulaGrid {
        resolution: m,
        values,
    })
}
