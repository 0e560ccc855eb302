//! Time grids and reproducible Brownian increments.
//!
//! Every path draws its increments from its own ChaCha8 stream, seeded by
//! [`sub_seed`]`(master_seed, path_index)`. Nothing is shared between paths,
//! so results do not depend on which thread generated which path.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Ordered simulation times `0 = t_0 < t_1 < ... < t_K = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    times: Vec<f64>,
    uniform_dt: Option<f64>,
}

/// Uniform grid on `[0, horizon]` with `n_steps` steps.
pub fn make_grid(horizon: f64, n_steps: usize) -> Result<PathGrid> {
    PathGrid::uniform(horizon, n_steps)
}

impl PathGrid {
    pub fn uniform(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        let dt = horizon / n_steps as f64;
        let mut times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
        times[n_steps] = horizon;
        Ok(Self {
            times,
            uniform_dt: Some(dt),
        })
    }

    /// Purely geometric grid `t_k = horizon * ratio^(n - k)` for `k = 1..=n`, plus `t_0 = 0`.
    pub fn geometric(horizon: f64, ratio: f64, n: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(invalid("geometric ratio must lie in (0, 1)"));
        }
        if n == 0 {
            return Err(invalid("grid needs at least one step"));
        }
        let mut times = Vec::with_capacity(n + 1);
        times.push(0.0);
        for k in 1..=n {
            times.push(horizon * ratio.powi((n - k) as i32));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("geometric grid is not strictly increasing"));
        }
        Ok(Self {
            times,
            uniform_dt: None,
        })
    }

    /// Geometric spacing near zero followed by a uniform tail.
    ///
    /// The first `n_geometric` points after zero are `t_switch * ratio^(n_geometric - j)`
    /// for `j = 1..=n_geometric` (so the last of them is `t_switch`), followed by
    /// `n_uniform` equal steps from `t_switch` to `horizon`.
    pub fn geometric_then_uniform(
        horizon: f64,
        t_switch: f64,
        ratio: f64,
        n_geometric: usize,
        n_uniform: usize,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if !(t_switch > 0.0 && t_switch < horizon) {
            return Err(invalid("t_switch must lie strictly inside (0, horizon)"));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(invalid("geometric ratio must lie in (0, 1)"));
        }
        if n_geometric == 0 || n_uniform == 0 {
            return Err(invalid("both grid segments need at least one step"));
        }
        let mut times = Vec::with_capacity(n_geometric + n_uniform + 1);
        times.push(0.0);
        for j in 1..=n_geometric {
            times.push(t_switch * ratio.powi((n_geometric - j) as i32));
        }
        let h = (horizon - t_switch) / n_uniform as f64;
        for j in 1..=n_uniform {
            times.push(t_switch + j as f64 * h);
        }
        times[n_geometric + n_uniform] = horizon;
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("geometric grid is not strictly increasing"));
        }
        Ok(Self {
            times,
            uniform_dt: None,
        })
    }

    /// Splits every step into `factor` equal sub-steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("refinement factor must be at least 1"));
        }
        if self.uniform_dt.is_some() {
            return Self::uniform(self.horizon(), self.n_steps() * factor);
        }
        let mut times = Vec::with_capacity(self.n_steps() * factor + 1);
        times.push(0.0);
        for w in self.times.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            for j in 1..factor {
                times.push(w[0] + j as f64 * h);
            }
            times.push(w[1]);
        }
        Ok(Self {
            times,
            uniform_dt: None,
        })
    }

    /// Keeps every `factor`-th grid point.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.n_steps() % factor != 0 {
            return Err(invalid(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps()
            )));
        }
        if self.uniform_dt.is_some() {
            return Self::uniform(self.horizon(), self.n_steps() / factor);
        }
        let times = self.times.iter().step_by(factor).copied().collect();
        Ok(Self {
            times,
            uniform_dt: None,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn t(&self, k: usize) -> f64 {
        self.times[k]
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform_dt.is_some()
    }

    /// Length of step `k`, i.e. `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        match self.uniform_dt {
            Some(dt) => dt,
            None => self.times[k + 1] - self.times[k],
        }
    }

    /// Nominal step for uniform grids, `None` otherwise.
    pub fn uniform_dt(&self) -> Option<f64> {
        self.uniform_dt
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-path seed: `splitmix64(master_seed ^ splitmix64(path_index))`.
pub fn sub_seed(master_seed: u64, path_index: usize) -> u64 {
    splitmix64(master_seed ^ splitmix64(path_index as u64))
}

/// Lazily generated Brownian increments for a batch of paths.
///
/// Increments are drawn on a base grid and, after [`FactorPaths::coarsened`],
/// summed in groups. A coarsened set therefore shares its Brownian paths with
/// the set it came from, which is what step-halving studies need.
#[derive(Debug, Clone)]
pub struct FactorPaths {
    base: Arc<PathGrid>,
    grid: Arc<PathGrid>,
    group: usize,
    m: usize,
    n_paths: usize,
    master_seed: u64,
}

pub fn generate_factors(
    grid: PathGrid,
    m: usize,
    n_paths: usize,
    master_seed: u64,
) -> Result<FactorPaths> {
    FactorPaths::new(grid, m, n_paths, master_seed)
}

impl FactorPaths {
    pub fn new(grid: PathGrid, m: usize, n_paths: usize, master_seed: u64) -> Result<Self> {
        if m == 0 {
            return Err(invalid("factor count m must be at least 1"));
        }
        if n_paths == 0 {
            return Err(invalid("n_paths must be at least 1"));
        }
        let grid = Arc::new(grid);
        Ok(Self {
            base: grid.clone(),
            grid,
            group: 1,
            m,
            n_paths,
            master_seed,
        })
    }

    /// Same Brownian paths observed on a grid `factor` times coarser.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        Ok(Self {
            base: self.base.clone(),
            grid: Arc::new(grid),
            group: self.group * factor,
            m: self.m,
            n_paths: self.n_paths,
            master_seed: self.master_seed,
        })
    }

    /// Same seeds, different path count.
    pub fn with_paths(&self, n_paths: usize) -> Result<Self> {
        if n_paths == 0 {
            return Err(invalid("n_paths must be at least 1"));
        }
        Ok(Self {
            n_paths,
            ..self.clone()
        })
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn shared_grid(&self) -> Arc<PathGrid> {
        self.grid.clone()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Writes the increments of one path into `out`, laid out step-major:
    /// `out[k * m + nu]` is the increment of factor `nu` over step `k`.
    pub fn fill(&self, path_index: usize, out: &mut [f64]) -> Result<()> {
        if path_index >= self.n_paths {
            return Err(invalid(format!(
                "path index {path_index} out of range for {} paths",
                self.n_paths
            )));
        }
        let n_steps = self.grid.n_steps();
        if out.len() != n_steps * self.m {
            return Err(invalid("increment buffer has the wrong length"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.master_seed, path_index));
        let uniform_sqrt = self.base.uniform_dt().map(f64::sqrt);
        if self.group == 1 {
            for k in 0..n_steps {
                let s = uniform_sqrt.unwrap_or_else(|| self.base.dt(k).sqrt());
                for x in &mut out[k * self.m..(k + 1) * self.m] {
                    let z: f64 = rng.sample(StandardNormal);
                    *x = s * z;
                }
            }
            return Ok(());
        }
        out.fill(0.0);
        for fine in 0..self.base.n_steps() {
            let s = uniform_sqrt.unwrap_or_else(|| self.base.dt(fine).sqrt());
            let k = fine / self.group;
            for x in &mut out[k * self.m..(k + 1) * self.m] {
                let z: f64 = rng.sample(StandardNormal);
                *x += s * z;
            }
        }
        Ok(())
    }

    pub fn increments(&self, path_index: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.grid.n_steps() * self.m];
        self.fill(path_index, &mut out)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_points() {
        let g = make_grid(1.0, 4).unwrap();
        assert_eq!(g.times(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(2.0, 1).unwrap();
        assert_eq!(g.dt(0), 2.0);
        assert!(make_grid(0.0, 10).is_err());
        assert!(make_grid(1.0, 0).is_err());
        assert!(make_grid(f64::NAN, 3).is_err());
    }

    #[test]
    fn uniform_grid_ends_exactly_at_horizon() {
        let g = make_grid(0.7, 3333).unwrap();
        assert_eq!(g.horizon(), 0.7);
        assert_eq!(g.n_steps(), 3333);
    }

    #[test]
    fn geometric_grid_shape() {
        let g = PathGrid::geometric_then_uniform(1.0, 0.01, 0.5, 4, 99).unwrap();
        assert_eq!(g.n_steps(), 103);
        assert_eq!(g.t(0), 0.0);
        assert!((g.t(1) - 0.01 / 8.0).abs() < 1e-18);
        assert!((g.t(4) - 0.01).abs() < 1e-18);
        assert_eq!(g.horizon(), 1.0);
        assert!(!g.is_uniform());
        assert!((g.dt(4) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn refine_then_coarsen_round_trips() {
        let g = PathGrid::geometric_then_uniform(1.0, 0.1, 0.3, 3, 9).unwrap();
        let r = g.refined(4).unwrap();
        assert_eq!(r.n_steps(), 48);
        let back = r.coarsened(4).unwrap();
        for (a, b) in back.times().iter().zip(g.times()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(g.coarsened(5).is_err());
    }

    #[test]
    fn same_seed_and_index_is_bit_identical() {
        let f = generate_factors(make_grid(1.0, 50).unwrap(), 3, 8, 42).unwrap();
        let a = f.increments(5).unwrap();
        let b = f.increments(5).unwrap();
        assert_eq!(a, b);
        let c = f.increments(4).unwrap();
        assert_ne!(a, c);
        let other = generate_factors(make_grid(1.0, 50).unwrap(), 3, 8, 43).unwrap();
        assert_ne!(a, other.increments(5).unwrap());
    }

    #[test]
    fn coarsened_increments_are_sums_of_fine_ones() {
        let f = generate_factors(make_grid(1.0, 8).unwrap(), 2, 1, 7).unwrap();
        let fine = f.increments(0).unwrap();
        let c = f.coarsened(2).unwrap();
        let coarse = c.increments(0).unwrap();
        assert_eq!(c.grid().n_steps(), 4);
        for k in 0..4 {
            for nu in 0..2 {
                let want = fine[(2 * k) * 2 + nu] + fine[(2 * k + 1) * 2 + nu];
                assert!((coarse[k * 2 + nu] - want).abs() < 1e-15);
            }
        }
        let cc = c.coarsened(2).unwrap();
        let twice = cc.increments(0).unwrap();
        assert!((twice[0] - (coarse[0] + coarse[2])).abs() < 1e-15);
    }

    #[test]
    fn terminal_value_moments() {
        // W(1) over 1e4 paths: mean within 5/sqrt(n), variance within 0.05 of 1.
        let n = 10_000;
        let f = generate_factors(make_grid(1.0, 20).unwrap(), 1, n, 2024).unwrap();
        let w: Vec<f64> = (0..n)
            .map(|i| f.increments(i).unwrap().iter().sum())
            .collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn increment_moments_per_step() {
        let n = 10_000;
        let steps = 10;
        let dt = 0.1;
        let f = generate_factors(make_grid(1.0, steps).unwrap(), 2, n, 99).unwrap();
        let mut all = Vec::with_capacity(n * steps * 2);
        for i in 0..n {
            all.extend(f.increments(i).unwrap());
        }
        let cnt = all.len() as f64;
        let mean = all.iter().sum::<f64>() / cnt;
        let var = all.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (cnt - 1.0);
        // Var of the sample variance of N(0, dt) is 2 dt^2 / N.
        assert!(mean.abs() < 5.0 * (dt / cnt).sqrt());
        assert!((var - dt).abs() < 5.0 * dt * (2.0 / cnt).sqrt());
    }

    #[test]
    fn bad_arguments() {
        let g = make_grid(1.0, 4).unwrap();
        assert!(generate_factors(g.clone(), 0, 1, 0).is_err());
        assert!(generate_factors(g.clone(), 1, 0, 0).is_err());
        let f = generate_factors(g, 1, 2, 0).unwrap();
        assert!(f.increments(2).is_err());
        let mut short = vec![0.0; 3];
        assert!(f.fill(0, &mut short).is_err());
    }
}
