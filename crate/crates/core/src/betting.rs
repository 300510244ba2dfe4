//! Non-asymptotic intervals for the mean from bounded increments, by
//! inverting a betting capital process over a grid of candidate means.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 1000;

/// Almost-sure range of the increments f + (y - f) ξ/π.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementBounds {
    pub lo: f64,
    pub hi: f64,
}

/// Envelope of f + (y - f) ξ/π for f, y ∈ [y_lo, y_hi] and π ≥ pi_min.
pub fn increment_bounds(y_lo: f64, y_hi: f64, pi_min: f64) -> Result<IncrementBounds> {
    if !(pi_min > 0.0 && pi_min <= 1.0) {
        return Err(Error::Argument(format!("minimum probability {pi_min} outside (0, 1]")));
    }
    if !(y_lo < y_hi) || !y_lo.is_finite() || !y_hi.is_finite() {
        return Err(Error::Argument(format!("label range [{y_lo}, {y_hi}] is empty")));
    }
    let spread = (y_hi - y_lo) / pi_min;
    Ok(IncrementBounds { lo: y_lo - spread, hi: y_hi + spread })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BettingInterval {
    pub lo: f64,
    pub hi: f64,
    /// No candidate survived and the least-rejected grid point was returned.
    pub degenerate: bool,
}

/// Wealth path and bets of the hedged capital process at candidate `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapitalPath {
    /// W_0 = 1, W_1, ..., W_n.
    pub wealth: Vec<f64>,
    /// λ_1, ..., λ_n.
    pub bets: Vec<f64>,
}

/// Running regularized variance: prior 1/4 with weight one observation.
struct RunningVariance {
    sum: f64,
    sq: f64,
    count: f64,
}

impl RunningVariance {
    fn new() -> Self {
        RunningVariance { sum: 0.5, sq: 0.25, count: 1.0 }
    }

    fn value(&self) -> f64 {
        self.sq / self.count
    }

    fn push(&mut self, z: f64) {
        let mean = self.sum / self.count;
        self.sq += (z - mean).powi(2);
        self.sum += z;
        self.count += 1.0;
    }
}

fn bet(m: f64, var_prev: f64, s: usize, log_term: f64) -> f64 {
    let cap = 0.5 / m.max(1.0 - m);
    cap.min((2.0 * log_term / (var_prev * s as f64)).sqrt())
}

/// W_t(m) = ½ Π (1 + λ_s (Z_s - m)) + ½ Π (1 - λ_s (Z_s - m)), with
/// λ_s computed from Z_1..Z_{s-1} only. `z` must lie in [0, 1].
pub fn capital_process(z: &[f64], m: f64, alpha: f64) -> CapitalPath {
    let log_term = (2.0 / alpha).ln();
    let mut rv = RunningVariance::new();
    let (mut up, mut down) = (1.0f64, 1.0f64);
    let mut wealth = Vec::with_capacity(z.len() + 1);
    let mut bets = Vec::with_capacity(z.len());
    wealth.push(1.0);
    for (k, &zs) in z.iter().enumerate() {
        let lambda = bet(m, rv.value(), k + 1, log_term);
        up *= 1.0 + lambda * (zs - m);
        down *= 1.0 - lambda * (zs - m);
        bets.push(lambda);
        wealth.push(0.5 * (up + down));
        rv.push(zs);
    }
    CapitalPath { wealth, bets }
}

/// Terminal wealth and running maximum, without storing the path.
fn wealth_summary(z: &[f64], m: f64, log_term: f64) -> (f64, f64) {
    let mut rv = RunningVariance::new();
    let (mut up, mut down) = (1.0f64, 1.0f64);
    let mut max = 1.0f64;
    for (k, &zs) in z.iter().enumerate() {
        let lambda = bet(m, rv.value(), k + 1, log_term);
        up *= 1.0 + lambda * (zs - m);
        down *= 1.0 - lambda * (zs - m);
        max = max.max(0.5 * (up + down));
        rv.push(zs);
    }
    (0.5 * (up + down), max)
}

fn rescale(increments: &[f64], bounds: &IncrementBounds) -> Result<Vec<f64>> {
    if !(bounds.lo < bounds.hi) {
        return Err(Error::Argument("increment bounds must satisfy lo < hi".into()));
    }
    let width = bounds.hi - bounds.lo;
    increments
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d < bounds.lo || d > bounds.hi || !d.is_finite() {
                Err(Error::Argument(format!(
                    "increment {i} = {d} outside [{}, {}]",
                    bounds.lo, bounds.hi
                )))
            } else {
                Ok((d - bounds.lo) / width)
            }
        })
        .collect()
}

fn check(alpha: f64, grid_size: usize) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha {alpha} outside (0, 1)")));
    }
    if grid_size < 2 {
        return Err(Error::Argument("grid needs at least two points".into()));
    }
    Ok(())
}

fn grid(grid_size: usize) -> Vec<f64> {
    (0..grid_size).map(|k| k as f64 / (grid_size - 1) as f64).collect()
}

/// Convex hull of the grid means whose terminal wealth stays below 1/α,
/// mapped back to the increment scale.
pub fn betting_interval(
    increments: &[f64],
    bounds: &IncrementBounds,
    alpha: f64,
    grid_size: usize,
) -> Result<BettingInterval> {
    check(alpha, grid_size)?;
    let z = rescale(increments, bounds)?;
    let log_term = (2.0 / alpha).ln();
    let ms = grid(grid_size);
    let terminal: Vec<f64> = ms.par_iter().map(|&m| wealth_summary(&z, m, log_term).0).collect();
    let width = bounds.hi - bounds.lo;
    let back = |m: f64| bounds.lo + m * width;
    let survivors: Vec<f64> = ms
        .iter()
        .zip(&terminal)
        .filter(|(_, &w)| w < 1.0 / alpha)
        .map(|(&m, _)| m)
        .collect();
    if let (Some(&first), Some(&last)) = (survivors.first(), survivors.last()) {
        return Ok(BettingInterval { lo: back(first), hi: back(last), degenerate: false });
    }
    let (k, _) = terminal
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("grid is nonempty");
    let m = back(ms[k]);
    Ok(BettingInterval { lo: m, hi: m, degenerate: true })
}

/// Time-uniform version: after each prefix, the hull of grid means never yet
/// rejected. Intervals are nested.
pub fn confidence_sequence(
    increments: &[f64],
    bounds: &IncrementBounds,
    alpha: f64,
    grid_size: usize,
) -> Result<Vec<(f64, f64)>> {
    check(alpha, grid_size)?;
    let z = rescale(increments, bounds)?;
    let ms = grid(grid_size);
    let paths: Vec<Vec<f64>> = ms.par_iter().map(|&m| capital_process(&z, m, alpha).wealth).collect();
    let width = bounds.hi - bounds.lo;
    let mut alive = vec![true; ms.len()];
    let mut out = Vec::with_capacity(z.len());
    let mut last = (bounds.lo, bounds.hi);
    for t in 1..=z.len() {
        for (k, path) in paths.iter().enumerate() {
            if path[t] >= 1.0 / alpha {
                alive[k] = false;
            }
        }
        let first = alive.iter().position(|&a| a);
        let end = alive.iter().rposition(|&a| a);
        if let (Some(a), Some(b)) = (first, end) {
            last = (bounds.lo + ms[a] * width, bounds.lo + ms[b] * width);
        }
        out.push(last);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_examples() {
        assert_eq!(increment_bounds(0.0, 1.0, 0.5).unwrap(), IncrementBounds { lo: -2.0, hi: 3.0 });
        assert_eq!(increment_bounds(0.0, 1.0, 1.0).unwrap(), IncrementBounds { lo: -1.0, hi: 2.0 });
        let wide = increment_bounds(-1.0, 2.0, 0.5).unwrap();
        assert!(wide.lo < -2.0 && wide.hi > 3.0);
        assert!(increment_bounds(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn no_data_gives_full_range() {
        let b = IncrementBounds { lo: -2.0, hi: 3.0 };
        let ci = betting_interval(&[], &b, 0.1, 101).unwrap();
        assert_eq!((ci.lo, ci.hi, ci.degenerate), (-2.0, 3.0, false));
    }

    #[test]
    fn constant_increments_concentrate() {
        let b = IncrementBounds { lo: 0.0, hi: 1.0 };
        let ci = betting_interval(&vec![0.5; 10_000], &b, 0.1, 1001).unwrap();
        assert!(ci.lo <= 0.5 && ci.hi >= 0.5);
        assert!(ci.hi - ci.lo < 0.05);
    }

    #[test]
    fn bets_are_predictable() {
        let z = [0.2, 0.9, 0.4, 0.7, 0.1];
        let a = capital_process(&z, 0.4, 0.1);
        let mut z2 = z;
        z2[3] = 0.0;
        let b = capital_process(&z2, 0.4, 0.1);
        assert_eq!(a.bets[..4], b.bets[..4]);
        assert!(a.wealth.iter().all(|&w| w > 0.0));
    }
}
