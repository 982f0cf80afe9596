//! Piecewise-constant hazards on dyadic grids and the event/exposure
//! summaries the posterior samplers are built on.

use crate::data::SurvivalDataset;
use crate::error::{CoxError, Result};
use crate::truth::BaselineHazard;

/// Positive step function on the dyadic grid of [0,1] with K = 2^(level+1)
/// bins. Bin k is (k w, (k+1) w] with w = 2^-(level+1); bin 0 is closed
/// at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramHazard {
    level: usize,
    heights: Vec<f64>,
}

impl HistogramHazard {
    pub fn new(level: usize, heights: Vec<f64>) -> Result<Self> {
        let k = 1usize
            .checked_shl(level as u32 + 1)
            .ok_or_else(|| CoxError::Domain(format!("level {level} too large")))?;
        if heights.len() != k {
            return Err(CoxError::Domain(format!(
                "expected {k} heights for level {level}, got {}",
                heights.len()
            )));
        }
        if heights.iter().any(|h| !h.is_finite() || *h <= 0.0) {
            return Err(CoxError::Domain("heights must be finite and positive".into()));
        }
        Ok(Self { level, heights })
    }

    /// Constant hazard of the given value on 2^(level+1) bins.
    pub fn constant(level: usize, value: f64) -> Result<Self> {
        Self::new(level, vec![value; 1 << (level + 1)])
    }

    /// Bin-average discretization of a baseline hazard: height k is the
    /// exact integral of `lambda0` over bin k divided by the bin width, so
    /// the cumulative hazard at every bin boundary is preserved exactly.
    pub fn discretize(level: usize, lambda0: &BaselineHazard) -> Result<Self> {
        let k = 1usize << (level + 1);
        let w = bin_width(level);
        let heights = (0..k)
            .map(|j| {
                let left = j as f64 * w;
                let right = (j + 1) as f64 * w;
                (lambda0.cumulative(right) - lambda0.cumulative(left)) / w
            })
            .collect();
        Self::new(level, heights)
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_bins(&self) -> usize {
        self.heights.len()
    }

    pub fn bin_width(&self) -> f64 {
        bin_width(self.level)
    }

    pub fn heights(&self) -> &[f64] {
        &self.heights
    }

    /// lambda(t) for t in [0,1], under the left-open bin convention.
    pub fn hazard(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        Ok(self.heights[bin_index(t, self.level)])
    }

    /// Lambda(t) = sum_k lambda_k |I_k intersect [0,t]|; piecewise linear
    /// and nondecreasing in t.
    pub fn cumulative(&self, t: f64) -> Result<f64> {
        check_unit_interval(t)?;
        let w = self.bin_width();
        let idx = if t == 0.0 { 0 } else { bin_index(t, self.level) };
        let mut acc = 0.0;
        for k in 0..idx {
            acc += self.heights[k] * w;
        }
        acc + self.heights[idx] * (t - idx as f64 * w)
    }

    /// Lambda(1) computed as the exact bin sum.
    pub fn total(&self) -> f64 {
        let w = self.bin_width();
        self.heights.iter().map(|h| h * w).sum()
    }

}

/// Cumulative hazard of the step function `heights` at each subject's
/// follow-up time, O(n + K). `heights` must live on the summary's grid.
pub(crate) fn cumulative_at_subjects(
    heights: &[f64],
    summary: &ExposureSummary,
    prefix: &mut Vec<f64>,
    out: &mut Vec<f64>,
) {
    let w = bin_width(summary.level());
    prefix.clear();
    prefix.push(0.0);
    let mut acc = 0.0;
    for h in heights {
        acc += h * w;
        prefix.push(acc);
    }
    out.clear();
    out.extend(
        summary
            .rows
            .iter()
            .map(|row| prefix[row.bin] + heights[row.bin] * row.partial),
    );
}

pub(crate) fn bin_width(level: usize) -> f64 {
    // exact power of two
    1.0 / (1usize << (level + 1)) as f64
}

/// Bin containing `t` under the convention: bin 0 = [0, w], bin k = (kw, (k+1)w].
/// `t` must lie in [0, 1].
pub(crate) fn bin_index(t: f64, level: usize) -> usize {
    let k = 1usize << (level + 1);
    if t <= 0.0 {
        return 0;
    }
    // t / w = t * 2^(level+1) is exact scaling by a power of two
    let x = t * k as f64;
    let fl = x.floor();
    let mut idx = fl as usize;
    if x == fl && idx > 0 {
        idx -= 1; // boundary points belong to the bin on their left
    }
    idx.min(k - 1)
}

fn check_unit_interval(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CoxError::Domain(format!("time {t} outside [0,1]")));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub(crate) struct ExposureRow {
    /// Bin containing the follow-up time.
    pub bin: usize,
    /// Exposure within that bin: y - left edge.
    pub partial: f64,
}

/// Per-bin event counts and per-subject exposure times on a dyadic grid.
///
/// Row i of the exposure matrix is `w` for every bin strictly before the
/// subject's bin, `y_i - left_edge` in the subject's bin and 0 after; the
/// compact representation stores only the bin index and the partial term
/// and reconstitutes matrix entries on demand.
#[derive(Debug, Clone)]
pub struct ExposureSummary {
    level: usize,
    /// Events per bin.
    d: Vec<f64>,
    rows: Vec<ExposureRow>,
    /// Subject indices grouped by bin, for O(n + K) weighted bin sums.
    by_bin: Vec<Vec<usize>>,
}

impl ExposureSummary {
    /// Build the exposure/event summary of `data` on the level-`level` grid.
    pub fn build(data: &SurvivalDataset, level: usize) -> Result<Self> {
        let k = 1usize
            .checked_shl(level as u32 + 1)
            .ok_or_else(|| CoxError::Domain(format!("level {level} too large")))?;
        let w = bin_width(level);
        let mut d = vec![0.0; k];
        let mut rows = Vec::with_capacity(data.n());
        let mut by_bin = vec![Vec::new(); k];
        for (i, s) in data.subjects().iter().enumerate() {
            let bin = bin_index(s.y, level);
            if s.delta == 1 {
                d[bin] += 1.0;
            }
            by_bin[bin].push(i);
            rows.push(ExposureRow {
                bin,
                partial: s.y - bin as f64 * w,
            });
        }
        Ok(Self {
            level,
            d,
            rows,
            by_bin,
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn num_bins(&self) -> usize {
        self.d.len()
    }

    pub fn bin_width(&self) -> f64 {
        bin_width(self.level)
    }

    /// Event count in bin k.
    pub fn events(&self) -> &[f64] {
        &self.d
    }

    /// Exposure matrix entry Y_{ik} = |[0, y_i] intersect I_k|.
    pub fn exposure(&self, subject: usize, bin: usize) -> f64 {
        let row = &self.rows[subject];
        if bin < row.bin {
            self.bin_width()
        } else if bin == row.bin {
            row.partial
        } else {
            0.0
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// T_k(theta) = sum_i Y_{ik} exp(theta'z_i) for all bins, given the
    /// per-subject weights u_i = exp(theta'z_i). O(n + K).
    pub fn weighted_exposure(&self, weights: &[f64], out: &mut Vec<f64>) {
        let k = self.num_bins();
        let w = self.bin_width();
        out.clear();
        out.resize(k, 0.0);
        let mut bin_weight = vec![0.0; k];
        for (bin, subjects) in self.by_bin.iter().enumerate() {
            for &i in subjects {
                bin_weight[bin] += weights[i];
                out[bin] += self.rows[i].partial * weights[i];
            }
        }
        // subjects in later bins contribute a full width w to this bin
        let mut suffix = 0.0;
        for bin in (0..k).rev() {
            out[bin] += w * suffix;
            suffix += bin_weight[bin];
        }
    }
}
