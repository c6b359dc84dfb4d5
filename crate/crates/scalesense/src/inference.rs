//! Discretized Bayesian posterior over the global scale.
//!
//! The posterior lives on a fixed grid over `[d_min, d_max]` and is updated
//! multiplicatively, one height observation at a time, in log space. Each
//! observation contributes the mixture likelihood
//!
//! ```text
//! L(d) = Σ_m  N(d·D − H_m; 0, σ_D²·D²) · p(H_m)
//! ```
//!
//! over the class prior bins `H_m`, so that as a function of `d` the
//! single-bin likelihood has standard deviation `σ_D` around `H_m / D`.
//!
//! Likelihood evaluations are pure and may run in parallel; grid updates are
//! applied by a single writer in arrival order (and commute anyway).

use crate::geometry::{
    make_observation, GeometryError, HeightObservation, ObservationConfig, VerticalDirection,
};
use crate::priors::{HeightHistogram, PriorRegistry};
use crate::simulator::Frame;
use serde::{Deserialize, Serialize};

/// Per-bin likelihood floor applied before taking logs; keeps a single wild
/// observation from zeroing the posterior.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub enum InferenceError {
    InvalidBounds { d_min: f64, d_max: f64, n_bins: usize },
    /// Every likelihood entry fell at or below the floor; the observation is
    /// rejected and the posterior left unchanged.
    DegenerateUpdate,
}

impl std::fmt::Display for InferenceError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InferenceError::InvalidBounds { d_min, d_max, n_bins } => write!(
                f,
                "invalid grid bounds [{d_min}, {d_max}] with {n_bins} bins"
            ),
            InferenceError::DegenerateUpdate => {
                write!(f, "all likelihood entries at or below the floor")
            }
        }
    }
}

impl std::error::Error for InferenceError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    Linear,
    Logarithmic,
}

/// Discretized posterior density over the scale.
///
/// `log_weights` holds log densities at bin centers; after every update the
/// grid is renormalized so `Σ exp(log_weights)·Δ = 1` over the bin widths.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleGrid {
    d_min: f64,
    d_max: f64,
    spacing: GridSpacing,
    edges: Vec<f64>,
    centers: Vec<f64>,
    widths: Vec<f64>,
    log_weights: Vec<f64>,
    updates: u64,
}

/// Moments of the posterior; entropy uses the discrete-mass convention
/// (−Σ m·ln m in nats), so a single loaded bin has entropy zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorStats {
    pub mean: f64,
    pub variance: f64,
    pub entropy: f64,
}

/// State of the posterior after an update, for tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSnapshot {
    pub frame: u64,
    pub map_d: f64,
    pub mean_d: f64,
    pub variance_d: f64,
    pub entropy: f64,
    pub update_count: u64,
}

/// Mode of a single observation's likelihood; one noisy "measurement" of the
/// true scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalEstimate {
    pub frame: u64,
    pub feature_id: u64,
    pub mode: f64,
}

impl ScaleGrid {
    /// Normalized uniform density over the grid: uniform in `d` for linear
    /// spacing, uniform in `log d` for logarithmic spacing.
    pub fn uniform(
        d_min: f64,
        d_max: f64,
        n_bins: usize,
        spacing: GridSpacing,
    ) -> Result<Self, InferenceError> {
        if !(d_min.is_finite() && d_max.is_finite() && 0.0 < d_min && d_min < d_max && n_bins >= 2)
        {
            return Err(InferenceError::InvalidBounds { d_min, d_max, n_bins });
        }
        let mut edges = Vec::with_capacity(n_bins + 1);
        match spacing {
            GridSpacing::Linear => {
                let step = (d_max - d_min) / n_bins as f64;
                for i in 0..=n_bins {
                    edges.push(d_min + step * i as f64);
                }
            }
            GridSpacing::Logarithmic => {
                let log_step = (d_max / d_min).ln() / n_bins as f64;
                for i in 0..=n_bins {
                    edges.push(d_min * (log_step * i as f64).exp());
                }
            }
        }
        // Pin the last edge so the bounds are exact.
        edges[n_bins] = d_max;
        let centers: Vec<f64> = (0..n_bins)
            .map(|i| match spacing {
                GridSpacing::Linear => 0.5 * (edges[i] + edges[i + 1]),
                GridSpacing::Logarithmic => (edges[i] * edges[i + 1]).sqrt(),
            })
            .collect();
        let widths: Vec<f64> = (0..n_bins).map(|i| edges[i + 1] - edges[i]).collect();
        // Equal mass per bin: exactly normalized by construction.
        let mass = 1.0 / n_bins as f64;
        let log_weights = widths.iter().map(|w| (mass / w).ln()).collect();
        Ok(Self {
            d_min,
            d_max,
            spacing,
            edges,
            centers,
            widths,
            log_weights,
            updates: 0,
        })
    }

    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn d_max(&self) -> f64 {
        self.d_max
    }

    pub fn spacing(&self) -> GridSpacing {
        self.spacing
    }

    pub fn n_bins(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn widths(&self) -> &[f64] {
        &self.widths
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Number of multiplicative updates applied so far.
    pub fn update_count(&self) -> u64 {
        self.updates
    }

    /// Density at a bin center.
    pub fn density(&self, bin: usize) -> f64 {
        self.log_weights[bin].exp()
    }

    /// Probability mass of a bin (density × width).
    pub fn mass(&self, bin: usize) -> f64 {
        (self.log_weights[bin] + self.widths[bin].ln()).exp()
    }

    /// Largest bin width relative to its center; one-bin resolution bound
    /// used by convergence checks.
    pub fn max_relative_bin_width(&self) -> f64 {
        (0..self.n_bins())
            .map(|i| self.widths[i] / self.centers[i])
            .fold(0.0, f64::max)
    }

    /// Multiply the posterior by a likelihood array and renormalize, all in
    /// log space. On `DegenerateUpdate` the grid is left unchanged.
    pub fn update(&mut self, likelihood: &[f64]) -> Result<(), InferenceError> {
        assert_eq!(
            likelihood.len(),
            self.n_bins(),
            "likelihood length must match the grid"
        );
        assert!(
            likelihood.iter().all(|&l| l.is_finite() && l >= 0.0),
            "likelihood entries must be finite and non-negative"
        );
        if !likelihood.iter().any(|&l| l > LIKELIHOOD_FLOOR) {
            return Err(InferenceError::DegenerateUpdate);
        }
        for (w, &l) in self.log_weights.iter_mut().zip(likelihood) {
            *w += l.max(LIKELIHOOD_FLOOR).ln();
        }
        self.renormalize();
        self.updates += 1;
        Ok(())
    }

    fn renormalize(&mut self) {
        let log_z = log_sum_exp(
            self.log_weights
                .iter()
                .zip(&self.widths)
                .map(|(&lw, &w)| lw + w.ln()),
        );
        for w in &mut self.log_weights {
            *w -= log_z;
        }
    }

    /// Center of the maximum-density bin; ties break to the lowest index.
    pub fn map_estimate(&self) -> f64 {
        self.centers[argmax(&self.log_weights)]
    }

    pub fn stats(&self) -> PosteriorStats {
        let mut mean = 0.0;
        for i in 0..self.n_bins() {
            mean += self.mass(i) * self.centers[i];
        }
        let mut variance = 0.0;
        let mut entropy = 0.0;
        for i in 0..self.n_bins() {
            let m = self.mass(i);
            let dev = self.centers[i] - mean;
            variance += m * dev * dev;
            if m > 0.0 {
                entropy -= m * m.ln();
            }
        }
        PosteriorStats { mean, variance, entropy }
    }

    pub fn snapshot(&self, frame: u64) -> PosteriorSnapshot {
        let stats = self.stats();
        PosteriorSnapshot {
            frame,
            map_d: self.map_estimate(),
            mean_d: stats.mean,
            variance_d: stats.variance,
            entropy: stats.entropy,
            update_count: self.updates,
        }
    }

    /// Total probability mass; one up to accumulated rounding.
    pub fn total_mass(&self) -> f64 {
        (0..self.n_bins()).map(|i| self.mass(i)).sum()
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mixture likelihood of one observation over all grid points; not
/// normalized (it is a likelihood in `d`, not a density).
pub fn observation_likelihood(
    obs: &HeightObservation,
    prior: &HeightHistogram,
    grid: &ScaleGrid,
) -> Vec<f64> {
    debug_assert!(obs.height > 0.0 && obs.sigma > 0.0);
    let sigma_abs = obs.sigma * obs.height;
    let norm = 1.0 / (sigma_abs * (2.0 * std::f64::consts::PI).sqrt());
    grid.centers()
        .iter()
        .map(|&d| {
            prior
                .bins()
                .iter()
                .map(|bin| {
                    let z = (d * obs.height - bin.height_m) / sigma_abs;
                    bin.prob * norm * (-0.5 * z * z).exp()
                })
                .sum()
        })
        .collect()
}

/// Mode of a likelihood array over the grid; ties break to the lowest index.
pub fn local_mode(likelihood: &[f64], grid: &ScaleGrid) -> f64 {
    assert_eq!(likelihood.len(), grid.n_bins());
    grid.centers()[argmax(likelihood)]
}

/// Context shared by every observation of a run.
#[derive(Debug, Clone, Copy)]
pub struct ProcessContext {
    pub vertical: VerticalDirection,
    pub observation: ObservationConfig,
    /// Optional gate on the propagated height sigma: observations with
    /// `sigma > gate` are skipped. Off by default.
    pub sigma_gate: Option<f64>,
}

impl ProcessContext {
    pub fn new(vertical: VerticalDirection) -> Self {
        Self {
            vertical,
            observation: ObservationConfig::default(),
            sigma_gate: None,
        }
    }
}

/// Per-frame counters for skipped and applied observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameDiagnostics {
    /// Updates applied to the posterior.
    pub observations: u64,
    /// Feature projections outside (or behind) a detection.
    pub outside: u64,
    /// Observation construction failures (degenerate line, tangent clip, …).
    pub dropped: u64,
    /// Detections whose class has no registered prior.
    pub unknown_class: u64,
    /// Updates rejected because the likelihood was entirely at the floor.
    pub degenerate: u64,
    /// Observations skipped by the sigma gate.
    pub gated: u64,
}

impl FrameDiagnostics {
    pub fn absorb(&mut self, other: &FrameDiagnostics) {
        self.observations += other.observations;
        self.outside += other.outside;
        self.dropped += other.dropped;
        self.unknown_class += other.unknown_class;
        self.degenerate += other.degenerate;
        self.gated += other.gated;
    }
}

/// Outcome of processing one frame.
#[derive(Debug, Clone)]
pub struct FrameResult {
    pub snapshot: PosteriorSnapshot,
    pub local_estimates: Vec<LocalEstimate>,
    pub diagnostics: FrameDiagnostics,
}

/// Process every (feature, detection) pair of a frame, invoking `on_update`
/// after each applied posterior update with the observation, its local mode,
/// and the grid state.
pub fn process_frame_with(
    grid: &mut ScaleGrid,
    frame: &Frame,
    registry: &PriorRegistry,
    ctx: &ProcessContext,
    mut on_update: impl FnMut(&HeightObservation, f64, &ScaleGrid),
) -> FrameResult {
    let mut diagnostics = FrameDiagnostics::default();
    let mut local_estimates = Vec::new();
    for det in &frame.detections {
        let prior = match registry.lookup(det.class_id) {
            Ok(p) => p,
            Err(_) => {
                diagnostics.unknown_class += 1;
                continue;
            }
        };
        for feat in &frame.features {
            let obs = match make_observation(
                feat,
                det,
                &frame.pose,
                &frame.intrinsics,
                &ctx.vertical,
                frame.index,
                &ctx.observation,
            ) {
                Ok(obs) => obs,
                Err(GeometryError::FeatureOutsideBox) | Err(GeometryError::BehindCamera) => {
                    diagnostics.outside += 1;
                    continue;
                }
                Err(_) => {
                    diagnostics.dropped += 1;
                    continue;
                }
            };
            if let Some(gate) = ctx.sigma_gate {
                if obs.sigma > gate {
                    diagnostics.gated += 1;
                    continue;
                }
            }
            let likelihood = observation_likelihood(&obs, prior, grid);
            match grid.update(&likelihood) {
                Ok(()) => {
                    let mode = local_mode(&likelihood, grid);
                    local_estimates.push(LocalEstimate {
                        frame: frame.index,
                        feature_id: obs.feature_id,
                        mode,
                    });
                    diagnostics.observations += 1;
                    on_update(&obs, mode, grid);
                }
                Err(InferenceError::DegenerateUpdate) => diagnostics.degenerate += 1,
                Err(e) => unreachable!("update cannot fail otherwise: {e}"),
            }
        }
    }
    FrameResult {
        snapshot: grid.snapshot(frame.index),
        local_estimates,
        diagnostics,
    }
}

/// [`process_frame_with`] without the per-update callback.
pub fn process_frame(
    grid: &mut ScaleGrid,
    frame: &Frame,
    registry: &PriorRegistry,
    ctx: &ProcessContext,
) -> FrameResult {
    process_frame_with(grid, frame, registry, ctx, |_, _, _| {})
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::HeightObservation;
    use crate::priors::HeightHistogram;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn obs(height: f64, sigma: f64) -> HeightObservation {
        HeightObservation {
            height,
            sigma,
            class_id: 0,
            frame: 0,
            feature_id: 0,
        }
    }

    #[test]
    fn uniform_linear_grid_density() {
        let grid = ScaleGrid::uniform(0.5, 2.0, 4, GridSpacing::Linear).unwrap();
        for i in 0..4 {
            assert_relative_eq!(grid.density(i), 1.0 / 1.5, epsilon = 1e-12);
        }
        assert_relative_eq!(grid.total_mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn uniform_log_grid_is_flat_in_log_d() {
        let grid = ScaleGrid::uniform(0.1, 10.0, 64, GridSpacing::Logarithmic).unwrap();
        // Equal mass per bin means density ∝ 1/d.
        for i in 0..64 {
            assert_relative_eq!(grid.mass(i), 1.0 / 64.0, epsilon = 1e-12);
        }
        let d0 = grid.density(0) * grid.centers()[0];
        for i in 1..64 {
            assert_relative_eq!(grid.density(i) * grid.centers()[i], d0, epsilon = 1e-9);
        }
    }

    #[test]
    fn invalid_bounds_rejected() {
        assert!(matches!(
            ScaleGrid::uniform(2.0, 0.5, 16, GridSpacing::Linear),
            Err(InferenceError::InvalidBounds { .. })
        ));
        assert!(matches!(
            ScaleGrid::uniform(-1.0, 0.5, 16, GridSpacing::Linear),
            Err(InferenceError::InvalidBounds { .. })
        ));
        assert!(matches!(
            ScaleGrid::uniform(0.5, 2.0, 1, GridSpacing::Linear),
            Err(InferenceError::InvalidBounds { .. })
        ));
    }

    #[test]
    fn delta_prior_likelihood_peaks_at_height_ratio() {
        let grid = ScaleGrid::uniform(0.5, 4.0, 2048, GridSpacing::Linear).unwrap();
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let lik = observation_likelihood(&obs(0.5, 0.1), &prior, &grid);
        let mode = local_mode(&lik, &grid);
        assert!((mode - 2.0).abs() <= grid.widths()[0]);

        // The likelihood as a function of d is a Gaussian with std sigma:
        // compare the normalized second moment on the grid.
        let total: f64 = lik
            .iter()
            .zip(grid.widths())
            .map(|(l, w)| l * w)
            .sum();
        let mean: f64 = lik
            .iter()
            .zip(grid.centers())
            .zip(grid.widths())
            .map(|((l, c), w)| l * c * w)
            .sum::<f64>()
            / total;
        let var: f64 = lik
            .iter()
            .zip(grid.centers())
            .zip(grid.widths())
            .map(|((l, c), w)| l * (c - mean) * (c - mean) * w)
            .sum::<f64>()
            / total;
        assert_relative_eq!(mean, 2.0, epsilon = 1e-6);
        assert_relative_eq!(var.sqrt(), 0.1, epsilon = 1e-3);
    }

    #[test]
    fn two_bin_prior_gives_bimodal_likelihood() {
        let grid = ScaleGrid::uniform(0.5, 3.0, 1000, GridSpacing::Linear).unwrap();
        let prior = HeightHistogram::new(
            0,
            "x",
            vec![
                crate::priors::HeightBin { height_m: 1.0, prob: 0.5 },
                crate::priors::HeightBin { height_m: 2.0, prob: 0.5 },
            ],
        )
        .unwrap();
        let lik = observation_likelihood(&obs(1.0, 0.05), &prior, &grid);
        // Local maxima near d = 1 and d = 2.
        let maxima: Vec<f64> = (1..grid.n_bins() - 1)
            .filter(|&i| lik[i] > lik[i - 1] && lik[i] > lik[i + 1])
            .map(|i| grid.centers()[i])
            .collect();
        assert_eq!(maxima.len(), 2, "expected bimodal likelihood, got {maxima:?}");
        assert!((maxima[0] - 1.0).abs() < 0.01);
        assert!((maxima[1] - 2.0).abs() < 0.01);
    }

    #[test]
    fn huge_sigma_flattens_likelihood() {
        let grid = ScaleGrid::uniform(0.5, 2.0, 256, GridSpacing::Linear).unwrap();
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let lik = observation_likelihood(&obs(1.0, 1e3), &prior, &grid);
        let max = lik.iter().cloned().fold(0.0, f64::max);
        let min = lik.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 1.0 + 1e-3);
    }

    #[test]
    fn flat_prior_update_yields_normalized_likelihood() {
        let mut grid = ScaleGrid::uniform(0.5, 2.0, 128, GridSpacing::Linear).unwrap();
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let lik = observation_likelihood(&obs(1.0, 0.2), &prior, &grid);
        grid.update(&lik).unwrap();
        let z: f64 = lik.iter().zip(grid.widths()).map(|(l, w)| l * w).sum();
        for i in 0..grid.n_bins() {
            assert_relative_eq!(grid.density(i), lik[i] / z, epsilon = 1e-9);
        }
    }

    #[test]
    fn repeated_update_narrows_posterior() {
        let mut grid = ScaleGrid::uniform(0.5, 4.0, 4096, GridSpacing::Linear).unwrap();
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let lik = observation_likelihood(&obs(0.5, 0.15), &prior, &grid);
        grid.update(&lik).unwrap();
        let var_once = grid.stats().variance;
        grid.update(&lik).unwrap();
        let var_twice = grid.stats().variance;
        assert!(var_twice < var_once);
        // Gaussian likelihood applied twice halves the variance on a fine grid.
        assert_relative_eq!(var_twice, var_once / 2.0, epsilon = 1e-3 * var_once);
    }

    #[test]
    fn update_order_does_not_matter() {
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let base = ScaleGrid::uniform(0.5, 4.0, 512, GridSpacing::Logarithmic).unwrap();
        let observations: Vec<HeightObservation> = (0..5)
            .map(|i| obs(0.4 + 0.05 * i as f64, 0.05 + 0.02 * i as f64))
            .collect();
        let liks: Vec<Vec<f64>> = observations
            .iter()
            .map(|o| observation_likelihood(o, &prior, &base))
            .collect();
        let mut forward = base.clone();
        for l in &liks {
            forward.update(l).unwrap();
        }
        let mut reversed = base.clone();
        for l in liks.iter().rev() {
            reversed.update(l).unwrap();
        }
        for (a, b) in forward.log_weights().iter().zip(reversed.log_weights()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_holds_after_every_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prior = HeightHistogram::delta(0, "x", 0.3).unwrap();
        let mut grid = ScaleGrid::uniform(0.05, 20.0, 4096, GridSpacing::Logarithmic).unwrap();
        for _ in 0..200 {
            let o = obs(0.15 * (1.0 + 0.1 * (rng.random::<f64>() - 0.5)), 0.02);
            let lik = observation_likelihood(&o, &prior, &grid);
            grid.update(&lik).unwrap();
            assert!((grid.total_mass() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_update_leaves_grid_unchanged() {
        let mut grid = ScaleGrid::uniform(0.5, 2.0, 64, GridSpacing::Linear).unwrap();
        let before = grid.clone();
        let zeros = vec![0.0; 64];
        assert_eq!(grid.update(&zeros), Err(InferenceError::DegenerateUpdate));
        assert_eq!(grid, before);
        assert_eq!(grid.update_count(), 0);
    }

    #[test]
    fn map_estimate_tie_breaks_to_lowest_bin() {
        let grid = ScaleGrid::uniform(1.0, 2.0, 10, GridSpacing::Linear).unwrap();
        assert_relative_eq!(grid.map_estimate(), grid.centers()[0]);
    }

    #[test]
    fn map_estimate_finds_loaded_bin() {
        let mut grid = ScaleGrid::uniform(0.5, 2.0, 64, GridSpacing::Linear).unwrap();
        let mut lik = vec![1e-12; 64];
        let target = 40;
        lik[target] = 1.0;
        grid.update(&lik).unwrap();
        assert_relative_eq!(grid.map_estimate(), grid.centers()[target]);
    }

    #[test]
    fn map_estimate_within_half_bin_of_continuous_mode() {
        let mut grid = ScaleGrid::uniform(0.5, 4.0, 333, GridSpacing::Linear).unwrap();
        let d0 = 1.7371;
        let lik: Vec<f64> = grid
            .centers()
            .iter()
            .map(|&c| (-0.5 * ((c - d0) / 0.3_f64).powi(2)).exp())
            .collect();
        grid.update(&lik).unwrap();
        assert!((grid.map_estimate() - d0).abs() <= 0.5 * grid.widths()[0] + 1e-12);
    }

    #[test]
    fn stats_of_uniform_grid() {
        let grid = ScaleGrid::uniform(1.0, 2.0, 1000, GridSpacing::Linear).unwrap();
        let stats = grid.stats();
        assert!((stats.mean - 1.5).abs() < grid.widths()[0]);
        // Uniform on [1,2] has variance 1/12.
        assert!((stats.variance - 1.0 / 12.0).abs() < 1e-3);
    }

    #[test]
    fn stats_of_single_loaded_bin() {
        let mut grid = ScaleGrid::uniform(0.5, 2.0, 64, GridSpacing::Linear).unwrap();
        let mut lik = vec![0.0; 64];
        lik[10] = 1.0;
        grid.update(&lik).unwrap();
        let stats = grid.stats();
        assert_relative_eq!(stats.mean, grid.centers()[10], epsilon = 1e-9);
        assert!(stats.variance.abs() < 1e-18);
        assert!(stats.entropy.abs() < 1e-12);
    }

    #[test]
    fn stats_of_two_equal_bins() {
        // Linear grid over [0,4] with 2 bins has centers 1 and 3.
        let grid = ScaleGrid::uniform(1e-12, 4.0, 2, GridSpacing::Linear).unwrap();
        let stats = grid.stats();
        assert_relative_eq!(stats.mean, 2.0, epsilon = 1e-9);
        assert_relative_eq!(stats.variance, 1.0, epsilon = 1e-9);
        assert_relative_eq!(stats.entropy, 2.0_f64.ln().abs(), epsilon = 1e-9);
    }

    #[test]
    fn argmax_scale_equivariance() {
        let grid = ScaleGrid::uniform(0.05, 20.0, 4096, GridSpacing::Logarithmic).unwrap();
        let scale = 2.0;
        let prior = HeightHistogram::delta(0, "x", 0.5).unwrap();
        let scaled = HeightHistogram::delta(0, "x", 0.5 * scale).unwrap();
        let o = obs(0.25, 0.03);
        let mode = local_mode(&observation_likelihood(&o, &prior, &grid), &grid);
        let mode_scaled = local_mode(&observation_likelihood(&o, &scaled, &grid), &grid);
        let continuous = 0.5 / 0.25;
        let bin_w = grid.max_relative_bin_width();
        assert!((mode - continuous).abs() / continuous <= bin_w);
        assert!((mode_scaled - scale * continuous).abs() / (scale * continuous) <= bin_w);
    }

    #[test]
    fn posterior_concentrates_with_more_observations() {
        let prior = HeightHistogram::delta(0, "x", 0.5).unwrap();
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut grid = ScaleGrid::uniform(0.05, 20.0, 2048, GridSpacing::Logarithmic).unwrap();
            let mut var_at_20 = None;
            for k in 0..200 {
                let noise = 0.02 * (rng.random::<f64>() - 0.5);
                let o = obs(0.25 + noise, 0.05);
                let lik = observation_likelihood(&o, &prior, &grid);
                grid.update(&lik).unwrap();
                if k == 19 {
                    var_at_20 = Some(grid.stats().variance);
                }
            }
            let var_at_200 = grid.stats().variance;
            assert!(
                var_at_200 < var_at_20.unwrap(),
                "seed {seed}: variance did not shrink"
            );
        }
    }

    #[test]
    fn log_space_matches_linear_space_reference() {
        let prior = HeightHistogram::delta(0, "x", 1.0).unwrap();
        let mut grid = ScaleGrid::uniform(0.5, 4.0, 256, GridSpacing::Linear).unwrap();
        // Independent linear-space oracle on the same grid.
        let mut linear: Vec<f64> = (0..256).map(|i| grid.density(i)).collect();
        let widths: Vec<f64> = grid.widths().to_vec();
        let observations: Vec<HeightObservation> =
            (0..10).map(|i| obs(0.45 + 0.01 * i as f64, 0.08)).collect();
        for o in &observations {
            let lik = observation_likelihood(o, &prior, &grid);
            grid.update(&lik).unwrap();
            for (w, l) in linear.iter_mut().zip(&lik) {
                *w *= l;
            }
            let z: f64 = linear.iter().zip(&widths).map(|(w, dx)| w * dx).sum();
            for w in &mut linear {
                *w /= z;
            }
        }
        for i in 0..256 {
            assert!(
                (grid.density(i) - linear[i]).abs() <= 1e-9 * linear[i].max(1.0),
                "bin {i}: {} vs {}",
                grid.density(i),
                linear[i]
            );
        }
    }
}
