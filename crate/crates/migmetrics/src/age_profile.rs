//! Smoothing, normalisation and peak extraction for migration age
//! schedules.
//!
//! The pipeline for a comparable schedule is smooth-then-normalise:
//! kernel regression onto the half-year grid 5.0, 5.5, ..., 65.0,
//! then division by the grid sum. The peak is the grid argmax, ties
//! broken toward the youngest age.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{AgeProfile, PROFILE_MAX_AGE, PROFILE_MIN_AGE};
use crate::stats::{self, StatsError};

/// Evaluation grid for smoothed schedules: 121 half-year steps.
pub fn half_year_grid() -> Vec<f64> {
    let steps = (PROFILE_MAX_AGE - PROFILE_MIN_AGE) as usize * 2 + 1;
    (0..steps)
        .map(|i| PROFILE_MIN_AGE as f64 + i as f64 * 0.5)
        .collect()
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("profile values sum to zero")]
    ZeroMass,
    #[error("profile is already smoothed; smoothing expects the raw schedule")]
    AlreadySmoothed,
    #[error("peak extraction expects a smoothed, normalised profile")]
    NotPrepared,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeakSummary {
    /// Age of the maximum, at half-year resolution.
    pub age_at_peak: f64,
    /// Normalised mass at the maximum.
    pub intensity_at_peak: f64,
    /// Set when every grid value ties (no meaningful peak).
    pub degenerate: bool,
}

/// Divide a profile by its mass so the values sum to one.
pub fn normalize(profile: &AgeProfile) -> Result<AgeProfile, ProfileError> {
    let total = profile.sum();
    if total <= 0.0 {
        return Err(ProfileError::ZeroMass);
    }
    let mut out = profile.clone();
    for v in &mut out.values {
        *v /= total;
    }
    out.normalized = true;
    Ok(out)
}

/// Kernel-smooth a raw single-year schedule onto the half-year grid.
pub fn smooth_profile(profile: &AgeProfile, bandwidth: f64) -> Result<AgeProfile, ProfileError> {
    if profile.smoothed {
        return Err(ProfileError::AlreadySmoothed);
    }
    let grid = half_year_grid();
    let values = stats::kernel_smooth(&profile.ages, &profile.values, bandwidth, &grid)?;
    Ok(AgeProfile {
        ages: grid,
        values,
        missing_ages: profile.missing_ages.clone(),
        normalized: false,
        smoothed: true,
    })
}

/// Smooth then normalise: the standard preparation for comparing
/// schedules across corpora.
pub fn prepare(profile: &AgeProfile, bandwidth: f64) -> Result<AgeProfile, ProfileError> {
    normalize(&smooth_profile(profile, bandwidth)?)
}

/// Grid argmax of a prepared profile. A flat profile reports the
/// youngest grid age, flagged degenerate.
pub fn peak(profile: &AgeProfile) -> Result<PeakSummary, ProfileError> {
    if !profile.smoothed || !profile.normalized {
        return Err(ProfileError::NotPrepared);
    }
    if profile.values.is_empty() {
        return Err(ProfileError::ZeroMass);
    }
    let mut best = 0usize;
    for (i, v) in profile.values.iter().enumerate() {
        if *v > profile.values[best] {
            best = i;
        }
    }
    let max = profile.values[best];
    let min = profile
        .values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let degenerate = (max - min).abs() <= 1e-12 * max.abs().max(1e-300);
    Ok(PeakSummary {
        age_at_peak: profile.ages[best],
        intensity_at_peak: max,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(values: Vec<f64>) -> AgeProfile {
        let ages: Vec<f64> = (PROFILE_MIN_AGE..=PROFILE_MAX_AGE).map(|a| a as f64).collect();
        assert_eq!(ages.len(), values.len());
        AgeProfile::from_values(ages, values)
    }

    #[test]
    fn normalize_flat_and_point() {
        let flat = raw(vec![2.0; 61]);
        let n = normalize(&flat).unwrap();
        assert!(n.values.iter().all(|v| (v - 1.0 / 61.0).abs() < 1e-15));
        assert!((n.sum() - 1.0).abs() < 1e-12);

        let mut point = vec![0.0; 61];
        point[10] = 0.37;
        let n = normalize(&raw(point)).unwrap();
        assert_eq!(n.values[10], 1.0);
    }

    #[test]
    fn normalize_idempotent() {
        let p = raw((0..61).map(|i| (i as f64 * 0.3).sin().abs() + 0.1).collect());
        let once = normalize(&p).unwrap();
        let twice = normalize(&once).unwrap();
        for (a, b) in once.values.iter().zip(&twice.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_zero_mass() {
        assert_eq!(
            normalize(&raw(vec![0.0; 61])).unwrap_err(),
            ProfileError::ZeroMass
        );
    }

    #[test]
    fn smooth_flat_stays_flat_and_grid_is_half_year() {
        let flat = raw(vec![0.04; 61]);
        let s = smooth_profile(&flat, 2.0).unwrap();
        assert_eq!(s.ages.len(), 121);
        assert_eq!(s.ages[0], 5.0);
        assert_eq!(s.ages[120], 65.0);
        assert!(s.values.iter().all(|v| (v - 0.04).abs() < 1e-9));
        assert!(s.smoothed);
    }

    #[test]
    fn smooth_rejects_zero_bandwidth() {
        let flat = raw(vec![0.04; 61]);
        assert!(matches!(
            smooth_profile(&flat, 0.0),
            Err(ProfileError::Stats(StatsError::BadBandwidth))
        ));
    }

    #[test]
    fn planted_bump_peaks_near_plant() {
        let values: Vec<f64> = (PROFILE_MIN_AGE..=PROFILE_MAX_AGE)
            .map(|a| {
                let x = a as f64;
                (-(x - 22.0) * (x - 22.0) / 10.0).exp()
            })
            .collect();
        let prepared = prepare(&raw(values), 2.0).unwrap();
        assert!((prepared.sum() - 1.0).abs() < 1e-9);
        let p = peak(&prepared).unwrap();
        assert!((p.age_at_peak - 22.0).abs() <= 0.5, "peak {}", p.age_at_peak);
        assert!(!p.degenerate);
    }

    #[test]
    fn peak_reads_published_style_profile() {
        // A normalised profile with a unique max of 0.0457 at age 20.5.
        let grid = half_year_grid();
        let mut values: Vec<f64> = grid
            .iter()
            .map(|&a| (-(a - 20.5f64) * (a - 20.5) / 60.0).exp())
            .collect();
        let peak_idx = grid.iter().position(|&a| a == 20.5).unwrap();
        // Scale so the max is exactly 0.0457, then push the remainder
        // of the unit mass evenly into the other cells.
        let other: f64 = values
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != peak_idx)
            .map(|(_, v)| *v)
            .sum();
        let spare = (1.0 - 0.0457) / other;
        for (i, v) in values.iter_mut().enumerate() {
            if i == peak_idx {
                *v = 0.0457;
            } else {
                *v *= spare;
                // Keep the peak unique.
                *v = v.min(0.0456);
            }
        }
        let mut profile = AgeProfile::from_values(grid, values);
        profile.smoothed = true;
        profile.normalized = true;
        let p = peak(&profile).unwrap();
        assert_eq!(p.age_at_peak, 20.5);
        assert!((p.intensity_at_peak - 0.0457).abs() < 1e-12);
    }

    #[test]
    fn flat_profile_degenerate_peak() {
        let prepared = prepare(&raw(vec![0.5; 61]), 2.0).unwrap();
        let p = peak(&prepared).unwrap();
        assert_eq!(p.age_at_peak, 5.0);
        assert!((p.intensity_at_peak - 1.0 / 121.0).abs() < 1e-9);
        assert!(p.degenerate);
    }

    #[test]
    fn peak_requires_prepared_profile() {
        let rawp = raw(vec![0.5; 61]);
        assert_eq!(peak(&rawp).unwrap_err(), ProfileError::NotPrepared);
    }

    #[test]
    fn peak_age_invariant_under_scaling() {
        let values: Vec<f64> = (PROFILE_MIN_AGE..=PROFILE_MAX_AGE)
            .map(|a| {
                let x = a as f64;
                (-(x - 26.0) * (x - 26.0) / 30.0).exp() + 0.01
            })
            .collect();
        let base = prepare(&raw(values.clone()), 2.0).unwrap();
        let scaled_raw = raw(values.iter().map(|v| v * 17.3).collect());
        let scaled = prepare(&scaled_raw, 2.0).unwrap();
        let p1 = peak(&base).unwrap();
        let p2 = peak(&scaled).unwrap();
        assert_eq!(p1.age_at_peak, p2.age_at_peak);
        assert!((p1.intensity_at_peak - p2.intensity_at_peak).abs() < 1e-12);
        assert!((p1.age_at_peak - 26.0).abs() <= 0.5);
    }

    #[test]
    fn normalize_preserves_argmax() {
        let values: Vec<f64> = (0..61).map(|i| ((i * 13) % 37) as f64 + 1.0).collect();
        let p = raw(values);
        let argmax_before = p
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let n = normalize(&p).unwrap();
        let argmax_after = n
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax_before, argmax_after);
    }
}
