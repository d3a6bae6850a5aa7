//! Curriculum masks and the pacing schedule for the uncertainty threshold μ.
//!
//! μ starts at the β-quantile of the teacher's prediction uncertainty and
//! grows by `(1 - μ_init) / (γ / E_interval)` every `E_interval` epochs,
//! clamped at 1 and forced to 1 from epoch γ on. A pixel is dropped from the
//! loss when its uncertainty is `>= μ`.

use crate::error::{Error, Result};
use crate::tensor::TensorF;

pub const DEFAULT_E_INTERVAL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingConfig {
    pub beta: f64,
    pub gamma: usize,
    pub e_interval: usize,
}

impl PacingConfig {
    pub fn new(beta: f64, gamma: usize, e_interval: usize) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "beta must be in (0,1], got {beta}"
            )));
        }
        if e_interval == 0 {
            return Err(Error::InvalidArgument("e_interval must be positive".into()));
        }
        if gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        if gamma < e_interval {
            return Err(Error::InvalidArgument(format!(
                "gamma ({gamma}) must be at least e_interval ({e_interval})"
            )));
        }
        Ok(PacingConfig {
            beta,
            gamma,
            e_interval,
        })
    }

    /// Number of threshold increments before the curriculum ends.
    pub fn updates(&self) -> usize {
        self.gamma / self.e_interval
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurriculumState {
    pub mu: f64,
    pub mu_init: f64,
    pub mu_update: f64,
    pub epoch: usize,
    updates_done: usize,
}

impl CurriculumState {
    pub fn new(mu_init: f64, cfg: &PacingConfig) -> Result<Self> {
        if !(mu_init > 0.0 && mu_init <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mu_init must be in (0,1], got {mu_init}"
            )));
        }
        if cfg.gamma == 0 {
            return Err(Error::InvalidArgument("gamma must be positive".into()));
        }
        let mu_update = (1.0 - mu_init) / (cfg.gamma as f64 / cfg.e_interval as f64);
        Ok(CurriculumState {
            mu: mu_init,
            mu_init,
            mu_update,
            epoch: 0,
            updates_done: 0,
        })
    }
}

/// Advance the state to `epoch`, applying every update boundary passed on the way.
/// Moving backwards is a no-op.
pub fn pace(state: &CurriculumState, cfg: &PacingConfig, epoch: usize) -> Result<CurriculumState> {
    if cfg.gamma == 0 {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let mut s = *state;
    for e in (s.epoch + 1)..=epoch {
        if e % cfg.e_interval == 0 && s.updates_done < cfg.updates() {
            s.mu = (s.mu + s.mu_update).min(1.0);
            s.updates_done += 1;
        }
        if e >= cfg.gamma {
            s.mu = 1.0;
        }
    }
    s.epoch = s.epoch.max(epoch);
    Ok(s)
}

/// Nearest-rank β-quantile of the pooled uncertainty sample, clamped to (0, 1].
pub fn mu_init_from_beta(pu_values: &[f64], beta: f64) -> Result<f64> {
    if pu_values.is_empty() {
        return Err(Error::Empty("no prediction-uncertainty values".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta must be in (0,1], got {beta}"
        )));
    }
    let mut sorted = pu_values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let rank = ((beta * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1].clamp(f64::MIN_POSITIVE, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumMask {
    pub w_pu: TensorF,
    pub w_bu: TensorF,
}

impl CurriculumMask {
    pub fn all_ones(h: usize, w: usize) -> Self {
        CurriculumMask {
            w_pu: TensorF::filled(vec![h, w], 1.0),
            w_bu: TensorF::filled(vec![h, w], 1.0),
        }
    }

    /// `w_pu ⊙ w_bu` per pixel.
    pub fn combined(&self) -> Vec<f64> {
        self.w_pu
            .data()
            .iter()
            .zip(self.w_bu.data())
            .map(|(a, b)| a * b)
            .collect()
    }

    pub fn active_count(&self) -> usize {
        self.combined().iter().filter(|&&v| v > 0.0).count()
    }
}

pub fn threshold_mask(uncertainty: &TensorF, mu: f64) -> TensorF {
    let data = uncertainty
        .data()
        .iter()
        .map(|&u| if u >= mu { 0.0 } else { 1.0 })
        .collect();
    TensorF::new(uncertainty.shape().to_vec(), data).expect("same shape")
}

pub fn build_masks(pu: &TensorF, bu: &TensorF, mu: f64) -> Result<CurriculumMask> {
    if pu.shape() != bu.shape() {
        return Err(Error::Shape(format!(
            "PU {:?} vs BU {:?}",
            pu.shape(),
            bu.shape()
        )));
    }
    Ok(CurriculumMask {
        w_pu: threshold_mask(pu, mu),
        w_bu: threshold_mask(bu, mu),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    /// Iterates the raw recurrence one interval at a time.
    fn oracle_trajectory(mu_init: f64, gamma: usize, e: usize, epochs: usize) -> Vec<f64> {
        let upd = (1.0 - mu_init) / (gamma as f64 / e as f64);
        let mut mu = mu_init;
        let mut count = 0;
        (0..=epochs)
            .map(|ep| {
                if ep > 0 && ep % e == 0 && count < gamma / e {
                    mu = f64::min(mu + upd, 1.0);
                    count += 1;
                }
                if ep >= gamma {
                    1.0
                } else {
                    mu
                }
            })
            .collect()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(mu_init_from_beta(&[0.4, 0.1, 0.3, 0.2], 0.5).unwrap(), 0.2);
        assert_eq!(mu_init_from_beta(&[0.4, 0.1, 0.3, 0.2], 1.0).unwrap(), 0.4);
        for beta in [0.1, 0.5, 1.0] {
            assert_eq!(mu_init_from_beta(&[0.3; 7], beta).unwrap(), 0.3);
        }
        assert!(mu_init_from_beta(&[], 0.5).is_err());
        assert!(mu_init_from_beta(&[0.1], 0.0).is_err());
        assert!(mu_init_from_beta(&[0.0, 0.0], 0.5).unwrap() > 0.0);
    }

    #[test]
    fn pacing_reaches_one_after_ten_updates() {
        let cfg = PacingConfig::new(0.5, 50, 5).unwrap();
        let s0 = CurriculumState::new(0.3, &cfg).unwrap();
        assert!((s0.mu_update - 0.07).abs() < 1e-12);
        let oracle = oracle_trajectory(0.3, 50, 5, 60);
        let mut s = s0;
        for (ep, want) in oracle.iter().enumerate() {
            s = pace(&s, &cfg, ep).unwrap();
            assert_eq!(s.mu, *want, "epoch {ep}");
        }
        assert_eq!(pace(&s0, &cfg, 50).unwrap().mu, 1.0);
        assert!((pace(&s0, &cfg, 45).unwrap().mu - (0.3 + 9.0 * 0.07)).abs() < 1e-12);
    }

    #[test]
    fn pacing_short_curriculum() {
        let cfg = PacingConfig::new(0.9, 10, 5).unwrap();
        let s0 = CurriculumState::new(0.9, &cfg).unwrap();
        assert!((s0.mu_update - 0.05).abs() < 1e-12);
        assert_eq!(pace(&s0, &cfg, 10).unwrap().mu, 1.0);
        assert_eq!(pace(&s0, &cfg, 4).unwrap().mu, 0.9);
    }

    #[test]
    fn non_integer_interval_count_forces_one_at_gamma() {
        let cfg = PacingConfig::new(0.5, 12, 5).unwrap();
        let s0 = CurriculumState::new(0.4, &cfg).unwrap();
        let s = pace(&s0, &cfg, 11).unwrap();
        assert!(s.mu < 1.0);
        assert_eq!(pace(&s, &cfg, 12).unwrap().mu, 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(PacingConfig::new(0.0, 10, 5).is_err());
        assert!(PacingConfig::new(1.5, 10, 5).is_err());
        assert!(PacingConfig::new(0.5, 0, 5).is_err());
        assert!(PacingConfig::new(0.5, 3, 5).is_err());
        let bad = PacingConfig {
            beta: 0.5,
            gamma: 0,
            e_interval: 5,
        };
        assert!(CurriculumState::new(0.5, &bad).is_err());
    }

    #[test]
    fn mask_examples() {
        let pu = TensorF::new(vec![1, 2], vec![0.1, 0.9]).unwrap();
        let m = build_masks(&pu, &TensorF::zeros(vec![1, 2]), 0.5).unwrap();
        assert_eq!(m.w_pu.data(), &[1.0, 0.0]);
        assert_eq!(m.w_bu.data(), &[1.0, 1.0]);
        let bu = TensorF::new(vec![1, 2], vec![0.0, 0.5]).unwrap();
        assert_eq!(build_masks(&pu, &bu, 1.0).unwrap().w_bu.data(), &[1.0, 1.0]);
        let z = TensorF::zeros(vec![3, 3]);
        let m = build_masks(&z, &z, 1e-9).unwrap();
        assert_eq!(m.active_count(), 9);
        // equality excludes
        assert_eq!(threshold_mask(&pu, 0.1).data(), &[0.0, 0.0]);
        assert!(build_masks(&pu, &TensorF::zeros(vec![2, 1]), 0.5).is_err());
    }

    proptest! {
        #[test]
        fn trajectory_matches_recurrence(mu_init in 0.01f64..1.0, intervals in 1usize..12, e in 1usize..7, extra in 0usize..5) {
            let gamma = intervals * e + extra;
            let cfg = PacingConfig::new(0.5, gamma, e).unwrap();
            let oracle = oracle_trajectory(mu_init, gamma, e, gamma + 10);
            let mut s = CurriculumState::new(mu_init, &cfg).unwrap();
            let mut prev = 0.0;
            for (ep, want) in oracle.iter().enumerate() {
                s = pace(&s, &cfg, ep).unwrap();
                prop_assert_eq!(s.mu, *want);
                prop_assert!(s.mu >= prev);
                if ep >= gamma {
                    prop_assert_eq!(s.mu, 1.0);
                }
                prev = s.mu;
            }
        }

        #[test]
        fn active_count_monotone_in_mu(seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let pu = TensorF::new(vec![6, 6], (0..36).map(|_| r.uniform()).collect()).unwrap();
            let bu = TensorF::new(vec![6, 6], (0..36).map(|_| 0.5 * r.uniform()).collect()).unwrap();
            let mut prev = 0;
            for i in 1..=20 {
                let n = build_masks(&pu, &bu, i as f64 / 20.0).unwrap().active_count();
                prop_assert!(n >= prev);
                prev = n;
            }
        }

        #[test]
        fn masks_permutation_equivariant(seed in any::<u64>(), mu in 0.01f64..1.0) {
            let mut r = Rng::new(seed);
            let pu: Vec<f64> = (0..20).map(|_| r.uniform()).collect();
            let bu: Vec<f64> = (0..20).map(|_| r.uniform()).collect();
            let mut perm: Vec<usize> = (0..20).collect();
            r.shuffle(&mut perm);
            let t = |v: &[f64]| TensorF::new(vec![4, 5], v.to_vec()).unwrap();
            let permute = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let m = build_masks(&t(&pu), &t(&bu), mu).unwrap();
            let mp = build_masks(&t(&permute(&pu)), &t(&permute(&bu)), mu).unwrap();
            prop_assert_eq!(mp.w_pu.data(), &permute(m.w_pu.data())[..]);
            prop_assert_eq!(mp.w_bu.data(), &permute(m.w_bu.data())[..]);
        }
    }
}
