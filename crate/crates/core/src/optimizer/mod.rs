//! User-level DP-SGD, its localized variant, and a non-private baseline.

mod baseline;
mod dpsgd;
mod localization;
mod schedule;

pub use baseline::{nonprivate_sgd, BatchMode, StepSchedule};
pub use dpsgd::{dpsgd, dpsgd_with_streams, IterationRecord, SgdOutcome};
pub use localization::{
    localized_dpsgd, phase_count, LocalizationSchedule, LocalizedOutcome, UserRange,
    DEFAULT_LOCALIZATION_C,
};
pub use schedule::{
    concentration_radius, default_config, iteration_count, step_size_terms, SgdConfig,
    DEFAULT_T_CAP,
};

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::data::{PrivacyBudget, Shape, UserDataset, UserSource};
    use crate::losses::{sample_population, Ball, Loss, NormLoss, PopulationSpec, QuadraticLoss};
    use crate::noise::{NoiseHook, RngStream};
    use crate::stats::distance;

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(1.0, 1e-3).unwrap()
    }

    fn manual_config(d: usize, iterations: usize, step: f64, tau: f64) -> SgdConfig {
        SgdConfig {
            iterations,
            step_size: step,
            smoothing_radius: 0.01,
            tau,
            initial_distance: 2.0,
            budget: budget(),
            theta0: vec![0.0; d],
            t_cap: iterations,
            score_sensitivity: 2.0,
        }
    }

    fn zeroed(seed: u64) -> RngStream {
        RngStream::new(seed, 0).with_hook(NoiseHook::Zeroed)
    }

    #[test]
    fn identical_points_are_a_fixed_point() {
        let d = 3;
        let p = vec![0.2, -0.1, 0.3];
        let data = UserDataset::new(Shape { n: 8, m: 2, d }, p.repeat(16)).unwrap();
        let loss = NormLoss::new(Ball::centered(d, 1.0).unwrap());
        let mut cfg = manual_config(d, 50, 0.1, 1.0);
        cfg.theta0 = p.clone();
        let out = dpsgd(&data, &loss, &cfg, &mut zeroed(1)).unwrap();
        assert!(!out.halted);
        assert!(distance(&out.theta, &p) < 1e-12);
    }

    #[test]
    fn zeroed_noise_matches_full_batch_baseline() {
        let d = 2;
        let domain = Ball::centered(d, 2.0).unwrap();
        let loss = QuadraticLoss::new(1.0, 3.0, domain, 1.0).unwrap();
        let spec = PopulationSpec::ClippedGaussian {
            mean: vec![0.5, -0.5],
            sigma: 0.3,
            clip: 1.0,
        };
        let data = sample_population(&spec, 20, 3, &mut RngStream::new(5, 0)).unwrap();
        let cfg = manual_config(d, 200, 0.2, 100.0);
        let private = dpsgd(&data, &loss, &cfg, &mut zeroed(2)).unwrap();
        let plain = nonprivate_sgd(
            &data,
            &loss,
            200,
            StepSchedule::Constant { eta: 0.2 },
            BatchMode::FullBatch,
            &cfg.theta0,
            &mut RngStream::new(3, 0),
        )
        .unwrap();
        assert!(!private.halted);
        assert!(distance(&private.theta, &plain.theta) < 1e-12);
        assert!(private.trace.iter().all(|r| r.selected_count == 20));
        // descent towards the empirical mean
        let mut mean = vec![0.0; d];
        for z in data.values().chunks_exact(d) {
            mean.iter_mut().zip(z).for_each(|(a, b)| *a += b / 60.0);
        }
        assert!(
            distance(&private.theta, &mean) < 0.05,
            "{:?} vs {:?}",
            private.theta,
            mean
        );
    }

    #[test]
    fn spread_gradients_halt_and_return_start() {
        let d = 2;
        let mut values = Vec::new();
        for i in 0..10 {
            let a = i as f64 * 0.6283;
            values.extend([a.cos(), a.sin()]);
        }
        let data = UserDataset::new(Shape { n: 10, m: 1, d }, values).unwrap();
        let loss = QuadraticLoss::new(1.0, 1.0, Ball::centered(d, 1.0).unwrap(), 0.5).unwrap();
        let mut cfg = manual_config(d, 10, 0.1, 0.01);
        cfg.theta0 = vec![0.1, 0.1];
        let out = dpsgd(&data, &loss, &cfg, &mut zeroed(3)).unwrap();
        assert!(out.halted);
        assert_eq!(out.halted_at, Some(0));
        assert_eq!(out.theta, cfg.theta0);
    }

    struct Counting<'a> {
        inner: &'a UserDataset,
        calls: Cell<usize>,
    }

    impl UserSource for Counting<'_> {
        fn shape(&self) -> Shape {
            self.inner.shape()
        }

        fn user(&self, i: usize) -> &[f64] {
            self.calls.set(self.calls.get() + 1);
            self.inner.user(i)
        }
    }

    #[test]
    fn data_is_touched_only_through_session_queries() {
        let d = 2;
        let data = sample_population(
            &PopulationSpec::PointMass { at: vec![0.3, 0.3] },
            12,
            2,
            &mut RngStream::new(1, 0),
        )
        .unwrap();
        let counting = Counting {
            inner: &data,
            calls: Cell::new(0),
        };
        let loss = NormLoss::new(Ball::centered(d, 1.0).unwrap());
        let cfg = manual_config(d, 37, 0.05, 5.0);
        let out = dpsgd(&counting, &loss, &cfg, &mut zeroed(4)).unwrap();
        assert!(!out.halted);
        assert_eq!(counting.calls.get(), 37 * 12);
    }

    #[test]
    fn real_noise_run_stays_in_domain() {
        let d = 3;
        let domain = Ball::centered(d, 1.0).unwrap();
        let loss = NormLoss::new(domain.clone());
        let data = sample_population(
            &PopulationSpec::Gaussian {
                mean: vec![0.5, 0.0, 0.0],
                sigma: 1.0,
            },
            40,
            4,
            &mut RngStream::new(8, 0),
        )
        .unwrap();
        let shape = data.shape();
        let cfg = default_config(
            shape,
            PrivacyBudget::new(2.0, 0.1).unwrap(),
            1.0,
            2.0,
            vec![0.0; d],
            2000,
        )
        .unwrap();
        let a = dpsgd(&data, &loss, &cfg, &mut RngStream::new(9, 0)).unwrap();
        let b = dpsgd(&data, &loss, &cfg, &mut RngStream::new(9, 0)).unwrap();
        assert_eq!(a, b);
        assert!(domain.contains(&a.theta, 1e-9));
    }

    #[test]
    fn localization_schedule_arithmetic() {
        let shape = Shape { n: 64, m: 4, d: 2 };
        let s = LocalizationSchedule::new(
            shape,
            budget(),
            2.0,
            1.0,
            4.0,
            &Ball::centered(2, 1.0).unwrap(),
            1000,
        )
        .unwrap();
        assert_eq!(s.k, 3);
        assert_eq!(s.nominal_sizes, vec![8, 16, 32]);
        assert_eq!(s.phase_sizes, vec![8, 16, 40]);
        assert_eq!(s.phase_ranges(), vec![(0, 8), (8, 24), (24, 64)]);
        assert_eq!(s.e.len(), 4);
        assert_eq!(s.d[0], 2.0 * 4.0 / 1.0);
        for j in 1..=s.k {
            assert!((s.d[j - 1] * s.e[j]).sqrt() <= s.d[j] * (1.0 + 1e-12));
            assert!(s.e[j] < s.e[j - 1]);
        }
        assert!(s.d[s.k] <= 32.0 * s.e[s.k]);
        for (j, cfg) in s.configs.iter().enumerate() {
            assert_eq!(cfg.initial_distance, (2.0 * s.d[j]).sqrt().min(2.0));
            cfg.validate().unwrap();
        }
    }

    #[test]
    fn localization_collapses_to_one_phase() {
        assert_eq!(phase_count(4, 1), 1);
        assert_eq!(phase_count(2, 2), 1);
        assert_eq!(phase_count(16, 1), 2);
        let s = LocalizationSchedule::new(
            Shape { n: 4, m: 1, d: 1 },
            budget(),
            1.0,
            1.0,
            4.0,
            &Ball::centered(1, 1.0).unwrap(),
            100,
        )
        .unwrap();
        assert_eq!(s.k, 1);
        assert_eq!(s.phase_sizes, vec![4]);
    }

    #[test]
    fn localization_rejects_tiny_or_flat_problems() {
        // k = 3 needs 24 users
        assert!(LocalizationSchedule::new(
            Shape { n: 20, m: 16, d: 1 },
            budget(),
            1.0,
            1.0,
            4.0,
            &Ball::centered(1, 1.0).unwrap(),
            100
        )
        .is_err());
        assert!(LocalizationSchedule::new(
            Shape { n: 64, m: 4, d: 1 },
            budget(),
            1.0,
            1.0,
            2.0,
            &Ball::centered(1, 1.0).unwrap(),
            100
        )
        .is_err());
        let loss = NormLoss::new(Ball::centered(1, 1.0).unwrap());
        let data = UserDataset::new(Shape { n: 64, m: 4, d: 1 }, vec![0.0; 256]).unwrap();
        assert!(
            localized_dpsgd(&data, &loss, budget(), 4.0, 100, &mut RngStream::new(0, 0)).is_err()
        );
    }

    #[test]
    fn localized_run_uses_disjoint_blocks() {
        let d = 2;
        let loss = QuadraticLoss::new(1.0, 2.0, Ball::centered(d, 1.0).unwrap(), 0.5).unwrap();
        let data = sample_population(
            &PopulationSpec::PointMass { at: vec![0.2, 0.1] },
            64,
            4,
            &mut RngStream::new(1, 0),
        )
        .unwrap();
        let out = localized_dpsgd(&data, &loss, budget(), 4.0, 300, &mut zeroed(6)).unwrap();
        assert_eq!(out.phases.len(), 3);
        assert!(out.phases.iter().all(|p| !p.halted));
        for (phase, size) in out.phases.iter().zip(&out.schedule.phase_sizes) {
            assert!(phase.trace.iter().all(|r| r.selected_count == *size));
        }
        assert!(distance(&out.theta, &[0.2, 0.1]) < distance(&[0.0, 0.0], &[0.2, 0.1]));
    }

    #[test]
    fn baseline_single_item_and_inverse_time() {
        let d = 1;
        let loss = QuadraticLoss::new(2.0, 1.0, Ball::centered(d, 1.0).unwrap(), 0.0).unwrap();
        let data = UserDataset::new(Shape { n: 4, m: 1, d }, vec![0.5; 4]).unwrap();
        let out = nonprivate_sgd(
            &data,
            &loss,
            500,
            StepSchedule::InverseTime { mu: 2.0 },
            BatchMode::SingleItem,
            &[0.0],
            &mut RngStream::new(2, 0),
        )
        .unwrap();
        // first step lands exactly on the minimizer
        assert!((out.theta[0] - 0.5).abs() < 0.01);
        assert!(loss.strong_convexity() > 0.0);
        assert!(nonprivate_sgd(
            &data,
            &loss,
            0,
            StepSchedule::Constant { eta: 1.0 },
            BatchMode::FullBatch,
            &[0.0],
            &mut RngStream::new(0, 0)
        )
        .is_err());
    }
}
