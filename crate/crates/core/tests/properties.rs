use proptest::prelude::*;

use userdp::concentrated_mean::{selection_probabilities, selection_probability};
use userdp::losses::{LinearLoss, Loss};
use userdp::noise::{sample_uniform_ball, RngStream};
use userdp::optimizer::{iteration_count, phase_count, LocalizationSchedule};
use userdp::verify::{couple_bernoulli, hamming_tail_exact};
use userdp::{
    default_config, AboveThreshold, Answer, Ball, NormLoss, PrivacyBudget, QuadraticLoss, Shape,
};

fn budget() -> PrivacyBudget {
    PrivacyBudget::new(1.0, 1e-5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_samples_stay_inside(seed in any::<u64>(), d in 1usize..30, r in 0.01f64..10.0) {
        let mut rng = RngStream::new(seed, 0);
        for _ in 0..20 {
            let u = sample_uniform_ball(r, d, &mut rng).unwrap();
            prop_assert_eq!(u.len(), d);
            prop_assert!(u.iter().map(|v| v * v).sum::<f64>().sqrt() <= r * (1.0 + 1e-12));
        }
    }

    #[test]
    fn projection_is_idempotent_and_lands_inside(x in prop::collection::vec(-10.0f64..10.0, 1..8), r in 0.1f64..5.0) {
        let ball = Ball::centered(x.len(), r).unwrap();
        let p = ball.project(&x);
        prop_assert!(ball.contains(&p, 1e-12));
        let again = ball.project(&p);
        prop_assert!(again.iter().zip(&p).all(|(a, b)| (a - b).abs() <= 1e-12 * r));
        if ball.contains(&x, 0.0) {
            prop_assert_eq!(p, x);
        }
    }

    #[test]
    fn selection_probability_is_a_monotone_ramp(n in 1usize..200) {
        let ps: Vec<f64> = (0..=n).map(|f| selection_probability(f, n).unwrap()).collect();
        prop_assert!(ps.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(ps[n], 1.0);
    }

    #[test]
    fn identical_points_are_all_kept(n in 1usize..40, d in 1usize..6, v in -5.0f64..5.0, tau in 0.01f64..3.0) {
        let pts = vec![vec![v; d]; n];
        prop_assert!(selection_probabilities(&pts, tau).unwrap().iter().all(|&p| p == 1.0));
    }

    #[test]
    fn above_threshold_halts_after_first_bottom(seed in any::<u64>(), qs in prop::collection::vec(-20.0f64..20.0, 1..40)) {
        let mut rng = RngStream::new(seed, 0);
        let mut at = AboveThreshold::new(0.0, 1.0, 1.0, &mut rng).unwrap();
        for (i, q) in qs.iter().enumerate() {
            let a = at.step(*q, &mut rng).unwrap();
            prop_assert_eq!(at.steps(), i + 1);
            if a == Answer::Bottom {
                prop_assert!(at.is_halted());
                prop_assert!(at.step(0.0, &mut rng).is_err());
                break;
            }
        }
    }

    #[test]
    fn coupling_has_the_right_hamming_distance(seed in any::<u64>(), pq in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..30)) {
        let (p, q): (Vec<f64>, Vec<f64>) = pq.into_iter().unzip();
        let c = couple_bernoulli(&p, &q, &mut RngStream::new(seed, 0)).unwrap();
        let h = c.x.iter().zip(&c.y).filter(|(a, b)| a != b).count();
        prop_assert_eq!(h, c.hamming);
        for i in 0..p.len() {
            // mismatch only where the marginals differ, and only towards the larger one
            if c.x[i] && !c.y[i] { prop_assert!(p[i] > q[i]); }
            if c.y[i] && !c.x[i] { prop_assert!(q[i] > p[i]); }
        }
        let tail0 = hamming_tail_exact(&p, &q, 0).unwrap();
        let expected = 1.0 - p.iter().zip(&q).map(|(a, b)| 1.0 - (a - b).abs()).product::<f64>();
        prop_assert!((tail0 - expected).abs() < 1e-12);
    }

    #[test]
    fn default_schedule_identities(n in 1usize..300, m in 1usize..300, d in 1usize..50, cap in 1usize..100_000, g in 0.1f64..10.0, rhat in 0.1f64..10.0) {
        let shape = Shape { n, m, d };
        let c = default_config(shape, budget(), g, rhat, vec![0.0; d], cap).unwrap();
        prop_assert!(c.iterations <= cap && c.iterations >= 1);
        prop_assert_eq!(c.iterations, iteration_count(shape, cap));
        let lhs = c.smoothing_radius * (c.iterations as f64).sqrt();
        prop_assert!((lhs - (d as f64).powf(0.25) * rhat).abs() <= 1e-12 * lhs);
        prop_assert!(c.step_size > 0.0 && c.tau > 0.0);
    }

    #[test]
    fn localization_schedule_invariants(n in 4usize..2000, m in 1usize..64) {
        let k = phase_count(n, m);
        let ball = Ball::centered(3, 1.0).unwrap();
        let s = LocalizationSchedule::new(Shape { n, m, d: 3 }, budget(), 1.0, 1.0, 4.0, &ball, 1000);
        if n < (1 << k) * k {
            prop_assert!(s.is_err());
        } else {
            let s = s.unwrap();
            prop_assert_eq!(s.phase_sizes.iter().sum::<usize>(), n);
            let ranges = s.phase_ranges();
            prop_assert_eq!(ranges[0].0, 0);
            prop_assert_eq!(ranges[k - 1].1, n);
            prop_assert!(ranges.windows(2).all(|w| w[0].1 == w[1].0));
            prop_assert!(s.d[k] <= 32.0 * s.e[k] * (1.0 + 1e-12));
            prop_assert!(s.initial_distances.iter().all(|&r| r > 0.0 && r <= 2.0));
        }
    }

    #[test]
    fn subgradients_respect_lipschitz_constants(
        theta in prop::collection::vec(-1.0f64..1.0, 3),
        z in prop::collection::vec(-1.0f64..1.0, 3),
    ) {
        let ball = Ball::centered(3, 2.0).unwrap();
        let theta = ball.project(&theta);
        let losses: Vec<Box<dyn Loss>> = vec![
            Box::new(NormLoss::new(ball.clone())),
            Box::new(QuadraticLoss::new(0.5, 2.0, ball.clone(), 1.0).unwrap()),
            Box::new(LinearLoss::new(2.0, ball.clone()).unwrap()),
        ];
        for loss in &losses {
            let mut g = vec![0.0; 3];
            loss.subgradient(&theta, &z, &mut g);
            prop_assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= loss.lipschitz() * (1.0 + 1e-12));
        }
    }
}
