use proptest::prelude::*;

use super::*;
use crate::numerics::grad_check_many;
use crate::timeline::{EngagementVector, LagMode, Observation, MINUTE};

fn inputs(n: usize, w: usize) -> IntensityInputs {
    IntensityInputs {
        hours: vec![0; n],
        treatments: vec![0; n],
        outcome_mag: vec![0.0; n],
        lags: vec![vec![0.0; w]; n],
    }
}

fn consecutive(w: usize) -> LagConfig {
    LagConfig {
        tau_lag: w as i64 * 10 * MINUTE,
        w,
        mode: LagMode::Consecutive,
        pad_before_start: true,
    }
}

#[test]
fn g_signal_examples() {
    let flat = SignalTimeline::new(0, 600, vec![40.0; 100]).unwrap();
    assert_eq!(g_signal(&flat, 30_000, &[0.0; 6], &consecutive(6)).unwrap(), 0.0);
    let mut one_hot = vec![0.0; 6];
    one_hot[0] = 1.0;
    assert_eq!(g_signal(&flat, 30_000, &one_hot, &consecutive(6)).unwrap(), 40.0);

    let ramp = SignalTimeline::new(0, 600, (0..100).map(|k| k as f64).collect()).unwrap();
    let alpha: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k + 1)).collect();
    let t = 50 * 600;
    let expected: f64 = (0..6).map(|i| alpha[i] * ramp.lookup(t - (i as i64 + 1) * 600).unwrap()).sum();
    assert_eq!(g_signal(&ramp, t, &alpha, &consecutive(6)).unwrap(), expected);
    assert!(g_signal(&ramp, t, &alpha[..3], &consecutive(6)).is_err());
}

#[test]
fn latent_examples() {
    let mut p = IntensityParams::zeros(3);
    p.beta0 = 0.3;
    let mut x = inputs(5, 3);
    assert_eq!(latent(0, &p, &x), 0.3);

    p.beta0 = 0.0;
    p.treat_kernel = Kernel { phi: 0.2, rho: 0.5 };
    x.treatments[3] = 1;
    assert!((latent(4, &p, &x) - 0.1).abs() < 1e-15);
    assert_eq!(latent(3, &p, &x), 0.0);

    let mut q = IntensityParams::zeros(3);
    q.alpha = vec![0.5, 0.25, 0.125];
    let mut y = inputs(2, 3);
    y.lags[1] = vec![9.0, 8.0, 7.0];
    assert_eq!(latent(1, &q, &y), 0.5 * 9.0 + 0.25 * 8.0 + 0.125 * 7.0);
}

#[test]
fn lambda_star_examples() {
    assert_eq!(lambda_star(0.5), 0.25);
    assert_eq!(lambda_star(-0.5), 0.25);
    assert!(is_clamped(1.4));
    assert_eq!(lambda_star(1.4), 1.0);
    assert!(!is_clamped(0.9));
}

#[test]
fn sampling_examples() {
    assert!(sample_treatments(&[0.0; 500], 1).unwrap().0.iter().all(|&a| a == 0));
    assert!(sample_treatments(&[1.0; 500], 1).unwrap().0.iter().all(|&a| a == 1));
    let draws = sample_treatments(&[0.3; 10_000], 2).unwrap();
    assert!((draws.mean() - 0.3).abs() < 3.0 * (0.3f64 * 0.7 / 10_000.0).sqrt());
    assert_eq!(draws, sample_treatments(&[0.3; 10_000], 2).unwrap());
    assert!(matches!(sample_treatments(&[0.2, 1.1], 0), Err(Error::Contract(_))));
}

#[test]
fn simulation_is_autoregressive() {
    // A treatment raises the next step's intensity to 1; with a zero baseline
    // nothing can start, with a certain first step everything follows.
    let mut p = IntensityParams::zeros(1);
    p.treat_kernel = Kernel { phi: 2.0, rho: 0.5 };
    let x = inputs(20, 1);
    assert!(simulate_treatments(&p, &x, 3).unwrap().0.iter().all(|&a| a == 0));
    p.baseline[0] = 0.0;
    p.beta0 = 1.0;
    assert!(simulate_treatments(&p, &x, 3).unwrap().0.iter().all(|&a| a == 1));
}

#[test]
fn bce_examples() {
    let a = TreatmentSeries::new(vec![1, 0]).unwrap();
    assert!(bce_intensity(&[1.0, 0.0], &a).unwrap() < 1e-6);
    assert!((bce_intensity(&[0.5, 0.5], &a).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    let v = bce_intensity(&[0.9, 0.2], &a).unwrap();
    assert!((v - 0.1643).abs() < 1e-4, "{v}");
    assert!((v + (0.9f64.ln() + 0.8f64.ln()) / 2.0).abs() < 1e-12);
    assert!(bce_intensity(&[0.5], &a).is_err());
    assert!(TreatmentSeries::new(vec![2]).is_err());
}

#[test]
fn kernel_decay_bounds_are_checked() {
    let mut p = IntensityParams::zeros(2);
    assert!(p.validate().is_ok());
    p.outcome_kernel.rho = 1.0;
    assert!(p.validate().is_err());
}

#[test]
fn inputs_from_grid_use_only_the_past() {
    let sig = SignalTimeline::new(0, 600, (0..500).map(|k| (k % 100) as f64).collect()).unwrap();
    let h = EngagementHistory::new(vec![
        Observation { t: 3_000, counts: EngagementVector::new(2, 0, 0, 0) },
        Observation { t: 7_200, counts: EngagementVector::new(5, 1, 0, 0) },
    ])
    .unwrap();
    let a = TreatmentSeries::new(vec![0; 6]).unwrap();
    let x = IntensityInputs::from_grid(&sig, &h, &a, 0, 3_600, &LagConfig::default(), 2.0).unwrap();
    // Step 0 covers [0, 3600): +2. Step 1 covers [3600, 7200): nothing, the
    // 7200 snapshot belongs to step 2.
    assert_eq!(x.outcome_mag, vec![1.0, 0.0, 2.0, 0.0, 0.0, 0.0]);
    assert_eq!(x.hours, vec![0, 1, 2, 3, 4, 5]);
}

#[test]
fn tape_matches_f64_path_and_passes_grad_check() {
    let n = 12;
    let w = 3;
    let mut x = inputs(n, w);
    for s in 0..n {
        x.hours[s] = (s * 5) % HOURS;
        x.treatments[s] = (s % 3 == 0) as u8;
        x.outcome_mag[s] = (s as f64 * 0.37).sin().abs();
        x.lags[s] = (0..w).map(|k| ((s + k) as f64 * 0.21).cos().abs()).collect();
    }
    let mut p = IntensityParams::zeros(w);
    p.beta0 = 0.1;
    for (h, b) in p.baseline.iter_mut().enumerate() {
        *b = 0.01 * h as f64;
    }
    p.treat_kernel = Kernel { phi: 0.15, rho: 0.6 };
    p.outcome_kernel = Kernel { phi: 0.1, rho: 0.4 };
    p.alpha = vec![0.12, 0.08, 0.05];

    let mut tape = Tape::new();
    let vars: Vec<Var> = p.to_tensors().into_iter().map(|t| tape.leaf(t)).collect();
    let lam = lambda_tape(&mut tape, &vars, &x).unwrap();
    let direct = lambda_series(&p, &x).unwrap();
    for (a, b) in tape.value(lam).data().iter().zip(&direct) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(direct.iter().all(|&l| l > 0.0 && l < 1.0));

    let target = Tensor::column(x.treatments.iter().map(|&a| a as f64).collect());
    let err = grad_check_many(
        |tape, vars| {
            let lam = lambda_tape(tape, vars, &x)?;
            tape.bce(lam, &target, None)
        },
        &p.to_tensors(),
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "grad check error {err}");
}

fn arb_inputs(n: usize, w: usize) -> impl Strategy<Value = IntensityInputs> {
    (
        prop::collection::vec(0usize..HOURS, n),
        prop::collection::vec(0u8..=1, n),
        prop::collection::vec(0.0f64..5.0, n),
        prop::collection::vec(prop::collection::vec(0.0f64..=100.0, w), n),
    )
        .prop_map(|(hours, treatments, outcome_mag, lags)| IntensityInputs {
            hours,
            treatments,
            outcome_mag,
            lags,
        })
}

fn arb_params(w: usize, lo: f64) -> impl Strategy<Value = IntensityParams> {
    (
        lo..1.0,
        prop::array::uniform24(lo..1.0),
        (lo..1.0, 0.01f64..0.99),
        (lo..1.0, 0.01f64..0.99),
        prop::collection::vec(lo.max(-0.02)..0.02, w),
    )
        .prop_map(|(beta0, baseline, (ap, ar), (op, or), alpha)| IntensityParams {
            beta0,
            baseline,
            treat_kernel: Kernel { phi: ap, rho: ar },
            outcome_kernel: Kernel { phi: op, rho: or },
            alpha,
        })
}

proptest! {
    #[test]
    fn recursion_matches_direct_sum(p in arb_params(4, -1.0), x in arb_inputs(15, 4)) {
        let series = latent_series(&p, &x).unwrap();
        for s in 0..x.len() {
            let d = latent(s, &p, &x);
            prop_assert!((series[s] - d).abs() <= 1e-12 * d.abs().max(1.0));
        }
    }

    #[test]
    fn intensity_is_a_probability(p in arb_params(4, -1.0), x in arb_inputs(15, 4)) {
        for l in lambda_series(&p, &x).unwrap() {
            prop_assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn more_signal_never_lowers_intensity(p in arb_params(4, 0.0), x in arb_inputs(15, 4), bump in prop::collection::vec(0.0f64..30.0, 15 * 4)) {
        let base = lambda_series(&p, &x).unwrap();
        let mut y = x.clone();
        for (s, lag) in y.lags.iter_mut().enumerate() {
            for (k, v) in lag.iter_mut().enumerate() {
                *v = (*v + bump[s * 4 + k]).min(100.0);
            }
        }
        for (a, b) in base.iter().zip(lambda_series(&p, &y).unwrap()) {
            prop_assert!(b >= *a);
        }
    }

    #[test]
    fn intensity_ignores_the_present_and_future(p in arb_params(4, -1.0), x in arb_inputs(15, 4), y in arb_inputs(15, 4), cut in 0usize..15) {
        // Splice: steps before `cut` from x, the rest from y. Lags at `cut`
        // are future signal relative to steps < cut only, so they are spliced too.
        let mut z = x.clone();
        for s in cut..15 {
            z.treatments[s] = y.treatments[s];
            z.outcome_mag[s] = y.outcome_mag[s];
            z.lags[s] = y.lags[s].clone();
            z.hours[s] = y.hours[s];
        }
        let a = lambda_series(&p, &x).unwrap();
        let b = lambda_series(&p, &z).unwrap();
        for s in 0..cut {
            prop_assert_eq!(a[s].to_bits(), b[s].to_bits());
        }
        // Treatments and outcomes at step `cut` itself are also invisible to it.
        let mut q = x.clone();
        q.treatments[cut] ^= 1;
        q.outcome_mag[cut] += 1.0;
        prop_assert_eq!(lambda_series(&p, &q).unwrap()[cut].to_bits(), a[cut].to_bits());
    }
}
