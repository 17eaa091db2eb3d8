use proptest::prelude::*;

use super::*;
use crate::counterfactual::CounterfactualSpec;

fn flat(value: f64, len: usize) -> SignalTimeline {
    SignalTimeline::new(0, 10 * MINUTE, vec![value; len]).unwrap()
}

fn params(mu: f64, eta: f64, phi: f64, kappa: f64, steps: usize) -> DgpParams {
    DgpParams {
        mu,
        eta,
        phi,
        kappa,
        steps,
        ..DgpParams::default()
    }
}

fn mc_totals(signal: &SignalTimeline, p: &DgpParams, seeds: u64) -> (f64, f64) {
    let xs: Vec<f64> = (0..seeds)
        .map(|s| gen_cascade(signal, 0, p, s, 0).unwrap().total() as f64)
        .collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn flat_scenario_is_constant() {
    let sc = SignalScenario {
        start: 0,
        step: 600,
        len: 50,
        baseline: 30.0,
        spikes: vec![],
        noise: 0.0,
        seed: 1,
    };
    assert_eq!(gen_signal(&sc).unwrap().values(), &[30.0; 50]);
}

#[test]
fn scenario_is_deterministic_and_clipped() {
    let mut sc = SignalScenario::random(10, 4, 7);
    assert_eq!(gen_signal(&sc).unwrap(), gen_signal(&sc).unwrap());
    sc.spikes = vec![Spike {
        center: DAY,
        amplitude: 200.0,
        width: HOUR,
    }];
    let s = gen_signal(&sc).unwrap();
    assert_eq!(s.values().iter().cloned().fold(0.0, f64::max), 100.0);
    assert!(s.values().iter().all(|v| (0.0..=100.0).contains(v)));
}

#[test]
fn no_drive_means_no_events() {
    let c = gen_cascade(&flat(80.0, 200), 0, &params(0.0, 0.0, 0.7, 0.5, 150), 3, 0).unwrap();
    assert_eq!(c.total(), 0);
}

#[test]
fn poisson_mean_matches_rate() {
    let (mean, _) = mc_totals(&flat(0.0, 200), &params(0.5, 0.0, 0.0, 0.5, 100), 10_000);
    let tol = 3.0 * 50f64.sqrt() / 100.0;
    assert!((mean - 50.0).abs() < tol, "mean {mean}");
}

#[test]
fn doubling_signal_adds_its_share() {
    let p = params(0.1, 0.8, 0.0, 0.5, 100);
    let g1 = SignalTimeline::new(0, 600, (0..200).map(|k| (k % 40) as f64).collect()).unwrap();
    let g2 = g1.with_values(g1.values().iter().map(|v| 2.0 * v).collect()).unwrap();
    let e1 = expected_counts(&g1, 0, &p).unwrap();
    let e2 = expected_counts(&g2, 0, &p).unwrap();
    let added: f64 = g1.values()[..100].iter().map(|g| p.eta * g / 100.0).sum();
    assert!((e2.cumulative[99] - e1.cumulative[99] - added).abs() < 1e-9);
    let (m1, se1) = mc_totals(&g1, &p, 10_000);
    let (m2, se2) = mc_totals(&g2, &p, 10_000);
    let se = (se1 * se1 + se2 * se2).sqrt();
    assert!((m2 - m1 - added).abs() < 3.0 * se, "{m2} - {m1} vs {added}");
}

#[test]
fn no_excitation_gives_exogenous_rate() {
    let g = SignalTimeline::new(0, 600, (0..50).map(|k| k as f64).collect()).unwrap();
    let p = params(0.3, 0.5, 0.0, 0.5, 40);
    let e = expected_counts(&g, 0, &p).unwrap();
    for (s, v) in e.per_step.iter().enumerate() {
        assert_eq!(*v, 0.3 + 0.5 * s as f64 / 100.0);
    }
}

#[test]
fn hand_iterated_recursion() {
    let e = expected_counts(&flat(0.0, 10), 0, &params(1.0, 0.0, 0.5, 1.0, 3)).unwrap();
    assert_eq!(e.per_step, vec![1.0, 1.5, 2.25]);
    assert_eq!(e.cumulative, vec![1.0, 2.5, 4.75]);
}

#[test]
fn supercritical_is_rejected() {
    for phi in [1.0, 1.5] {
        let p = params(1.0, 0.0, phi, 0.5, 3);
        assert!(matches!(expected_counts(&flat(0.0, 10), 0, &p), Err(Error::Supercritical(_))));
        assert!(matches!(gen_cascade(&flat(0.0, 10), 0, &p, 0, 0), Err(Error::Supercritical(_))));
    }
}

#[test]
fn eta_scales_the_exogenous_part() {
    let g = SignalTimeline::new(0, 600, (0..60).map(|k| (k * 3 % 100) as f64).collect()).unwrap();
    let base = expected_counts(&g, 0, &params(0.2, 0.0, 0.0, 0.5, 50)).unwrap();
    let one = expected_counts(&g, 0, &params(0.2, 1.0, 0.0, 0.5, 50)).unwrap();
    let three = expected_counts(&g, 0, &params(0.2, 3.0, 0.0, 0.5, 50)).unwrap();
    for s in 0..50 {
        let d1 = one.per_step[s] - base.per_step[s];
        let d3 = three.per_step[s] - base.per_step[s];
        assert!((d3 - 3.0 * d1).abs() < 1e-12);
    }
}

fn full_window() -> ObservationWindow {
    ObservationWindow::new(DAY, DAY, 2 * DAY).unwrap()
}

#[test]
fn identity_and_no_gain_give_zero_effect() {
    let sc = SignalScenario::random(12, 3, 2);
    let g = gen_signal(&sc).unwrap();
    let win = full_window();
    let p = post_params(&DgpParams::default(), 0.4, &win);
    let id = Contrast::against_factual("id", CounterfactualSpec::exposure(1.0, 0));
    assert_eq!(true_ate(&g, &id, 6 * DAY, &p, &win).unwrap(), [0.0; DIMS]);
    let mut blind = p.clone();
    blind.eta = 0.0;
    for c in crate::counterfactual::standard_grid(4) {
        assert_eq!(true_ate(&g, &c, 6 * DAY, &blind, &win).unwrap(), [0.0; DIMS]);
    }
}

#[test]
fn unit_spike_effect_has_closed_form() {
    let mut v = vec![0.0; 6 * 144];
    let spike_at = 2 * 144 + 37;
    v[spike_at] = 70.0;
    let g = SignalTimeline::new(0, 10 * MINUTE, v).unwrap();
    let win = full_window();
    let p = DgpParams {
        phi: 0.0,
        ..post_params(&DgpParams::default(), 0.6, &win)
    };
    let d = true_ate(&g, &Contrast::full_exposure(9), DAY, &p, &win).unwrap();
    for m in 0..DIMS {
        let expected = 0.6 * 70.0 / 100.0 * p.mark_probs[m];
        assert!((d[m] - expected).abs() < 1e-12, "{m}: {} vs {expected}", d[m]);
    }
}

#[test]
fn datasets_are_reproducible_and_varied() {
    let sc = SignalScenario::random(30, 8, 5);
    let g = gen_signal(&sc).unwrap();
    let cfg = DatasetConfig {
        n_posts: 100,
        ..DatasetConfig::default()
    };
    let p = DgpParams::default();
    let a = make_dataset(&g, &cfg, &p, 17).unwrap();
    let b = make_dataset(&g, &cfg, &p, 17).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.split.train.len(), a.split.val.len(), a.split.test.len()), (70, 15, 15));
    let mut distinct = 0;
    for i in 0..a.posts.len() {
        for j in i + 1..a.posts.len() {
            if a.posts[i].history().observations().iter().map(|o| o.counts).ne(a.posts[j]
                .history()
                .observations()
                .iter()
                .map(|o| o.counts))
            {
                distinct += 1;
            }
        }
    }
    assert_eq!(distinct, 100 * 99 / 2);
    let win = cfg.window;
    for post in &a.posts {
        let h = post.history();
        assert_eq!(h.last().unwrap().t, win.horizon_end(post.t0));
        let grid = crate::timeline::prediction_grid(post.t0, &win);
        assert!(grid.iter().all(|t| h.observations().iter().any(|o| o.t == *t)));
        assert!(h.observations().iter().any(|o| o.t == win.observed_end(post.t0)));
    }
}

#[test]
fn sources_set_post_counts_and_labels() {
    let g = gen_signal(&SignalScenario::random(30, 8, 5)).unwrap();
    let cfg = DatasetConfig {
        sources: vec![
            SourceSpec { name: "a".into(), eta: 0.1, n_posts: 3 },
            SourceSpec { name: "b".into(), eta: 0.9, n_posts: 5 },
        ],
        ..DatasetConfig::default()
    };
    let d = make_dataset(&g, &cfg, &DgpParams::default(), 1).unwrap();
    assert_eq!(d.posts.len(), 8);
    assert_eq!(d.posts.iter().filter(|p| p.user_ref == "b").count(), 5);
}

#[test]
fn oracle_on_blind_sources_is_zero() {
    let g = gen_signal(&SignalScenario::random(30, 8, 5)).unwrap();
    let p = DgpParams {
        eta: 0.0,
        ..DgpParams::default()
    };
    let cfg = DatasetConfig {
        n_posts: 20,
        ..DatasetConfig::default()
    };
    let d = make_dataset(&g, &cfg, &p, 1).unwrap();
    let sources = cfg.resolved_sources(&p);
    let o = oracle_ate(&d, &p, &sources, &Contrast::full_exposure(0), &d.split.test).unwrap();
    assert_eq!(o.normalized, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn earlier_events_ignore_later_signal(cut in 1usize..80, bump in 1.0f64..60.0, seed in any::<u64>()) {
        let p = params(0.3, 2.0, 0.4, 0.5, 80);
        let g = SignalTimeline::new(0, 600, (0..100).map(|k| (k % 17) as f64).collect()).unwrap();
        let altered = g
            .with_values(g.values().iter().enumerate().map(|(k, v)| if k >= cut { (v + bump).min(100.0) } else { *v }).collect())
            .unwrap();
        let a = gen_cascade(&g, 0, &p, seed, 3).unwrap();
        let b = gen_cascade(&altered, 0, &p, seed, 3).unwrap();
        prop_assert_eq!(&a.counts[..cut], &b.counts[..cut]);
    }

    #[test]
    fn shifting_the_signal_shifts_expectations(shift in 1usize..30) {
        let sc = SignalScenario { noise: 0.0, ..SignalScenario::random(2, 3, 8) };
        let g = gen_signal(&sc).unwrap();
        let mut shifted = vec![0.0; shift];
        shifted.extend_from_slice(&g.values()[..g.len() - shift]);
        let gs = g.with_values(shifted).unwrap();
        let p = params(0.1, 1.5, 0.0, 0.5, 200);
        let e = expected_counts(&g, 0, &p).unwrap();
        let es = expected_counts(&gs, 0, &p).unwrap();
        for s in shift..200 {
            prop_assert_eq!(es.per_step[s].to_bits(), e.per_step[s - shift].to_bits());
        }
    }

    #[test]
    fn subcritical_mass_bound(phi in 0.0f64..0.99, kappa in 0.01f64..=0.5, mu in 0.0f64..2.0, eta in 0.0f64..2.0) {
        let g = SignalTimeline::new(0, 600, (0..300).map(|k| ((k * 7) % 100) as f64).collect()).unwrap();
        let p = params(mu, eta, phi, kappa, 250);
        let e = expected_counts(&g, 0, &p).unwrap();
        let r0: f64 = (0..250).map(|s| mu + eta * g.values()[s] / 100.0).sum();
        prop_assert!(e.cumulative[249] <= r0 / (1.0 - phi) * (1.0 + 1e-12));
    }

    #[test]
    fn cascade_histories_are_cumulative(seed in any::<u64>()) {
        let g = SignalTimeline::new(0, 600, (0..300).map(|k| (k % 50) as f64).collect()).unwrap();
        let c = gen_cascade(&g, 0, &params(0.2, 1.0, 0.5, 0.5, 250), seed, 0).unwrap();
        let times: Vec<i64> = (1..25).map(|k| k * 6000 + 13).collect();
        let h = c.history(&times).unwrap();
        for (o, t) in h.observations().iter().zip(&times) {
            prop_assert_eq!(o.counts, c.cumulative_at(*t));
        }
    }
}

#[test]
fn signal_config_overrides_only_level_and_noise() {
    let cfg = SignalConfig {
        baseline: 0.0,
        noise: 0.5,
        ..SignalConfig::default()
    };
    let sc = cfg.scenario(4).unwrap();
    let random = SignalScenario::random(30, 10, 4);
    assert_eq!(sc.spikes, random.spikes);
    assert_eq!((sc.baseline, sc.noise, sc.len), (0.0, 0.5, random.len));
    assert!(SignalConfig { days: 0, ..cfg.clone() }.scenario(4).is_err());
    assert!(SignalConfig { noise: -1.0, ..cfg }.scenario(4).is_err());
}
