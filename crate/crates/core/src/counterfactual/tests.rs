use proptest::prelude::*;

use super::*;
use crate::timeline::{ObservationWindow, SignalTimeline, DAY, HOUR, MINUTE};

fn ramp(n: usize) -> SignalTimeline {
    SignalTimeline::new(0, HOUR, (0..n).map(|k| (k % 97) as f64 + 1.0).collect()).unwrap()
}

fn window() -> InterventionWindow {
    InterventionWindow::new(10 * DAY, 17 * DAY).unwrap()
}

#[test]
fn window_indices_are_half_open() {
    let s = ramp(30 * 24);
    assert_eq!(window().indices(&s), (240, 408));
    let w = InterventionWindow::for_post(DAY, &ObservationWindow::default());
    assert_eq!((w.start, w.end), (8 * DAY, 15 * DAY));
}

#[test]
fn full_exposure_is_identity() {
    let s = ramp(30 * 24);
    let out = apply_cf(&s, &CounterfactualSpec::exposure(1.0, 5), &window()).unwrap();
    assert_eq!(out, s);
}

#[test]
fn zero_exposure_clears_the_window_only() {
    let s = ramp(30 * 24);
    let out = apply_cf(&s, &CounterfactualSpec::exposure(0.0, 5), &window()).unwrap();
    let (lo, hi) = window().indices(&s);
    for k in 0..s.len() {
        let expected = if (lo..hi).contains(&k) { 0.0 } else { s.values()[k] };
        assert_eq!(out.values()[k], expected, "index {k}");
    }
}

#[test]
fn exposure_masks_are_nested_and_calibrated() {
    let s = SignalTimeline::new(0, 10 * MINUTE, vec![50.0; 30_000]).unwrap();
    let w = InterventionWindow::new(0, 30_000 * 10 * MINUTE).unwrap();
    let kept = |r: f64| {
        let out = apply_cf(&s, &CounterfactualSpec::exposure(r, 11), &w).unwrap();
        out.values().iter().map(|&v| v > 0.0).collect::<Vec<_>>()
    };
    let (a, b) = (kept(0.2), kept(0.4));
    assert!(a.iter().zip(&b).all(|(x, y)| !x || *y));
    let frac = b.iter().filter(|&&k| k).count() as f64 / b.len() as f64;
    let sd = (0.4f64 * 0.6 / b.len() as f64).sqrt();
    assert!((frac - 0.4).abs() < 4.0 * sd, "kept fraction {frac}");
}

#[test]
fn dropout_is_the_exposure_complement() {
    let s = ramp(30 * 24);
    let d = CounterfactualSpec {
        kind: CfKind::Dropout { rate: 0.75 },
        rng_seed: 2,
    };
    let e = CounterfactualSpec::exposure(0.25, 2);
    assert_eq!(apply_cf(&s, &d, &window()).unwrap(), apply_cf(&s, &e, &window()).unwrap());
}

#[test]
fn zero_shift_is_identity() {
    let s = ramp(30 * 24);
    assert_eq!(apply_cf(&s, &CounterfactualSpec::timing_shift(0.0), &window()).unwrap(), s);
}

#[test]
fn earlier_shift_moves_content_and_zeroes_the_tail() {
    let s = ramp(30 * 24);
    let out = apply_cf(&s, &CounterfactualSpec::timing_shift(-1.0), &window()).unwrap();
    let (lo, hi) = window().indices(&s);
    let v = out.values();
    for k in lo..hi {
        assert_eq!(v[k - 24], s.values()[k]);
    }
    assert!(v[hi - 24..hi].iter().all(|&x| x == 0.0));
    assert_eq!(&v[..lo - 24], &s.values()[..lo - 24]);
    assert_eq!(&v[hi..], &s.values()[hi..]);
}

#[test]
fn later_shift_zeroes_the_head() {
    let s = ramp(30 * 24);
    let out = apply_cf(&s, &CounterfactualSpec::timing_shift(2.0), &window()).unwrap();
    let (lo, hi) = window().indices(&s);
    assert!(out.values()[lo..lo + 48].iter().all(|&x| x == 0.0));
    assert_eq!(out.values()[lo + 48], s.values()[lo]);
    assert_eq!(out.values()[hi + 47], s.values()[hi - 1]);
}

#[test]
fn shift_before_timeline_start_fails() {
    let s = ramp(30 * 24);
    let r = apply_cf(&s, &CounterfactualSpec::timing_shift(-11.0), &window());
    assert!(matches!(r, Err(crate::Error::OutOfRange { .. })));
    let off_grid = CounterfactualSpec::timing_shift(0.01);
    assert!(apply_cf(&s, &off_grid, &window()).is_err());
}

fn plateau() -> SignalTimeline {
    // 2 days of 80 starting a day into the window, baseline 5 elsewhere.
    let v = (0..30 * 24)
        .map(|k| if (11 * 24..13 * 24).contains(&k) { 80.0 } else { 5.0 })
        .collect();
    SignalTimeline::new(0, HOUR, v).unwrap()
}

#[test]
fn observed_duration_is_identity() {
    let s = plateau();
    let d = Duration::observed(&s, &window(), DEFAULT_ELEVATION_THRESHOLD);
    assert_eq!(d, 2 * DAY);
    let out = Duration {
        duration: d,
        threshold: DEFAULT_ELEVATION_THRESHOLD,
    }
    .apply(&s, &window())
    .unwrap();
    assert_eq!(out, s);
}

#[test]
fn duration_truncates_and_extends() {
    let s = plateau();
    let short = apply_cf(&s, &CounterfactualSpec::duration(1.0), &window()).unwrap();
    assert_eq!(Duration::observed(&short, &window(), 30.0), DAY);
    assert_eq!(short.values()[12 * 24], 5.0);
    let long = apply_cf(&s, &CounterfactualSpec::duration(5.0), &window()).unwrap();
    assert_eq!(Duration::observed(&long, &window(), 30.0), 5 * DAY);
    assert_eq!(long.values()[15 * 24], 80.0);
    assert_eq!(long.values()[16 * 24], 5.0);
    // Extension stops at the end of the window.
    let huge = apply_cf(&s, &CounterfactualSpec::duration(20.0), &window()).unwrap();
    assert_eq!(Duration::observed(&huge, &window(), 30.0), 6 * DAY);
    assert_eq!(huge.values()[17 * 24], 5.0);
}

#[test]
fn duration_without_elevation_is_identity() {
    let s = SignalTimeline::new(0, HOUR, vec![5.0; 30 * 24]).unwrap();
    assert_eq!(apply_cf(&s, &CounterfactualSpec::duration(3.0), &window()).unwrap(), s);
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(CounterfactualSpec::exposure(1.5, 0).validate().is_err());
    assert!(CounterfactualSpec::duration(0.0).validate().is_err());
    assert!(CounterfactualSpec::timing_shift(f64::NAN).validate().is_err());
}

#[test]
fn spec_json_shape() {
    let s: CounterfactualSpec = serde_json::from_str(r#"{"kind":"exposure","rate":0.2,"rng_seed":3}"#).unwrap();
    assert_eq!(s, CounterfactualSpec::exposure(0.2, 3));
    let d: CounterfactualSpec = serde_json::from_str(r#"{"kind":"duration","days":3}"#).unwrap();
    assert_eq!(d, CounterfactualSpec::duration(3.0));
    assert!(serde_json::from_str::<CounterfactualSpec>(r#"{"kind":"exposure","rate":0.2,"bogus":1}"#).is_err());
}

#[test]
fn grid_has_nine_labelled_cells() {
    let g = standard_grid(0);
    let labels: Vec<&str> = g.iter().map(|c| c.label.as_str()).collect();
    assert_eq!(labels.len(), 9);
    for prefix in ["CF1-1", "CF1-2", "CF1-3", "CF2-1", "CF2-2", "CF2-3", "CF3-1", "CF3-2", "CF3-3"] {
        assert!(labels.iter().any(|l| l.starts_with(prefix)), "{prefix}");
    }
}

fn any_spec() -> impl Strategy<Value = CounterfactualSpec> {
    prop_oneof![
        (0.0f64..=1.0, any::<u64>()).prop_map(|(r, s)| CounterfactualSpec::exposure(r, s)),
        (-9i64..=9).prop_map(|d| CounterfactualSpec::timing_shift(d as f64)),
        (1i64..=8).prop_map(|d| CounterfactualSpec::duration(d as f64)),
    ]
}

proptest! {
    #[test]
    fn transforms_stay_inside_their_reach(spec in any_spec(), values in prop::collection::vec(0.0f64..=100.0, 30 * 24)) {
        let s = SignalTimeline::new(0, HOUR, values).unwrap();
        let w = window();
        let out = apply_cf(&s, &spec, &w).unwrap();
        prop_assert_eq!(out.len(), s.len());
        prop_assert_eq!(out.start(), s.start());
        let shift = match spec.kind {
            CfKind::TimingShift { days } => (days * 24.0) as i64,
            _ => 0,
        };
        let (lo, hi) = w.indices(&s);
        let reach_lo = (lo as i64 + shift.min(0)) as usize;
        let reach_hi = ((hi as i64 + shift.max(0)) as usize).min(s.len());
        for k in (0..reach_lo).chain(reach_hi..s.len()) {
            prop_assert_eq!(out.values()[k].to_bits(), s.values()[k].to_bits());
        }
        prop_assert!(out.values().iter().all(|v| (0.0..=100.0).contains(v)));
    }
}

mod effects {
    use super::*;
    use crate::backbones::{build_model, Backbone, FeatureSpec, Integration, ModelConfig};
    use crate::dataset::{Dataset, Split};
    use crate::synthgen::{gen_signal, make_dataset, DatasetConfig, DgpParams, SignalScenario};
    use crate::timeline::{EngagementHistory, NormStats, Post};
    use crate::training::Forecaster;

    fn data(seed: u64) -> Dataset {
        let signal = gen_signal(&SignalScenario::random(30, 8, seed)).unwrap();
        let cfg = DatasetConfig {
            n_posts: 12,
            ..DatasetConfig::default()
        };
        make_dataset(&signal, &cfg, &DgpParams::default(), seed).unwrap()
    }

    fn forecaster(d: &Dataset, integration: Integration) -> Forecaster {
        let cfg = ModelConfig {
            backbone: Backbone::Ssm,
            integration,
            depth: 1,
            d_model: 8,
            hidden: 8,
            state: 4,
            seed: 2,
            ..ModelConfig::default()
        };
        Forecaster {
            model: build_model(&cfg).unwrap(),
            features: FeatureSpec {
                window: d.window,
                ..FeatureSpec::default()
            },
            norm: NormStats::fit(d.train()),
        }
    }

    fn boot() -> BootstrapConfig {
        BootstrapConfig {
            n_bootstrap: 100,
            seed: 4,
        }
    }

    #[test]
    fn identity_contrasts_have_zero_effect_and_interval() {
        let d = data(1);
        let fc = forecaster(&d, Integration::Adapter);
        let all: Vec<usize> = (0..d.posts.len()).collect();
        let std = d.metric_std();
        for post in &d.posts {
            let win = InterventionWindow::for_post(post.t0, &d.window);
            let dur = Duration::observed(&d.signal, &win, DEFAULT_ELEVATION_THRESHOLD);
            let contrasts = [
                Contrast::against_factual("e1", CounterfactualSpec::exposure(1.0, 9)),
                Contrast::against_factual("s0", CounterfactualSpec::timing_shift(0.0)),
                Contrast::against_factual("dur", CounterfactualSpec::duration(dur as f64 / DAY as f64)),
            ];
            for c in &contrasts {
                if c.label == "dur" && dur == 0 {
                    continue;
                }
                let e = cf_effect(&fc, post, &d.signal, c).unwrap();
                assert_eq!(e.horizon, [0.0; 4], "{}", c.label);
            }
        }
        for c in [
            Contrast::against_factual("e1", CounterfactualSpec::exposure(1.0, 9)),
            Contrast::against_factual("s0", CounterfactualSpec::timing_shift(0.0)),
        ] {
            let ate = ate_gcomp(&fc, &d, &all, &c, &std, &boot()).unwrap();
            assert_eq!(ate.ate_normalized, 0.0);
            assert_eq!(ate.ci95, (0.0, 0.0));
        }
    }

    #[test]
    fn signal_free_model_has_no_effect() {
        let d = data(2);
        let fc = forecaster(&d, Integration::None);
        for c in standard_grid(3).iter().chain([&Contrast::full_exposure(3)]) {
            for post in d.posts.iter().take(4) {
                assert_eq!(cf_effect(&fc, post, &d.signal, c).unwrap().horizon, [0.0; 4]);
            }
        }
    }

    #[test]
    fn identical_posts_give_zero_width_interval() {
        let d = data(3);
        let post = d.posts[0].clone();
        let posts: Vec<Post> = (0..10).map(|_| post.clone()).collect();
        let same = Dataset::new(d.signal.clone(), posts, Split::shuffled(10, 1), d.window).unwrap();
        let fc = forecaster(&d, Integration::Selection);
        let all: Vec<usize> = (0..10).collect();
        let ate = ate_gcomp(&fc, &same, &all, &Contrast::full_exposure(1), &[1.0; 4], &boot()).unwrap();
        assert_eq!(ate.ci95.0, ate.ci95.1);
        assert_eq!(ate.ci95.0, ate.ate_normalized);
    }

    #[test]
    fn bootstrap_is_seeded_and_brackets_the_estimate() {
        let d = data(4);
        let fc = forecaster(&d, Integration::Adapter);
        let all: Vec<usize> = (0..d.posts.len()).collect();
        let std = d.metric_std();
        let c = Contrast::full_exposure(5);
        let a = ate_gcomp(&fc, &d, &all, &c, &std, &boot()).unwrap();
        let b = ate_gcomp(&fc, &d, &all, &c, &std, &boot()).unwrap();
        assert_eq!(a, b);
        assert!(a.ci95.0 <= a.ate_normalized && a.ate_normalized <= a.ci95.1);
        assert_eq!(a.trajectory.len(), d.window.k());
        for m in 0..4 {
            assert!((a.trajectory.last().unwrap()[m] - a.ate_per_metric[m]).abs() < 1e-9);
        }
        let short = BootstrapConfig {
            n_bootstrap: 99,
            seed: 0,
        };
        assert!(matches!(ate_gcomp(&fc, &d, &all, &c, &std, &short), Err(crate::Error::Config(_))));
    }

    #[test]
    fn summarize_matches_direct_means() {
        let effects: Vec<CfEffect> = (0..7)
            .map(|i| CfEffect {
                horizon: [i as f64, 2.0 * i as f64, 0.0, -(i as f64)],
                trajectory: vec![[i as f64, 0.0, 0.0, 0.0]],
            })
            .collect();
        let std = [1.0, 2.0, 4.0, 1.0];
        let s = summarize("x", &effects, &std, &boot()).unwrap();
        assert_eq!(s.ate_per_metric, [3.0, 6.0, 0.0, -3.0]);
        assert_eq!(s.ate_normalized, (3.0 + 3.0 + 0.0 - 3.0) / 4.0);
        assert_eq!(s.trajectory, vec![[3.0, 0.0, 0.0, 0.0]]);
        assert_eq!(s.n_posts, 7);
    }

    #[test]
    fn zero_signal_grid_is_all_zero() {
        let d = data(5);
        let flat = d.signal.with_values(vec![0.0; d.signal.len()]).unwrap();
        let zero = Dataset { signal: flat, ..d.clone() };
        let fc = forecaster(&d, Integration::Selection);
        let all: Vec<usize> = (0..zero.posts.len()).collect();
        let grid = scenario_grid(&fc, &zero, &all, &standard_grid(1), &[1.0; 4], &boot()).unwrap();
        assert_eq!(grid.len(), 9);
        for g in &grid {
            assert_eq!(g.ate_normalized, 0.0, "{}", g.label);
            assert_eq!(g.ci95, (0.0, 0.0));
        }
    }

    #[test]
    fn grid_csvs_have_expected_shape() {
        let d = data(6);
        let fc = forecaster(&d, Integration::Adapter);
        let all: Vec<usize> = (0..d.posts.len()).collect();
        let grid = scenario_grid(&fc, &d, &all, &standard_grid(1), &d.metric_std(), &boot()).unwrap();
        let mut wide = Vec::new();
        write_grid_csv(&mut wide, &grid).unwrap();
        let wide = String::from_utf8(wide).unwrap();
        let lines: Vec<&str> = wide.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(
            lines[0],
            "scenario,ate,ci_lo,ci_hi,ate_likes,ate_shares,ate_comments,ate_emoji,n_posts,n_bootstrap"
        );
        assert!(lines[1].starts_with("CF1-1 (0%→20%),"));
        let mut long = Vec::new();
        write_grid_long_csv(&mut long, &grid).unwrap();
        let rows = String::from_utf8(long).unwrap().lines().count();
        assert_eq!(rows, 1 + 9 * (1 + 4 * (1 + d.window.k())));

        let dir = tempfile::tempdir().unwrap();
        save_grid(dir.path(), &grid).unwrap();
        let back: Vec<AteEstimate> =
            serde_json::from_slice(&std::fs::read(dir.path().join("ate_grid.json")).unwrap()).unwrap();
        assert_eq!(back, grid);
    }

    #[test]
    fn empty_history_posts_are_rejected() {
        let d = data(7);
        let fc = forecaster(&d, Integration::Adapter);
        let empty = Post::new("e", d.posts[0].t0, "", "", "", EngagementHistory::empty()).unwrap();
        assert!(cf_effect(&fc, &empty, &d.signal, &Contrast::full_exposure(0)).is_err());
    }
}
