use gamora::analysis::{little_check, queue_slope};
use gamora::experiment::{replicate, run_seed, ExperimentSpec};
use gamora::io::parse_rate_profile;
use gamora::model::OccupancyModel;
use gamora::sim::{generate_arrivals, run_simulation, stream_rng, EstimationMode, SimParams, SimTrace, STREAM_ARRIVALS};
use gamora::stats::TTest;
use gamora::{ControllerPolicy, LineConfig, RateProfile};

fn day_profile() -> RateProfile {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/bad_gastein_like.csv");
    parse_rate_profile(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn two_station() -> LineConfig {
    LineConfig::new(10.0, 8, &[0.0, 0.04], 0.0)
}

fn four_station() -> LineConfig {
    LineConfig::new(10.0, 8, &[0.0, 0.04, 0.46, 1.0], 0.0)
}

fn stationary(total: f64) -> RateProfile {
    RateProfile::stationary([0.5, 0.2, 0.3, 0.0].iter().map(|v| v * total).collect())
}

fn runs(config: &LineConfig, profile: &RateProfile, controller: ControllerPolicy, horizon: f64, estimation: EstimationMode) -> Vec<SimTrace> {
    let spec = ExperimentSpec { controller, runs: 35, seed: 99, bin_width: 600.0, horizon, estimation };
    replicate(config, profile, &spec).unwrap()
}

#[test]
fn poisson_counts_have_the_right_mean() {
    let profile = RateProfile {
        breakpoints: vec![0.0, 100.0, 250.0],
        rates: vec![vec![0.3], vec![1.2], vec![0.0]],
    };
    let horizon = 400.0;
    let expected = 0.3 * 100.0 + 1.2 * 150.0;
    let reps = 1000;
    let total: usize = (0..reps)
        .map(|i| {
            let mut rng = stream_rng(run_seed(5, i), STREAM_ARRIVALS, 0);
            let times = generate_arrivals(&profile, 0, horizon, &mut rng);
            assert!(times.windows(2).all(|w| w[0] < w[1]));
            assert!(times.iter().all(|&t| t < 250.0));
            times.len()
        })
        .sum();
    let mean = total as f64 / reps as f64;
    assert!((mean - expected).abs() <= 3.0 * (expected / reps as f64).sqrt(), "mean {mean}");
}

#[test]
fn traces_satisfy_the_exact_invariants() {
    let day = day_profile();
    let mut with_delays = four_station();
    with_delays.travel_delays = vec![10.0, 25.0, 0.0];
    let mut random_r0 = LineConfig::new(10.0, 6, &[0.1, 0.5, 1.0], 2.0);
    random_r0.occupancy = OccupancyModel::Empirical { pmf: vec![0.2, 0.3, 0.3, 0.2, 0.0, 0.0, 0.0] };
    let cases = [
        (two_station(), day.clone(), ControllerPolicy::Gamora, EstimationMode::estimated(true, true)),
        (two_station(), day, ControllerPolicy::Static(vec![6, 8]), EstimationMode::default()),
        (four_station(), stationary(1.3), ControllerPolicy::Gamora, EstimationMode::estimated(true, false)),
        (with_delays, stationary(1.0), ControllerPolicy::NoControl, EstimationMode::estimated(false, true)),
        (random_r0, RateProfile::stationary(vec![0.3, 0.2, 0.1]), ControllerPolicy::Gamora, EstimationMode::default()),
    ];
    for (config, profile, controller, estimation) in cases {
        for seed in 0..5 {
            let params = SimParams { horizon: 7200.0, seed, controller: controller.clone(), estimation: estimation.clone() };
            let trace = run_simulation(&config, &profile, &params).unwrap();
            let problems = trace.verify();
            assert!(problems.is_empty(), "{}: {problems:?}", controller.label());
            for s in &trace.services {
                assert!((1..=config.gamma).contains(&s.eta_applied));
            }
            for iv in &trace.intervals {
                assert!(iv.sigma_hat.iter().all(|s| (0.0..=1.0).contains(s)));
                assert!(iv.lambda_hat.iter().all(|l| *l >= 0.0));
            }
        }
    }
}

#[test]
fn reruns_are_identical() {
    let params = SimParams { horizon: 3600.0, seed: 8, controller: ControllerPolicy::Gamora, estimation: EstimationMode::estimated(true, true) };
    let a = run_simulation(&two_station(), &day_profile(), &params).unwrap();
    let b = run_simulation(&two_station(), &day_profile(), &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn arrivals_do_not_depend_on_the_controller() {
    let profile = day_profile();
    let arrivals = |c: ControllerPolicy| -> Vec<f64> {
        let t = run_simulation(&two_station(), &profile, &SimParams::new(7200.0, 4, c)).unwrap();
        t.passengers.iter().map(|p| p.arrival_time).collect()
    };
    let base = arrivals(ControllerPolicy::NoControl);
    assert_eq!(base, arrivals(ControllerPolicy::Gamora));
    assert_eq!(base, arrivals(ControllerPolicy::Static(vec![6, 8])));
}

#[test]
fn rate_estimate_averages_to_the_true_rate() {
    let config = LineConfig::new(10.0, 8, &[1.0], 0.0);
    let traces = runs(&config, &RateProfile::stationary(vec![0.5]), ControllerPolicy::Gamora, 7200.0, EstimationMode::estimated(true, false));
    let (sum, n) = traces
        .iter()
        .flat_map(|t| t.intervals.iter().skip(1))
        .fold((0.0, 0usize), |(s, n), iv| (s + iv.lambda_hat[0], n + 1));
    let mean = sum / n as f64;
    assert!((mean - 0.5).abs() <= 0.05 * 0.5, "mean {mean}");
}

#[test]
fn leaving_probability_estimate_tracks_the_truth() {
    let traces = runs(&two_station(), &day_profile(), ControllerPolicy::Gamora, 25200.0, EstimationMode::estimated(true, true));
    // busy hours: the morning rush and the noon bump
    for (from, to) in [(600.0, 7200.0), (10800.0, 18000.0)] {
        let (sum, n) = traces
            .iter()
            .flat_map(|t| t.intervals.iter().filter(|iv| iv.time >= from && iv.time < to))
            .fold((0.0, 0usize), |(s, n), iv| (s + iv.sigma_hat[1], n + 1));
        let mean = sum / n as f64;
        assert!((mean - 0.04).abs() <= 0.02, "{from}-{to}: {mean}");
    }
}

fn slope_test(traces: &[SimTrace], station: usize) -> TTest {
    let slopes: Vec<f64> = traces.iter().map(|t| queue_slope(t, station, 3600.0)).collect();
    TTest::new(&slopes).unwrap()
}

#[test]
fn queues_settle_below_and_grow_above_the_threshold() {
    let threshold = 8.0 / 6.8;
    let below = runs(&four_station(), &stationary(0.9 * threshold), ControllerPolicy::NoControl, 7200.0, EstimationMode::default());
    for m in 0..4 {
        let t = slope_test(&below, m);
        assert!(t.mean.abs() < 0.002, "station {} slope {}", m + 1, t.mean);
    }
    let above = runs(&four_station(), &stationary(1.1 * threshold), ControllerPolicy::NoControl, 7200.0, EstimationMode::default());
    let t = slope_test(&above, 1);
    assert!(t.positive(0.95), "{t:?}");
    // excess demand at station 2 is 0.1 * 0.2 * threshold passengers per second
    assert!(t.mean > 0.5 * 0.02 * threshold, "{t:?}");
}

#[test]
fn littles_law_holds_below_the_threshold() {
    let threshold = 8.0 / 6.8;
    let traces = runs(&four_station(), &stationary(0.9 * threshold), ControllerPolicy::NoControl, 7200.0, EstimationMode::default());
    for m in 0..3 {
        let (mut l, mut lw) = (0.0, 0.0);
        for t in &traces {
            let c = little_check(t, m, 3600.0, 7200.0).unwrap();
            l += c.mean_queue;
            lw += c.arrival_rate * c.mean_wait;
        }
        let err = (l - lw).abs() / l;
        assert!(err < 0.10, "station {}: L {l} vs lambda W {lw}", m + 1);
    }
}
