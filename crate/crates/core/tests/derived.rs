//! Simulation checks against known generating parameters.

use parley_core::agreement::{fit_annotator_model, EmOptions};
use parley_core::sbirl::fit_and_evaluate;
use parley_core::strategyclf::{baselines, train_logistic};
use parley_core::synthlab::{
    gen_annotations, gen_sbirl, gen_trust, AnnotationConfig, AnnotatorSpec, SbirlConfig, TrustConfig,
};
use parley_core::trustmodel::{fit_fixed_effects, fit_fixed_effects_on};
use parley_core::{SparseVector, Strategy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn asymmetric_annotators_recover_theta() {
    let spec = AnnotatorSpec { sensitivity: 0.9, specificity: 0.8 };
    let cfg = AnnotationConfig {
        seed: 11,
        n_items: 5000,
        prevalence: 0.4,
        annotators: vec![spec; 5],
    };
    let (m, _) = gen_annotations(&cfg).unwrap();
    let r = fit_annotator_model(&m, EmOptions::default()).unwrap();
    assert!((r.theta - 0.85).abs() < 0.03, "theta {}", r.theta);
}

#[test]
fn coin_flip_annotator_is_detected() {
    let mut annotators: Vec<AnnotatorSpec> = [0.9, 0.85, 0.8].map(AnnotatorSpec::symmetric).to_vec();
    annotators.push(AnnotatorSpec::symmetric(0.5));
    let cfg = AnnotationConfig {
        seed: 5,
        n_items: 5000,
        prevalence: 0.5,
        annotators,
    };
    let (m, _) = gen_annotations(&cfg).unwrap();
    let r = fit_annotator_model(&m, EmOptions::default()).unwrap();
    let coin = r.per_annotator["a3"].theta();
    assert!((coin - 0.5).abs() < 0.03, "coin-flip theta {coin}");
}

#[test]
fn noisy_scores_lower_winner_accuracy() {
    let run = |sigma| {
        let inst = gen_sbirl(&SbirlConfig { seed: 3, n_threads: 500, sigma, ..Default::default() }).unwrap();
        fit_and_evaluate(&inst.threads, 0.9, 0.0).unwrap().1.accuracy
    };
    let (clean, noisy) = (run(0.0), run(2.0));
    assert_eq!(clean, 1.0);
    assert!(noisy < clean, "{noisy} vs {clean}");
}

#[test]
fn single_thread_in_one_dimension_is_interpolated() {
    let inst = gen_sbirl(&SbirlConfig { seed: 9, n_threads: 1, dim: 1, ..Default::default() }).unwrap();
    let (m, e) = fit_and_evaluate(&inst.threads, 0.9, 0.0).unwrap();
    assert!((m.theta[0] - inst.theta_star[0]).abs() < 1e-10);
    assert_eq!(e.accuracy, 1.0);
}

#[test]
fn zero_strategy_effects_stay_within_two_standard_errors() {
    let mut covered = [0usize; 5];
    for seed in 0..100 {
        let inst = gen_trust(&TrustConfig {
            seed,
            n: 2000,
            n_games: 6,
            coefficients: [0.0; 5],
            ..Default::default()
        })
        .unwrap();
        let r = fit_fixed_effects(&inst.observations).unwrap();
        for s in Strategy::ALL {
            let c = r.strategy(s);
            if c.estimate.abs() <= 2.0 * c.se {
                covered[s.index()] += 1;
            }
        }
    }
    let total: usize = covered.iter().sum();
    assert!(total >= 475, "covered {covered:?}");
}

#[test]
fn friendliness_effect_recovered_from_binary_outcomes() {
    let inst = gen_trust(&TrustConfig::default()).unwrap();
    let r = fit_fixed_effects(&inst.observations).unwrap();
    let est = r.strategy(Strategy::Friendliness).estimate;
    assert!((est + 0.2).abs() < 0.02, "{est}");
}

#[test]
fn friendliness_effect_recovered_from_graded_outcomes() {
    let inst = gen_trust(&TrustConfig { seed: 21, ..Default::default() }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let y: Vec<f64> = inst
        .observations
        .iter()
        .map(|o| {
            let friendly = if o.strategies[Strategy::Friendliness.index()] { 1.0 } else { 0.0 };
            0.5 - 0.2 * friendly + inst.game_effects[&o.game_id] + noise.sample(&mut rng)
        })
        .collect();
    let r = fit_fixed_effects_on(&inst.observations, &y, 1).unwrap();
    let est = r.strategy(Strategy::Friendliness).estimate;
    assert!((est + 0.2).abs() < 0.01, "{est}");
    for g in 2..=12u32 {
        let fe = r.get(&format!("game_{g}")).unwrap().estimate;
        assert!((fe - inst.game_effects[&g]).abs() < 0.01);
    }
}

#[test]
fn logistic_recovers_a_known_boundary() {
    let (w, b) = ([1.5, -2.0], 0.3);
    let label = |x: [f64; 2]| u8::from(w[0] * x[0] + w[1] * x[1] + b > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..5000 {
        let x = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        xs.push(SparseVector::from_dense(&x));
        ys.push(label(x));
    }
    let model = train_logistic(&xs, &ys, 1e-3, false).unwrap();
    let mut hits = 0;
    let mut total = 0;
    for i in 0..=40 {
        for j in 0..=40 {
            let x = [-1.0 + 0.05 * f64::from(i), -1.0 + 0.05 * f64::from(j)];
            let pred = u8::from(model.decision(&SparseVector::from_dense(&x)) >= 0.0);
            hits += usize::from(pred == label(x));
            total += 1;
        }
    }
    let acc = hits as f64 / total as f64;
    assert!(acc >= 0.98, "grid accuracy {acc}");
}

#[test]
fn random_baseline_is_near_chance_on_balanced_data() {
    let ys: Vec<u8> = (0..1000).map(|i| (i % 2) as u8).collect();
    let (majority, random) = baselines(&ys, &ys, 4).unwrap();
    assert!((random.accuracy - 0.5).abs() < 0.05, "{}", random.accuracy);
    assert!((majority.accuracy - 0.5).abs() < 1e-12);
}
