use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use restminer::collection::ParamValuePair;
use restminer::model::{sample_list, sequence_loss, train_and_generate, ModelConfig, ModelParams, Vocabulary};

/// Relative error with a floor so that gradients which are both ~0 compare equal.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let step = 1e-5;
    for instance in 0..20 {
        let params = ModelParams::random(6, 4, 5, &mut rng);
        let tokens: Vec<usize> = (0..4).map(|_| rng.gen_range(0..6)).collect();
        let mut analytic = params.zeros_like();
        sequence_loss(&params, &tokens, Some(&mut analytic));

        let blocks = params.blocks();
        let grads = analytic.blocks();
        for (b, ((name, values, _), (_, g, _))) in blocks.iter().zip(&grads).enumerate() {
            for i in 0..values.len() {
                let mut plus = params.clone();
                plus.blocks_mut()[b].1[i] += step;
                let mut minus = params.clone();
                minus.blocks_mut()[b].1[i] -= step;
                let numeric = (sequence_loss(&plus, &tokens, None).loss - sequence_loss(&minus, &tokens, None).loss)
                    / (2.0 * step);
                let err = rel_err(g[i], numeric);
                assert!(
                    err < 1e-4,
                    "instance {instance} {name}[{i}]: analytic {} numeric {numeric} rel {err}",
                    g[i]
                );
            }
        }
    }
}

type Corpus = Vec<(String, Vec<ParamValuePair>)>;

/// Five templates, each always sending the same four mutations in order.
fn chain_corpus(n: usize) -> (Corpus, BTreeMap<String, Vec<ParamValuePair>>) {
    let chains: BTreeMap<String, Vec<ParamValuePair>> = (0..5)
        .map(|t| {
            let pairs = (0..4)
                .map(|p| ParamValuePair::new(format!("p{p}"), format!("v{t}{p}")))
                .collect();
            (format!("GET /t{t}"), pairs)
        })
        .collect();
    let names: Vec<&String> = chains.keys().collect();
    let corpus = (0..n)
        .map(|i| {
            let name = names[i % names.len()];
            (name.clone(), chains[name].clone())
        })
        .collect();
    (corpus, chains)
}

#[test]
fn learns_fixed_chains() {
    let (corpus, chains) = chain_corpus(2000);
    let config = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let started = Instant::now();
    let mut losses = Vec::new();
    let it = train_and_generate(&corpus, &config, &mut rng, |e| losses.push(e.loss)).unwrap();
    let elapsed = started.elapsed();
    let acc = it.model.validation_accuracy.unwrap();
    assert!(acc >= 0.95, "validation top-1 {acc}, losses {losses:?}");
    assert!(
        it.model.wall_time.as_secs_f64() < 60.0,
        "training took {:?}",
        it.model.wall_time
    );
    assert!(elapsed.as_secs_f64() < 60.0);

    for (template, chain) in &chains {
        let hits = (0..50)
            .filter(|_| {
                let l = sample_list(&it.model.params, &it.vocabulary, template, it.max_len, &mut rng).unwrap();
                &l.pairs == chain
            })
            .count();
        assert!(hits as f64 / 50.0 > 0.9, "{template}: {hits}/50");
    }
}

#[test]
fn same_seed_same_model_and_lists() {
    let (corpus, _) = chain_corpus(100);
    let config = ModelConfig {
        epochs: 2,
        ..ModelConfig::default()
    };
    let a = train_and_generate(&corpus, &config, &mut ChaCha8Rng::seed_from_u64(1), |_| {}).unwrap();
    let b = train_and_generate(&corpus, &config, &mut ChaCha8Rng::seed_from_u64(1), |_| {}).unwrap();
    assert_eq!(a.model.params, b.model.params);
    assert_eq!(a.lists, b.lists);
    assert_eq!(a.vocabulary, b.vocabulary);
}

#[test]
fn vocabulary_matches_corpus() {
    let (corpus, _) = chain_corpus(10);
    // terminator + 5 names + 20 scoped pairs
    assert_eq!(Vocabulary::build(&corpus).len(), 26);
}
