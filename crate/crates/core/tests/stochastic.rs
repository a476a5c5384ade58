//! Rates of seeded random draws across many distinct seeds.

use pairalign::decode::{generate_topp, generate_topp_batch, LengthLimits, SamplingSchedule, ScriptedProvider, ScriptedTable, PROVIDER_SCHEMA};
use pairalign::objectives::{eligible_mask_positions, sa_gates, sample_mask_set};
use pairalign::{Alphabet, TokenSequence};

/// `|observed - n p| <= 3 sqrt(n p (1 - p))`.
fn within_three_sigma(hits: usize, n: usize, p: f64) -> bool {
    let n = n as f64;
    (hits as f64 - n * p).abs() <= 3.0 * (n * p * (1.0 - p)).sqrt()
}

#[test]
fn mask_rate_over_distinct_seeds() {
    let ab = Alphabet::with_size(16).unwrap();
    let mut toks = vec![ab.bos];
    toks.extend((0..30).map(|i| i % 16));
    toks.push(ab.eos);
    let target = TokenSequence::new(toks, ab).unwrap();
    let eligible = eligible_mask_positions(&target).len();
    assert_eq!(eligible, 30);
    for p in [0.15, 0.5] {
        let mut hits = 0;
        for seed in 0..2000 {
            let m = sample_mask_set(&target, p, seed).unwrap();
            assert!(m.positions.iter().all(|&pos| pos >= 2));
            hits += m.len();
        }
        assert!(within_three_sigma(hits, 2000 * eligible, p), "p = {p}: {hits}");
    }
}

#[test]
fn gate_rate_over_distinct_seeds() {
    let p_sa = 0.3;
    let open: usize = (0..5000u64).map(|seed| usize::from(sa_gates(p_sa, seed, 1).unwrap()[0])).sum();
    assert!(within_three_sigma(open, 5000, 1.0 - p_sa), "{open}");
    let stream = sa_gates(p_sa, 99, 20_000).unwrap();
    let open = stream.iter().filter(|&&g| g == 1).count();
    assert!(within_three_sigma(open, 20_000, 1.0 - p_sa), "{open}");
}

fn uniform_provider(ab: &Alphabet) -> ScriptedProvider {
    ScriptedProvider::from_table(ScriptedTable {
        schema: PROVIDER_SCHEMA.into(),
        vocab: ab.vocab_size(),
        default: Some(vec![0.0; ab.vocab_size()]),
        entries: vec![],
    })
    .unwrap()
}

fn schedule() -> SamplingSchedule {
    SamplingSchedule {
        k_early: 3,
        tau_early: 1.0,
        tau_late: 0.8,
        p_early: 0.99,
        p_late: 0.95,
        gamma_early: 1.05,
        gamma_late: 1.1,
        freq_window: None,
    }
}

#[test]
fn batch_items_use_their_own_streams() {
    let ab = Alphabet::with_size(8).unwrap();
    let provider = uniform_provider(&ab);
    let limits = LengthLimits { rho: 0.15, l_min: 5, l_max: 20 };
    let items: Vec<(String, usize)> = (0..6).map(|i| (format!("c{i}"), 60)).collect();
    let batch = generate_topp_batch(&provider, &ab, &items, &schedule(), limits, 5).unwrap();
    assert_eq!(batch[0], generate_topp(&provider, &ab, "c0", 60, &schedule(), limits, 5).unwrap());
    let again = generate_topp_batch(&provider, &ab, &items[..3], &schedule(), limits, 5).unwrap();
    assert_eq!(&batch[..3], &again[..]);
}

#[test]
fn distinct_seeds_give_distinct_first_tokens_at_the_uniform_rate() {
    // Under a flat provider the first token is uniform over content plus EOS.
    let ab = Alphabet::with_size(8).unwrap();
    let provider = uniform_provider(&ab);
    let limits = LengthLimits { rho: 0.15, l_min: 5, l_max: 20 };
    let n = 4000;
    let mut eos_first = 0;
    for seed in 0..n {
        let out = generate_topp(&provider, &ab, "", 0, &schedule(), limits, seed).unwrap();
        if out.tokens()[1] == ab.eos {
            eos_first += 1;
        }
    }
    assert!(within_three_sigma(eos_first, n as usize, 1.0 / 9.0), "{eos_first}");
}
