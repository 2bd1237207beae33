use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnn_asr::decoder::{brute_force_decode, Alphabet, BeamConfig, Decoder, NoCharLm, TableCharLm};

fn random_rows(rng: &mut ChaCha8Rng, frames: usize, width: usize) -> Vec<Vec<f64>> {
    (0..frames)
        .map(|_| {
            let r: Vec<f64> = (0..width).map(|_| rng.gen_range(0.01..1.0)).collect();
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

fn exact(alpha: f64) -> BeamConfig {
    BeamConfig { beam_width: 100_000, alpha, lambda: 0.0, beta: 0.0, prune_period: 0 }
}

#[test]
fn unpruned_search_equals_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphabet = Alphabet::letters(3);
    for trial in 0..25 {
        let frames = 1 + trial % 6;
        let rows = random_rows(&mut rng, frames, alphabet.am_dim());
        let alpha = [0.0, 0.5, 1.0, 2.0][trial % 4];
        let mut oracle_lm = TableCharLm::random(3, &mut ChaCha8Rng::seed_from_u64(trial as u64));
        let lm = TableCharLm::random(3, &mut ChaCha8Rng::seed_from_u64(trial as u64));
        let expected = brute_force_decode(&rows, &alphabet, &mut oracle_lm, alpha).unwrap();
        let mut dec = Decoder::new(alphabet.clone(), exact(alpha), lm, None).unwrap();
        for r in &rows {
            dec.step(r).unwrap();
        }
        let got = dec.hypotheses();
        assert_eq!(got.len(), expected.len(), "trial {trial}");
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.labels, e.labels, "trial {trial}");
            assert!((g.log_prob - e.log_prob).abs() < 1e-9, "trial {trial}: {} vs {}", g.log_prob, e.log_prob);
        }
    }
}

#[test]
fn total_probability_is_conserved_without_lm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows = random_rows(&mut rng, 6, 3);
    let mut dec = Decoder::new(Alphabet::letters(2), exact(0.0), NoCharLm, None).unwrap();
    for r in &rows {
        dec.step(r).unwrap();
    }
    let total: f64 = dec.hypotheses().iter().map(|h| h.log_prob.exp()).sum();
    assert!((total - 1.0).abs() < 1e-9);
}

#[test]
fn all_blank_input_decodes_to_nothing() {
    let alphabet = Alphabet::standard();
    let mut row = vec![0.0; alphabet.am_dim()];
    row[alphabet.blank()] = 1.0;
    let mut dec = Decoder::new(alphabet, BeamConfig::default(), TableCharLm::uniform(30), None).unwrap();
    for _ in 0..250 {
        assert!(dec.step(&row).unwrap().is_empty());
    }
    let best = dec.best_hypothesis().unwrap();
    assert!(best.labels.is_empty());
    assert_eq!(best.log_prob, 0.0);
    assert_eq!(dec.live_hypotheses(), 1);
}

fn common_prefix(seqs: &[Vec<usize>]) -> usize {
    let first = &seqs[0];
    (0..first.len()).take_while(|&i| seqs.iter().all(|s| s.get(i) == Some(&first[i]))).count()
}

#[test]
fn depth_prune_emits_longest_common_prefix() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let alphabet = Alphabet::letters(4);
    for trial in 0..30 {
        // peaked posteriors so beams share long prefixes
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let mut r = vec![0.002; 5];
                r[rng.gen_range(0..5)] = 1.0;
                let s: f64 = r.iter().sum();
                r.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let cfg = BeamConfig { beam_width: 6, alpha: 0.0, lambda: 0.0, beta: 0.0, prune_period: 0 };
        let mut dec = Decoder::new(alphabet.clone(), cfg, NoCharLm, None).unwrap();
        let mut emitted = Vec::new();
        for (t, r) in rows.iter().enumerate() {
            dec.step(r).unwrap();
            if t % 7 == 6 {
                let before: Vec<Vec<usize>> = dec.hypotheses().into_iter().map(|h| h.labels).collect();
                let lcp = common_prefix(&before);
                let fresh = dec.prune_depth();
                emitted.extend(fresh);
                assert_eq!(emitted, before[0][..lcp].to_vec(), "trial {trial} frame {t}");
                let after: Vec<Vec<usize>> = dec.hypotheses().into_iter().map(|h| h.labels).collect();
                assert_eq!(after, before, "re-rooting must not change hypotheses");
            }
        }
    }
}

#[test]
fn periodic_depth_pruning_does_not_change_the_result() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet = Alphabet::letters(5);
    let rows: Vec<Vec<f64>> = (0..300)
        .map(|_| {
            let mut r: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..0.05)).collect();
            r[rng.gen_range(0..6)] += 1.0;
            let s: f64 = r.iter().sum();
            r.into_iter().map(|v| v / s).collect()
        })
        .collect();
    let mut results = Vec::new();
    for period in [0, 1, 13, 100] {
        let cfg = BeamConfig { beam_width: 16, alpha: 0.7, lambda: 0.0, beta: 0.0, prune_period: period };
        let lm = TableCharLm::random(5, &mut ChaCha8Rng::seed_from_u64(1));
        let mut dec = Decoder::new(alphabet.clone(), cfg, lm, None).unwrap();
        for r in &rows {
            dec.step(r).unwrap();
        }
        let best = dec.best_hypothesis().unwrap();
        if period > 0 {
            assert!(best.labels.starts_with(dec.emitted()));
        }
        results.push(best);
    }
    for r in &results[1..] {
        assert_eq!(r.labels, results[0].labels);
        assert!((r.log_prob - results[0].log_prob).abs() < 1e-9);
    }
}
