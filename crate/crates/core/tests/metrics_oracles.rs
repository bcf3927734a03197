mod common;

use common::{rng, white_noise};
use envsep::metrics::{
    evaluate_permuted, sar, sdr, sir, BssDecomposition, BssEvaluator, SourceMetrics, DB_CAP,
    DEFAULT_FILTER_LEN,
};
use envsep::spectrogram::AudioSignal;
use itertools::Itertools;
use rand::Rng;

fn energy(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn signal(v: Vec<f64>) -> AudioSignal {
    AudioSignal::new(v, 8000).unwrap()
}

#[test]
fn mixture_of_references_and_noise_is_split_by_energy() {
    let n = 40_000;
    let r1 = white_noise(n, 1);
    let r2 = white_noise(n, 2);
    let noise: Vec<f64> = white_noise(n, 3).iter().map(|x| 0.2 * x).collect();
    let est: Vec<f64> = (0..n).map(|i| 0.7 * r1[i] + 0.3 * r2[i] + noise[i]).collect();
    let evaluator = BssEvaluator::from_slices(&[&r1, &r2], DEFAULT_FILTER_LEN).unwrap();
    let d = evaluator.decompose(&est, 0).unwrap();
    let close = |got: f64, want: f64| (got / want - 1.0).abs() < 0.05;
    assert!(close(energy(&d.s_target), 0.49 * energy(&r1)));
    assert!(close(energy(&d.e_interf), 0.09 * energy(&r2)));
    assert!(close(energy(&d.e_artif), energy(&noise)));
}

#[test]
fn other_reference_lands_in_interference() {
    let n = 8000;
    let r1 = white_noise(n, 4);
    let r2 = white_noise(n, 5);
    let evaluator = BssEvaluator::from_slices(&[&r1, &r2], 64).unwrap();
    let d = evaluator.decompose(&r2, 0).unwrap();
    assert!(energy(&d.s_target) < 1e-2 * energy(&r2));
    assert!((energy(&d.e_interf) / energy(&r2) - 1.0).abs() < 0.02);
}

#[test]
fn metrics_match_log_ratio_oracle() {
    let mut rng = rng(6);
    for _ in 0..50 {
        let mut part = || (0..200).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (t, i, a) = (part(), part(), part());
        let d = BssDecomposition::from_parts(t.clone(), i.clone(), a.clone()).unwrap();
        let db = |num: f64, den: f64| 10.0 * (num / den).log10();
        let ia: Vec<f64> = i.iter().zip(&a).map(|(x, y)| x + y).collect();
        let ti: Vec<f64> = t.iter().zip(&i).map(|(x, y)| x + y).collect();
        assert!((sdr(&d) - db(energy(&t), energy(&ia))).abs() < 1e-10);
        assert!((sir(&d) - db(energy(&t), energy(&i))).abs() < 1e-10);
        assert!((sar(&d) - db(energy(&ti), energy(&a))).abs() < 1e-10);
    }
}

#[test]
fn added_noise_lowers_sar_monotonically() {
    let n = 16_000;
    let r1 = white_noise(n, 7);
    let r2 = white_noise(n, 8);
    let evaluator = BssEvaluator::from_slices(&[&r1, &r2], 128).unwrap();
    let noise = white_noise(n, 9);
    let mut last = f64::INFINITY;
    for level in [0.01, 0.03, 0.1, 0.3, 1.0] {
        let est: Vec<f64> = r1.iter().zip(&noise).map(|(r, e)| r + level * e).collect();
        let m = SourceMetrics::of(&evaluator.decompose(&est, 0).unwrap());
        assert!(m.sar < last);
        assert!(m.sir > 20.0, "sir {}", m.sir);
        last = m.sar;
    }
}

#[test]
fn two_by_two_assignment_matches_brute_force() {
    let n = 6000;
    let refs = vec![signal(white_noise(n, 10)), signal(white_noise(n, 11))];
    let mix = |a: f64, s1: u64| -> AudioSignal {
        let e = white_noise(n, s1);
        signal(
            (0..n)
                .map(|i| a * refs[0].samples()[i] + (1.0 - a) * refs[1].samples()[i] + 0.1 * e[i])
                .collect(),
        )
    };
    let estimates = vec![mix(0.2, 12), mix(0.9, 13)];
    let report = evaluate_permuted(&estimates, &refs).unwrap();
    let evaluator = BssEvaluator::new(&refs, DEFAULT_FILTER_LEN).unwrap();
    let score = |i: usize, j: usize| {
        SourceMetrics::of(&evaluator.decompose(estimates[i].samples(), j).unwrap()).sdr
    };
    let best = (0..2)
        .permutations(2)
        .max_by(|p, q| {
            let sp: f64 = p.iter().enumerate().map(|(i, &j)| score(i, j)).sum();
            let sq: f64 = q.iter().enumerate().map(|(i, &j)| score(i, j)).sum();
            sp.partial_cmp(&sq).unwrap()
        })
        .unwrap();
    assert_eq!(report.permutation, best);
    assert_eq!(report.permutation, vec![1, 0]);
}

#[test]
fn shuffled_perfect_estimates_score_at_the_cap() {
    let refs: Vec<AudioSignal> = (0..3).map(|s| signal(white_noise(3000, 20 + s))).collect();
    let estimates = vec![refs[2].clone(), refs[0].clone(), refs[1].clone()];
    let report = evaluate_permuted(&estimates, &refs).unwrap();
    assert_eq!(report.permutation, vec![2, 0, 1]);
    assert!(report.per_source.iter().all(|m| m.sdr > 100.0 && m.sdr <= DB_CAP));
    let single = evaluate_permuted(&refs[..1], &refs[..1]).unwrap();
    assert_eq!(single.permutation, vec![0]);
}
