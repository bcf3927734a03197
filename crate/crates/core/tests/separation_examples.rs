mod common;

use common::error_db;
use envsep::config::SeparationConfig;
use envsep::harness::{
    concatenate, generate_mixture, MixtureSpec, PreparedCase, SuiteLayout, SyntheticSuite,
};
use envsep::nmf::InitMode;
use envsep::separation::{separate_blind, separate_informed, separate_unconstrained, SeparationMode};
use envsep::spectrogram::AudioSignal;

fn disjoint_suite() -> SyntheticSuite {
    SyntheticSuite {
        num_mixtures: 1,
        duration_secs: 3.0,
        layout: SuiteLayout::Disjoint,
        ..Default::default()
    }
}

fn seeded(config: &SeparationConfig, seed: u64) -> SeparationConfig {
    SeparationConfig {
        seed,
        ..config.clone()
    }
}

#[test]
fn solo_mixture_goes_to_the_matching_instrument() {
    let suite = disjoint_suite();
    let spec = suite.mixture_spec(0);
    let solo = MixtureSpec {
        note_clips: vec![spec.note_clips[0].clone()],
        repeat_single_clip: vec![false],
        ..spec.clone()
    };
    let mixture = generate_mixture(&solo).unwrap().mixture;
    let result = separate_informed(&mixture, &spec.training_clips, &suite.config()).unwrap();
    let energies: Vec<f64> = result.sources.iter().map(AudioSignal::energy).collect();
    let share = energies[0] / energies.iter().sum::<f64>();
    assert!(share >= 0.9, "matching share {share}");
}

#[test]
fn informed_separates_disjoint_envelopes() {
    let suite = disjoint_suite();
    let case = PreparedCase::new(&suite.mixture_spec(0)).unwrap();
    let report = case.run(SeparationMode::Informed, &suite.config()).unwrap();
    for m in &report.per_source {
        assert!(m.sdr >= 10.0, "sdr {}", m.sdr);
    }
}

struct SeedRuns {
    blind: [f64; 2],
    informed: [f64; 2],
}

/// Mean per-source SDR of blind and informed runs over ten seeds on one
/// disjoint-envelope mixture.
fn disjoint_seed_runs() -> SeedRuns {
    let suite = disjoint_suite();
    let case = PreparedCase::new(&suite.mixture_spec(0)).unwrap();
    let config = suite.config();
    let mut runs = SeedRuns {
        blind: [0.0; 2],
        informed: [0.0; 2],
    };
    for seed in 0..10 {
        let cfg = seeded(&config, seed);
        let blind = case.run(SeparationMode::Blind, &cfg).unwrap();
        let informed = case.run(SeparationMode::Informed, &cfg).unwrap();
        for i in 0..2 {
            runs.blind[i] += blind.per_source[i].sdr / 10.0;
            runs.informed[i] += informed.per_source[i].sdr / 10.0;
        }
    }
    println!("blind {:?} dB, informed {:?} dB", runs.blind, runs.informed);
    runs
}

#[test]
fn blind_separates_disjoint_envelopes_over_seeds() {
    let runs = disjoint_seed_runs();
    assert!(runs.blind.iter().all(|&sdr| sdr >= 3.0));
}

// Measured: blind 32.5 dB vs informed 30.1 dB mean SDR. With two resonances
// per instrument in disjoint bands, the blind group averages already find
// the true envelopes, and the trained ones add nothing.
#[test]
#[ignore = "fails: blind beats informed on disjoint envelopes (32.5 vs 30.1 dB)"]
fn blind_is_not_better_than_informed_on_disjoint_envelopes() {
    let runs = disjoint_seed_runs();
    let mean = |v: [f64; 2]| (v[0] + v[1]) / 2.0;
    assert!(mean(runs.blind) <= mean(runs.informed));
}

#[test]
fn sparse_init_is_not_worse_at_twenty_bases() {
    let suite = SyntheticSuite {
        num_mixtures: 10,
        duration_secs: 3.0,
        ..Default::default()
    };
    let config = SeparationConfig {
        bases_per_instrument: 20,
        ..suite.config()
    };
    let (mut sparse, mut normal) = (0.0, 0.0);
    for (i, spec) in suite.mixture_specs().iter().enumerate() {
        let case = PreparedCase::new(spec).unwrap();
        let cfg = seeded(&config, i as u64);
        let with = |init| SeparationConfig { init_mode: init, ..cfg.clone() };
        sparse += case.run(SeparationMode::Blind, &with(InitMode::Sparse)).unwrap().mean().sdr;
        normal += case.run(SeparationMode::Blind, &with(InitMode::Normal)).unwrap().mean().sdr;
    }
    println!("sparse {:.2} dB, normal {:.2} dB", sparse / 10.0, normal / 10.0);
    assert!(sparse >= normal);
}

#[test]
fn soft_mask_sources_add_up_to_the_mixture() {
    let suite = disjoint_suite();
    let mixture = generate_mixture(&suite.mixture_spec(0)).unwrap().mixture;
    let config = SeparationConfig {
        iterations: 20,
        ..suite.config()
    };
    let result = separate_blind(&mixture, 2, &config).unwrap();
    let total: Vec<f64> = (0..mixture.len())
        .map(|n| result.sources.iter().map(|s| s.samples()[n]).sum())
        .collect();
    let err: Vec<f64> = total.iter().zip(mixture.samples()).map(|(a, b)| a - b).collect();
    assert!(error_db(&err, mixture.samples()) < -60.0);
    let again = separate_blind(&mixture, 2, &config).unwrap();
    assert_eq!(result.per_source_spectrograms, again.per_source_spectrograms);
    assert_eq!(result.sources, again.sources);
}

#[test]
fn baseline_trace_is_finite_and_non_increasing() {
    let suite = disjoint_suite();
    let mixture = generate_mixture(&suite.mixture_spec(0)).unwrap().mixture;
    let config = SeparationConfig {
        iterations: 30,
        ..suite.config()
    };
    let result = separate_unconstrained(&mixture, 2, &config).unwrap();
    let trace = &result.divergence_trace;
    assert_eq!(trace.len(), 30);
    assert!(trace.iter().all(|d| d.is_finite()));
    assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9 * w[0].abs()));
}

#[test]
fn training_clip_count_sets_the_instrument_count() {
    let suite = disjoint_suite();
    let spec = suite.mixture_spec(0);
    let mixture = generate_mixture(&spec).unwrap().mixture;
    let config = SeparationConfig {
        iterations: 5,
        ..suite.config()
    };
    let mut clips = spec.training_clips.clone();
    clips.push(concatenate(&spec.note_clips[1]).unwrap());
    let result = separate_informed(&mixture, &clips, &config).unwrap();
    assert_eq!(result.sources.len(), 3);
    assert_eq!(result.bases.ncols(), 3 * config.bases_per_instrument);
}
