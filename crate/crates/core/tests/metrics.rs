#![allow(clippy::type_complexity)]

mod oracle;

use std::collections::{BTreeMap, BTreeSet};

use normalign_core::corpus::{
    load_corpus, Annotation, AnnotatorProfile, Corpus, DemographicBinning, RoT, Source, UNKNOWN_BIN,
};
use normalign_core::extraction::{ExtractedAnswer, Verdict};
use normalign_core::metrics::{
    aggregate_human, mean_ada_met_by_group, mean_ada_met_by_source, score_all, LmAnswers,
};
use normalign_core::prompting::PromptVariant;
use normalign_core::scale::Choice;
use normalign_core::synthetic::{synthetic_corpus, write_corpus_files, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn answer(verdict: Verdict) -> ExtractedAnswer {
    ExtractedAnswer {
        verdict,
        evidence: String::new(),
        source_line: 1,
    }
}

fn random_lm(corpus: &Corpus, seed: u64) -> LmAnswers {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus
        .rots()
        .iter()
        .map(|r| {
            let v = if rng.random_bool(0.05) {
                Verdict::Refusal
            } else {
                Verdict::Option(Choice::from_value(rng.random_range(0..5)).unwrap())
            };
            (r.id.clone(), answer(v))
        })
        .collect()
}

fn oracle_inputs(
    corpus: &Corpus,
    lm: &LmAnswers,
) -> (BTreeMap<String, Vec<(String, u8)>>, BTreeMap<String, Option<u8>>) {
    let mut answers: BTreeMap<String, Vec<(String, u8)>> = BTreeMap::new();
    for a in corpus.annotations() {
        answers
            .entry(corpus.rots()[a.rot].id.clone())
            .or_default()
            .push((corpus.annotator_id(a.annotator).to_owned(), a.answer.value()));
    }
    let lm = lm
        .iter()
        .map(|(k, v)| (k.clone(), v.verdict.choice().map(Choice::value)))
        .collect();
    (answers, lm)
}

#[test]
fn study_shaped_corpus_loads_with_twenty_thousand_annotations() {
    let corpus = synthetic_corpus(&SyntheticConfig::default());
    let dir = tempfile::tempdir().unwrap();
    let files = write_corpus_files(&corpus, dir.path()).unwrap();
    let loaded = load_corpus(&files.rots, &files.annotations, Some(&files.profiles)).unwrap();
    assert_eq!(loaded.rots().len(), 400);
    assert_eq!(loaded.profiles().len(), 100);
    assert_eq!(loaded.annotations().len(), 20_000);
    assert!(loaded.count_mismatches(50).is_empty());
    assert_eq!(loaded.digest(), corpus.digest());
}

#[test]
fn demographic_groups_have_the_reference_sizes_and_partition() {
    let corpus = synthetic_corpus(&SyntheticConfig::default());
    assert_eq!(corpus.group_members("gender", "Female").unwrap().len(), 56);
    assert_eq!(corpus.group_members("gender", "Male").unwrap().len(), 44);
    assert_eq!(corpus.group_members("age", "50-69").unwrap().len(), 11);
    assert_eq!(corpus.group_members("income", "<30k").unwrap().len(), 24);
    assert_eq!(corpus.group_members("marital_status", "Divorced/Separated").unwrap().len(), 9);

    let binning = corpus.binning();
    for attribute in binning.attributes() {
        let mut all: Vec<&str> = Vec::new();
        for bin in binning.bins(attribute).unwrap().chain([UNKNOWN_BIN]) {
            all.extend(corpus.group_members(attribute, bin).unwrap());
        }
        all.sort_unstable();
        let before = all.len();
        all.dedup();
        assert_eq!(before, all.len(), "{attribute}: bins overlap");
        assert_eq!(all.len(), 100, "{attribute}");
    }
}

#[test]
fn aggregate_examples_match_brute_force_mode() {
    let cases: [(&[(Choice, usize)], f64, bool); 3] = [
        (&[(Choice::B, 25), (Choice::C, 25)], 1.5, true),
        (&[(Choice::D, 50)], 3.0, false),
        (&[(Choice::A, 10), (Choice::C, 10), (Choice::E, 10)], 2.0, true),
    ];
    for (counts, value, tied) in cases {
        let answers: Vec<Choice> = counts
            .iter()
            .flat_map(|&(c, n)| std::iter::repeat_n(c, n))
            .collect();
        let agg = aggregate_human(answers.iter().copied()).unwrap();
        let values: Vec<u8> = answers.iter().map(|c| c.value()).collect();
        assert_eq!(agg.value, oracle::brute_mode(&values).unwrap());
        assert_eq!(agg.value, value);
        assert_eq!(agg.tied, tied);
        assert_eq!(agg.n_annotators, answers.len());
    }
}

#[test]
fn source_means_match_plain_summation() {
    let corpus = synthetic_corpus(&SyntheticConfig {
        seed: 11,
        ..SyntheticConfig::default()
    });
    let lm = random_lm(&corpus, 12);
    let scores = score_all(&corpus, "m", PromptVariant::ZeroShot, &lm).unwrap();
    for source in Source::ALL {
        let values: Vec<f64> = scores
            .iter()
            .filter(|s| s.source == source)
            .map(|s| s.ada_met)
            .collect();
        assert_eq!(values.len(), 100);
        let got = mean_ada_met_by_source(&scores, source).unwrap();
        assert!((got - oracle::naive_mean(&values)).abs() <= 1e-12);
    }
}

#[test]
fn all_rot_mean_decomposes_into_source_means() {
    for seed in 0..20 {
        let corpus = synthetic_corpus(&SyntheticConfig {
            seed,
            ..SyntheticConfig::default()
        });
        let lm = random_lm(&corpus, seed + 1000);
        let scores = score_all(&corpus, "m", PromptVariant::ZeroShot, &lm).unwrap();
        let all: Vec<f64> = scores.iter().map(|s| s.ada_met).collect();
        let whole = oracle::naive_mean(&all);
        let mut weighted = 0.0;
        for source in Source::ALL {
            let n = scores.iter().filter(|s| s.source == source).count() as f64;
            weighted += n * mean_ada_met_by_source(&scores, source).unwrap();
        }
        weighted /= scores.len() as f64;
        assert!((whole - weighted).abs() <= 1e-12, "seed {seed}");
    }
}

/// Three annotators in one bin across five RoTs with partial coverage.
fn small_group_corpus() -> Corpus {
    let rots: Vec<RoT> = (0..5)
        .map(|i| RoT {
            id: format!("r{i}"),
            source: Source::ALL[i % 4],
            text: format!("rule {i}"),
        })
        .collect();
    let profiles: Vec<AnnotatorProfile> = [("a", "x"), ("b", "x"), ("c", "x"), ("d", "y"), ("e", "y")]
        .iter()
        .map(|(id, g)| AnnotatorProfile {
            annotator_id: (*id).to_owned(),
            attributes: [("team".to_owned(), (*g).to_owned())].into(),
        })
        .collect();
    // (rot, annotator, value)
    let raw: [(usize, usize, u8); 16] = [
        (0, 0, 0),
        (0, 1, 1),
        (0, 3, 4),
        (1, 0, 2),
        (1, 1, 2),
        (1, 2, 3),
        (1, 4, 0),
        (2, 3, 1),
        (2, 4, 1),
        (3, 2, 4),
        (3, 3, 0),
        (3, 4, 0),
        (4, 0, 1),
        (4, 1, 3),
        (4, 2, 3),
        (4, 3, 2),
    ];
    let annotations = raw
        .iter()
        .map(|&(rot, annotator, v)| Annotation {
            rot,
            annotator,
            answer: Choice::from_value(v).unwrap(),
        })
        .collect();
    let binning = DemographicBinning::from_toml_str("[team]\nx = [\"x\"]\ny = [\"y\"]\n").unwrap();
    Corpus::new(rots, profiles, annotations, binning, true).unwrap()
}

#[test]
fn small_group_mean_matches_brute_force() {
    let corpus = small_group_corpus();
    let lm: LmAnswers = [
        ("r0", Verdict::Option(Choice::B)),
        ("r1", Verdict::Option(Choice::C)),
        ("r2", Verdict::Refusal),
        ("r3", Verdict::Option(Choice::A)),
        ("r4", Verdict::Option(Choice::E)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_owned(), answer(v)))
    .collect();
    let (answers, lm_values) = oracle_inputs(&corpus, &lm);
    for bin in ["x", "y"] {
        let members: BTreeSet<String> = corpus
            .group_members("team", bin)
            .unwrap()
            .into_iter()
            .map(str::to_owned)
            .collect();
        let (want, n) = oracle::group_mean(&answers, &lm_values, &members).unwrap();
        let got = mean_ada_met_by_group(&corpus, &lm, "team", bin).unwrap();
        assert_eq!(got.n_rots, n, "{bin}");
        assert!((got.value - want).abs() <= 1e-12, "{bin}: {} vs {want}", got.value);
    }
    // Group x annotated r0, r1, r3, r4 only.
    assert_eq!(mean_ada_met_by_group(&corpus, &lm, "team", "x").unwrap().n_rots, 4);
}

#[test]
fn every_bin_of_a_synthetic_corpus_matches_brute_force() {
    let corpus = synthetic_corpus(&SyntheticConfig {
        seed: 5,
        ..SyntheticConfig::default()
    });
    let lm = random_lm(&corpus, 6);
    let (answers, lm_values) = oracle_inputs(&corpus, &lm);
    let binning = corpus.binning();
    for attribute in binning.attributes() {
        for bin in binning.bins(attribute).unwrap() {
            let members: BTreeSet<String> = corpus
                .group_members(attribute, bin)
                .unwrap()
                .into_iter()
                .map(str::to_owned)
                .collect();
            let got = mean_ada_met_by_group(&corpus, &lm, attribute, bin);
            match oracle::group_mean(&answers, &lm_values, &members) {
                Some((want, n)) => {
                    let got = got.unwrap();
                    assert_eq!(got.n_rots, n);
                    assert!((got.value - want).abs() <= 1e-12, "{attribute}={bin}");
                }
                None => assert!(got.is_err(), "{attribute}={bin}"),
            }
        }
    }
}

#[test]
fn a_copying_annotator_scores_zero() {
    let corpus = synthetic_corpus(&SyntheticConfig {
        rots_per_source: 5,
        annotators_per_rot: 100,
        seed: 2,
    });
    let target = corpus.annotator_index("H007").unwrap();
    let lm: LmAnswers = corpus
        .rots()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (_, c) = corpus.answers_at(i).iter().find(|(who, _)| *who == target).unwrap();
            (r.id.clone(), answer(Verdict::Option(*c)))
        })
        .collect();
    let binning =
        DemographicBinning::from_toml_str("[probe]\nme = [\"me\"]\nrest = [\"rest\"]\n").unwrap();
    let mut profiles = corpus.profiles().to_vec();
    for p in &mut profiles {
        let v = if p.annotator_id == "H007" { "me" } else { "rest" };
        p.attributes.insert("probe".into(), v.into());
    }
    let corpus = Corpus::new(
        corpus.rots().to_vec(),
        profiles,
        corpus.annotations().to_vec(),
        binning,
        true,
    )
    .unwrap();
    let got = mean_ada_met_by_group(&corpus, &lm, "probe", "me").unwrap();
    assert_eq!(got.value, 0.0);
    assert_eq!(got.n_rots, 20);
}

#[test]
fn all_annotator_group_equals_source_weighted_mean() {
    let corpus = synthetic_corpus(&SyntheticConfig {
        seed: 9,
        ..SyntheticConfig::default()
    });
    let lm = random_lm(&corpus, 10);
    let binning = DemographicBinning::from_toml_str("[everyone]\nall = [\"yes\"]\n").unwrap();
    let mut profiles = corpus.profiles().to_vec();
    for p in &mut profiles {
        p.attributes.insert("everyone".into(), "yes".into());
    }
    let corpus = Corpus::new(corpus.rots().to_vec(), profiles, corpus.annotations().to_vec(), binning, true)
        .unwrap();
    let group = mean_ada_met_by_group(&corpus, &lm, "everyone", "all").unwrap();
    let scores = score_all(&corpus, "m", PromptVariant::ZeroShot, &lm).unwrap();
    let weighted: f64 = Source::ALL
        .iter()
        .map(|s| 100.0 * mean_ada_met_by_source(&scores, *s).unwrap())
        .sum::<f64>()
        / 400.0;
    assert_eq!(group.n_rots, 400);
    assert!((group.value - weighted).abs() <= 1e-12);
}

#[test]
fn conf_hand_mean() {
    let values = [0.0, 1.0, 1.0, 2.0];
    let mean = normalign_core::metrics::mean(values).unwrap();
    assert_eq!(mean, 1.0);
}
