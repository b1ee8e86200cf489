//! Seeded synthetic corpora with the shape of the 400-RoT, 100-annotator
//! study: 100 RoTs per source, 50 answers per RoT, and a population whose
//! demographic marginals match the reference annotator table exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Annotation, AnnotatorProfile, Corpus, DemographicBinning, RoT, Source};
use crate::scale::Choice;
use crate::tsv;

/// Raw category counts per attribute for a 100-annotator population. Raw
/// labels deliberately use the short and split forms (`50-59`, `<30`, ...)
/// so the default binning has work to do.
pub const POPULATION: &[(&str, &[(&str, usize)])] = &[
    ("gender", &[("Female", 56), ("Male", 44)]),
    (
        "age",
        &[("18-29", 26), ("30-39", 38), ("40-49", 25), ("50-59", 6), ("60-69", 5)],
    ),
    (
        "race",
        &[
            ("White", 83),
            ("White|Native", 4),
            ("Hispanic", 3),
            ("Black", 2),
            ("White|Black", 2),
            ("Asian", 2),
            ("White|Asian", 2),
            ("White|Other", 1),
            ("White|Hispanic", 1),
        ],
    ),
    ("marital_status", &[("Never", 56), ("Married", 35), ("Divorced", 5), ("Separated", 4)]),
    ("economic_class", &[("Upper-Middle/Middle", 48), ("Working", 43), ("Lower", 9)]),
    ("education", &[("Bachelor", 62), ("Non Bachelor", 38)]),
    (
        "income",
        &[("<30", 24), ("30", 15), ("40", 11), ("50", 24), ("75", 15), ("100+", 11)],
    ),
    ("children", &[("No", 64), ("Yes", 36)]),
    ("geographic_area", &[("Suburban", 49), ("Rural", 27), ("Urban", 24)]),
];

pub const POPULATION_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub rots_per_source: usize,
    pub annotators_per_rot: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            rots_per_source: 100,
            annotators_per_rot: 50,
            seed: 0,
        }
    }
}

const OPENERS: [&str; 6] = [
    "It is good to",
    "It's rude to",
    "You should",
    "It is wrong to",
    "It's okay to",
    "People are expected to",
];

const ACTIONS: [&str; 12] = [
    "be patient with strangers",
    "keep promises to friends",
    "tip at restaurants",
    "ask before borrowing things",
    "return calls from family",
    "apologize when you are late",
    "share food with roommates",
    "help a coworker who is struggling",
    "tell the truth to a partner",
    "split the bill on a first date",
    "visit your parents on holidays",
    "read other people's messages",
];

pub fn annotator_id(i: usize) -> String {
    format!("H{:03}", i + 1)
}

pub fn rot_id(source: Source, i: usize) -> String {
    format!("{}-{:03}", source, i + 1)
}

/// 100 profiles whose per-attribute counts equal [`POPULATION`]; values are
/// shuffled independently per attribute.
pub fn study_population<R: Rng>(rng: &mut R) -> Vec<AnnotatorProfile> {
    let mut columns: Vec<(&str, Vec<&str>)> = Vec::new();
    for (attribute, counts) in POPULATION {
        let mut values: Vec<&str> = counts
            .iter()
            .flat_map(|&(v, n)| std::iter::repeat_n(v, n))
            .collect();
        debug_assert_eq!(values.len(), POPULATION_SIZE);
        values.shuffle(rng);
        columns.push((attribute, values));
    }
    (0..POPULATION_SIZE)
        .map(|i| AnnotatorProfile {
            annotator_id: annotator_id(i),
            attributes: columns
                .iter()
                .map(|(a, vals)| ((*a).to_owned(), vals[i].to_owned()))
                .collect(),
        })
        .collect()
}

pub fn synthetic_rots(rots_per_source: usize) -> Vec<RoT> {
    let mut rots = Vec::with_capacity(rots_per_source * Source::ALL.len());
    for (s, source) in Source::ALL.into_iter().enumerate() {
        for i in 0..rots_per_source {
            let n = s * rots_per_source + i;
            let opener = OPENERS[n % OPENERS.len()];
            let action = ACTIONS[(n / OPENERS.len()) % ACTIONS.len()];
            rots.push(RoT {
                id: rot_id(source, i),
                source,
                text: format!("{opener} {action}."),
            });
        }
    }
    rots
}

/// Answers cluster around a per-RoT centre: the centre itself with
/// probability 0.6, one step either way with 0.2 each (clamped to the scale).
fn noisy_answer<R: Rng>(rng: &mut R, centre: u8) -> Choice {
    let r: f64 = rng.random();
    let v = if r < 0.2 {
        centre.saturating_sub(1)
    } else if r < 0.8 {
        centre
    } else {
        (centre + 1).min(4)
    };
    Choice::from_value(v).expect("clamped to scale")
}

pub fn synthetic_corpus(config: &SyntheticConfig) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let profiles = study_population(&mut rng);
    let rots = synthetic_rots(config.rots_per_source);
    let per_rot = config.annotators_per_rot.min(POPULATION_SIZE);
    let pool: Vec<usize> = (0..POPULATION_SIZE).collect();
    let mut annotations = Vec::with_capacity(rots.len() * per_rot);
    for rot in 0..rots.len() {
        let centre = rng.random_range(0..=4u8);
        let mut who: Vec<usize> = pool.choose_multiple(&mut rng, per_rot).copied().collect();
        who.sort_unstable();
        for annotator in who {
            annotations.push(Annotation {
                rot,
                annotator,
                answer: noisy_answer(&mut rng, centre),
            });
        }
    }
    Corpus::new(rots, profiles, annotations, DemographicBinning::standard(), false)
        .expect("synthetic population is covered by the default binning")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusFiles {
    pub rots: PathBuf,
    pub annotations: PathBuf,
    pub profiles: PathBuf,
}

/// Writes `rots.tsv`, `annotations.tsv` and `profiles.tsv` under `dir`.
pub fn write_corpus_files(corpus: &Corpus, dir: &Path) -> io::Result<CorpusFiles> {
    std::fs::create_dir_all(dir)?;
    let files = CorpusFiles {
        rots: dir.join("rots.tsv"),
        annotations: dir.join("annotations.tsv"),
        profiles: dir.join("profiles.tsv"),
    };

    let mut out = BufWriter::new(File::create(&files.rots)?);
    tsv::write_record(&mut out, &["id", "source", "text"])?;
    for r in corpus.rots() {
        tsv::write_record(&mut out, &[r.id.as_str(), r.source.as_str(), r.text.as_str()])?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(&files.annotations)?);
    tsv::write_record(&mut out, &["rot_id", "annotator_id", "answer"])?;
    for a in corpus.annotations() {
        let letter = a.answer.letter().to_string();
        tsv::write_record(
            &mut out,
            &[
                corpus.rots()[a.rot].id.as_str(),
                corpus.annotator_id(a.annotator),
                letter.as_str(),
            ],
        )?;
    }
    out.flush()?;

    let attributes: Vec<&str> = {
        let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
        for p in corpus.profiles() {
            for k in p.attributes.keys() {
                seen.insert(k, ());
            }
        }
        seen.into_keys().collect()
    };
    let mut out = BufWriter::new(File::create(&files.profiles)?);
    let mut header = vec!["annotator_id"];
    header.extend(&attributes);
    tsv::write_record(&mut out, &header)?;
    for p in corpus.profiles() {
        let mut row = vec![p.annotator_id.as_str()];
        row.extend(attributes.iter().map(|a| p.attributes.get(*a).map_or("", String::as_str)));
        tsv::write_record(&mut out, &row)?;
    }
    out.flush()?;
    Ok(files)
}
