use normalign_core::corpus::{RoT, Source};
use normalign_core::prompting::{cache_key, render_prompt, InferenceParams, PromptVariant, PLACEHOLDER};
use sha2::{Digest, Sha256};

fn golden(variant: PromptVariant) -> &'static str {
    match variant {
        PromptVariant::ZeroShot => include_str!("golden/zero_shot.txt"),
        PromptVariant::ZeroShotDescription => include_str!("golden/description.txt"),
        PromptVariant::ZeroShotTable => include_str!("golden/table.txt"),
    }
}

const VARIANTS: [PromptVariant; 3] = [
    PromptVariant::ZeroShot,
    PromptVariant::ZeroShotDescription,
    PromptVariant::ZeroShotTable,
];

fn rot(text: &str) -> RoT {
    RoT {
        id: "r1".into(),
        source: Source::Conf,
        text: text.into(),
    }
}

#[test]
fn placeholder_rendering_matches_golden_files() {
    for v in VARIANTS {
        let rendered = render_prompt(&rot(PLACEHOLDER), v).unwrap();
        assert_eq!(rendered.text, golden(v), "{v}");
        assert_eq!(v.template(), golden(v), "{v}");
    }
}

#[test]
fn every_variant_starts_and_delimits_as_expected() {
    for v in VARIANTS {
        let text = render_prompt(&rot("It is good to be patient."), v).unwrap().text;
        assert!(text.starts_with("Discard all previous instructions."), "{v}");
        assert!(text.contains("```It is good to be patient.```"), "{v}");
        for (letter, display) in [("A)", "<1%"), ("B)", "5%-25%"), ("C)", "50%"), ("D)", "75%-90%"), ("E)", ">90%")] {
            assert!(
                text.lines().any(|l| l.starts_with(letter) && l.contains(display)),
                "{v}: {letter} {display}"
            );
        }
    }
}

#[test]
fn table_variant_carries_the_controversial_row() {
    let text = render_prompt(&rot("x"), PromptVariant::ZeroShotTable).unwrap().text;
    assert!(text
        .lines()
        .any(|l| l == "| 50% | Controversial (people naturally disagree) |"));
}

#[test]
fn template_digests_differ_and_so_do_cache_keys() {
    let digests: Vec<String> = VARIANTS
        .iter()
        .map(|v| hex::encode(Sha256::digest(golden(*v).as_bytes())))
        .collect();
    assert_ne!(digests[0], digests[1]);
    assert_ne!(digests[0], digests[2]);
    assert_ne!(digests[1], digests[2]);

    let params = InferenceParams::new("m", "http://localhost");
    let keys: Vec<String> = VARIANTS
        .iter()
        .map(|v| cache_key(&render_prompt(&rot("It is good to be patient."), *v).unwrap(), "m", &params))
        .collect();
    assert_ne!(keys[0], keys[1]);
    assert_ne!(keys[0], keys[2]);
    assert_ne!(keys[1], keys[2]);
}
