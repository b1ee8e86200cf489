//! Regenerates `fixtures/replay`: a 20-RoT synthetic corpus, a config for
//! two stub models and the response cache recorded against the scripted
//! stub server. The configured endpoint is never contacted on replay.
//!
//!     cargo run -p normalign-cli --example record_fixture

use std::path::Path;

use normalign_cli::commands;
use normalign_cli::RunConfig;
use normalign_core::synthetic::{synthetic_corpus, write_corpus_files, SyntheticConfig};
use normalign_gateway::stub::{scripted, StubServer};
use normalign_gateway::Mode;

const CONFIG: &str = r#"# Offline replay fixture: 20 RoTs, 2 stub models, 3 prompt variants.
output_dir = "out"
variants = ["zero-shot", "description", "table"]

[corpus]
rots = "corpus/rots.tsv"
annotations = "corpus/annotations.tsv"
profiles = "corpus/profiles.tsv"

[inference]
mode = "replay"
temperature = 0.0
max_output_tokens = 512
parallelism = 4
cache_dir = "cache"

[[models]]
id = "stub-a"
endpoint = "http://127.0.0.1:9/v1/chat/completions"

[[models]]
id = "stub-b"
endpoint = "http://127.0.0.1:9/v1/chat/completions"
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/replay");
    if dir.exists() {
        std::fs::remove_dir_all(&dir)?;
    }
    std::fs::create_dir_all(&dir)?;
    let corpus = synthetic_corpus(&SyntheticConfig {
        rots_per_source: 5,
        annotators_per_rot: 50,
        seed: 2024,
    });
    write_corpus_files(&corpus, &dir.join("corpus"))?;
    let config_path = dir.join("config.toml");
    std::fs::write(&config_path, CONFIG)?;

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let server = StubServer::start(scripted()).await?;
        let mut cfg = RunConfig::load(&config_path)?;
        cfg.inference.mode = Mode::Record;
        for m in &mut cfg.models {
            m.endpoint = server.url();
        }
        let scratch = tempfile::tempdir()?;
        cfg.output_dir = scratch.path().to_path_buf();
        let summary = commands::run(&cfg).await?;
        println!(
            "recorded {} responses ({} requests) into {}",
            summary.responses,
            server.hits(),
            dir.join("cache").display()
        );
        Ok::<_, Box<dyn std::error::Error>>(())
    })
}
