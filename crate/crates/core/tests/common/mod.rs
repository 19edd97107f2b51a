#![allow(dead_code)]

use std::path::{Path, PathBuf};

use docaug::corpus::{load_corpus, Corpus};
use docaug::pipeline::RunConfig;
use docaug::registry::Registry;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn corpus5() -> Corpus {
    load_corpus(fixture("corpus5.json"), &Registry::builtin()).unwrap()
}

/// Loads a fixture config, pins its inputs to the fixture directory and
/// resolves the (relative) output directory against `base`.
pub fn config_in(name: &str, base: &Path) -> RunConfig {
    let mut config = RunConfig::load(fixture(name)).unwrap();
    config.corpus.path = fixture(config.corpus.path.to_str().unwrap());
    if let Some(s) = &config.llm.script {
        config.llm.script = Some(fixture(s.to_str().unwrap()));
    }
    config.base_dir = base.to_path_buf();
    config
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

pub fn json_lines(path: impl AsRef<Path>) -> Vec<serde_json::Value> {
    read(path).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}
