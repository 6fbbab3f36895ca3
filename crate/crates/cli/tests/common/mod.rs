#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mini_city")
}

pub fn bundled_config() -> PathBuf {
    fixture_dir().join("config.toml")
}

/// Small network so that end-to-end tests finish in seconds.
pub const SMALL_MODEL: &str = r#"
[model]
embedding_dim = 10
hidden = [32, 32, 64]

[model.train]
epochs = 50

[model.dec]
k = 5

[model.forest]
n_trees = 100
"#;

pub const UPLIFT_SCENARIO: &str = r#"
[scenario]
levels = [1]
multipliers = { healthcare_access = 1.2, road_density = 1.2 }
"#;

pub const EMPTY_SCENARIO: &str = r#"
[scenario]
levels = []
multipliers = { healthcare_access = 1.2, road_density = 1.2 }
"#;

/// A config in `dir` reading the bundled fixture layers.
pub fn write_config(dir: &Path, seed: u64, sections: &[&str]) -> PathBuf {
    let f = fixture_dir();
    let p = |name: &str| f.join(name).display().to_string().replace('\\', "/");
    let mut text = format!(
        r#"seed = {seed}

[grid]
bbox = [0.0, 0.0, 20000.0, 20000.0]
cell_size = 2000.0

[inputs]
building_age = "{}"
poverty_rate = "{}"
social_connectedness = "{}"
internet_speed = "{}"
education_level = "{}"
land_cover = "{}"
towers = "{}"
facilities = "{}"
roads = "{}"
risk = "{}"

[moran]
permutations = 199
"#,
        p("building_age.geojson"),
        p("poverty_rate.geojson"),
        p("social_connectedness.geojson"),
        p("internet_speed.geojson"),
        p("education_level.geojson"),
        p("land_cover.geojson"),
        p("towers.csv"),
        p("hospitals.csv"),
        p("roads.geojson"),
        p("flood_risk.csv"),
    );
    for s in sections {
        text.push_str(s);
    }
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn resili(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resili"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("RESILI_OUT")
        .output()
        .expect("resili runs")
}

/// Run a subcommand with `--config` and `--out`, panicking with stderr on failure.
pub fn step(cmd: &str, config: &Path, out: &Path) {
    let o = resili(&[cmd, "--config", &config.display().to_string(), "--out", &out.display().to_string()]);
    assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn geojson(path: &Path) -> serde_json::Value {
    serde_json::from_str(&read(path)).unwrap()
}

/// Parsed CSV rows without the header.
pub fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    read(path)
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}
