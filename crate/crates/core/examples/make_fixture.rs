//! Regenerates `fixtures/synthetic/`: three tract tables over several states
//! driven by one latent deprivation score, plus a few deliberately bad rows.
//!
//! `cargo run --example make_fixture [-- <out_dir>]`

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const N_TRACTS: usize = 400;
const STATES: [&str; 6] = ["06", "12", "17", "36", "48", "53"];

fn pct(v: f64) -> String {
    format!("{:.1}", v.clamp(0.0, 100.0))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/synthetic"));
    std::fs::create_dir_all(&out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2017);
    let normal = Normal::new(0.0, 1.0)?;

    let mut econ = csv::Writer::from_path(out.join("econ.csv"))?;
    let mut edu = csv::Writer::from_path(out.join("edu.csv"))?;
    let mut cdc = csv::Writer::from_path(out.join("cdc.csv"))?;
    econ.write_record(["GEOID", "MedianIncome", "PovertyRate", "Unemployment"])?;
    edu.write_record(["GEOID", "PctBachelors", "PctNoHighSchool"])?;
    cdc.write_record([
        "TractFIPS",
        "MentalHealth",
        "PhysicalHealth",
        "Obesity",
        "Smoking",
        "Diabetes",
        "SleepLessThan7",
    ])?;

    for i in 0..N_TRACTS {
        let state = STATES[i % STATES.len()];
        let county = 1 + 2 * rng.random_range(0..40);
        let tract = 100 + 100 * i;
        let key = format!("{state}{county:03}{tract:06}");
        let south = matches!(state, "12" | "48");

        let z: f64 = normal.sample(&mut rng);
        let mut e = || normal.sample(&mut rng);
        let income = 62_000.0 * (-0.35 * z + 0.15 * e()).exp();
        let poverty = 15.0 + 7.0 * z + 3.0 * e();
        let unemployment = 6.0 + 2.0 * z + 1.5 * e();
        let bachelors = 32.0 - 10.0 * z + 6.0 * e();
        let no_hs = 12.0 + 5.0 * z + 3.0 * e();

        let smoking = 16.0 + 4.0 * z + 2.0 * e();
        let obesity = 29.0 + 4.0 * z + if south { 3.0 } else { 0.0 } + 2.5 * e();
        let diabetes = 10.0 + 2.5 * z + 1.2 * e();
        let sleep = 35.0 + 3.0 * z + 2.0 * e();
        let mental = 2.0 + 0.35 * smoking + 0.1 * obesity + 0.12 * sleep + 0.6 * e();
        let physical = 1.0 + 0.45 * diabetes + 0.15 * obesity + 0.12 * smoking + 0.6 * e();

        let mut poverty_cell = pct(poverty);
        if i == 10 {
            poverty_cell = "NA".into();
        }
        let mut bachelors_cell = pct(bachelors);
        if i == 30 {
            bachelors_cell = "105.0".into();
        }
        let mut obesity_cell = pct(obesity);
        if i == 20 {
            obesity_cell = "(X)".into();
        }

        econ.write_record([
            key.clone(),
            format!("${:.0}", income.round()),
            poverty_cell,
            pct(unemployment),
        ])?;
        // Tracts 40 and 41 have no education record.
        if i != 40 && i != 41 {
            edu.write_record([key.clone(), bachelors_cell, pct(no_hs)])?;
        }
        cdc.write_record([
            key,
            pct(mental),
            pct(physical),
            obesity_cell,
            pct(smoking),
            pct(diabetes),
            pct(sleep),
        ])?;
    }
    econ.flush()?;
    edu.flush()?;
    cdc.flush()?;

    let regions = serde_json::json!({
        "06": "West",
        "12": "South",
        "17": "Midwest",
        "36": "Northeast",
        "48": "South",
    });
    std::fs::write(
        out.join("region_map.json"),
        serde_json::to_string_pretty(&regions)? + "\n",
    )?;
    Ok(())
}
