#![allow(dead_code)]

use std::path::PathBuf;

use clarity_core::prompting::PromptSpec;
use clarity_core::sweep::parse_strategy_tag;
use clarity_core::taxonomy::Level;

pub const GOLDEN_INSTANCE: &str = "dev-002";
pub const GOLDEN_SEED: u64 = 13;

pub fn tests_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests")
}

pub fn fixture(name: &str) -> PathBuf {
    tests_dir().join("fixtures").join(name)
}

pub fn golden_dir() -> PathBuf {
    tests_dir().join("golden")
}

/// (file stem, spec) for every valid prompt combination.
pub fn golden_variants() -> Vec<(String, PromptSpec)> {
    let mut out = Vec::new();
    let clarity = ["ZS", "ZS+Re2", "FS3", "FS9", "FS27", "CoT"];
    let evasion = ["ZS", "ZS+Re2", "FS9", "FS18", "FS27", "CoT"];
    for (level, tags) in [(Level::Clarity, &clarity), (Level::Evasion, &evasion)] {
        for tag in tags.iter() {
            let (strategy, shots) = parse_strategy_tag(tag).unwrap();
            for enriched in [false, true] {
                for subcat in [false, true] {
                    for president in [false, true] {
                        let spec = PromptSpec {
                            strategy,
                            shots,
                            level,
                            enriched,
                            president_name: president,
                            subcategory_definitions: subcat,
                            seed: GOLDEN_SEED,
                        };
                        if spec.validate().is_err() || (level == Level::Evasion && subcat) {
                            continue;
                        }
                        let mut stem = format!(
                            "{level}_{}_{}",
                            tag.to_lowercase().replace('+', "_"),
                            if enriched { "enriched" } else { "atomic" }
                        );
                        if subcat {
                            stem.push_str("_subcat");
                        }
                        if president {
                            stem.push_str("_pres");
                        }
                        out.push((stem, spec));
                    }
                }
            }
        }
    }
    out
}
