//! Every prompt variant rendered for a fixed instance and seed must match the
//! checked-in file byte for byte. Set UPDATE_GOLDENS=1 to rewrite them.

mod common;

use std::fs;

use clarity_core::dataset::{load_split, Split};
use clarity_core::prompting::{render_prompt, select_demonstrations, Strategy};
use clarity_core::taxonomy::LabelTaxonomy;

use common::{fixture, golden_dir, golden_variants, GOLDEN_INSTANCE};

#[test]
fn goldens_match() {
    let train = load_split(fixture("toy_train.jsonl"), Split::Train).unwrap();
    let dev = load_split(fixture("toy_dev.jsonl"), Split::Dev).unwrap();
    let inst = dev.get(GOLDEN_INSTANCE).unwrap();
    let taxonomy = LabelTaxonomy::standard();
    let dir = golden_dir();
    let update = std::env::var_os("UPDATE_GOLDENS").is_some();

    let variants = golden_variants();
    // 6 strategies x 2 inputs x 3 clarity definition/speaker settings,
    // plus 6 x 2 x 2 at the evasion level.
    assert_eq!(variants.len(), 36 + 24);

    let mut mismatches = Vec::new();
    for (stem, spec) in &variants {
        let demos = if spec.strategy == Strategy::FewShot {
            select_demonstrations(&train, spec).unwrap()
        } else {
            Vec::new()
        };
        let text = render_prompt(spec, &demos, inst, &taxonomy).unwrap().text();
        let path = dir.join(format!("{stem}.txt"));
        if update {
            fs::create_dir_all(&dir).unwrap();
            fs::write(&path, &text).unwrap();
            continue;
        }
        match fs::read_to_string(&path) {
            Ok(expected) if expected == text => {}
            Ok(_) => mismatches.push(format!("{stem}: differs")),
            Err(e) => mismatches.push(format!("{stem}: {e}")),
        }
    }
    assert!(mismatches.is_empty(), "golden mismatches:\n{}", mismatches.join("\n"));
}

#[test]
fn no_stray_goldens() {
    let expected: Vec<String> = golden_variants().into_iter().map(|(s, _)| format!("{s}.txt")).collect();
    let Ok(entries) = fs::read_dir(golden_dir()) else {
        return;
    };
    for e in entries {
        let name = e.unwrap().file_name().to_string_lossy().into_owned();
        assert!(expected.contains(&name), "unexpected golden file {name}");
    }
}
