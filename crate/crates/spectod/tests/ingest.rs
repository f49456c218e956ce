use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use spectod::ingest::{ingest, IngestError, RawSplits, Version};
use spectod::resources::{ResourcePaths, Resources};
use spectod_core::corpus::{Converter, SixRoleDialogue, SplitName};
use spectod_core::dialogue::Action;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn convert_all(raw: &RawSplits) -> BTreeMap<String, SixRoleDialogue> {
    let res = Resources::load(&ResourcePaths {
        db: fixtures().join("multiwoz21"),
        ..Default::default()
    })
    .unwrap();
    let conv = Converter {
        registry: &res.registry,
        db: &res.db,
        normalizer: &res.normalizer,
        placeholders: &res.placeholders,
        acts: &res.acts,
        samples: 1,
    };
    SplitName::ALL
        .iter()
        .flat_map(|s| raw.get(*s))
        .map(|d| {
            let c = conv.convert(d).unwrap_or_else(|e| panic!("{e}"));
            (c.id.clone(), c)
        })
        .collect()
}

fn sizes(raw: &RawSplits) -> [usize; 3] {
    [raw.train.len(), raw.dev.len(), raw.test.len()]
}

#[test]
fn reads_the_2_1_layout() {
    let raw = ingest(&fixtures().join("multiwoz21"), Version::V21).unwrap();
    assert_eq!(sizes(&raw), [5, 5, 25]);
    for split in [&raw.train, &raw.dev, &raw.test] {
        assert!(split.windows(2).all(|w| w[0].id < w[1].id));
        assert!(split.iter().all(|d| !d.id.ends_with(".json")));
    }
    let converted = convert_all(&raw);
    let actions: std::collections::BTreeSet<Action> = converted
        .values()
        .flat_map(|d| d.turns.iter().map(|t| t.frame.action))
        .collect();
    assert!(actions.len() >= 5, "{actions:?}");
}

#[test]
fn older_and_newer_layouts_agree_with_2_1() {
    let reference = convert_all(&ingest(&fixtures().join("multiwoz21"), Version::V21).unwrap());
    for (dir, version) in [("multiwoz20", Version::V20), ("multiwoz22", Version::V22)] {
        let raw = ingest(&fixtures().join(dir), version).unwrap();
        assert_eq!(sizes(&raw), [2, 1, 3], "{dir}");
        for (id, d) in convert_all(&raw) {
            let r = &reference[&id];
            assert_eq!(d.turns, r.turns, "{dir} {id}");
            if version == Version::V20 {
                assert_eq!(d.goal, r.goal);
            } else {
                assert!(d.goal.is_empty());
            }
        }
    }
}

#[test]
fn truncated_data_reports_position() {
    match ingest(&fixtures().join("truncated"), Version::V21) {
        Err(IngestError::Json {
            offset,
            line,
            column,
            ..
        }) => {
            assert!(offset > 0 && offset <= 1500);
            assert!(line > 1 && column > 0);
        }
        other => panic!("expected a JSON error, got {other:?}"),
    }
}

#[test]
fn dangling_list_entry_is_named() {
    match ingest(&fixtures().join("dangling"), Version::V21) {
        Err(IngestError::DanglingId { id, .. }) => assert_eq!(id, "PMUL9999"),
        other => panic!("expected a dangling id, got {other:?}"),
    }
}

#[test]
fn missing_directory_and_wrong_layout() {
    assert!(matches!(
        ingest(Path::new("/nonexistent/mwoz"), Version::V21),
        Err(IngestError::MissingFile(_))
    ));
    assert!(ingest(&fixtures().join("multiwoz22"), Version::V21).is_err());
    assert!("3.0".parse::<Version>().is_err());
}
