//! The malformed-completion fixture: each case replaces some stage completions of a
//! one-turn dialogue and lists the diagnostics the turn must record.

#![allow(dead_code)]

use serde::Deserialize;
use spectod_core::backend::MockBackend;
use spectod_core::db::DatabaseSet;
use spectod_core::dialogue::{DiagnosticKind, DialogueSession, Stage};
use spectod_core::normalize::Normalizer;
use spectod_core::orchestrator::{Mode, Pipeline};
use spectod_core::prompt::Templates;
use spectod_core::schema::FunctionRegistry;

pub const FIXTURE: &str = include_str!("../fixtures/malformed_completions.json");

#[derive(Debug, Deserialize)]
pub struct Completions {
    pub ds: String,
    pub dst: String,
    pub rg: String,
}

#[derive(Debug, Deserialize)]
pub struct Case {
    pub name: String,
    pub ds: Option<String>,
    pub dst: Option<String>,
    pub rg: Option<String>,
    pub expect: Vec<(Stage, DiagnosticKind)>,
}

#[derive(Debug, Deserialize)]
pub struct Fixture {
    pub user: String,
    pub defaults: Completions,
    pub cases: Vec<Case>,
}

pub fn load() -> Fixture {
    serde_json::from_str(FIXTURE).expect("fixture parses")
}

fn hotels() -> DatabaseSet {
    let mut db = DatabaseSet::new();
    let row = |name: &str, area: &str, price: &str| {
        [
            ("name", name),
            ("area", area),
            ("pricerange", price),
            ("type", "hotel"),
            ("stars", "4"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    };
    db.insert_table(
        "hotel",
        vec![
            row("acorn lodge", "north", "cheap"),
            row("the ritz", "centre", "expensive"),
        ],
    );
    db
}

/// Runs every case as its own dialogue; returns the case, the turn result and the
/// diagnostics recorded.
pub fn run() -> Vec<(Case, Result<DialogueSession, String>)> {
    let fx = load();
    let reg = FunctionRegistry::multiwoz();
    let norm = Normalizer::default();
    let templates = Templates::default();
    let db = hotels();
    let mut mock = MockBackend::new();
    for (i, c) in fx.cases.iter().enumerate() {
        let id = format!("case{i:02}");
        mock.insert(
            format!("{id}/1/ds"),
            c.ds.clone().unwrap_or_else(|| fx.defaults.ds.clone()),
        );
        mock.insert(
            format!("{id}/1/dst"),
            c.dst.clone().unwrap_or_else(|| fx.defaults.dst.clone()),
        );
        mock.insert(
            format!("{id}/1/rg"),
            c.rg.clone().unwrap_or_else(|| fx.defaults.rg.clone()),
        );
    }
    let pipeline = Pipeline::new(&reg, &db, &norm, &templates, &mock);
    fx.cases
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let mut session = DialogueSession::new(format!("case{i:02}"));
            let r = pipeline
                .run_turn(&mut session, &fx.user, Mode::Policy, None)
                .map(|_| ())
                .map_err(|e| e.to_string());
            (c, r.map(|_| session))
        })
        .collect()
}
