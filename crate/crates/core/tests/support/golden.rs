//! The fixed dialogue behind the golden files, and the renderings compared against them.

#![allow(dead_code)]

use std::path::PathBuf;

use spectod_core::corpus::{GoldTurn, SixRoleDialogue};
use spectod_core::dialogue::{
    Action, ActionFrame, DialogueSession, FunctionCall, Observation, SessionTurn, TurnOutcome,
};
use spectod_core::export::{export_dialogue, six_role_records, ContextPolicy, DialogueExport};
use spectod_core::prompt::{
    build_ds_prompt, build_dst_prompt, build_rg_prompt, CharHeuristic, ChatPayload, Task, Templates,
};
use spectod_core::schema::FunctionRegistry;

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

pub fn entity(pairs: &[(&str, &str)]) -> spectod_core::dialogue::Entity {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn gold() -> SixRoleDialogue {
    let call = FunctionCall::new("restaurant")
        .with("area", "centre")
        .with("food", "italian");
    let booked = call
        .clone()
        .with("book_people", "2")
        .with("book_day", "friday")
        .with("book_time", "19:00");
    SixRoleDialogue {
        id: "GOLD0001".into(),
        goal: Default::default(),
        turns: vec![
            GoldTurn {
                user: "Hi, I want an Italian place in the centre.".into(),
                domain: "restaurant".into(),
                call: call.clone(),
                observation: Observation::EntityCount {
                    count: 2,
                    samples: vec![entity(&[
                        ("name", "zizzi cambridge"),
                        ("area", "centre"),
                        ("food", "italian"),
                    ])],
                },
                frame: ActionFrame::new(
                    Action::Recommend,
                    "How about [value_name]? It serves [value_food] food.",
                ),
            },
            GoldTurn {
                user: "Great, book it for 2 on Friday at 19:00.".into(),
                domain: "restaurant".into(),
                call: booked,
                observation: Observation::EntityCount {
                    count: 2,
                    samples: vec![entity(&[
                        ("name", "zizzi cambridge"),
                        ("area", "centre"),
                        ("food", "italian"),
                    ])],
                },
                frame: ActionFrame::new(
                    Action::Info,
                    "Booked. Your reference is [value_reference].",
                ),
            },
            GoldTurn {
                user: "Thanks, bye!".into(),
                domain: "null".into(),
                call: FunctionCall::null(),
                observation: Observation::NoCallNeeded,
                frame: ActionFrame::new(Action::General, "You're welcome. Goodbye!"),
            },
        ],
        notes: Default::default(),
    }
}

/// Session holding the first two gold turns as if predicted.
pub fn session() -> DialogueSession {
    let mut s = DialogueSession::new("GOLD0001");
    for (i, t) in gold().turns.into_iter().take(2).enumerate() {
        s.turns.push(SessionTurn {
            turn: i + 1,
            user: t.user,
            outcome: TurnOutcome {
                selected: t.domain,
                call: t.call,
                predicted: None,
                observation: t.observation,
                frame: t.frame,
                diagnostics: Default::default(),
            },
        });
    }
    s
}

pub const USER: &str = "Thanks, bye!";

/// The three stage prompts for the final turn of the golden dialogue.
pub fn prompts() -> Vec<(Task, &'static str, ChatPayload)> {
    let reg = FunctionRegistry::multiwoz();
    let t = Templates::default();
    let s = session();
    vec![
        (
            Task::DomainSelection,
            "ds_prompt.txt",
            build_ds_prompt(&t, &reg, &s, USER),
        ),
        (
            Task::StateTracking,
            "dst_prompt.txt",
            build_dst_prompt(&t, reg.resolve("restaurant").unwrap(), &s, USER),
        ),
        (
            Task::ResponseGeneration,
            "rg_prompt.txt",
            build_rg_prompt(
                &t,
                &FunctionCall::null(),
                &Observation::NoCallNeeded,
                &s,
                USER,
            ),
        ),
    ]
}

pub fn six_role_text() -> String {
    let mut text = String::new();
    for r in six_role_records(&FunctionRegistry::multiwoz(), &gold()) {
        text.push_str(&format!("<|{}|>\n{}\n", r.role, r.content));
    }
    text
}

pub fn export_line() -> String {
    match export_dialogue(
        &FunctionRegistry::multiwoz(),
        &gold(),
        ContextPolicy::default(),
        &CharHeuristic,
    ) {
        DialogueExport::Whole(sample) => format!("{}\n", sample.to_json()),
        other => panic!("golden dialogue should fit the default context: {other:?}"),
    }
}

/// Every golden file name with its current rendering.
pub fn renderings() -> Vec<(&'static str, String)> {
    let mut out: Vec<(&'static str, String)> = prompts()
        .into_iter()
        .map(|(_, name, p)| (name, p.to_text()))
        .collect();
    out.push(("six_role.txt", six_role_text()));
    out.push(("export_sample.jsonl", export_line()));
    out
}
