mod support;

use proptest::prelude::*;
use spectod_core::backend::Decoding;
use spectod_core::db::{observe, DatabaseSet};
use spectod_core::delex::delexicalize_spans;
use spectod_core::dialogue::{
    Action, ActionFrame, BeliefState, DialogueSession, FunctionCall, Observation, Role,
    SessionTurn, TurnOutcome,
};
use spectod_core::eval::bleu;
use spectod_core::normalize::Normalizer;
use spectod_core::parse::{parse_call, parse_frame};
use spectod_core::prompt::{
    build_ds_prompt, build_dst_prompt, build_rg_prompt, check_role_grammar, estimate_tokens,
    truncate, CharHeuristic, Task, Templates,
};
use spectod_core::schema::{FunctionRegistry, ValueType};
use support::oracles::{
    bleu_oracle, corpus_strategy, delex_case, delex_oracle, query_case, query_oracle,
};

fn raw_value() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(
            &[
                "Center",
                " city  centre ",
                "don't care",
                "ANY",
                "Yes",
                "free",
                "none",
                "guest house",
                "7.30 pm",
                "1930",
                "12 am",
                "five",
                "Moderately Priced",
                "dontcare",
                "13:05",
                "9:5",
            ][..]
        )
        .prop_map(str::to_string),
        "[ a-zA-Z0-9:.']{0,16}",
    ]
}

fn value_type() -> impl Strategy<Value = ValueType> {
    prop::sample::select(
        &[
            ValueType::Categorical,
            ValueType::FreeText,
            ValueType::Integer,
            ValueType::Time,
            ValueType::Boolean,
        ][..],
    )
}

fn turn(user: &str, call: FunctionCall, obs: Observation, response: &str) -> SessionTurn {
    SessionTurn {
        turn: 0,
        user: user.to_string(),
        outcome: TurnOutcome {
            selected: call.name.clone(),
            call,
            predicted: None,
            observation: obs,
            frame: ActionFrame::new(Action::Info, response),
            diagnostics: Default::default(),
        },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn normalization_is_idempotent(t in value_type(), raw in raw_value()) {
        let n = Normalizer::default();
        let once = n.normalize_typed(t, &raw);
        prop_assert_eq!(n.normalize_typed(t, &once), once.clone());
    }

    #[test]
    fn query_matches_oracle((domain, rows, constraints) in query_case()) {
        let reg = FunctionRegistry::multiwoz();
        let mut db = DatabaseSet::new();
        db.insert_table(&domain, rows.clone());
        let belief = BeliefState { domain: domain.clone(), slots: constraints.clone() };
        let got = db.query(&belief, &reg, &Normalizer::default()).unwrap();
        let want: Vec<_> = query_oracle(&rows, &constraints).into_iter().map(|i| rows[i].clone()).collect();
        prop_assert_eq!(got.count, want.len());
        prop_assert_eq!(got.matches, want);
    }

    #[test]
    fn observation_follows_the_no_repeat_rule((domain, rows, constraints) in query_case(), repeat in any::<bool>()) {
        let reg = FunctionRegistry::multiwoz();
        let norm = Normalizer::default();
        let mut db = DatabaseSet::new();
        db.insert_table(&domain, rows.clone());
        let call = FunctionCall { name: domain.clone(), arguments: constraints.clone() };
        let prev = if repeat {
            // Same call in a different surface form.
            FunctionCall {
                name: domain.to_uppercase(),
                arguments: constraints.iter().map(|(k, v)| (k.clone(), format!(" {} ", v.to_uppercase()))).collect(),
            }
        } else {
            FunctionCall::null()
        };
        let obs = observe(Some(&prev), &call, &db, &reg, &norm, 1).unwrap();
        if repeat {
            prop_assert_eq!(obs, Observation::NoCallNeeded);
        } else {
            let idx = query_oracle(&rows, &constraints);
            let samples: Vec<_> = idx.iter().take(1).map(|&i| rows[i].clone()).collect();
            prop_assert_eq!(obs, Observation::EntityCount { count: idx.len(), samples });
        }
    }

    #[test]
    fn delexicalization_matches_oracle((text, cands) in delex_case()) {
        let (out, spans) = delexicalize_spans(&text, &cands);
        prop_assert_eq!(&out, &delex_oracle(&text, &cands));
        // Filling the placeholders back in order restores the text.
        let mut rebuilt = out.clone();
        for (ph, surface) in &spans {
            let at = rebuilt.find(ph.as_str()).unwrap();
            rebuilt.replace_range(at..at + ph.len(), &format!("\u{1}{surface}\u{2}"));
        }
        prop_assert_eq!(rebuilt.replace(['\u{1}', '\u{2}'], ""), text);
    }

    #[test]
    fn bleu_matches_oracle((hyps, refs) in corpus_strategy()) {
        let h: Vec<&str> = hyps.iter().map(String::as_str).collect();
        let r: Vec<&str> = refs.iter().map(String::as_str).collect();
        let got = bleu(&h, &r).unwrap();
        prop_assert!((got - bleu_oracle(&hyps, &refs)).abs() < 1e-6, "{got} vs oracle");
        prop_assert!((0.0..=100.0 + 1e-9).contains(&got));
    }

    #[test]
    fn call_json_round_trips(
        domain in prop::sample::select(&["restaurant", "hotel", "train"][..]),
        area in prop::option::of(prop::sample::select(&["centre", "north", "dontcare"][..])),
        people in prop::option::of(1u32..9),
        name in prop::option::of("[a-z]{1,8}( [a-z]{1,8})?"),
    ) {
        let reg = FunctionRegistry::multiwoz();
        let spec = reg.resolve(domain).unwrap();
        let mut call = FunctionCall::new(domain);
        if let (Some(a), true) = (area, spec.slot("area").is_some()) {
            call = call.with("area", a);
        }
        if let Some(p) = people {
            call = call.with("book_people", &p.to_string());
        }
        if let (Some(n), true) = (name, spec.slot("name").is_some()) {
            call = call.with("name", &n);
        }
        let parsed = parse_call(&call.to_json(), spec, &Normalizer::default());
        prop_assert!(parsed.is_clean());
        prop_assert_eq!(parsed.value, call);
    }

    #[test]
    fn frame_and_observation_round_trip(
        action in prop::sample::select(&Action::ALL[..]),
        response in "[A-Za-z\\[\\]_ ,.?]{0,40}[a-z]",
        count in 0usize..50,
        with_sample in any::<bool>(),
    ) {
        let frame = ActionFrame::new(action, response.trim());
        let parsed = parse_frame(&frame.render()).unwrap();
        prop_assert!(parsed.is_clean());
        prop_assert_eq!(parsed.value, frame);
        let samples = if with_sample {
            vec![[("name".to_string(), "x \"y\"".to_string())].into_iter().collect()]
        } else {
            vec![]
        };
        let obs = Observation::EntityCount { count, samples };
        prop_assert_eq!(Observation::parse(&obs.render()), Some(obs));
        prop_assert_eq!(Observation::parse(&Observation::NoCallNeeded.render()), Some(Observation::NoCallNeeded));
    }

    #[test]
    fn truncation_keeps_the_newest_turns_that_fit(
        utterances in prop::collection::vec("[a-z ]{0,120}", 0..10),
        slack in 0usize..400,
        task in prop::sample::select(&Task::ALL[..]),
    ) {
        let reg = FunctionRegistry::multiwoz();
        let templates = Templates::default();
        let mut session = DialogueSession::new("p");
        for (i, u) in utterances.iter().enumerate() {
            let mut t = turn(u, FunctionCall::new("hotel").with("area", "north"), Observation::NoCallNeeded, u);
            t.turn = i + 1;
            session.turns.push(t);
        }
        let payload = match task {
            Task::DomainSelection => build_ds_prompt(&templates, &reg, &session, "now"),
            Task::StateTracking => build_dst_prompt(&templates, reg.resolve("hotel").unwrap(), &session, "now"),
            Task::ResponseGeneration => build_rg_prompt(
                &templates, &FunctionCall::null(), &Observation::NoCallNeeded, &session, "now"),
        };
        check_role_grammar(task, &payload.roles()).unwrap();
        let c = CharHeuristic;
        let bare = spectod_core::prompt::ChatPayload {
            system: payload.system.clone(),
            history: vec![],
            current: payload.current.clone(),
        };
        let budget = estimate_tokens(&bare, &c) + slack;
        let cut = truncate(&payload, budget, &c).unwrap();
        prop_assert!(estimate_tokens(&cut, &c) <= budget);
        prop_assert_eq!(&cut.system, &payload.system);
        prop_assert_eq!(&cut.current, &payload.current);
        let dropped = payload.history.len() - cut.history.len();
        prop_assert_eq!(&cut.history[..], &payload.history[dropped..]);
        if dropped > 0 {
            let mut one_more = cut.clone();
            one_more.history.insert(0, payload.history[dropped - 1].clone());
            prop_assert!(estimate_tokens(&one_more, &c) > budget);
        }
        check_role_grammar(task, &cut.roles()).unwrap();
        prop_assert_eq!(cut.roles()[0], Role::System);
        if estimate_tokens(&bare, &c) > 0 {
            prop_assert!(truncate(&payload, estimate_tokens(&bare, &c) - 1, &c).is_err());
        }
    }
}

#[test]
fn greedy_decoding_is_the_default() {
    let d = Decoding::default();
    assert_eq!(d.temperature, 0.0);
}
