//! Brute-force reference implementations and generators shared by the property tests and
//! the acceptance suite. Written independently of the library code they check.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use proptest::prelude::*;

pub type Row = BTreeMap<String, String>;

// ---------------------------------------------------------------------------------------
// BLEU over pre-tokenized text (tokens joined by single spaces).

pub fn bleu_oracle(hyps: &[String], refs: &[String]) -> f64 {
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut hits = [0f64; 4];
    let mut totals = [0f64; 4];
    for (h, r) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4usize {
            let mut ref_counts: HashMap<Vec<&str>, usize> = HashMap::new();
            for i in 0..(r.len() + 1).saturating_sub(n) {
                *ref_counts.entry(r[i..i + n].to_vec()).or_default() += 1;
            }
            let mut hyp_counts: HashMap<Vec<&str>, usize> = HashMap::new();
            for i in 0..(h.len() + 1).saturating_sub(n) {
                *hyp_counts.entry(h[i..i + n].to_vec()).or_default() += 1;
            }
            for (g, c) in hyp_counts {
                totals[n - 1] += c as f64;
                hits[n - 1] += c.min(*ref_counts.get(&g).unwrap_or(&0)) as f64;
            }
        }
    }
    if hyp_len == 0 {
        return 0.0;
    }
    let logs: Vec<f64> = (0..4)
        .filter(|&n| totals[n] > 0.0)
        .map(|n| (if hits[n] > 0.0 { hits[n] } else { 0.1 } / totals[n]).ln())
        .collect();
    let geo = (logs.iter().sum::<f64>() / logs.len() as f64).exp();
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    100.0 * bp * geo
}

const WORDS: [&str; 12] = [
    "the",
    "a",
    "hotel",
    "is",
    "in",
    "centre",
    "[value_name]",
    "cheap",
    "book",
    "for",
    "you",
    "it",
];

fn sentence(max: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 0..max).prop_map(|w| w.join(" "))
}

/// Parallel hypothesis and reference lists over a small vocabulary.
pub fn corpus_strategy() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    prop::collection::vec((sentence(12), sentence(12)), 1..8)
        .prop_map(|pairs| pairs.into_iter().unzip())
}

// ---------------------------------------------------------------------------------------
// Database constraint matching.

fn minutes(t: &str) -> u32 {
    let (h, m) = t.split_once(':').expect("oracle times are H:MM");
    h.parse::<u32>().unwrap() * 60 + m.parse::<u32>().unwrap()
}

/// Indices of rows meeting every constraint. Constraint values are lowercase-equivalent
/// canonical values or `dontcare`; `book_` slots are ignored; `leave_at` is a lower bound
/// and `arrive_by` an upper bound on the row's time.
pub fn query_oracle(rows: &[Row], constraints: &BTreeMap<String, String>) -> Vec<usize> {
    let mut out = Vec::new();
    'rows: for (i, row) in rows.iter().enumerate() {
        for (slot, want) in constraints {
            let want = want.trim().to_lowercase();
            if slot.starts_with("book_") || want == "dontcare" {
                continue;
            }
            let Some(have) = row.get(slot) else {
                continue 'rows;
            };
            let have = have.trim().to_lowercase();
            let ok = match slot.as_str() {
                "leave_at" => minutes(&have) >= minutes(&want),
                "arrive_by" => minutes(&have) <= minutes(&want),
                _ => have == want,
            };
            if !ok {
                continue 'rows;
            }
        }
        out.push(i);
    }
    out
}

fn time() -> impl Strategy<Value = String> {
    (5u32..23, prop::sample::select(&[0u32, 15, 30, 45][..]))
        .prop_map(|(h, m)| format!("{h:02}:{m:02}"))
}

const PLACES: [&str; 4] = ["cambridge", "ely", "london kings cross", "stansted airport"];
const DAYS: [&str; 3] = ["monday", "friday", "sunday"];
const AREAS: [&str; 3] = ["centre", "north", "east"];
const FOODS: [&str; 3] = ["italian", "chinese", "british"];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];

fn pick(values: &'static [&'static str]) -> impl Strategy<Value = String> {
    prop::sample::select(values).prop_map(str::to_string)
}

fn train_row() -> impl Strategy<Value = Row> {
    (pick(&PLACES), pick(&PLACES), pick(&DAYS), time(), time()).prop_map(
        |(dep, dest, day, a, b)| {
            let (leave, arrive) = if a <= b { (a, b) } else { (b, a) };
            [
                ("departure", dep),
                ("destination", dest),
                ("day", day),
                ("leave_at", leave),
                ("arrive_by", arrive),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
        },
    )
}

fn restaurant_row() -> impl Strategy<Value = Row> {
    (pick(&AREAS), pick(&FOODS), pick(&PRICES)).prop_map(|(area, food, price)| {
        [("area", area), ("food", food), ("pricerange", price)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect()
    })
}

/// Value for a constraint: a vocabulary value in random letter case, or `dontcare`.
fn constraint(values: impl Strategy<Value = String>) -> impl Strategy<Value = String> {
    prop_oneof![
        4 => (values, any::<bool>()).prop_map(|(v, upper)| if upper { v.to_uppercase() } else { v }),
        1 => Just("dontcare".to_string()),
    ]
}

fn maybe(s: impl Strategy<Value = String>) -> impl Strategy<Value = Option<String>> {
    prop::option::weighted(0.5, s)
}

fn constraints(pairs: Vec<(&'static str, Option<String>)>) -> BTreeMap<String, String> {
    pairs
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect()
}

/// A domain, its table and a constraint set.
pub fn query_case() -> impl Strategy<Value = (String, Vec<Row>, BTreeMap<String, String>)> {
    let train = (
        prop::collection::vec(train_row(), 0..12),
        maybe(constraint(pick(&PLACES))),
        maybe(constraint(pick(&PLACES))),
        maybe(constraint(pick(&DAYS))),
        maybe(constraint(time())),
        maybe(constraint(time())),
        maybe((1u32..8).prop_map(|n| n.to_string())),
    )
        .prop_map(|(rows, dep, dest, day, leave, arrive, people)| {
            let c = constraints(vec![
                ("departure", dep),
                ("destination", dest),
                ("day", day),
                ("leave_at", leave),
                ("arrive_by", arrive),
                ("book_people", people),
            ]);
            ("train".to_string(), rows, c)
        });
    let restaurant = (
        prop::collection::vec(restaurant_row(), 0..12),
        maybe(constraint(pick(&AREAS))),
        maybe(constraint(pick(&FOODS))),
        maybe(constraint(pick(&PRICES))),
    )
        .prop_map(|(rows, area, food, price)| {
            let c = constraints(vec![("area", area), ("food", food), ("pricerange", price)]);
            ("restaurant".to_string(), rows, c)
        });
    prop_oneof![train, restaurant]
}

// ---------------------------------------------------------------------------------------
// Delexicalization.

fn word_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Replaces whole-word, ASCII-case-insensitive occurrences of each candidate value,
/// trying candidates in the given order and never touching text already replaced.
pub fn delex_oracle(text: &str, candidates: &[(String, String)]) -> String {
    let lower = text.to_ascii_lowercase();
    let bytes = lower.as_bytes();
    let mut owner: Vec<Option<usize>> = vec![None; bytes.len()];
    let mut starts: Vec<(usize, usize, usize)> = Vec::new();
    for (ci, (value, _)) in candidates.iter().enumerate() {
        let needle = value.to_ascii_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(rel) = lower.get(from..).and_then(|s| s.find(&needle)) {
            let s = from + rel;
            let e = s + needle.len();
            let bounded =
                (s == 0 || !word_char(bytes[s - 1])) && (e == bytes.len() || !word_char(bytes[e]));
            if bounded && owner[s..e].iter().all(Option::is_none) {
                owner[s..e].iter_mut().for_each(|o| *o = Some(ci));
                starts.push((s, e, ci));
                from = e;
            } else {
                from = s + 1;
            }
        }
    }
    starts.sort();
    let mut out = String::new();
    let mut at = 0;
    for (s, e, ci) in starts {
        out.push_str(&text[at..s]);
        out.push_str(&candidates[ci].1);
        at = e;
    }
    out.push_str(&text[at..]);
    out
}

const DELEX_WORDS: [&str; 10] = [
    "the",
    "Pizza",
    "hut",
    "is",
    "at",
    "cb21ab",
    "pizza hut",
    "01223",
    "Hut.",
    "centre",
];

/// ASCII text plus candidate values ordered longest first as the library orders them.
pub fn delex_case() -> impl Strategy<Value = (String, Vec<(String, String)>)> {
    let text = prop::collection::vec(prop::sample::select(&DELEX_WORDS[..]), 0..14)
        .prop_map(|w| w.join(" "));
    let cands = prop::collection::btree_set(
        (
            prop::sample::select(
                &[
                    "pizza hut",
                    "hut",
                    "cb21ab",
                    "01223",
                    "centre",
                    "the centre",
                    "pizza",
                ][..],
            ),
            prop::sample::select(
                &[
                    "[value_name]",
                    "[value_postcode]",
                    "[value_phone]",
                    "[value_area]",
                ][..],
            ),
        ),
        0..5,
    );
    (text, cands).prop_map(|(t, c)| {
        let mut c: Vec<(String, String)> = c
            .into_iter()
            .map(|(v, p)| (v.to_string(), p.to_string()))
            .collect();
        c.sort_by(|a, b| {
            b.0.len()
                .cmp(&a.0.len())
                .then_with(|| a.1.cmp(&b.1))
                .then_with(|| a.0.cmp(&b.0))
        });
        (t, c)
    })
}
