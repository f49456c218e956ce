//! Benchmark metrics: Inform, Success, BLEU, Combined, joint goal accuracy, domain
//! selection accuracy, and the model-judged quality score.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{judge, Backend, JUDGE_TAG_PREFIX};
use crate::corpus::SixRoleDialogue;
use crate::db::DatabaseSet;
use crate::delex::Placeholders;
use crate::dialogue::{function_call_to_belief, BeliefState, DialogueSession, FunctionCall};
use crate::normalize::Normalizer;
use crate::schema::FunctionRegistry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no predicted session for gold dialogue `{0}`")]
    MissingSession(String),
    #[error("predicted session `{0}` has no gold dialogue")]
    UnexpectedSession(String),
    #[error("`{id}`: {predicted} predicted turns for {gold} gold turns")]
    TurnCount {
        id: String,
        predicted: usize,
        gold: usize,
    },
    #[error("{hypotheses} hypotheses for {references} references")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
}

/// `BLEU + (Inform + Success) / 2`, all on a 0–100 scale.
pub fn combined(bleu: f64, inform: f64, success: f64) -> f64 {
    bleu + 0.5 * (inform + success)
}

/// Lowercased tokens: placeholders stay whole, words keep inner apostrophes, and every
/// other non-space character is its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '[' {
            let close = chars[i..]
                .iter()
                .take_while(|c| !c.is_whitespace())
                .position(|&c| c == ']');
            if let Some(len) = close {
                let token: String = chars[i..=i + len].iter().collect();
                if token.starts_with("[value_") {
                    out.push(token);
                    i += len + 1;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || c == '_' {
            let start = i;
            while i < chars.len()
                && (chars[i].is_alphanumeric()
                    || chars[i] == '_'
                    || (chars[i] == '\'' && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())))
            {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
            continue;
        }
        out.push(c.to_string());
        i += 1;
    }
    out
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU (0–100) with up to 4-grams, uniform weights and brevity penalty.
///
/// Orders for which the hypotheses contain no n-grams at all are left out of the
/// geometric mean; an order with n-grams but no matches uses a count of 0.1. Empty
/// hypotheses score 0.
pub fn bleu(hypotheses: &[&str], references: &[&str]) -> Result<f64, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize(h);
        let r = tokenize(r);
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, count) in &hc {
                matched[n - 1] += (*count).min(rc.get(gram).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..4 {
        if total[n] == 0 {
            continue;
        }
        let m = if matched[n] == 0 {
            0.1
        } else {
            matched[n] as f64
        };
        log_sum += libm::log(m / total[n] as f64);
        orders += 1;
    }
    let bp = if hyp_len > ref_len {
        1.0
    } else {
        libm::exp(1.0 - ref_len as f64 / hyp_len as f64)
    };
    Ok(100.0 * bp * libm::exp(log_sum / orders as f64))
}

/// Per-dialogue Inform and Success outcome.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueScore {
    pub id: String,
    pub inform: bool,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

/// Resources shared by the database-grounded metrics.
pub struct Grounding<'a> {
    pub registry: &'a FunctionRegistry,
    pub db: &'a DatabaseSet,
    pub normalizer: &'a Normalizer,
    pub placeholders: &'a Placeholders,
}

/// Inform and Success for one predicted session against its gold goal.
///
/// For each goal domain with an offer placeholder and informable constraints, the last
/// turn that selected the domain and offered a venue is found; the first entity matching
/// that turn's predicted call must satisfy the goal constraints. Domains without offers
/// pass Inform. Success additionally needs every requested attribute (and a booking
/// reference when the goal books) to appear as a placeholder in a response of a turn that
/// selected the domain.
pub fn score_dialogue(
    session: &DialogueSession,
    gold: &SixRoleDialogue,
    g: &Grounding<'_>,
) -> DialogueScore {
    let mut notes = Vec::new();
    let mut inform = true;
    let mut success = true;
    for (domain, goal) in &gold.goal {
        let turns: Vec<_> = session
            .turns
            .iter()
            .filter(|t| &t.outcome.selected == domain)
            .collect();
        let domain_inform = match g.placeholders.offer_for(domain) {
            Some(offer) if !goal.info.is_empty() => {
                let offered = turns
                    .iter()
                    .rev()
                    .find(|t| t.outcome.frame.response.contains(offer.as_str()));
                match offered {
                    None => {
                        notes.push(format!("{domain}: no venue offered"));
                        false
                    }
                    Some(t) => {
                        let belief =
                            function_call_to_belief(&t.outcome.call, g.registry, g.normalizer);
                        let wanted = BeliefState {
                            domain: domain.clone(),
                            slots: goal.info.clone(),
                        };
                        let first = if belief.domain == *domain {
                            g.db.query(&belief, g.registry, g.normalizer)
                                .ok()
                                .and_then(|r| r.matches.into_iter().next())
                        } else {
                            None
                        };
                        match first {
                            Some(e)
                                if g.db.entity_satisfies(&e, &wanted, g.registry, g.normalizer) =>
                            {
                                true
                            }
                            Some(_) => {
                                notes.push(format!("{domain}: offered venue violates the goal"));
                                false
                            }
                            None => {
                                notes.push(format!("{domain}: offer turn matches no venue"));
                                false
                            }
                        }
                    }
                }
            }
            _ => true,
        };
        inform &= domain_inform;

        let mut required: Vec<String> = Vec::new();
        for r in &goal.reqt {
            match g.placeholders.for_requestable(r) {
                Some(p) => required.push(p),
                None => notes.push(format!(
                    "{domain}: requestable `{r}` has no placeholder; ignored"
                )),
            }
        }
        if !goal.book.is_empty() {
            if let Some(p) = g.placeholders.for_requestable("reference") {
                required.push(p);
            }
        }
        for p in &required {
            if !turns
                .iter()
                .any(|t| t.outcome.frame.response.contains(p.as_str()))
            {
                notes.push(format!("{domain}: {p} never provided"));
                success = false;
            }
        }
    }
    DialogueScore {
        id: gold.id.clone(),
        inform,
        success: inform && success,
        notes,
    }
}

fn pair_up<'s, 'g>(
    sessions: &'s [DialogueSession],
    gold: &'g [SixRoleDialogue],
) -> Result<Vec<(&'s DialogueSession, &'g SixRoleDialogue)>, EvalError> {
    let by_id: BTreeMap<&str, &DialogueSession> = sessions
        .iter()
        .map(|s| (s.dialogue_id.as_str(), s))
        .collect();
    let gold_ids: BTreeMap<&str, ()> = gold.iter().map(|d| (d.id.as_str(), ())).collect();
    if let Some(s) = sessions
        .iter()
        .find(|s| !gold_ids.contains_key(s.dialogue_id.as_str()))
    {
        return Err(EvalError::UnexpectedSession(s.dialogue_id.clone()));
    }
    gold.iter()
        .map(|d| {
            let s = by_id
                .get(d.id.as_str())
                .ok_or_else(|| EvalError::MissingSession(d.id.clone()))?;
            if s.turns.len() != d.turns.len() {
                return Err(EvalError::TurnCount {
                    id: d.id.clone(),
                    predicted: s.turns.len(),
                    gold: d.turns.len(),
                });
            }
            Ok((*s, d))
        })
        .collect()
}

/// Share of turns (0–100) whose call matches gold exactly; with `normalize` both sides are
/// normalized first. Uses the model's own call when gold-state mode replaced it.
pub fn jga(
    pairs: &[(&DialogueSession, &SixRoleDialogue)],
    normalize: Option<(&FunctionRegistry, &Normalizer)>,
) -> f64 {
    let prep = |c: &FunctionCall| match normalize {
        Some((r, n)) => c.normalized(r, n),
        None => c.clone(),
    };
    percent(pairs.iter().flat_map(|(s, d)| {
        s.turns.iter().zip(&d.turns).map(move |(p, g)| {
            let call = p.outcome.predicted.as_ref().unwrap_or(&p.outcome.call);
            prep(call) == prep(&g.call)
        })
    }))
}

/// Domain selection accuracy (0–100).
pub fn fn_se(pairs: &[(&DialogueSession, &SixRoleDialogue)]) -> f64 {
    percent(pairs.iter().flat_map(|(s, d)| {
        s.turns
            .iter()
            .zip(&d.turns)
            .map(|(p, g)| p.outcome.selected == g.domain)
    }))
}

fn percent(hits: impl Iterator<Item = bool>) -> f64 {
    let (mut yes, mut all) = (0usize, 0usize);
    for h in hits {
        all += 1;
        yes += usize::from(h);
    }
    if all == 0 {
        0.0
    } else {
        100.0 * yes as f64 / all as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dialogues: usize,
    pub turns: usize,
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
    pub combined: f64,
    pub jga: f64,
    pub jga_raw: f64,
    pub fn_se: f64,
    pub per_dialogue: Vec<DialogueScore>,
}

/// Scores predicted sessions against gold dialogues, matched by id.
pub fn evaluate(
    sessions: &[DialogueSession],
    gold: &[SixRoleDialogue],
    g: &Grounding<'_>,
) -> Result<EvalReport, EvalError> {
    let pairs = pair_up(sessions, gold)?;
    let per_dialogue: Vec<DialogueScore> =
        pairs.iter().map(|(s, d)| score_dialogue(s, d, g)).collect();
    let hyps: Vec<&str> = pairs
        .iter()
        .flat_map(|(s, _)| s.turns.iter().map(|t| t.outcome.frame.response.as_str()))
        .collect();
    let refs: Vec<&str> = pairs
        .iter()
        .flat_map(|(_, d)| d.turns.iter().map(|t| t.frame.response.as_str()))
        .collect();
    let bleu = bleu(&hyps, &refs)?;
    let inform = percent(per_dialogue.iter().map(|d| d.inform));
    let success = percent(per_dialogue.iter().map(|d| d.success));
    Ok(EvalReport {
        dialogues: pairs.len(),
        turns: hyps.len(),
        inform,
        success,
        bleu,
        combined: combined(bleu, inform, success),
        jga: jga(&pairs, Some((g.registry, g.normalizer))),
        jga_raw: jga(&pairs, None),
        fn_se: fn_se(&pairs),
        per_dialogue,
    })
}

/// A rating dimension for the judged score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub question: String,
}

pub fn default_criteria() -> Vec<Criterion> {
    [
        (
            "Understand",
            "Does the response show that the system understood what the user asked for?",
        ),
        (
            "Relevant",
            "Is the response relevant to the user's latest message?",
        ),
        (
            "Correct",
            "Is the information in the response consistent with the conversation?",
        ),
        (
            "Appropriate",
            "Is the response appropriate for the point the conversation has reached?",
        ),
        ("Fluently", "Is the response fluent and grammatical?"),
        (
            "Direct",
            "Does the response address the request directly, without unnecessary detours?",
        ),
    ]
    .into_iter()
    .map(|(name, question)| Criterion {
        name: name.to_string(),
        question: question.to_string(),
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeReport {
    /// Mean score per criterion over the judged turns.
    pub criteria: BTreeMap<String, f64>,
    /// Mean over criteria.
    pub overall: f64,
    pub judged: usize,
    pub failures: usize,
    pub planned: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("judging aborted after {failures} failures of {planned} requests")]
pub struct JudgeAbort {
    pub failures: usize,
    pub planned: usize,
    pub partial: JudgeReport,
    pub errors: Vec<String>,
}

/// The exchange shown to the judge: dialogue so far and the response under review.
pub fn judge_exchange(session: &DialogueSession, turn: usize) -> String {
    let mut out = String::new();
    for t in &session.turns[..turn] {
        out.push_str(&format!(
            "User: {}\nSystem: {}\n",
            t.user, t.outcome.frame.response
        ));
    }
    let t = &session.turns[turn];
    out.push_str(&format!(
        "User: {}\nResponse under review: {}",
        t.user, t.outcome.frame.response
    ));
    out
}

/// Rates every turn on every criterion. Stops with the partial report once failed
/// requests exceed `max_failure_rate` of all planned requests.
pub fn judge_sessions(
    sessions: &[DialogueSession],
    backend: &dyn Backend,
    criteria: &[Criterion],
    max_failure_rate: f64,
) -> Result<JudgeReport, JudgeAbort> {
    let planned = sessions.iter().map(|s| s.turns.len()).sum::<usize>() * criteria.len();
    let limit = max_failure_rate * planned as f64;
    let mut sums: BTreeMap<String, (f64, usize)> = criteria
        .iter()
        .map(|c| (c.name.clone(), (0.0, 0)))
        .collect();
    let mut failures = 0;
    let mut judged = 0;
    let mut errors = Vec::new();
    let report = |sums: &BTreeMap<String, (f64, usize)>, judged, failures, complete| {
        let criteria: BTreeMap<String, f64> = sums
            .iter()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(k, (s, n))| (k.clone(), s / *n as f64))
            .collect();
        let overall = if criteria.is_empty() {
            0.0
        } else {
            criteria.values().sum::<f64>() / criteria.len() as f64
        };
        JudgeReport {
            criteria,
            overall,
            judged,
            failures,
            planned,
            complete,
        }
    };
    for s in sessions {
        for i in 0..s.turns.len() {
            let exchange = judge_exchange(s, i);
            for c in criteria {
                let tag = format!("{JUDGE_TAG_PREFIX}{}/{}/{}", s.dialogue_id, i + 1, c.name);
                match judge(backend, &c.question, &exchange, tag.clone()) {
                    Ok(score) => {
                        let e = sums.get_mut(&c.name).expect("criterion registered");
                        e.0 += score;
                        e.1 += 1;
                        judged += 1;
                    }
                    Err(e) => {
                        failures += 1;
                        errors.push(format!("{tag}: {e}"));
                        if failures as f64 > limit {
                            return Err(JudgeAbort {
                                failures,
                                planned,
                                partial: report(&sums, judged, failures, false),
                                errors,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(report(&sums, judged, failures, true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn combined_matches_reported_rows() {
        assert!((combined(10.41, 87.2, 77.1) - 92.56).abs() < 0.01);
        assert!((combined(15.53, 76.3, 58.5) - 82.93).abs() < 0.01);
    }

    #[test]
    fn tokens() {
        assert_eq!(
            tokenize("I'd book [value_name], OK?"),
            vec!["i'd", "book", "[value_name]", ",", "ok", "?"]
        );
        assert_eq!(tokenize("a [b c]"), vec!["a", "[", "b", "c", "]"]);
    }

    #[test]
    fn bleu_edges() {
        assert!((bleu(&["the cat sat"], &["the cat sat"]).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&[""], &["the cat"]).unwrap(), 0.0);
        assert!(bleu(&["a"], &[]).is_err());
        let partial = bleu(&["the cat sat on a mat"], &["the cat sat on the mat"]).unwrap();
        assert!(partial > 0.0 && partial < 100.0);
    }
}
