//! The per-turn loop: domain selection, state tracking, policy instruction, response
//! generation.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{
    request_tag, Backend, BackendError, Decoding, GenerationRequest, MockBackend,
};
use crate::corpus::SixRoleDialogue;
use crate::db::{observe, DatabaseSet, DbError, DEFAULT_SAMPLES};
use crate::dialogue::{
    Action, ActionFrame, Diagnostic, DiagnosticKind, Diagnostics, DialogueSession, FunctionCall,
    SessionTurn, Stage, TurnOutcome,
};
use crate::normalize::Normalizer;
use crate::parse::{parse_call, parse_domain, parse_frame, Parsed};
use crate::prompt::{
    build_ds_prompt, build_dst_prompt, build_rg_prompt, truncate, CharHeuristic, ChatPayload,
    PromptError, Task, Templates, TokenCounter, DEFAULT_CONTEXT_TOKENS,
};
use crate::schema::FunctionRegistry;

/// Response used when the generation stage returns nothing usable.
pub const FALLBACK_RESPONSE: &str = "Sorry, could you say that again?";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every stage uses predicted values, including prior calls.
    #[default]
    Policy,
    /// The gold call replaces the predicted one before policy instruction.
    GoldState,
}

impl core::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().replace('-', "_").as_str() {
            "policy" => Ok(Mode::Policy),
            "gold_state" | "gold" => Ok(Mode::GoldState),
            other => Err(format!(
                "unknown mode `{other}` (expected policy or gold-state)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub decoding: Decoding,
    pub timeout: Duration,
    pub context_tokens: usize,
    /// Entities attached to each observation.
    pub samples: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            decoding: Decoding::default(),
            timeout: Duration::from_secs(60),
            context_tokens: DEFAULT_CONTEXT_TOKENS,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StageFailure {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Database(#[from] DbError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// A turn that could not complete; carries the diagnostics gathered before the failure.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{dialogue_id} turn {turn}, {stage:?}: {failure}")]
pub struct TurnError {
    pub dialogue_id: String,
    pub turn: usize,
    pub stage: Stage,
    pub failure: StageFailure,
    pub diagnostics: Diagnostics,
}

/// Shared, read-only resources for running turns. Cheap to share across worker threads.
pub struct Pipeline<'a> {
    pub registry: &'a FunctionRegistry,
    pub db: &'a DatabaseSet,
    pub normalizer: &'a Normalizer,
    pub templates: &'a Templates,
    pub backend: &'a (dyn Backend + Sync),
    pub counter: &'a (dyn TokenCounter + Sync),
    pub config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        registry: &'a FunctionRegistry,
        db: &'a DatabaseSet,
        normalizer: &'a Normalizer,
        templates: &'a Templates,
        backend: &'a (dyn Backend + Sync),
    ) -> Self {
        Pipeline {
            registry,
            db,
            normalizer,
            templates,
            backend,
            counter: &CharHeuristic,
            config: PipelineConfig::default(),
        }
    }

    fn generate(
        &self,
        session: &DialogueSession,
        turn: usize,
        task: Task,
        payload: &ChatPayload,
        diagnostics: &mut Diagnostics,
    ) -> Result<String, StageFailure> {
        let payload = truncate(payload, self.config.context_tokens, self.counter)?;
        let mut request =
            GenerationRequest::new(payload, request_tag(&session.dialogue_id, turn, task));
        request.decoding = self.config.decoding.clone();
        request.timeout = self.config.timeout;
        let result = self.backend.generate(&request)?;
        diagnostics
            .latency_us
            .insert(task.tag().to_string(), result.latency.as_micros() as u64);
        Ok(result.text)
    }

    /// Runs one user utterance through all four stages and appends the turn to `session`.
    ///
    /// `gold_call` is only consulted in gold-state mode. Malformed completions never abort
    /// the turn; backend, database and prompt-budget failures do, leaving the session
    /// unchanged.
    pub fn run_turn<'s>(
        &self,
        session: &'s mut DialogueSession,
        user: &str,
        mode: Mode,
        gold_call: Option<&FunctionCall>,
    ) -> Result<&'s SessionTurn, TurnError> {
        let turn = session.next_turn();
        let mut diagnostics = Diagnostics::default();
        macro_rules! attempt {
            ($stage:expr, $e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(failure) => {
                        let failure: StageFailure = failure.into();
                        if matches!(failure, StageFailure::Backend(_)) {
                            diagnostics.entries.push(Diagnostic {
                                stage: $stage,
                                kind: DiagnosticKind::BackendError,
                                notes: alloc::vec![failure.to_string()],
                            });
                        }
                        return Err(TurnError {
                            dialogue_id: session.dialogue_id.clone(),
                            turn,
                            stage: $stage,
                            failure,
                            diagnostics,
                        });
                    }
                }
            };
        }
        fn note<T>(parsed: Parsed<T>, diagnostics: &mut Diagnostics) -> T {
            diagnostics.entries.extend(parsed.diagnostic);
            parsed.value
        }

        diagnostics.stages.push(Stage::DomainSelection);
        let payload = build_ds_prompt(self.templates, self.registry, session, user);
        let text = attempt!(
            Stage::DomainSelection,
            self.generate(
                session,
                turn,
                Task::DomainSelection,
                &payload,
                &mut diagnostics
            )
        );
        let selected = note(parse_domain(&text, self.registry), &mut diagnostics);

        diagnostics.stages.push(Stage::StateTracking);
        let payload = build_dst_prompt(self.templates, selected, session, user);
        let text = attempt!(
            Stage::StateTracking,
            self.generate(
                session,
                turn,
                Task::StateTracking,
                &payload,
                &mut diagnostics
            )
        );
        let mut call = note(
            parse_call(&text, selected, self.normalizer),
            &mut diagnostics,
        );
        let mut predicted = None;

        if let (Mode::GoldState, Some(gold)) = (mode, gold_call) {
            if gold.normalized(self.registry, self.normalizer)
                != call.normalized(self.registry, self.normalizer)
            {
                diagnostics.entries.push(Diagnostic {
                    stage: Stage::StateTracking,
                    kind: DiagnosticKind::GoldSubstitution,
                    notes: alloc::vec![format!("predicted {}", call.to_json())],
                });
            }
            predicted = Some(core::mem::replace(&mut call, gold.clone()));
        }

        diagnostics.stages.push(Stage::PolicyInstruction);
        let observation = attempt!(
            Stage::PolicyInstruction,
            observe(
                session.last_call(),
                &call,
                self.db,
                self.registry,
                self.normalizer,
                self.config.samples
            )
        );

        diagnostics.stages.push(Stage::ResponseGeneration);
        let payload = build_rg_prompt(self.templates, &call, &observation, session, user);
        let text = attempt!(
            Stage::ResponseGeneration,
            self.generate(
                session,
                turn,
                Task::ResponseGeneration,
                &payload,
                &mut diagnostics
            )
        );
        let frame = match parse_frame(&text) {
            Ok(parsed) => note(parsed, &mut diagnostics),
            Err(e) => {
                diagnostics.entries.push(Diagnostic {
                    stage: Stage::ResponseGeneration,
                    kind: DiagnosticKind::Fallback,
                    notes: alloc::vec![e.to_string()],
                });
                ActionFrame::new(Action::General, FALLBACK_RESPONSE)
            }
        };

        session.turns.push(SessionTurn {
            turn,
            user: user.to_string(),
            outcome: TurnOutcome {
                selected: selected.name.clone(),
                call,
                predicted,
                observation,
                frame,
                diagnostics,
            },
        });
        Ok(session.turns.last().expect("turn was just pushed"))
    }

    /// Replays every user utterance of a gold dialogue. `on_turn` sees the session after
    /// each completed turn, so callers can persist progress incrementally.
    pub fn run_dialogue(
        &self,
        gold: &SixRoleDialogue,
        mode: Mode,
        on_turn: &mut dyn FnMut(&DialogueSession),
    ) -> Result<DialogueSession, (DialogueSession, TurnError)> {
        let mut session = DialogueSession::new(gold.id.clone());
        session.goal_ref = Some(gold.id.clone());
        for t in &gold.turns {
            if let Err(e) = self.run_turn(&mut session, &t.user, mode, Some(&t.call)) {
                return Err((session, e));
            }
            on_turn(&session);
        }
        Ok(session)
    }
}

impl MockBackend {
    /// Fixtures that reproduce the gold labels of every turn of `dialogues`.
    pub fn from_gold(dialogues: &[SixRoleDialogue]) -> Self {
        let mut mock = MockBackend::new();
        for d in dialogues {
            for (i, t) in d.turns.iter().enumerate() {
                mock.insert(
                    request_tag(&d.id, i + 1, Task::DomainSelection),
                    t.domain.clone(),
                );
                mock.insert(
                    request_tag(&d.id, i + 1, Task::StateTracking),
                    t.call.to_json(),
                );
                mock.insert(
                    request_tag(&d.id, i + 1, Task::ResponseGeneration),
                    t.frame.render(),
                );
            }
        }
        mock
    }
}

/// Collects the diagnostics of every turn of every session.
pub fn all_diagnostics<'s>(
    sessions: impl IntoIterator<Item = &'s DialogueSession>,
) -> Vec<&'s Diagnostic> {
    sessions
        .into_iter()
        .flat_map(|s| s.turns.iter())
        .flat_map(|t| t.outcome.diagnostics.entries.iter())
        .collect()
}
