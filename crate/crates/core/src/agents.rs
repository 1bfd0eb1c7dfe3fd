//! Navigator and reasoner agents.
//!
//! Both agents are stateless: a call renders a [`PromptTemplate`] from its
//! inputs and sends it through a [`Gateway`]. Templates are plain text files
//! (`system text`, a `---` line, then the user body with `{slot}`
//! placeholders) with a JSON list of `{input, output}` demonstrations next to
//! each one.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatRequest, Gateway, GatewayError, GenerationParams, Message};
use crate::model::{Direction, DirectionSource, Question, Response, ResponseOrigin, TaskKind, ValidityFilter};

pub const DEFAULT_DEMONSTRATIONS: usize = 5;

pub const FIXED_DIRECTION_TEXT: &str = "Read the question and choices carefully and diagnose the previous response by locating the incorrect clues and update the response if applicable.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("every navigator generation was empty")]
    AllDirectionsEmpty,
    #[error("template {template}: unresolved placeholder {{{slot}}}")]
    UnresolvedPlaceholder { template: String, slot: String },
    #[error("template {name}: {reason}")]
    Template { name: String, reason: String },
    #[error("{0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub name: String,
    pub system_text: String,
    pub demonstrations: Vec<Demonstration>,
    pub body: String,
}

fn slot_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").unwrap())
}

impl PromptTemplate {
    /// Parses `system text \n---\n body`.
    pub fn parse(name: &str, text: &str, demonstrations: Vec<Demonstration>) -> Result<Self, AgentError> {
        let text = text.replace("\r\n", "\n");
        let (system, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| AgentError::Template { name: name.into(), reason: "missing `---` separator".into() })?;
        Ok(PromptTemplate {
            name: name.into(),
            system_text: system.trim().to_string(),
            demonstrations,
            body: body.trim_end().to_string(),
        })
    }

    /// Placeholder names in body order, without repeats.
    pub fn slots(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for cap in slot_pattern().captures_iter(&self.body) {
            let s = cap[1].to_string();
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        seen
    }

    pub fn render_body(&self, values: &BTreeMap<&str, String>) -> Result<String, AgentError> {
        let mut missing = None;
        let out = slot_pattern().replace_all(&self.body, |cap: &regex::Captures| match values.get(&cap[1]) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert_with(|| cap[1].to_string());
                String::new()
            }
        });
        match missing {
            Some(slot) => Err(AgentError::UnresolvedPlaceholder { template: self.name.clone(), slot }),
            None => Ok(out.into_owned()),
        }
    }

    /// System message, demonstrations as user/assistant turns, then the body.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<Vec<Message>, AgentError> {
        let mut messages = Vec::with_capacity(2 + 2 * self.demonstrations.len());
        if !self.system_text.is_empty() {
            messages.push(Message::system(self.system_text.clone()));
        }
        for demo in &self.demonstrations {
            messages.push(Message::user(demo.input.clone()));
            messages.push(Message::assistant(demo.output.clone()));
        }
        messages.push(Message::user(self.render_body(values)?));
        Ok(messages)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateSet {
    pub navigator_initial: PromptTemplate,
    pub navigator_reflect: PromptTemplate,
    pub reasoner_initial: PromptTemplate,
    pub reasoner_reflect: PromptTemplate,
}

const TEMPLATE_NAMES: [&str; 4] = ["navigator_initial", "navigator_reflect", "reasoner_initial", "reasoner_reflect"];

macro_rules! builtin {
    ($dir:literal) => {
        [
            (
                include_str!(concat!("../assets/templates/", $dir, "/navigator_initial.txt")),
                include_str!(concat!("../assets/templates/", $dir, "/navigator_initial.demos.json")),
            ),
            (
                include_str!(concat!("../assets/templates/", $dir, "/navigator_reflect.txt")),
                include_str!(concat!("../assets/templates/", $dir, "/navigator_reflect.demos.json")),
            ),
            (
                include_str!(concat!("../assets/templates/", $dir, "/reasoner_initial.txt")),
                include_str!(concat!("../assets/templates/", $dir, "/reasoner_initial.demos.json")),
            ),
            (
                include_str!(concat!("../assets/templates/", $dir, "/reasoner_reflect.txt")),
                include_str!(concat!("../assets/templates/", $dir, "/reasoner_reflect.demos.json")),
            ),
        ]
    };
}

const MMLU_BUILTIN: [(&str, &str); 4] = builtin!("mmlu");
const FEVER_BUILTIN: [(&str, &str); 4] = builtin!("fever");

fn dir_for(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::MultipleChoice { .. } => "mmlu",
        TaskKind::FactCheck => "fever",
    }
}

impl TemplateSet {
    pub fn builtin(kind: TaskKind) -> Self {
        let sources = match kind {
            TaskKind::MultipleChoice { .. } => MMLU_BUILTIN,
            TaskKind::FactCheck => FEVER_BUILTIN,
        };
        let mut parsed = TEMPLATE_NAMES.iter().zip(sources).map(|(name, (text, demos))| {
            let name = format!("{}/{}", dir_for(kind), name);
            let demos = serde_json::from_str(demos).expect("builtin demonstrations parse");
            PromptTemplate::parse(&name, text, demos).expect("builtin template parses")
        });
        TemplateSet {
            navigator_initial: parsed.next().unwrap(),
            navigator_reflect: parsed.next().unwrap(),
            reasoner_initial: parsed.next().unwrap(),
            reasoner_reflect: parsed.next().unwrap(),
        }
    }

    /// Loads `<root>/<mmlu|fever>/<name>.txt` and `<name>.demos.json`. Files
    /// that do not exist fall back to the builtin copy.
    pub fn load(root: &Path, kind: TaskKind) -> Result<Self, AgentError> {
        let mut set = Self::builtin(kind);
        let dir = root.join(dir_for(kind));
        for (slot, name) in [
            &mut set.navigator_initial,
            &mut set.navigator_reflect,
            &mut set.reasoner_initial,
            &mut set.reasoner_reflect,
        ]
        .into_iter()
        .zip(TEMPLATE_NAMES)
        {
            let text_path = dir.join(format!("{name}.txt"));
            let demo_path = dir.join(format!("{name}.demos.json"));
            let io_err = |p: &Path, e: std::io::Error| AgentError::Template {
                name: p.display().to_string(),
                reason: e.to_string(),
            };
            let demos = if demo_path.exists() {
                let raw = std::fs::read_to_string(&demo_path).map_err(|e| io_err(&demo_path, e))?;
                serde_json::from_str(&raw).map_err(|e| AgentError::Template {
                    name: demo_path.display().to_string(),
                    reason: e.to_string(),
                })?
            } else {
                slot.demonstrations.clone()
            };
            if text_path.exists() {
                let raw = std::fs::read_to_string(&text_path).map_err(|e| io_err(&text_path, e))?;
                *slot = PromptTemplate::parse(&text_path.display().to_string(), &raw, demos)?;
            } else {
                slot.demonstrations = demos;
            }
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateLibrary {
    pub multiple_choice: TemplateSet,
    pub fact_check: TemplateSet,
}

impl Default for TemplateLibrary {
    fn default() -> Self {
        TemplateLibrary {
            multiple_choice: TemplateSet::builtin(TaskKind::MultipleChoice { num_choices: 4 }),
            fact_check: TemplateSet::builtin(TaskKind::FactCheck),
        }
    }
}

impl TemplateLibrary {
    pub fn load(root: &Path) -> Result<Self, AgentError> {
        Ok(TemplateLibrary {
            multiple_choice: TemplateSet::load(root, TaskKind::MultipleChoice { num_choices: 4 })?,
            fact_check: TemplateSet::load(root, TaskKind::FactCheck)?,
        })
    }

    pub fn for_kind(&self, kind: TaskKind) -> &TemplateSet {
        match kind {
            TaskKind::MultipleChoice { .. } => &self.multiple_choice,
            TaskKind::FactCheck => &self.fact_check,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NavigatorInput<'a> {
    pub question: &'a Question,
    pub prev_response: Option<&'a Response>,
    pub prev_direction: Option<&'a Direction>,
    pub confidence_verbal: Option<String>,
    pub reward_context: Option<f64>,
}

impl<'a> NavigatorInput<'a> {
    pub fn initial(question: &'a Question) -> Self {
        NavigatorInput {
            question,
            prev_response: None,
            prev_direction: None,
            confidence_verbal: None,
            reward_context: None,
        }
    }

    /// Reflection input. `prev_direction` is absent when reflecting on the
    /// root state, which has no incoming action.
    pub fn reflect(
        question: &'a Question,
        prev_response: &'a Response,
        prev_direction: Option<&'a Direction>,
        confidence_verbal: Option<String>,
    ) -> Self {
        NavigatorInput {
            question,
            prev_response: Some(prev_response),
            prev_direction,
            confidence_verbal,
            reward_context: None,
        }
    }
}

/// Renders a consistency score as the feedback sentence shown to the navigator.
///
/// Panics when `score` is outside [0, 1].
pub fn verbalize_consistency(score: f64) -> String {
    assert!((0.0..=1.0).contains(&score), "consistency score {score} outside [0, 1]");
    let band = if score >= 0.8 {
        "highly consistent"
    } else if score >= 0.5 {
        "moderately consistent"
    } else {
        "inconsistent"
    };
    format!("The student's repeated answers were {band} (agreement {score:.2}).")
}

pub fn fixed_direction() -> Direction {
    Direction { text: FIXED_DIRECTION_TEXT.to_string(), source: DirectionSource::Fixed }
}

fn clean_direction(text: &str) -> String {
    let t = text.trim();
    t.strip_prefix("Direction:").map(str::trim).unwrap_or(t).to_string()
}

/// Prompt library plus generation settings shared by both agents.
#[derive(Debug, Clone)]
pub struct Agents {
    pub templates: TemplateLibrary,
    pub params: GenerationParams,
    pub filter: ValidityFilter,
    pub direction_source: DirectionSource,
}

impl Default for Agents {
    fn default() -> Self {
        Agents {
            templates: TemplateLibrary::default(),
            params: GenerationParams::default(),
            filter: ValidityFilter::default(),
            direction_source: DirectionSource::Generative,
        }
    }
}

fn question_slots(question: &Question) -> BTreeMap<&'static str, String> {
    let mut v = BTreeMap::new();
    v.insert("question", question.prompt_text.clone());
    v.insert("choices", question.render_choices());
    v
}

impl Agents {
    pub fn navigator_request(&self, input: &NavigatorInput, tag: &str) -> Result<ChatRequest, AgentError> {
        let set = self.templates.for_kind(input.question.kind);
        let mut values = question_slots(input.question);
        let template = match input.prev_response {
            None => {
                if input.prev_direction.is_some() {
                    return Err(AgentError::InvalidInput(
                        "a previous direction needs the previous response it produced".into(),
                    ));
                }
                &set.navigator_initial
            }
            Some(prev) => {
                values.insert("prev_response", prev.raw_text.trim().to_string());
                values.insert(
                    "prev_direction",
                    input.prev_direction.map_or_else(|| "None".to_string(), |d| d.text.clone()),
                );
                let mut verbal = input.confidence_verbal.clone().unwrap_or_else(|| "Unknown.".into());
                if let Some(r) = input.reward_context {
                    verbal = format!("{verbal} Reward so far: {r:.2}.");
                }
                values.insert("confidence_verbal", verbal);
                &set.navigator_reflect
            }
        };
        Ok(ChatRequest::new(template.render(&values)?, self.params.clone(), tag))
    }

    /// Generates `k` directions. Empty and duplicate generations are
    /// regenerated once; empties that persist are dropped, duplicates kept.
    pub fn navigator_direct<G: Gateway + ?Sized>(
        &self,
        input: &NavigatorInput,
        k: usize,
        gateway: &G,
        tag: &str,
    ) -> Result<Vec<Direction>, AgentError> {
        assert!(k >= 1, "navigator_direct needs k >= 1");
        if self.direction_source == DirectionSource::Fixed {
            return Ok(vec![fixed_direction(); k]);
        }
        let request = self.navigator_request(input, tag)?;
        let batch = vec![request.clone(); k];
        let mut texts = Vec::with_capacity(k);
        for r in gateway.complete_batch(&batch) {
            texts.push(clean_direction(&r?.text));
        }

        let mut seen = HashSet::new();
        let retry: Vec<usize> = (0..k).filter(|&i| texts[i].is_empty() || !seen.insert(texts[i].clone())).collect();
        if !retry.is_empty() {
            let again = gateway.complete_batch(&vec![request; retry.len()]);
            for (&i, r) in retry.iter().zip(again) {
                let text = clean_direction(&r?.text);
                if !text.is_empty() {
                    texts[i] = text;
                }
            }
        }

        let directions: Vec<Direction> = texts
            .into_iter()
            .filter(|t| !t.is_empty())
            .map(|text| Direction { text, source: DirectionSource::Generative })
            .collect();
        if directions.is_empty() {
            return Err(AgentError::AllDirectionsEmpty);
        }
        Ok(directions)
    }

    pub fn reasoner_request(
        &self,
        question: &Question,
        direction: Option<&Direction>,
        prev: Option<&Response>,
        tag: &str,
    ) -> Result<ChatRequest, AgentError> {
        let set = self.templates.for_kind(question.kind);
        let mut values = question_slots(question);
        let template = match (direction, prev) {
            (None, None) => &set.reasoner_initial,
            (Some(d), Some(p)) => {
                values.insert("direction", d.text.clone());
                values.insert("prev_response", p.raw_text.trim().to_string());
                &set.reasoner_reflect
            }
            _ => {
                return Err(AgentError::InvalidInput(
                    "reasoner reflection needs both a direction and a previous response".into(),
                ))
            }
        };
        Ok(ChatRequest::new(template.render(&values)?, self.params.clone(), tag))
    }

    pub fn reasoner_respond<G: Gateway + ?Sized>(
        &self,
        question: &Question,
        direction: Option<&Direction>,
        prev: Option<&Response>,
        gateway: &G,
        tag: &str,
    ) -> Result<Response, AgentError> {
        let request = self.reasoner_request(question, direction, prev, tag)?;
        let origin = if direction.is_some() { ResponseOrigin::Reflected } else { ResponseOrigin::Initial };
        let reply = gateway.complete(&request)?;
        Ok(self.filter.validate(&reply.text, question.kind, origin))
    }

    /// One reflected response per direction, issued as a single batch.
    pub fn reasoner_reflect_batch<G: Gateway + ?Sized>(
        &self,
        question: &Question,
        directions: &[Direction],
        prev: &Response,
        gateway: &G,
        tag: &str,
    ) -> Result<Vec<Response>, AgentError> {
        let requests = directions
            .iter()
            .map(|d| self.reasoner_request(question, Some(d), Some(prev), tag))
            .collect::<Result<Vec<_>, _>>()?;
        gateway
            .complete_batch(&requests)
            .into_iter()
            .map(|r| Ok(self.filter.validate(&r?.text, question.kind, ResponseOrigin::Reflected)))
            .collect()
    }

    /// `m` initial responses from one verbatim prompt.
    pub fn reasoner_samples<G: Gateway + ?Sized>(
        &self,
        question: &Question,
        m: usize,
        gateway: &G,
        tag: &str,
    ) -> Result<Vec<Response>, AgentError> {
        let request = self.reasoner_request(question, None, None, tag)?;
        gateway
            .complete_batch(&vec![request; m])
            .into_iter()
            .map(|r| Ok(self.filter.validate(&r?.text, question.kind, ResponseOrigin::Initial)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MeteredGateway, PoolDirection, SyntheticGateway, SyntheticWorld, REFUSAL_TEXT};
    use crate::model::{validate_response, AnswerLabel};
    use rand::{Rng, SeedableRng};

    fn question() -> Question {
        Question::multiple_choice(
            "q0",
            "Which gas do plants absorb?",
            vec!["Oxygen".into(), "Carbon dioxide".into(), "Helium".into(), "Argon".into()],
            Some(AnswerLabel::Choice(1)),
        )
        .unwrap()
    }

    fn world(p0: f64, seed: u64) -> SyntheticWorld {
        let mut w = SyntheticWorld::new(question().kind, AnswerLabel::Choice(1), p0, seed);
        w.direction_pool = (0..5)
            .map(|i| PoolDirection {
                text: format!("Consider angle {i} of the problem."),
                quality: if i == 0 { 1.0 } else { 0.0 },
            })
            .collect();
        w
    }

    fn gateway(w: SyntheticWorld) -> MeteredGateway<SyntheticGateway> {
        MeteredGateway::new(SyntheticGateway::new([(question().prompt_text, w)]))
    }

    #[test]
    fn builtin_templates_carry_five_demos() {
        for kind in [TaskKind::MultipleChoice { num_choices: 4 }, TaskKind::FactCheck] {
            let set = TemplateSet::builtin(kind);
            for t in [&set.navigator_initial, &set.navigator_reflect, &set.reasoner_initial, &set.reasoner_reflect] {
                assert_eq!(t.demonstrations.len(), DEFAULT_DEMONSTRATIONS, "{}", t.name);
                assert!(t.system_text.starts_with("You") || t.system_text.starts_with("As a tutor"));
            }
        }
    }

    #[test]
    fn unresolved_placeholder_is_an_error() {
        let t = PromptTemplate::parse("t", "sys\n---\nQ: {question} {mystery}", vec![]).unwrap();
        assert_eq!(t.slots(), vec!["question", "mystery"]);
        let mut v = BTreeMap::new();
        v.insert("question", "x".to_string());
        match t.render(&v) {
            Err(AgentError::UnresolvedPlaceholder { slot, .. }) => assert_eq!(slot, "mystery"),
            other => panic!("{other:?}"),
        }
        v.insert("mystery", "y".to_string());
        assert_eq!(t.render_body(&v).unwrap(), "Q: x y");
    }

    #[test]
    fn rendering_is_deterministic() {
        let agents = Agents::default();
        let q = question();
        let a = agents.navigator_request(&NavigatorInput::initial(&q), "n").unwrap();
        let b = agents.navigator_request(&NavigatorInput::initial(&q), "n").unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        // system + 5 demo pairs + body
        assert_eq!(a.messages.len(), 12);
        assert!(a.validate().is_ok());
    }

    #[test]
    fn initial_navigator_prompt_has_no_reflection_slots() {
        let agents = Agents::default();
        let q = question();
        let req = agents.navigator_request(&NavigatorInput::initial(&q), "n").unwrap();
        let body = req.last_user_content().unwrap();
        assert!(!body.contains("Previous"));
        assert!(!body.contains("Confidence"));
        assert!(body.contains("Question: Which gas do plants absorb?"));
        assert!(body.contains("B. Carbon dioxide"));
    }

    #[test]
    fn directions_come_from_the_pool() {
        let w = world(0.5, 3);
        let pool: Vec<String> = w.direction_pool.iter().map(|d| d.text.clone()).collect();
        let gw = gateway(w);
        let q = question();
        let ds = Agents::default().navigator_direct(&NavigatorInput::initial(&q), 5, &gw, "navigator/initial").unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.iter().all(|d| pool.contains(&d.text) && d.source == DirectionSource::Generative));
        assert!(gw.calls("navigator") <= 10);
    }

    #[test]
    fn duplicate_retries_stay_within_k() {
        let mut w = world(0.5, 3);
        w.direction_persistence = 1.0;
        let gw = gateway(w);
        let q = question();
        let prev = validate_response("Thought: x\nFinish[A]", q.kind);
        let d = Direction::new("Consider angle 2 of the problem.", DirectionSource::Generative).unwrap();
        let input = NavigatorInput::reflect(&q, &prev, Some(&d), Some(verbalize_consistency(0.4)));
        let ds = Agents::default().navigator_direct(&input, 5, &gw, "navigator/reflect").unwrap();
        assert_eq!(ds.len(), 5);
        assert!(ds.iter().all(|x| x.text == d.text));
        assert_eq!(gw.calls("navigator"), 9, "5 draws plus 4 duplicate retries");
    }

    struct Blank;
    impl Gateway for Blank {
        fn backend_id(&self) -> &str {
            "blank"
        }
        fn complete(&self, _: &ChatRequest) -> Result<crate::gateway::ChatResponse, GatewayError> {
            Ok(crate::gateway::ChatResponse {
                text: "  ".into(),
                backend_id: "blank".into(),
                cached: false,
                latency: Default::default(),
            })
        }
    }

    #[test]
    fn all_empty_generations_fail() {
        let q = question();
        let gw = MeteredGateway::new(Blank);
        let err = Agents::default().navigator_direct(&NavigatorInput::initial(&q), 3, &gw, "navigator").unwrap_err();
        assert!(matches!(err, AgentError::AllDirectionsEmpty));
        assert_eq!(gw.calls("navigator"), 6);
    }

    #[test]
    fn fixed_mode_makes_no_calls() {
        let gw = gateway(world(0.5, 1));
        let q = question();
        let agents = Agents { direction_source: DirectionSource::Fixed, ..Agents::default() };
        let ds = agents.navigator_direct(&NavigatorInput::initial(&q), 4, &gw, "navigator").unwrap();
        assert_eq!(ds, vec![fixed_direction(); 4]);
        assert_eq!(gw.total(), 0);

        let prev = validate_response("Finish[A]", q.kind);
        let req = agents.reasoner_request(&q, Some(&ds[0]), Some(&prev), "reasoner").unwrap();
        assert!(req.last_user_content().unwrap().contains(FIXED_DIRECTION_TEXT));
    }

    #[test]
    fn fixed_direction_is_constant() {
        assert_eq!(fixed_direction(), fixed_direction());
        assert_eq!(
            fixed_direction().text,
            "Read the question and choices carefully and diagnose the previous response by locating the incorrect clues and update the response if applicable."
        );
        assert_eq!(fixed_direction().source, DirectionSource::Fixed);
    }

    #[test]
    fn degenerate_world_answers_gold() {
        let gw = gateway(world(1.0, 9));
        let q = question();
        let r = Agents::default().reasoner_respond(&q, None, None, &gw, "reasoner/initial").unwrap();
        assert!(r.valid);
        assert_eq!(r.answer, q.gold);
        assert_eq!(r.origin, ResponseOrigin::Initial);
    }

    #[test]
    fn refusals_are_invalid() {
        let mut w = world(1.0, 9);
        w.refusal_rate = 1.0;
        let gw = gateway(w);
        let q = question();
        let r = Agents::default().reasoner_respond(&q, None, None, &gw, "reasoner/initial").unwrap();
        assert!(!r.valid);
        assert_eq!(r.raw_text, REFUSAL_TEXT);
    }

    #[test]
    fn good_direction_lifts_accuracy() {
        // p0 = 0.5, g = 0.4, quality 1 => 0.9 over 1000 draws
        let mut w = world(0.5, 21);
        w.quality_gain = 0.4;
        let gw = gateway(w.clone());
        let q = question();
        let agents = Agents::default();
        let good = Direction::new(w.direction_pool[0].text.clone(), DirectionSource::Generative).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut hits = 0;
        for i in 0..1000 {
            // distinct previous responses give distinct requests
            let prev = validate_response(&format!("Thought: draft {i} {}\nFinish[A]", rng.gen::<u32>()), q.kind);
            let r = agents.reasoner_respond(&q, Some(&good), Some(&prev), &gw, "reasoner/reflect").unwrap();
            hits += (r.answer == q.gold) as usize;
        }
        let freq = hits as f64 / 1000.0;
        assert!((freq - 0.9).abs() <= 0.03, "{freq}");
    }

    #[test]
    fn verbal_bands() {
        assert!(verbalize_consistency(1.0).contains("highly consistent (agreement 1.00)"));
        assert!(verbalize_consistency(0.8).contains("highly consistent"));
        assert!(verbalize_consistency(0.6).contains("moderately consistent (agreement 0.60)"));
        assert!(verbalize_consistency(0.2).contains("were inconsistent (agreement 0.20)"));
    }

    #[test]
    #[should_panic]
    fn verbalize_rejects_out_of_range() {
        verbalize_consistency(1.5);
    }

    #[test]
    fn templates_load_from_directory_with_fallback() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("mmlu")).unwrap();
        std::fs::write(dir.path().join("mmlu/reasoner_initial.txt"), "Be brief.\n---\nQ={question}\n{choices}")
            .unwrap();
        std::fs::write(dir.path().join("mmlu/reasoner_initial.demos.json"), "[]").unwrap();
        let lib = TemplateLibrary::load(dir.path()).unwrap();
        let set = lib.for_kind(question().kind);
        assert_eq!(set.reasoner_initial.system_text, "Be brief.");
        assert!(set.reasoner_initial.demonstrations.is_empty());
        assert_eq!(set.navigator_initial, TemplateSet::builtin(question().kind).navigator_initial);
    }

    proptest::proptest! {
        #[test]
        fn banding_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let rank = |s: f64| {
                let v = verbalize_consistency(s);
                if v.contains("highly") { 2 } else if v.contains("moderately") { 1 } else { 0 }
            };
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            proptest::prop_assert!(rank(lo) <= rank(hi));
        }
    }
}
