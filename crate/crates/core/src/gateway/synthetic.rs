//! Scripted stand-in for the navigator and reasoner models.
//!
//! Requests are routed by tag prefix (`navigator...` or `reasoner...`) and
//! matched to a world through the `Question: ` / `Claim: ` line of the final
//! user message. Every draw comes from a ChaCha stream seeded by
//! `(world seed, cache key, occurrence counter)`, so a given request sequence
//! always yields the same transcript.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{cache_key, ChatRequest, ChatResponse, Gateway, GatewayError};
use crate::model::{AnswerLabel, Question, TaskKind};

pub const REFUSAL_TEXT: &str = "I cannot assist with that request.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolDirection {
    pub text: String,
    /// How much following this direction helps, in [0, 1].
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub kind: TaskKind,
    pub true_answer: AnswerLabel,
    /// Correctness probability with no useful direction.
    pub base_accuracy: f64,
    pub direction_pool: Vec<PoolDirection>,
    /// Correctness gain per unit of direction quality.
    pub quality_gain: f64,
    pub refusal_rate: f64,
    pub rng_seed: u64,
    /// Probability that a navigator shown a previous pool direction proposes
    /// it again instead of drawing from its own ordering of the pool.
    #[serde(default)]
    pub direction_persistence: f64,
    /// Preferred wrong answer, if any.
    #[serde(default)]
    pub distractor: Option<AnswerLabel>,
    /// Share of wrong answers sent to the distractor before the uniform draw.
    #[serde(default)]
    pub distractor_share: f64,
}

impl SyntheticWorld {
    pub fn new(kind: TaskKind, true_answer: AnswerLabel, base_accuracy: f64, rng_seed: u64) -> Self {
        SyntheticWorld {
            kind,
            true_answer,
            base_accuracy,
            direction_pool: Vec::new(),
            quality_gain: 0.0,
            refusal_rate: 0.0,
            rng_seed,
            direction_persistence: 0.0,
            distractor: None,
            distractor_share: 0.0,
        }
    }

    /// clamp(p0 + g * quality, 0, 1)
    pub fn correct_probability(&self, quality: f64) -> f64 {
        (self.base_accuracy + self.quality_gain * quality).clamp(0.0, 1.0)
    }

    fn pool_match(&self, text: &str) -> Option<usize> {
        self.direction_pool
            .iter()
            .enumerate()
            .filter(|(_, d)| !d.text.is_empty() && text.contains(d.text.as_str()))
            .max_by(|a, b| a.1.quality.total_cmp(&b.1.quality).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }

    /// Quality of the best pool direction quoted in `text`; 0 when none is.
    pub fn quality_in(&self, text: &str) -> f64 {
        self.pool_match(text).map_or(0.0, |i| self.direction_pool[i].quality)
    }

    fn wrong_labels(&self) -> Vec<AnswerLabel> {
        self.kind.labels().into_iter().filter(|l| *l != self.true_answer).collect()
    }

    /// Draws one reasoner answer, or `None` for a refusal.
    pub fn draw_answer<R: Rng>(&self, quality: f64, rng: &mut R) -> Option<AnswerLabel> {
        let refuse: f64 = rng.gen();
        let correct: f64 = rng.gen();
        let distract: f64 = rng.gen();
        let pick: f64 = rng.gen();
        if refuse < self.refusal_rate {
            return None;
        }
        if correct < self.correct_probability(quality) {
            return Some(self.true_answer);
        }
        if let Some(d) = self.distractor {
            if d != self.true_answer && distract < self.distractor_share {
                return Some(d);
            }
        }
        let wrong = self.wrong_labels();
        if wrong.is_empty() {
            return Some(self.true_answer);
        }
        let idx = ((pick * wrong.len() as f64) as usize).min(wrong.len() - 1);
        Some(wrong[idx])
    }
}

fn stream(seed: u64, key: &str, salt: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(key.as_bytes());
    h.update(salt);
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn render_reasoner_text(label: AnswerLabel) -> String {
    format!("Thought: Weighing the evidence against the advice, {label} is the best supported answer.\nFinish[{label}]")
}

pub struct SyntheticGateway {
    worlds: HashMap<String, SyntheticWorld>,
    counters: Mutex<HashMap<String, u64>>,
}

impl SyntheticGateway {
    pub fn new(worlds: impl IntoIterator<Item = (String, SyntheticWorld)>) -> Self {
        SyntheticGateway { worlds: worlds.into_iter().collect(), counters: Mutex::new(HashMap::new()) }
    }

    pub fn from_benchmark(bench: &[(Question, SyntheticWorld)]) -> Self {
        Self::new(bench.iter().map(|(q, w)| (q.prompt_text.clone(), w.clone())))
    }

    fn world_for(&self, request: &ChatRequest) -> Result<&SyntheticWorld, GatewayError> {
        let content =
            request.last_user_content().ok_or_else(|| GatewayError::InvalidRequest("no user message".into()))?;
        let text = content
            .lines()
            .find_map(|l| l.strip_prefix("Question: ").or_else(|| l.strip_prefix("Claim: ")))
            .ok_or_else(|| GatewayError::InvalidRequest("no `Question:` or `Claim:` line".into()))?;
        self.worlds
            .get(text.trim())
            .ok_or_else(|| GatewayError::InvalidRequest(format!("no synthetic world for {:?}", text.trim())))
    }

    fn next_counter(&self, key: &str) -> u64 {
        let mut counters = self.counters.lock().unwrap();
        let c = counters.entry(key.to_string()).or_insert(0);
        let n = *c;
        *c += 1;
        n
    }

    fn navigator_text(&self, world: &SyntheticWorld, prompt: &str, key: &str, counter: u64) -> String {
        if world.direction_pool.is_empty() {
            return "Re-read the question and check each option.".to_string();
        }
        let mut order: Vec<usize> = (0..world.direction_pool.len()).collect();
        order.shuffle(&mut stream(world.rng_seed, key, b"navigator-order"));
        let mut rng = stream(world.rng_seed, key, &counter.to_le_bytes());
        let stay: f64 = rng.gen();
        let idx = match world.pool_match(prompt) {
            Some(prev) if stay < world.direction_persistence => prev,
            _ => order[(counter as usize) % order.len()],
        };
        world.direction_pool[idx].text.clone()
    }

    fn reasoner_text(&self, world: &SyntheticWorld, prompt: &str, key: &str, counter: u64) -> String {
        let mut rng = stream(world.rng_seed, key, &counter.to_le_bytes());
        match world.draw_answer(world.quality_in(prompt), &mut rng) {
            Some(label) => render_reasoner_text(label),
            None => REFUSAL_TEXT.to_string(),
        }
    }
}

impl Gateway for SyntheticGateway {
    fn backend_id(&self) -> &str {
        "synthetic"
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let start = Instant::now();
        request.validate()?;
        let world = self.world_for(request)?;
        let prompt = request.last_user_content().unwrap_or_default();
        let key = cache_key(request);
        let counter = self.next_counter(&key);
        let text = if request.tag.starts_with("navigator") {
            self.navigator_text(world, prompt, &key, counter)
        } else if request.tag.starts_with("reasoner") {
            self.reasoner_text(world, prompt, &key, counter)
        } else {
            return Err(GatewayError::InvalidRequest(format!("unroutable tag {:?}", request.tag)));
        };
        Ok(ChatResponse { text, backend_id: "synthetic".into(), cached: false, latency: start.elapsed() })
    }

    // Sequential: occurrence counters are assigned in request order.
    fn complete_batch(&self, requests: &[ChatRequest]) -> Vec<Result<ChatResponse, GatewayError>> {
        requests.iter().map(|r| self.complete(r)).collect()
    }
}
