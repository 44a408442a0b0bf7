//! Wire types. Every body carries `schema_version` so clients can detect
//! incompatible servers.

use serde::{Deserialize, Serialize};
use unids::db::Entity;
use unids::pipeline::{lexicalize, GenerationTrace, Repair};
use unids::schema::{classify_response_type, BeliefState, ResponseType};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MessageRequest {
    pub text: String,
    /// Only read by `POST /api/message`: empty or absent starts a session.
    #[serde(default)]
    pub session_id: Option<String>,
}

/// One turn as the client sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnView {
    pub turn_index: usize,
    pub user_text: String,
    /// Delexicalized model output.
    pub response_text: String,
    /// Placeholders replaced by the first matching entity.
    pub lexicalized_text: String,
    pub belief: String,
    pub belief_state: BeliefState,
    pub db_token: String,
    pub db_matches: usize,
    pub act: String,
    pub repairs: Vec<Repair>,
    pub mode: ResponseType,
    pub raw_belief_text: String,
    pub raw_act_text: String,
}

impl TurnView {
    pub fn new(turn_index: usize, trace: &GenerationTrace) -> Self {
        let first: Vec<Entity> = trace.matches.iter().take(1).cloned().collect();
        TurnView {
            turn_index,
            user_text: trace.user.clone(),
            response_text: trace.response_text.clone(),
            lexicalized_text: lexicalize(&trace.response_text, &first).text,
            belief: trace.parsed_belief.to_text(),
            belief_state: trace.parsed_belief.clone(),
            db_token: trace.db_token.token().to_string(),
            db_matches: trace.matches.len(),
            act: trace.parsed_act.to_text(),
            repairs: trace.repairs.clone(),
            mode: classify_response_type(&trace.parsed_act),
            raw_belief_text: trace.raw_belief_text.clone(),
            raw_act_text: trace.raw_act_text.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageResponse {
    pub schema_version: u32,
    pub session_id: String,
    #[serde(flatten)]
    pub turn: TurnView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub turns: Vec<TurnView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub schema_version: u32,
    pub status: String,
    pub sessions: usize,
}
