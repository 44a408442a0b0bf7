//! The unified dialogue data schema.
//!
//! Every turn, whether chit-chat or task-oriented, carries the same five
//! segments: user utterance, belief state, database result token, system
//! act and system response. Chit-chat turns use the `chit` pseudo-domain,
//! noun-only belief slots, `[db_nore]` and the `[chit] [chit_act]` act.
//!
//! Segments serialize to whitespace-delimited token text wrapped in marker
//! tokens (`<u> ... </u> <b> ... </b> ...`), and parse back losslessly.

use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Dialogue-start token placed before the first turn of every sequence.
pub const SOS: &str = "<sos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Hotel,
    Restaurant,
    Train,
    Taxi,
    Attraction,
    Police,
    Hospital,
    Chit,
}

impl Domain {
    pub const ALL: [Domain; 8] = [
        Domain::Hotel,
        Domain::Restaurant,
        Domain::Train,
        Domain::Taxi,
        Domain::Attraction,
        Domain::Police,
        Domain::Hospital,
        Domain::Chit,
    ];

    pub const TOD: [Domain; 7] = [
        Domain::Hotel,
        Domain::Restaurant,
        Domain::Train,
        Domain::Taxi,
        Domain::Attraction,
        Domain::Police,
        Domain::Hospital,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Domain::Hotel => "hotel",
            Domain::Restaurant => "restaurant",
            Domain::Train => "train",
            Domain::Taxi => "taxi",
            Domain::Attraction => "attraction",
            Domain::Police => "police",
            Domain::Hospital => "hospital",
            Domain::Chit => "chit",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Domain::Hotel => "[hotel]",
            Domain::Restaurant => "[restaurant]",
            Domain::Train => "[train]",
            Domain::Taxi => "[taxi]",
            Domain::Attraction => "[attraction]",
            Domain::Police => "[police]",
            Domain::Hospital => "[hospital]",
            Domain::Chit => "[chit]",
        }
    }

    pub fn from_name(name: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.name() == name)
    }

    pub fn from_token(token: &str) -> Option<Domain> {
        Domain::ALL.into_iter().find(|d| d.token() == token)
    }

    pub fn is_tod(self) -> bool {
        self != Domain::Chit
    }

    /// Slot-name registry. Chit-chat slots are open-class content words, so
    /// the chit registry is empty.
    pub fn slots(self) -> &'static [&'static str] {
        match self {
            Domain::Hotel => &[
                "name", "type", "price", "area", "stars", "parking", "internet", "phone",
                "postcode", "address",
            ],
            Domain::Restaurant => &["name", "food", "price", "area", "phone", "postcode", "address"],
            Domain::Train => &[
                "name",
                "departure",
                "destination",
                "day",
                "leave",
                "arrive",
                "price",
                "duration",
            ],
            Domain::Taxi => &["name", "departure", "destination", "type", "phone"],
            Domain::Attraction => &["name", "type", "area", "fee", "phone", "postcode", "address"],
            Domain::Police => &["name", "phone", "postcode", "address"],
            Domain::Hospital => &["name", "department", "phone", "postcode", "address"],
            Domain::Chit => &[],
        }
    }

    pub fn has_slot(self, slot: &str) -> bool {
        self.slots().contains(&slot)
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Every slot name appearing in any TOD registry, in first-seen order.
pub fn all_slot_names() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = Vec::new();
    for d in Domain::TOD {
        for s in d.slots() {
            if !out.contains(s) {
                out.push(s);
            }
        }
    }
    out
}

/// Delexicalization placeholder for a slot, e.g. `[value_name]`.
pub fn placeholder(slot: &str) -> String {
    format!("[value_{slot}]")
}

/// Inverse of [`placeholder`].
pub fn placeholder_slot(token: &str) -> Option<&str> {
    token.strip_prefix("[value_")?.strip_suffix(']')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActType {
    #[serde(rename = "inform")]
    Inform,
    #[serde(rename = "request")]
    Request,
    #[serde(rename = "recommend")]
    Recommend,
    #[serde(rename = "offerbook")]
    OfferBook,
    #[serde(rename = "offerbooked")]
    OfferBooked,
    #[serde(rename = "bye")]
    Bye,
    #[serde(rename = "greet")]
    Greet,
    #[serde(rename = "chit_act")]
    ChitAct,
}

impl ActType {
    pub const ALL: [ActType; 8] = [
        ActType::Inform,
        ActType::Request,
        ActType::Recommend,
        ActType::OfferBook,
        ActType::OfferBooked,
        ActType::Bye,
        ActType::Greet,
        ActType::ChitAct,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActType::Inform => "inform",
            ActType::Request => "request",
            ActType::Recommend => "recommend",
            ActType::OfferBook => "offerbook",
            ActType::OfferBooked => "offerbooked",
            ActType::Bye => "bye",
            ActType::Greet => "greet",
            ActType::ChitAct => "chit_act",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            ActType::Inform => "[inform]",
            ActType::Request => "[request]",
            ActType::Recommend => "[recommend]",
            ActType::OfferBook => "[offerbook]",
            ActType::OfferBooked => "[offerbooked]",
            ActType::Bye => "[bye]",
            ActType::Greet => "[greet]",
            ActType::ChitAct => "[chit_act]",
        }
    }

    pub fn from_name(name: &str) -> Option<ActType> {
        ActType::ALL.into_iter().find(|a| a.name() == name)
    }

    pub fn from_token(token: &str) -> Option<ActType> {
        ActType::ALL.into_iter().find(|a| a.token() == token)
    }
}

impl fmt::Display for ActType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Bucketed count of database entities matching the current belief.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DbResult {
    #[serde(rename = "db_0")]
    Zero,
    #[serde(rename = "db_1")]
    One,
    #[serde(rename = "db_2")]
    Two,
    #[serde(rename = "db_3")]
    Three,
    /// No database applies (chit-chat, or no TOD domain in the belief).
    #[serde(rename = "db_nore")]
    NoResult,
}

impl DbResult {
    pub const ALL: [DbResult; 5] = [
        DbResult::Zero,
        DbResult::One,
        DbResult::Two,
        DbResult::Three,
        DbResult::NoResult,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DbResult::Zero => "db_0",
            DbResult::One => "db_1",
            DbResult::Two => "db_2",
            DbResult::Three => "db_3",
            DbResult::NoResult => "db_nore",
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            DbResult::Zero => "[db_0]",
            DbResult::One => "[db_1]",
            DbResult::Two => "[db_2]",
            DbResult::Three => "[db_3]",
            DbResult::NoResult => "[db_nore]",
        }
    }

    pub fn from_token(token: &str) -> Option<DbResult> {
        DbResult::ALL.into_iter().find(|d| d.token() == token)
    }
}

impl fmt::Display for DbResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Match-count thresholds for the four counted buckets.
///
/// `lower_bounds[k]` is the smallest count that maps to bucket `k + 1`; the
/// default `[1, 2, 4]` gives db_0 = 0, db_1 = 1, db_2 = 2..=3, db_3 = 4+.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketTable {
    pub lower_bounds: [usize; 3],
}

impl Default for BucketTable {
    fn default() -> Self {
        BucketTable {
            lower_bounds: [1, 2, 4],
        }
    }
}

impl BucketTable {
    pub fn bucket(&self, count: usize) -> DbResult {
        let [one, two, three] = self.lower_bounds;
        if count >= three {
            DbResult::Three
        } else if count >= two {
            DbResult::Two
        } else if count >= one {
            DbResult::One
        } else {
            DbResult::Zero
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.lower_bounds;
        if a >= 1 && a < b && b < c {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "db bucket bounds must satisfy 1 <= a < b < c, got {:?}",
                self.lower_bounds
            )))
        }
    }
}

/// Ordered slot/value pairs. Serialized as a JSON object whose key order is
/// the pair order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SlotValues(pub Vec<(String, String)>);

impl SlotValues {
    pub fn get(&self, slot: &str) -> Option<&str> {
        self.0
            .iter()
            .find(|(k, _)| k == slot)
            .map(|(_, v)| v.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Sets `slot`, replacing an existing value in place.
    pub fn set(&mut self, slot: &str, value: &str) {
        match self.0.iter_mut().find(|(k, _)| k == slot) {
            Some(pair) => pair.1 = value.to_string(),
            None => self.0.push((slot.to_string(), value.to_string())),
        }
    }
}

impl<K: Into<String>, V: Into<String>> FromIterator<(K, V)> for SlotValues {
    fn from_iter<I: IntoIterator<Item = (K, V)>>(iter: I) -> Self {
        SlotValues(iter.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }
}

impl Serialize for SlotValues {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for (k, v) in &self.0 {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for SlotValues {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct OrderedVisitor;

        impl<'de> Visitor<'de> for OrderedVisitor {
            type Value = SlotValues;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of slot names to string values")
            }

            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<SlotValues, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(SlotValues(pairs))
            }
        }

        deserializer.deserialize_map(OrderedVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeliefEntry {
    pub domain: Domain,
    pub slots: SlotValues,
}

/// Per-domain slot constraints accumulated over the dialogue.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BeliefState {
    pub entries: Vec<BeliefEntry>,
}

impl BeliefState {
    pub fn new() -> Self {
        BeliefState::default()
    }

    /// The chit-chat belief: a single `[chit]` entry whose slots are the
    /// given content words with empty values.
    pub fn chit<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        BeliefState {
            entries: vec![BeliefEntry {
                domain: Domain::Chit,
                slots: words.into_iter().map(|w| (w.into(), String::new())).collect(),
            }],
        }
    }

    pub fn entry(&self, domain: Domain) -> Option<&BeliefEntry> {
        self.entries.iter().find(|e| e.domain == domain)
    }

    /// Sets a constraint, appending the domain entry if it is new.
    pub fn set(&mut self, domain: Domain, slot: &str, value: &str) {
        match self.entries.iter_mut().find(|e| e.domain == domain) {
            Some(e) => e.slots.set(slot, value),
            None => self.entries.push(BeliefEntry {
                domain,
                slots: SlotValues(vec![(slot.to_string(), value.to_string())]),
            }),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_chit(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.domain == Domain::Chit)
    }

    pub fn to_tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        for entry in &self.entries {
            out.push(entry.domain.token().to_string());
            for (slot, value) in entry.slots.iter() {
                out.push(slot.to_string());
                out.extend(value.split_whitespace().map(str::to_string));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_tokens().join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemAct {
    pub domain: Domain,
    #[serde(rename = "type")]
    pub act_type: ActType,
    #[serde(default)]
    pub slots: Vec<String>,
}

impl SystemAct {
    pub fn new<I, S>(domain: Domain, act_type: ActType, slots: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        SystemAct {
            domain,
            act_type,
            slots: slots.into_iter().map(Into::into).collect(),
        }
    }

    pub fn chit() -> Self {
        SystemAct {
            domain: Domain::Chit,
            act_type: ActType::ChitAct,
            slots: Vec::new(),
        }
    }

    pub fn to_tokens(&self) -> Vec<String> {
        let mut out = vec![
            self.domain.token().to_string(),
            self.act_type.token().to_string(),
        ];
        out.extend(self.slots.iter().cloned());
        out
    }

    pub fn to_text(&self) -> String {
        self.to_tokens().join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseType {
    Chit,
    Task,
}

impl fmt::Display for ResponseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResponseType::Chit => "chit",
            ResponseType::Task => "task",
        })
    }
}

pub fn classify_response_type(act: &SystemAct) -> ResponseType {
    if act.domain == Domain::Chit {
        ResponseType::Chit
    } else {
        ResponseType::Task
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub user: String,
    pub belief: BeliefState,
    pub db: DbResult,
    pub act: SystemAct,
    pub response: String,
    #[serde(skip)]
    pub turn_index: usize,
}

impl DialogueTurn {
    pub fn is_chit(&self) -> bool {
        self.act.domain == Domain::Chit
    }

    /// Checks the per-turn schema invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.act.domain == Domain::Chit {
            if self.act.act_type != ActType::ChitAct || !self.act.slots.is_empty() {
                return Err(format!("chit act must be `[chit] [chit_act]`, got `{}`", self.act.to_text()));
            }
            if self.db != DbResult::NoResult {
                return Err("chit-chat turn must carry db_nore".into());
            }
        } else if self.act.act_type == ActType::ChitAct {
            return Err("chit_act used with a task domain".into());
        }
        for entry in &self.belief.entries {
            if entry.domain == Domain::Chit {
                if entry.slots.iter().any(|(_, v)| !v.is_empty()) {
                    return Err("chit belief slots must have empty values".into());
                }
            } else if let Some((slot, _)) = entry.slots.iter().find(|(s, _)| !entry.domain.has_slot(s)) {
                return Err(format!("slot `{slot}` not registered for domain {}", entry.domain));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Chit,
    Tod,
    Mixed,
}

/// Constraints and requested slots for one domain of a task goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainGoal {
    pub domain: Domain,
    pub constraints: SlotValues,
    #[serde(default)]
    pub requests: Vec<String>,
}

/// What a simulated user wants from a task-oriented dialogue. Consumed only
/// by evaluation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskGoal {
    pub domains: Vec<DomainGoal>,
}

impl TaskGoal {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self.domains.iter().find(|g| !g.domain.is_tod()) {
            Some(_) => Err("task goal constrains the chit pseudo-domain".into()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<TaskGoal>,
    pub turns: Vec<DialogueTurn>,
}

impl Dialogue {
    pub fn new(source: Source, goal: Option<TaskGoal>, mut turns: Vec<DialogueTurn>) -> Self {
        for (i, t) in turns.iter_mut().enumerate() {
            t.turn_index = i;
        }
        Dialogue {
            source,
            goal,
            turns,
        }
    }

    /// Restores consecutive turn indices (they are positional in the file format).
    pub fn reindex(&mut self) {
        for (i, t) in self.turns.iter_mut().enumerate() {
            t.turn_index = i;
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        for (i, t) in self.turns.iter().enumerate() {
            if t.turn_index != i {
                return Err(format!("turn {i} has index {}", t.turn_index));
            }
            t.validate().map_err(|e| format!("turn {i}: {e}"))?;
        }
        if let Some(goal) = &self.goal {
            goal.validate()?;
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("dialogue serialization is infallible")
    }

    pub fn from_json_line(line: &str) -> std::result::Result<Self, String> {
        let mut d: Dialogue = serde_json::from_str(line).map_err(|e| e.to_string())?;
        d.reindex();
        d.validate()?;
        Ok(d)
    }
}

/// Begin/end marker tokens for the five turn segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMarkers {
    pub user: (String, String),
    pub belief: (String, String),
    pub db: (String, String),
    pub act: (String, String),
    pub response: (String, String),
}

impl Default for SegmentMarkers {
    fn default() -> Self {
        let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
        SegmentMarkers {
            user: pair("<u>", "</u>"),
            belief: pair("<b>", "</b>"),
            db: pair("<d>", "</d>"),
            act: pair("<a>", "</a>"),
            response: pair("<r>", "</r>"),
        }
    }
}

impl SegmentMarkers {
    pub fn all(&self) -> [&str; 10] {
        [
            &self.user.0,
            &self.user.1,
            &self.belief.0,
            &self.belief.1,
            &self.db.0,
            &self.db.1,
            &self.act.0,
            &self.act.1,
            &self.response.0,
            &self.response.1,
        ]
    }

    pub fn pair(&self, kind: SegmentKind) -> (&str, &str) {
        let p = match kind {
            SegmentKind::User => &self.user,
            SegmentKind::Belief => &self.belief,
            SegmentKind::Db => &self.db,
            SegmentKind::Act => &self.act,
            SegmentKind::Response => &self.response,
        };
        (&p.0, &p.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SegmentKind {
    User,
    Belief,
    Db,
    Act,
    Response,
}

impl SegmentKind {
    pub const ORDER: [SegmentKind; 5] = [
        SegmentKind::User,
        SegmentKind::Belief,
        SegmentKind::Db,
        SegmentKind::Act,
        SegmentKind::Response,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SegmentKind::User => "user",
            SegmentKind::Belief => "belief",
            SegmentKind::Db => "db",
            SegmentKind::Act => "act",
            SegmentKind::Response => "response",
        }
    }
}

/// A turn's tokens, each tagged with the segment it belongs to (markers
/// included).
pub fn turn_tokens(turn: &DialogueTurn, markers: &SegmentMarkers) -> Vec<(SegmentKind, String)> {
    let mut out = Vec::new();
    let mut push = |kind: SegmentKind, body: Vec<String>| {
        let (open, close) = markers.pair(kind);
        out.push((kind, open.to_string()));
        out.extend(body.into_iter().map(|t| (kind, t)));
        out.push((kind, close.to_string()));
    };
    push(SegmentKind::User, words(&turn.user));
    push(SegmentKind::Belief, turn.belief.to_tokens());
    push(SegmentKind::Db, vec![turn.db.token().to_string()]);
    push(SegmentKind::Act, turn.act.to_tokens());
    push(SegmentKind::Response, words(&turn.response));
    out
}

pub fn serialize_turn(turn: &DialogueTurn, markers: &SegmentMarkers) -> String {
    turn_tokens(turn, markers)
        .into_iter()
        .map(|(_, t)| t)
        .collect::<Vec<_>>()
        .join(" ")
}

fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// A best-effort parse plus whether it needed no leniency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Parsed<T> {
    pub value: T,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Belief(BeliefState),
    Db(DbResult),
    Act(SystemAct),
}

pub fn parse_segment(text: &str, kind: SegmentKind) -> Result<Parsed<Segment>> {
    match kind {
        SegmentKind::Belief => parse_belief(text).map(|p| Parsed {
            value: Segment::Belief(p.value),
            valid: p.valid,
        }),
        SegmentKind::Db => parse_db(text).map(|value| Parsed {
            value: Segment::Db(value),
            valid: true,
        }),
        SegmentKind::Act => parse_act(text).map(|p| Parsed {
            value: Segment::Act(p.value),
            valid: p.valid,
        }),
        SegmentKind::User | SegmentKind::Response => Err(Error::MalformedSegment {
            kind: kind.name(),
            reason: "free-text segments have no structured form",
            text: text.to_string(),
        }),
    }
}

/// Parses `[domain] slot value ...`.
///
/// Within a TOD domain a value runs until the next registered slot name or
/// domain token. Chit-chat slots are every token after `[chit]`. Unknown
/// slot names are kept verbatim and clear the validity flag.
pub fn parse_belief(text: &str) -> Result<Parsed<BeliefState>> {
    let mut tokens = text.split_whitespace().peekable();
    if tokens.peek().and_then(|t| Domain::from_token(t)).is_none() {
        return Err(Error::MalformedSegment {
            kind: "belief",
            reason: "no domain token opens the belief",
            text: text.to_string(),
        });
    }

    let mut valid = true;
    let mut entries: Vec<BeliefEntry> = Vec::new();
    for tok in tokens {
        if let Some(domain) = Domain::from_token(tok) {
            entries.push(BeliefEntry {
                domain,
                slots: SlotValues::default(),
            });
            continue;
        }
        let entry = entries.last_mut().expect("first token is a domain");
        if is_reserved_token(tok) {
            valid = false;
        }
        if entry.domain == Domain::Chit || entry.domain.has_slot(tok) {
            entry.slots.0.push((tok.to_string(), String::new()));
        } else if let Some((_, value)) = entry.slots.0.last_mut() {
            if !value.is_empty() {
                value.push(' ');
            }
            value.push_str(tok);
        } else {
            valid = false;
            entry.slots.0.push((tok.to_string(), String::new()));
        }
    }
    Ok(Parsed {
        value: BeliefState { entries },
        valid,
    })
}

pub fn parse_db(text: &str) -> Result<DbResult> {
    let mut tokens = text.split_whitespace();
    match (tokens.next().and_then(DbResult::from_token), tokens.next()) {
        (Some(db), None) => Ok(db),
        _ => Err(Error::MalformedSegment {
            kind: "db",
            reason: "expected exactly one db token",
            text: text.to_string(),
        }),
    }
}

/// Parses `[domain] [act] slot ...`.
pub fn parse_act(text: &str) -> Result<Parsed<SystemAct>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let malformed = |reason| Error::MalformedSegment {
        kind: "act",
        reason,
        text: text.to_string(),
    };
    let domain = tokens
        .first()
        .and_then(|t| Domain::from_token(t))
        .ok_or_else(|| malformed("no domain token opens the act"))?;
    let act_type = tokens
        .get(1)
        .and_then(|t| ActType::from_token(t))
        .ok_or_else(|| malformed("missing act-type token"))?;
    let slots: Vec<String> = tokens[2..].iter().map(|s| s.to_string()).collect();

    let mut valid = !slots.iter().any(|s| is_reserved_token(s));
    if domain == Domain::Chit {
        valid &= act_type == ActType::ChitAct && slots.is_empty();
    } else {
        valid &= act_type != ActType::ChitAct;
    }
    Ok(Parsed {
        value: SystemAct {
            domain,
            act_type,
            slots,
        },
        valid,
    })
}

/// Parses a full serialized turn (`<u> ... </r>`).
pub fn parse_turn(text: &str, markers: &SegmentMarkers) -> Result<DialogueTurn> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut pos = 0;
    let mut bodies: Vec<String> = Vec::with_capacity(5);
    for kind in SegmentKind::ORDER {
        let (open, close) = markers.pair(kind);
        if tokens.get(pos) != Some(&open) {
            return Err(Error::MalformedSegment {
                kind: kind.name(),
                reason: "missing opening marker",
                text: text.to_string(),
            });
        }
        pos += 1;
        let start = pos;
        while pos < tokens.len() && tokens[pos] != close {
            pos += 1;
        }
        if pos == tokens.len() {
            return Err(Error::MalformedSegment {
                kind: kind.name(),
                reason: "missing closing marker",
                text: text.to_string(),
            });
        }
        bodies.push(tokens[start..pos].join(" "));
        pos += 1;
    }

    let belief = if bodies[1].is_empty() {
        BeliefState::default()
    } else {
        parse_belief(&bodies[1])?.value
    };
    Ok(DialogueTurn {
        user: bodies[0].clone(),
        belief,
        db: parse_db(&bodies[2])?,
        act: parse_act(&bodies[3])?.value,
        response: bodies[4].clone(),
        turn_index: 0,
    })
}

/// Tokens with bracket or angle syntax are reserved for the schema.
pub fn is_reserved_token(tok: &str) -> bool {
    (tok.starts_with('[') && tok.ends_with(']') && tok.len() > 2)
        || (tok.starts_with('<') && tok.ends_with('>') && tok.len() > 2)
}
