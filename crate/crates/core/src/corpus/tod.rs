//! Template generator for schema-conformant task-oriented dialogues.
//!
//! Every dialogue follows the flow: the user states some constraints, the
//! system requests each missing one, recommends a matching entity, answers
//! the user's information requests and says goodbye. About a fifth of the
//! dialogues continue into a second domain before the goodbye. Responses
//! are delexicalized with `[value_<slot>]` placeholders.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::db::{Entity, EntityDatabase};
use crate::error::{Error, Result};
use crate::schema::{
    placeholder, ActType, BeliefState, BucketTable, Dialogue, DialogueTurn, Domain, DomainGoal,
    SlotValues, Source, SystemAct, TaskGoal,
};

const SECOND_DOMAIN_RATE: f64 = 0.2;

/// Domains the generator draws from, with relative weights.
const DOMAIN_WEIGHTS: &[(Domain, u32)] = &[
    (Domain::Hotel, 30),
    (Domain::Restaurant, 30),
    (Domain::Attraction, 20),
    (Domain::Train, 10),
    (Domain::Hospital, 5),
    (Domain::Police, 5),
];

fn informable(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Hotel => &["price", "area", "stars"],
        Domain::Restaurant => &["food", "price", "area"],
        Domain::Attraction => &["type", "area"],
        Domain::Train => &["departure", "destination", "day"],
        Domain::Hospital => &["department"],
        _ => &[],
    }
}

fn requestable(domain: Domain) -> &'static [&'static str] {
    match domain {
        Domain::Hotel | Domain::Restaurant => &["phone", "postcode", "address"],
        Domain::Attraction => &["phone", "postcode", "address", "fee"],
        Domain::Train => &["leave", "arrive", "price", "duration"],
        Domain::Hospital | Domain::Police => &["phone", "postcode", "address"],
        Domain::Taxi => &["phone", "type"],
        Domain::Chit => &[],
    }
}

fn slot_phrase(slot: &str) -> &'static str {
    match slot {
        "phone" => "phone number",
        "postcode" => "postcode",
        "address" => "address",
        "fee" => "entrance fee",
        "leave" => "departure time",
        "arrive" => "arrival time",
        "price" => "price",
        "duration" => "travel time",
        "type" => "car type",
        _ => "details",
    }
}

fn request_question(slot: &str, rng: &mut ChaCha8Rng) -> &'static str {
    let options: &[&str] = match slot {
        "price" => &["what price range would you like ?", "do you have a price range in mind ?"],
        "area" => &[
            "which area of town do you prefer ?",
            "do you have a specific area you want to stay in ?",
        ],
        "stars" => &["how many stars would you like ?"],
        "food" => &["what type of food would you like ?", "what kind of food are you in the mood for ?"],
        "type" => &["what kind of attraction are you interested in ?"],
        "departure" => &["where will you be leaving from ?"],
        "destination" => &["where are you travelling to ?"],
        "day" => &["what day will you travel ?"],
        "department" => &["which department do you need ?"],
        _ => &["can you tell me more ?"],
    };
    options.choose(rng).expect("nonempty")
}

fn answer_fragment(slot: &str, value: &str, rng: &mut ChaCha8Rng) -> String {
    let options: &[&str] = match slot {
        "price" => &["{v} please .", "something {v} would be good ."],
        "area" => &["in the {v} please .", "i would like the {v} ."],
        "stars" => &["{v} stars please .", "it should have {v} stars ."],
        "food" => &["{v} food please .", "i would like {v} food ."],
        "type" => &["a {v} please .", "i would like to see a {v} ."],
        "departure" => &["i am leaving from {v} .", "from {v} please ."],
        "destination" => &["i am going to {v} .", "to {v} please ."],
        "day" => &["on {v} please .", "i want to travel on {v} ."],
        "department" => &["the {v} department ."],
        _ => &["{v} ."],
    };
    options.choose(rng).expect("nonempty").replace("{v}", value)
}

/// First user utterance of a domain: an intro plus the mentioned constraints.
fn opening_utterance(
    domain: Domain,
    mentioned: &SlotValues,
    also: bool,
    rng: &mut ChaCha8Rng,
) -> String {
    let get = |s: &str| mentioned.get(s).map(str::to_string);
    let intro = |rng: &mut ChaCha8Rng, options: &[&str]| -> String {
        if also {
            "i also need".to_string()
        } else {
            options.choose(rng).expect("nonempty").to_string()
        }
    };
    let mut words: Vec<String> = Vec::new();
    match domain {
        Domain::Hotel => {
            words.push(intro(rng, &["i am looking for", "i need", "can you find me", "i want"]));
            words.push("a".into());
            words.extend(get("price"));
            if let Some(stars) = get("stars") {
                words.push(format!("{stars} star"));
            }
            words.push("hotel".into());
            if let Some(area) = get("area") {
                words.push(format!("in the {area}"));
            }
        }
        Domain::Restaurant => {
            words.push(intro(rng, &["i am looking for", "i need", "can you find me", "i want"]));
            words.push("a".into());
            words.extend(get("price"));
            words.extend(get("food"));
            words.push("restaurant".into());
            if let Some(area) = get("area") {
                words.push(format!("in the {area}"));
            }
        }
        Domain::Attraction => {
            words.push(intro(rng, &["i want to visit", "i am looking for", "can you recommend"]));
            match get("type") {
                Some(t) => words.push(format!("a {t}")),
                None => words.push("an attraction".into()),
            }
            if let Some(area) = get("area") {
                words.push(format!("in the {area}"));
            }
        }
        Domain::Train => {
            words.push(intro(rng, &["i need", "i am looking for"]));
            words.push("a train".into());
            if let Some(v) = get("departure") {
                words.push(format!("from {v}"));
            }
            if let Some(v) = get("destination") {
                words.push(format!("to {v}"));
            }
            if let Some(v) = get("day") {
                words.push(format!("on {v}"));
            }
        }
        Domain::Hospital => {
            words.push(intro(rng, &["i need", "i am looking for"]));
            match get("department") {
                Some(d) => words.push(format!("a hospital with a {d} department")),
                None => words.push("a hospital".into()),
            }
        }
        Domain::Police => {
            words.push(intro(rng, &["i need to find", "i am looking for"]));
            words.push("the police station".into());
        }
        Domain::Taxi | Domain::Chit => unreachable!("not generated"),
    }
    words.push(".".into());
    words.join(" ")
}

fn recommend_template(domain: Domain, rng: &mut ChaCha8Rng) -> &'static str {
    let options: &[&str] = match domain {
        Domain::Hotel => &[
            "how about [value_name] ? it is a [value_price] hotel in the [value_area] .",
            "i recommend [value_name] in the [value_area] .",
            "[value_name] is a [value_stars] star hotel that fits your needs .",
        ],
        Domain::Restaurant => &[
            "[value_name] serves [value_food] food in the [value_area] .",
            "how about [value_name] ? it is a [value_price] restaurant .",
            "i recommend [value_name] .",
        ],
        Domain::Attraction => &[
            "[value_name] is a [value_type] in the [value_area] .",
            "you could visit [value_name] .",
        ],
        Domain::Train => &[
            "[value_name] leaves at [value_leave] and arrives at [value_arrive] .",
            "i have train [value_name] leaving at [value_leave] .",
        ],
        Domain::Hospital => &["[value_name] has a [value_department] department ."],
        Domain::Police => &["the nearest police station is [value_name] ."],
        Domain::Taxi | Domain::Chit => unreachable!("not generated"),
    };
    options.choose(rng).expect("nonempty")
}

/// Slot names of the placeholders in `response`, in order.
fn placeholder_slots(response: &str) -> Vec<String> {
    response
        .split_whitespace()
        .filter_map(crate::schema::placeholder_slot)
        .map(str::to_string)
        .collect()
}

fn inform_response(slots: &[&str], rng: &mut ChaCha8Rng) -> String {
    let parts: Vec<String> = slots
        .iter()
        .map(|s| format!("the {} is {}", slot_phrase(s), placeholder(s)))
        .collect();
    let lead = ["", "sure , ", "of course , "].choose(rng).expect("nonempty");
    format!("{lead}{} .", parts.join(" and "))
}

fn request_utterance(slots: &[&str], rng: &mut ChaCha8Rng) -> String {
    let phrases: Vec<&str> = slots.iter().map(|s| slot_phrase(s)).collect();
    let joined = phrases.join(" and ");
    match rng.gen_range(0..3) {
        0 => format!("can i get the {joined} ?"),
        1 => format!("what is the {joined} ?"),
        _ => format!("could you tell me the {joined} please ?"),
    }
}

fn sort_belief(belief: &mut BeliefState) {
    for entry in &mut belief.entries {
        let order = entry.domain.slots();
        entry
            .slots
            .0
            .sort_by_key(|(k, _)| order.iter().position(|s| s == k).unwrap_or(usize::MAX));
    }
}

fn pick_domain(rng: &mut ChaCha8Rng, available: &[Domain], exclude: Option<Domain>) -> Option<Domain> {
    let choices: Vec<(Domain, u32)> = DOMAIN_WEIGHTS
        .iter()
        .copied()
        .filter(|(d, _)| available.contains(d) && Some(*d) != exclude)
        .collect();
    choices.choose_weighted(rng, |(_, w)| *w).ok().map(|(d, _)| *d)
}

fn sample_goal(domain: Domain, target: &Entity, rng: &mut ChaCha8Rng) -> DomainGoal {
    let informable: Vec<&str> = informable(domain)
        .iter()
        .copied()
        .filter(|s| target.contains_key(*s))
        .collect();
    let count = match (domain, informable.len()) {
        (_, 0) => 0,
        (Domain::Train, n) => n,
        (_, n) => rng.gen_range(1..=n),
    };
    let mut chosen: Vec<&str> = informable.choose_multiple(rng, count).copied().collect();
    let order = domain.slots();
    chosen.sort_by_key(|s| order.iter().position(|o| o == s));
    let constraints = chosen
        .iter()
        .map(|s| (s.to_string(), target[*s].clone()))
        .collect();

    let requestable: Vec<&str> = requestable(domain)
        .iter()
        .copied()
        .filter(|s| target.contains_key(*s))
        .collect();
    let n_req = rng.gen_range(1..=requestable.len().min(2));
    let mut requests: Vec<&str> = requestable.choose_multiple(rng, n_req).copied().collect();
    requests.sort_by_key(|s| order.iter().position(|o| o == s));
    DomainGoal {
        domain,
        constraints,
        requests: requests.into_iter().map(str::to_string).collect(),
    }
}

struct TurnBuilder<'a> {
    db: &'a EntityDatabase,
    buckets: BucketTable,
    belief: BeliefState,
    turns: Vec<DialogueTurn>,
}

impl TurnBuilder<'_> {
    fn push(&mut self, user: String, act: SystemAct, response: String) -> Result<()> {
        sort_belief(&mut self.belief);
        let db = self.db.query(&self.belief, &self.buckets)?.token;
        self.turns.push(DialogueTurn {
            user,
            belief: self.belief.clone(),
            db,
            act,
            response,
            turn_index: self.turns.len(),
        });
        Ok(())
    }

    fn run_domain(&mut self, goal: &DomainGoal, also: bool, rng: &mut ChaCha8Rng) -> Result<()> {
        let domain = goal.domain;
        let mut order: Vec<(String, String)> = goal.constraints.0.clone();
        order.shuffle(rng);
        let mention = if order.is_empty() { 0 } else { rng.gen_range(1..=order.len()) };

        let mentioned: SlotValues = SlotValues(order[..mention].to_vec());
        let mut user = opening_utterance(domain, &mentioned, also, rng);
        if mention == 0 {
            // Unconstrained domains still need a belief entry to be queried.
            self.belief.set(domain, "name", "");
            self.belief.entries.last_mut().expect("just set").slots.0.clear();
        }
        for (slot, value) in &order[..mention] {
            self.belief.set(domain, slot, value);
        }

        for (slot, value) in &order[mention..] {
            let question = request_question(slot, rng).to_string();
            self.push(user, SystemAct::new(domain, ActType::Request, [slot.clone()]), question)?;
            user = answer_fragment(slot, value, rng);
            self.belief.set(domain, slot, value);
        }

        let recommend = recommend_template(domain, rng).to_string();
        let act = SystemAct::new(domain, ActType::Recommend, placeholder_slots(&recommend));
        self.push(user, act, recommend)?;

        let requests: Vec<&str> = goal.requests.iter().map(String::as_str).collect();
        let user = request_utterance(&requests, rng);
        let response = inform_response(&requests, rng);
        self.push(user, SystemAct::new(domain, ActType::Inform, requests), response)
    }
}

/// Emits `count` task-oriented dialogues whose goals are drawn from real
/// entities of `template_db`. Deterministic in `seed`.
pub fn generate_tod_corpus(template_db: &EntityDatabase, count: usize, seed: u64) -> Result<Vec<Dialogue>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    if template_db.is_empty() {
        return Err(Error::DatabaseFormat("template database is empty".into()));
    }
    let available: Vec<Domain> = DOMAIN_WEIGHTS
        .iter()
        .map(|(d, _)| *d)
        .filter(|d| template_db.table(*d).is_some_and(|t| !t.is_empty()))
        .collect();
    if available.is_empty() {
        return Err(Error::DatabaseFormat("no generator domain has entities".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let first = pick_domain(&mut rng, &available, None).expect("available is nonempty");
        let mut domains = vec![first];
        if rng.gen_bool(SECOND_DOMAIN_RATE) {
            let task_domains: Vec<Domain> = available
                .iter()
                .copied()
                .filter(|d| matches!(d, Domain::Hotel | Domain::Restaurant | Domain::Attraction | Domain::Train))
                .collect();
            if let Some(second) = pick_domain(&mut rng, &task_domains, Some(first)) {
                domains.push(second);
            }
        }

        let goals: Vec<DomainGoal> = domains
            .iter()
            .map(|&d| {
                let table = template_db.table(d).expect("available domain");
                let target = table.choose(&mut rng).expect("nonempty table");
                sample_goal(d, target, &mut rng)
            })
            .collect();

        let mut builder = TurnBuilder {
            db: template_db,
            buckets: BucketTable::default(),
            belief: BeliefState::new(),
            turns: Vec::new(),
        };
        for (i, goal) in goals.iter().enumerate() {
            builder.run_domain(goal, i > 0, &mut rng)?;
        }
        let last = *domains.last().expect("one domain");
        let (user, response) = [
            ("thank you , goodbye .", "you are welcome . goodbye ."),
            ("that is all i need , thanks .", "have a nice day ."),
            ("great , thanks for your help .", "thank you for using our service ."),
        ]
        .choose(&mut rng)
        .expect("nonempty");
        builder.push(
            user.to_string(),
            SystemAct::new(last, ActType::Bye, Vec::<String>::new()),
            response.to_string(),
        )?;

        out.push(Dialogue::new(
            Source::Tod,
            Some(TaskGoal { domains: goals }),
            builder.turns,
        ));
    }
    Ok(out)
}

const CITIES: &[&str] = &["cambridge", "london", "ely", "norwich", "stevenage", "peterborough"];
const DAYS: &[&str] = &["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const FOODS: &[&str] = &["chinese", "italian", "indian", "british", "thai", "french"];
const ATTRACTION_TYPES: &[&str] = &["museum", "park", "theatre", "college", "cinema", "gallery"];
const DEPARTMENTS: &[&str] = &["cardiology", "neurology", "paediatrics", "oncology", "emergency", "urology"];
const STREETS: &[&str] = &["mill", "station", "regent", "hills", "castle", "trumpington", "milton", "newmarket"];

const HOTEL_NAMES: &[&str] = &[
    "acorn lodge", "alpine house", "bridge guesthouse", "avalon inn", "cotton court",
    "gonville place", "harbour view", "kings lodge", "lime tree inn", "maple hotel",
    "north gate inn", "oak manor", "hamilton lodge", "regency house", "riverside lodge",
    "rose villa", "carlton hotel", "sunrise house", "willow court", "yellow door inn",
];
const RESTAURANT_NAMES: &[&str] = &[
    "golden wok", "bella italia", "curry garden", "the eagle", "bangkok city", "cafe rouge",
    "jade palace", "pizza hut fen", "tandoori house", "the copper kettle", "lotus garden",
    "la margherita", "spice route", "the anchor", "thai orchid", "le bistro", "dragon inn",
    "roma kitchen", "saffron grill", "the plough", "royal spice", "noodle bar", "the gardenia",
    "blue lagoon",
];
const ATTRACTION_NAMES: &[&str] = &[
    "fitzwilliam museum", "botanic garden", "adc theatre", "kings college", "vue cinema",
    "kettles yard", "castle museum", "jesus green", "corn exchange", "trinity college",
    "arts picturehouse", "primavera gallery", "whipple museum", "cherry hinton park", "mumford theatre",
];

fn phone(rng: &mut ChaCha8Rng) -> String {
    format!("01223{:06}", rng.gen_range(0..1_000_000))
}

fn postcode(rng: &mut ChaCha8Rng) -> String {
    let letters = b"abdefghjlnpqrstuwxyz";
    let a = letters[rng.gen_range(0..letters.len())] as char;
    let b = letters[rng.gen_range(0..letters.len())] as char;
    format!("cb{} {}{a}{b}", rng.gen_range(1..6), rng.gen_range(1..10))
}

fn address(rng: &mut ChaCha8Rng) -> String {
    format!("{} {} road", rng.gen_range(1..120), STREETS.choose(rng).expect("nonempty"))
}

fn entity(pairs: Vec<(&str, String)>) -> Entity {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// A deterministic entity database over all seven task domains, used as the
/// bundled fixture.
pub fn synthetic_database(seed: u64) -> EntityDatabase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut db = EntityDatabase::default();
    let pick = |rng: &mut ChaCha8Rng, xs: &[&str]| xs.choose(rng).expect("nonempty").to_string();

    let hotels = HOTEL_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            entity(vec![
                ("name", name.to_string()),
                ("type", if i % 3 == 0 { "guesthouse".into() } else { "hotel".into() }),
                ("price", PRICES[i % PRICES.len()].to_string()),
                ("area", pick(rng, AREAS)),
                ("stars", rng.gen_range(2..=5).to_string()),
                ("parking", pick(rng, &["yes", "no"])),
                ("internet", pick(rng, &["yes", "no"])),
                ("phone", phone(rng)),
                ("postcode", postcode(rng)),
                ("address", address(rng)),
            ])
        })
        .collect();
    db.tables.insert(Domain::Hotel, hotels);

    let restaurants = RESTAURANT_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            entity(vec![
                ("name", name.to_string()),
                ("food", FOODS[i % FOODS.len()].to_string()),
                ("price", pick(rng, PRICES)),
                ("area", pick(rng, AREAS)),
                ("phone", phone(rng)),
                ("postcode", postcode(rng)),
                ("address", address(rng)),
            ])
        })
        .collect();
    db.tables.insert(Domain::Restaurant, restaurants);

    let attractions = ATTRACTION_NAMES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            entity(vec![
                ("name", name.to_string()),
                ("type", ATTRACTION_TYPES[i % ATTRACTION_TYPES.len()].to_string()),
                ("area", pick(rng, AREAS)),
                ("fee", pick(rng, &["free", "5 pounds", "3 pounds"])),
                ("phone", phone(rng)),
                ("postcode", postcode(rng)),
                ("address", address(rng)),
            ])
        })
        .collect();
    db.tables.insert(Domain::Attraction, attractions);

    let mut trains = Vec::new();
    for i in 0..30 {
        let dep = pick(rng, CITIES);
        let dest = loop {
            let c = pick(rng, CITIES);
            if c != dep {
                break c;
            }
        };
        let hour = rng.gen_range(5..22);
        let minute = [0, 15, 30, 45][rng.gen_range(0..4)];
        let duration = [40, 50, 60, 80, 105][rng.gen_range(0..5)];
        let arrive_min = hour * 60 + minute + duration;
        trains.push(entity(vec![
            ("name", format!("tr{}", 1000 + i * 37)),
            ("departure", dep),
            ("destination", dest),
            ("day", pick(rng, DAYS)),
            ("leave", format!("{hour:02}:{minute:02}")),
            ("arrive", format!("{:02}:{:02}", arrive_min / 60, arrive_min % 60)),
            ("price", format!("{}.{:02} pounds", rng.gen_range(4..40), rng.gen_range(0..100))),
            ("duration", format!("{duration} minutes")),
        ]));
    }
    db.tables.insert(Domain::Train, trains);

    let taxis = ["black toyota", "white skoda", "red ford", "blue audi"]
        .iter()
        .map(|car| {
            entity(vec![
                ("name", car.to_string()),
                ("type", car.to_string()),
                ("phone", format!("07{:09}", rng.gen_range(0..1_000_000_000u64))),
            ])
        })
        .collect();
    db.tables.insert(Domain::Taxi, taxis);

    db.tables.insert(
        Domain::Police,
        vec![entity(vec![
            ("name", "parkside police station".into()),
            ("phone", "01223358966".into()),
            ("postcode", "cb1 1jg".into()),
            ("address", "parkside".into()),
        ])],
    );

    let hospitals = DEPARTMENTS
        .iter()
        .map(|dept| {
            entity(vec![
                ("name", "addenbrookes hospital".into()),
                ("department", dept.to_string()),
                ("phone", phone(rng)),
                ("postcode", "cb2 0qq".into()),
                ("address", "hills road".into()),
            ])
        })
        .collect();
    db.tables.insert(Domain::Hospital, hospitals);
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_dialogues_conform_to_schema() {
        let db = synthetic_database(1);
        db.validate().unwrap();
        let corpus = generate_tod_corpus(&db, 60, 7).unwrap();
        assert_eq!(corpus.len(), 60);
        for d in &corpus {
            d.validate().unwrap();
            assert!(d.goal.is_some());
            let last = d.turns.last().unwrap();
            assert_eq!(last.act.act_type, ActType::Bye);
            assert!(d.turns.iter().any(|t| t.act.act_type == ActType::Recommend));
            for t in &d.turns {
                // act slots mirror the response placeholders
                if matches!(t.act.act_type, ActType::Recommend | ActType::Inform) {
                    assert_eq!(t.act.slots, placeholder_slots(&t.response));
                }
            }
        }
        assert!(corpus.iter().any(|d| d.goal.as_ref().unwrap().domains.len() == 2));
    }

    #[test]
    fn deterministic_and_empty() {
        let db = synthetic_database(1);
        assert_eq!(generate_tod_corpus(&db, 5, 3).unwrap(), generate_tod_corpus(&db, 5, 3).unwrap());
        assert!(generate_tod_corpus(&db, 0, 3).unwrap().is_empty());
        assert!(generate_tod_corpus(&EntityDatabase::default(), 2, 3).is_err());
    }

    #[test]
    fn recommendations_are_backed_by_matches() {
        let db = synthetic_database(1);
        for d in generate_tod_corpus(&db, 40, 11).unwrap() {
            for t in d.turns.iter().filter(|t| t.act.act_type == ActType::Recommend) {
                let r = db.query(&t.belief, &BucketTable::default()).unwrap();
                assert!(!r.matches.is_empty());
            }
        }
    }
}
