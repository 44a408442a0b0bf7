//! Template-based open-domain threads used to produce the bundled chit-chat
//! fixture. Output is raw text, so it passes through the same filter and
//! annotation path as any other thread source.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RawChitDialogue;

const TOPICS: &[&str] = &[
    "money", "happiness", "music", "movies", "dogs", "cats", "coffee", "pizza", "books",
    "games", "weather", "football", "summer", "winter", "cooking", "science", "history",
    "art", "friends", "family", "school", "sleep", "gardening", "running", "chess",
    "photography", "tea", "chocolate", "guitar", "poetry", "swimming", "mountains",
    "beaches", "space", "robots", "birds", "painting", "dancing", "cheese", "rain",
];

const OPENERS: &[&str] = &[
    "does {a} buy {b} ?",
    "what do you think about {a} ?",
    "i really love {a} .",
    "is {a} better than {b} ?",
    "have you ever tried {a} ?",
    "why do people like {a} so much ?",
    "do you prefer {a} or {b} ?",
    "tell me something about {a} .",
];

const REPLIES: &[&str] = &[
    "depends on how much {a} you spend on it .",
    "i think {a} is great but {b} is better .",
    "yes , {a} is one of my favorite things .",
    "not really , i prefer {b} .",
    "it is hard to say , {a} means different things to different people .",
    "i have never thought about {a} that way .",
    "honestly {b} sounds more fun to me .",
    "{a} always makes me think of {b} .",
];

const FOLLOW_UPS: &[&str] = &[
    "that is interesting , why {b} ?",
    "so what about {b} then ?",
    "do you think {b} is overrated ?",
    "how did you get into {b} ?",
];

fn fill(template: &str, a: &str, b: &str) -> String {
    template.replace("{a}", a).replace("{b}", b)
}

/// `count` threads of four or six utterances alternating prompt and reply.
pub fn synthetic_threads(count: usize, seed: u64) -> Vec<RawChitDialogue> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut pick = TOPICS.choose_multiple(&mut rng, 2);
            let a = *pick.next().expect("two topics");
            let b = *pick.next().expect("two topics");
            let mut utterances = vec![
                fill(OPENERS.choose(&mut rng).unwrap(), a, b),
                fill(REPLIES.choose(&mut rng).unwrap(), a, b),
                fill(FOLLOW_UPS.choose(&mut rng).unwrap(), a, b),
                fill(REPLIES.choose(&mut rng).unwrap(), b, a),
            ];
            if rng.gen_bool(0.5) {
                let c = *TOPICS.choose(&mut rng).unwrap();
                utterances.push(fill(OPENERS.choose(&mut rng).unwrap(), c, b));
                utterances.push(fill(REPLIES.choose(&mut rng).unwrap(), c, b));
            }
            RawChitDialogue { utterances }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{filter_chit, CorpusConfig};

    #[test]
    fn threads_are_clean_and_deterministic() {
        let a = synthetic_threads(20, 5);
        assert_eq!(a, synthetic_threads(20, 5));
        let cfg = CorpusConfig::default();
        assert!(a.iter().all(|d| filter_chit(d, &cfg).is_ok()));
    }
}
