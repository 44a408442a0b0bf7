//! Closed-class word list for the content-word extractor.

use std::collections::HashSet;
use std::sync::OnceLock;

const CLOSED_CLASS: &str = "
a an the this that these those some any each every no all both either neither
another such what which whose whatever whichever
i me my mine myself you your yours yourself yourselves he him his himself she
her hers herself it its itself we us our ours ourselves they them their theirs
themselves one ones someone somebody something anyone anybody anything everyone
everybody everything nobody nothing who whom
about above across after against along among around as at before behind below
beneath beside besides between beyond by despite down during except for from in
inside into like near of off on onto out outside over past since through
throughout till to toward towards under underneath until up upon with within
without via per
and but or nor so yet because although though if unless while whereas whether
than then once when where why how
am is are was were be been being do does did doing done have has had having
will would shall should can could may might must ought
get gets got getting go goes went going gone make makes made making take takes
took taking come comes came coming see sees saw seen seeing know knows knew
known think thinks thought thinking say says said saying tell tells told want
wants wanted need needs needed like likes liked love loves loved hate hates
hated buy buys bought buying spend spends spent spending try tries tried trying
give gives gave given find finds found feel feels felt seem seems seemed keep
keeps kept let lets put puts mean means meant use uses used work works worked
look looks looked play plays played watch watches watched prefer prefers
preferred enjoy enjoys enjoyed agree agrees agreed guess talk talks talked
depends depend depended wonder wonders ask asks asked happen happens happened
start started stop stopped help helps helped read reads learn learned believe
believes
not never always often sometimes usually really very too also just only even
still already again ever quite rather pretty so much many more most less least
few lot lots little bit kind sort way ways well yes yeah no nope ok okay maybe
perhaps probably actually honestly basically definitely certainly sure here
there now today tomorrow yesterday soon later lately recently
good great bad better best worse worst nice fine cool fun funny interesting
boring favorite favourite hard easy big small new old same different other
own right wrong true real whole
hi hello hey thanks thank please sorry oh ah um uh wow lol haha
's 't 're 've 'll 'd 'm n't don't doesn't didn't can't won't isn't aren't
i'm you're it's that's there's what's let's
";

const PUNCTUATION: &[char] = &[
    '.', ',', '?', '!', ';', ':', '"', '\'', '(', ')', '-', '…', '/', '*', '&',
];

fn closed_class() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| CLOSED_CLASS.split_whitespace().collect())
}

pub fn is_closed_class(word: &str) -> bool {
    closed_class().contains(word)
}

/// Tokens made only of punctuation or digits carry no noun content.
pub fn is_punctuation(word: &str) -> bool {
    !word.is_empty() && word.chars().all(|c| PUNCTUATION.contains(&c) || c.is_ascii_punctuation())
}

pub fn is_content_word(word: &str) -> bool {
    !word.is_empty()
        && !is_punctuation(word)
        && !is_closed_class(word)
        && !word.chars().all(|c| c.is_ascii_digit())
        && !crate::schema::is_reserved_token(word)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies() {
        for w in ["does", "buy", "the", "?", "you", "is"] {
            assert!(!is_content_word(w), "{w}");
        }
        for w in ["money", "happiness", "pizza"] {
            assert!(is_content_word(w), "{w}");
        }
        assert!(!is_content_word("[chit]"));
        assert!(!is_content_word("42"));
    }
}
