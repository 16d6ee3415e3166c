//! Token annotations: the sidecar format and a rule-based fallback tagger.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CoarsePos {
    Noun,
    Adj,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityTag {
    Location,
    Date,
    Nationality,
    PoliticalGroup,
    Organization,
    Religion,
    OtherNe,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedToken {
    pub surface: String,
    pub lemma: String,
    #[serde(alias = "coarse_pos")]
    pub pos: CoarsePos,
    #[serde(alias = "entity_tag", default)]
    pub ne_tag: Option<EntityTag>,
}

impl AnnotatedToken {
    pub fn new(surface: &str, lemma: &str, pos: CoarsePos, ne_tag: Option<EntityTag>) -> Self {
        Self {
            surface: surface.to_string(),
            lemma: lemma.to_string(),
            pos,
            ne_tag,
        }
    }
}

/// One line of `annotations.jsonl`: the token stream of an article section.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub doc_id: String,
    pub section_title: String,
    pub tokens: Vec<AnnotatedToken>,
}

fn word_set(words: &'static str) -> BTreeSet<&'static str> {
    words.split_whitespace().collect()
}

macro_rules! lexicon {
    ($name:ident, $words:expr) => {
        fn $name() -> &'static BTreeSet<&'static str> {
            static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
            SET.get_or_init(|| word_set($words))
        }
    };
}

lexicon!(
    stopwords,
    "a an the and or but nor of in on at to for from by with within without into onto over under \
     about above after before during between among against through throughout until upon via per \
     is are was were be been being am has have had having do does did done will would shall should \
     can could may might must not no yes this that these those there here it its it's he she they \
     them their theirs his her hers him we us our you your i me my mine who whom whose which what \
     when where why how all any both each few more most other some such only own same so than too \
     very also as if then else while because although though since unless however thus therefore \
     one two three four five six seven eight nine ten first second third many much several"
);

lexicon!(
    months,
    "january february march april may june july august september october november december \
     jan feb mar apr jun jul aug sep sept oct nov dec"
);

lexicon!(
    religions,
    "islam islamic muslim muslims christianity christian christians catholic catholicism protestant \
     orthodox judaism jewish jews hinduism hindu buddhism buddhist sikhism sikh sunni shia shiite \
     jihad jihadist jihadists salafi salafist"
);

lexicon!(
    nationalities,
    "american british english french german russian soviet chinese japanese italian spanish \
     portuguese dutch belgian polish ukrainian turkish ottoman persian iranian iraqi syrian afghan \
     pakistani indian egyptian libyan algerian moroccan tunisian malian nigerian chadian sudanese \
     ethiopian somali kenyan congolese angolan israeli palestinian lebanese jordanian saudi yemeni \
     korean vietnamese greek serbian croatian bosnian albanian austrian hungarian romanian \
     bulgarian swedish norwegian danish finnish mexican cuban colombian argentine brazilian \
     chilean peruvian canadian australian tuareg arab arabs kurdish berber"
);

lexicon!(
    locations,
    "africa asia europe america americas oceania sahara sahel middle east west north south \
     mali france germany russia china japan italy spain portugal britain england kingdom \
     poland ukraine turkey iran iraq syria afghanistan pakistan india egypt libya algeria morocco \
     tunisia nigeria niger chad sudan ethiopia somalia kenya congo angola israel palestine lebanon \
     jordan yemen korea vietnam greece serbia croatia bosnia albania austria hungary romania \
     bulgaria sweden norway denmark finland mexico cuba colombia argentina brazil chile peru \
     canada australia bamako timbuktu gao kidal azawad paris london moscow washington berlin"
);

lexicon!(
    organization_words,
    "army navy force forces corps brigade division regiment battalion ministry company \
     council committee union league alliance organization organisation"
);

lexicon!(
    political_words,
    "party movement front government republic rebels regime"
);

const ADJ_SUFFIXES: &[&str] = &[
    "al", "ic", "ive", "ous", "ful", "less", "able", "ible", "ary", "ish", "ant", "ent",
];
const OTHER_SUFFIXES: &[&str] = &["ed", "ing", "ly", "ize", "ise"];
const NOUN_EXCEPTIONS: &[&str] = &[
    "government",
    "agreement",
    "movement",
    "president",
    "resident",
    "student",
    "agent",
    "element",
    "independent",
    "militant",
    "militants",
    "combatant",
    "combatants",
    "inhabitant",
    "inhabitants",
    "general",
    "generals",
    "rival",
    "rivals",
    "official",
    "officials",
    "arsenal",
    "capital",
    "ceasefire",
    "offensive",
    "civilians",
    "civilian",
    "revolution",
    "nothing",
    "king",
    "thing",
    "wing",
    "ring",
    "building",
    "fighting",
    "killing",
    "uprising",
    "bombing",
    "shooting",
    "meeting",
    "training",
];

/// Plural-stripping lemmatizer for nouns.
pub fn lemmatize_noun(word: &str) -> String {
    let w = word.to_lowercase();
    let n = w.len();
    if n > 4 && w.ends_with("ies") {
        return format!("{}y", &w[..n - 3]);
    }
    if n > 4 && (w.ends_with("sses") || w.ends_with("ches") || w.ends_with("shes") || w.ends_with("xes")) {
        return w[..n - 2].to_string();
    }
    if n > 3 && w.ends_with('s') && !w.ends_with("ss") && !w.ends_with("us") && !w.ends_with("is") {
        return w[..n - 1].to_string();
    }
    w
}

fn coarse_pos(lower: &str) -> CoarsePos {
    if stopwords().contains(lower) || lower.len() < 3 || lower.chars().any(|c| c.is_ascii_digit()) {
        return CoarsePos::Other;
    }
    if NOUN_EXCEPTIONS.contains(&lower) {
        return CoarsePos::Noun;
    }
    let stem = lemmatize_noun(lower);
    if ADJ_SUFFIXES
        .iter()
        .any(|s| lower.ends_with(s) && lower.len() > s.len() + 2)
    {
        return CoarsePos::Adj;
    }
    if OTHER_SUFFIXES
        .iter()
        .any(|s| stem.ends_with(s) && stem.len() > s.len() + 2)
    {
        return CoarsePos::Other;
    }
    CoarsePos::Noun
}

fn entity_tag(surface: &str, lower: &str, sentence_start: bool) -> Option<EntityTag> {
    let singular = lemmatize_noun(lower);
    if religions().contains(lower) || religions().contains(singular.as_str()) {
        return Some(EntityTag::Religion);
    }
    if lower.chars().all(|c| c.is_ascii_digit()) || months().contains(lower) {
        return Some(EntityTag::Date);
    }
    if nationalities().contains(lower) || nationalities().contains(singular.as_str()) {
        return Some(EntityTag::Nationality);
    }
    if locations().contains(lower) {
        return Some(EntityTag::Location);
    }
    let capitalized = surface.chars().next().is_some_and(char::is_uppercase);
    if capitalized && !sentence_start && !stopwords().contains(lower) {
        if political_words().contains(singular.as_str()) {
            return Some(EntityTag::PoliticalGroup);
        }
        if organization_words().contains(singular.as_str()) {
            return Some(EntityTag::Organization);
        }
        return Some(EntityTag::OtherNe);
    }
    None
}

/// Rule-based annotation of plain text: suffix-rule POS and lemmas, and a
/// gazetteer NER in which mid-sentence capitalized words are named
/// entities.
pub fn annotate_text(text: &str) -> Vec<AnnotatedToken> {
    let mut out = Vec::new();
    let mut sentence_start = true;
    let mut word_start: Option<usize> = None;
    let push_word = |word: &str, sentence_start: bool, out: &mut Vec<AnnotatedToken>| {
        let lower = word.to_lowercase();
        let tag = entity_tag(word, &lower, sentence_start);
        let pos = if tag == Some(EntityTag::Religion) {
            CoarsePos::Noun
        } else {
            coarse_pos(&lower)
        };
        let lemma = if pos == CoarsePos::Noun {
            lemmatize_noun(&lower)
        } else {
            lower.clone()
        };
        out.push(AnnotatedToken {
            surface: word.to_string(),
            lemma,
            pos,
            ne_tag: tag,
        });
    };
    for (i, c) in text.char_indices() {
        if c.is_alphanumeric() {
            word_start.get_or_insert(i);
            continue;
        }
        if let Some(s) = word_start.take() {
            push_word(&text[s..i], sentence_start, &mut out);
            sentence_start = false;
        }
        if matches!(c, '.' | '!' | '?' | '\n') {
            sentence_start = true;
        }
    }
    if let Some(s) = word_start {
        push_word(&text[s..], sentence_start, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find<'a>(tokens: &'a [AnnotatedToken], surface: &str) -> &'a AnnotatedToken {
        tokens.iter().find(|t| t.surface == surface).unwrap()
    }

    #[test]
    fn tags_context_words() {
        let t = annotate_text("In January 2012, French soldiers entered Mali and the Islamic militants fled.");
        assert_eq!(find(&t, "January").ne_tag, Some(EntityTag::Date));
        assert_eq!(find(&t, "2012").ne_tag, Some(EntityTag::Date));
        assert_eq!(find(&t, "French").ne_tag, Some(EntityTag::Nationality));
        assert_eq!(find(&t, "Mali").ne_tag, Some(EntityTag::Location));
        assert_eq!(find(&t, "Islamic").ne_tag, Some(EntityTag::Religion));
        let soldiers = find(&t, "soldiers");
        assert_eq!(
            (soldiers.lemma.as_str(), soldiers.pos, soldiers.ne_tag),
            ("soldier", CoarsePos::Noun, None)
        );
        assert_eq!(find(&t, "entered").pos, CoarsePos::Other);
        assert_eq!(find(&t, "militants").lemma, "militant");
    }

    #[test]
    fn lemmatizer_rules() {
        assert_eq!(lemmatize_noun("casualties"), "casualty");
        assert_eq!(lemmatize_noun("attacks"), "attack");
        assert_eq!(lemmatize_noun("churches"), "church");
        assert_eq!(lemmatize_noun("crisis"), "crisis");
        assert_eq!(lemmatize_noun("Towns"), "town");
    }

    #[test]
    fn sidecar_field_aliases() {
        let a: AnnotatedToken =
            serde_json::from_str(r#"{"surface":"Islam","lemma":"islam","pos":"NOUN","ne_tag":"RELIGION"}"#).unwrap();
        let b: AnnotatedToken =
            serde_json::from_str(r#"{"surface":"Islam","lemma":"islam","coarse_pos":"NOUN","entity_tag":"RELIGION"}"#)
                .unwrap();
        assert_eq!(a, b);
        let c: AnnotatedToken = serde_json::from_str(r#"{"surface":"x","lemma":"x","pos":"OTHER"}"#).unwrap();
        assert_eq!(c.ne_tag, None);
    }
}
