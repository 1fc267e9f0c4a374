//! Seeded synthetic corpora in the MultiWOZ-like JSONL source format.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::SlotValues;
use crate::error::{Error, Result};

/// Token sequence ending every user turn of the separable corpus.
pub const CLOSING_MARKER: &str = "over to you";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthTurn {
    pub speaker: String,
    pub text: String,
}

/// One dialogue record as ingested with the `multiwoz-like` format.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthRecord {
    pub id: String,
    pub turns: Vec<SynthTurn>,
    pub slot_values: SlotValues,
}

impl SynthRecord {
    fn push(&mut self, speaker: &str, text: String) {
        self.turns.push(SynthTurn {
            speaker: speaker.to_string(),
            text,
        });
    }
}

pub fn write_records(path: &Path, records: &[SynthRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn pick<'a, R: Rng>(rng: &mut R, items: &[&'a str]) -> &'a str {
    items.choose(rng).expect("non-empty word list")
}

const USER_NOUNS: &[&str] = &["lodging", "meal", "ride", "ticket", "tour", "show"];
const AGENT_NOUNS: &[&str] = &[
    "hotel",
    "restaurant",
    "taxi",
    "train",
    "attraction",
    "theatre",
];
const USER_ADJ: &[&str] = &["cheap", "pricey", "quiet", "lively", "small", "big"];
const USER_AREAS: &[&str] = &["uptown", "downtown", "riverside", "hillside"];
const AGENT_AREAS: &[&str] = &["north", "south", "east", "west"];
const USER_PARTY: &[&str] = &["two", "three", "four", "five"];
const USER_TIMES: &[&str] = &["noon", "dusk", "dawn", "midnight"];
const AGENT_CODES: &[&str] = &["xk1", "zq7", "mv3", "tb9", "rw5", "jd2"];

/// Dialogues whose user turns are one to three messages, the last always
/// ending with [`CLOSING_MARKER`]. Agent and user draw content words from
/// disjoint vocabularies, and the agent's reply names the requested item
/// and area, so both the turn boundary and each role's style are learnable.
pub fn separable(dialogues: usize, seed: u64) -> Vec<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dialogues)
        .map(|i| {
            let mut r = SynthRecord {
                id: format!("sep-{i:05}"),
                turns: Vec::new(),
                slot_values: SlotValues::new(),
            };
            let requests = rng.gen_range(1..=3);
            for _ in 0..requests {
                let topic = rng.gen_range(0..USER_NOUNS.len());
                let area = rng.gen_range(0..USER_AREAS.len());
                let mut messages = vec![format!(
                    "i need a {} {}",
                    pick(&mut rng, USER_ADJ),
                    USER_NOUNS[topic]
                )];
                let mut details = vec![
                    format!("somewhere {} please", USER_AREAS[area]),
                    format!("for {} of us", pick(&mut rng, USER_PARTY)),
                    format!("around {} would work", pick(&mut rng, USER_TIMES)),
                ];
                details.shuffle(&mut rng);
                messages.extend(details.into_iter().take(rng.gen_range(0..=2)));
                close_user_turn(&mut r, messages);
                r.push(
                    "agent",
                    format!(
                        "certainly booking your {} in the {} reference {}",
                        AGENT_NOUNS[topic],
                        AGENT_AREAS[area],
                        pick(&mut rng, AGENT_CODES)
                    ),
                );
            }
            let mut last = vec!["that covers everything".to_string()];
            if rng.gen_bool(0.5) {
                last.insert(0, "many thanks".to_string());
            }
            close_user_turn(&mut r, last);
            r.push("agent", "goodbye and enjoy your day".to_string());
            r
        })
        .collect()
}

fn close_user_turn(r: &mut SynthRecord, mut messages: Vec<String>) {
    if let Some(last) = messages.last_mut() {
        last.push(' ');
        last.push_str(CLOSING_MARKER);
    }
    for m in messages {
        r.push("user", m);
    }
}

struct Domain {
    name: &'static str,
    entities: &'static [&'static str],
    informs: &'static [&'static str],
    asks: &'static [&'static str],
    offers: &'static [&'static str],
}

const DOMAINS: &[Domain] = &[
    Domain {
        name: "hotel",
        entities: &[
            "acorn guest house",
            "el shaddai",
            "the lensfield hotel",
            "avalon",
            "hamilton lodge",
        ],
        informs: &[
            "i am looking for a {price} hotel in the {area} .",
            "i need a place to stay in the {area} .",
            "it should include free parking .",
            "it needs to have free wifi .",
            "i would like a {stars} star guesthouse .",
        ],
        asks: &[
            "can you book it for {people} people for {days} nights ?",
            "what is the phone number ?",
            "could you give me the postcode ?",
            "does it have internet ?",
        ],
        offers: &[
            "{name} is a {price} hotel in the {area} . shall i book it ?",
            "i have booked {name} . your reference number is {ref} .",
            "the phone number for {name} is {phone} .",
            "there are several options . do you have a price range in mind ?",
        ],
    },
    Domain {
        name: "restaurant",
        entities: &[
            "pizza hut city centre",
            "the golden curry",
            "nandos",
            "curry garden",
            "the varsity restaurant",
        ],
        informs: &[
            "i want to find a {price} restaurant in the {area} .",
            "i would like some {food} food .",
            "i am looking for a place to dine in the {area} .",
            "it should serve {food} food .",
        ],
        asks: &[
            "please book a table for {people} at {time} .",
            "what is the address ?",
            "can i get the phone number please ?",
            "is there anything else in that area ?",
        ],
        offers: &[
            "{name} serves {food} food in the {area} . would you like a table ?",
            "your table at {name} is booked . the reference number is {ref} .",
            "the phone number is {phone} .",
            "what type of food would you like ?",
        ],
    },
    Domain {
        name: "train",
        entities: &["tr1234", "tr5678", "tr9012", "tr3456", "tr7890"],
        informs: &[
            "i need a train to {place} .",
            "i will be leaving on {day} .",
            "i want to arrive by {time} .",
            "i am departing from {place} .",
        ],
        asks: &[
            "can you book {people} tickets ?",
            "what is the travel time ?",
            "how much does it cost ?",
            "when does it leave ?",
        ],
        offers: &[
            "{name} leaves at {time} and arrives at {place} . shall i book it ?",
            "i booked {people} seats on {name} . reference {ref} .",
            "the ticket costs {price} pounds .",
            "where will you be departing from ?",
        ],
    },
    Domain {
        name: "taxi",
        entities: &[
            "a blue ford",
            "a white toyota",
            "a black skoda",
            "a red volvo",
            "a grey audi",
        ],
        informs: &[
            "i need a taxi to {place} .",
            "i want to leave after {time} .",
            "please pick me up at {name2} .",
        ],
        asks: &[
            "what is the contact number ?",
            "what kind of car is it ?",
            "can you book that for me ?",
        ],
        offers: &[
            "i have booked {name} for you . the contact number is {phone} .",
            "what time would you like to leave ?",
            "where would you like to be picked up ?",
        ],
    },
    Domain {
        name: "attraction",
        entities: &[
            "kings college",
            "the fitzwilliam museum",
            "cineworld",
            "the place",
            "jesus green",
        ],
        informs: &[
            "i am looking for something to do in the {area} .",
            "i would like to visit a museum .",
            "are there any colleges in the {area} ?",
        ],
        asks: &[
            "what is the entrance fee ?",
            "can i have the postcode ?",
            "what is the address ?",
        ],
        offers: &[
            "{name} is in the {area} . entrance is free .",
            "the postcode is {postcode} .",
            "there are many attractions . what type are you interested in ?",
        ],
    },
];

const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const AREAS: &[&str] = &["north", "south", "east", "west", "centre"];
const FOODS: &[&str] = &["italian", "indian", "chinese", "british", "french"];
const PLACES: &[&str] = &[
    "cambridge",
    "london kings cross",
    "ely",
    "norwich",
    "stansted airport",
];
const DAYS: &[&str] = &["monday", "tuesday", "friday", "sunday"];
const TIMES: &[&str] = &["09:15", "11:30", "13:45", "17:00", "19:30"];
const NUMBERS: &[&str] = &["1", "2", "3", "4", "5", "6"];
const CLOSINGS: &[&str] = &[
    "thank you , that is all i need .",
    "great , thanks for your help .",
    "no , that will be all . goodbye .",
];
const FAREWELLS: &[&str] = &[
    "you are welcome . have a great day !",
    "thank you for using our service . goodbye .",
    "enjoy your stay in cambridge !",
];

/// Task-oriented dialogues in the style of MultiWOZ: each user turn is one
/// message of one to three sentences, agents mention entity names, phone
/// numbers and reference codes, and those values are listed per dialogue
/// in `slot_values` so preprocessing can mask them.
pub fn multiwoz_like(dialogues: usize, seed: u64) -> Vec<SynthRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dialogues)
        .map(|i| {
            let mut r = SynthRecord {
                id: format!("mwz-{i:05}"),
                turns: Vec::new(),
                slot_values: SlotValues::new(),
            };
            let n_domains = rng.gen_range(1..=2);
            let mut order: Vec<usize> = (0..DOMAINS.len()).collect();
            order.shuffle(&mut rng);
            for &d in &order[..n_domains] {
                let dom = &DOMAINS[d];
                let name = pick(&mut rng, dom.entities).to_string();
                let phone = format!("01223 {:06}", rng.gen_range(100_000..1_000_000));
                let reference = format!("{:08x}", rng.gen::<u32>());
                let postcode = format!(
                    "cb{} {}{}",
                    rng.gen_range(1..=5),
                    rng.gen_range(1..=9),
                    pick(&mut rng, &["ab", "dp", "ns", "rh"])
                );
                for (slot, value) in [
                    ("name", &name),
                    ("phone", &phone),
                    ("ref", &reference),
                    ("postcode", &postcode),
                ] {
                    r.slot_values
                        .entry(format!("{}_{slot}", dom.name))
                        .or_default()
                        .push(value.clone());
                }
                let fill = |template: &str, rng: &mut ChaCha8Rng| -> String {
                    let mut s = template.to_string();
                    for (key, value) in [
                        ("{name}", name.clone()),
                        ("{phone}", phone.clone()),
                        ("{ref}", reference.clone()),
                        ("{postcode}", postcode.clone()),
                        ("{name2}", pick(rng, DOMAINS[0].entities).to_string()),
                        ("{price}", pick(rng, PRICES).to_string()),
                        ("{area}", pick(rng, AREAS).to_string()),
                        ("{food}", pick(rng, FOODS).to_string()),
                        ("{place}", pick(rng, PLACES).to_string()),
                        ("{day}", pick(rng, DAYS).to_string()),
                        ("{time}", pick(rng, TIMES).to_string()),
                        ("{people}", pick(rng, NUMBERS).to_string()),
                        ("{days}", pick(rng, NUMBERS).to_string()),
                        ("{stars}", pick(rng, NUMBERS).to_string()),
                    ] {
                        s = s.replace(key, &value);
                    }
                    s
                };
                let exchanges = rng.gen_range(1..=3);
                for k in 0..exchanges {
                    let sentences = rng.gen_range(1..=3);
                    let mut parts = Vec::with_capacity(sentences);
                    for j in 0..sentences {
                        let last = j + 1 == sentences;
                        let pool = if k == 0 && j == 0 {
                            dom.informs
                        } else if last && rng.gen_bool(0.8) {
                            dom.asks
                        } else {
                            dom.informs
                        };
                        let t = pick(&mut rng, pool);
                        parts.push(fill(t, &mut rng));
                    }
                    r.push("user", parts.join(" "));
                    let t = pick(&mut rng, dom.offers);
                    r.push("agent", fill(t, &mut rng));
                }
            }
            r.push("user", pick(&mut rng, CLOSINGS).to_string());
            r.push("agent", pick(&mut rng, FAREWELLS).to_string());
            r
        })
        .collect()
}
