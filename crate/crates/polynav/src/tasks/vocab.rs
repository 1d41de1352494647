//! Fixed instruction vocabulary (32 tokens, well under the 64 budget).

/// Names for up to 21 object categories.
pub const CATEGORY_NAMES: [&str; 21] = [
    "chair", "table", "bed", "sofa", "plant", "sink", "washer", "lamp", "tv", "desk", "shelf",
    "fridge", "stove", "toilet", "bathtub", "mirror", "cabinet", "counter", "cushion", "dresser",
    "fireplace",
];

const FUNCTION_WORDS: [&str; 11] = [
    "go", "straight", "through", "the", "turn", "left", "right", "stop", "at", "room", "corridor",
];

pub const VOCAB_SIZE: usize = FUNCTION_WORDS.len() + CATEGORY_NAMES.len();

/// Token table: function words first, then category names.
#[derive(Debug, Clone, Copy, Default)]
pub struct Vocabulary;

pub fn token_id(word: &str) -> u16 {
    if let Some(i) = FUNCTION_WORDS.iter().position(|w| *w == word) {
        return i as u16;
    }
    if let Some(i) = CATEGORY_NAMES.iter().position(|w| *w == word) {
        return (FUNCTION_WORDS.len() + i) as u16;
    }
    panic!("word {word:?} is not in the vocabulary");
}

pub fn token_name(id: u16) -> &'static str {
    let id = id as usize;
    if id < FUNCTION_WORDS.len() {
        FUNCTION_WORDS[id]
    } else {
        CATEGORY_NAMES[id - FUNCTION_WORDS.len()]
    }
}

/// Token id of a category name.
pub fn category_token(category: usize) -> u16 {
    (FUNCTION_WORDS.len() + category) as u16
}
