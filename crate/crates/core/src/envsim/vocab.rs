use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::EnvError;

pub const PAD: &str = "<pad>";

const FUNCTION_WORDS: [&str; 11] = ["this", "is", "a", "pick", "up", "put", "the", "on", "in", "bed", "box"];

/// Permanent names of the household categories, one per category.
pub const HOUSEHOLD_NAMES: [&str; 40] = [
    "cup", "plate", "chair", "table", "lamp", "book", "clock", "vase", "spoon", "fork", "knife", "bowl", "bottle",
    "pillow", "sofa", "shelf", "drawer", "mirror", "towel", "basket", "candle", "kettle", "mug", "pan", "pot",
    "teapot", "radio", "phone", "remote", "guitar", "piano", "toy", "ball", "hat", "shoe", "sock", "bag",
    "umbrella", "key", "plant",
];

/// Single-token nonsense words handed out by fast-mapping episodes.
pub const NONSENSE_WORDS: [&str; 20] = [
    "dax", "blicket", "wug", "fep", "toma", "zav", "gazzer", "kiki", "bouba", "modi", "tupa", "riff", "zorb",
    "pilk", "sneg", "jarp", "mell", "dofa", "kern", "vop",
];

/// Fixed token list. Index 0 is always the padding token.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self, EnvError> {
        if tokens.first().map(String::as_str) != Some(PAD) {
            return Err(EnvError::Vocab(format!("first token must be {PAD}")));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(EnvError::Vocab(format!("invalid token {t:?} on line {}", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(EnvError::Vocab(format!("duplicate token {t}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Padding, template words, household names, then nonsense words.
    pub fn standard() -> Self {
        let tokens = std::iter::once(PAD)
            .chain(FUNCTION_WORDS)
            .chain(HOUSEHOLD_NAMES)
            .chain(NONSENSE_WORDS)
            .map(str::to_string)
            .collect();
        Self::new(tokens).expect("standard vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn pad(&self) -> usize {
        0
    }

    pub fn id(&self, word: &str) -> Result<usize, EnvError> {
        self.index.get(word).copied().ok_or_else(|| EnvError::UnknownWord(word.to_string()))
    }

    pub fn word(&self, id: usize) -> Result<&str, EnvError> {
        self.tokens.get(id).map(String::as_str).ok_or_else(|| EnvError::UnknownWord(format!("#{id}")))
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<usize>, EnvError> {
        words.iter().map(|w| self.id(w)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<&str>, EnvError> {
        ids.iter().map(|&i| self.word(i)).collect()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; the line number is the index.
    pub fn write_to(&self, mut out: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self, EnvError> {
        let tokens = input
            .lines()
            .map(|l| l.map(|s| s.trim_end().to_string()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| EnvError::Vocab(e.to_string()))?;
        Self::new(tokens)
    }
}

/// Which fixture a put instruction targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fixture {
    Bed,
    Box,
}

impl Fixture {
    pub fn word(self) -> &'static str {
        match self {
            Fixture::Bed => "bed",
            Fixture::Box => "box",
        }
    }
}

/// Events that put words on the language channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LanguageEvent<'a> {
    Naming(&'a str),
    Lift(&'a str),
    Put(&'a str, Fixture),
    Silence,
}

/// Renders an event as a token sequence.
pub fn emit_language(vocab: &Vocab, event: LanguageEvent<'_>) -> Result<Vec<usize>, EnvError> {
    match event {
        LanguageEvent::Naming(w) => vocab.encode(&["this", "is", "a", w]),
        LanguageEvent::Lift(w) => vocab.encode(&["pick", "up", "a", w]),
        LanguageEvent::Put(w, Fixture::Bed) => vocab.encode(&["put", "the", w, "on", "the", "bed"]),
        LanguageEvent::Put(w, Fixture::Box) => vocab.encode(&["put", "the", w, "in", "the", "box"]),
        LanguageEvent::Silence => Ok(Vec::new()),
    }
}
