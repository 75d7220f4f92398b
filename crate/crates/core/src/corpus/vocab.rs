//! Fixed character-level vocabulary.

/// Padding id.
pub const PAD: u32 = 0;
/// Beginning-of-sequence id.
pub const BOS: u32 = 1;
/// End-of-sequence id; every answer ends with it.
pub const EOS: u32 = 2;
/// Separator between the rendered prompt and the answer.
pub const SEP: u32 = 3;
/// Out-of-vocabulary characters map here.
pub const UNK: u32 = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<sep>", "<unk>"];
const PUNCTUATION: &str = ".,;:?=+(){}\\";

/// Ordered token table: five reserved ids followed by one id per character.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    lookup: [Option<u32>; 128],
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocab {
    pub fn new() -> Self {
        let mut chars = vec![' '];
        chars.extend('0'..='9');
        chars.extend('a'..='z');
        chars.extend('A'..='Z');
        chars.extend(PUNCTUATION.chars());
        let mut lookup = [None; 128];
        for (i, &c) in chars.iter().enumerate() {
            lookup[c as usize] = Some((SPECIALS.len() + i) as u32);
        }
        Self { chars, lookup }
    }

    pub fn size(&self) -> usize {
        SPECIALS.len() + self.chars.len()
    }

    /// Display form of every token, in id order.
    pub fn tokens(&self) -> Vec<String> {
        SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(self.chars.iter().map(|c| c.to_string()))
            .collect()
    }

    pub fn id_of(&self, c: char) -> u32 {
        if c.is_ascii() {
            self.lookup[c as usize].unwrap_or(UNK)
        } else {
            UNK
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        text.chars().map(|c| self.id_of(c)).collect()
    }

    /// Inverse of [`Vocab::tokenize`] on in-vocabulary text. Reserved ids
    /// other than UNK render as nothing; UNK renders as U+FFFD.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                UNK => Some(char::REPLACEMENT_CHARACTER),
                id if (id as usize) < SPECIALS.len() => None,
                id => self.chars.get(id as usize - SPECIALS.len()).copied(),
            })
            .collect()
    }

    pub fn contains(&self, id: u32) -> bool {
        (id as usize) < self.size()
    }
}
