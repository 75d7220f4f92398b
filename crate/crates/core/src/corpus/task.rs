//! Synthetic question-answer generators with rule-verifiable answers.
//!
//! Every answer is a short chain of reasoning steps, each closed by `;`,
//! followed by `so \boxed{...}.`. The difficulty level controls the number
//! of steps, so answer length and hardness grow together.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Vocab, EOS};
use super::{CorpusError, Dataset, QuestionType, Sample, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ModularArithmeticChain,
    KeyValueRecall,
    StringTransform,
}

/// Relative weights of the question formats in a generated set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionMix {
    pub single_choice: u32,
    pub multi_choice: u32,
    pub true_false: u32,
    pub open: u32,
}

impl Default for QuestionMix {
    fn default() -> Self {
        Self {
            single_choice: 1,
            multi_choice: 1,
            true_false: 1,
            open: 1,
        }
    }
}

impl QuestionMix {
    pub fn only(qtype: QuestionType) -> Self {
        let mut mix = Self {
            single_choice: 0,
            multi_choice: 0,
            true_false: 0,
            open: 0,
        };
        match qtype {
            QuestionType::SingleChoice => mix.single_choice = 1,
            QuestionType::MultiChoice => mix.multi_choice = 1,
            QuestionType::TrueFalse => mix.true_false = 1,
            QuestionType::Open => mix.open = 1,
        }
        mix
    }

    fn weights(&self) -> [(QuestionType, u32); 4] {
        [
            (QuestionType::SingleChoice, self.single_choice),
            (QuestionType::MultiChoice, self.multi_choice),
            (QuestionType::TrueFalse, self.true_false),
            (QuestionType::Open, self.open),
        ]
    }

    fn total(&self) -> u32 {
        self.weights().iter().map(|(_, w)| w).sum()
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> QuestionType {
        let mut r = rng.gen_range(0..self.total());
        for (q, w) in self.weights() {
            if r < w {
                return q;
            }
            r -= w;
        }
        unreachable!("weights sum to total")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_kind: TaskKind,
    pub num_samples: usize,
    /// Inclusive range of difficulty levels, drawn uniformly per sample.
    pub difficulty_range: [u32; 2],
    #[serde(default)]
    pub answer_format: QuestionMix,
    pub seed: u64,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.num_samples == 0 {
            return Err(CorpusError::InvalidSpec("num_samples must be at least 1".into()));
        }
        let [lo, hi] = self.difficulty_range;
        if lo == 0 || lo > hi {
            return Err(CorpusError::InvalidSpec(format!(
                "difficulty range [{lo}, {hi}] is empty or starts below 1"
            )));
        }
        if self.answer_format.total() == 0 {
            return Err(CorpusError::InvalidSpec("answer_format weights are all zero".into()));
        }
        Ok(())
    }
}

/// A generated question before tokenization.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaText {
    pub question: String,
    pub answer: String,
}

const LETTERS: [char; 4] = ['A', 'B', 'C', 'D'];

pub fn generate_synthetic_dataset(spec: &TaskSpec, split: Split) -> Result<Dataset, CorpusError> {
    spec.validate()?;
    let vocab = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let [lo, hi] = spec.difficulty_range;
    let samples = (0..spec.num_samples)
        .map(|i| {
            let difficulty = rng.gen_range(lo..=hi);
            let qtype = spec.answer_format.draw(&mut rng);
            let qa = generate_one(spec.task_kind, qtype, difficulty, &mut rng);
            let mut answer_tokens = vocab.tokenize(&qa.answer);
            answer_tokens.push(EOS);
            Sample {
                id: i as u64,
                prompt_tokens: vocab.tokenize(&qa.question),
                answer_tokens,
                question_type: qtype,
                difficulty_tag: difficulty,
            }
        })
        .collect();
    Ok(Dataset::new(samples, split))
}

pub fn generate_one(kind: TaskKind, qtype: QuestionType, difficulty: u32, rng: &mut ChaCha8Rng) -> QaText {
    let Problem { stem, steps, result, distractors } = match kind {
        TaskKind::ModularArithmeticChain => arithmetic(difficulty, rng),
        TaskKind::KeyValueRecall => key_value(difficulty, rng),
        TaskKind::StringTransform => reverse_string(difficulty, rng),
    };
    let (question, boxed) = match qtype {
        QuestionType::Open => (format!("{stem}?"), result.clone()),
        QuestionType::TrueFalse => {
            let truthful = rng.gen_bool(0.5);
            let claim = if truthful { result.clone() } else { distractors[0].clone() };
            let verdict = if truthful { "correct" } else { "error" };
            (format!("{stem} is {claim}?"), verdict.to_string())
        }
        QuestionType::SingleChoice => {
            let correct = rng.gen_range(0..4);
            let mut wrong = distractors.iter();
            let options: Vec<String> = (0..4)
                .map(|i| if i == correct { result.clone() } else { wrong.next().expect("3 distractors").clone() })
                .collect();
            (format!("{stem}? {}", render_options(&options)), LETTERS[correct].to_string())
        }
        QuestionType::MultiChoice => {
            let k = rng.gen_range(2..=3);
            let mut slots = [0usize, 1, 2, 3];
            slots.shuffle(rng);
            let mut correct: Vec<usize> = slots[..k].to_vec();
            correct.sort_unstable();
            let mut wrong = distractors.iter();
            let options: Vec<String> = (0..4)
                .map(|i| if correct.contains(&i) { result.clone() } else { wrong.next().expect("3 distractors").clone() })
                .collect();
            let letters: Vec<String> = correct.iter().map(|&i| LETTERS[i].to_string()).collect();
            (format!("{stem}? {}", render_options(&options)), letters.join(","))
        }
    };
    let answer = format!("{}so \\boxed{{{boxed}}}.", steps.concat());
    QaText { question, answer }
}

fn render_options(options: &[String]) -> String {
    options
        .iter()
        .zip(LETTERS)
        .map(|(o, l)| format!("{l}.{o}"))
        .collect::<Vec<_>>()
        .join(" ")
}

struct Problem {
    stem: String,
    /// Reasoning steps, each ending in `"; "`.
    steps: Vec<String>,
    result: String,
    /// Three distinct wrong answers.
    distractors: Vec<String>,
}

fn digit_distractors(correct: u32, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut pool: Vec<u32> = (0..10).filter(|&d| d != correct).collect();
    pool.shuffle(rng);
    pool[..3].iter().map(|d| d.to_string()).collect()
}

/// `difficulty` additions modulo 10.
fn arithmetic(difficulty: u32, rng: &mut ChaCha8Rng) -> Problem {
    let operands: Vec<u32> = (0..=difficulty).map(|_| rng.gen_range(0..10)).collect();
    let terms: Vec<String> = operands.iter().map(u32::to_string).collect();
    let mut acc = operands[0];
    let mut steps = Vec::new();
    for &b in &operands[1..] {
        let s = acc + b;
        steps.push(format!("{acc}+{b}={s}, mod 10 is {}; ", s % 10));
        acc = s % 10;
    }
    Problem {
        stem: format!("{} mod 10", terms.join("+")),
        steps,
        result: acc.to_string(),
        distractors: digit_distractors(acc, rng),
    }
}

/// `difficulty + 1` key-value pairs; the answer restates them and reads one back.
fn key_value(difficulty: u32, rng: &mut ChaCha8Rng) -> Problem {
    let mut keys: Vec<char> = ('a'..='z').collect();
    keys.shuffle(rng);
    let n = (difficulty as usize + 1).min(26);
    let pairs: Vec<(char, u32)> = keys[..n].iter().map(|&k| (k, rng.gen_range(0..10))).collect();
    let (qk, qv) = pairs[rng.gen_range(0..n)];
    let listing: Vec<String> = pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
    let mut steps: Vec<String> = listing.iter().map(|p| format!("{p}; ")).collect();
    steps.push(format!("{qk} is {qv}; "));
    Problem {
        stem: format!("{}; value of {qk}", listing.join(",")),
        steps,
        result: qv.to_string(),
        distractors: digit_distractors(qv, rng),
    }
}

/// Reverse a string of `difficulty + 2` letters, one letter per step.
fn reverse_string(difficulty: u32, rng: &mut ChaCha8Rng) -> Problem {
    let len = difficulty as usize + 2;
    let word: Vec<char> = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
    let reversed: String = word.iter().rev().collect();
    let original: String = word.iter().collect();
    let steps = word.iter().rev().map(|c| format!("{c}; ")).collect();
    let mut distractors = Vec::new();
    let mut candidates = vec![original.clone()];
    let mut rotated = word.clone();
    rotated.rotate_left(1);
    candidates.push(rotated.iter().collect());
    while distractors.len() < 3 {
        let c = candidates.pop().unwrap_or_else(|| {
            let mut w = word.clone();
            let i = rng.gen_range(0..len);
            w[i] = rng.gen_range(b'a'..=b'z') as char;
            w.iter().rev().collect()
        });
        if c != reversed && !distractors.contains(&c) {
            distractors.push(c);
        }
    }
    Problem {
        stem: format!("reverse {original}"),
        steps,
        result: reversed,
        distractors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: TaskKind, n: usize, lo: u32, hi: u32, seed: u64) -> TaskSpec {
        TaskSpec {
            task_kind: kind,
            num_samples: n,
            difficulty_range: [lo, hi],
            answer_format: QuestionMix::default(),
            seed,
        }
    }

    #[test]
    fn minimal_difficulty_is_one_addition() {
        let mut s = spec(TaskKind::ModularArithmeticChain, 4, 1, 1, 7);
        s.answer_format = QuestionMix::only(QuestionType::Open);
        let d = generate_synthetic_dataset(&s, Split::Train).unwrap();
        let v = Vocab::new();
        assert_eq!(d.len(), 4);
        for sample in d.samples() {
            let q = v.detokenize(&sample.prompt_tokens);
            assert_eq!(q.matches('+').count(), 1, "{q}");
            assert!(q.ends_with(" mod 10?"));
            assert_eq!(sample.difficulty_tag, 1);
        }
    }

    #[test]
    fn rejects_empty_specs() {
        assert!(generate_synthetic_dataset(&spec(TaskKind::KeyValueRecall, 0, 1, 2, 0), Split::Train).is_err());
        assert!(generate_synthetic_dataset(&spec(TaskKind::KeyValueRecall, 3, 3, 2, 0), Split::Train).is_err());
        assert!(generate_synthetic_dataset(&spec(TaskKind::KeyValueRecall, 3, 0, 2, 0), Split::Train).is_err());
    }

    #[test]
    fn arithmetic_answer_is_correct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let qa = generate_one(TaskKind::ModularArithmeticChain, QuestionType::Open, 3, &mut rng);
            let expr = qa.question.trim_end_matches(" mod 10?");
            let total: u32 = expr.split('+').map(|t| t.parse::<u32>().unwrap()).sum();
            assert!(qa.answer.ends_with(&format!("\\boxed{{{}}}.", total % 10)), "{qa:?}");
        }
    }

    #[test]
    fn answer_lengths_grow_with_difficulty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [TaskKind::ModularArithmeticChain, TaskKind::KeyValueRecall, TaskKind::StringTransform] {
            let short = generate_one(kind, QuestionType::Open, 1, &mut rng).answer.len();
            let long = generate_one(kind, QuestionType::Open, 5, &mut rng).answer.len();
            assert!(long > short, "{kind:?}");
        }
    }

    #[test]
    fn string_distractors_are_wrong() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = reverse_string(1, &mut rng);
            assert_eq!(p.distractors.len(), 3);
            assert!(!p.distractors.contains(&p.result));
        }
    }
}
