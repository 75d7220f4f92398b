use crate::corpus::{Sample, Vocab};
use crate::lm::Generation;

/// Content of the last `\boxed{...}` span with a closing brace. A list of
/// option letters (`B,A` or `BA`) is normalized to sorted, comma-free form.
pub fn parse_boxed_answer(text: &str) -> Option<String> {
    const OPEN: &str = "\\boxed{";
    let mut found = None;
    let mut rest = text;
    while let Some(pos) = rest.find(OPEN) {
        let after = &rest[pos + OPEN.len()..];
        if let Some(end) = after.find('}') {
            found = Some(after[..end].trim().to_string());
        }
        rest = after;
    }
    found.map(|s| normalize(&s))
}

fn normalize(content: &str) -> String {
    let letters: Vec<&str> = content.split(',').map(str::trim).collect();
    let is_letter_list = letters.len() > 1 && letters.iter().all(|l| l.len() == 1 && l.chars().all(|c| c.is_ascii_uppercase()));
    let is_packed = content.len() > 1 && content.len() <= 26 && content.chars().all(|c| c.is_ascii_uppercase());
    if is_letter_list || is_packed {
        let mut chars: Vec<char> = content.chars().filter(char::is_ascii_uppercase).collect();
        chars.sort_unstable();
        chars.dedup();
        chars.into_iter().collect()
    } else {
        content.to_string()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardOutcome {
    pub sample_id: u64,
    pub generation: Generation,
    pub parsed_answer: Option<String>,
    pub reward: f64,
}

/// Gold answer of a sample in normalized form.
pub fn gold_answer(sample: &Sample) -> Option<String> {
    parse_boxed_answer(&Vocab::new().detokenize(sample.answer_body()))
}

/// 1 when the boxed answer of the generation equals the gold answer, else 0.
pub fn rule_reward(sample: &Sample, generation: &Generation) -> RewardOutcome {
    let text = Vocab::new().detokenize(&generation.output_tokens);
    let parsed_answer = parse_boxed_answer(&text);
    let reward = match (&parsed_answer, gold_answer(sample)) {
        (Some(got), Some(gold)) if *got == gold => 1.0,
        _ => 0.0,
    };
    RewardOutcome {
        sample_id: sample.id,
        generation: generation.clone(),
        parsed_answer,
        reward,
    }
}
