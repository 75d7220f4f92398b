use super::vocab::{Vocab, SEP};
use super::{QuestionType, Sample};

/// Quick-answer instruction prepended when QAP is on.
pub const QUICK_ANSWER_PROMPT: &str = "Answer the following question concisely within three reasoning steps";

/// Boxed-answer instruction for each question format. Each starts with a
/// space so it reads naturally after the quick-answer prefix.
pub fn template_text(qtype: QuestionType) -> &'static str {
    match qtype {
        QuestionType::SingleChoice => " Place the correct option number in \\boxed{}. ",
        QuestionType::MultiChoice => " Place the correct option numbers in \\boxed{}. ",
        QuestionType::TrueFalse => " Output \\boxed{correct} or \\boxed{error}. ",
        QuestionType::Open => " Put the final answer in \\boxed{}. ",
    }
}

pub fn qap_tokens() -> Vec<u32> {
    Vocab::new().tokenize(QUICK_ANSWER_PROMPT)
}

/// `[quick-answer prefix] ++ template ++ question ++ SEP`.
pub fn render_prompt(sample: &Sample, with_qap: bool) -> Vec<u32> {
    let vocab = Vocab::new();
    let mut out = if with_qap { qap_tokens() } else { Vec::new() };
    out.extend(vocab.tokenize(template_text(sample.question_type)));
    out.extend_from_slice(&sample.prompt_tokens);
    out.push(SEP);
    out
}
