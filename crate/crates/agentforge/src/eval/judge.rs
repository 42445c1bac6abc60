//! LLM-as-judge scoring for answers that have no mechanical gold standard.
//! The judge is asked for a `SCORE: <0-100>` verdict line; one corrective
//! re-prompt is allowed before the verdict counts as unparseable.

use super::EvalError;
use crate::agent::render_prompt;
use crate::llm::{GenerationRequest, LlmEnv};
use crate::ValueMap;

pub const DEFAULT_JUDGE_PROMPT: &str = include_str!("../data/judge_prompt.txt");

const RETRY_REMINDER: &str = "Your previous reply did not contain a valid verdict line. \
Reply again, and end with exactly one line of the form:\nSCORE: <integer from 0 to 100>";

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeVerdict {
    /// Normalized to [0, 1] from the 0-100 verdict line.
    pub score: f64,
    /// The judge's full reply, kept for feedback loops.
    pub rationale: String,
    pub criteria: String,
}

/// Asks `profile` to grade `answer` for `question` against `criteria`.
pub fn llm_judge(
    env: &LlmEnv,
    profile: &str,
    question: &str,
    answer: &str,
    criteria: &str,
) -> Result<JudgeVerdict, EvalError> {
    let mut values = ValueMap::new();
    values.insert("question".into(), question.into());
    values.insert("answer".into(), answer.into());
    values.insert("criteria".into(), criteria.into());
    let prompt = render_prompt(DEFAULT_JUDGE_PROMPT, &values)?;

    let first = env.generate(profile, &GenerationRequest::user(&prompt))?;
    if let Some(score) = parse_score_line(&first.content) {
        return Ok(JudgeVerdict { score, rationale: first.content, criteria: criteria.into() });
    }

    log::warn!(target: "agentforge::eval", "judge verdict unparseable, re-prompting once");
    let retry_prompt = format!("{prompt}\n\n{RETRY_REMINDER}");
    let second = env.generate(profile, &GenerationRequest::user(&retry_prompt))?;
    match parse_score_line(&second.content) {
        Some(score) => {
            Ok(JudgeVerdict { score, rationale: second.content, criteria: criteria.into() })
        }
        None => Err(EvalError::UnparseableVerdict),
    }
}

/// Finds the first line of the form `SCORE: <n>` with n in 0..=100 and
/// returns n/100. Trailing text after the integer is tolerated; out-of-range
/// or missing integers are not.
pub fn parse_score_line(reply: &str) -> Option<f64> {
    for line in reply.lines() {
        let Some(rest) = line.trim_start().strip_prefix("SCORE:") else { continue };
        let rest = rest.trim_start();
        let digits: String = rest.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() {
            continue;
        }
        let Ok(value) = digits.parse::<u32>() else { continue };
        if value <= 100 {
            return Some(f64::from(value) / 100.0);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockRule, MockScript};

    #[test]
    fn parses_verdict_lines() {
        assert_eq!(parse_score_line("reasoning...\nSCORE: 85"), Some(0.85));
        assert_eq!(parse_score_line("  SCORE: 0"), Some(0.0));
        assert_eq!(parse_score_line("SCORE: 100"), Some(1.0));
        assert_eq!(parse_score_line("SCORE: 85/100 overall"), Some(0.85));
        assert_eq!(parse_score_line("SCORE: 150"), None);
        assert_eq!(parse_score_line("score: 85"), None);
        assert_eq!(parse_score_line("the final SCORE: 85"), None);
        assert_eq!(parse_score_line("SCORE: eighty"), None);
        assert_eq!(parse_score_line("no verdict at all"), None);
    }

    #[test]
    fn judge_returns_normalized_score() {
        let env = LlmEnv::mock_only(MockScript::new(vec![MockRule::substring(
            "impartial reviewer",
            "The answer covers both criteria.\nSCORE: 85",
        )]));
        let verdict = llm_judge(&env, "mock", "What is 2+2?", "4", "must be arithmetic").unwrap();
        assert!((verdict.score - 0.85).abs() < 1e-12);
        assert!(verdict.rationale.contains("covers both"));
        assert_eq!(verdict.criteria, "must be arithmetic");
    }

    #[test]
    fn reprompts_once_then_parses() {
        let env = LlmEnv::mock_only(MockScript::new(vec![
            MockRule::substring("did not contain a valid verdict", "Apologies.\nSCORE: 40"),
            MockRule::substring("impartial reviewer", "I think it is fine."),
        ]));
        let verdict = llm_judge(&env, "mock", "q", "a", "c").unwrap();
        assert!((verdict.score - 0.40).abs() < 1e-12);
    }

    #[test]
    fn persistent_garbage_is_unparseable() {
        let env = LlmEnv::mock_only(MockScript::new(vec![MockRule::substring(
            "impartial reviewer",
            "no numbers here",
        )]));
        match llm_judge(&env, "mock", "q", "a", "c") {
            Err(EvalError::UnparseableVerdict) => {}
            other => panic!("expected unparseable verdict, got {other:?}"),
        }
    }
}
