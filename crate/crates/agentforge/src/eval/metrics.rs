//! Task metrics: QA token F1 and exact match over a shared normalization,
//! boxed-answer math equality, and the answer-extraction helpers ensembles
//! and reports reuse. All functions here are pure.

use regex::Regex;
use std::collections::BTreeMap;
use std::sync::OnceLock;

/// QA answer normalization: lowercase, remove ASCII punctuation, drop the
/// articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped: String =
        lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|word| !matches!(*word, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_bag(text: &str) -> BTreeMap<&str, usize> {
    let mut bag = BTreeMap::new();
    for token in text.split_whitespace() {
        *bag.entry(token).or_insert(0) += 1;
    }
    bag
}

/// Token-bag F1 over normalized texts. Both sides empty after normalization
/// is a perfect match; exactly one empty side scores zero.
pub fn f1_score(prediction: &str, gold: &str) -> f64 {
    let prediction = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    match (prediction.is_empty(), gold.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let pred_bag = token_bag(&prediction);
    let gold_bag = token_bag(&gold);
    let pred_len: usize = pred_bag.values().sum();
    let gold_len: usize = gold_bag.values().sum();
    let same: usize = pred_bag
        .iter()
        .map(|(token, count)| count.min(gold_bag.get(token).unwrap_or(&0)))
        .sum();
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / pred_len as f64;
    let recall = same as f64 / gold_len as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn exact_match(prediction: &str, gold: &str) -> f64 {
    if normalize_answer(prediction) == normalize_answer(gold) {
        1.0
    } else {
        0.0
    }
}

/// Contents of the last `\boxed{...}` group, with balanced-brace matching.
/// Returns `None` when there is no such group or its braces never balance.
pub fn extract_boxed(text: &str) -> Option<&str> {
    const MARKER: &str = "\\boxed{";
    let start = text.rfind(MARKER)? + MARKER.len();
    let mut depth = 1usize;
    for (offset, ch) in text[start..].char_indices() {
        match ch {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset]);
                }
            }
            _ => {}
        }
    }
    None
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("valid regex"))
}

/// The last numeric literal in the text, if any.
pub fn last_number(text: &str) -> Option<&str> {
    number_regex().find_iter(text).last().map(|m| m.as_str())
}

// Digit-group commas and currency signs would split "$1,000" into two
// matches, so strip them before scanning.
fn last_number_clean(text: &str) -> Option<String> {
    let cleaned: String = text.chars().filter(|c| !matches!(c, '$' | ',')).collect();
    last_number(&cleaned).map(str::to_string)
}

/// The comparable answer a solution text stands for: last boxed group,
/// falling back to the last number, falling back to the normalized text.
pub fn comparable_answer(text: &str) -> String {
    if let Some(boxed) = extract_boxed(text) {
        return canonical_number_text(boxed);
    }
    if let Some(number) = last_number_clean(text) {
        return canonical_number_text(&number);
    }
    normalize_answer(text)
}

/// Strips currency/grouping decoration so "$1,000" and "1000" compare equal.
fn canonical_number_text(text: &str) -> String {
    text.trim()
        .chars()
        .filter(|c| !matches!(c, '$' | ',' | ' '))
        .collect()
}

fn parse_rational(text: &str) -> Option<f64> {
    let text = canonical_number_text(text);
    if let Some((numerator, denominator)) = text.split_once('/') {
        let n: f64 = numerator.trim().parse().ok()?;
        let d: f64 = denominator.trim().parse().ok()?;
        if d == 0.0 {
            return None;
        }
        return Some(n / d);
    }
    text.trim().parse().ok()
}

/// Math solve-rate comparison. The prediction's answer is its last boxed
/// group, else its last number, else the whole text; the gold's answer is
/// its boxed group when present, else the gold text itself. Equality is
/// decorated-string equality or rational difference below 1e-6.
pub fn math_equal(prediction: &str, gold: &str) -> f64 {
    let predicted = match extract_boxed(prediction) {
        Some(boxed) => boxed.to_string(),
        None => match last_number_clean(prediction) {
            Some(number) => number,
            None => prediction.trim().to_string(),
        },
    };
    let expected = match extract_boxed(gold) {
        Some(boxed) => boxed.to_string(),
        None => gold.trim().to_string(),
    };

    if canonical_number_text(&predicted) == canonical_number_text(&expected)
        && !canonical_number_text(&predicted).is_empty()
    {
        return 1.0;
    }
    if let (Some(p), Some(g)) = (parse_rational(&predicted), parse_rational(&expected)) {
        if (p - g).abs() < 1e-6 {
            return 1.0;
        }
    }
    0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalization_rules_compose() {
        assert_eq!(normalize_answer("The Eiffel Tower!"), "eiffel tower");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("a b  c"), "b c");
        assert_eq!(normalize_answer("An APPLE, a day."), "apple day");
    }

    #[test]
    fn f1_known_values() {
        assert_eq!(f1_score("same answer", "same answer"), 1.0);
        assert_eq!(f1_score("alpha beta", "gamma delta"), 0.0);
        // pred {obama}, gold {barack, obama}: P=1, R=1/2, F1=2/3.
        assert!((f1_score("Obama", "Barack Obama") - 2.0 / 3.0).abs() < 1e-4);
        // Bag semantics: pred {yes:2}, gold {yes:1}: P=1/2, R=1, F1=2/3.
        assert!((f1_score("yes yes", "yes") - 2.0 / 3.0).abs() < 1e-9);
        // Articles drop before token comparison.
        // pred {quick, brown, fox}, gold {quick, fox, jumps}: 2 shared, F1=2/3.
        assert!((f1_score("the quick brown fox", "quick fox jumps") - 2.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn f1_empty_conventions() {
        assert_eq!(f1_score("", ""), 1.0);
        assert_eq!(f1_score("the a an", "!!!"), 1.0);
        assert_eq!(f1_score("answer", ""), 0.0);
        assert_eq!(f1_score("", "answer"), 0.0);
    }

    #[test]
    fn exact_match_uses_normalization() {
        assert_eq!(exact_match("same", "same"), 1.0);
        assert_eq!(exact_match("The Answer!", "answer"), 1.0);
        assert_eq!(exact_match("other", "answer"), 0.0);
    }

    #[test]
    fn boxed_extraction_matches_written_solutions() {
        assert_eq!(extract_boxed(r"so $2 \cdot 4^2 = \boxed{88}$."), Some("88"));
        assert_eq!(extract_boxed(r"the value of b is $\boxed{75}$."), Some("75"));
        assert_eq!(extract_boxed(r"therefore $422_9 = \boxed{385_9}$."), Some("385_9"));
        assert_eq!(extract_boxed(r"\boxed{\frac{1}{2}}"), Some(r"\frac{1}{2}"));
        assert_eq!(extract_boxed(r"\boxed{1} then \boxed{2}"), Some("2"));
        assert_eq!(extract_boxed("no box here"), None);
        assert_eq!(extract_boxed(r"\boxed{unbalanced"), None);
    }

    #[test]
    fn math_equality_cases() {
        assert_eq!(math_equal(r"the answer is \boxed{88}", "88"), 1.0);
        assert_eq!(math_equal("0.5", "1/2"), 1.0);
        assert_eq!(math_equal("89", "88"), 0.0);
        assert_eq!(math_equal("so the total is $1,000", "1000"), 1.0);
        assert_eq!(math_equal("first 3 then the answer 42.", "42"), 1.0);
        assert_eq!(math_equal("7", r"it equals \boxed{7}"), 1.0);
        assert_eq!(math_equal(r"\boxed{385_9}", "385_9"), 1.0);
        assert_eq!(math_equal("nothing numeric", "42"), 0.0);
    }

    #[test]
    fn comparable_answer_prefers_boxed_then_number_then_text() {
        assert_eq!(comparable_answer(r"steps... \boxed{12}"), "12");
        assert_eq!(comparable_answer("the count is 12."), "12");
        assert_eq!(comparable_answer("The Tower!"), "tower");
        assert_eq!(comparable_answer(r"maybe 3 but \boxed{4}"), "4");
    }

    #[test]
    fn last_number_scans_whole_text() {
        assert_eq!(last_number("12 then 34.5 end"), Some("34.5"));
        assert_eq!(last_number("x = -3"), Some("-3"));
        assert_eq!(last_number("none"), None);
    }

    proptest! {
        #[test]
        fn f1_is_symmetric(a in ".{0,40}", b in ".{0,40}") {
            prop_assert!((f1_score(&a, &b) - f1_score(&b, &a)).abs() < 1e-12);
        }

        #[test]
        fn f1_bounded(a in ".{0,40}", b in ".{0,40}") {
            let score = f1_score(&a, &b);
            prop_assert!((0.0..=1.0).contains(&score));
        }

        #[test]
        fn boxed_rewrap_is_fixed_point(text in ".{0,60}") {
            if let Some(inner) = extract_boxed(&text) {
                let rewrapped = format!("\\boxed{{{inner}}}");
                prop_assert_eq!(extract_boxed(&rewrapped), Some(inner));
            }
        }

        #[test]
        fn exact_match_is_reflexive(a in ".{0,40}") {
            prop_assert_eq!(exact_match(&a, &a), 1.0);
        }
    }
}
