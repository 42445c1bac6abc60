//! Prompt template rendering.
//!
//! Templates use single-brace `{name}` slots; `{{` and `}}` produce literal
//! braces. Only identifier-shaped contents are treated as slots, so math or
//! JSON fragments inside a template (say `\boxed{12}` or `{}`) pass through
//! untouched without escaping.

use serde_json::Value;

use crate::{value_to_text, ValueMap};

use super::AgentError;

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Substitutes `{name}` slots from `values`. A slot whose value is missing or
/// null fails with [`AgentError::MissingInput`]; values without a slot are
/// ignored.
pub fn render_prompt(template: &str, values: &ValueMap) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(pos) = rest.find(['{', '}']) {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("{{") {
            out.push('{');
            rest = after;
            continue;
        }
        if let Some(after) = tail.strip_prefix("}}") {
            out.push('}');
            rest = after;
            continue;
        }
        if tail.starts_with('}') {
            out.push('}');
            rest = &tail[1..];
            continue;
        }
        // A lone '{': a slot only if an identifier directly precedes '}'.
        match tail[1..].find(['{', '}']) {
            Some(end) if tail.as_bytes()[1 + end] == b'}' && is_identifier(&tail[1..1 + end]) => {
                let name = &tail[1..1 + end];
                match values.get(name) {
                    Some(Value::Null) | None => {
                        return Err(AgentError::MissingInput(name.to_string()))
                    }
                    Some(value) => out.push_str(&value_to_text(value)),
                }
                rest = &tail[2 + end..];
            }
            _ => {
                out.push('{');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Identifier slots referenced by a template, in order of first appearance,
/// deduplicated. Escaped braces and non-identifier brace groups don't count.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut found = Vec::new();
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        let tail = &rest[pos..];
        if tail.starts_with("{{") {
            rest = &tail[2..];
            continue;
        }
        match tail[1..].find(['{', '}']) {
            Some(end) if tail.as_bytes()[1 + end] == b'}' && is_identifier(&tail[1..1 + end]) => {
                let name = &tail[1..1 + end];
                if !found.iter().any(|f| f == name) {
                    found.push(name.to_string());
                }
                rest = &tail[2 + end..];
            }
            _ => rest = &tail[1..],
        }
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn vals(pairs: &[(&str, Value)]) -> ValueMap {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn substitutes_named_slot() {
        let out = render_prompt("Problem: {problem}", &vals(&[("problem", json!("sort a list"))]));
        assert_eq!(out.unwrap(), "Problem: sort a list");
    }

    #[test]
    fn no_placeholders_is_identity() {
        let out = render_prompt("Print 'hello world'", &ValueMap::new()).unwrap();
        assert_eq!(out, "Print 'hello world'");
    }

    #[test]
    fn repeated_slot_substitutes_every_occurrence() {
        let out = render_prompt("{a}{a}", &vals(&[("a", json!("x"))])).unwrap();
        assert_eq!(out, "xx");
    }

    #[test]
    fn double_braces_escape() {
        let out = render_prompt("literal {{a}} and {b}", &vals(&[("b", json!(1))])).unwrap();
        assert_eq!(out, "literal {a} and 1");
    }

    #[test]
    fn non_identifier_groups_pass_through() {
        let values = vals(&[("x", json!("v"))]);
        assert_eq!(render_prompt(r"\boxed{12}", &values).unwrap(), r"\boxed{12}");
        assert_eq!(render_prompt("empty {} pair", &values).unwrap(), "empty {} pair");
        assert_eq!(render_prompt("{not a slot}", &values).unwrap(), "{not a slot}");
        assert_eq!(render_prompt("dangling { brace", &values).unwrap(), "dangling { brace");
        assert_eq!(render_prompt("closing } brace", &values).unwrap(), "closing } brace");
    }

    #[test]
    fn missing_or_null_slot_errors() {
        let err = render_prompt("{who}", &ValueMap::new()).unwrap_err();
        assert!(matches!(err, AgentError::MissingInput(name) if name == "who"));
        let err = render_prompt("{who}", &vals(&[("who", Value::Null)])).unwrap_err();
        assert!(matches!(err, AgentError::MissingInput(name) if name == "who"));
    }

    #[test]
    fn non_string_values_render_as_compact_json() {
        let out = render_prompt(
            "n={n} list={l}",
            &vals(&[("n", json!(3.5)), ("l", json!([1, "two"]))]),
        )
        .unwrap();
        assert_eq!(out, r#"n=3.5 list=[1,"two"]"#);
    }

    #[test]
    fn placeholder_extraction_dedups_in_order() {
        let names = placeholders("{b} {{skip}} {a} {b} \\boxed{7} {a_1}");
        assert_eq!(names, vec!["b", "a", "a_1"]);
    }

    #[test]
    fn adjacent_slot_after_non_identifier_group() {
        let out = render_prompt("{}{x}", &vals(&[("x", json!("ok"))])).unwrap();
        assert_eq!(out, "{}ok");
    }
}
