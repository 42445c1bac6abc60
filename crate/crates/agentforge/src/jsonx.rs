//! Extraction of JSON fragments from free-form model output.
//!
//! Models frequently wrap structured replies in prose or code fences; these
//! scanners pull out the first balanced top-level object or array so parsing
//! stays deterministic.

/// Returns the first balanced top-level JSON object in `text`, if any.
pub(crate) fn first_json_object(text: &str) -> Option<&str> {
    first_balanced(text, b'{', b'}')
}

/// Returns the first balanced top-level JSON array in `text`, if any.
pub(crate) fn first_json_array(text: &str) -> Option<&str> {
    first_balanced(text, b'[', b']')
}

fn first_balanced(text: &str, open: u8, close: u8) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == open)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            _ if b == open => depth += 1,
            _ if b == close => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn object_with_surrounding_prose() {
        let text = "Sure! Here you go: {\"a\": 1, \"b\": {\"c\": 2}} hope it helps";
        assert_eq!(first_json_object(text), Some("{\"a\": 1, \"b\": {\"c\": 2}}"));
    }

    #[test]
    fn braces_inside_strings_do_not_count() {
        let text = "{\"a\": \"}{\", \"b\": \"\\\"{\"}";
        assert_eq!(first_json_object(text), Some(text));
    }

    #[test]
    fn array_extraction() {
        assert_eq!(first_json_array("reply: [1, [2, 3]] done"), Some("[1, [2, 3]]"));
        assert_eq!(first_json_array("no array here"), None);
    }

    #[test]
    fn unbalanced_returns_none() {
        assert_eq!(first_json_object("{\"a\": 1"), None);
    }
}
