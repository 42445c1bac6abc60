//! Deterministic scripted mock provider.
//!
//! A script is an ordered rule list matched against the rendered prompt;
//! the first matching rule wins. Prompts no rule matches get a synthetic
//! fallback that is a pure function of (fallback_seed, prompt), so repeated
//! calls are byte-identical and whole optimizer runs replay exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    /// Substring to find in the prompt, or a regular expression when `regex` is set.
    pub pattern: String,
    pub response: String,
    #[serde(default)]
    pub regex: bool,
    /// Simulated provider latency, useful for exercising parallel schedules.
    #[serde(default)]
    pub delay_ms: u64,
}

impl MockRule {
    pub fn substring(pattern: &str, response: &str) -> Self {
        MockRule { pattern: pattern.into(), response: response.into(), regex: false, delay_ms: 0 }
    }

    pub fn regex(pattern: &str, response: &str) -> Self {
        MockRule { pattern: pattern.into(), response: response.into(), regex: true, delay_ms: 0 }
    }

    pub fn with_delay(mut self, ms: u64) -> Self {
        self.delay_ms = ms;
        self
    }

    fn matches(&self, prompt: &str) -> bool {
        if self.regex {
            regex::Regex::new(&self.pattern).map(|re| re.is_match(prompt)).unwrap_or(false)
        } else {
            prompt.contains(&self.pattern)
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub fallback_seed: u64,
}

impl MockScript {
    pub fn new(rules: Vec<MockRule>) -> Self {
        MockScript { rules, fallback_seed: 0 }
    }

    /// Loads a script from a YAML or JSON file (by extension). Rule regexes
    /// are compiled eagerly so malformed patterns fail at load time.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read mock script {}: {e}", path.display()))?;
        let script: MockScript = match path.extension().and_then(|e| e.to_str()) {
            Some("yaml") | Some("yml") => {
                serde_yaml::from_str(&text).map_err(|e| format!("mock script parse error: {e}"))?
            }
            _ => serde_json::from_str(&text).map_err(|e| format!("mock script parse error: {e}"))?,
        };
        for rule in &script.rules {
            if rule.regex {
                regex::Regex::new(&rule.pattern)
                    .map_err(|e| format!("bad regex pattern '{}': {e}", rule.pattern))?;
            }
        }
        Ok(script)
    }

    /// First-match-wins response plus the rule's simulated delay.
    pub fn respond(&self, prompt: &str) -> (String, u64) {
        for rule in &self.rules {
            if rule.matches(prompt) {
                return (rule.response.clone(), rule.delay_ms);
            }
        }
        (fallback_response(self.fallback_seed, prompt), 0)
    }
}

fn fallback_response(seed: u64, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(prompt.as_bytes());
    let digest = hasher.finalize();
    let hex: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("MOCK({hex})")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_match_wins() {
        let script = MockScript::new(vec![
            MockRule::substring("plan", "FIRST"),
            MockRule::substring("plan the work", "SECOND"),
        ]);
        assert_eq!(script.respond("please plan the work").0, "FIRST");
    }

    #[test]
    fn regex_rules_match() {
        let script = MockScript::new(vec![MockRule::regex(r"^Solve: \d+$", "ok")]);
        assert_eq!(script.respond("Solve: 42").0, "ok");
        assert!(script.respond("Solve: forty-two").0.starts_with("MOCK("));
    }

    #[test]
    fn fallback_depends_on_seed_and_prompt() {
        let a = MockScript { rules: vec![], fallback_seed: 1 };
        let b = MockScript { rules: vec![], fallback_seed: 2 };
        assert_ne!(a.respond("x").0, b.respond("x").0);
        assert_ne!(a.respond("x").0, a.respond("y").0);
        assert_eq!(a.respond("x").0, a.respond("x").0);
    }

    #[test]
    fn fallback_shape() {
        let script = MockScript::default();
        let (content, delay) = script.respond("anything");
        assert_eq!(content.len(), "MOCK(".len() + 8 + 1);
        assert_eq!(delay, 0);
    }
}
