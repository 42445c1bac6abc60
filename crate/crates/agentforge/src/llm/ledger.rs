//! Usage accounting: per-model call counts, token totals, and cost under a
//! configurable price table.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

/// Per-token prices for one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenRates {
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriceTable {
    rates: BTreeMap<String, TokenRates>,
}

impl PriceTable {
    pub fn empty() -> Self {
        PriceTable::default()
    }

    /// A few common hosted models; anything absent is billed at zero.
    pub fn with_defaults() -> Self {
        let mut table = PriceTable::default();
        table.set("gpt-4o-mini", 0.15e-6, 0.60e-6);
        table.set("gpt-4o", 2.50e-6, 10.00e-6);
        table.set("gpt-4.1-mini", 0.40e-6, 1.60e-6);
        table
    }

    pub fn set(&mut self, model: &str, input: f64, output: f64) {
        self.rates.insert(model.to_string(), TokenRates { input, output });
    }

    pub fn get(&self, model: &str) -> Option<TokenRates> {
        self.rates.get(model).copied()
    }

    /// Cost under this table; unknown models are billed at zero.
    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        let rates = self.get(model).unwrap_or(TokenRates { input: 0.0, output: 0.0 });
        prompt_tokens as f64 * rates.input + completion_tokens as f64 * rates.output
    }
}

/// Cost of one exchange. Unknown models price at 0.0 and log a warning.
pub fn estimate_cost(
    model: &str,
    prompt_tokens: u64,
    completion_tokens: u64,
    table: &PriceTable,
) -> f64 {
    if table.get(model).is_none() {
        log::warn!("no price entry for model '{model}'; billing at zero");
        return 0.0;
    }
    table.cost(model, prompt_tokens, completion_tokens)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Provider attempts, so retries against a failing endpoint are visible.
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

/// Thread-safe accumulator of generate-call usage, keyed by model.
#[derive(Debug, Default)]
pub struct UsageLedger {
    inner: Mutex<BTreeMap<String, LedgerEntry>>,
}

impl UsageLedger {
    pub fn record_attempt(&self, model: &str) {
        let mut inner = self.inner.lock().unwrap();
        inner.entry(model.to_string()).or_default().calls += 1;
    }

    pub fn record_usage(&self, model: &str, prompt_tokens: u64, completion_tokens: u64, cost: f64) {
        let mut inner = self.inner.lock().unwrap();
        let entry = inner.entry(model.to_string()).or_default();
        entry.prompt_tokens += prompt_tokens;
        entry.completion_tokens += completion_tokens;
        entry.cost += cost;
    }

    pub fn summary(&self) -> BTreeMap<String, LedgerEntry> {
        self.inner.lock().unwrap().clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_summary() {
        assert!(UsageLedger::default().summary().is_empty());
    }

    #[test]
    fn cost_arithmetic() {
        let mut table = PriceTable::empty();
        table.set("m", 1e-6, 2e-6);
        assert_eq!(estimate_cost("m", 1000, 1000, &table), 0.003);
        assert_eq!(estimate_cost("m", 0, 0, &table), 0.0);
    }

    #[test]
    fn unknown_model_costs_zero() {
        assert_eq!(estimate_cost("mystery", 5000, 5000, &PriceTable::empty()), 0.0);
    }

    #[test]
    fn ledger_totals_match_recorded_responses() {
        let ledger = UsageLedger::default();
        let costs = [0.5, 0.25, 0.125];
        for (i, c) in costs.iter().enumerate() {
            ledger.record_attempt("m");
            ledger.record_usage("m", 10 * (i as u64 + 1), 5, *c);
        }
        let entry = ledger.summary()["m"];
        assert_eq!(entry.calls, 3);
        assert_eq!(entry.prompt_tokens, 60);
        assert_eq!(entry.completion_tokens, 15);
        assert!((entry.cost - costs.iter().sum::<f64>()).abs() < 1e-12);
    }
}
