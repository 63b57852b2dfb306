use std::collections::BTreeMap;

/// Instrumented multiply-accumulate counter, keyed by op label.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MacCounter {
    enabled: bool,
    total: u64,
    per_label: BTreeMap<String, u64>,
}

impl MacCounter {
    pub fn new(enabled: bool) -> Self {
        Self {
            enabled,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn set_enabled(&mut self, on: bool) {
        self.enabled = on;
    }

    pub fn record(&mut self, label: &str, macs: u64) {
        if !self.enabled {
            return;
        }
        self.total += macs;
        *self.per_label.entry(label.to_string()).or_insert(0) += macs;
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn get(&self, label: &str) -> u64 {
        self.per_label.get(label).copied().unwrap_or(0)
    }

    /// Sum over every label starting with `prefix`.
    pub fn sum_prefix(&self, prefix: &str) -> u64 {
        self.per_label
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v)
            .sum()
    }

    pub fn per_label(&self) -> &BTreeMap<String, u64> {
        &self.per_label
    }

    pub fn reset(&mut self) {
        self.total = 0;
        self.per_label.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disabled_counter_ignores_records() {
        let mut c = MacCounter::new(false);
        c.record("x", 10);
        assert_eq!(c.total(), 0);
        assert!(c.per_label().is_empty());
    }

    #[test]
    fn total_is_sum_of_labels() {
        let mut c = MacCounter::new(true);
        c.record("attn.qkv", 12);
        c.record("attn.scores", 5);
        c.record("ffn", 7);
        c.record("attn.qkv", 1);
        assert_eq!(c.total(), c.per_label().values().sum::<u64>());
        assert_eq!(c.sum_prefix("attn."), 18);
    }
}
