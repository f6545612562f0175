//! Remote cost accounting.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cost of `tokens` billed at `cost_per_kilotoken` per 1000 tokens.
pub fn token_cost(cost_per_kilotoken: f64, tokens: u64) -> f64 {
    cost_per_kilotoken * tokens as f64 / 1000.0
}

/// Upper bound of the jitter window before retry `attempt` (0-based):
/// `base · 2^attempt`, saturating.
pub fn backoff_ceiling(base: Duration, attempt: u32) -> Duration {
    base.saturating_mul(2u32.saturating_pow(attempt))
}

/// Monotone counters of routed requests and accumulated remote cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub local_count: u64,
    pub remote_count: u64,
    pub remote_cost_total: f64,
    pub currency_unit: String,
}

impl Default for CostLedger {
    fn default() -> Self {
        Self::new("USD")
    }
}

impl CostLedger {
    pub fn new(currency_unit: impl Into<String>) -> Self {
        Self {
            local_count: 0,
            remote_count: 0,
            remote_cost_total: 0.0,
            currency_unit: currency_unit.into(),
        }
    }

    pub fn record_local(&mut self) {
        self.local_count += 1;
    }

    pub fn record_remote(&mut self, cost_units: f64) -> Result<()> {
        if !(cost_units >= 0.0 && cost_units.is_finite()) {
            return Err(Error::validation(format!(
                "cost {cost_units} must be finite and >= 0"
            )));
        }
        self.remote_count += 1;
        self.remote_cost_total += cost_units;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.local_count + self.remote_count
    }

    /// Share of requests that went to the remote model.
    pub fn forward_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            t => self.remote_count as f64 / t as f64,
        }
    }
}

/// A ledger shared between concurrent recorders.
#[derive(Debug, Default)]
pub struct SharedLedger(Mutex<CostLedger>);

impl SharedLedger {
    pub fn new(currency_unit: impl Into<String>) -> Self {
        Self(Mutex::new(CostLedger::new(currency_unit)))
    }

    pub fn record_local(&self) {
        self.0.lock().expect("ledger lock").record_local();
    }

    pub fn record_remote(&self, cost_units: f64) -> Result<()> {
        self.0
            .lock()
            .expect("ledger lock")
            .record_remote(cost_units)
    }

    pub fn snapshot(&self) -> CostLedger {
        self.0.lock().expect("ledger lock").clone()
    }
}
