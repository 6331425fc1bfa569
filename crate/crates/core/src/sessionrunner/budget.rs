use std::time::Duration;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

pub const DEFAULT_WALL_CLOCK_LIMIT: Duration = Duration::from_secs(10 * 3600);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Currency per token. Construct from per-million prices with
/// [`PriceTable::per_million`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(with = "rust_decimal::serde::str")]
    pub per_input_token: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub per_output_token: Decimal,
}

impl PriceTable {
    pub fn per_million(input: Decimal, output: Decimal) -> Self {
        let m = Decimal::from(1_000_000u32);
        Self { per_input_token: input / m, per_output_token: output / m }
    }

    pub fn is_valid(&self) -> bool {
        !self.per_input_token.is_sign_negative() && !self.per_output_token.is_sign_negative()
    }
}

/// Exact cost of a usage sequence.
pub fn account_usage<'a>(events: impl IntoIterator<Item = &'a Usage>, price: &PriceTable) -> Decimal {
    events.into_iter().fold(Decimal::ZERO, |acc, u| {
        acc + Decimal::from(u.input_tokens) * price.per_input_token + Decimal::from(u.output_tokens) * price.per_output_token
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Budget {
    pub wall_clock_limit: Duration,
    pub cost_limit: Option<Decimal>,
    pub price_table: PriceTable,
}

impl Default for Budget {
    fn default() -> Self {
        Self { wall_clock_limit: DEFAULT_WALL_CLOCK_LIMIT, cost_limit: None, price_table: PriceTable::default() }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<(), String> {
        if self.wall_clock_limit.is_zero() {
            return Err("wall-clock limit must be positive".into());
        }
        if self.cost_limit.is_some_and(|c| c <= Decimal::ZERO) {
            return Err("cost limit must be positive".into());
        }
        if !self.price_table.is_valid() {
            return Err("prices must be non-negative".into());
        }
        Ok(())
    }
}
