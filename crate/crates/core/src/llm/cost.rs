//! Exact cost accounting.
//!
//! Amounts are integer pico-currency units so ledger sums never drift. A
//! price per million tokens with at most six decimals divides evenly into a
//! per-token pico amount, which keeps `tokens * price` exact.

use std::collections::BTreeMap;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

const UNITS_PER_CURRENCY: u64 = 1_000_000_000_000;
const FRACTION_DIGITS: usize = 12;

/// A non-negative amount of money in pico-currency units.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Cost(u64);

impl Cost {
    pub const ZERO: Cost = Cost(0);

    pub const fn from_units(units: u64) -> Self {
        Cost(units)
    }

    pub const fn units(self) -> u64 {
        self.0
    }

    /// Nearest representable amount; used for config values given as floats.
    pub fn from_f64(amount: f64) -> Self {
        Cost((amount.max(0.0) * UNITS_PER_CURRENCY as f64).round() as u64)
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / UNITS_PER_CURRENCY as f64
    }

    pub fn checked_add(self, other: Cost) -> Option<Cost> {
        self.0.checked_add(other.0).map(Cost)
    }
}

impl Add for Cost {
    type Output = Cost;
    fn add(self, rhs: Cost) -> Cost {
        Cost(self.0 + rhs.0)
    }
}

impl AddAssign for Cost {
    fn add_assign(&mut self, rhs: Cost) {
        self.0 += rhs.0;
    }
}

impl Sum for Cost {
    fn sum<I: Iterator<Item = Cost>>(iter: I) -> Cost {
        iter.fold(Cost::ZERO, Add::add)
    }
}

impl FromStr for Cost {
    type Err = Error;

    /// Parses a plain decimal such as `89.07` exactly.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::Config(format!("invalid amount `{s}`"));
        let s = s.trim().trim_start_matches('$');
        let (whole, frac) = s.split_once('.').unwrap_or((s, ""));
        if whole.is_empty() && frac.is_empty() || frac.len() > FRACTION_DIGITS {
            return Err(bad());
        }
        if !whole
            .chars()
            .chain(frac.chars())
            .all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let whole: u64 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let mut frac_units: u64 = 0;
        for (i, c) in frac.chars().enumerate() {
            let digit = c.to_digit(10).unwrap() as u64;
            frac_units += digit * 10u64.pow((FRACTION_DIGITS - 1 - i) as u32);
        }
        whole
            .checked_mul(UNITS_PER_CURRENCY)
            .and_then(|w| w.checked_add(frac_units))
            .map(Cost)
            .ok_or_else(bad)
    }
}

impl fmt::Display for Cost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let whole = self.0 / UNITS_PER_CURRENCY;
        let frac = self.0 % UNITS_PER_CURRENCY;
        let frac = format!("{frac:012}");
        let trimmed = frac.trim_end_matches('0');
        if trimmed.len() <= 2 {
            write!(f, "{whole}.{:0<2}", trimmed)
        } else {
            write!(f, "{whole}.{trimmed}")
        }
    }
}

/// Input/output prices of one model, each per million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pricing {
    pub input_per_mtok: Cost,
    pub output_per_mtok: Cost,
}

impl Pricing {
    pub fn new(input_per_mtok: Cost, output_per_mtok: Cost) -> Self {
        Pricing {
            input_per_mtok,
            output_per_mtok,
        }
    }

    /// `prompt_tokens * price_in + completion_tokens * price_out`.
    ///
    /// Exact whenever each per-million price has at most six decimals;
    /// otherwise the per-token amount is truncated to whole units.
    pub fn cost(&self, prompt_tokens: u64, completion_tokens: u64) -> Cost {
        let per_in = self.input_per_mtok.units() / 1_000_000;
        let per_out = self.output_per_mtok.units() / 1_000_000;
        Cost(prompt_tokens * per_in + completion_tokens * per_out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub component: String,
    pub model_id: String,
    pub cost: Cost,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Append-only record of every priced call, with per-component totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    entries: Vec<LedgerEntry>,
    component_totals: BTreeMap<String, Cost>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        *self
            .component_totals
            .entry(entry.component.clone())
            .or_default() += entry.cost;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn component_totals(&self) -> &BTreeMap<String, Cost> {
        &self.component_totals
    }

    pub fn component_total(&self, component: &str) -> Cost {
        self.component_totals
            .get(component)
            .copied()
            .unwrap_or_default()
    }

    pub fn grand_total(&self) -> Cost {
        self.component_totals.values().copied().sum()
    }

    /// Recomputes the totals from the raw entries and compares.
    pub fn is_consistent(&self) -> bool {
        let mut expect: BTreeMap<&str, Cost> = BTreeMap::new();
        for e in &self.entries {
            *expect.entry(&e.component).or_default() += e.cost;
        }
        expect.len() == self.component_totals.len()
            && expect
                .iter()
                .all(|(k, v)| self.component_totals.get(*k) == Some(v))
            && self.entries.iter().map(|e| e.cost).sum::<Cost>() == self.grand_total()
    }
}
