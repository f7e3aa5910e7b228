//! Prevalence counts, seeded class-conditional down-sampling, and loss weights.
//!
//! Sampling uses xoshiro256** seeded through SplitMix64 (the
//! `seed_from_u64` of `rand_xoshiro`). Indices are drawn with the
//! multiply-shift map `(x * n) >> 64` applied to one 64-bit output, and
//! shuffled with a descending Fisher-Yates pass. Any implementation of those
//! three pieces reproduces the selection.

use std::collections::BTreeMap;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format;
use crate::labeler::{Condition, LabelVector, Status};

/// Present/absent counts; absent covers every non-present status.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrevalenceTable {
    pub total: u64,
    /// `(condition, present, absent)` in the order Pleural Effusion,
    /// Pneumothorax, Pneumonia, No Finding.
    pub rows: Vec<(Condition, u64, u64)>,
}

impl PrevalenceTable {
    pub const ORDER: [Condition; 4] = [
        Condition::PleuralEffusion,
        Condition::Pneumothorax,
        Condition::Pneumonia,
        Condition::NoFinding,
    ];

    pub fn present(&self, condition: Condition) -> u64 {
        self.rows
            .iter()
            .find(|r| r.0 == condition)
            .map(|r| r.1)
            .expect("prevalence rows cover every condition")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition,present,absent\n");
        for (c, present, absent) in &self.rows {
            out.push_str(&format!("{},{present},{absent}\n", c.name()));
        }
        out.push_str(&format!("total,{},\n", self.total));
        out
    }
}

pub fn prevalence(labels: &[LabelVector]) -> PrevalenceTable {
    let total = labels.len() as u64;
    let rows = PrevalenceTable::ORDER
        .iter()
        .map(|&c| {
            let present = labels.iter().filter(|v| v.status(c) == Status::Present).count() as u64;
            (c, present, total - present)
        })
        .collect();
    PrevalenceTable { total, rows }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebalancePlan {
    pub seed: u64,
    /// Fraction of each listed primary class to keep, in (0, 1].
    pub keep: BTreeMap<Condition, f64>,
}

impl RebalancePlan {
    pub fn validate(&self) -> Result<()> {
        for (c, &f) in &self.keep {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::input(format!("keep fraction for {c} is {f}; expected a value in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let plan: RebalancePlan = serde_json::from_str(json)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serializes")
    }
}

/// Order in which planned classes draw from the shared random stream.
pub const SAMPLING_ORDER: [Condition; 4] = [
    Condition::NoFinding,
    Condition::PleuralEffusion,
    Condition::Pneumothorax,
    Condition::Pneumonia,
];

fn bounded(rng: &mut Xoshiro256StarStar, n: usize) -> usize {
    ((u128::from(rng.next_u64()) * n as u128) >> 64) as usize
}

/// Number of records kept from a class of size `n`: `round(n * f)`, halves away from zero.
pub fn retained_count(n: usize, fraction: f64) -> usize {
    (n as f64 * fraction).round() as usize
}

/// Keeps `round(n_c * f_c)` records of each planned primary class, chosen by a
/// seeded shuffle. Records of other classes, or with no present label, are all
/// kept. The result preserves input order.
pub fn downsample(records: &[LabelVector], plan: &RebalancePlan) -> Result<Vec<LabelVector>> {
    plan.validate()?;
    let mut rng = Xoshiro256StarStar::seed_from_u64(plan.seed);
    let mut keep = vec![true; records.len()];

    for condition in SAMPLING_ORDER {
        let Some(&fraction) = plan.keep.get(&condition) else {
            continue;
        };
        let mut members: Vec<usize> = (0..records.len())
            .filter(|&i| records[i].primary_class() == Some(condition))
            .collect();
        for i in (1..members.len()).rev() {
            let j = bounded(&mut rng, i + 1);
            members.swap(i, j);
        }
        for &dropped in &members[retained_count(members.len(), fraction)..] {
            keep[dropped] = false;
        }
    }

    Ok(records
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(r, _)| r.clone())
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightScheme {
    /// `w_c = N / (K * n_c)`.
    InverseFreq,
    None,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "inverse_freq" => Ok(WeightScheme::InverseFreq),
            "none" => Ok(WeightScheme::None),
            _ => Err(Error::input(format!("unknown weight scheme {s:?}"))),
        }
    }
}

/// Per-condition loss weights. `N` is the number of samples and `K` the number of conditions.
pub fn class_weights(p: &PrevalenceTable, scheme: WeightScheme) -> Result<BTreeMap<Condition, f64>> {
    let k = p.rows.len() as f64;
    p.rows
        .iter()
        .map(|&(c, present, _)| {
            let w = match scheme {
                WeightScheme::None => 1.0,
                WeightScheme::InverseFreq if present == 0 => {
                    return Err(Error::Undefined(format!("{c} has no present samples; its weight is undefined")))
                }
                WeightScheme::InverseFreq => p.total as f64 / (k * present as f64),
            };
            Ok((c, w))
        })
        .collect()
}

pub fn weights_to_csv(weights: &BTreeMap<Condition, f64>) -> String {
    let mut out = String::from("condition,weight\n");
    for c in PrevalenceTable::ORDER {
        if let Some(&w) = weights.get(&c) {
            out.push_str(&format!("{},{}\n", c.name(), format::real(w)));
        }
    }
    out
}
