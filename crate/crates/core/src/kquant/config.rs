use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// The five base k-quant types. Named variants such as `Q4_K_M` only differ in
/// how a model mixes layers, so they parse to their base type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantType {
    Q2K,
    Q3K,
    Q4K,
    Q5K,
    Q6K,
}

impl QuantType {
    pub const ALL: [QuantType; 5] = [
        QuantType::Q2K,
        QuantType::Q3K,
        QuantType::Q4K,
        QuantType::Q5K,
        QuantType::Q6K,
    ];

    /// Type code used by the KQB container.
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn bits(self) -> u32 {
        self.code() as u32 + 2
    }

    pub fn layout(self) -> Layout {
        match self {
            QuantType::Q4K | QuantType::Q5K => Layout { m: 8, n: 32 },
            _ => Layout { m: 16, n: 16 },
        }
    }

    pub fn uses_mins(self) -> bool {
        matches!(self, QuantType::Q2K | QuantType::Q4K | QuantType::Q5K)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QuantType::Q2K => "q2_k",
            QuantType::Q3K => "q3_k",
            QuantType::Q4K => "q4_k",
            QuantType::Q5K => "q5_k",
            QuantType::Q6K => "q6_k",
        }
    }

    pub fn config(self) -> KQuantConfig {
        KQuantConfig::for_type(self)
    }
}

impl fmt::Display for QuantType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for QuantType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| *c != '_' && *c != '-')
            .collect();
        let base = match norm.as_str() {
            "q2k" => QuantType::Q2K,
            "q3k" | "q3ks" | "q3km" | "q3kl" => QuantType::Q3K,
            "q4k" | "q4ks" | "q4km" => QuantType::Q4K,
            "q5k" | "q5ks" | "q5km" => QuantType::Q5K,
            "q6k" => QuantType::Q6K,
            _ => return Err(Error::UnknownQuantType(s.to_string())),
        };
        Ok(base)
    }
}

impl Serialize for QuantType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for QuantType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// `m` subblocks of `n` weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Layout {
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Importance {
    /// `w = x²`
    Square,
    /// `w = sqrt(Σ x² / 32) + |x|`, the sum running over the subblock
    RmsPlusAbs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateRule {
    Grid,
    Replacing,
}

/// Per-type quantization parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KQuantConfig {
    pub qtype: QuantType,
    pub bits: u32,
    pub scale_bits: u32,
    pub use_mins: bool,
    pub layout: Layout,
    pub importance: Importance,
    pub objective: Objective,
    pub update: UpdateRule,
    /// Offsets added to the code count when perturbing the scale.
    pub grid: Vec<f32>,
    /// Left-to-right sweeps of the replacing rule.
    pub replacing_passes: usize,
}

pub const DEFAULT_GRID_STEPS: usize = 21;

impl KQuantConfig {
    pub fn for_type(qtype: QuantType) -> Self {
        use Importance::*;
        use Objective::*;
        use UpdateRule::*;
        let (bits, scale_bits, importance, objective, update) = match qtype {
            QuantType::Q2K => (2, 4, Square, L1, Grid),
            QuantType::Q3K => (3, 6, Square, L2, Replacing),
            QuantType::Q4K => (4, 6, RmsPlusAbs, L2, Grid),
            QuantType::Q5K => (5, 6, RmsPlusAbs, L2, Grid),
            QuantType::Q6K => (6, 8, Square, L2, Grid),
        };
        Self {
            qtype,
            bits,
            scale_bits,
            use_mins: qtype.uses_mins(),
            layout: qtype.layout(),
            importance,
            objective,
            update,
            grid: linspace_grid(DEFAULT_GRID_STEPS),
            replacing_passes: 1,
        }
    }

    /// Replaces the perturbation grid with `steps` evenly spaced offsets in [-1, 1].
    pub fn with_grid_steps(mut self, steps: usize) -> Self {
        self.grid = linspace_grid(steps);
        self
    }

    /// Inclusive range of the weight codes.
    pub fn code_range(&self) -> (i32, i32) {
        if self.use_mins {
            (0, (1 << self.bits) - 1)
        } else {
            (-(1 << (self.bits - 1)), (1 << (self.bits - 1)) - 1)
        }
    }

    /// Code count the base fit spreads the subblock range over.
    pub fn levels(&self) -> f64 {
        if self.use_mins {
            ((1u32 << self.bits) - 1) as f64
        } else {
            ((1u32 << (self.bits - 1)) - 1) as f64
        }
    }

    pub fn max_scale_code(&self) -> u32 {
        (1 << self.scale_bits) - 1
    }
}

fn linspace_grid(steps: usize) -> Vec<f32> {
    match steps {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..steps)
            .map(|k| (-1.0 + 2.0 * k as f64 / (steps - 1) as f64) as f32)
            .collect(),
    }
}
