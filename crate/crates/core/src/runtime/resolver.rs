//! Kernel selection and fault injection.
//!
//! Fault syntax: `accum=wrap@<target>`, `accum=narrow@<target>`,
//! `requant=truncate@<target>`, `slow=<k>@<target>`, where the target is a
//! layer index or a layer type name.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::graph::LayerType;
use super::kernels::{AccumulatorMode, Rounding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum KernelKind {
    #[default]
    Reference,
    Optimized,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Reference => "reference",
            KernelKind::Optimized => "optimized",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "reference" => Ok(KernelKind::Reference),
            "optimized" => Ok(KernelKind::Optimized),
            _ => Err(format!("unknown kernel set `{s}` (expected reference or optimized)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultTarget {
    Index(usize),
    Type(LayerType),
}

impl FaultTarget {
    pub fn matches(self, index: usize, kind: LayerType) -> bool {
        match self {
            FaultTarget::Index(i) => i == index,
            FaultTarget::Type(t) => t == kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultKind {
    /// 32-bit accumulators that wrap instead of widening.
    WrapAccumulator,
    /// 16-bit accumulators that saturate after every term.
    NarrowAccumulator,
    /// Requantization truncates toward zero instead of rounding.
    TruncateRequant,
    /// The kernel body runs `k` times.
    SlowKernel(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub target: FaultTarget,
}

impl FaultSpec {
    pub fn new(kind: FaultKind, target: FaultTarget) -> Self {
        FaultSpec { kind, target }
    }
}

impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FaultKind::WrapAccumulator => write!(f, "accum=wrap")?,
            FaultKind::NarrowAccumulator => write!(f, "accum=narrow")?,
            FaultKind::TruncateRequant => write!(f, "requant=truncate")?,
            FaultKind::SlowKernel(k) => write!(f, "slow={k}")?,
        }
        match self.target {
            FaultTarget::Index(i) => write!(f, "@{i}"),
            FaultTarget::Type(t) => write!(f, "@{t}"),
        }
    }
}

impl FromStr for FaultSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (what, target) = s.split_once('@').ok_or_else(|| format!("fault `{s}` lacks an @target"))?;
        let target = match target.parse::<usize>() {
            Ok(i) => FaultTarget::Index(i),
            Err(_) => FaultTarget::Type(target.parse()?),
        };
        let (key, value) = what.split_once('=').ok_or_else(|| format!("fault `{s}` should look like key=value@target"))?;
        let kind = match (key, value) {
            ("accum", "wrap") => FaultKind::WrapAccumulator,
            ("accum", "narrow") => FaultKind::NarrowAccumulator,
            ("requant", "truncate") => FaultKind::TruncateRequant,
            ("slow", k) => {
                let k: u32 = k.parse().map_err(|_| format!("slow factor `{k}` is not a positive integer"))?;
                if k == 0 {
                    return Err("slow factor must be at least 1".into());
                }
                FaultKind::SlowKernel(k)
            }
            _ => return Err(format!("unknown fault `{what}`")),
        };
        Ok(FaultSpec { kind, target })
    }
}

impl TryFrom<String> for FaultSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<FaultSpec> for String {
    fn from(f: FaultSpec) -> String {
        f.to_string()
    }
}

/// Effective behaviour of one layer after applying all matching faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerFaults {
    pub accumulator: AccumulatorMode,
    pub rounding: Rounding,
    pub repeat: u32,
}

impl Default for LayerFaults {
    fn default() -> Self {
        LayerFaults { accumulator: AccumulatorMode::Exact, rounding: Rounding::HalfAway, repeat: 1 }
    }
}

impl LayerFaults {
    pub fn is_clean(&self) -> bool {
        *self == LayerFaults::default()
    }
}

/// Chooses kernels per layer: a kernel set plus optional faults.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KernelResolver {
    pub kind: KernelKind,
    pub faults: Vec<FaultSpec>,
}

impl KernelResolver {
    pub fn new(kind: KernelKind) -> Self {
        KernelResolver { kind, faults: Vec::new() }
    }

    pub fn reference() -> Self {
        Self::new(KernelKind::Reference)
    }

    pub fn optimized() -> Self {
        Self::new(KernelKind::Optimized)
    }

    pub fn with_fault(mut self, fault: FaultSpec) -> Self {
        self.faults.push(fault);
        self
    }

    pub fn faults_for(&self, index: usize, kind: LayerType) -> LayerFaults {
        let mut lf = LayerFaults::default();
        for f in self.faults.iter().filter(|f| f.target.matches(index, kind)) {
            match f.kind {
                FaultKind::WrapAccumulator => lf.accumulator = AccumulatorMode::Wrap32,
                FaultKind::NarrowAccumulator => lf.accumulator = AccumulatorMode::Saturate16,
                FaultKind::TruncateRequant => lf.rounding = Rounding::TowardZero,
                FaultKind::SlowKernel(k) => lf.repeat = lf.repeat.saturating_mul(k),
            }
        }
        lf
    }
}
