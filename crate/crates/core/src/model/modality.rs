use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Input/output modality. Ordered `Text < Image`; serialization relies on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Text, Modality::Image];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }

    fn letter(self) -> char {
        match self {
            Modality::Text => 'T',
            Modality::Image => 'I',
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            other => Err(Error::validation(format!("unknown modality {other:?}"))),
        }
    }
}

/// Which low-rank adapter inside a layer.
///
/// The four-way split uses `General(m)` for understanding modality `m` on the
/// input side and `Expert(m)` for producing it on the output side. `Unified`
/// is the single undivided adapter of the baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdapterKey {
    Unified,
    General(Modality),
    Expert(Modality),
}

impl AdapterKey {
    pub const GI: AdapterKey = AdapterKey::General(Modality::Image);
    pub const GT: AdapterKey = AdapterKey::General(Modality::Text);
    pub const EI: AdapterKey = AdapterKey::Expert(Modality::Image);
    pub const ET: AdapterKey = AdapterKey::Expert(Modality::Text);

    pub const FOUR: [AdapterKey; 4] = [Self::GI, Self::GT, Self::EI, Self::ET];

    pub fn code(self) -> String {
        match self {
            AdapterKey::Unified => "U".to_string(),
            AdapterKey::General(m) => format!("G{}", m.letter()),
            AdapterKey::Expert(m) => format!("E{}", m.letter()),
        }
    }
}

impl fmt::Display for AdapterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for AdapterKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" => Ok(AdapterKey::Unified),
            "GI" => Ok(AdapterKey::GI),
            "GT" => Ok(AdapterKey::GT),
            "EI" => Ok(AdapterKey::EI),
            "ET" => Ok(AdapterKey::ET),
            other => Err(Error::validation(format!("unknown adapter key {other:?}"))),
        }
    }
}

/// A task's (input modalities, output modality) pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature {
    pub inputs: BTreeSet<Modality>,
    pub output: Modality,
}

impl Signature {
    pub fn new(inputs: impl IntoIterator<Item = Modality>, output: Modality) -> Result<Self> {
        let inputs: BTreeSet<Modality> = inputs.into_iter().collect();
        if inputs.is_empty() {
            return Err(Error::validation("a task needs at least one input modality"));
        }
        Ok(Self { inputs, output })
    }
}

impl fmt::Display for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ins: Vec<&str> = self.inputs.iter().map(|m| m.as_str()).collect();
        write!(f, "{{{}}} -> {}", ins.join(","), self.output)
    }
}
