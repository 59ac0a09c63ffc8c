//! Stages I–XI, the four phases, and their fixed mapping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One of the eleven lifecycle stages, ordered by ordinal.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StageId(u8);

const ROMAN: [&str; 11] = ["I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI"];

impl StageId {
    pub const I: StageId = StageId(1);
    pub const II: StageId = StageId(2);
    pub const III: StageId = StageId(3);
    pub const IV: StageId = StageId(4);
    pub const V: StageId = StageId(5);
    pub const VI: StageId = StageId(6);
    pub const VII: StageId = StageId(7);
    pub const VIII: StageId = StageId(8);
    pub const IX: StageId = StageId(9);
    pub const X: StageId = StageId(10);
    pub const XI: StageId = StageId(11);

    pub const FIRST: StageId = StageId::I;
    pub const LAST: StageId = StageId::XI;

    pub fn new(ordinal: u8) -> Option<Self> {
        (1..=11).contains(&ordinal).then_some(StageId(ordinal))
    }

    pub fn ordinal(self) -> u8 {
        self.0
    }

    pub fn roman(self) -> &'static str {
        ROMAN[(self.0 - 1) as usize]
    }

    pub fn next(self) -> Option<Self> {
        StageId::new(self.0 + 1)
    }

    pub fn phase(self) -> Phase {
        phase_of(self)
    }

    /// All stages in order.
    pub fn all() -> impl DoubleEndedIterator<Item = StageId> + Clone {
        (1..=11).map(StageId)
    }

    /// Stages in the half-open range `[from, to)`.
    pub fn range(from: StageId, to: StageId) -> impl Iterator<Item = StageId> {
        (from.0..to.0).map(StageId)
    }
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.roman())
    }
}

impl fmt::Debug for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Stage({})", self.roman())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid stage `{0}`: expected I..XI or 1..11")]
pub struct InvalidStage(pub String);

impl FromStr for StageId {
    type Err = InvalidStage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if let Ok(n) = t.parse::<u8>() {
            return StageId::new(n).ok_or_else(|| InvalidStage(s.to_string()));
        }
        let upper = t.to_ascii_uppercase();
        ROMAN
            .iter()
            .position(|r| *r == upper)
            .map(|i| StageId(i as u8 + 1))
            .ok_or_else(|| InvalidStage(s.to_string()))
    }
}

impl Serialize for StageId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.roman())
    }
}

impl<'de> Deserialize<'de> for StageId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Lifecycle phase. Ordering follows the lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Ideation,
    Development,
    Operation,
    Retirement,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Ideation, Phase::Development, Phase::Operation, Phase::Retirement];

    /// Display color used by board views.
    pub fn display_color(self) -> &'static str {
        match self {
            Phase::Ideation => "light blue",
            Phase::Development => "dark blue",
            Phase::Operation => "mint",
            Phase::Retirement => "black",
        }
    }

    pub fn stages(self) -> impl Iterator<Item = StageId> {
        StageId::all().filter(move |s| phase_of(*s) == self)
    }
}

/// Color used for quality gates on board views.
pub const GATE_DISPLAY_COLOR: &str = "yellow";

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Fixed stage-to-phase mapping: I–III ideation, IV–VII development,
/// VIII–X operation, XI retirement.
pub fn phase_of(stage: StageId) -> Phase {
    match stage.0 {
        1..=3 => Phase::Ideation,
        4..=7 => Phase::Development,
        8..=10 => Phase::Operation,
        _ => Phase::Retirement,
    }
}

/// Default stage labels. Labels are presentation only.
pub fn default_stage_name(stage: StageId) -> &'static str {
    match stage.0 {
        1 => "Use-case ideation",
        2 => "Feasibility & data availability",
        3 => "Prototype validation & development approval",
        4 => "Data pipeline engineering",
        5 => "Model engineering",
        6 => "Application & deployment design",
        7 => "Hybrid testing & release approval",
        8 => "Deployment & monitoring",
        9 => "Continuous improvement & redeployment preparation",
        10 => "Update gate",
        _ => "Retirement",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eleven_stages_in_order() {
        let all: Vec<_> = StageId::all().collect();
        assert_eq!(all.len(), 11);
        assert!(all.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(StageId::new(0), None);
        assert_eq!(StageId::new(12), None);
    }

    #[test]
    fn phase_boundaries() {
        assert_eq!(phase_of(StageId::II), Phase::Ideation);
        assert_eq!(phase_of(StageId::V), Phase::Development);
        assert_eq!(phase_of(StageId::IX), Phase::Operation);
        assert_eq!(phase_of(StageId::XI), Phase::Retirement);
        let counts: Vec<usize> = Phase::ALL.iter().map(|p| p.stages().count()).collect();
        assert_eq!(counts, vec![3, 4, 3, 1]);
    }

    #[test]
    fn roman_parse_round_trip() {
        for s in StageId::all() {
            assert_eq!(s.roman().parse::<StageId>().unwrap(), s);
            assert_eq!(s.ordinal().to_string().parse::<StageId>().unwrap(), s);
        }
        assert!("XII".parse::<StageId>().is_err());
        assert_eq!("viii".parse::<StageId>().unwrap(), StageId::VIII);
    }

    #[test]
    fn colors() {
        assert_eq!(Phase::Ideation.display_color(), "light blue");
        assert_eq!(Phase::Development.display_color(), "dark blue");
        assert_eq!(Phase::Operation.display_color(), "mint");
        assert_eq!(Phase::Retirement.display_color(), "black");
        assert_eq!(GATE_DISPLAY_COLOR, "yellow");
    }
}
