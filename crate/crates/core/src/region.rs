//! Facial region tags and the cropping strategies that produce them.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// A face region that gets its own embedding and its own cosine score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionTag {
    Holistic,
    LeftPeriocular,
    RightPeriocular,
    Nose,
    Mouth,
    ThirdUpper,
    ThirdMiddle,
    ThirdLower,
}

impl RegionTag {
    pub const ALL: [RegionTag; 8] = [
        RegionTag::Holistic,
        RegionTag::LeftPeriocular,
        RegionTag::RightPeriocular,
        RegionTag::Nose,
        RegionTag::Mouth,
        RegionTag::ThirdUpper,
        RegionTag::ThirdMiddle,
        RegionTag::ThirdLower,
    ];

    pub const PARTS4: [RegionTag; 4] = [
        RegionTag::LeftPeriocular,
        RegionTag::RightPeriocular,
        RegionTag::Nose,
        RegionTag::Mouth,
    ];

    pub const THIRDS3: [RegionTag; 3] = [
        RegionTag::ThirdUpper,
        RegionTag::ThirdMiddle,
        RegionTag::ThirdLower,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionTag::Holistic => "holistic",
            RegionTag::LeftPeriocular => "left_periocular",
            RegionTag::RightPeriocular => "right_periocular",
            RegionTag::Nose => "nose",
            RegionTag::Mouth => "mouth",
            RegionTag::ThirdUpper => "third_upper",
            RegionTag::ThirdMiddle => "third_middle",
            RegionTag::ThirdLower => "third_lower",
        }
    }

    pub fn is_third(self) -> bool {
        matches!(
            self,
            RegionTag::ThirdUpper | RegionTag::ThirdMiddle | RegionTag::ThirdLower
        )
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown region tag `{0}`")]
pub struct UnknownRegion(pub String);

impl FromStr for RegionTag {
    type Err = UnknownRegion;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RegionTag::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s.trim())
            .ok_or_else(|| UnknownRegion(s.to_string()))
    }
}

/// Parses a comma-separated region list such as `holistic,nose,mouth`.
pub fn parse_region_list(s: &str) -> Result<Vec<RegionTag>, UnknownRegion> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let tag: RegionTag = part.parse()?;
        if !out.contains(&tag) {
            out.push(tag);
        }
    }
    Ok(out)
}

/// Which regions a verification pipeline uses.
///
/// `Holistic` is the whole-face baseline; the `+holistic` variants fuse the
/// holistic score with four facial parts or three facial thirds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "holistic")]
    Holistic,
    #[serde(rename = "parts4")]
    Parts4,
    #[serde(rename = "thirds3")]
    Thirds3,
    #[serde(rename = "parts4+holistic")]
    Parts4Holistic,
    #[serde(rename = "thirds3+holistic")]
    Thirds3Holistic,
}

impl Strategy {
    pub fn regions(self) -> Vec<RegionTag> {
        let mut v = Vec::new();
        if matches!(
            self,
            Strategy::Holistic | Strategy::Parts4Holistic | Strategy::Thirds3Holistic
        ) {
            v.push(RegionTag::Holistic);
        }
        match self {
            Strategy::Parts4 | Strategy::Parts4Holistic => v.extend(RegionTag::PARTS4),
            Strategy::Thirds3 | Strategy::Thirds3Holistic => v.extend(RegionTag::THIRDS3),
            Strategy::Holistic => {}
        }
        v
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Holistic => "holistic",
            Strategy::Parts4 => "parts4",
            Strategy::Thirds3 => "thirds3",
            Strategy::Parts4Holistic => "parts4+holistic",
            Strategy::Thirds3Holistic => "thirds3+holistic",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "holistic" => Ok(Strategy::Holistic),
            "parts4" => Ok(Strategy::Parts4),
            "thirds3" => Ok(Strategy::Thirds3),
            "parts4+holistic" => Ok(Strategy::Parts4Holistic),
            "thirds3+holistic" => Ok(Strategy::Thirds3Holistic),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}
