//! Capability profiles: named ablations of the tool surface, prompts,
//! guest image and task inputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::toolserver::ToolCategory;

/// Utilities removed from the guest image under [`ProfileId::NoUtils`].
pub const DEFAULT_BLOCKED_UTILITIES: &[&str] = &["nft", "tc", "ip", "iptables", "ipset"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileId {
    Baseline,
    DegradedPrompt,
    NoUtils,
    NoGdb,
    NoCommitMessage,
}

impl ProfileId {
    pub const ALL: [ProfileId; 5] = [
        ProfileId::Baseline,
        ProfileId::DegradedPrompt,
        ProfileId::NoUtils,
        ProfileId::NoGdb,
        ProfileId::NoCommitMessage,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileId::Baseline => "baseline",
            ProfileId::DegradedPrompt => "degraded_prompt",
            ProfileId::NoUtils => "no_utils",
            ProfileId::NoGdb => "no_gdb",
            ProfileId::NoCommitMessage => "no_commit_message",
        }
    }
}

impl fmt::Display for ProfileId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown capability profile `{0}`")]
pub struct UnknownProfile(pub String);

impl FromStr for ProfileId {
    type Err = UnknownProfile;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ProfileId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownProfile(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptVariant {
    Full,
    /// high-level workflow guidance removed, technical rules kept
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTransform {
    Identity,
    RemoveUtilities(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityProfile {
    pub id: ProfileId,
}

impl CapabilityProfile {
    pub fn new(id: ProfileId) -> Self {
        Self { id }
    }

    pub fn baseline() -> Self {
        Self::new(ProfileId::Baseline)
    }

    pub fn from_id(s: &str) -> Result<Self, UnknownProfile> {
        s.parse().map(Self::new)
    }

    pub fn allows(&self, category: ToolCategory) -> bool {
        !(self.id == ProfileId::NoGdb && category == ToolCategory::Debugging)
    }

    pub fn prompt_variant(&self) -> PromptVariant {
        match self.id {
            ProfileId::DegradedPrompt => PromptVariant::Degraded,
            _ => PromptVariant::Full,
        }
    }

    pub fn image_transform(&self) -> ImageTransform {
        match self.id {
            ProfileId::NoUtils => ImageTransform::RemoveUtilities(
                DEFAULT_BLOCKED_UTILITIES.iter().map(|s| s.to_string()).collect(),
            ),
            _ => ImageTransform::Identity,
        }
    }

    /// Whether the task must be resolved without its commit message.
    pub fn strips_commit_message(&self) -> bool {
        self.id == ProfileId::NoCommitMessage
    }
}
