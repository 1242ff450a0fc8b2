use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Persuasive strategy chosen by the coach. The discriminants are the
/// identifiers used in input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Commitment = 0,
    Consensus = 1,
    Authority = 2,
    ActionPlanning = 3,
    NoPersuasion = 4,
}

impl Action {
    pub const COUNT: usize = 5;

    pub const ALL: [Action; Action::COUNT] = [
        Action::Commitment,
        Action::Consensus,
        Action::Authority,
        Action::ActionPlanning,
        Action::NoPersuasion,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Action> {
        Action::ALL.get(index).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Commitment => "commitment",
            Action::Consensus => "consensus",
            Action::Authority => "authority",
            Action::ActionPlanning => "action_planning",
            Action::NoPersuasion => "no_persuasion",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the integer identifier or the canonical snake_case name.
/// Anything else is rejected.
impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Ok(id) = s.parse::<usize>() {
            return Action::from_index(id).ok_or_else(|| format!("unknown action id {id}"));
        }
        Action::ALL
            .iter()
            .copied()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown action `{s}`"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_follow_declared_order() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(Action::from_index(i), Some(*a));
        }
        assert_eq!(Action::from_index(5), None);
    }

    #[test]
    fn parses_ids_and_names() {
        assert_eq!("0".parse::<Action>(), Ok(Action::Commitment));
        assert_eq!("3".parse::<Action>(), Ok(Action::ActionPlanning));
        assert_eq!("no_persuasion".parse::<Action>(), Ok(Action::NoPersuasion));
        assert!("5".parse::<Action>().is_err());
        assert!("flattery".parse::<Action>().is_err());
        assert!("-1".parse::<Action>().is_err());
    }
}
