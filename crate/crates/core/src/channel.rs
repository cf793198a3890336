use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which embedding source a table, quantizer or token block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Collaborative,
    Semantic,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Collaborative, Channel::Semantic];

    /// Block order inside the token vocabulary: collaborative first.
    pub fn index(self) -> usize {
        match self {
            Channel::Collaborative => 0,
            Channel::Semantic => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Collaborative => "col",
            Channel::Semantic => "sem",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "col" | "collaborative" => Ok(Channel::Collaborative),
            "sem" | "semantic" => Ok(Channel::Semantic),
            other => Err(Error::Lookup {
                kind: "channel",
                id: other.to_string(),
            }),
        }
    }
}
