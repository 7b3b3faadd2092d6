use std::fmt;

use serde::{Deserialize, Serialize};

/// The fixed set of ways a response body can deviate from a valid
/// OAI-PMH 2.0 document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationClass {
    Utf8,
    Entity,
    Markup,
    Schema,
    Protocol,
}

impl fmt::Display for ViolationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationClass::Utf8 => "utf8",
            ViolationClass::Entity => "entity",
            ViolationClass::Markup => "markup",
            ViolationClass::Schema => "schema",
            ViolationClass::Protocol => "protocol",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Byte offset into the body the violation was found in.
    pub offset: usize,
    pub class: ViolationClass,
    pub message: String,
    /// No usable response could be recovered.
    #[serde(default)]
    pub fatal: bool,
}

impl Violation {
    pub fn new(offset: usize, class: ViolationClass, message: impl Into<String>) -> Self {
        Self {
            offset,
            class,
            message: message.into(),
            fatal: false,
        }
    }

    pub fn fatal(offset: usize, class: ViolationClass, message: impl Into<String>) -> Self {
        Self {
            fatal: true,
            ..Self::new(offset, class, message)
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}: {}", self.class, self.offset, self.message)?;
        if self.fatal {
            f.write_str(" (fatal)")?;
        }
        Ok(())
    }
}
