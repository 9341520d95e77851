//! Scenarios shipped with the crate.

use crate::model::{ModelError, Scenario};

pub const MADDR13: &str = include_str!("../../../scenarios/maddr13.toml");
pub const SINGLE5: &str = include_str!("../../../scenarios/single5.toml");
pub const FAULT_LINE: &str = include_str!("../../../scenarios/fault_line.toml");

/// `(name, toml)` for every bundled scenario.
pub const ALL: [(&str, &str); 3] = [
    ("maddr13", MADDR13),
    ("single5", SINGLE5),
    ("fault-line", FAULT_LINE),
];

/// Three sources sharing a 13-node field; sink 6.
pub fn maddr13() -> Scenario {
    Scenario::from_toml_str(MADDR13).expect("bundled scenario is valid")
}

/// One source, five disjoint paths of 9, 22, 5, 20 and 7 hops.
pub fn single5() -> Scenario {
    Scenario::from_toml_str(SINGLE5).expect("bundled scenario is valid")
}

/// A line with redundant stand-bys and a relay failure at data start.
pub fn fault_line() -> Scenario {
    Scenario::from_toml_str(FAULT_LINE).expect("bundled scenario is valid")
}

/// Looks up a bundled scenario; `_` and `-` are interchangeable.
pub fn by_name(name: &str) -> Result<Scenario, ModelError> {
    let key = name.replace('_', "-");
    ALL.iter()
        .find(|(n, _)| *n == key)
        .map(|(_, text)| Scenario::from_toml_str(text))
        .unwrap_or_else(|| Err(ModelError::Scenario(format!("no bundled scenario named {name:?}"))))
}
