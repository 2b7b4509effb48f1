//! Scenarios shipped with the crate.

pub const WAFERFAB20: &str = include_str!("../scenarios/waferfab20.toml");
pub const EXAMPLE3ROBOT: &str = include_str!("../scenarios/example3robot.toml");

pub const NAMES: [&str; 2] = ["waferfab20", "example3robot"];

/// TOML text of a bundled scenario.
pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "waferfab20" => Some(WAFERFAB20),
        "example3robot" => Some(EXAMPLE3ROBOT),
        _ => None,
    }
}
