//! Scenarios shipped with the binary.

use bubbleimg::dataio::Scenario;
use bubbleimg::Result;
use std::path::Path;

pub const HOMOGENEOUS: &str = include_str!("../scenarios/homogeneous.json");
pub const PHANTOM: &str = include_str!("../scenarios/phantom.json");
pub const BODYWAVE: &str = include_str!("../scenarios/bodywave.json");

pub const BUNDLED: [(&str, &str); 3] = [("homogeneous", HOMOGENEOUS), ("phantom", PHANTOM), ("bodywave", BODYWAVE)];

/// Used when `--scenario` is absent.
pub const DEFAULT: &str = "homogeneous";

pub fn bundled(name: &str) -> Option<Scenario> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::from_json(text).expect("bundled scenario parses"))
}

/// An existing file wins over a bundled name.
pub fn resolve(arg: Option<&str>) -> Result<Scenario> {
    let name = arg.unwrap_or(DEFAULT);
    let path = Path::new(name);
    if path.is_file() {
        return Scenario::load(path);
    }
    bundled(name).map_or_else(|| Scenario::load(path), Ok)
}
