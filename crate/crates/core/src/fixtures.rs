//! Bundled system files: the five-state motivating system and the unicycle
//! with an unmeasured exosystem.

use crate::sysmodel::{load_system, SystemFile};

pub const MOTIVATING: &str = include_str!("../../../systems/motivating.sys");
pub const UNICYCLE: &str = include_str!("../../../systems/unicycle.sys");

pub fn motivating() -> SystemFile {
    load_system(MOTIVATING).expect("bundled motivating system parses")
}

pub fn unicycle() -> SystemFile {
    load_system(UNICYCLE).expect("bundled unicycle system parses")
}
