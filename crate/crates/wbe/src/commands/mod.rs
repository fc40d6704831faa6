pub mod export;
pub mod fbp;
pub mod gen;
pub mod rotate;
pub mod sweep;
pub mod train;

use crate::config::{Command, ExperimentConfig};
use crate::error::Result;

pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<()> {
    match cmd {
        Command::Gen => gen::run(cfg).map(drop),
        Command::Fbp => fbp::run(cfg).map(drop),
        Command::Train => train::run(cfg).map(drop),
        Command::RotateTest => rotate::run(cfg).map(drop),
        Command::Sweep => sweep::run(cfg).map(drop),
        Command::Export => export::run(cfg).map(drop),
    }
}
