//! Built-in experiment configs. The same files live in `configs/` so they
//! can be passed to `mutn train` directly.

use mutn_core::config::Config;

use crate::{Failure, Result};

pub const DECONV_DESK: &str = include_str!("../configs/deconv_desk.cfg");
pub const DEBLUR_DESK: &str = include_str!("../configs/deblur_desk.cfg");
pub const DEFOG_DESK: &str = include_str!("../configs/defog_desk.cfg");
pub const DECONV_SMOKE: &str = include_str!("../configs/deconv_smoke.cfg");
pub const DEBLUR_SMOKE: &str = include_str!("../configs/deblur_smoke.cfg");

/// Experiment size. `Smoke` keeps every code path but shrinks datasets and
/// epochs so a full rerun takes seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Desk,
    Smoke,
}

impl Scale {
    pub fn parse(s: &str) -> Result<Scale> {
        match s {
            "desk" => Ok(Scale::Desk),
            "smoke" => Ok(Scale::Smoke),
            other => Err(Failure::Config(format!("unknown scale `{other}` (expected desk or smoke)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Smoke => "smoke",
        }
    }

    pub fn deconv(self) -> Config {
        parse(match self {
            Scale::Desk => DECONV_DESK,
            Scale::Smoke => DECONV_SMOKE,
        })
    }

    pub fn deblur(self) -> Config {
        parse(match self {
            Scale::Desk => DEBLUR_DESK,
            Scale::Smoke => DEBLUR_SMOKE,
        })
    }
}

fn parse(text: &str) -> Config {
    Config::parse(text).expect("built-in configs parse")
}
