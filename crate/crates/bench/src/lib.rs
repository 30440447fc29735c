//! Fixtures shared by the engine benchmarks.

use faultmaint::{parse, FmtModel};

/// Two components behind an OR gate with one RDEP; a few thousand states.
pub const SMALL: &str = "
toplevel sys;
policy trep=6m toh=10y tinsp=30d stages=2;
costs repair=100 replace=2000;
sys or pump valve;
wear rdep gamma=2 pump -> valve;
pump  ebe levels=2 tdeg=8y tclean=1d treplace=5d;
valve ebe levels=2 tdeg=12y tclean=1d treplace=5d;
";

pub const HVAC: &str = include_str!("../../../models/hvac.fmt");

pub fn small() -> FmtModel {
    parse(SMALL).expect("bundled benchmark model parses")
}

pub fn hvac() -> FmtModel {
    parse(HVAC).expect("bundled HVAC model parses")
}
