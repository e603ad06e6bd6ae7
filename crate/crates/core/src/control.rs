//! Detector configuration echoed into every result.

use serde::{Deserialize, Serialize};

use crate::catcusum::CatControl;
use crate::ears::EarsControl;
use crate::farrington::FarringtonControl;
use crate::glrcusum::GlrControl;

/// The control used for a run, tagged by algorithm name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", content = "control")]
pub enum ControlSpec {
    #[serde(rename = "earsC1")]
    EarsC1(EarsControl),
    #[serde(rename = "farringtonFlexible")]
    FarringtonFlexible(FarringtonControl),
    #[serde(rename = "glrnb")]
    Glrnb(GlrControl),
    #[serde(rename = "glrpois")]
    Glrpois(GlrControl),
    #[serde(rename = "categoricalCUSUM")]
    CategoricalCusum(CatControl),
}

impl ControlSpec {
    pub fn algorithm(&self) -> &'static str {
        match self {
            Self::EarsC1(_) => "earsC1",
            Self::FarringtonFlexible(_) => "farringtonFlexible",
            Self::Glrnb(_) => "glrnb",
            Self::Glrpois(_) => "glrpois",
            Self::CategoricalCusum(_) => "categoricalCUSUM",
        }
    }
}
