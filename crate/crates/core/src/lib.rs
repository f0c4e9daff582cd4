//! Nuclear-spin-bath decoherence of defect electron spins.
//!
//! Two routes to the Hahn-echo coherence time T₂ of a spin qubit in a host:
//!
//! * [`cce`]: cluster-correlation-expansion simulation over sampled nuclear baths
//!   ([`bath`]), fitted with [`fit`].
//! * [`scaling`]: a closed-form law in isotope g-factor, spin and density, applied
//!   to crystal structures ([`cif`]) and whole corpora ([`screening`], [`remote`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod cce;
pub mod cif;
pub mod fit;
pub mod isotopes;
pub mod remote;
pub mod scaling;
pub mod screening;
pub mod spin;

pub use bath::{
    BathError, BathInstance, BathSpin, CceOrder, ClusterSet, CrystalCell, DefectSite, PairSelection,
};
pub use cce::{ensemble_coherence, BathSource, CceError, CoherenceCurve, SimulationConfig};
pub use cif::{
    element_densities, parse_cif, realize_structure, structure_from_cif, CifError,
    RealizedStructure,
};
pub use fit::{fit_power_law, fit_stretched_exponential, FitError, PowerLawFit, T2Fit};
pub use isotopes::{Isotope, IsotopeError, IsotopeTable, Spin};
pub use scaling::{ScalingConstants, ScalingError, T2Prediction, T2Value};
pub use screening::{MaterialRecord, ScreeningError, ScreeningFilters, ScreeningReport};

/// Any library failure, tagged by the module it came from.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("isotopes: {0}")]
    Isotope(#[from] IsotopeError),
    #[error("spin kernel: {0}")]
    Kernel(#[from] spin::KernelError),
    #[error("bath: {0}")]
    Bath(#[from] BathError),
    #[error("cce: {0}")]
    Cce(#[from] CceError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error("scaling law: {0}")]
    Scaling(#[from] ScalingError),
    #[error("cif: {0}")]
    Cif(#[from] CifError),
    #[error("screening: {0}")]
    Screening(#[from] ScreeningError),
}
