//! Donor ensemble: implantation profile, strain, per-donor couplings and
//! the Si-29 bath.

mod bath;
mod ensemble;
mod profile;
mod strain;

pub use bath::{dipolar_couplings, lattice_sites, nuclear_bath, NuclearBath, Nucleus};
pub use ensemble::{
    build_ensemble, coupling_histogram, draw_donors, Donor, DonorSet, Ensemble, EnsembleConfig, FieldSource, Histogram,
    SpinPacket,
};
pub use profile::{
    implant_profile, implant_profile_with_taper, DepthSampler, ImplantProfile, DEFAULT_DEPTH_RANGE,
    DEFAULT_PEAK_DENSITY, DEFAULT_TAPER,
};
pub use strain::{
    hyperfine_shift, hyperfine_shift_with, strain_analytic, strain_import, FilmEdgeModel, GriddedStrain, StrainMap,
    StrainSource, DEFAULT_R_MIN, STRAIN_BOUND,
};
