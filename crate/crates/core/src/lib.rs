//! Toolkit for armband-style electrical impedance tomography sensing.
//!
//! The pipeline covers: triangulated disk meshes ([`mesh`]), the complete
//! electrode model forward solver and its adjoint Jacobian ([`fem`]),
//! adjacent-drive measurement protocols ([`protocol`]), proper orthogonal
//! decomposition of measurement frames ([`pod`]), sensitivity-volume
//! electrode placement search over a POD basis ([`placement`]), gappy
//! reconstruction of frames with bad electrodes ([`projection`]), and
//! synthetic session generation for desk-scale evaluation ([`synth`]).

pub mod cli;
pub mod error;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod placement;
pub mod pod;
pub mod projection;
pub mod protocol;
pub mod render;
pub mod report;
pub mod synth;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
