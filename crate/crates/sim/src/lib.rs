//! Point-foot biped simulator: a torso floating base with two hip-roll /
//! hip-pitch / knee legs, penalty ground contact under a Coulomb cone, PD
//! actuation, randomized physical parameters and procedural heightfields.

pub mod contact;
pub mod dynamics;
pub mod error;
pub mod model;
pub mod params;
pub mod spatial;
pub mod state;
pub mod terrain;

pub use contact::{contact_resolve, Contact, ContactGains};
pub use dynamics::{mechanical_energy, pd_torque, step_dynamics, step_with_contacts, Contacts, DECIMATION, DT};
pub use error::{Result, SimError};
pub use model::{RobotModel, JOINT_NAMES, N_JOINTS};
pub use params::{randomize, DrRanges, PhysParams};
pub use state::SimState;
pub use terrain::{curriculum_update, generate, CurriculumRule, CurriculumState, Heightfield, TerrainKind, MAX_LEVEL};
