//! Analysis engine for Manufacturer Usage Description (MUD, RFC 8520) files.
//!
//! Profiles are parsed into [`DeviceProfile`]s, their access control entries
//! are merged pairwise across devices ([`algebra`]), redundant stacks are
//! pruned with a per-destination [`tree::AceTree`], and the result is a
//! [`ConnectivityGraph`] of devices, external hosts and controller promises.

pub mod algebra;
pub mod error;
pub mod model;
pub mod parser;
pub mod topology;
pub mod tree;

pub use algebra::{merge_acls, merge_stacks, MergeMode};
pub use error::{AlgebraError, ModelError, TopologyError};
pub use model::{
    concretize, Ace, AceEndpoint, ControllerPromise, DeviceProfile, Direction, EndpointKind, LayerValue, Proto,
    ProtocolStack, Universe,
};
pub use parser::{format_correct, parse_mud_file, serialize_profile, ValidationReport};

pub use tree::AceTree;
pub use topology::{ConnectivityGraph, GraphExport, GraphOptions};
