use thiserror::Error;

use crate::model::{EndpointKind, Layer};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("layer value must not be empty")]
    EmptyLayerValue,
    #[error("protocol set mixes network and transport protocols")]
    MixedLayers,
    #[error("unknown protocol {0:?}")]
    UnknownProtocol(String),
    #[error("invalid port {0:?}")]
    InvalidPort(String),
    #[error("value {value:?} does not belong in the {layer} slot")]
    WrongSlot { layer: Layer, value: String },
    #[error("malformed stack text {0:?}")]
    BadStackText(String),
    #[error("endpoint kind {0} has the wrong value presence")]
    EndpointValue(EndpointKind),
    #[error("invalid MUD-URL {0:?}: {1}")]
    InvalidUrl(String, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AlgebraError {
    #[error("cannot compare a {0} value with a {1} value")]
    LayerMismatch(Layer, Layer),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("profile {0} is already loaded")]
    DuplicateProfile(String),
    #[error("unknown device {0}")]
    UnknownDevice(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("unknown promise {0}")]
    UnknownPromise(String),
    #[error("promise {0} is already fulfilled")]
    AlreadyFulfilled(String),
    #[error("host list is empty")]
    EmptyHostList,
    #[error("invalid host {0:?}")]
    InvalidHost(String),
}

impl TopologyError {
    pub fn code(&self) -> &'static str {
        match self {
            TopologyError::DuplicateProfile(_) => "DuplicateProfile",
            TopologyError::UnknownDevice(_) => "UnknownDevice",
            TopologyError::UnknownNode(_) => "UnknownNode",
            TopologyError::UnknownPromise(_) => "UnknownPromise",
            TopologyError::AlreadyFulfilled(_) => "AlreadyFulfilled",
            TopologyError::EmptyHostList => "EmptyHostList",
            TopologyError::InvalidHost(_) => "InvalidHost",
        }
    }
}
