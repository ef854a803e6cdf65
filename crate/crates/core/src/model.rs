//! Domain types shared by the parser, the ACE algebra, the ACE tree and the
//! topology builder. Nothing in here performs I/O.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::ModelError;

/// A protocol identifier at the network or transport layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Proto {
    #[serde(rename = "IPv4")]
    Ipv4,
    #[serde(rename = "IPv6")]
    Ipv6,
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "UDP")]
    Udp,
    #[serde(rename = "ICMP")]
    Icmp,
}

impl Proto {
    pub const ALL: [Proto; 5] = [Proto::Ipv4, Proto::Ipv6, Proto::Tcp, Proto::Udp, Proto::Icmp];

    pub fn layer(self) -> Layer {
        match self {
            Proto::Ipv4 | Proto::Ipv6 => Layer::Network,
            Proto::Tcp | Proto::Udp | Proto::Icmp => Layer::Transport,
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Proto::Ipv4 => "IPv4",
            Proto::Ipv6 => "IPv6",
            Proto::Tcp => "TCP",
            Proto::Udp => "UDP",
            Proto::Icmp => "ICMP",
        }
    }
}

impl fmt::Display for Proto {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Proto {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ipv4" => Ok(Proto::Ipv4),
            "ipv6" => Ok(Proto::Ipv6),
            "tcp" => Ok(Proto::Tcp),
            "udp" => Ok(Proto::Udp),
            "icmp" => Ok(Proto::Icmp),
            _ => Err(ModelError::UnknownProtocol(s.to_string())),
        }
    }
}

/// The kind of slot a [`LayerValue`] may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    Network,
    Transport,
    Port,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Network => "network",
            Layer::Transport => "transport",
            Layer::Port => "port",
        })
    }
}

/// A non-empty set of protocols drawn from a single layer, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtoSet(u8);

impl ProtoSet {
    pub fn new<I: IntoIterator<Item = Proto>>(protos: I) -> Result<Self, ModelError> {
        let mut bits = 0u8;
        let mut layer = None;
        for p in protos {
            match layer {
                None => layer = Some(p.layer()),
                Some(l) if l != p.layer() => {
                    return Err(ModelError::MixedLayers);
                }
                Some(_) => {}
            }
            bits |= p.bit();
        }
        if bits == 0 {
            return Err(ModelError::EmptyLayerValue);
        }
        Ok(ProtoSet(bits))
    }

    pub fn single(p: Proto) -> Self {
        ProtoSet(p.bit())
    }

    pub fn layer(self) -> Layer {
        self.iter().next().map(Proto::layer).expect("ProtoSet is never empty")
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, p: Proto) -> bool {
        self.0 & p.bit() != 0
    }

    pub fn is_subset(self, other: ProtoSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersect(self, other: ProtoSet) -> Option<ProtoSet> {
        let bits = self.0 & other.0;
        (bits != 0).then_some(ProtoSet(bits))
    }

    pub fn iter(self) -> impl Iterator<Item = Proto> {
        Proto::ALL.into_iter().filter(move |p| self.contains(*p))
    }
}

impl fmt::Debug for ProtoSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// An inclusive port interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortRange {
    pub lo: u16,
    pub hi: u16,
}

impl PortRange {
    pub fn new(lo: u16, hi: u16) -> Self {
        if lo <= hi {
            PortRange { lo, hi }
        } else {
            PortRange { lo: hi, hi: lo }
        }
    }

    pub fn single(port: u16) -> Self {
        PortRange { lo: port, hi: port }
    }

    pub fn contains(&self, port: u16) -> bool {
        self.lo <= port && port <= self.hi
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.lo == self.hi {
            write!(f, "{}", self.lo)
        } else {
            write!(f, "{}-{}", self.lo, self.hi)
        }
    }
}

/// Sorted, disjoint, non-adjacent port intervals. Never empty and never the
/// full `0..=65535` range (that is [`LayerValue::Any`]).
///
/// A single interval is stored inline; link stack lists get large.
#[derive(Debug, Clone)]
pub struct PortSet(Ranges);

#[derive(Debug, Clone)]
#[allow(clippy::box_collection)]
enum Ranges {
    One(PortRange),
    Many(Box<Vec<PortRange>>),
}

impl PartialEq for PortSet {
    fn eq(&self, other: &Self) -> bool {
        self.ranges() == other.ranges()
    }
}

impl Eq for PortSet {}

impl PartialOrd for PortSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PortSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.ranges().cmp(other.ranges())
    }
}

impl std::hash::Hash for PortSet {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.ranges().hash(state)
    }
}

impl PortSet {
    fn from_vec(mut v: Vec<PortRange>) -> PortSet {
        if v.len() == 1 {
            PortSet(Ranges::One(v[0]))
        } else {
            v.shrink_to_fit();
            PortSet(Ranges::Many(Box::new(v)))
        }
    }

    /// Normalizes `ranges`; returns `None` when they are empty.
    fn normalize<I: IntoIterator<Item = PortRange>>(ranges: I) -> Option<PortSet> {
        let mut v: SmallVec<[PortRange; 4]> = ranges.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_unstable();
        let mut out: Vec<PortRange> = Vec::with_capacity(v.len());
        for r in v {
            match out.last_mut() {
                Some(last) if (r.lo as u32) <= last.hi as u32 + 1 => {
                    last.hi = last.hi.max(r.hi);
                }
                _ => out.push(r),
            }
        }
        Some(PortSet::from_vec(out))
    }

    pub fn ranges(&self) -> &[PortRange] {
        match &self.0 {
            Ranges::One(r) => std::slice::from_ref(r),
            Ranges::Many(v) => v,
        }
    }

    pub fn contains(&self, port: u16) -> bool {
        self.ranges().iter().any(|r| r.contains(port))
    }

    pub fn is_subset(&self, other: &PortSet) -> bool {
        // every range of self must sit inside a single range of other (other is merged)
        self.ranges()
            .iter()
            .all(|r| other.ranges().iter().any(|o| o.lo <= r.lo && r.hi <= o.hi))
    }

    pub fn intersect(&self, other: &PortSet) -> Option<PortSet> {
        let (a, b) = (self.ranges(), other.ranges());
        let mut out: Vec<PortRange> = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < a.len() && j < b.len() {
            let lo = a[i].lo.max(b[j].lo);
            let hi = a[i].hi.min(b[j].hi);
            if lo <= hi {
                out.push(PortRange { lo, hi });
            }
            if a[i].hi < b[j].hi {
                i += 1;
            } else {
                j += 1;
            }
        }
        (!out.is_empty()).then(|| PortSet::from_vec(out))
    }
}

impl fmt::Display for PortSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, r) in self.ranges().iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{r}")?;
        }
        Ok(())
    }
}

/// A value at one protocol-stack layer.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LayerValue {
    Any,
    Named(ProtoSet),
    Ports(PortSet),
}

impl LayerValue {
    pub fn proto(p: Proto) -> Self {
        LayerValue::Named(ProtoSet::single(p))
    }

    pub fn protos<I: IntoIterator<Item = Proto>>(protos: I) -> Result<Self, ModelError> {
        ProtoSet::new(protos).map(LayerValue::Named)
    }

    pub fn port(port: u16) -> Self {
        LayerValue::Ports(PortSet(Ranges::One(PortRange::single(port))))
    }

    pub fn port_range(lo: u16, hi: u16) -> Self {
        Self::ports([PortRange::new(lo, hi)]).expect("a single range is never empty")
    }

    /// Builds a normalized port value. The full range collapses to `Any`.
    pub fn ports<I: IntoIterator<Item = PortRange>>(ranges: I) -> Result<Self, ModelError> {
        let set = PortSet::normalize(ranges).ok_or(ModelError::EmptyLayerValue)?;
        Ok(LayerValue::from_port_set(set))
    }

    pub(crate) fn from_port_set(set: PortSet) -> Self {
        let r = set.ranges();
        if r.len() == 1 && r[0].lo == 0 && r[0].hi == u16::MAX {
            LayerValue::Any
        } else {
            LayerValue::Ports(set)
        }
    }

    pub fn is_any(&self) -> bool {
        matches!(self, LayerValue::Any)
    }

    /// The layer this value is pinned to; `None` for `Any`.
    pub fn layer(&self) -> Option<Layer> {
        match self {
            LayerValue::Any => None,
            LayerValue::Named(s) => Some(s.layer()),
            LayerValue::Ports(_) => Some(Layer::Port),
        }
    }

    /// Number of distinct protocols named at this layer; `None` for ports and `Any`.
    pub fn named_count(&self) -> Option<usize> {
        match self {
            LayerValue::Named(s) => Some(s.len()),
            _ => None,
        }
    }
}

impl fmt::Display for LayerValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerValue::Any => f.write_str("any"),
            LayerValue::Named(s) => {
                for (i, p) in s.iter().enumerate() {
                    if i > 0 {
                        f.write_str("|")?;
                    }
                    f.write_str(p.as_str())?;
                }
                Ok(())
            }
            LayerValue::Ports(p) => write!(f, "{p}"),
        }
    }
}

impl LayerValue {
    /// Parses the textual form used in graph exports and test tables
    /// (`any`, `IPv4`, `TCP|UDP`, `80`, `1000-2000`, `80|443`) for the given layer.
    pub fn parse(layer: Layer, s: &str) -> Result<Self, ModelError> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("any") {
            return Ok(LayerValue::Any);
        }
        match layer {
            Layer::Network | Layer::Transport => {
                let protos = s
                    .split('|')
                    .map(str::parse::<Proto>)
                    .collect::<Result<Vec<_>, _>>()?;
                let set = ProtoSet::new(protos)?;
                if set.layer() != layer {
                    return Err(ModelError::WrongSlot { layer, value: s.to_string() });
                }
                Ok(LayerValue::Named(set))
            }
            Layer::Port => {
                let ranges = s
                    .split('|')
                    .map(|part| {
                        let bad = || ModelError::InvalidPort(part.to_string());
                        match part.split_once('-') {
                            Some((lo, hi)) => Ok(PortRange::new(
                                lo.trim().parse().map_err(|_| bad())?,
                                hi.trim().parse().map_err(|_| bad())?,
                            )),
                            None => Ok(PortRange::single(part.trim().parse().map_err(|_| bad())?)),
                        }
                    })
                    .collect::<Result<Vec<_>, ModelError>>()?;
                LayerValue::ports(ranges)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    FromDevice,
    ToDevice,
}

impl Direction {
    pub fn flip(self) -> Self {
        match self {
            Direction::FromDevice => Direction::ToDevice,
            Direction::ToDevice => Direction::FromDevice,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::FromDevice => "from-device",
            Direction::ToDevice => "to-device",
        }
    }
}

/// One ACE's four layer slots plus the direction of the policy it came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProtocolStack {
    pub network: LayerValue,
    pub transport: LayerValue,
    pub src_port: LayerValue,
    pub dst_port: LayerValue,
    pub direction: Direction,
}

impl ProtocolStack {
    pub fn new(
        network: LayerValue,
        transport: LayerValue,
        src_port: LayerValue,
        dst_port: LayerValue,
        direction: Direction,
    ) -> Result<Self, ModelError> {
        check_slot(Layer::Network, &network)?;
        check_slot(Layer::Transport, &transport)?;
        check_slot(Layer::Port, &src_port)?;
        check_slot(Layer::Port, &dst_port)?;
        Ok(ProtocolStack { network, transport, src_port, dst_port, direction })
    }

    /// `[any, any, any, any]`.
    pub fn wildcard(direction: Direction) -> Self {
        ProtocolStack {
            network: LayerValue::Any,
            transport: LayerValue::Any,
            src_port: LayerValue::Any,
            dst_port: LayerValue::Any,
            direction,
        }
    }

    pub fn layers(&self) -> [&LayerValue; 4] {
        [&self.network, &self.transport, &self.src_port, &self.dst_port]
    }

    pub fn with_direction(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }

    /// Layer-wise equality, ignoring direction.
    pub fn same_layers(&self, other: &ProtocolStack) -> bool {
        self.layers() == other.layers()
    }

    /// Parses `[IPv4, UDP, 5000, 400]` (brackets optional).
    pub fn parse(s: &str, direction: Direction) -> Result<Self, ModelError> {
        let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
        let parts: Vec<&str> = inner.split(',').collect();
        if parts.len() != 4 {
            return Err(ModelError::BadStackText(s.to_string()));
        }
        ProtocolStack::new(
            LayerValue::parse(Layer::Network, parts[0])?,
            LayerValue::parse(Layer::Transport, parts[1])?,
            LayerValue::parse(Layer::Port, parts[2])?,
            LayerValue::parse(Layer::Port, parts[3])?,
            direction,
        )
    }
}

fn check_slot(slot: Layer, value: &LayerValue) -> Result<(), ModelError> {
    match value.layer() {
        None => Ok(()),
        Some(l) if l == slot => Ok(()),
        Some(_) => Err(ModelError::WrongSlot { layer: slot, value: value.to_string() }),
    }
}

impl fmt::Display for ProtocolStack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.network, self.transport, self.src_port, self.dst_port)
    }
}

/// The seven MUD endpoint abstractions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    DomainName,
    LocalNetworks,
    Manufacturer,
    SameManufacturer,
    Controller,
    MyController,
    Model,
}

impl EndpointKind {
    pub const ALL: [EndpointKind; 7] = [
        EndpointKind::DomainName,
        EndpointKind::LocalNetworks,
        EndpointKind::Manufacturer,
        EndpointKind::SameManufacturer,
        EndpointKind::Controller,
        EndpointKind::MyController,
        EndpointKind::Model,
    ];

    /// Whether ACEs of this kind carry a value (DNS name, authority, URI).
    pub fn has_value(self) -> bool {
        matches!(
            self,
            EndpointKind::DomainName | EndpointKind::Manufacturer | EndpointKind::Controller | EndpointKind::Model
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EndpointKind::DomainName => "domain-name",
            EndpointKind::LocalNetworks => "local-networks",
            EndpointKind::Manufacturer => "manufacturer",
            EndpointKind::SameManufacturer => "same-manufacturer",
            EndpointKind::Controller => "controller",
            EndpointKind::MyController => "my-controller",
            EndpointKind::Model => "model",
        }
    }
}

impl fmt::Display for EndpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// DNS name placed on ACEs that name no endpoint at all (the open Internet).
pub const OPEN_INTERNET: &str = "*";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AceEndpoint {
    kind: EndpointKind,
    value: String,
}

impl AceEndpoint {
    pub fn new(kind: EndpointKind, value: impl Into<String>) -> Result<Self, ModelError> {
        let value = value.into();
        if kind.has_value() == value.is_empty() {
            return Err(ModelError::EndpointValue(kind));
        }
        Ok(AceEndpoint { kind, value })
    }

    /// Endpoint for one of the valueless kinds.
    pub fn bare(kind: EndpointKind) -> Self {
        assert!(!kind.has_value(), "{kind} requires a value");
        AceEndpoint { kind, value: String::new() }
    }

    pub fn kind(&self) -> EndpointKind {
        self.kind
    }

    pub fn value(&self) -> &str {
        &self.value
    }
}

impl fmt::Display for AceEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.value.is_empty() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}({})", self.kind, self.value)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ace {
    pub name: Arc<str>,
    /// Name of the ACL the entry was read from; kept so serialization
    /// reproduces the original grouping.
    pub acl: Arc<str>,
    pub endpoint: AceEndpoint,
    pub stack: ProtocolStack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceProfile {
    pub id: String,
    pub mud_url: String,
    pub authority: String,
    pub systeminfo: String,
    pub mfg_name: String,
    pub model_name: String,
    pub cache_validity: u32,
    pub is_supported: bool,
    /// Devices outside the modeled LAN (visitors) set this to `false`.
    pub local: bool,
    pub from_device: Vec<Ace>,
    pub to_device: Vec<Ace>,
}

impl DeviceProfile {
    /// Creates an empty profile, deriving `id` and `authority` from the MUD-URL.
    pub fn new(mud_url: &str) -> Result<Self, ModelError> {
        let authority = authority_of(mud_url)?;
        Ok(DeviceProfile {
            id: device_id_for(mud_url),
            mud_url: mud_url.to_string(),
            authority,
            systeminfo: String::new(),
            mfg_name: String::new(),
            model_name: String::new(),
            cache_validity: 48,
            is_supported: true,
            local: true,
            from_device: Vec::new(),
            to_device: Vec::new(),
        })
    }

    pub fn aces(&self, direction: Direction) -> &[Ace] {
        match direction {
            Direction::FromDevice => &self.from_device,
            Direction::ToDevice => &self.to_device,
        }
    }

    pub fn push_ace(&mut self, name: &str, endpoint: AceEndpoint, stack: ProtocolStack) {
        let acl: Arc<str> = Arc::from(match stack.direction {
            Direction::FromDevice => "from-device-acl",
            Direction::ToDevice => "to-device-acl",
        });
        let ace = Ace { name: Arc::from(name), acl, endpoint, stack };
        match ace.stack.direction {
            Direction::FromDevice => self.from_device.push(ace),
            Direction::ToDevice => self.to_device.push(ace),
        }
    }

    pub fn all_aces(&self) -> impl Iterator<Item = &Ace> {
        self.from_device.iter().chain(self.to_device.iter())
    }
}

/// Lowercased host component of a MUD-URL.
pub fn authority_of(mud_url: &str) -> Result<String, ModelError> {
    let parsed = url::Url::parse(mud_url).map_err(|e| ModelError::InvalidUrl(mud_url.to_string(), e.to_string()))?;
    parsed
        .host_str()
        .map(|h| h.to_ascii_lowercase())
        .ok_or_else(|| ModelError::InvalidUrl(mud_url.to_string(), "no host component".to_string()))
}

/// Deterministic device id: the MUD-URL without its scheme, reduced to
/// `[a-z0-9._-]`.
pub fn device_id_for(mud_url: &str) -> String {
    let rest = mud_url.split_once("://").map_or(mud_url, |(_, r)| r);
    let mut id = String::with_capacity(rest.len());
    for c in rest.chars() {
        let c = c.to_ascii_lowercase();
        if c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-' {
            id.push(c);
        } else if !id.ends_with('-') {
            id.push('-');
        }
    }
    id.trim_matches('-').to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromiseKind {
    Controller,
    MyController,
}

impl PromiseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PromiseKind::Controller => "controller",
            PromiseKind::MyController => "my-controller",
        }
    }
}

/// A host a promise is bound to: an existing graph node, or a new host the
/// graph materializes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HostRef {
    Existing(String),
    New {
        name: String,
        #[serde(default)]
        kind: HostKind,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HostKind {
    #[default]
    ControllerClass,
    ExternalHost,
    LocalNetwork,
    Gateway,
}

/// A controller / my-controller binding awaiting an admin-supplied mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerPromise {
    pub promise_id: String,
    pub device_id: String,
    pub kind: PromiseKind,
    pub class_uri: String,
    /// Node ids of the hosts bound to this promise; empty while pending.
    pub assigned_hosts: Vec<String>,
    /// Pruned stacks of every ACE naming this class, with their directions.
    pub stacks: Vec<ProtocolStack>,
    pub aces: Vec<Arc<str>>,
}

impl ControllerPromise {
    pub fn is_pending(&self) -> bool {
        self.assigned_hosts.is_empty()
    }
}

/// Finite candidate sets used to expand wildcards into concrete tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Universe {
    pub networks: Vec<Proto>,
    pub transports: Vec<Proto>,
    pub ports: Vec<u16>,
}

pub type ConcreteTuple = (Proto, Proto, u16, u16);

impl Universe {
    /// networks {IPv4, IPv6}, transports {TCP, UDP, ICMP}, and the boundary
    /// points of every port interval in `stacks` plus one port no stack names.
    pub fn for_stacks<'a, I: IntoIterator<Item = &'a ProtocolStack>>(stacks: I) -> Self {
        let mut ports = BTreeSet::new();
        for s in stacks {
            for v in [&s.src_port, &s.dst_port] {
                if let LayerValue::Ports(set) = v {
                    for r in set.ranges() {
                        ports.insert(r.lo);
                        ports.insert(r.hi);
                        ports.insert(r.lo.saturating_sub(1));
                        ports.insert(r.hi.saturating_add(1));
                    }
                }
            }
        }
        let sentinel = (0..=u16::MAX).rev().find(|p| !ports.contains(p)).unwrap_or(0);
        ports.insert(sentinel);
        Universe {
            networks: vec![Proto::Ipv4, Proto::Ipv6],
            transports: vec![Proto::Tcp, Proto::Udp, Proto::Icmp],
            ports: ports.into_iter().collect(),
        }
    }

    fn expand_named(candidates: &[Proto], v: &LayerValue) -> Vec<Proto> {
        match v {
            LayerValue::Any => candidates.to_vec(),
            LayerValue::Named(s) => candidates.iter().copied().filter(|p| s.contains(*p)).collect(),
            LayerValue::Ports(_) => Vec::new(),
        }
    }

    fn expand_ports(&self, v: &LayerValue) -> Vec<u16> {
        match v {
            LayerValue::Any => self.ports.clone(),
            LayerValue::Ports(s) => self.ports.iter().copied().filter(|p| s.contains(*p)).collect(),
            LayerValue::Named(_) => Vec::new(),
        }
    }
}

/// Exact set of concrete tuples `stack` matches within `universe`.
pub fn concretize(stack: &ProtocolStack, universe: &Universe) -> BTreeSet<ConcreteTuple> {
    let nets = Universe::expand_named(&universe.networks, &stack.network);
    let trans = Universe::expand_named(&universe.transports, &stack.transport);
    let sports = universe.expand_ports(&stack.src_port);
    let dports = universe.expand_ports(&stack.dst_port);
    let mut out = BTreeSet::new();
    for &n in &nets {
        for &t in &trans {
            for &sp in &sports {
                for &dp in &dports {
                    out.insert((n, t, sp, dp));
                }
            }
        }
    }
    out
}

/// Union of [`concretize`] over a list of stacks.
pub fn concretize_all<'a, I: IntoIterator<Item = &'a ProtocolStack>>(
    stacks: I,
    universe: &Universe,
) -> BTreeSet<ConcreteTuple> {
    stacks.into_iter().flat_map(|s| concretize(s, universe)).collect()
}
