//! Connectivity graph: resolves the seven endpoint abstractions across the
//! loaded profiles, merges and prunes ACEs per directed link, and tracks
//! controller promises.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{merge_acl_pairs, MergeMode};
use crate::error::TopologyError;
use crate::model::{
    Ace, AceEndpoint, ControllerPromise, DeviceProfile, Direction, EndpointKind, HostKind, HostRef, PromiseKind,
    ProtocolStack, OPEN_INTERNET,
};
use crate::tree::{prune_stacks, tree_path, AceTree, PruneEvent};

pub mod export;

pub use export::{GraphExport, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GraphOptions {
    pub merge_mode: MergeMode,
    /// Emit a device-to-device link when only one side's policy names the
    /// other. Such links are flagged in their provenance.
    pub one_sided_links: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Device,
    ExternalHost,
    ControllerClass,
    LocalNetwork,
    Gateway,
}

impl From<HostKind> for NodeKind {
    fn from(k: HostKind) -> Self {
        match k {
            HostKind::ControllerClass => NodeKind::ControllerClass,
            HostKind::ExternalHost => NodeKind::ExternalHost,
            HostKind::LocalNetwork => NodeKind::LocalNetwork,
            HostKind::Gateway => NodeKind::Gateway,
        }
    }
}

fn host_kind_prefix(k: HostKind) -> &'static str {
    match k {
        HostKind::ControllerClass => "controller",
        HostKind::ExternalHost => "host",
        HostKind::LocalNetwork => "lan",
        HostKind::Gateway => "gateway",
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    pub mud_url: Option<String>,
}

/// Which ACEs justify a link. For device-to-device links both sides are
/// filled; single-sided flows (DNS hosts, controllers) leave one side empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub source_kind: Option<EndpointKind>,
    pub source_aces: Vec<Arc<str>>,
    pub target_kind: Option<EndpointKind>,
    pub target_aces: Vec<Arc<str>>,
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowLink {
    pub source: String,
    pub target: String,
    pub stacks: Vec<ProtocolStack>,
    pub provenance: Vec<Provenance>,
}

pub fn device_node_id(device_id: &str) -> String {
    format!("device:{device_id}")
}

fn dns_node(dns: &str) -> GraphNode {
    if dns == OPEN_INTERNET {
        GraphNode {
            id: "gateway:internet".to_string(),
            kind: NodeKind::Gateway,
            label: "Internet".to_string(),
            mud_url: None,
        }
    } else {
        GraphNode { id: format!("host:{dns}"), kind: NodeKind::ExternalHost, label: dns.to_string(), mud_url: None }
    }
}

/// Whether an ACE owned by `owner` with `endpoint` admits `candidate`.
///
/// Domain names, controllers and my-controller bind to non-device nodes and
/// never match a device.
pub fn match_rule(endpoint: &AceEndpoint, owner: &DeviceProfile, candidate: &DeviceProfile) -> bool {
    match endpoint.kind() {
        EndpointKind::LocalNetworks => owner.local && candidate.local,
        EndpointKind::Manufacturer => candidate.authority == endpoint.value(),
        EndpointKind::SameManufacturer => owner.authority == candidate.authority,
        EndpointKind::Model => candidate.mud_url == endpoint.value(),
        EndpointKind::DomainName | EndpointKind::Controller | EndpointKind::MyController => false,
    }
}

/// ACE indices on each side of a directed device pair.
#[derive(Debug, Clone)]
pub struct PairSelection {
    pub from_aces: Vec<u32>,
    pub to_aces: Vec<u32>,
}

/// Selects `src`'s outbound ACEs admitting `dst` and `dst`'s inbound ACEs
/// admitting `src`.
pub fn select_pair(src: &DeviceProfile, dst: &DeviceProfile) -> PairSelection {
    let pick = |owner: &DeviceProfile, aces: &[Ace], other: &DeviceProfile| -> Vec<u32> {
        aces.iter()
            .enumerate()
            .filter(|(_, a)| match_rule(&a.endpoint, owner, other))
            .map(|(i, _)| i as u32)
            .collect()
    };
    PairSelection { from_aces: pick(src, &src.from_device, dst), to_aces: pick(dst, &dst.to_device, src) }
}

/// Pre-pruning stacks and provenance for a directed device pair.
fn pair_contribution(
    src: &DeviceProfile,
    dst: &DeviceProfile,
    sel: &PairSelection,
    options: GraphOptions,
) -> Option<(Vec<ProtocolStack>, Vec<Provenance>)> {
    let from: Vec<&Ace> = sel.from_aces.iter().map(|&i| &src.from_device[i as usize]).collect();
    let to: Vec<&Ace> = sel.to_aces.iter().map(|&i| &dst.to_device[i as usize]).collect();
    match (from.is_empty(), to.is_empty()) {
        (false, false) => {
            let fs: Vec<ProtocolStack> = from.iter().map(|a| a.stack.clone()).collect();
            let ts: Vec<ProtocolStack> = to.iter().map(|a| a.stack.clone()).collect();
            let merged = merge_acl_pairs(&fs, &ts, options.merge_mode);
            if merged.is_empty() {
                return None;
            }
            let mut prov: Vec<Provenance> = Vec::new();
            for (i, j, _) in &merged {
                let (fa, ta) = (from[*i], to[*j]);
                let key = (Some(fa.endpoint.kind()), Some(ta.endpoint.kind()));
                let entry = match prov.iter_mut().position(|p| (p.source_kind, p.target_kind) == key) {
                    Some(idx) => &mut prov[idx],
                    None => {
                        prov.push(Provenance {
                            source_kind: key.0,
                            source_aces: Vec::new(),
                            target_kind: key.1,
                            target_aces: Vec::new(),
                            one_sided: false,
                        });
                        prov.last_mut().expect("just pushed")
                    }
                };
                push_unique(&mut entry.source_aces, &fa.name);
                push_unique(&mut entry.target_aces, &ta.name);
            }
            Some((merged.into_iter().map(|(_, _, s)| s).collect(), prov))
        }
        (false, true) if options.one_sided_links => Some(one_sided(&from, true)),
        (true, false) if options.one_sided_links => Some(one_sided(&to, false)),
        _ => None,
    }
}

fn one_sided(aces: &[&Ace], source_side: bool) -> (Vec<ProtocolStack>, Vec<Provenance>) {
    let stacks = aces.iter().map(|a| a.stack.clone().with_direction(Direction::FromDevice)).collect();
    let mut prov: Vec<Provenance> = Vec::new();
    for a in aces {
        let kind = Some(a.endpoint.kind());
        let idx = match prov.iter().position(|p| if source_side { p.source_kind == kind } else { p.target_kind == kind }) {
            Some(i) => i,
            None => {
                prov.push(Provenance {
                    source_kind: if source_side { kind } else { None },
                    source_aces: Vec::new(),
                    target_kind: if source_side { None } else { kind },
                    target_aces: Vec::new(),
                    one_sided: true,
                });
                prov.len() - 1
            }
        };
        let names = if source_side { &mut prov[idx].source_aces } else { &mut prov[idx].target_aces };
        push_unique(names, &a.name);
    }
    (stacks, prov)
}

fn push_unique(list: &mut Vec<Arc<str>>, name: &Arc<str>) {
    if !list.contains(name) {
        list.push(name.clone());
    }
}

fn normalize(stacks: Vec<ProtocolStack>) -> Vec<ProtocolStack> {
    stacks.into_iter().map(|s| s.with_direction(Direction::FromDevice)).collect()
}

fn realize(source: String, target: String, stacks: Vec<ProtocolStack>, provenance: Vec<Provenance>) -> Option<FlowLink> {
    let stacks = prune_stacks(&normalize(stacks));
    (!stacks.is_empty()).then_some(FlowLink { source, target, stacks, provenance })
}

/// The link `src → dst`, if their policies share a common factor.
pub fn pair_link(src: &DeviceProfile, dst: &DeviceProfile, options: GraphOptions) -> Option<FlowLink> {
    if src.id == dst.id {
        return None;
    }
    let sel = select_pair(src, dst);
    let (stacks, prov) = pair_contribution(src, dst, &sel, options)?;
    realize(device_node_id(&src.id), device_node_id(&dst.id), stacks, prov)
}

/// Groups a device's DNS-name ACEs per (direction, name).
fn dns_groups(profile: &DeviceProfile) -> Vec<(Direction, &str, Vec<&Ace>)> {
    let mut groups: Vec<(Direction, &str, Vec<&Ace>)> = Vec::new();
    for ace in profile.all_aces() {
        if ace.endpoint.kind() != EndpointKind::DomainName {
            continue;
        }
        let key = (ace.stack.direction, ace.endpoint.value());
        match groups.iter_mut().find(|(d, n, _)| (*d, *n) == key) {
            Some((_, _, list)) => list.push(ace),
            None => groups.push((key.0, key.1, vec![ace])),
        }
    }
    groups
}

fn host_links(profile: &DeviceProfile) -> Vec<(GraphNode, FlowLink)> {
    let dev = device_node_id(&profile.id);
    dns_groups(profile)
        .into_iter()
        .filter_map(|(direction, dns, aces)| {
            let node = dns_node(dns);
            let names: Vec<Arc<str>> = aces.iter().map(|a| a.name.clone()).collect();
            let stacks: Vec<ProtocolStack> = aces.iter().map(|a| a.stack.clone()).collect();
            let (source, target, prov) = match direction {
                Direction::FromDevice => (
                    dev.clone(),
                    node.id.clone(),
                    Provenance {
                        source_kind: Some(EndpointKind::DomainName),
                        source_aces: names,
                        target_kind: None,
                        target_aces: Vec::new(),
                        one_sided: false,
                    },
                ),
                Direction::ToDevice => (
                    node.id.clone(),
                    dev.clone(),
                    Provenance {
                        source_kind: None,
                        source_aces: Vec::new(),
                        target_kind: Some(EndpointKind::DomainName),
                        target_aces: names,
                        one_sided: false,
                    },
                ),
            };
            realize(source, target, stacks, vec![prov]).map(|l| (node, l))
        })
        .collect()
}

fn promises_for(profile: &DeviceProfile) -> Vec<ControllerPromise> {
    let mut out: Vec<ControllerPromise> = Vec::new();
    let mut raw: Vec<Vec<ProtocolStack>> = Vec::new();
    for ace in profile.all_aces() {
        let (kind, class_uri) = match ace.endpoint.kind() {
            EndpointKind::Controller => (PromiseKind::Controller, ace.endpoint.value().to_string()),
            EndpointKind::MyController => (PromiseKind::MyController, profile.mud_url.clone()),
            _ => continue,
        };
        let idx = match out.iter().position(|p| p.kind == kind && p.class_uri == class_uri) {
            Some(i) => i,
            None => {
                out.push(ControllerPromise {
                    promise_id: format!("{}.p{}", profile.id, out.len()),
                    device_id: profile.id.clone(),
                    kind,
                    class_uri,
                    assigned_hosts: Vec::new(),
                    stacks: Vec::new(),
                    aces: Vec::new(),
                });
                raw.push(Vec::new());
                out.len() - 1
            }
        };
        raw[idx].push(ace.stack.clone());
        push_unique(&mut out[idx].aces, &ace.name);
    }
    for (promise, stacks) in out.iter_mut().zip(raw) {
        for direction in [Direction::FromDevice, Direction::ToDevice] {
            let side: Vec<ProtocolStack> = stacks.iter().filter(|s| s.direction == direction).cloned().collect();
            promise.stacks.extend(prune_stacks(&side));
        }
    }
    out
}

/// Wall-clock split of a bulk graph build.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildTimings {
    pub resolve: Duration,
    pub merge_prune: Duration,
}

/// One intra-device redundancy finding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RedundantAce {
    pub device_id: String,
    pub ace: String,
    pub reason: String,
    pub covered_by: String,
}

/// Persisted fulfilments: enough to replay them after a restart.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromiseLedger {
    pub promises: Vec<LedgerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LedgerEntry {
    pub promise_id: String,
    pub class_uri: String,
    pub hosts: Vec<HostRef>,
}

#[derive(Debug, Clone, Default)]
pub struct ConnectivityGraph {
    options: GraphOptions,
    profiles: BTreeMap<String, DeviceProfile>,
    pair_links: BTreeMap<(String, String), FlowLink>,
    host_links: BTreeMap<String, Vec<(GraphNode, FlowLink)>>,
    promises: BTreeMap<String, ControllerPromise>,
    /// Nodes materialized by promise fulfilment, keyed by node id.
    host_registry: BTreeMap<String, GraphNode>,
    /// How each fulfilled promise's hosts were given, for the ledger.
    fulfilments: BTreeMap<String, Vec<HostRef>>,
}

impl ConnectivityGraph {
    pub fn new(options: GraphOptions) -> Self {
        ConnectivityGraph { options, ..Default::default() }
    }

    pub fn options(&self) -> GraphOptions {
        self.options
    }

    /// Builds a graph from many profiles at once, evaluating pairs in
    /// parallel.
    pub fn from_profiles(
        profiles: Vec<DeviceProfile>,
        options: GraphOptions,
    ) -> Result<(Self, BuildTimings), TopologyError> {
        let mut graph = ConnectivityGraph::new(options);
        let mut timings = BuildTimings::default();
        let start = Instant::now();
        for p in profiles {
            if graph.profiles.contains_key(&p.id) {
                return Err(TopologyError::DuplicateProfile(p.id));
            }
            graph.profiles.insert(p.id.clone(), p);
        }
        let devices: Vec<&DeviceProfile> = graph.profiles.values().collect();
        let selections: Vec<(usize, usize, PairSelection)> = (0..devices.len())
            .into_par_iter()
            .flat_map_iter(|i| {
                let devices = &devices;
                (0..devices.len()).filter(move |&j| j != i).filter_map(move |j| {
                    let sel = select_pair(devices[i], devices[j]);
                    let useful = match (sel.from_aces.is_empty(), sel.to_aces.is_empty()) {
                        (false, false) => true,
                        (true, true) => false,
                        _ => options.one_sided_links,
                    };
                    useful.then_some((i, j, sel))
                })
            })
            .collect();
        timings.resolve = start.elapsed();

        let start = Instant::now();
        let links: Vec<FlowLink> = selections
            .par_iter()
            .filter_map(|(i, j, sel)| {
                let (src, dst) = (devices[*i], devices[*j]);
                let (stacks, prov) = pair_contribution(src, dst, sel, options)?;
                realize(device_node_id(&src.id), device_node_id(&dst.id), stacks, prov)
            })
            .collect();
        drop(selections);
        type DeviceParts = (String, Vec<(GraphNode, FlowLink)>, Vec<ControllerPromise>);
        let per_device: Vec<DeviceParts> =
            devices.par_iter().map(|p| (p.id.clone(), host_links(p), promises_for(p))).collect();
        for link in links {
            graph.pair_links.insert((link.source.clone(), link.target.clone()), link);
        }
        for (id, hl, promises) in per_device {
            graph.host_links.insert(id, hl);
            for p in promises {
                graph.promises.insert(p.promise_id.clone(), p);
            }
        }
        timings.merge_prune = start.elapsed();
        Ok((graph, timings))
    }

    pub fn add_profile(&mut self, profile: DeviceProfile) -> Result<(), TopologyError> {
        if self.profiles.contains_key(&profile.id) {
            return Err(TopologyError::DuplicateProfile(profile.id));
        }
        let options = self.options;
        let links: Vec<FlowLink> = self
            .profiles
            .values()
            .collect::<Vec<_>>()
            .par_iter()
            .flat_map_iter(|other| {
                [pair_link(&profile, other, options), pair_link(other, &profile, options)].into_iter().flatten()
            })
            .collect();
        for link in links {
            self.pair_links.insert((link.source.clone(), link.target.clone()), link);
        }
        self.host_links.insert(profile.id.clone(), host_links(&profile));
        for p in promises_for(&profile) {
            self.promises.insert(p.promise_id.clone(), p);
        }
        self.profiles.insert(profile.id.clone(), profile);
        Ok(())
    }

    pub fn remove_profile(&mut self, device_id: &str) -> Result<DeviceProfile, TopologyError> {
        let profile = self
            .profiles
            .remove(device_id)
            .ok_or_else(|| TopologyError::UnknownDevice(device_id.to_string()))?;
        let node = device_node_id(device_id);
        self.pair_links.retain(|(s, t), _| *s != node && *t != node);
        self.host_links.remove(device_id);
        self.promises.retain(|_, p| p.device_id != device_id);
        self.fulfilments.retain(|id, _| self.promises.contains_key(id));
        // Other devices' promises may point at the removed device.
        let mut reopened = Vec::new();
        for p in self.promises.values_mut() {
            if p.assigned_hosts.contains(&node) {
                p.assigned_hosts.retain(|h| *h != node);
                if p.assigned_hosts.is_empty() {
                    reopened.push(p.promise_id.clone());
                }
            }
        }
        for (id, hosts) in self.fulfilments.iter_mut() {
            hosts.retain(|h| !matches!(h, HostRef::Existing(n) if *n == node));
            if hosts.is_empty() {
                reopened.push(id.clone());
            }
        }
        for id in reopened {
            self.fulfilments.remove(&id);
        }
        self.collect_registry();
        Ok(profile)
    }

    fn collect_registry(&mut self) {
        let referenced: BTreeSet<&String> = self.promises.values().flat_map(|p| p.assigned_hosts.iter()).collect();
        self.host_registry.retain(|id, _| referenced.contains(id));
    }

    pub fn profile(&self, device_id: &str) -> Option<&DeviceProfile> {
        self.profiles.get(device_id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &DeviceProfile> {
        self.profiles.values()
    }

    pub fn promise(&self, promise_id: &str) -> Option<&ControllerPromise> {
        self.promises.get(promise_id)
    }

    /// Promises ordered by id.
    pub fn promises(&self) -> impl Iterator<Item = &ControllerPromise> {
        self.promises.values()
    }

    pub fn pending_promises(&self) -> usize {
        self.promises.values().filter(|p| p.is_pending()).count()
    }

    /// All nodes, ordered by id.
    pub fn nodes(&self) -> Vec<GraphNode> {
        let mut nodes: BTreeMap<String, GraphNode> = BTreeMap::new();
        for p in self.profiles.values() {
            let id = device_node_id(&p.id);
            let label = if p.model_name.is_empty() { p.id.clone() } else { p.model_name.clone() };
            nodes.insert(id.clone(), GraphNode { id, kind: NodeKind::Device, label, mud_url: Some(p.mud_url.clone()) });
        }
        for links in self.host_links.values() {
            for (node, _) in links {
                nodes.entry(node.id.clone()).or_insert_with(|| node.clone());
            }
        }
        for (id, node) in &self.host_registry {
            nodes.entry(id.clone()).or_insert_with(|| node.clone());
        }
        nodes.into_values().collect()
    }

    fn has_node(&self, id: &str) -> bool {
        if let Some(dev) = id.strip_prefix("device:") {
            return self.profiles.contains_key(dev);
        }
        self.host_registry.contains_key(id)
            || self.host_links.values().flatten().any(|(n, _)| n.id == id)
    }

    fn find_node(&self, id: &str) -> Option<GraphNode> {
        if !self.has_node(id) {
            return None;
        }
        self.nodes().into_iter().find(|n| n.id == id)
    }

    /// All links ordered by `(source, target)`. Contributions that land on
    /// the same directed pair are merged and pruned together.
    pub fn links(&self) -> Vec<FlowLink> {
        self.merged_links().into_iter().map(Cow::into_owned).collect()
    }

    pub fn link_count(&self) -> usize {
        self.merged_links().len()
    }

    pub(crate) fn merged_links(&self) -> Vec<Cow<'_, FlowLink>> {
        let promise_links = self.promise_links();
        let mut parts: Vec<Cow<'_, FlowLink>> = self
            .pair_links
            .values()
            .chain(self.host_links.values().flatten().map(|(_, l)| l))
            .map(Cow::Borrowed)
            .chain(promise_links.into_iter().map(Cow::Owned))
            .collect();
        // Stable, so contributions to one pair keep a fixed order.
        parts.sort_by(|a, b| (&a.source, &a.target).cmp(&(&b.source, &b.target)));
        let mut out: Vec<Cow<'_, FlowLink>> = Vec::with_capacity(parts.len());
        let mut merged: Vec<usize> = Vec::new();
        for link in parts {
            match out.last_mut() {
                Some(last) if last.source == link.source && last.target == link.target => {
                    let target = last.to_mut();
                    target.stacks.extend(link.stacks.iter().cloned());
                    target.provenance.extend(link.into_owned().provenance);
                    if merged.last() != Some(&(out.len() - 1)) {
                        merged.push(out.len() - 1);
                    }
                }
                _ => out.push(link),
            }
        }
        for i in merged {
            let link = out[i].to_mut();
            link.stacks = prune_stacks(&link.stacks);
        }
        out
    }

    fn promise_links(&self) -> Vec<FlowLink> {
        let mut out = Vec::new();
        for p in self.promises.values().filter(|p| !p.is_pending()) {
            let dev = device_node_id(&p.device_id);
            let kind = match p.kind {
                PromiseKind::Controller => EndpointKind::Controller,
                PromiseKind::MyController => EndpointKind::MyController,
            };
            for host in &p.assigned_hosts {
                for direction in [Direction::FromDevice, Direction::ToDevice] {
                    let stacks: Vec<ProtocolStack> =
                        p.stacks.iter().filter(|s| s.direction == direction).cloned().collect();
                    if stacks.is_empty() {
                        continue;
                    }
                    let (source, target, prov) = match direction {
                        Direction::FromDevice => (
                            dev.clone(),
                            host.clone(),
                            Provenance {
                                source_kind: Some(kind),
                                source_aces: p.aces.clone(),
                                target_kind: None,
                                target_aces: Vec::new(),
                                one_sided: false,
                            },
                        ),
                        Direction::ToDevice => (
                            host.clone(),
                            dev.clone(),
                            Provenance {
                                source_kind: None,
                                source_aces: Vec::new(),
                                target_kind: Some(kind),
                                target_aces: p.aces.clone(),
                                one_sided: false,
                            },
                        ),
                    };
                    out.extend(realize(source, target, stacks, vec![prov]));
                }
            }
        }
        out
    }

    /// Binds a pending promise to hosts and materializes any new host nodes.
    pub fn fulfill_promise(&mut self, promise_id: &str, hosts: &[HostRef]) -> Result<(), TopologyError> {
        let promise = self
            .promises
            .get(promise_id)
            .ok_or_else(|| TopologyError::UnknownPromise(promise_id.to_string()))?;
        if !promise.is_pending() {
            return Err(TopologyError::AlreadyFulfilled(promise_id.to_string()));
        }
        if hosts.is_empty() {
            return Err(TopologyError::EmptyHostList);
        }
        let own = device_node_id(&promise.device_id);
        let mut assigned: Vec<String> = Vec::new();
        let mut recorded: Vec<HostRef> = Vec::new();
        let mut new_nodes: Vec<GraphNode> = Vec::new();
        for host in hosts {
            let (node, how) = match host {
                HostRef::Existing(id) if self.has_node(id) => {
                    let node = self.find_node(id).expect("node exists");
                    (node, HostRef::Existing(id.clone()))
                }
                HostRef::Existing(id) if is_node_id(id) => return Err(TopologyError::UnknownNode(id.clone())),
                HostRef::Existing(name) => new_host(name, HostKind::default())?,
                HostRef::New { name, kind } => new_host(name, *kind)?,
            };
            if node.id == own {
                return Err(TopologyError::InvalidHost(host_label(host)));
            }
            if !assigned.contains(&node.id) {
                assigned.push(node.id.clone());
                recorded.push(how);
                if node.kind != NodeKind::Device {
                    new_nodes.push(node);
                }
            }
        }
        for node in new_nodes {
            self.host_registry.entry(node.id.clone()).or_insert(node);
        }
        self.fulfilments.insert(promise_id.to_string(), recorded);
        self.promises.get_mut(promise_id).expect("checked above").assigned_hosts = assigned;
        Ok(())
    }

    /// Stacks permitted on the link `src → dst`; empty when unlinked.
    pub fn query_flow(&self, src: &str, dst: &str) -> Result<Vec<ProtocolStack>, TopologyError> {
        for id in [src, dst] {
            if !self.has_node(id) {
                return Err(TopologyError::UnknownNode(id.to_string()));
            }
        }
        Ok(self
            .merged_links()
            .into_iter()
            .find(|l| l.source == src && l.target == dst)
            .map(|l| l.into_owned().stacks)
            .unwrap_or_default())
    }

    /// ACEs made redundant by other ACEs of the same device toward the same
    /// endpoint. Duplicates keep their first occurrence.
    pub fn redundancy_report(&self) -> Vec<RedundantAce> {
        self.profiles.values().flat_map(redundancy_for).collect()
    }

    pub fn ledger(&self) -> PromiseLedger {
        PromiseLedger {
            promises: self
                .fulfilments
                .iter()
                .map(|(id, hosts)| LedgerEntry {
                    promise_id: id.clone(),
                    class_uri: self.promises[id].class_uri.clone(),
                    hosts: hosts.clone(),
                })
                .collect(),
        }
    }

    /// Replays fulfilments; entries that no longer apply are returned with
    /// the reason and skipped.
    pub fn apply_ledger(&mut self, ledger: &PromiseLedger) -> Vec<(String, TopologyError)> {
        let mut skipped = Vec::new();
        for entry in &ledger.promises {
            // Devices removed since the entry was written drop out, as they
            // would have on removal.
            let hosts: Vec<HostRef> = entry
                .hosts
                .iter()
                .filter(|h| !matches!(h, HostRef::Existing(id) if id.starts_with("device:") && !self.has_node(id)))
                .cloned()
                .collect();
            if hosts.is_empty() && !entry.hosts.is_empty() {
                skipped.push((entry.promise_id.clone(), TopologyError::EmptyHostList));
                continue;
            }
            if let Err(e) = self.fulfill_promise(&entry.promise_id, &hosts) {
                skipped.push((entry.promise_id.clone(), e));
            }
        }
        skipped
    }

    /// Fulfils promises from a class-URI → hosts map; returns how many were
    /// bound. A device listed as a host of its own class is skipped for
    /// that device's promise.
    pub fn apply_controller_map(&mut self, map: &BTreeMap<String, Vec<HostRef>>) -> Result<usize, TopologyError> {
        let pending: Vec<(String, String, String)> = self
            .promises
            .values()
            .filter(|p| p.is_pending())
            .map(|p| (p.promise_id.clone(), p.class_uri.clone(), device_node_id(&p.device_id)))
            .collect();
        let mut bound = 0;
        for (id, class, own) in pending {
            let Some(hosts) = map.get(&class) else { continue };
            let hosts: Vec<HostRef> =
                hosts.iter().filter(|h| !matches!(h, HostRef::Existing(n) if *n == own)).cloned().collect();
            if !hosts.is_empty() {
                self.fulfill_promise(&id, &hosts)?;
                bound += 1;
            }
        }
        Ok(bound)
    }

    /// Per-link trees before and after pruning, for debugging.
    pub fn link_trees(&self) -> Vec<(String, String, AceTree, AceTree)> {
        let mut out = Vec::new();
        for (src, dst) in self.pair_links.keys() {
            let (Some(a), Some(b)) = (
                self.profiles.get(src.trim_start_matches("device:")),
                self.profiles.get(dst.trim_start_matches("device:")),
            ) else {
                continue;
            };
            let sel = select_pair(a, b);
            if let Some((stacks, _)) = pair_contribution(a, b, &sel, self.options) {
                let before = AceTree::build(&normalize(stacks));
                let mut after = before.clone();
                after.prune();
                out.push((src.clone(), dst.clone(), before, after));
            }
        }
        for p in self.profiles.values() {
            let dev = device_node_id(&p.id);
            for (direction, dns, aces) in dns_groups(p) {
                let stacks: Vec<ProtocolStack> = aces.iter().map(|a| a.stack.clone()).collect();
                let before = AceTree::build(&normalize(stacks));
                let mut after = before.clone();
                after.prune();
                let host = dns_node(dns).id;
                let (s, t) = match direction {
                    Direction::FromDevice => (dev.clone(), host),
                    Direction::ToDevice => (host, dev.clone()),
                };
                out.push((s, t, before, after));
            }
        }
        out.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        out
    }
}

fn new_host(name: &str, kind: HostKind) -> Result<(GraphNode, HostRef), TopologyError> {
    let name = name.trim();
    if name.is_empty() {
        return Err(TopologyError::InvalidHost(name.to_string()));
    }
    let node = GraphNode {
        id: format!("{}:{name}", host_kind_prefix(kind)),
        kind: kind.into(),
        label: name.to_string(),
        mud_url: None,
    };
    Ok((node, HostRef::New { name: name.to_string(), kind }))
}

/// Strings carrying a node-id prefix are references, never new host names.
fn is_node_id(s: &str) -> bool {
    ["device:", "host:", "controller:", "lan:", "gateway:"].iter().any(|p| s.starts_with(p))
}

fn host_label(h: &HostRef) -> String {
    match h {
        HostRef::Existing(s) => s.clone(),
        HostRef::New { name, .. } => name.clone(),
    }
}

fn redundancy_for(profile: &DeviceProfile) -> Vec<RedundantAce> {
    let mut out = Vec::new();
    for direction in [Direction::FromDevice, Direction::ToDevice] {
        let mut groups: Vec<(&AceEndpoint, Vec<&Ace>)> = Vec::new();
        for ace in profile.aces(direction) {
            match groups.iter_mut().find(|(e, _)| *e == &ace.endpoint) {
                Some((_, list)) => list.push(ace),
                None => groups.push((&ace.endpoint, vec![ace])),
            }
        }
        for (_, aces) in groups {
            let stacks: Vec<ProtocolStack> = aces.iter().map(|a| a.stack.clone()).collect();
            let mut tree = AceTree::build(&stacks);
            let events = tree.prune();
            let paths: Vec<_> = aces.iter().map(|a| tree_path(&a.stack)).collect();
            for (i, ace) in aces.iter().enumerate() {
                if let Some(first) = (0..i).find(|&k| paths[k] == paths[i]) {
                    out.push(RedundantAce {
                        device_id: profile.id.clone(),
                        ace: ace.name.to_string(),
                        reason: format!("duplicate of ACE {:?}", &*aces[first].name),
                        covered_by: aces[first].name.to_string(),
                    });
                    continue;
                }
                let Some(cover) = final_cover(&events, &ace.stack) else { continue };
                let cover_path = tree_path(&cover);
                let cover_ace = (0..aces.len()).find(|&k| paths[k] == cover_path).map(|k| aces[k].name.to_string());
                out.push(RedundantAce {
                    device_id: profile.id.clone(),
                    ace: ace.name.to_string(),
                    reason: format!("{} is covered by {}", ace.stack, cover),
                    covered_by: cover_ace.unwrap_or_default(),
                });
            }
        }
    }
    out
}

/// Follows prune events from `stack` to the surviving stack covering it.
fn final_cover(events: &[PruneEvent], stack: &ProtocolStack) -> Option<ProtocolStack> {
    let mut path = tree_path(stack);
    let mut cover = None;
    for _ in 0..=events.len() {
        match events.iter().find(|e| tree_path(&e.pruned) == path) {
            Some(e) => {
                path = tree_path(&e.covered_by);
                cover = Some(e.covered_by.clone());
            }
            None => break,
        }
    }
    cover
}
