//! MUD file (RFC 8520, YANG-modeled JSON per RFC 7951) parsing, format
//! correction and canonical serialization.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::model::{
    authority_of, device_id_for, Ace, AceEndpoint, DeviceProfile, Direction, EndpointKind, LayerValue, PortRange,
    Proto, ProtocolStack, OPEN_INTERNET,
};

pub const MUD_CONTAINER: &str = "ietf-mud:mud";
pub const ACLS_CONTAINER: &str = "ietf-access-control-list:acls";
const MUD_EXTENSION: &str = "ietf-mud:mud";
const SRC_DNSNAME: &str = "ietf-acldns:src-dnsname";
const DST_DNSNAME: &str = "ietf-acldns:dst-dnsname";
const DIRECTION_INITIATED: &str = "ietf-mud:direction-initiated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Error,
    Warning,
    FixedAutomatically,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::FixedAutomatically => "fixed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum IssueCode {
    MalformedJson,
    MissingMudContainer,
    MissingMudUrl,
    InvalidMudUrl,
    UnresolvedAclReference,
    UnsupportedMudVersion,
    ConflictingMatch,
    DuplicateAceName,
    MissingAceName,
    InvalidValue,
    UnknownNode,
    UnsupportedMatch,
    UnknownProtocol,
    UnsupportedOperator,
    MissingEndpoint,
    UnreferencedAcl,
    FileNotFound,
    KeyOrder,
    PortAsString,
    AceListWrapper,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub code: IssueCode,
    /// JSON pointer into the document.
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ValidationReport {
    pub file_ref: String,
    pub items: Vec<Issue>,
}

impl ValidationReport {
    pub fn new(file_ref: impl Into<String>) -> Self {
        ValidationReport { file_ref: file_ref.into(), items: Vec::new() }
    }

    pub fn with_file_ref(mut self, file_ref: impl Into<String>) -> Self {
        self.file_ref = file_ref.into();
        self
    }

    pub fn file_not_found(file_ref: impl Into<String>, reason: impl Into<String>) -> Self {
        let mut report = ValidationReport::new(file_ref);
        report.error(IssueCode::FileNotFound, "", reason);
        report
    }

    fn push(&mut self, severity: Severity, code: IssueCode, path: &str, message: impl Into<String>) {
        self.items.push(Issue { severity, code, path: path.to_string(), message: message.into() });
    }

    fn error(&mut self, code: IssueCode, path: &str, message: impl Into<String>) {
        self.push(Severity::Error, code, path, message);
    }

    fn warn(&mut self, code: IssueCode, path: &str, message: impl Into<String>) {
        self.push(Severity::Warning, code, path, message);
    }

    fn fixed(&mut self, code: IssueCode, path: &str, message: impl Into<String>) {
        self.push(Severity::FixedAutomatically, code, path, message);
    }

    pub fn has_errors(&self) -> bool {
        self.items.iter().any(|i| i.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.items.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn count(&self, severity: Severity) -> usize {
        self.items.iter().filter(|i| i.severity == severity).count()
    }

    pub fn has_code(&self, code: IssueCode) -> bool {
        self.items.iter().any(|i| i.code == code)
    }

    /// Single-line JSON rendering.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.has_errors() { "INVALID" } else { "ok" };
        writeln!(
            f,
            "{}: {status} ({} errors, {} warnings, {} fixes)",
            self.file_ref,
            self.count(Severity::Error),
            self.count(Severity::Warning),
            self.count(Severity::FixedAutomatically)
        )?;
        for item in &self.items {
            let path = if item.path.is_empty() { "/" } else { &item.path };
            writeln!(f, "  {:<7} {:?} at {path}: {}", item.severity.to_string(), item.code, item.message)?;
        }
        Ok(())
    }
}

fn pointer(base: &str, token: impl fmt::Display) -> String {
    let token = token.to_string().replace('~', "~0").replace('/', "~1");
    format!("{base}/{token}")
}

/// Parses a MUD file. On success returns the profile together with any
/// warnings; a document with at least one error yields only the report.
pub fn parse_mud_file(document: &str) -> Result<(DeviceProfile, ValidationReport), ValidationReport> {
    let mut report = ValidationReport::default();
    let root: Value = match serde_json::from_str(document) {
        Ok(v) => v,
        Err(e) => {
            report.error(IssueCode::MalformedJson, "", e.to_string());
            return Err(report);
        }
    };
    let profile = Parser { report: &mut report }.document(&root);
    match profile {
        Some(p) if !report.has_errors() => Ok((p, report)),
        _ => Err(report),
    }
}

struct Parser<'r> {
    report: &'r mut ValidationReport,
}

struct AclSource<'a> {
    name: &'a str,
    path: String,
    aces: Vec<(String, &'a Value)>,
}

impl Parser<'_> {
    fn document(&mut self, root: &Value) -> Option<DeviceProfile> {
        let Some(top) = root.as_object() else {
            self.report.error(IssueCode::MissingMudContainer, "", "document is not a JSON object");
            return None;
        };
        for key in top.keys() {
            if key != MUD_CONTAINER && key != ACLS_CONTAINER {
                self.report.warn(IssueCode::UnknownNode, &pointer("", key), format!("unknown top-level node {key:?}"));
            }
        }
        let Some(mud) = top.get(MUD_CONTAINER).and_then(Value::as_object) else {
            self.report.error(
                IssueCode::MissingMudContainer,
                "",
                format!("missing {MUD_CONTAINER:?} container"),
            );
            return None;
        };
        let mud_path = pointer("", MUD_CONTAINER);
        let mut profile = self.mud_container(mud, &mud_path)?;

        let acls = self.acl_index(top.get(ACLS_CONTAINER));
        let mut used = HashSet::new();
        for direction in [Direction::FromDevice, Direction::ToDevice] {
            let key = match direction {
                Direction::FromDevice => "from-device-policy",
                Direction::ToDevice => "to-device-policy",
            };
            let Some(policy) = mud.get(key) else { continue };
            let policy_path = pointer(&mud_path, key);
            for (name, name_path) in self.policy_refs(policy, &policy_path) {
                let Some(acl) = acls.get(name.as_str()) else {
                    self.report.error(
                        IssueCode::UnresolvedAclReference,
                        &name_path,
                        format!("{key} names ACL {name:?} which is not defined"),
                    );
                    continue;
                };
                used.insert(acl.name);
                for (ace_path, ace) in &acl.aces {
                    if let Some(ace) = self.ace(ace, ace_path, acl.name, direction) {
                        match direction {
                            Direction::FromDevice => profile.from_device.push(ace),
                            Direction::ToDevice => profile.to_device.push(ace),
                        }
                    }
                }
            }
        }
        for acl in acls.values() {
            if !used.contains(acl.name) {
                self.report.warn(
                    IssueCode::UnreferencedAcl,
                    &acl.path,
                    format!("ACL {:?} is not referenced by any policy", acl.name),
                );
            }
        }
        Some(profile)
    }

    fn mud_container(&mut self, mud: &Map<String, Value>, path: &str) -> Option<DeviceProfile> {
        const KNOWN: &[&str] = &[
            "mud-version",
            "mud-url",
            "mud-signature",
            "last-update",
            "cache-validity",
            "is-supported",
            "systeminfo",
            "mfg-name",
            "model-name",
            "firmware-rev",
            "software-rev",
            "documentation",
            "extensions",
            "from-device-policy",
            "to-device-policy",
        ];
        for key in mud.keys() {
            if !KNOWN.contains(&key.as_str()) {
                self.report.warn(IssueCode::UnknownNode, &pointer(path, key), format!("unknown MUD node {key:?}"));
            }
        }
        match mud.get("mud-version") {
            Some(v) if v.as_u64() == Some(1) => {}
            Some(v) => self.report.warn(
                IssueCode::UnsupportedMudVersion,
                &pointer(path, "mud-version"),
                format!("mud-version {v} is not 1; continuing"),
            ),
            None => self.report.warn(
                IssueCode::UnsupportedMudVersion,
                &pointer(path, "mud-version"),
                "mud-version is missing; assuming 1",
            ),
        }
        let url_path = pointer(path, "mud-url");
        let Some(mud_url) = mud.get("mud-url").and_then(Value::as_str) else {
            self.report.error(IssueCode::MissingMudUrl, &url_path, "mud-url is missing or not a string");
            return None;
        };
        let mut profile = match DeviceProfile::new(mud_url) {
            Ok(p) => p,
            Err(e) => {
                self.report.error(IssueCode::InvalidMudUrl, &url_path, e.to_string());
                return None;
            }
        };
        debug_assert_eq!(profile.authority, authority_of(mud_url).unwrap_or_default());
        profile.id = device_id_for(mud_url);
        profile.systeminfo = self.string_field(mud, path, "systeminfo");
        profile.mfg_name = self.string_field(mud, path, "mfg-name");
        profile.model_name = self.string_field(mud, path, "model-name");
        if let Some(v) = mud.get("cache-validity") {
            match v.as_u64() {
                Some(h) if (1..=168).contains(&h) => profile.cache_validity = h as u32,
                _ => self.report.warn(
                    IssueCode::InvalidValue,
                    &pointer(path, "cache-validity"),
                    format!("cache-validity {v} is not an hour count in 1..=168; using 48"),
                ),
            }
        }
        if let Some(v) = mud.get("is-supported") {
            match v.as_bool() {
                Some(b) => profile.is_supported = b,
                None => self.report.warn(
                    IssueCode::InvalidValue,
                    &pointer(path, "is-supported"),
                    "is-supported is not a boolean; assuming true",
                ),
            }
        }
        Some(profile)
    }

    fn string_field(&mut self, obj: &Map<String, Value>, path: &str, key: &str) -> String {
        match obj.get(key) {
            None => String::new(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                self.report.warn(IssueCode::InvalidValue, &pointer(path, key), format!("{key} is not a string"));
                String::new()
            }
        }
    }

    fn policy_refs(&mut self, policy: &Value, path: &str) -> Vec<(String, String)> {
        let list_path = pointer(&pointer(path, "access-lists"), "access-list");
        let Some(list) = policy.pointer("/access-lists/access-list").and_then(Value::as_array) else {
            self.report.error(IssueCode::InvalidValue, &list_path, "policy has no access-lists/access-list array");
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, entry) in list.iter().enumerate() {
            let name_path = pointer(&pointer(&list_path, i), "name");
            match entry.get("name").and_then(Value::as_str) {
                Some(n) => out.push((n.to_string(), name_path)),
                None => self.report.error(IssueCode::InvalidValue, &name_path, "access-list entry has no name"),
            }
        }
        out
    }

    fn acl_index<'a>(&mut self, acls: Option<&'a Value>) -> BTreeMap<&'a str, AclSource<'a>> {
        let mut out = BTreeMap::new();
        let Some(acls) = acls else { return out };
        let base = pointer(&pointer("", ACLS_CONTAINER), "acl");
        let Some(list) = acls.get("acl").and_then(Value::as_array) else {
            self.report.error(IssueCode::InvalidValue, &base, "acls container has no acl array");
            return out;
        };
        for (i, acl) in list.iter().enumerate() {
            let acl_path = pointer(&base, i);
            let Some(name) = acl.get("name").and_then(Value::as_str) else {
                self.report.error(IssueCode::InvalidValue, &pointer(&acl_path, "name"), "ACL has no name");
                continue;
            };
            let ace_base = pointer(&pointer(&acl_path, "aces"), "ace");
            let aces = match acl.pointer("/aces/ace") {
                Some(Value::Array(a)) => a.iter().enumerate().map(|(j, v)| (pointer(&ace_base, j), v)).collect(),
                None => Vec::new(),
                Some(_) => {
                    self.report.error(IssueCode::InvalidValue, &ace_base, "ace must be a list");
                    Vec::new()
                }
            };
            let mut seen = HashSet::new();
            for (p, ace) in &aces {
                if let Some(n) = ace.get("name").and_then(Value::as_str) {
                    if !seen.insert(n) {
                        self.report.error(
                            IssueCode::DuplicateAceName,
                            &pointer(p, "name"),
                            format!("ACE name {n:?} repeats within ACL {name:?}"),
                        );
                    }
                }
            }
            if out.contains_key(name) {
                self.report.error(IssueCode::InvalidValue, &acl_path, format!("ACL {name:?} is defined twice"));
                continue;
            }
            out.insert(name, AclSource { name, path: acl_path, aces });
        }
        out
    }

    fn ace(&mut self, ace: &Value, path: &str, acl: &str, direction: Direction) -> Option<Ace> {
        let Some(name) = ace.get("name").and_then(Value::as_str) else {
            self.report.error(IssueCode::MissingAceName, &pointer(path, "name"), "ACE has no name");
            return None;
        };
        if let Some(fwd) = ace.pointer("/actions/forwarding") {
            if fwd.as_str() != Some("accept") {
                self.report.warn(
                    IssueCode::UnsupportedMatch,
                    &pointer(&pointer(path, "actions"), "forwarding"),
                    format!("forwarding action {fwd} is not accept; treated as accept"),
                );
            }
        }
        let matches_path = pointer(path, "matches");
        let empty = Map::new();
        let matches = match ace.get("matches") {
            Some(Value::Object(m)) => m,
            None => &empty,
            Some(_) => {
                self.report.error(IssueCode::InvalidValue, &matches_path, "matches is not an object");
                return None;
            }
        };
        let (endpoint, stack) = self.matches(matches, &matches_path, direction)?;
        Some(Ace { name: Arc::from(name), acl: Arc::from(acl), endpoint, stack })
    }

    fn matches(
        &mut self,
        m: &Map<String, Value>,
        path: &str,
        direction: Direction,
    ) -> Option<(AceEndpoint, ProtocolStack)> {
        let mut network = LayerValue::Any;
        let mut l3: Option<(&str, &Map<String, Value>)> = None;
        let mut l4: Option<(&str, &Value)> = None;
        let mut endpoints: Vec<(AceEndpoint, String)> = Vec::new();
        let mut failed = false;

        for (key, value) in m {
            let here = pointer(path, key);
            match key.as_str() {
                "ipv4" | "ipv6" => {
                    if l3.is_some() {
                        self.report.error(IssueCode::ConflictingMatch, &here, "ACE matches both ipv4 and ipv6");
                        failed = true;
                        continue;
                    }
                    let Some(obj) = value.as_object() else {
                        self.report.error(IssueCode::InvalidValue, &here, format!("{key} is not an object"));
                        failed = true;
                        continue;
                    };
                    network = LayerValue::proto(if key == "ipv4" { Proto::Ipv4 } else { Proto::Ipv6 });
                    l3 = Some((key, obj));
                }
                "tcp" | "udp" | "icmp" => {
                    if let Some((prev, _)) = l4 {
                        self.report.error(
                            IssueCode::ConflictingMatch,
                            &here,
                            format!("ACE matches both {prev} and {key}"),
                        );
                        failed = true;
                        continue;
                    }
                    l4 = Some((key, value));
                }
                MUD_EXTENSION => match self.mud_extension(value, &here) {
                    Some(found) => endpoints.extend(found),
                    None => failed = true,
                },
                _ => self.report.warn(IssueCode::UnsupportedMatch, &here, format!("match node {key:?} is ignored")),
            }
        }

        // Protocol number and DNS names live in the l3 container.
        let mut protocol: Option<(u64, String)> = None;
        if let Some((l3_key, obj)) = l3 {
            let l3_path = pointer(path, l3_key);
            let (remote, local) = match direction {
                Direction::FromDevice => (DST_DNSNAME, SRC_DNSNAME),
                Direction::ToDevice => (SRC_DNSNAME, DST_DNSNAME),
            };
            for (key, value) in obj {
                let here = pointer(&l3_path, key);
                if key == "protocol" {
                    match value.as_u64() {
                        Some(n) => protocol = Some((n, here)),
                        None => {
                            self.report.error(IssueCode::InvalidValue, &here, "protocol is not a number");
                            failed = true;
                        }
                    }
                } else if key == remote {
                    match value.as_str() {
                        Some(dns) if !dns.is_empty() => endpoints.push((
                            AceEndpoint::new(EndpointKind::DomainName, dns.to_ascii_lowercase()).expect("non-empty"),
                            here,
                        )),
                        _ => {
                            self.report.error(IssueCode::InvalidValue, &here, "DNS name must be a non-empty string");
                            failed = true;
                        }
                    }
                } else if key == local {
                    self.report.warn(
                        IssueCode::UnsupportedMatch,
                        &here,
                        format!("{key} names this device's own side for a {} ACE; ignored", direction.as_str()),
                    );
                } else {
                    self.report.warn(IssueCode::UnsupportedMatch, &here, format!("{l3_key} match {key:?} is ignored"));
                }
            }
        }

        let mut transport = LayerValue::Any;
        let (mut src_port, mut dst_port) = (LayerValue::Any, LayerValue::Any);
        match l4 {
            Some((key, value)) => {
                let l4_path = pointer(path, key);
                let proto = match key {
                    "tcp" => Proto::Tcp,
                    "udp" => Proto::Udp,
                    _ => Proto::Icmp,
                };
                transport = LayerValue::proto(proto);
                if let Some((n, p)) = &protocol {
                    if protocol_for(*n) != Some(proto) {
                        self.report.warn(
                            IssueCode::ConflictingMatch,
                            p,
                            format!("protocol {n} disagrees with the {key} container; using {proto}"),
                        );
                    }
                }
                match value.as_object() {
                    Some(obj) => {
                        for (k, v) in obj {
                            let here = pointer(&l4_path, k);
                            match (proto, k.as_str()) {
                                (Proto::Tcp | Proto::Udp, "source-port") => {
                                    src_port = self.port_match(v, &here).unwrap_or(LayerValue::Any)
                                }
                                (Proto::Tcp | Proto::Udp, "destination-port") => {
                                    dst_port = self.port_match(v, &here).unwrap_or(LayerValue::Any)
                                }
                                (Proto::Tcp, DIRECTION_INITIATED) => {}
                                _ => self.report.warn(
                                    IssueCode::UnsupportedMatch,
                                    &here,
                                    format!("{key} match {k:?} is ignored"),
                                ),
                            }
                        }
                    }
                    None => {
                        self.report.error(IssueCode::InvalidValue, &l4_path, format!("{key} is not an object"));
                        failed = true;
                    }
                }
            }
            None => {
                if let Some((n, p)) = &protocol {
                    match protocol_for(*n) {
                        Some(proto) => transport = LayerValue::proto(proto),
                        None => self.report.warn(
                            IssueCode::UnknownProtocol,
                            p,
                            format!("protocol {n} is not TCP, UDP or ICMP; transport treated as any"),
                        ),
                    }
                }
            }
        }

        if endpoints.len() > 1 {
            let names: Vec<String> = endpoints.iter().map(|(e, _)| e.kind().to_string()).collect();
            self.report.error(
                IssueCode::ConflictingMatch,
                &endpoints[1].1,
                format!("ACE names more than one endpoint abstraction: {}", names.join(", ")),
            );
            return None;
        }
        if failed {
            return None;
        }
        let endpoint = match endpoints.pop() {
            Some((e, _)) => e,
            None => {
                self.report.warn(
                    IssueCode::MissingEndpoint,
                    path,
                    "ACE names no endpoint; treated as the open Internet (\"*\")",
                );
                AceEndpoint::new(EndpointKind::DomainName, OPEN_INTERNET).expect("non-empty")
            }
        };
        let stack = ProtocolStack::new(network, transport, src_port, dst_port, direction)
            .expect("parser fills slots with matching layers");
        Some((endpoint, stack))
    }

    fn mud_extension(&mut self, value: &Value, path: &str) -> Option<Vec<(AceEndpoint, String)>> {
        let Some(obj) = value.as_object() else {
            self.report.error(IssueCode::InvalidValue, path, "ietf-mud:mud match is not an object");
            return None;
        };
        let mut out = Vec::new();
        for (key, v) in obj {
            let here = pointer(path, key);
            let kind = match key.as_str() {
                "manufacturer" => EndpointKind::Manufacturer,
                "same-manufacturer" => EndpointKind::SameManufacturer,
                "model" => EndpointKind::Model,
                "local-networks" => EndpointKind::LocalNetworks,
                "controller" => EndpointKind::Controller,
                "my-controller" => EndpointKind::MyController,
                _ => {
                    self.report.warn(IssueCode::UnknownNode, &here, format!("unknown MUD match extension {key:?}"));
                    continue;
                }
            };
            if kind.has_value() {
                match v.as_str() {
                    Some(s) if !s.is_empty() => {
                        let s = if kind == EndpointKind::Manufacturer { s.to_ascii_lowercase() } else { s.to_string() };
                        out.push((AceEndpoint::new(kind, s).expect("non-empty"), here));
                    }
                    _ => {
                        self.report.error(IssueCode::InvalidValue, &here, format!("{key} needs a non-empty string"));
                        return None;
                    }
                }
            } else {
                if !is_empty_leaf(v) {
                    self.report.warn(IssueCode::InvalidValue, &here, format!("{key} should be [null]"));
                }
                out.push((AceEndpoint::bare(kind), here));
            }
        }
        Some(out)
    }

    fn port_match(&mut self, v: &Value, path: &str) -> Option<LayerValue> {
        let Some(obj) = v.as_object() else {
            self.report.warn(IssueCode::InvalidValue, path, "port match is not an object; treated as any");
            return None;
        };
        let port_at = |key: &str| obj.get(key).and_then(Value::as_u64).and_then(|n| u16::try_from(n).ok());
        if obj.contains_key("lower-port") || obj.contains_key("upper-port") {
            return match (port_at("lower-port"), port_at("upper-port")) {
                (Some(lo), Some(hi)) if lo <= hi => Some(LayerValue::port_range(lo, hi)),
                _ => {
                    self.report.warn(IssueCode::InvalidValue, path, "invalid port range; treated as any");
                    None
                }
            };
        }
        let op = obj.get("operator").and_then(Value::as_str).unwrap_or("eq");
        if op != "eq" {
            self.report.warn(
                IssueCode::UnsupportedOperator,
                &pointer(path, "operator"),
                format!("port operator {op:?} is not supported; treated as any"),
            );
            return None;
        }
        match port_at("port") {
            Some(p) => Some(LayerValue::port(p)),
            None => {
                self.report.warn(IssueCode::InvalidValue, &pointer(path, "port"), "port is not a number in 0..=65535");
                None
            }
        }
    }
}

fn is_empty_leaf(v: &Value) -> bool {
    matches!(v, Value::Array(a) if a.len() == 1 && a[0].is_null())
}

/// IANA protocol number to transport protocol, for the numbers this tool models.
pub fn protocol_for(number: u64) -> Option<Proto> {
    match number {
        6 => Some(Proto::Tcp),
        17 => Some(Proto::Udp),
        1 | 58 => Some(Proto::Icmp),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Serialization

/// Recursively sorts object keys.
pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut entries: Vec<(&String, &Value)> = map.iter().collect();
            entries.sort_by(|a, b| a.0.cmp(b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k.clone(), canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        other => other.clone(),
    }
}

/// Pretty JSON (two-space indent) with a trailing newline.
pub fn to_canonical_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&canonicalize(value)).expect("JSON value serializes");
    s.push('\n');
    s
}

/// Serializes a profile as a canonical MUD file.
///
/// Layer values a single MUD ACE cannot express (several named protocols,
/// several port ranges, ports without a transport protocol, a DNS name
/// without an IP version) are split across ACEs named `<name>.1`, `<name>.2`
/// and so on. Profiles produced by [`parse_mud_file`] never need this and
/// round-trip exactly.
pub fn serialize_profile(profile: &DeviceProfile) -> String {
    let mut acls: Vec<Value> = Vec::new();
    let mut emitted: BTreeMap<String, usize> = BTreeMap::new();
    let mut policies: [Vec<String>; 2] = [Vec::new(), Vec::new()];

    for (slot, direction) in [Direction::FromDevice, Direction::ToDevice].into_iter().enumerate() {
        let mut groups: Vec<(Arc<str>, Vec<&Ace>)> = Vec::new();
        for ace in profile.aces(direction) {
            match groups.iter_mut().find(|(n, _)| *n == ace.acl) {
                Some((_, list)) => list.push(ace),
                None => groups.push((ace.acl.clone(), vec![ace])),
            }
        }
        for (name, aces) in groups {
            let entries: Vec<Value> = aces.iter().flat_map(|a| ace_json(a)).collect();
            let acl_type = acl_type(&entries);
            let mut acl_name = name.to_string();
            if let Some(&idx) = emitted.get(&acl_name) {
                if acls[idx]["aces"]["ace"] == Value::Array(entries.clone()) {
                    policies[slot].push(acl_name);
                    continue;
                }
                acl_name = format!("{acl_name}-{}", direction.as_str());
            }
            emitted.insert(acl_name.clone(), acls.len());
            acls.push(json!({"name": acl_name, "type": acl_type, "aces": {"ace": entries}}));
            policies[slot].push(acl_name);
        }
    }

    let refs = |names: &[String]| {
        json!({"access-lists": {"access-list": names.iter().map(|n| json!({"name": n})).collect::<Vec<_>>()}})
    };
    let mut mud = Map::new();
    mud.insert("mud-version".into(), json!(1));
    mud.insert("mud-url".into(), json!(profile.mud_url));
    mud.insert("cache-validity".into(), json!(profile.cache_validity));
    mud.insert("is-supported".into(), json!(profile.is_supported));
    for (key, value) in [
        ("systeminfo", &profile.systeminfo),
        ("mfg-name", &profile.mfg_name),
        ("model-name", &profile.model_name),
    ] {
        if !value.is_empty() {
            mud.insert(key.into(), json!(value));
        }
    }
    mud.insert("from-device-policy".into(), refs(&policies[0]));
    mud.insert("to-device-policy".into(), refs(&policies[1]));
    let doc = json!({MUD_CONTAINER: Value::Object(mud), ACLS_CONTAINER: {"acl": acls}});
    to_canonical_text(&doc)
}

fn acl_type(entries: &[Value]) -> &'static str {
    let has = |k: &str| entries.iter().any(|e| e["matches"].get(k).is_some());
    match (has("ipv4"), has("ipv6")) {
        (true, false) => "ipv4-acl-type",
        (false, true) => "ipv6-acl-type",
        _ => "mixed-eth-ipv4-ipv6-acl-type",
    }
}

fn split_named(v: &LayerValue) -> Vec<Option<Proto>> {
    match v {
        LayerValue::Any => vec![None],
        LayerValue::Named(set) => set.iter().map(Some).collect(),
        LayerValue::Ports(_) => unreachable!("named slot holds ports"),
    }
}

fn split_ports(v: &LayerValue) -> Vec<Option<PortRange>> {
    match v {
        LayerValue::Ports(set) => set.ranges().iter().copied().map(Some).collect(),
        _ => vec![None],
    }
}

fn ace_json(ace: &Ace) -> Vec<Value> {
    let s = &ace.stack;
    let dns = (ace.endpoint.kind() == EndpointKind::DomainName && ace.endpoint.value() != OPEN_INTERNET)
        .then(|| ace.endpoint.value());
    let networks = match (&s.network, dns) {
        (LayerValue::Any, Some(_)) => vec![Some(Proto::Ipv4), Some(Proto::Ipv6)],
        (v, _) => split_named(v),
    };
    let has_ports = !s.src_port.is_any() || !s.dst_port.is_any();
    let transports = match &s.transport {
        LayerValue::Any if has_ports => vec![Some(Proto::Tcp), Some(Proto::Udp)],
        v => split_named(v),
    };
    let mut variants = Vec::new();
    for &net in &networks {
        for &tr in &transports {
            let ports_allowed = matches!(tr, Some(Proto::Tcp | Proto::Udp));
            let (srcs, dsts) = if ports_allowed {
                (split_ports(&s.src_port), split_ports(&s.dst_port))
            } else {
                (vec![None], vec![None])
            };
            for &sp in &srcs {
                for &dp in &dsts {
                    variants.push((net, tr, sp, dp));
                }
            }
        }
    }
    let many = variants.len() > 1;
    variants
        .into_iter()
        .enumerate()
        .map(|(i, (net, tr, sp, dp))| {
            let name = if many && i > 0 { format!("{}.{i}", ace.name) } else { ace.name.to_string() };
            let mut matches = Map::new();
            if let Some(net) = net {
                let mut l3 = Map::new();
                if let Some(tr) = tr {
                    let number = match (tr, net) {
                        (Proto::Tcp, _) => 6,
                        (Proto::Udp, _) => 17,
                        (Proto::Icmp, Proto::Ipv6) => 58,
                        _ => 1,
                    };
                    l3.insert("protocol".into(), json!(number));
                }
                if let Some(d) = dns {
                    let key = match s.direction {
                        Direction::FromDevice => DST_DNSNAME,
                        Direction::ToDevice => SRC_DNSNAME,
                    };
                    l3.insert(key.into(), json!(d));
                }
                let key = if net == Proto::Ipv4 { "ipv4" } else { "ipv6" };
                matches.insert(key.into(), Value::Object(l3));
            }
            if let Some(tr) = tr {
                let mut l4 = Map::new();
                if let Some(r) = sp {
                    l4.insert("source-port".into(), port_json(r));
                }
                if let Some(r) = dp {
                    l4.insert("destination-port".into(), port_json(r));
                }
                let key = match tr {
                    Proto::Tcp => "tcp",
                    Proto::Udp => "udp",
                    _ => "icmp",
                };
                if net.is_none() || !l4.is_empty() {
                    matches.insert(key.into(), Value::Object(l4));
                }
            }
            if ace.endpoint.kind() != EndpointKind::DomainName {
                let v = if ace.endpoint.kind().has_value() { json!(ace.endpoint.value()) } else { json!([null]) };
                matches.insert(MUD_EXTENSION.into(), json!({ace.endpoint.kind().as_str(): v}));
            }
            json!({"name": name, "matches": matches, "actions": {"forwarding": "accept"}})
        })
        .collect()
}

fn port_json(r: PortRange) -> Value {
    if r.lo == r.hi {
        json!({"operator": "eq", "port": r.lo})
    } else {
        json!({"lower-port": r.lo, "upper-port": r.hi})
    }
}

// ---------------------------------------------------------------------------
// Format correction

/// Applies semantics-preserving fixes and returns the canonical text.
///
/// Fixes: port numbers written as strings become integers, a lone ACE
/// object where the `ace` list belongs is wrapped in a list, object keys are
/// sorted and whitespace is normalized. Each fix is logged as
/// `FixedAutomatically`.
pub fn format_correct(document: &str) -> Result<(String, ValidationReport), ValidationReport> {
    let mut report = ValidationReport::default();
    let mut value: Value = match serde_json::from_str(document) {
        Ok(v) => v,
        Err(e) => {
            report.error(IssueCode::MalformedJson, "", e.to_string());
            return Err(report);
        }
    };
    let mut as_written = serde_json::to_string_pretty(&value).expect("JSON value serializes");
    as_written.push('\n');
    if as_written != document {
        report.fixed(IssueCode::Whitespace, "", "whitespace normalized");
    }
    fix_tree(&mut value, "", &mut report);
    let out = to_canonical_text(&value);
    Ok((out, report))
}

fn fix_tree(value: &mut Value, path: &str, report: &mut ValidationReport) {
    match value {
        Value::Object(map) => {
            if !map.keys().zip(map.keys().skip(1)).all(|(a, b)| a <= b) {
                report.fixed(IssueCode::KeyOrder, path, "object keys sorted");
            }
            if let Some(aces) = map.get_mut("aces") {
                wrap_ace_list(aces, &pointer(path, "aces"), report);
            }
            for (key, child) in map.iter_mut() {
                let here = pointer(path, key);
                if matches!(key.as_str(), "port" | "lower-port" | "upper-port") {
                    if let Value::String(s) = child {
                        if let Ok(n) = s.trim().parse::<u16>() {
                            report.fixed(IssueCode::PortAsString, &here, format!("port {s:?} converted to {n}"));
                            *child = json!(n);
                        }
                    }
                }
                fix_tree(child, &here, report);
            }
        }
        Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                fix_tree(item, &pointer(path, i), report);
            }
        }
        _ => {}
    }
}

fn wrap_ace_list(aces: &mut Value, path: &str, report: &mut ValidationReport) {
    let Value::Object(obj) = aces else { return };
    if let Some(single) = obj.get_mut("ace") {
        if single.is_object() {
            let inner = single.take();
            *single = Value::Array(vec![inner]);
            report.fixed(IssueCode::AceListWrapper, &pointer(path, "ace"), "single ACE wrapped in a list");
        }
    } else if obj.contains_key("name") || obj.contains_key("matches") {
        let inner = std::mem::take(obj);
        obj.insert("ace".into(), Value::Array(vec![Value::Object(inner)]));
        report.fixed(IssueCode::AceListWrapper, path, "bare ACE moved into an ace list");
    }
}
