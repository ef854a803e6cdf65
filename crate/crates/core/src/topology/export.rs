//! Canonical JSON and DOT renderings of a [`ConnectivityGraph`].
//!
//! Writing goes through borrowed views so large graphs stream straight to
//! the output; the owned `*Out` types are for reading exports back.

use std::fmt::{Display, Write as _};
use std::io;

use serde::ser::{SerializeSeq, SerializeStruct};
use serde::{Deserialize, Serialize, Serializer};

use super::{ConnectivityGraph, FlowLink, GraphNode, NodeKind, Provenance};
use crate::model::{ControllerPromise, Direction, EndpointKind, PromiseKind, ProtocolStack};
use crate::tree::dot_quote;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GraphExport {
    pub version: String,
    pub nodes: Vec<NodeOut>,
    pub links: Vec<LinkOut>,
    pub promises: Vec<PromiseOut>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NodeOut {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mud_url: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StackOut {
    pub network: String,
    pub transport: String,
    pub src_port: String,
    pub dst_port: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub direction: Option<Direction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProvenanceOut {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source_kind: Option<EndpointKind>,
    pub source_aces: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub target_kind: Option<EndpointKind>,
    pub target_aces: Vec<String>,
    pub one_sided: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LinkOut {
    pub source: String,
    pub target: String,
    pub stacks: Vec<StackOut>,
    pub provenance: Vec<ProvenanceOut>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PromiseOut {
    pub id: String,
    pub device_id: String,
    pub kind: PromiseKind,
    pub class_uri: String,
    pub status: String,
    pub hosts: Vec<String>,
    pub stacks: Vec<StackOut>,
    pub aces: Vec<String>,
}

struct Shown<'a, T: Display>(&'a T);

impl<T: Display> Serialize for Shown<'_, T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self.0)
    }
}

struct Seq<'a, T, V>(&'a [T], fn(&'a T) -> V);

impl<'a, T, V: Serialize> Serialize for Seq<'a, T, V> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.len()))?;
        for item in self.0 {
            seq.serialize_element(&(self.1)(item))?;
        }
        seq.end()
    }
}

pub struct StackView<'a>(pub &'a ProtocolStack, pub bool);

impl Serialize for StackView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let StackView(stack, with_direction) = *self;
        let mut st = s.serialize_struct("Stack", if with_direction { 5 } else { 4 })?;
        st.serialize_field("network", &Shown(&stack.network))?;
        st.serialize_field("transport", &Shown(&stack.transport))?;
        st.serialize_field("srcPort", &Shown(&stack.src_port))?;
        st.serialize_field("dstPort", &Shown(&stack.dst_port))?;
        if with_direction {
            st.serialize_field("direction", &stack.direction)?;
        }
        st.end()
    }
}

fn bare_stack(s: &ProtocolStack) -> StackView<'_> {
    StackView(s, false)
}

fn directed_stack(s: &ProtocolStack) -> StackView<'_> {
    StackView(s, true)
}

fn name_str(s: &std::sync::Arc<str>) -> &str {
    s
}

struct ProvenanceView<'a>(&'a Provenance);

impl Serialize for ProvenanceView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let p = self.0;
        let n = 3 + p.source_kind.is_some() as usize + p.target_kind.is_some() as usize;
        let mut st = s.serialize_struct("Provenance", n)?;
        if let Some(k) = p.source_kind {
            st.serialize_field("sourceKind", &k)?;
        }
        st.serialize_field("sourceAces", &Seq(&p.source_aces, name_str))?;
        if let Some(k) = p.target_kind {
            st.serialize_field("targetKind", &k)?;
        }
        st.serialize_field("targetAces", &Seq(&p.target_aces, name_str))?;
        st.serialize_field("oneSided", &p.one_sided)?;
        st.end()
    }
}

pub struct LinkView<'a>(pub &'a FlowLink);

impl Serialize for LinkView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let l = self.0;
        let mut st = s.serialize_struct("Link", 4)?;
        st.serialize_field("source", &l.source)?;
        st.serialize_field("target", &l.target)?;
        st.serialize_field("stacks", &Seq(&l.stacks, bare_stack))?;
        st.serialize_field("provenance", &Seq(&l.provenance, ProvenanceView))?;
        st.end()
    }
}

struct NodeView<'a>(&'a GraphNode);

impl Serialize for NodeView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let n = self.0;
        let mut st = s.serialize_struct("Node", 3 + n.mud_url.is_some() as usize)?;
        st.serialize_field("id", &n.id)?;
        st.serialize_field("kind", &n.kind)?;
        st.serialize_field("label", &n.label)?;
        if let Some(url) = &n.mud_url {
            st.serialize_field("mudUrl", url)?;
        }
        st.end()
    }
}

pub struct PromiseView<'a>(pub &'a ControllerPromise);

impl Serialize for PromiseView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let p = self.0;
        let mut st = s.serialize_struct("Promise", 8)?;
        st.serialize_field("id", &p.promise_id)?;
        st.serialize_field("deviceId", &p.device_id)?;
        st.serialize_field("kind", &p.kind)?;
        st.serialize_field("classUri", &p.class_uri)?;
        st.serialize_field("status", if p.is_pending() { "pending" } else { "fulfilled" })?;
        st.serialize_field("hosts", &p.assigned_hosts)?;
        st.serialize_field("stacks", &Seq(&p.stacks, directed_stack))?;
        st.serialize_field("aces", &Seq(&p.aces, name_str))?;
        st.end()
    }
}

struct GraphView<'a> {
    nodes: &'a [GraphNode],
    links: &'a [std::borrow::Cow<'a, FlowLink>],
    promises: &'a [&'a ControllerPromise],
}

impl Serialize for GraphView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Graph", 4)?;
        st.serialize_field("version", SCHEMA_VERSION)?;
        st.serialize_field("nodes", &Seq(self.nodes, NodeView))?;
        st.serialize_field("links", &Seq(self.links, |l| LinkView(l)))?;
        st.serialize_field("promises", &Seq(self.promises, |p| PromiseView(p)))?;
        st.end()
    }
}

impl ConnectivityGraph {
    /// Owned copy of the export document.
    pub fn export(&self) -> GraphExport {
        serde_json::from_str(&self.to_json()).expect("export reads back")
    }

    /// Pretty JSON with a trailing newline. Byte-identical for equal graphs
    /// regardless of load order.
    pub fn write_json<W: io::Write>(&self, mut out: W) -> io::Result<()> {
        let nodes = self.nodes();
        let links = self.merged_links();
        let promises: Vec<&ControllerPromise> = self.promises().collect();
        let view = GraphView { nodes: &nodes, links: &links, promises: &promises };
        serde_json::to_writer_pretty(&mut out, &view)?;
        out.write_all(b"\n")
    }

    pub fn to_json(&self) -> String {
        let mut buf = Vec::new();
        self.write_json(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json writes UTF-8")
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph mudscope {\n  rankdir=LR;\n");
        for n in self.nodes() {
            let shape = match n.kind {
                NodeKind::Device => "box",
                NodeKind::ControllerClass => "diamond",
                NodeKind::Gateway => "octagon",
                NodeKind::LocalNetwork => "hexagon",
                NodeKind::ExternalHost => "ellipse",
            };
            let _ = writeln!(out, "  {} [label={}, shape={shape}];", dot_quote(&n.id), dot_quote(&n.label));
        }
        for p in self.promises().filter(|p| p.is_pending()) {
            let ghost = format!("promise:{}", p.promise_id);
            let _ = writeln!(
                out,
                "  {} [label={}, shape=diamond, style=dashed];",
                dot_quote(&ghost),
                dot_quote(&p.class_uri)
            );
            let owner = format!("device:{}", p.device_id);
            let _ = writeln!(out, "  {} -> {} [style=dashed];", dot_quote(&owner), dot_quote(&ghost));
        }
        for l in self.merged_links() {
            let _ = writeln!(
                out,
                "  {} -> {} [label=\"{}\"];",
                dot_quote(&l.source),
                dot_quote(&l.target),
                l.stacks.len()
            );
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AceEndpoint, DeviceProfile};

    fn graph() -> ConnectivityGraph {
        let mut a = DeviceProfile::new("https://m.example.com/a.json").unwrap();
        a.push_ace(
            "up",
            AceEndpoint::new(EndpointKind::DomainName, "updates.example.com").unwrap(),
            ProtocolStack::parse("[any,TCP,any,443|8000-8080]", Direction::FromDevice).unwrap(),
        );
        a.push_ace(
            "ctl",
            AceEndpoint::bare(EndpointKind::MyController),
            ProtocolStack::parse("[IPv4,UDP,any,5683]", Direction::ToDevice).unwrap(),
        );
        let mut g = ConnectivityGraph::default();
        g.add_profile(a).unwrap();
        g
    }

    #[test]
    fn json_shape() {
        let g = graph();
        let v: serde_json::Value = serde_json::from_str(&g.to_json()).unwrap();
        assert_eq!(v["version"], "1");
        assert_eq!(v["nodes"][0]["kind"], "device");
        assert_eq!(v["nodes"][0]["mudUrl"], "https://m.example.com/a.json");
        assert!(v["nodes"][1].get("mudUrl").is_none());
        let stack = &v["links"][0]["stacks"][0];
        assert_eq!(stack["network"], "any");
        assert_eq!(stack["dstPort"], "443|8000-8080");
        assert!(stack.get("direction").is_none());
        assert_eq!(v["promises"][0]["status"], "pending");
        assert_eq!(v["promises"][0]["stacks"][0]["direction"], "to-device");
    }

    #[test]
    fn owned_export_reserializes_identically() {
        let g = graph();
        let owned = g.export();
        let mut text = serde_json::to_string_pretty(&owned).unwrap();
        text.push('\n');
        assert_eq!(text, g.to_json());
    }

    #[test]
    fn dot_shapes() {
        let dot = graph().to_dot();
        assert!(dot.starts_with("digraph mudscope {"));
        assert!(dot.contains("shape=box"));
        assert!(dot.contains("shape=ellipse"));
        assert!(dot.contains("style=dashed"));
        assert!(dot.contains("[label=\"1\"]"));
    }
}
