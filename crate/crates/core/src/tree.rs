//! Per-destination ACE tree: construction, redundancy pruning and
//! root-to-leaf traversal.
//!
//! Level 1 holds network protocols, level 2 transport protocols and level 3
//! (the leaves) source/destination port pairs. A layer naming more than one
//! protocol descends through the wildcard (`any`) child of that level, so a
//! tree may over-approximate the stacks it was built from.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::algebra::subset_unchecked;
use crate::model::{Direction, LayerValue, ProtocolStack};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PortPair {
    pub src: LayerValue,
    pub dst: LayerValue,
}

impl PortPair {
    fn is_subset(&self, other: &PortPair) -> bool {
        subset_unchecked(&self.src, &other.src) && subset_unchecked(&self.dst, &other.dst)
    }
}

impl fmt::Display for PortPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.src, self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeLabel {
    Root,
    Layer(LayerValue),
    Ports(PortPair),
}

impl NodeLabel {
    fn is_subset(&self, other: &NodeLabel) -> bool {
        match (self, other) {
            (NodeLabel::Layer(a), NodeLabel::Layer(b)) => subset_unchecked(a, b),
            (NodeLabel::Ports(a), NodeLabel::Ports(b)) => a.is_subset(b),
            _ => false,
        }
    }

    fn is_strict_subset(&self, other: &NodeLabel) -> bool {
        self != other && self.is_subset(other)
    }

    pub fn is_wildcard(&self) -> bool {
        match self {
            NodeLabel::Root => false,
            NodeLabel::Layer(v) => v.is_any(),
            NodeLabel::Ports(p) => p.src.is_any() && p.dst.is_any(),
        }
    }
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeLabel::Root => f.write_str("root"),
            NodeLabel::Layer(v) => write!(f, "{v}"),
            NodeLabel::Ports(p) => write!(f, "{p}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    label: NodeLabel,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    level: u8,
}

/// Owned, recursive snapshot of a tree; used for structural comparison and
/// debug output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AceTreeNode {
    pub label: String,
    pub level: u8,
    pub is_wildcard: bool,
    pub children: Vec<AceTreeNode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PruneRule {
    Sibling,
    Cousin,
}

/// One leaf removed by [`AceTree::prune`] and the leaf that covers it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneEvent {
    pub pruned: ProtocolStack,
    pub covered_by: ProtocolStack,
    pub rule: PruneRule,
}

/// Arena-backed ACE tree for one destination.
#[derive(Debug, Clone)]
pub struct AceTree {
    nodes: Vec<Node>,
    direction: Direction,
}

pub const LEAF_LEVEL: u8 = 3;

/// The label a stack's layer takes in the tree: more than one named
/// protocol widens to the wildcard.
fn widen(v: &LayerValue) -> LayerValue {
    match v.named_count() {
        Some(n) if n > 1 => LayerValue::Any,
        _ => v.clone(),
    }
}

/// The root-to-leaf labels `stack` is stored under.
pub fn tree_path(stack: &ProtocolStack) -> [NodeLabel; 3] {
    [
        NodeLabel::Layer(widen(&stack.network)),
        NodeLabel::Layer(widen(&stack.transport)),
        NodeLabel::Ports(PortPair { src: stack.src_port.clone(), dst: stack.dst_port.clone() }),
    ]
}

impl AceTree {
    pub fn empty(direction: Direction) -> Self {
        AceTree {
            nodes: vec![Node { label: NodeLabel::Root, parent: None, children: Vec::new(), level: 0 }],
            direction,
        }
    }

    /// Builds the tree for stacks sharing one destination. Existing children
    /// are reused; children keep insertion order.
    pub fn build(stacks: &[ProtocolStack]) -> Self {
        let direction = stacks.first().map_or(Direction::FromDevice, |s| s.direction);
        let mut tree = AceTree::empty(direction);
        for s in stacks {
            tree.insert(s);
        }
        tree
    }

    pub fn insert(&mut self, stack: &ProtocolStack) -> NodeId {
        let mut node = self.root();
        for label in tree_path(stack) {
            node = self.child_or_insert(node, label);
        }
        node
    }

    fn child_or_insert(&mut self, parent: NodeId, label: NodeLabel) -> NodeId {
        if let Some(&c) = self.nodes[parent.0].children.iter().find(|c| self.nodes[c.0].label == label) {
            return c;
        }
        let id = NodeId(self.nodes.len());
        let level = self.nodes[parent.0].level + 1;
        self.nodes.push(Node { label, parent: Some(parent), children: Vec::new(), level });
        self.nodes[parent.0].children.push(id);
        id
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn label(&self, id: NodeId) -> &NodeLabel {
        &self.nodes[id.0].label
    }

    pub fn level(&self, id: NodeId) -> u8 {
        self.nodes[id.0].level
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    fn is_attached(&self, id: NodeId) -> bool {
        let mut cur = id;
        while let Some(p) = self.nodes[cur.0].parent {
            if !self.nodes[p.0].children.contains(&cur) {
                return false;
            }
            cur = p;
        }
        cur == self.root()
    }

    /// Leaves in depth-first, left-to-right order.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        self.collect_leaves(self.root(), &mut out);
        out
    }

    fn collect_leaves(&self, id: NodeId, out: &mut Vec<NodeId>) {
        let node = &self.nodes[id.0];
        if node.level == LEAF_LEVEL {
            out.push(id);
        }
        for &c in &node.children {
            self.collect_leaves(c, out);
        }
    }

    /// Finds the leaf holding `stack`'s (widened) path.
    pub fn find(&self, stack: &ProtocolStack) -> Option<NodeId> {
        let mut node = self.root();
        for label in tree_path(stack) {
            node = *self.children(node).iter().find(|c| *self.label(**c) == label)?;
        }
        Some(node)
    }

    /// The stack a leaf stands for.
    pub fn leaf_stack(&self, leaf: NodeId) -> ProtocolStack {
        let transport = self.parent(leaf).expect("leaf has a parent");
        let network = self.parent(transport).expect("transport node has a parent");
        let (NodeLabel::Layer(n), NodeLabel::Layer(t), NodeLabel::Ports(p)) =
            (self.label(network), self.label(transport), self.label(leaf))
        else {
            unreachable!("malformed tree path")
        };
        ProtocolStack {
            network: n.clone(),
            transport: t.clone(),
            src_port: p.src.clone(),
            dst_port: p.dst.clone(),
            direction: self.direction,
        }
    }

    /// Depth-first, left-to-right, one stack per leaf.
    pub fn traverse(&self) -> Vec<ProtocolStack> {
        self.leaves().into_iter().map(|l| self.leaf_stack(l)).collect()
    }

    /// Removes redundant leaves in place and returns what was removed.
    ///
    /// A leaf `L` goes when a sibling `S` has `L ⊂ S`, or when a cousin `C`
    /// has `L ⊆ C` and, walking both ancestor chains upward, every ancestor
    /// of `L` is contained in the matching ancestor of `C` until the two
    /// ancestors are siblings with a strict containment. The walk gives up at
    /// the root or at a shared ancestor. Internal nodes left without leaves
    /// are dropped. Passes repeat until nothing changes.
    pub fn prune(&mut self) -> Vec<PruneEvent> {
        let mut events = Vec::new();
        loop {
            let before = events.len();
            for leaf in self.leaves() {
                if !self.is_attached(leaf) {
                    continue;
                }
                if let Some((cover, rule)) = self.find_cover(leaf) {
                    events.push(PruneEvent {
                        pruned: self.leaf_stack(leaf),
                        covered_by: self.leaf_stack(cover),
                        rule,
                    });
                    self.detach(leaf);
                }
            }
            self.drop_empty_branches(self.root());
            if events.len() == before {
                break;
            }
        }
        events
    }

    fn find_cover(&self, leaf: NodeId) -> Option<(NodeId, PruneRule)> {
        let parent = self.parent(leaf)?;
        let label = self.label(leaf);
        for &s in self.children(parent) {
            if s != leaf && label.is_strict_subset(self.label(s)) {
                return Some((s, PruneRule::Sibling));
            }
        }
        for cousin in self.leaves() {
            if self.parent(cousin) == Some(parent) || !label.is_subset(self.label(cousin)) {
                continue;
            }
            if self.ancestors_cover(leaf, cousin) {
                return Some((cousin, PruneRule::Cousin));
            }
        }
        None
    }

    fn ancestors_cover(&self, leaf: NodeId, cousin: NodeId) -> bool {
        let (mut al, mut ac) = (self.parent(leaf), self.parent(cousin));
        while let (Some(l), Some(c)) = (al, ac) {
            if l == c || l == self.root() {
                return false;
            }
            let (ll, lc) = (self.label(l), self.label(c));
            if !ll.is_subset(lc) {
                return false;
            }
            if self.parent(l) == self.parent(c) && ll.is_strict_subset(lc) {
                return true;
            }
            al = self.parent(l);
            ac = self.parent(c);
        }
        false
    }

    fn detach(&mut self, id: NodeId) {
        if let Some(p) = self.nodes[id.0].parent {
            self.nodes[p.0].children.retain(|c| *c != id);
        }
    }

    /// Returns whether `id` still has a leaf below it (or is one).
    fn drop_empty_branches(&mut self, id: NodeId) -> bool {
        if self.nodes[id.0].level == LEAF_LEVEL {
            return true;
        }
        let children = self.nodes[id.0].children.clone();
        let kept: Vec<NodeId> = children.into_iter().filter(|&c| self.drop_empty_branches(c)).collect();
        let non_empty = !kept.is_empty();
        self.nodes[id.0].children = kept;
        non_empty
    }

    pub fn snapshot(&self) -> AceTreeNode {
        self.snapshot_from(self.root())
    }

    fn snapshot_from(&self, id: NodeId) -> AceTreeNode {
        let node = &self.nodes[id.0];
        AceTreeNode {
            label: node.label.to_string(),
            level: node.level,
            is_wildcard: node.label.is_wildcard(),
            children: node.children.iter().map(|&c| self.snapshot_from(c)).collect(),
        }
    }

    /// Indented text dump, one node per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        self.write_text(self.root(), 0, &mut out);
        out
    }

    fn write_text(&self, id: NodeId, depth: usize, out: &mut String) {
        let _ = writeln!(out, "{}{}", "  ".repeat(depth), self.label(id));
        for &c in self.children(id) {
            self.write_text(c, depth + 1, out);
        }
    }

    /// DOT digraph of the attached nodes.
    pub fn to_dot(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "digraph {} {{", dot_quote(name));
        let mut stack = vec![self.root()];
        while let Some(id) = stack.pop() {
            let shape = if self.level(id) == LEAF_LEVEL { "box" } else { "ellipse" };
            let style = if self.label(id).is_wildcard() { ", style=dashed" } else { "" };
            let _ = writeln!(
                out,
                "  n{} [label={}, shape={shape}{style}];",
                id.0,
                dot_quote(&self.label(id).to_string())
            );
            for &c in self.children(id) {
                let _ = writeln!(out, "  n{} -> n{};", id.0, c.0);
            }
            stack.extend(self.children(id).iter().rev());
        }
        out.push_str("}\n");
        out
    }
}

pub(crate) fn dot_quote(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

impl PartialEq for AceTree {
    fn eq(&self, other: &Self) -> bool {
        self.direction == other.direction && self.snapshot() == other.snapshot()
    }
}

/// `traverse(prune(build(stacks)))`.
pub fn prune_stacks(stacks: &[ProtocolStack]) -> Vec<ProtocolStack> {
    let mut tree = AceTree::build(stacks);
    tree.prune();
    tree.traverse()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(s: &str) -> ProtocolStack {
        ProtocolStack::parse(s, Direction::FromDevice).unwrap()
    }

    fn eight_stacks() -> Vec<ProtocolStack> {
        [
            "[IPv4,TCP,80,43]",
            "[IPv4,TCP,any,any]",
            "[IPv4,UDP,800,520]",
            "[IPv4,any,800,520]",
            "[IPv6,UDP,90,120]",
            "[any,TCP,400,480]",
            "[any,UDP,90,120]",
            "[any,any,400,480]",
        ]
        .iter()
        .map(|s| st(s))
        .collect()
    }

    #[test]
    fn build_reproduces_original_layout() {
        let tree = AceTree::build(&eight_stacks());
        let root = tree.root();
        let nets: Vec<String> = tree.children(root).iter().map(|c| tree.label(*c).to_string()).collect();
        assert_eq!(nets, ["IPv4", "IPv6", "any"]);
        let ipv4 = tree.children(root)[0];
        let trans: Vec<String> = tree.children(ipv4).iter().map(|c| tree.label(*c).to_string()).collect();
        assert_eq!(trans, ["TCP", "UDP", "any"]);
        assert_eq!(tree.leaves().len(), 8);
        assert_eq!(tree.traverse(), eight_stacks());
    }

    #[test]
    fn single_stack_is_a_single_path() {
        let tree = AceTree::build(&[st("[IPv4,TCP,80,43]")]);
        let dump = tree.to_text();
        assert_eq!(dump, "root\n  IPv4\n    TCP\n      [80, 43]\n");
    }

    #[test]
    fn multi_protocol_layer_descends_through_wildcard() {
        let tree = AceTree::build(&[st("[IPv4,TCP|UDP,any,53]")]);
        let net = tree.children(tree.root())[0];
        let wild = tree.children(net)[0];
        assert!(tree.label(wild).is_wildcard());
        assert_eq!(tree.level(tree.children(wild)[0]), LEAF_LEVEL);
        assert_eq!(tree.traverse(), vec![st("[IPv4,any,any,53]")]);
    }

    #[test]
    fn duplicate_stacks_share_a_leaf() {
        let tree = AceTree::build(&[st("[IPv4,TCP,80,43]"), st("[IPv4,TCP,80,43]")]);
        assert_eq!(tree.leaves().len(), 1);
    }

    #[test]
    fn prune_reproduces_pruned_rows() {
        let mut tree = AceTree::build(&eight_stacks());
        let events = tree.prune();
        let want: Vec<ProtocolStack> = ["[IPv4,TCP,any,any]", "[IPv4,any,800,520]", "[any,UDP,90,120]", "[any,any,400,480]"]
            .iter()
            .map(|s| st(s))
            .collect();
        assert_eq!(tree.traverse(), want);
        assert_eq!(events.len(), 4);
        // IPv6 branch is gone entirely.
        let nets: Vec<String> = tree.children(tree.root()).iter().map(|c| tree.label(*c).to_string()).collect();
        assert_eq!(nets, ["IPv4", "any"]);
    }

    #[test]
    fn sibling_rule() {
        let mut tree = AceTree::build(&[st("[IPv4,TCP,80,43]"), st("[IPv4,TCP,any,any]")]);
        let events = tree.prune();
        assert_eq!(events[0].pruned, st("[IPv4,TCP,80,43]"));
        assert_eq!(events[0].rule, PruneRule::Sibling);
        assert_eq!(tree.traverse(), vec![st("[IPv4,TCP,any,any]")]);
    }

    #[test]
    fn cousin_with_incomparable_ancestor_is_kept() {
        // Port pairs match, and IPv6 ⊂ any, but UDP ⊄ TCP: dropping the first
        // stack would lose IPv6/UDP traffic.
        let stacks = [st("[IPv6,UDP,90,120]"), st("[any,TCP,90,120]")];
        let mut tree = AceTree::build(&stacks);
        assert!(tree.prune().is_empty());
        assert_eq!(tree.traverse(), stacks);
    }

    #[test]
    fn single_leaf_is_unchanged() {
        let mut tree = AceTree::build(&[st("[any,any,any,any]")]);
        let before = tree.clone();
        assert!(tree.prune().is_empty());
        assert_eq!(tree, before);
    }

    #[test]
    fn root_only_tree_traverses_to_nothing() {
        assert!(AceTree::empty(Direction::FromDevice).traverse().is_empty());
        assert!(prune_stacks(&[]).is_empty());
    }

    #[test]
    fn dot_output_names_every_node() {
        let tree = AceTree::build(&eight_stacks());
        let dot = tree.to_dot("dest");
        assert!(dot.starts_with("digraph \"dest\" {"));
        assert_eq!(dot.matches("label=").count(), tree.nodes.len());
    }
}
