//! Multi-directed computational graph.
//!
//! Nodes own a [`ComputationNode`] and the source/cost labels written by
//! parameter discovery. Edges are kept in insertion order, may be parallel,
//! and hold one optional signal slot per receptor.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;
use serde_json::Value;

use crate::ckks::{CkksParams, KeyPair, Keyring};
use crate::error::{Error, Result};
use crate::signal::{NodeOutput, Signal};

pub type NodeId = String;

/// Display category, following the colour legend of the network figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Input,
    Conv,
    Dense,
    Loss,
    Output,
    Encryption,
    Glue,
}

impl Category {
    pub fn colour(self) -> &'static str {
        match self {
            Category::Input => "lightblue",
            Category::Conv => "gold",
            Category::Dense => "pink",
            Category::Loss => "plum",
            Category::Output => "orange",
            Category::Encryption => "palegreen",
            Category::Glue => "tomato",
        }
    }
}

/// Edge counts on either side of a node, in the direction of traversal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Fan {
    /// Edges the inbound signal was gathered from.
    pub inputs: usize,
    /// Edges the output will be written to.
    pub outputs: usize,
}

/// A computation object living on a graph node.
///
/// Receptors are named entry points; every node understands at least
/// `"forward"` and `"backward"`.
pub trait ComputationNode: fmt::Debug + Send + Sync {
    /// Registered kind name used in graph documents.
    fn kind(&self) -> &'static str;

    fn category(&self) -> Category;

    /// Multiplicative depth this node applies to a ciphertext.
    fn cost(&self) -> u32 {
        0
    }

    fn receptor(&mut self, name: &str, signal: Signal, fan: Fan) -> Result<NodeOutput>;

    /// Configuration sufficient to rebuild the node, including learned values.
    fn config(&self) -> Value;

    /// Apply and clear accumulated gradients.
    fn step(&mut self, _lr: f64) {}

    fn attach_params(&mut self, _params: &CkksParams) {}

    fn attach_key(&mut self, _key: &KeyPair, _keyring: &Arc<Keyring>) {}

    /// Last value retained by a sink node (loss, prediction).
    fn observe(&self) -> Option<&Signal> {
        None
    }

    fn clone_box(&self) -> Box<dyn ComputationNode>;
}

impl Clone for Box<dyn ComputationNode> {
    fn clone(&self) -> Self {
        self.clone_box()
    }
}

#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub node: Box<dyn ComputationNode>,
    /// Source id to maximal accumulated cost, written by discovery.
    pub sources: IndexMap<NodeId, u32>,
    in_edges: Vec<EdgeId>,
    out_edges: Vec<EdgeId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId(pub usize);

#[derive(Debug, Clone)]
pub struct EdgeRecord {
    pub src: NodeId,
    pub dst: NodeId,
    /// Disambiguates parallel edges between the same pair.
    pub key: u32,
    /// Cost of the directed-to node.
    pub weight: u32,
    signals: BTreeMap<String, Signal>,
}

impl EdgeRecord {
    pub fn signal(&self, receptor: &str) -> Option<&Signal> {
        self.signals.get(receptor)
    }

    pub fn set_signal(&mut self, receptor: &str, signal: Signal) {
        self.signals.insert(receptor.to_owned(), signal);
    }

    pub fn take_signal(&mut self, receptor: &str) -> Option<Signal> {
        self.signals.remove(receptor)
    }

    pub fn clear_signals(&mut self) {
        self.signals.clear();
    }
}

/// Neighbourhood of one node.
#[derive(Debug)]
pub struct Topology<'g> {
    pub successors: Vec<&'g str>,
    pub in_edges: Vec<&'g EdgeRecord>,
    pub out_edges: Vec<&'g EdgeRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct ComputationalGraph {
    nodes: IndexMap<NodeId, NodeRecord>,
    edges: Vec<EdgeRecord>,
}

impl ComputationalGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: impl Into<NodeId>, node: Box<dyn ComputationNode>) -> Result<()> {
        let id = id.into();
        if self.nodes.contains_key(&id) {
            return Err(Error::DuplicateNode(id));
        }
        self.nodes.insert(
            id,
            NodeRecord {
                node,
                sources: IndexMap::new(),
                in_edges: Vec::new(),
                out_edges: Vec::new(),
            },
        );
        Ok(())
    }

    /// Append an edge; parallel calls yield distinct keys.
    pub fn add_edge(&mut self, src: &str, dst: &str) -> Result<u32> {
        let src_idx = self.index_of(src)?;
        let dst_idx = self.index_of(dst)?;
        let key = self.nodes[src_idx]
            .out_edges
            .iter()
            .filter(|e| self.edges[e.0].dst == dst)
            .count() as u32;
        let weight = self.nodes[dst_idx].node.cost();
        let id = EdgeId(self.edges.len());
        self.edges.push(EdgeRecord {
            src: src.to_owned(),
            dst: dst.to_owned(),
            key,
            weight,
            signals: BTreeMap::new(),
        });
        self.nodes[src_idx].out_edges.push(id);
        self.nodes[dst_idx].in_edges.push(id);
        Ok(key)
    }

    /// Chain `ids` with one edge between each consecutive pair.
    pub fn add_path(&mut self, ids: &[&str]) -> Result<()> {
        for pair in ids.windows(2) {
            self.add_edge(pair[0], pair[1])?;
        }
        Ok(())
    }

    fn index_of(&self, id: &str) -> Result<usize> {
        self.nodes
            .get_index_of(id)
            .ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Node ids in insertion order.
    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn records(&self) -> impl Iterator<Item = (&str, &NodeRecord)> {
        self.nodes.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn record(&self, id: &str) -> Result<&NodeRecord> {
        self.nodes.get(id).ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }

    pub fn record_mut(&mut self, id: &str) -> Result<&mut NodeRecord> {
        self.nodes.get_mut(id).ok_or_else(|| Error::UnknownNode(id.to_owned()))
    }

    pub fn node(&self, id: &str) -> Result<&dyn ComputationNode> {
        Ok(self.record(id)?.node.as_ref())
    }

    pub fn node_mut(&mut self, id: &str) -> Result<&mut Box<dyn ComputationNode>> {
        Ok(&mut self.record_mut(id)?.node)
    }

    pub fn nodes_mut(&mut self) -> impl Iterator<Item = (&str, &mut Box<dyn ComputationNode>)> {
        self.nodes.iter_mut().map(|(k, v)| (k.as_str(), &mut v.node))
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &EdgeRecord {
        &self.edges[id.0]
    }

    pub fn edge_mut(&mut self, id: EdgeId) -> &mut EdgeRecord {
        &mut self.edges[id.0]
    }

    pub fn in_edges(&self, id: &str) -> Result<&[EdgeId]> {
        Ok(&self.record(id)?.in_edges)
    }

    pub fn out_edges(&self, id: &str) -> Result<&[EdgeId]> {
        Ok(&self.record(id)?.out_edges)
    }

    /// Distinct successors in order of first outbound edge.
    pub fn successors(&self, id: &str) -> Result<Vec<&str>> {
        let edges = self.out_edges(id)?;
        Ok(dedup(edges.iter().map(|e| self.edges[e.0].dst.as_str())))
    }

    /// Distinct predecessors in order of first inbound edge.
    pub fn predecessors(&self, id: &str) -> Result<Vec<&str>> {
        let edges = self.in_edges(id)?;
        Ok(dedup(edges.iter().map(|e| self.edges[e.0].src.as_str())))
    }

    pub fn topology(&self, id: &str) -> Result<Topology<'_>> {
        let record = self.record(id)?;
        Ok(Topology {
            successors: self.successors(id)?,
            in_edges: record.in_edges.iter().map(|e| &self.edges[e.0]).collect(),
            out_edges: record.out_edges.iter().map(|e| &self.edges[e.0]).collect(),
        })
    }

    /// Empty every signal slot on every edge.
    pub fn clear_signals(&mut self) {
        self.edges.iter_mut().for_each(EdgeRecord::clear_signals);
    }

    pub fn clear_sources(&mut self) {
        self.nodes.values_mut().for_each(|r| r.sources.clear());
    }

    /// Apply accumulated gradients on every node.
    pub fn step(&mut self, lr: f64) {
        self.nodes.values_mut().for_each(|r| r.node.step(lr));
    }
}

fn dedup<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}
