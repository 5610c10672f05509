//! JSON graph documents: nodes as `(id, kind, config)` and edges as
//! `(src, dst)`. Signals and discovery labels are never written.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::graph::{ComputationNode, ComputationalGraph};
use crate::nn::activation::{ReluApprox, SigmoidApprox};
use crate::nn::cc::CcNode;
use crate::nn::crypto::{Decrypt, Encrypt, Rotate};
use crate::nn::dense::DenseNode;
use crate::nn::glue::{Identity, Input, Output, Stack};
use crate::nn::loss::{Argmax, CrossEntropy, MeanSquaredError, OneHotDecode, OneHotEncode, Softmax};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEntry {
    pub id: String,
    pub kind: String,
    #[serde(default = "empty_config")]
    pub config: Value,
}

fn empty_config() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeEntry {
    pub src: String,
    pub dst: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDocument {
    pub nodes: Vec<NodeEntry>,
    pub edges: Vec<EdgeEntry>,
}

type Factory = Box<dyn Fn(&Value) -> Result<Box<dyn ComputationNode>> + Send + Sync>;

/// Maps node kinds to constructors taking the node's config.
pub struct NodeRegistry {
    factories: HashMap<String, Factory>,
}

impl std::fmt::Debug for NodeRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut kinds: Vec<&str> = self.factories.keys().map(String::as_str).collect();
        kinds.sort_unstable();
        f.debug_struct("NodeRegistry").field("kinds", &kinds).finish()
    }
}

fn boxed<N: ComputationNode + 'static>(node: N) -> Result<Box<dyn ComputationNode>> {
    Ok(Box::new(node))
}

impl NodeRegistry {
    pub fn empty() -> Self {
        NodeRegistry {
            factories: HashMap::new(),
        }
    }

    /// Every node kind this crate defines.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("Input", |_| boxed(Input::new()));
        r.register("Identity", |c| boxed(Identity::from_config(c)?));
        r.register("Stack", |_| boxed(Stack));
        r.register("Output", |_| boxed(Output::default()));
        r.register("Encrypt", |_| boxed(Encrypt::default()));
        r.register("Rotate", |c| boxed(Rotate::from_config(c)?));
        r.register("Decrypt", |_| boxed(Decrypt::default()));
        r.register("CC", |c| boxed(CcNode::from_config(c)?));
        r.register("Dense", |c| boxed(DenseNode::from_config(c)?));
        r.register("ReluApprox", |c| boxed(ReluApprox::from_config(c)?));
        r.register("SigmoidApprox", |_| boxed(SigmoidApprox::default()));
        r.register("Softmax", |_| boxed(Softmax::default()));
        r.register("CCE", |_| boxed(CrossEntropy::default()));
        r.register("MSE", |_| boxed(MeanSquaredError::default()));
        r.register("Argmax", |_| boxed(Argmax::default()));
        r.register("OneHotEncode", |c| boxed(OneHotEncode::from_config(c)?));
        r.register("OneHotDecode", |_| boxed(OneHotDecode::default()));
        r
    }

    pub fn register(
        &mut self,
        kind: &str,
        factory: impl Fn(&Value) -> Result<Box<dyn ComputationNode>> + Send + Sync + 'static,
    ) {
        self.factories.insert(kind.to_owned(), Box::new(factory));
    }

    pub fn build(&self, kind: &str, config: &Value) -> Result<Box<dyn ComputationNode>> {
        let factory = self
            .factories
            .get(kind)
            .ok_or_else(|| Error::Schema(format!("unknown node kind `{kind}`")))?;
        factory(config)
    }
}

impl Default for NodeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

pub fn serialize(g: &ComputationalGraph) -> GraphDocument {
    let nodes = g
        .records()
        .map(|(id, rec)| NodeEntry {
            id: id.to_owned(),
            kind: rec.node.kind().to_owned(),
            config: rec.node.config(),
        })
        .collect();
    let edges = g
        .edges()
        .iter()
        .map(|e| EdgeEntry {
            src: e.src.clone(),
            dst: e.dst.clone(),
        })
        .collect();
    GraphDocument { nodes, edges }
}

pub fn deserialize(doc: &GraphDocument, registry: &NodeRegistry) -> Result<ComputationalGraph> {
    let mut g = ComputationalGraph::new();
    for entry in &doc.nodes {
        let node = registry
            .build(&entry.kind, &entry.config)
            .map_err(|e| Error::at_node(&entry.id, e))?;
        g.add_node(entry.id.clone(), node)?;
    }
    for edge in &doc.edges {
        g.add_edge(&edge.src, &edge.dst)?;
    }
    Ok(g)
}

pub fn to_json(g: &ComputationalGraph) -> String {
    serde_json::to_string_pretty(&serialize(g)).expect("documents always serialize")
}

pub fn from_json(text: &str, registry: &NodeRegistry) -> Result<ComputationalGraph> {
    let doc: GraphDocument =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    deserialize(&doc, registry)
}

pub fn save(g: &ComputationalGraph, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(g))?;
    Ok(())
}

pub fn load(path: &Path, registry: &NodeRegistry) -> Result<ComputationalGraph> {
    from_json(&std::fs::read_to_string(path)?, registry)
}
