//! Neuronal firing: sequential stimulation of entry nodes with exhaustive,
//! depth-first, blocking propagation.
//!
//! A node activates only once every inbound edge holds a signal for the
//! receptor being fired. Read slots are consumed, so the same graph can be
//! fired example after example. The `"backward"` receptor runs over the
//! reversed adjacency: it gathers from a node's out-edges and writes to its
//! in-edges.

use crate::error::{Error, Result};
use crate::graph::{ComputationalGraph, EdgeId, Fan};
use crate::signal::{NodeOutput, Signal};

pub const FORWARD: &str = "forward";
pub const BACKWARD: &str = "backward";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceEvent {
    Blocked,
    Activated,
    Emitted,
}

/// Receives `(node, receptor, event)` as the engine runs.
pub type TraceHook<'h> = dyn FnMut(&str, &str, TraceEvent) + 'h;

fn reversed(receptor: &str) -> bool {
    receptor == BACKWARD
}

fn inbound_edges(g: &ComputationalGraph, n: &str, r: &str) -> Result<Vec<EdgeId>> {
    Ok(if reversed(r) { g.out_edges(n)? } else { g.in_edges(n)? }.to_vec())
}

fn outbound_edges(g: &ComputationalGraph, n: &str, r: &str) -> Result<Vec<EdgeId>> {
    Ok(if reversed(r) { g.in_edges(n)? } else { g.out_edges(n)? }.to_vec())
}

fn next_nodes(g: &ComputationalGraph, n: &str, r: &str) -> Result<Vec<String>> {
    let ids = if reversed(r) { g.predecessors(n)? } else { g.successors(n)? };
    Ok(ids.into_iter().map(str::to_owned).collect())
}

/// Stimulate `nodes[i]` through `receptors[i]` with `signals[i]`, in order.
pub fn fire(
    g: &mut ComputationalGraph,
    nodes: &[&str],
    receptors: &[&str],
    signals: Vec<Signal>,
) -> Result<()> {
    Engine { trace: None }.fire(g, nodes, receptors, signals)
}

/// [`fire`] with a trace hook.
pub fn fire_traced(
    g: &mut ComputationalGraph,
    nodes: &[&str],
    receptors: &[&str],
    signals: Vec<Signal>,
    hook: &mut TraceHook<'_>,
) -> Result<()> {
    Engine { trace: Some(hook) }.fire(g, nodes, receptors, signals)
}

/// Propagate one signal from `n` through everything it can reach.
pub fn signal_carrier(
    g: &mut ComputationalGraph,
    n: &str,
    r: &str,
    bootstrap: Option<Signal>,
) -> Result<()> {
    Engine { trace: None }.carry(g, n, r, bootstrap)
}

/// Gather `n`'s inbound signal. `None` means at least one slot is still
/// empty; nothing is consumed in that case.
pub fn get_inbound_signal(
    g: &mut ComputationalGraph,
    n: &str,
    r: &str,
    bootstrap: Option<Signal>,
) -> Result<Option<Signal>> {
    if bootstrap.is_some() {
        return Ok(bootstrap);
    }
    let edges = inbound_edges(g, n, r)?;
    if edges.is_empty() || edges.iter().any(|&e| g.edge(e).signal(r).is_none()) {
        return Ok(None);
    }
    let mut stacked: Vec<Signal> = edges
        .iter()
        .map(|&e| g.edge_mut(e).take_signal(r).expect("slot checked above"))
        .collect();
    Ok(Some(if stacked.len() == 1 {
        stacked.pop().expect("one element")
    } else {
        Signal::Stack(stacked)
    }))
}

/// Invoke receptor `r` of node `n`.
pub fn apply_signal(
    g: &mut ComputationalGraph,
    n: &str,
    r: &str,
    s: Option<Signal>,
) -> Result<NodeOutput> {
    let Some(s) = s else {
        return Ok(NodeOutput::Nothing);
    };
    let fan = Fan {
        inputs: inbound_edges(g, n, r)?.len().max(1),
        outputs: outbound_edges(g, n, r)?.len(),
    };
    g.node_mut(n)?
        .receptor(r, s, fan)
        .map_err(|e| Error::at_node(n, e))
}

/// Write a node's output onto its outbound edges.
pub fn set_outbound_signals(
    g: &mut ComputationalGraph,
    n: &str,
    r: &str,
    s: NodeOutput,
) -> Result<()> {
    let edges = outbound_edges(g, n, r)?;
    match s {
        NodeOutput::Nothing => {}
        NodeOutput::Broadcast(value) => {
            for &e in &edges {
                g.edge_mut(e).set_signal(r, value.clone());
            }
        }
        NodeOutput::Generated(values) => {
            if values.len() < edges.len() {
                return Err(Error::GeneratorUnderrun {
                    node: n.to_owned(),
                    produced: values.len(),
                    edges: edges.len(),
                });
            }
            for (&e, value) in edges.iter().zip(values) {
                g.edge_mut(e).set_signal(r, value);
            }
        }
    }
    Ok(())
}

struct Engine<'h, 'a> {
    trace: Option<&'h mut TraceHook<'a>>,
}

impl Engine<'_, '_> {
    fn emit(&mut self, n: &str, r: &str, event: TraceEvent) {
        if let Some(hook) = self.trace.as_mut() {
            hook(n, r, event);
        }
    }

    fn fire(
        &mut self,
        g: &mut ComputationalGraph,
        nodes: &[&str],
        receptors: &[&str],
        signals: Vec<Signal>,
    ) -> Result<()> {
        if nodes.len() != receptors.len() || nodes.len() != signals.len() {
            return Err(Error::Arity(format!(
                "{} nodes, {} receptors, {} signals",
                nodes.len(),
                receptors.len(),
                signals.len()
            )));
        }
        if let Some(missing) = nodes.iter().find(|n| !g.contains(n)) {
            return Err(Error::UnknownNode((*missing).to_owned()));
        }
        for ((n, r), s) in nodes.iter().zip(receptors).zip(signals) {
            self.carry(g, n, r, Some(s))?;
        }
        Ok(())
    }

    fn carry(
        &mut self,
        g: &mut ComputationalGraph,
        n: &str,
        r: &str,
        bootstrap: Option<Signal>,
    ) -> Result<()> {
        let Some(s) = get_inbound_signal(g, n, r, bootstrap)? else {
            self.emit(n, r, TraceEvent::Blocked);
            return Ok(());
        };
        self.emit(n, r, TraceEvent::Activated);
        let out = apply_signal(g, n, r, Some(s))?;
        if out == NodeOutput::Nothing {
            return Ok(());
        }
        set_outbound_signals(g, n, r, out)?;
        self.emit(n, r, TraceEvent::Emitted);
        for next in next_nodes(g, n, r)? {
            self.carry(g, &next, r, None)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Category, ComputationNode};
    use crate::nn::glue::{Identity, Input, Output};
    use crate::tensor::{scalar, vector};
    use serde_json::json;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    /// Sums stacked inputs and multiplies by a factor; counts activations.
    #[derive(Debug, Clone)]
    struct Gain {
        factor: f64,
        calls: Arc<AtomicUsize>,
        quiet: bool,
    }

    impl Gain {
        fn boxed(factor: f64) -> (Box<dyn ComputationNode>, Arc<AtomicUsize>) {
            let calls = Arc::new(AtomicUsize::new(0));
            let node = Gain {
                factor,
                calls: calls.clone(),
                quiet: false,
            };
            (Box::new(node), calls)
        }
    }

    impl ComputationNode for Gain {
        fn kind(&self) -> &'static str {
            "Gain"
        }
        fn category(&self) -> Category {
            Category::Glue
        }
        fn receptor(&mut self, _: &str, signal: Signal, _: Fan) -> Result<NodeOutput> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.quiet {
                return Ok(NodeOutput::Nothing);
            }
            let total: f64 = signal
                .into_items()
                .iter()
                .map(|s| s.as_plain().unwrap().sum())
                .sum();
            Ok(NodeOutput::Broadcast(Signal::scalar(total * self.factor)))
        }
        fn config(&self) -> serde_json::Value {
            json!({ "factor": self.factor })
        }
        fn clone_box(&self) -> Box<dyn ComputationNode> {
            Box::new(self.clone())
        }
    }

    fn chain() -> ComputationalGraph {
        let mut g = ComputationalGraph::new();
        g.add_node("x", Box::new(Input::new())).unwrap();
        g.add_node("double", Gain::boxed(2.0).0).unwrap();
        g.add_node("sink", Box::new(Identity::default())).unwrap();
        g.add_path(&["x", "double", "sink"]).unwrap();
        g
    }

    fn observed(g: &ComputationalGraph, n: &str) -> Option<Signal> {
        g.node(n).unwrap().observe().cloned()
    }

    fn last_into(g: &ComputationalGraph, n: &str) -> Option<Signal> {
        g.in_edges(n).unwrap().iter().find_map(|&e| g.edge(e).signal(FORWARD).cloned())
    }

    #[test]
    fn chain_propagates_to_the_end() {
        let mut g = chain();
        g.add_node("end", Box::new(Output::default())).unwrap();
        g.add_edge("sink", "end").unwrap();
        fire(&mut g, &["x"], &[FORWARD], vec![Signal::scalar(3.0)]).unwrap();
        assert_eq!(observed(&g, "end"), Some(Signal::scalar(6.0)));
        // slots upstream were consumed
        assert!(last_into(&g, "double").is_none());
    }

    #[test]
    fn arity_and_unknown_node_errors() {
        let mut g = chain();
        assert!(matches!(
            fire(&mut g, &["x"], &[], vec![Signal::scalar(1.0)]),
            Err(Error::Arity(_))
        ));
        assert_eq!(
            fire(&mut g, &["ghost"], &[FORWARD], vec![Signal::scalar(1.0)]),
            Err(Error::UnknownNode("ghost".into()))
        );
    }

    #[test]
    fn join_blocks_until_every_parent_fired() {
        let mut g = ComputationalGraph::new();
        g.add_node("x", Box::new(Input::new())).unwrap();
        g.add_node("y", Box::new(Input::new())).unwrap();
        let (join, calls) = Gain::boxed(1.0);
        g.add_node("join", join).unwrap();
        g.add_node("out", Box::new(Output::default())).unwrap();
        g.add_edge("x", "join").unwrap();
        g.add_edge("y", "join").unwrap();
        g.add_edge("join", "out").unwrap();

        fire(&mut g, &["x"], &[FORWARD], vec![Signal::scalar(1.0)]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 0);
        assert!(observed(&g, "out").is_none());

        fire(&mut g, &["y"], &[FORWARD], vec![Signal::scalar(2.0)]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(observed(&g, "out"), Some(Signal::scalar(3.0)));
    }

    #[test]
    fn diamond_join_activates_once() {
        let mut g = ComputationalGraph::new();
        g.add_node("a", Box::new(Input::new())).unwrap();
        g.add_node("b", Gain::boxed(1.0).0).unwrap();
        g.add_node("c", Gain::boxed(10.0).0).unwrap();
        let (d, calls) = Gain::boxed(1.0);
        g.add_node("d", d).unwrap();
        for (s, t) in [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")] {
            g.add_edge(s, t).unwrap();
        }
        let mut events = Vec::new();
        let mut hook = |n: &str, _: &str, ev: TraceEvent| events.push((n.to_owned(), ev));
        fire_traced(&mut g, &["a"], &[FORWARD], vec![Signal::scalar(1.0)], &mut hook).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert!(events.contains(&("d".into(), TraceEvent::Blocked)));
        let activations: Vec<_> = events
            .iter()
            .filter(|(_, e)| *e == TraceEvent::Activated)
            .map(|(n, _)| n.as_str())
            .collect();
        assert_eq!(activations, ["a", "b", "c", "d"]);
    }

    #[test]
    fn bootstrap_activates_a_node_without_in_edges() {
        let mut g = ComputationalGraph::new();
        let (n, calls) = Gain::boxed(1.0);
        g.add_node("n", n).unwrap();
        signal_carrier(&mut g, "n", FORWARD, Some(Signal::scalar(5.0))).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        // without bootstrap and without in-edges there is nothing to read
        assert_eq!(get_inbound_signal(&mut g, "n", FORWARD, None).unwrap(), None);
    }

    #[test]
    fn nothing_stops_recursion() {
        let mut g = ComputationalGraph::new();
        let calls = Arc::new(AtomicUsize::new(0));
        g.add_node(
            "quiet",
            Box::new(Gain {
                factor: 1.0,
                calls: calls.clone(),
                quiet: true,
            }),
        )
        .unwrap();
        let (next, next_calls) = Gain::boxed(1.0);
        g.add_node("next", next).unwrap();
        g.add_edge("quiet", "next").unwrap();
        fire(&mut g, &["quiet"], &[FORWARD], vec![Signal::scalar(1.0)]).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(next_calls.load(Ordering::SeqCst), 0);
        assert_eq!(apply_signal(&mut g, "next", FORWARD, None).unwrap(), NodeOutput::Nothing);
    }

    #[test]
    fn inbound_signal_unwraps_stacks_and_blocks() {
        let mut g = ComputationalGraph::new();
        for id in ["a", "b", "c", "n"] {
            g.add_node(id, Box::new(Identity::default())).unwrap();
        }
        for id in ["a", "b", "c"] {
            g.add_edge(id, "n").unwrap();
        }
        let edges = g.in_edges("n").unwrap().to_vec();
        g.edge_mut(edges[0]).set_signal(FORWARD, Signal::scalar(1.0));
        g.edge_mut(edges[1]).set_signal(FORWARD, Signal::scalar(2.0));
        assert_eq!(get_inbound_signal(&mut g, "n", FORWARD, None).unwrap(), None);
        assert!(g.edge(edges[0]).signal(FORWARD).is_some(), "blocked read consumed nothing");
        g.edge_mut(edges[2]).set_signal(FORWARD, Signal::scalar(3.0));
        let got = get_inbound_signal(&mut g, "n", FORWARD, None).unwrap().unwrap();
        assert_eq!(
            got,
            Signal::Stack(vec![Signal::scalar(1.0), Signal::scalar(2.0), Signal::scalar(3.0)])
        );
        assert!(edges.iter().all(|&e| g.edge(e).signal(FORWARD).is_none()));

        let mut single = chain();
        let e = single.in_edges("sink").unwrap()[0];
        single.edge_mut(e).set_signal(FORWARD, Signal::scalar(4.0));
        assert_eq!(
            get_inbound_signal(&mut single, "sink", FORWARD, None).unwrap(),
            Some(Signal::scalar(4.0))
        );
    }

    #[test]
    fn outbound_broadcast_and_generator() {
        let mut g = ComputationalGraph::new();
        for id in ["s", "a", "b", "c"] {
            g.add_node(id, Box::new(Identity::default())).unwrap();
        }
        for id in ["a", "b", "c"] {
            g.add_edge("s", id).unwrap();
        }
        set_outbound_signals(&mut g, "s", FORWARD, NodeOutput::Broadcast(Signal::scalar(7.0))).unwrap();
        for id in ["a", "b", "c"] {
            assert_eq!(last_into(&g, id), Some(Signal::scalar(7.0)));
        }
        g.clear_signals();

        let mut two = ComputationalGraph::new();
        for id in ["s", "a", "b"] {
            two.add_node(id, Box::new(Identity::default())).unwrap();
        }
        two.add_edge("s", "a").unwrap();
        two.add_edge("s", "b").unwrap();
        let gen = NodeOutput::Generated(vec![Signal::Plain(scalar(1.0)), Signal::Plain(vector(vec![2.0]))]);
        set_outbound_signals(&mut two, "s", FORWARD, gen).unwrap();
        assert_eq!(last_into(&two, "a"), Some(Signal::scalar(1.0)));
        assert_eq!(last_into(&two, "b"), Some(Signal::scalar(2.0)));

        let short = NodeOutput::Generated(vec![Signal::scalar(1.0)]);
        assert!(matches!(
            set_outbound_signals(&mut two, "s", FORWARD, short),
            Err(Error::GeneratorUnderrun { produced: 1, edges: 2, .. })
        ));
    }

    #[test]
    fn node_errors_carry_the_node_id() {
        let mut g = ComputationalGraph::new();
        g.add_node("x", Box::new(Input::new())).unwrap();
        g.add_node("sm", Box::new(crate::nn::loss::Softmax::default())).unwrap();
        g.add_edge("x", "sm").unwrap();
        let err = fire(&mut g, &["x"], &[FORWARD], vec![Signal::Stack(vec![])]).unwrap_err();
        assert_eq!(err.failing_node(), Some("sm"));
    }
}
