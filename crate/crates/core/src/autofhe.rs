//! Block-level automatic FHE parameterisation.
//!
//! Discovery walks the graph from each entry, labelling every reachable node
//! with the maximal multiplicative depth accumulated since each ciphertext
//! source. Encryption-boundary nodes (encrypt, rotate, decrypt) reset the
//! count and become sources of their own. Sources whose labels meet at any
//! node interact and are merged into one parameter group whose cost is the
//! deepest label any member reached.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::ckks::{CkksParams, KeyPair, Keyring, NoiseModel, SCHEME_CKKS};
use crate::error::{Error, Result};
use crate::graph::{ComputationNode, ComputationalGraph, NodeId};
use crate::union_find::UnionFind;

/// Output of [`auto_he`]: which group each source belongs to and the
/// maximal cost of every group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroups {
    pub membership: IndexMap<NodeId, usize>,
    pub costs: Vec<u32>,
}

impl ParamGroups {
    pub fn group_of(&self, source: &str) -> Option<usize> {
        self.membership.get(source).copied()
    }

    pub fn len(&self) -> usize {
        self.costs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.costs.is_empty()
    }

    /// Source ids of group `group`, in membership order.
    pub fn members(&self, group: usize) -> impl Iterator<Item = &str> {
        self.membership
            .iter()
            .filter(move |(_, &g)| g == group)
            .map(|(id, _)| id.as_str())
    }
}

type Predicate = dyn Fn(&dyn ComputationNode) -> bool + Send + Sync;

/// Marks the nodes at which ciphertext depth resets.
#[derive(Clone)]
pub struct ConcernPredicate(Arc<Predicate>);

impl ConcernPredicate {
    pub fn new(f: impl Fn(&dyn ComputationNode) -> bool + Send + Sync + 'static) -> Self {
        ConcernPredicate(Arc::new(f))
    }

    /// Concern by node kind name.
    pub fn kinds(kinds: &[&str]) -> Self {
        let kinds: Vec<String> = kinds.iter().map(|k| (*k).to_owned()).collect();
        Self::new(move |node| kinds.iter().any(|k| k == node.kind()))
    }

    pub fn matches(&self, node: &dyn ComputationNode) -> bool {
        (self.0)(node)
    }
}

impl Default for ConcernPredicate {
    fn default() -> Self {
        Self::kinds(&["Encrypt", "Rotate", "Decrypt"])
    }
}

impl std::fmt::Debug for ConcernPredicate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ConcernPredicate")
    }
}

/// Traversal state shared by every discovery call of one [`auto_he`] run.
#[derive(Debug, Default)]
struct Discovery {
    restarted: HashSet<NodeId>,
    /// Sources in order of first appearance.
    sources: Vec<NodeId>,
}

impl Discovery {
    fn note_source(&mut self, s: &str) {
        if !self.sources.iter().any(|x| x == s) {
            self.sources.push(s.to_owned());
        }
    }

    fn discover(
        &mut self,
        g: &mut ComputationalGraph,
        n: &str,
        s: &str,
        concern: &ConcernPredicate,
        c: u32,
        depth: usize,
    ) -> Result<()> {
        if depth > g.node_count() {
            return Err(Error::Cycle(n.to_owned()));
        }
        let record = g.record_mut(n)?;
        if s != n {
            match record.sources.get(s) {
                // an equal or deeper path already labelled everything below
                Some(&known) if known >= c => return Ok(()),
                _ => {
                    record.sources.insert(s.to_owned(), c);
                }
            }
        }
        if s != n && concern.matches(record.node.as_ref()) {
            if self.restarted.insert(n.to_owned()) {
                self.note_source(n);
                self.discover(g, n, n, concern, 0, 0)?;
            }
            return Ok(());
        }
        let successors: Vec<String> = g.successors(n)?.into_iter().map(str::to_owned).collect();
        for next in successors {
            let nxt = c + g.node(&next)?.cost();
            self.discover(g, &next, s, concern, nxt, depth + 1)?;
        }
        Ok(())
    }
}

/// Label `g` with source costs reachable from `n` on behalf of source `s`.
pub fn auto_he_discover(
    g: &mut ComputationalGraph,
    n: &str,
    s: &str,
    concern: &ConcernPredicate,
    c: u32,
) -> Result<()> {
    g.record(s)?;
    Discovery::default().discover(g, n, s, concern, c, 0)
}

/// Discover sources and costs from every entry, then merge interacting
/// sources into groups.
pub fn auto_he(
    g: &mut ComputationalGraph,
    entries: &[&str],
    concern: &ConcernPredicate,
) -> Result<ParamGroups> {
    g.clear_sources();
    let mut discovery = Discovery::default();
    for &entry in entries {
        discovery.note_source(entry);
        discovery.discover(g, entry, entry, concern, 0, 0)?;
    }
    let mut sources = discovery.sources;
    for (_, record) in g.records() {
        for s in record.sources.keys() {
            if !sources.contains(s) {
                sources.push(s.clone());
            }
        }
    }
    let index: IndexMap<&str, usize> = sources.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut sets = UnionFind::new(sources.len());
    for (_, record) in g.records() {
        let mut labelled = record.sources.keys().map(|s| index[s.as_str()]);
        if let Some(first) = labelled.next() {
            labelled.for_each(|other| {
                sets.union(first, other);
            });
        }
    }

    let mut group_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut membership = IndexMap::new();
    for (i, s) in sources.iter().enumerate() {
        let root = sets.find(i);
        let next = group_of_root.len();
        let group = *group_of_root.entry(root).or_insert(next);
        membership.insert(s.clone(), group);
    }
    let mut costs = vec![0u32; group_of_root.len()];
    for (_, record) in g.records() {
        for (s, &c) in &record.sources {
            let group = membership[s];
            costs[group] = costs[group].max(c);
        }
    }
    Ok(ParamGroups { membership, costs })
}

/// Heuristic RNS-CKKS parameters for a group of maximal cost `cost`, with
/// scale power `scale_power` and special-prime multiplier `special`.
pub fn parameterise(cost: i64, scale_power: u32, special: f64) -> Result<CkksParams> {
    if cost < 0 {
        return Err(Error::Domain(format!("group cost {cost} is negative")));
    }
    if scale_power < 30 {
        log::warn!("scale power {scale_power} is below 30; expect noise and prime shortages");
    }
    let mut bits = vec![scale_power; cost as usize + 2];
    let last = bits.len() - 1;
    bits[0] = (f64::from(bits[0]) * special) as u32;
    bits[last] = (f64::from(bits[last]) * special) as u32;
    let total: u32 = bits.iter().sum();
    let mut bound: u64 = 27;
    while bound < u64::from(total) {
        bound *= 2;
    }
    Ok(CkksParams {
        scheme: SCHEME_CKKS,
        scale: 2f64.powi(scale_power as i32),
        coeff_mod_bits: bits,
        poly_modulus_degree: (1024.0 * (bound as f64 / 27.0)) as usize,
    })
}

/// Call `param_fn` once per group and attach the result to every source
/// node of that group.
pub fn apply_params(
    g: &mut ComputationalGraph,
    groups: &ParamGroups,
    mut param_fn: impl FnMut(u32) -> Result<CkksParams>,
) -> Result<BTreeMap<usize, CkksParams>> {
    let mut params = BTreeMap::new();
    for (group, &cost) in groups.costs.iter().enumerate() {
        params.insert(group, param_fn(cost)?);
    }
    for (source, &group) in &groups.membership {
        g.node_mut(source)?.attach_params(&params[&group]);
    }
    Ok(params)
}

/// One key pair per group, attached to the group's source nodes.
pub fn provision_keys(
    g: &mut ComputationalGraph,
    groups: &ParamGroups,
    params: &BTreeMap<usize, CkksParams>,
    noise: Option<NoiseModel>,
) -> Result<Arc<Keyring>> {
    let keys: BTreeMap<usize, KeyPair> = params
        .iter()
        .map(|(&group, p)| {
            let key = KeyPair::generate(p.clone());
            let key = match noise {
                Some(n) => key.with_noise(NoiseModel {
                    seed: n.seed.wrapping_add(group as u64),
                    ..n
                }),
                None => key,
            };
            (group, key)
        })
        .collect();
    let mut ring = Keyring::new();
    keys.values().cloned().for_each(|k| ring.insert(k));
    let ring = Arc::new(ring);
    for (source, group) in &groups.membership {
        g.node_mut(source)?.attach_key(&keys[group], &ring);
    }
    Ok(ring)
}

/// Entry points for discovery: encryption nodes, or every node without
/// inbound edges when the graph has none.
pub fn default_entries(g: &ComputationalGraph) -> Vec<String> {
    let encrypt: Vec<String> = g
        .records()
        .filter(|(_, r)| r.node.kind() == "Encrypt")
        .map(|(id, _)| id.to_owned())
        .collect();
    if !encrypt.is_empty() {
        return encrypt;
    }
    g.node_ids()
        .filter(|id| g.in_edges(id).map(|e| e.is_empty()).unwrap_or(false))
        .map(str::to_owned)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::crypto::Rotate;
    use crate::nn::glue::Identity;

    fn node(cost: u32) -> Box<dyn ComputationNode> {
        Box::new(Identity::with_cost(cost))
    }

    fn graph(nodes: &[(&str, u32)], edges: &[(&str, &str)]) -> ComputationalGraph {
        let mut g = ComputationalGraph::new();
        for &(id, cost) in nodes {
            g.add_node(id, node(cost)).unwrap();
        }
        for &(s, d) in edges {
            g.add_edge(s, d).unwrap();
        }
        g
    }

    #[test]
    fn parameterise_follows_the_doubling_rule() {
        let p = parameterise(1, 40, 1.5).unwrap();
        assert_eq!(p.scheme, 2);
        assert_eq!(p.scale, 2f64.powi(40));
        assert_eq!(p.coeff_mod_bits, [60, 40, 60]);
        assert_eq!(p.poly_modulus_degree, 8192);
        let p = parameterise(3, 40, 1.5).unwrap();
        assert_eq!(p.coeff_mod_bits, [60, 40, 40, 40, 60]);
        assert_eq!(p.poly_modulus_degree, 16384);
        let p = parameterise(0, 40, 1.5).unwrap();
        assert_eq!(p.coeff_mod_bits, [60, 60]);
        assert_eq!(p.poly_modulus_degree, 8192);
        assert!(matches!(parameterise(-1, 40, 1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn chain_into_a_rotation_restarts() {
        let mut g = graph(&[("x", 0), ("c1", 2)], &[("x", "c1")]);
        g.add_node("r0", Box::new(Rotate::default())).unwrap();
        g.add_node("after", node(1)).unwrap();
        g.add_edge("c1", "r0").unwrap();
        g.add_edge("r0", "after").unwrap();
        auto_he_discover(&mut g, "x", "x", &ConcernPredicate::default(), 0).unwrap();
        assert_eq!(g.record("c1").unwrap().sources["x"], 2);
        assert_eq!(g.record("r0").unwrap().sources["x"], 2);
        let after = &g.record("after").unwrap().sources;
        assert_eq!(after.get("r0"), Some(&1));
        assert_eq!(after.get("x"), None);
    }

    #[test]
    fn joined_sources_take_their_longest_paths() {
        let mut g = graph(
            &[("x0", 0), ("x1", 0), ("c0", 1), ("c1", 2)],
            &[("x0", "c1"), ("x1", "c0"), ("c0", "c1")],
        );
        let concern = ConcernPredicate::default();
        auto_he_discover(&mut g, "x0", "x0", &concern, 0).unwrap();
        auto_he_discover(&mut g, "x1", "x1", &concern, 0).unwrap();
        let labels = &g.record("c1").unwrap().sources;
        assert_eq!((labels["x0"], labels["x1"]), (2, 3));
    }

    #[test]
    fn diamond_keeps_the_maximum() {
        let mut g = graph(
            &[("x", 0), ("a", 2), ("b", 1), ("b2", 2), ("join", 0)],
            &[("x", "a"), ("x", "b"), ("b", "b2"), ("a", "join"), ("b2", "join")],
        );
        auto_he_discover(&mut g, "x", "x", &ConcernPredicate::default(), 0).unwrap();
        assert_eq!(g.record("join").unwrap().sources["x"], 3);
    }

    #[test]
    fn disconnected_chains_stay_apart() {
        let mut g = graph(
            &[("x0", 0), ("a", 2), ("x1", 0), ("b", 1)],
            &[("x0", "a"), ("x1", "b")],
        );
        let groups = auto_he(&mut g, &["x0", "x1"], &ConcernPredicate::default()).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups.costs, [2, 1]);
        assert_ne!(groups.group_of("x0"), groups.group_of("x1"));
    }

    #[test]
    fn single_path_cost() {
        let mut g = graph(
            &[("x", 0), ("a", 2), ("b", 1), ("c", 2)],
            &[("x", "a"), ("a", "b"), ("b", "c")],
        );
        let groups = auto_he(&mut g, &["x"], &ConcernPredicate::default()).unwrap();
        assert_eq!(groups.membership.len(), 1);
        assert_eq!(groups.group_of("x"), Some(0));
        assert_eq!(groups.costs, [5]);
    }

    #[test]
    fn transitive_co_occurrence_merges() {
        // a meets b at m1, b meets c at m2: all three share a group
        let mut g = graph(
            &[("a", 0), ("b", 0), ("c", 0), ("m1", 1), ("m2", 2)],
            &[("a", "m1"), ("b", "m1"), ("b", "m2"), ("c", "m2")],
        );
        let groups = auto_he(&mut g, &["a", "b", "c"], &ConcernPredicate::default()).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups.costs, [2]);
    }

    #[test]
    fn positive_cycles_are_reported() {
        let mut g = graph(&[("x", 0), ("a", 1), ("b", 1)], &[("x", "a"), ("a", "b"), ("b", "a")]);
        assert!(matches!(
            auto_he(&mut g, &["x"], &ConcernPredicate::default()),
            Err(Error::Cycle(_))
        ));
        // zero-cost loops terminate through the label check
        let mut g = graph(&[("x", 0), ("a", 0)], &[("x", "a"), ("a", "a")]);
        assert_eq!(auto_he(&mut g, &["x"], &ConcernPredicate::default()).unwrap().costs, [0]);
    }

    #[test]
    fn params_are_applied_per_group() {
        let mut g = graph(
            &[("x0", 0), ("a", 2), ("x1", 0), ("b", 1)],
            &[("x0", "a"), ("x1", "b")],
        );
        let groups = auto_he(&mut g, &["x0", "x1"], &ConcernPredicate::default()).unwrap();
        let params = apply_params(&mut g, &groups, |c| parameterise(c.into(), 40, 1.5)).unwrap();
        assert_eq!(params.len(), 2);
        assert_eq!(params[&0].coeff_mod_bits.len(), 4);
        assert_eq!(params[&1].coeff_mod_bits.len(), 3);

        let fixed = parameterise(7, 40, 1.5).unwrap();
        let shared = apply_params(&mut g, &groups, |_| Ok(fixed.clone())).unwrap();
        assert!(shared.values().all(|p| *p == fixed));
    }
}
