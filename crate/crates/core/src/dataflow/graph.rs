use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use super::{Endpoint, Mode, Operator, OperatorId, Payload, RankId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("operator name `{0}` declared twice")]
    DuplicateOperatorName(String),
    #[error("edge {from} -> {to} references undeclared operator `{missing}`")]
    DanglingEdge {
        from: String,
        to: String,
        missing: String,
    },
    #[error("cycle through non-model operators: {0:?}")]
    IllegalCycle(Vec<String>),
    #[error("operator `{0}` must have at least one instance")]
    ZeroInstances(String),
    #[error("graph has {0} operators, at most 65535 are addressable")]
    TooManyOperators(usize),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash)]
pub enum OperatorKind {
    Source,
    Map,
    Split,
    Udf,
    Model,
    Sink,
}

/// Everything a factory needs to build one instance of an operator.
#[derive(Clone, Debug)]
pub struct InstanceInfo {
    pub endpoint: Endpoint,
    pub instances: u32,
    pub mode: Mode,
    /// Instances of other operators with an edge into this one.
    pub upstream: u32,
}

impl InstanceInfo {
    pub fn rank(&self) -> RankId {
        self.endpoint.rank
    }
}

pub type OperatorFactory = Arc<dyn Fn(&InstanceInfo) -> Box<dyn Operator> + Send + Sync>;

/// Declaration of one logical operator.
#[derive(Clone)]
pub struct OperatorSpec {
    pub name: String,
    pub kind: OperatorKind,
    pub instance_count: u32,
    pub(crate) factory: OperatorFactory,
}

impl OperatorSpec {
    pub fn new<F>(name: impl Into<String>, kind: OperatorKind, instance_count: u32, factory: F) -> Self
    where
        F: Fn(&InstanceInfo) -> Box<dyn Operator> + Send + Sync + 'static,
    {
        Self {
            name: name.into(),
            kind,
            instance_count,
            factory: Arc::new(factory),
        }
    }

    pub fn instantiate(&self, info: &InstanceInfo) -> Box<dyn Operator> {
        (self.factory)(info)
    }
}

impl fmt::Debug for OperatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OperatorSpec")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("instance_count", &self.instance_count)
            .finish_non_exhaustive()
    }
}

/// Extracts the partitioning key of a payload on a hash-sharded edge.
#[derive(Clone, Default)]
pub struct KeyExtractor(Option<Arc<dyn Fn(&Payload) -> Vec<u8> + Send + Sync>>);

impl KeyExtractor {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&Payload) -> Vec<u8> + Send + Sync + 'static,
    {
        Self(Some(Arc::new(f)))
    }

    pub fn key(&self, payload: &Payload) -> Vec<u8> {
        match &self.0 {
            Some(f) => f(payload),
            None => payload.shard_key(),
        }
    }
}

impl fmt::Debug for KeyExtractor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.0.is_some() { "KeyExtractor(custom)" } else { "KeyExtractor(default)" })
    }
}

#[derive(Clone, Debug)]
pub enum Routing {
    /// Sender rank `r` delivers to receiver rank `r mod n`.
    Forward,
    /// `hash_shard(key, n)`.
    HashShard(KeyExtractor),
    /// Every receiver rank; excludes the sender itself on self-edges.
    Broadcast,
}

impl Routing {
    pub fn hash() -> Self {
        Routing::HashShard(KeyExtractor::default())
    }
}

#[derive(Clone, Debug)]
pub struct EdgeSpec {
    pub from: String,
    pub to: String,
    pub routing: Routing,
}

impl EdgeSpec {
    pub fn new(from: impl Into<String>, to: impl Into<String>, routing: Routing) -> Self {
        Self {
            from: from.into(),
            to: to.into(),
            routing,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Edge {
    pub from: OperatorId,
    pub to: OperatorId,
    pub routing: Routing,
}

/// A validated operator graph.
#[derive(Clone, Debug)]
pub struct DataflowGraph {
    pub(crate) operators: Vec<OperatorSpec>,
    pub(crate) edges: Vec<Edge>,
}

impl DataflowGraph {
    pub fn operators(&self) -> &[OperatorSpec] {
        &self.operators
    }

    pub fn operator_id(&self, name: &str) -> Option<OperatorId> {
        self.operators
            .iter()
            .position(|o| o.name == name)
            .map(|i| OperatorId(i as u16))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn topology(&self) -> Topology {
        let n = self.operators.len();
        let mut out_edges = vec![Vec::new(); n];
        let mut upstream = vec![0u32; n];
        for e in &self.edges {
            out_edges[e.from.0 as usize].push((e.to, e.routing.clone()));
            if e.from != e.to {
                upstream[e.to.0 as usize] += self.operators[e.from.0 as usize].instance_count;
            }
        }
        Topology {
            names: self.operators.iter().map(|o| o.name.clone()).collect(),
            kinds: self.operators.iter().map(|o| o.kind).collect(),
            instances: self.operators.iter().map(|o| o.instance_count).collect(),
            out_edges,
            upstream,
        }
    }
}

/// Validates operator declarations and edges into a [`DataflowGraph`].
///
/// Cycles are only allowed when every edge on them connects two `Model`
/// operators; any cycle touching another operator kind is rejected.
pub fn build_graph(specs: Vec<OperatorSpec>, edges: Vec<EdgeSpec>) -> Result<DataflowGraph, GraphError> {
    if specs.len() >= u16::MAX as usize {
        return Err(GraphError::TooManyOperators(specs.len()));
    }
    let mut index = HashMap::new();
    for (i, s) in specs.iter().enumerate() {
        if s.instance_count == 0 {
            return Err(GraphError::ZeroInstances(s.name.clone()));
        }
        if index.insert(s.name.clone(), OperatorId(i as u16)).is_some() {
            return Err(GraphError::DuplicateOperatorName(s.name.clone()));
        }
    }

    let mut resolved = Vec::with_capacity(edges.len());
    for e in edges {
        let lookup = |name: &str| {
            index.get(name).copied().ok_or_else(|| GraphError::DanglingEdge {
                from: e.from.clone(),
                to: e.to.clone(),
                missing: name.to_string(),
            })
        };
        let from = lookup(&e.from)?;
        let to = lookup(&e.to)?;
        resolved.push(Edge {
            from,
            to,
            routing: e.routing,
        });
    }

    // Kahn's algorithm over the graph minus Model->Model edges.
    let n = specs.len();
    let mut indegree = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    for e in &resolved {
        let (f, t) = (e.from.0 as usize, e.to.0 as usize);
        if specs[f].kind == OperatorKind::Model && specs[t].kind == OperatorKind::Model {
            continue;
        }
        adj[f].push(t);
        indegree[t] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(u) = queue.pop_front() {
        visited += 1;
        for &v in &adj[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    if visited != n {
        let cyclic = (0..n)
            .filter(|&i| indegree[i] > 0)
            .map(|i| specs[i].name.clone())
            .collect();
        return Err(GraphError::IllegalCycle(cyclic));
    }

    Ok(DataflowGraph {
        operators: specs,
        edges: resolved,
    })
}

/// Read-only routing tables shared by all execution contexts of a run.
#[derive(Clone, Debug)]
pub struct Topology {
    names: Vec<String>,
    kinds: Vec<OperatorKind>,
    instances: Vec<u32>,
    out_edges: Vec<Vec<(OperatorId, Routing)>>,
    upstream: Vec<u32>,
}

impl Topology {
    pub fn name(&self, op: OperatorId) -> &str {
        &self.names[op.0 as usize]
    }

    pub fn kind(&self, op: OperatorId) -> OperatorKind {
        self.kinds[op.0 as usize]
    }

    pub fn instances(&self, op: OperatorId) -> u32 {
        self.instances[op.0 as usize]
    }

    pub fn operator_count(&self) -> usize {
        self.names.len()
    }

    pub fn out_edges(&self, op: OperatorId) -> &[(OperatorId, Routing)] {
        &self.out_edges[op.0 as usize]
    }

    /// Number of upstream instances (excluding self-edges) that will each send
    /// one end-of-stream marker to every instance of `op`.
    pub fn upstream_instances(&self, op: OperatorId) -> u32 {
        self.upstream[op.0 as usize]
    }

    /// True for channels that carry peer traffic between model instances.
    /// Those channels are unbounded so that the gradient exchange cycle
    /// can never deadlock on full queues.
    pub fn is_peer_channel(&self, from: Endpoint, to: Endpoint) -> bool {
        from == Endpoint::DRIVER
            || (self.kind(from.operator) == OperatorKind::Model
                && self.kind(to.operator) == OperatorKind::Model)
    }

    pub fn endpoints(&self) -> impl Iterator<Item = Endpoint> + '_ {
        self.instances.iter().enumerate().flat_map(|(op, &n)| {
            (0..n).map(move |r| Endpoint::new(OperatorId(op as u16), RankId(r)))
        })
    }

    /// Resolves the receivers of `payload` sent by `from` along edge `(to, routing)`.
    pub fn route(&self, from: Endpoint, to: OperatorId, routing: &Routing, payload: &Payload) -> Vec<Endpoint> {
        let n = self.instances(to);
        match routing {
            Routing::Forward => vec![Endpoint::new(to, RankId(from.rank.0 % n))],
            Routing::HashShard(key) => {
                vec![Endpoint::new(to, super::hash_shard(&key.key(payload), n))]
            }
            Routing::Broadcast => (0..n)
                .map(|r| Endpoint::new(to, RankId(r)))
                .filter(|e| *e != from)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataflow::{Context, OperatorOutput};
    use crate::dataflow::{EngineError, Message};

    struct Nop;
    impl Operator for Nop {
        fn on_message(&mut self, _: Message, _: &mut Context<'_>) -> Result<(), EngineError> {
            Ok(())
        }
        fn is_done(&self) -> bool {
            true
        }
        fn finish(self: Box<Self>) -> OperatorOutput {
            OperatorOutput::None
        }
    }

    fn op(name: &str, kind: OperatorKind, n: u32) -> OperatorSpec {
        OperatorSpec::new(name, kind, n, |_| Box::new(Nop))
    }

    fn text_pipeline_graph() -> (Vec<OperatorSpec>, Vec<EdgeSpec>) {
        (
            vec![
                op("map", OperatorKind::Map, 1),
                op("split", OperatorKind::Split, 1),
                op("udf", OperatorKind::Udf, 1),
                op("w2v", OperatorKind::Model, 4),
                op("sa", OperatorKind::Model, 1),
            ],
            vec![
                EdgeSpec::new("map", "split", Routing::Forward),
                EdgeSpec::new("split", "udf", Routing::Forward),
                EdgeSpec::new("split", "w2v", Routing::hash()),
                EdgeSpec::new("udf", "w2v", Routing::hash()),
                EdgeSpec::new("w2v", "w2v", Routing::Broadcast),
                EdgeSpec::new("w2v", "sa", Routing::Forward),
            ],
        )
    }

    #[test]
    fn accepts_model_cycle_topology() {
        let (ops, edges) = text_pipeline_graph();
        let g = build_graph(ops, edges).unwrap();
        let t = g.topology();
        let w2v = g.operator_id("w2v").unwrap();
        assert_eq!(t.instances(w2v), 4);
        // split + udf feed it; the self-edge does not count.
        assert_eq!(t.upstream_instances(w2v), 2);
        assert_eq!(t.upstream_instances(g.operator_id("sa").unwrap()), 4);
    }

    #[test]
    fn rejects_map_self_loop() {
        let err = build_graph(
            vec![op("m", OperatorKind::Map, 1)],
            vec![EdgeSpec::new("m", "m", Routing::Forward)],
        )
        .unwrap_err();
        assert_eq!(err, GraphError::IllegalCycle(vec!["m".into()]));
    }

    #[test]
    fn rejects_cycle_through_udf() {
        let err = build_graph(
            vec![op("u", OperatorKind::Udf, 1), op("m", OperatorKind::Model, 2)],
            vec![
                EdgeSpec::new("u", "m", Routing::hash()),
                EdgeSpec::new("m", "u", Routing::Forward),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::IllegalCycle(_)));
    }

    #[test]
    fn rejects_dangling_edge() {
        let err = build_graph(
            vec![op("m", OperatorKind::Map, 1)],
            vec![EdgeSpec::new("m", "X", Routing::Forward)],
        )
        .unwrap_err();
        assert!(matches!(err, GraphError::DanglingEdge { ref missing, .. } if missing == "X"));
    }

    #[test]
    fn rejects_duplicates_and_empty_operators() {
        let dup = build_graph(vec![op("a", OperatorKind::Map, 1), op("a", OperatorKind::Sink, 1)], vec![]);
        assert_eq!(dup.unwrap_err(), GraphError::DuplicateOperatorName("a".into()));
        let zero = build_graph(vec![op("a", OperatorKind::Map, 0)], vec![]);
        assert_eq!(zero.unwrap_err(), GraphError::ZeroInstances("a".into()));
    }

    #[test]
    fn broadcast_reaches_all_but_self() {
        let g = build_graph(
            vec![op("m", OperatorKind::Model, 4)],
            vec![EdgeSpec::new("m", "m", Routing::Broadcast)],
        )
        .unwrap();
        let t = g.topology();
        let me = Endpoint::new(OperatorId(0), RankId(2));
        let (to, routing) = &t.out_edges(OperatorId(0))[0];
        let dests: Vec<u32> = t
            .route(me, *to, routing, &Payload::Control(crate::dataflow::Control::Stop))
            .iter()
            .map(|e| e.rank.0)
            .collect();
        assert_eq!(dests, vec![0, 1, 3]);
    }
}
