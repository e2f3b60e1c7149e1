//! Meta-path composition: region neighborhoods reachable by following a
//! typed relation sequence through the urban graph.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::graph::{HeterogeneousUrbanGraph, NodeType, RelationType};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPath {
    pub name: String,
    pub node_sequence: Vec<NodeType>,
    pub relation_sequence: Vec<RelationType>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetaPathError {
    #[error("meta-path {name}: {reason}")]
    SchemaMismatch { name: String, reason: String },
}

impl MetaPath {
    pub fn new(name: &str, node_sequence: Vec<NodeType>, relation_sequence: Vec<RelationType>) -> Self {
        Self {
            name: name.to_owned(),
            node_sequence,
            relation_sequence,
        }
    }

    fn two_hop(name: &str, mid: NodeType, out: RelationType) -> Self {
        Self::new(
            name,
            vec![NodeType::Region, mid, NodeType::Region],
            vec![out, out.reverse()],
        )
    }

    pub fn rr() -> Self {
        Self::new(
            "RR",
            vec![NodeType::Region, NodeType::Region],
            vec![RelationType::AdjacentTo],
        )
    }

    pub fn rcr() -> Self {
        Self::two_hop("RCR", NodeType::PoiCategory, RelationType::Contains)
    }

    pub fn rtor() -> Self {
        Self::two_hop("RT_OR", NodeType::TripOriginTime, RelationType::AttractsPickupAt)
    }

    pub fn rtdr() -> Self {
        Self::two_hop("RT_DR", NodeType::TripDestTime, RelationType::AttractsDropoffAt)
    }

    pub fn rtcr() -> Self {
        Self::two_hop("RT_CR", NodeType::CheckinTime, RelationType::AttractsCheckinAt)
    }

    /// RR, RCR, RT_OR, RT_DR, RT_CR in that order.
    pub fn builtin() -> Vec<MetaPath> {
        vec![Self::rr(), Self::rcr(), Self::rtor(), Self::rtdr(), Self::rtcr()]
    }

    pub fn builtin_by_name(name: &str) -> Option<MetaPath> {
        Self::builtin().into_iter().find(|m| m.name == name)
    }

    pub fn validate(&self) -> Result<(), MetaPathError> {
        let fail = |reason: String| MetaPathError::SchemaMismatch {
            name: self.name.clone(),
            reason,
        };
        let nodes = &self.node_sequence;
        if nodes.len() < 2 {
            return Err(fail("needs at least two node types".into()));
        }
        if nodes[0] != NodeType::Region || nodes[nodes.len() - 1] != NodeType::Region {
            return Err(fail("must start and end at Region".into()));
        }
        if self.relation_sequence.len() != nodes.len() - 1 {
            return Err(fail(format!(
                "{} relations for {} node types",
                self.relation_sequence.len(),
                nodes.len()
            )));
        }
        for (k, rel) in self.relation_sequence.iter().enumerate() {
            if rel.endpoints() != (nodes[k], nodes[k + 1]) {
                return Err(fail(format!(
                    "step {k}: {rel:?} does not connect {} to {}",
                    nodes[k],
                    nodes[k + 1]
                )));
            }
        }
        Ok(())
    }
}

/// Per-region neighbor sets for one meta-path, each sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPathAdjacency {
    pub metapath: MetaPath,
    pub neighbor_sets: Vec<Vec<usize>>,
    pub include_self: bool,
}

impl MetaPathAdjacency {
    pub fn region_count(&self) -> usize {
        self.neighbor_sets.len()
    }

    pub fn neighbors(&self, region: usize) -> &[usize] {
        &self.neighbor_sets[region]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbor_sets[i].binary_search(&j).is_ok()
    }

    pub fn pair_count(&self) -> usize {
        self.neighbor_sets.iter().map(Vec::len).sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbor_sets
            .iter()
            .enumerate()
            .all(|(i, ns)| ns.iter().all(|&j| self.contains(j, i)))
    }

    /// Writes `src,dst` rows, one per neighbor pair.
    pub fn write_edge_list<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["src", "dst"])?;
        for (i, ns) in self.neighbor_sets.iter().enumerate() {
            for j in ns {
                wr.write_record([i.to_string(), j.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Boolean incidence of one relation as sorted target lists per source index.
fn incidence(g: &HeterogeneousUrbanGraph, rel: RelationType) -> Vec<Vec<usize>> {
    let (src_ty, dst_ty) = rel.endpoints();
    let mut rows = vec![Vec::new(); g.node_count(src_ty)];
    for (s, t) in g.edges_of(rel) {
        if s.ty == src_ty && t.ty == dst_ty && s.index < rows.len() && t.index < g.node_count(dst_ty) {
            rows[s.index].push(t.index);
        }
    }
    for r in &mut rows {
        r.sort_unstable();
        r.dedup();
    }
    rows
}

/// Region neighbor sets for `mp` as the boolean product of the relation
/// incidence matrices along the path, plus self-loops when requested.
pub fn compose_adjacency(
    g: &HeterogeneousUrbanGraph,
    mp: &MetaPath,
    include_self: bool,
) -> Result<MetaPathAdjacency, MetaPathError> {
    mp.validate()?;
    let n = g.region_count();
    let steps: Vec<Vec<Vec<usize>>> = mp.relation_sequence.iter().map(|r| incidence(g, *r)).collect();
    let mut neighbor_sets = Vec::with_capacity(n);
    let mut marks: Vec<Vec<bool>> = mp
        .node_sequence
        .iter()
        .map(|ty| vec![false; g.node_count(*ty)])
        .collect();
    for i in 0..n {
        // sparse row-vector times incidence, one hop at a time
        let mut frontier = vec![i];
        for (k, inc) in steps.iter().enumerate() {
            let mark = &mut marks[k + 1];
            let mut next = Vec::new();
            for &u in &frontier {
                for &v in &inc[u] {
                    if !mark[v] {
                        mark[v] = true;
                        next.push(v);
                    }
                }
            }
            for &v in &next {
                mark[v] = false;
            }
            frontier = next;
        }
        if include_self {
            frontier.push(i);
        }
        frontier.sort_unstable();
        frontier.dedup();
        neighbor_sets.push(frontier);
    }
    Ok(MetaPathAdjacency {
        metapath: mp.clone(),
        neighbor_sets,
        include_self,
    })
}

/// Adjacencies for the five built-in meta-paths, with self-loops.
pub fn all_builtin_adjacencies(g: &HeterogeneousUrbanGraph) -> Result<Vec<MetaPathAdjacency>, MetaPathError> {
    MetaPath::builtin()
        .iter()
        .map(|mp| compose_adjacency(g, mp, true))
        .collect()
}
