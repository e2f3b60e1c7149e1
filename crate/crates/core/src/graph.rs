//! Heterogeneous urban graph: typed node sets, typed directed edges and
//! random node features, built from region, POI, check-in and trip tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Region,
    PoiCategory,
    CheckinTime,
    TripOriginTime,
    TripDestTime,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Region,
        NodeType::PoiCategory,
        NodeType::CheckinTime,
        NodeType::TripOriginTime,
        NodeType::TripDestTime,
    ];

    /// Short label used in meta-path names (`R`, `C`, `T_C`, `T_O`, `T_D`).
    pub fn short(self) -> &'static str {
        match self {
            NodeType::Region => "R",
            NodeType::PoiCategory => "C",
            NodeType::CheckinTime => "T_C",
            NodeType::TripOriginTime => "T_O",
            NodeType::TripDestTime => "T_D",
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationType {
    AdjacentTo,
    Contains,
    LocatedIn,
    AttractsCheckinAt,
    GeneratesCheckinIn,
    AttractsPickupAt,
    GeneratesPickupIn,
    AttractsDropoffAt,
    GeneratesDropoffIn,
}

impl RelationType {
    pub const ALL: [RelationType; 9] = [
        RelationType::AdjacentTo,
        RelationType::Contains,
        RelationType::LocatedIn,
        RelationType::AttractsCheckinAt,
        RelationType::GeneratesCheckinIn,
        RelationType::AttractsPickupAt,
        RelationType::GeneratesPickupIn,
        RelationType::AttractsDropoffAt,
        RelationType::GeneratesDropoffIn,
    ];

    /// (source type, target type) allowed by the schema.
    pub fn endpoints(self) -> (NodeType, NodeType) {
        use NodeType::*;
        match self {
            RelationType::AdjacentTo => (Region, Region),
            RelationType::Contains => (Region, PoiCategory),
            RelationType::LocatedIn => (PoiCategory, Region),
            RelationType::AttractsCheckinAt => (Region, CheckinTime),
            RelationType::GeneratesCheckinIn => (CheckinTime, Region),
            RelationType::AttractsPickupAt => (Region, TripOriginTime),
            RelationType::GeneratesPickupIn => (TripOriginTime, Region),
            RelationType::AttractsDropoffAt => (Region, TripDestTime),
            RelationType::GeneratesDropoffIn => (TripDestTime, Region),
        }
    }

    pub fn reverse(self) -> RelationType {
        use RelationType::*;
        match self {
            AdjacentTo => AdjacentTo,
            Contains => LocatedIn,
            LocatedIn => Contains,
            AttractsCheckinAt => GeneratesCheckinIn,
            GeneratesCheckinIn => AttractsCheckinAt,
            AttractsPickupAt => GeneratesPickupIn,
            GeneratesPickupIn => AttractsPickupAt,
            AttractsDropoffAt => GeneratesDropoffIn,
            GeneratesDropoffIn => AttractsDropoffAt,
        }
    }

    pub fn is_attract(self) -> bool {
        matches!(
            self,
            RelationType::AttractsCheckinAt
                | RelationType::AttractsPickupAt
                | RelationType::AttractsDropoffAt
        )
    }
}

/// A node identified by its type and its index within that type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub ty: NodeType,
    pub index: usize,
}

impl NodeId {
    pub fn new(ty: NodeType, index: usize) -> Self {
        Self { ty, index }
    }

    pub fn region(index: usize) -> Self {
        Self::new(NodeType::Region, index)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.ty, self.index)
    }
}

/// Maps timestamps to week-periodic slots. With the default 168 slots the
/// slot index is `weekday * 24 + hour` (Monday = 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeSlotSpec {
    pub slots_per_week: usize,
}

impl Default for TimeSlotSpec {
    fn default() -> Self {
        Self { slots_per_week: 168 }
    }
}

impl TimeSlotSpec {
    pub fn slot_of_week_hour(&self, week_hour: usize) -> usize {
        debug_assert!(week_hour < 168);
        week_hour * self.slots_per_week / 168
    }

    pub fn slot_of(&self, ts: &NaiveDateTime) -> usize {
        let week_hour = ts.weekday().num_days_from_monday() as usize * 24 + ts.hour() as usize;
        self.slot_of_week_hour(week_hour)
    }

    /// Parses an ISO-8601 timestamp and returns its slot. Offsets are
    /// honoured by using the local wall-clock time of the stated offset.
    pub fn slot_of_str(&self, ts: &str) -> Option<usize> {
        parse_timestamp(ts).map(|t| self.slot_of(&t))
    }
}

pub fn parse_timestamp(ts: &str) -> Option<NaiveDateTime> {
    let ts = ts.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(ts) {
        return Some(dt.naive_local());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(ts, f).ok())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionRecord {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyRecord {
    pub src: usize,
    pub dst: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoiRecord {
    pub venue_id: String,
    pub region_id: usize,
    pub category: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckinRecord {
    pub user: String,
    pub venue_id: String,
    pub timestamp: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub pickup_ts: String,
    pub dropoff_ts: String,
    pub origin_region: usize,
    pub dest_region: usize,
}

/// Raw tables consumed by [`build_hug`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventTables {
    pub regions: Vec<RegionRecord>,
    pub adjacency: Vec<AdjacencyRecord>,
    pub pois: Vec<PoiRecord>,
    pub checkins: Vec<CheckinRecord>,
    pub trips: Vec<TripRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HugConfig {
    #[serde(default)]
    pub time_slots: TimeSlotSpec,
    /// Fraction of positive (region, slot) trip pairs kept as hotspots.
    #[serde(default = "default_hotspot_fraction")]
    pub hotspot_fraction: f64,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_hotspot_fraction() -> f64 {
    0.10
}

fn default_feature_dim() -> usize {
    250
}

impl Default for HugConfig {
    fn default() -> Self {
        Self {
            time_slots: TimeSlotSpec::default(),
            hotspot_fraction: default_hotspot_fraction(),
            feature_dim: default_feature_dim(),
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GraphError {
    #[error("{table} row {row}: unknown region id {region}")]
    UnknownRegion {
        table: &'static str,
        row: usize,
        region: usize,
    },
    #[error("check-in row {row}: unknown venue {venue:?}")]
    UnknownVenue { row: usize, venue: String },
    #[error("{table} row {row}: malformed timestamp {value:?}")]
    MalformedTimestamp {
        table: &'static str,
        row: usize,
        value: String,
    },
    #[error("empty {0} table")]
    EmptyEventTable(&'static str),
    #[error("region ids must be exactly 0..{expected}; offending id {found}")]
    NonContiguousRegions { expected: usize, found: usize },
    #[error("hotspot fraction must lie in (0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("invalid time-slot spec: {0} slots per week")]
    InvalidTimeSlots(usize),
}

/// Typed directed graph over regions, POI categories and three kinds of
/// week-hour time nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct HeterogeneousUrbanGraph {
    /// Node labels per type; a node's index is its position in the list.
    pub nodes: BTreeMap<NodeType, Vec<String>>,
    pub edges: BTreeMap<RelationType, Vec<(NodeId, NodeId)>>,
    /// One `count x m` feature matrix per node type.
    pub features: BTreeMap<NodeType, Matrix>,
}

impl HeterogeneousUrbanGraph {
    /// Graph with the given node labels, no edges and zero-width features.
    pub fn with_nodes(nodes: BTreeMap<NodeType, Vec<String>>) -> Self {
        let mut nodes = nodes;
        for ty in NodeType::ALL {
            nodes.entry(ty).or_default();
        }
        let features = nodes
            .iter()
            .map(|(ty, labels)| (*ty, Matrix::zeros(labels.len(), 0)))
            .collect();
        Self {
            nodes,
            edges: RelationType::ALL.iter().map(|r| (*r, Vec::new())).collect(),
            features,
        }
    }

    pub fn node_count(&self, ty: NodeType) -> usize {
        self.nodes.get(&ty).map_or(0, Vec::len)
    }

    pub fn region_count(&self) -> usize {
        self.node_count(NodeType::Region)
    }

    pub fn edges_of(&self, rel: RelationType) -> &[(NodeId, NodeId)] {
        self.edges.get(&rel).map_or(&[], Vec::as_slice)
    }

    pub fn edge_count(&self, rel: RelationType) -> usize {
        self.edges_of(rel).len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.values().next().map_or(0, Matrix::cols)
    }

    pub fn add_edge(&mut self, rel: RelationType, src: NodeId, dst: NodeId) {
        self.edges.entry(rel).or_default().push((src, dst));
    }

    /// Adds `rel(src, dst)` and its reverse relation `(dst, src)`.
    pub fn add_edge_pair(&mut self, rel: RelationType, src: NodeId, dst: NodeId) {
        self.add_edge(rel, src, dst);
        if rel != RelationType::AdjacentTo || src != dst {
            self.add_edge(rel.reverse(), dst, src);
        }
    }

    /// Per-relation summary in the layout of the usual graph statistics table.
    pub fn statistics(&self) -> GraphStatistics {
        use NodeType::*;
        let row = |label: &str, a: NodeType, b: NodeType, rel: RelationType| StatRow {
            relation: label.to_owned(),
            count_a: self.node_count(a),
            count_b: self.node_count(b),
            edges: self.edge_count(rel),
        };
        GraphStatistics {
            rows: vec![
                row("R-T_C", Region, CheckinTime, RelationType::AttractsCheckinAt),
                row("R-T_O", Region, TripOriginTime, RelationType::AttractsPickupAt),
                row("R-T_D", Region, TripDestTime, RelationType::AttractsDropoffAt),
                row("R-R", Region, Region, RelationType::AdjacentTo),
                row("R-C", Region, PoiCategory, RelationType::Contains),
            ],
            feature_dim: self.feature_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub relation: String,
    pub count_a: usize,
    pub count_b: usize,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphStatistics {
    pub rows: Vec<StatRow>,
    pub feature_dim: usize,
}

impl fmt::Display for GraphStatistics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>6} {:>6} {:>8}   Features", "Relations", "#A", "#B", "#A-B")?;
        for (k, r) in self.rows.iter().enumerate() {
            let feat = if k == self.rows.len() / 2 {
                self.feature_dim.to_string()
            } else {
                String::new()
            };
            writeln!(
                f,
                "{:<10} {:>6} {:>6} {:>8}   {}",
                r.relation, r.count_a, r.count_b, r.edges, feat
            )?;
        }
        Ok(())
    }
}

/// Keeps the `ceil(k * P)` (region, slot) pairs with the largest counts,
/// where `P` is the number of pairs with a positive count. Ties at the
/// cutoff go to the lexicographically smaller (region, slot).
pub fn hotspot_filter(
    counts: &BTreeMap<(usize, usize), u64>,
    k: f64,
) -> Result<BTreeSet<(usize, usize)>, GraphError> {
    if !(k > 0.0 && k <= 1.0) {
        return Err(GraphError::InvalidFraction(k));
    }
    let mut positive: Vec<((usize, usize), u64)> =
        counts.iter().filter(|(_, &c)| c > 0).map(|(p, c)| (*p, *c)).collect();
    let keep = hotspot_keep_count(positive.len(), k);
    // stable sort on a BTreeMap-ordered list keeps lexicographic tie order
    positive.sort_by(|a, b| b.1.cmp(&a.1));
    Ok(positive.into_iter().take(keep).map(|(p, _)| p).collect())
}

/// `ceil(k * positive)`, guarding against `k * n` landing a hair above an
/// integer through rounding.
pub fn hotspot_keep_count(positive: usize, k: f64) -> usize {
    if positive == 0 {
        return 0;
    }
    let raw = k * positive as f64;
    let keep = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    keep.clamp(1, positive)
}

/// Builds the heterogeneous urban graph from event tables.
///
/// Duplicate (region, slot) or (region, category) observations collapse to
/// one unweighted edge. Trip time nodes exist for every slot; only hotspot
/// pairs get edges.
pub fn build_hug(tables: &EventTables, cfg: &HugConfig) -> Result<HeterogeneousUrbanGraph, GraphError> {
    if tables.regions.is_empty() {
        return Err(GraphError::EmptyEventTable("regions"));
    }
    if cfg.time_slots.slots_per_week == 0 || cfg.time_slots.slots_per_week > 168 {
        return Err(GraphError::InvalidTimeSlots(cfg.time_slots.slots_per_week));
    }
    if !(cfg.hotspot_fraction > 0.0 && cfg.hotspot_fraction <= 1.0) {
        return Err(GraphError::InvalidFraction(cfg.hotspot_fraction));
    }
    let n = tables.regions.len();
    let mut region_names = vec![None; n];
    for r in &tables.regions {
        if r.id >= n || region_names[r.id].is_some() {
            return Err(GraphError::NonContiguousRegions {
                expected: n,
                found: r.id,
            });
        }
        region_names[r.id] = Some(r.name.clone());
    }
    let region_names: Vec<String> = region_names.into_iter().map(Option::unwrap).collect();
    let check_region = |table, row, region| {
        if region < n {
            Ok(())
        } else {
            Err(GraphError::UnknownRegion { table, row, region })
        }
    };

    let categories: Vec<String> = tables
        .pois
        .iter()
        .map(|p| p.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cat_index: HashMap<&str, usize> =
        categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let slots = cfg.time_slots.slots_per_week;
    let slot_labels: Vec<String> = (0..slots).map(|s| format!("slot{s}")).collect();
    let mut nodes = BTreeMap::new();
    nodes.insert(NodeType::Region, region_names);
    nodes.insert(NodeType::PoiCategory, categories.clone());
    nodes.insert(NodeType::CheckinTime, slot_labels.clone());
    nodes.insert(NodeType::TripOriginTime, slot_labels.clone());
    nodes.insert(NodeType::TripDestTime, slot_labels);
    let mut g = HeterogeneousUrbanGraph::with_nodes(nodes);

    let mut adjacent = BTreeSet::new();
    for (row, a) in tables.adjacency.iter().enumerate() {
        check_region("adjacency", row, a.src)?;
        check_region("adjacency", row, a.dst)?;
        if a.src != a.dst {
            adjacent.insert((a.src, a.dst));
            adjacent.insert((a.dst, a.src));
        }
    }
    for (s, d) in adjacent {
        g.add_edge(RelationType::AdjacentTo, NodeId::region(s), NodeId::region(d));
    }

    let mut venues: HashMap<&str, (usize, usize)> = HashMap::new();
    let mut contains = BTreeSet::new();
    for (row, p) in tables.pois.iter().enumerate() {
        check_region("pois", row, p.region_id)?;
        let c = cat_index[p.category.as_str()];
        venues.insert(p.venue_id.as_str(), (p.region_id, c));
        contains.insert((p.region_id, c));
    }
    for (r, c) in contains {
        g.add_edge_pair(
            RelationType::Contains,
            NodeId::region(r),
            NodeId::new(NodeType::PoiCategory, c),
        );
    }

    let mut checkin_pairs = BTreeSet::new();
    for (row, ck) in tables.checkins.iter().enumerate() {
        let &(region, _) = venues.get(ck.venue_id.as_str()).ok_or_else(|| GraphError::UnknownVenue {
            row,
            venue: ck.venue_id.clone(),
        })?;
        let slot = cfg.time_slots.slot_of_str(&ck.timestamp).ok_or_else(|| {
            GraphError::MalformedTimestamp {
                table: "checkins",
                row,
                value: ck.timestamp.clone(),
            }
        })?;
        checkin_pairs.insert((region, slot));
    }
    for (r, s) in checkin_pairs {
        g.add_edge_pair(
            RelationType::AttractsCheckinAt,
            NodeId::region(r),
            NodeId::new(NodeType::CheckinTime, s),
        );
    }

    let (pickups, dropoffs) = trip_slot_counts(&tables.trips, &cfg.time_slots, n)?;
    for (counts, rel, ty) in [
        (&pickups, RelationType::AttractsPickupAt, NodeType::TripOriginTime),
        (&dropoffs, RelationType::AttractsDropoffAt, NodeType::TripDestTime),
    ] {
        for (r, s) in hotspot_filter(counts, cfg.hotspot_fraction)? {
            g.add_edge_pair(rel, NodeId::region(r), NodeId::new(ty, s));
        }
    }

    g.features = random_features(&g.nodes, cfg.feature_dim, cfg.seed);
    Ok(g)
}

/// Trip counts per (origin region, pickup slot) and (destination region,
/// dropoff slot).
#[allow(clippy::type_complexity)]
pub fn trip_slot_counts(
    trips: &[TripRecord],
    spec: &TimeSlotSpec,
    regions: usize,
) -> Result<(BTreeMap<(usize, usize), u64>, BTreeMap<(usize, usize), u64>), GraphError> {
    let mut pickups = BTreeMap::new();
    let mut dropoffs = BTreeMap::new();
    for (row, t) in trips.iter().enumerate() {
        for region in [t.origin_region, t.dest_region] {
            if region >= regions {
                return Err(GraphError::UnknownRegion {
                    table: "trips",
                    row,
                    region,
                });
            }
        }
        let slot = |value: &String| {
            spec.slot_of_str(value).ok_or_else(|| GraphError::MalformedTimestamp {
                table: "trips",
                row,
                value: value.clone(),
            })
        };
        *pickups.entry((t.origin_region, slot(&t.pickup_ts)?)).or_insert(0) += 1;
        *dropoffs.entry((t.dest_region, slot(&t.dropoff_ts)?)).or_insert(0) += 1;
    }
    Ok((pickups, dropoffs))
}

/// i.i.d. uniform[-1, 1] features, drawn in node-type order then node order.
pub fn random_features(
    nodes: &BTreeMap<NodeType, Vec<String>>,
    dim: usize,
    seed: u64,
) -> BTreeMap<NodeType, Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NodeType::ALL
        .iter()
        .map(|ty| {
            let count = nodes.get(ty).map_or(0, Vec::len);
            let m = Matrix::from_fn(count, dim, |_, _| rng.gen_range(-1.0..=1.0));
            (*ty, m)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SchemaViolation {
    /// An endpoint index is outside its node set.
    UnknownNode { relation: RelationType, edge: (NodeId, NodeId) },
    /// Endpoint types disagree with the relation's schema.
    TypeMismatch { relation: RelationType, edge: (NodeId, NodeId) },
    /// The declared reverse edge is absent.
    MissingReverse { relation: RelationType, edge: (NodeId, NodeId) },
    /// A node type's feature matrix has the wrong row count or width.
    FeatureShape { ty: NodeType, rows: usize, cols: usize },
}

impl fmt::Display for SchemaViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SchemaViolation::UnknownNode { relation, edge } => {
                write!(f, "{relation:?}({}, {}): endpoint not in node set", edge.0, edge.1)
            }
            SchemaViolation::TypeMismatch { relation, edge } => {
                write!(f, "{relation:?}({}, {}): endpoint types violate schema", edge.0, edge.1)
            }
            SchemaViolation::MissingReverse { relation, edge } => write!(
                f,
                "{relation:?}({}, {}): missing reverse {:?}",
                edge.0,
                edge.1,
                relation.reverse()
            ),
            SchemaViolation::FeatureShape { ty, rows, cols } => {
                write!(f, "features for {ty}: unexpected shape {rows}x{cols}")
            }
        }
    }
}

/// Lists every broken graph invariant; empty means the graph is valid.
pub fn validate_schema(g: &HeterogeneousUrbanGraph) -> Vec<SchemaViolation> {
    let mut out = Vec::new();
    let edge_sets: BTreeMap<RelationType, BTreeSet<(NodeId, NodeId)>> = g
        .edges
        .iter()
        .map(|(r, es)| (*r, es.iter().copied().collect()))
        .collect();
    let empty = BTreeSet::new();
    for (&relation, edges) in &g.edges {
        let (st, tt) = relation.endpoints();
        for &edge in edges {
            let (s, t) = edge;
            if s.ty != st || t.ty != tt {
                out.push(SchemaViolation::TypeMismatch { relation, edge });
                continue;
            }
            if s.index >= g.node_count(s.ty) || t.index >= g.node_count(t.ty) {
                out.push(SchemaViolation::UnknownNode { relation, edge });
                continue;
            }
            let needs_reverse = relation.is_attract()
                || relation == RelationType::AdjacentTo
                || relation == RelationType::Contains;
            if needs_reverse
                && !edge_sets
                    .get(&relation.reverse())
                    .unwrap_or(&empty)
                    .contains(&(t, s))
            {
                out.push(SchemaViolation::MissingReverse { relation, edge });
            }
        }
    }
    let dim = g.feature_dim();
    for ty in NodeType::ALL {
        if let Some(m) = g.features.get(&ty) {
            if m.rows() != g.node_count(ty) || m.cols() != dim {
                out.push(SchemaViolation::FeatureShape {
                    ty,
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn regions(n: usize) -> Vec<RegionRecord> {
        (0..n)
            .map(|id| RegionRecord {
                id,
                name: format!("r{id}"),
            })
            .collect()
    }

    fn trip(o: usize, d: usize, ts: &str) -> TripRecord {
        TripRecord {
            pickup_ts: ts.into(),
            dropoff_ts: ts.into(),
            origin_region: o,
            dest_region: d,
        }
    }

    #[test]
    fn week_hour_slots() {
        let spec = TimeSlotSpec::default();
        // 2012-01-02 is a Monday
        assert_eq!(spec.slot_of_str("2012-01-02T00:15:00"), Some(0));
        assert_eq!(spec.slot_of_str("2012-01-03 07:59:59"), Some(31));
        assert_eq!(spec.slot_of_str("2012-01-08T23:00:00Z"), Some(167));
        assert_eq!(spec.slot_of_str("2012-01-08T23:00:00-05:00"), Some(167));
        assert_eq!(spec.slot_of_str("yesterday"), None);
        let coarse = TimeSlotSpec { slots_per_week: 8 };
        assert_eq!(coarse.slot_of_str("2012-01-08T23:00:00"), Some(7));
        assert_eq!(coarse.slot_of_str("2012-01-02T20:00:00"), Some(0));
        assert_eq!(coarse.slot_of_str("2012-01-03T01:00:00"), Some(1));
    }

    #[test]
    fn hotspot_top_third() {
        let counts = BTreeMap::from([((0, 0), 10), ((1, 0), 5), ((2, 0), 1)]);
        let kept = hotspot_filter(&counts, 1.0 / 3.0).unwrap();
        assert_eq!(kept, BTreeSet::from([(0, 0)]));
    }

    #[test]
    fn hotspot_full_retention_drops_zero_counts() {
        let counts = BTreeMap::from([((0, 0), 10), ((1, 3), 0), ((2, 0), 1)]);
        let kept = hotspot_filter(&counts, 1.0).unwrap();
        assert_eq!(kept, BTreeSet::from([(0, 0), (2, 0)]));
    }

    #[test]
    fn hotspot_tie_break_is_lexicographic() {
        let counts = BTreeMap::from([((1, 0), 7), ((0, 0), 7)]);
        let kept = hotspot_filter(&counts, 0.5).unwrap();
        assert_eq!(kept, BTreeSet::from([(0, 0)]));
    }

    #[test]
    fn hotspot_rejects_bad_fraction() {
        let counts = BTreeMap::new();
        assert_eq!(hotspot_filter(&counts, 0.0), Err(GraphError::InvalidFraction(0.0)));
        assert!(hotspot_filter(&counts, 1.5).is_err());
        assert!(hotspot_filter(&counts, f64::NAN).is_err());
    }

    #[test]
    fn keep_count_is_exact_ceiling() {
        assert_eq!(hotspot_keep_count(30, 0.1), 3);
        assert_eq!(hotspot_keep_count(31, 0.1), 4);
        assert_eq!(hotspot_keep_count(3, 1.0 / 3.0), 1);
        assert_eq!(hotspot_keep_count(5, 0.01), 1);
        assert_eq!(hotspot_keep_count(0, 0.5), 0);
    }

    proptest! {
        #[test]
        fn hotspot_size_is_ceiling(
            counts in proptest::collection::btree_map((0usize..20, 0usize..10), 0u64..6, 0..60),
            k in 0.01f64..=1.0,
        ) {
            let positive = counts.values().filter(|&&c| c > 0).count();
            let kept = hotspot_filter(&counts, k).unwrap();
            let expect = if positive == 0 { 0 } else { ((k * positive as f64) - 1e-9 * (k * positive as f64).max(1.0)).ceil().max(1.0) as usize };
            prop_assert_eq!(kept.len(), expect);
            // every kept pair outranks every dropped positive pair
            let min_kept = kept.iter().map(|p| counts[p]).min().unwrap_or(u64::MAX);
            for (p, &c) in &counts {
                if c > 0 && !kept.contains(p) {
                    prop_assert!(c <= min_kept);
                }
            }
        }
    }

    #[test]
    fn single_region_without_events() {
        let tables = EventTables {
            regions: regions(1),
            ..Default::default()
        };
        let g = build_hug(&tables, &HugConfig::default()).unwrap();
        assert_eq!(g.region_count(), 1);
        for rel in RelationType::ALL {
            assert_eq!(g.edge_count(rel), 0, "{rel:?}");
        }
        assert!(validate_schema(&g).is_empty());
        assert_eq!(g.features[&NodeType::Region].shape(), (1, 250));
    }

    #[test]
    fn one_trip_gives_one_hotspot_edge_each_way() {
        let tables = EventTables {
            regions: regions(3),
            trips: vec![trip(0, 1, "2012-01-02T08:30:00")],
            ..Default::default()
        };
        let cfg = HugConfig {
            hotspot_fraction: 1.0,
            ..Default::default()
        };
        let g = build_hug(&tables, &cfg).unwrap();
        let t_o = NodeId::new(NodeType::TripOriginTime, 8);
        let t_d = NodeId::new(NodeType::TripDestTime, 8);
        assert_eq!(g.edges_of(RelationType::AttractsPickupAt), &[(NodeId::region(0), t_o)]);
        assert_eq!(g.edges_of(RelationType::GeneratesPickupIn), &[(t_o, NodeId::region(0))]);
        assert_eq!(g.edges_of(RelationType::AttractsDropoffAt), &[(NodeId::region(1), t_d)]);
        assert_eq!(g.edges_of(RelationType::GeneratesDropoffIn), &[(t_d, NodeId::region(1))]);
        assert_eq!(g.edge_count(RelationType::AttractsCheckinAt), 0);
        assert!(validate_schema(&g).is_empty());
    }

    #[test]
    fn build_errors() {
        let mut tables = EventTables {
            regions: regions(2),
            trips: vec![trip(0, 5, "2012-01-02T08:30:00")],
            ..Default::default()
        };
        let cfg = HugConfig::default();
        assert_eq!(
            build_hug(&tables, &cfg),
            Err(GraphError::UnknownRegion {
                table: "trips",
                row: 0,
                region: 5
            })
        );
        tables.trips = vec![trip(0, 1, "not a time")];
        assert!(matches!(
            build_hug(&tables, &cfg),
            Err(GraphError::MalformedTimestamp { table: "trips", row: 0, .. })
        ));
        tables.trips.clear();
        tables.checkins.push(CheckinRecord {
            user: "u".into(),
            venue_id: "v9".into(),
            timestamp: "2012-01-02T08:30:00".into(),
        });
        assert!(matches!(build_hug(&tables, &cfg), Err(GraphError::UnknownVenue { .. })));
        assert_eq!(
            build_hug(&EventTables::default(), &cfg),
            Err(GraphError::EmptyEventTable("regions"))
        );
        let gap = EventTables {
            regions: vec![RegionRecord { id: 0, name: "a".into() }, RegionRecord { id: 2, name: "b".into() }],
            ..Default::default()
        };
        assert!(matches!(build_hug(&gap, &cfg), Err(GraphError::NonContiguousRegions { .. })));
    }

    #[test]
    fn duplicate_events_collapse_and_adjacency_symmetrizes() {
        let tables = EventTables {
            regions: regions(3),
            adjacency: vec![
                AdjacencyRecord { src: 0, dst: 1 },
                AdjacencyRecord { src: 1, dst: 0 },
                AdjacencyRecord { src: 1, dst: 2 },
                AdjacencyRecord { src: 2, dst: 2 },
            ],
            pois: vec![
                PoiRecord { venue_id: "a".into(), region_id: 0, category: "Food".into() },
                PoiRecord { venue_id: "b".into(), region_id: 0, category: "Food".into() },
                PoiRecord { venue_id: "c".into(), region_id: 2, category: "Arts".into() },
            ],
            checkins: vec![
                CheckinRecord { user: "u".into(), venue_id: "a".into(), timestamp: "2012-01-02T08:00:00".into() },
                CheckinRecord { user: "v".into(), venue_id: "b".into(), timestamp: "2012-01-02T08:40:00".into() },
            ],
            trips: vec![],
        };
        let g = build_hug(&tables, &HugConfig::default()).unwrap();
        assert_eq!(g.edge_count(RelationType::AdjacentTo), 4);
        assert_eq!(g.edge_count(RelationType::Contains), 2);
        assert_eq!(g.edge_count(RelationType::AttractsCheckinAt), 1);
        assert_eq!(g.nodes[&NodeType::PoiCategory], vec!["Arts".to_string(), "Food".to_string()]);
        assert!(validate_schema(&g).is_empty());
    }

    #[test]
    fn features_depend_only_on_seed() {
        let tables = EventTables {
            regions: regions(4),
            ..Default::default()
        };
        let cfg = HugConfig { feature_dim: 8, seed: 7, ..Default::default() };
        let a = build_hug(&tables, &cfg).unwrap();
        let b = build_hug(&tables, &cfg).unwrap();
        let c = build_hug(&tables, &HugConfig { seed: 8, ..cfg.clone() }).unwrap();
        assert_eq!(a.features, b.features);
        assert_ne!(a.features[&NodeType::Region], c.features[&NodeType::Region]);
        let r = &a.features[&NodeType::Region];
        assert!(r.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn missing_reverse_is_reported() {
        let mut g = HeterogeneousUrbanGraph::with_nodes(BTreeMap::from([
            (NodeType::Region, vec!["r0".into()]),
            (NodeType::TripOriginTime, vec!["t0".into()]),
        ]));
        let e = (NodeId::region(0), NodeId::new(NodeType::TripOriginTime, 0));
        g.add_edge(RelationType::AttractsPickupAt, e.0, e.1);
        assert_eq!(
            validate_schema(&g),
            vec![SchemaViolation::MissingReverse {
                relation: RelationType::AttractsPickupAt,
                edge: e
            }]
        );
    }

    #[test]
    fn type_mismatch_is_reported() {
        let mut g = HeterogeneousUrbanGraph::with_nodes(BTreeMap::from([
            (NodeType::Region, vec!["r0".into()]),
            (NodeType::PoiCategory, vec!["c0".into()]),
        ]));
        let e = (NodeId::region(0), NodeId::new(NodeType::PoiCategory, 0));
        g.add_edge(RelationType::AdjacentTo, e.0, e.1);
        assert_eq!(
            validate_schema(&g),
            vec![SchemaViolation::TypeMismatch {
                relation: RelationType::AdjacentTo,
                edge: e
            }]
        );
    }

    #[test]
    fn every_relation_reverses_consistently() {
        for rel in RelationType::ALL {
            assert_eq!(rel.reverse().reverse(), rel);
            let (a, b) = rel.endpoints();
            assert_eq!(rel.reverse().endpoints(), (b, a));
        }
    }
}
