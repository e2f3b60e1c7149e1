//! Browser demo. A [`Demo`] holds one synthetic city; the page can train a
//! model on it, cluster the embeddings and look up nearest neighbors.

use hugat_core::attributes::RegionTargets;
use hugat_core::eval::{ari, kmeans, nearest_neighbors, nmi};
use hugat_core::graph::{build_hug, HeterogeneousUrbanGraph, HugConfig};
use hugat_core::metapath::{all_builtin_adjacencies, MetaPathAdjacency};
use hugat_core::model::EmbeddingMatrix;
use hugat_core::synth::{generate_synthetic_city, SyntheticCitySpec};
use hugat_core::train::{train, TrainingConfig};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Demo {
    spec: SyntheticCitySpec,
    communities: Vec<usize>,
    graph: HeterogeneousUrbanGraph,
    adjacencies: Vec<MetaPathAdjacency>,
    targets: RegionTargets,
    embeddings: Option<EmbeddingMatrix>,
}

#[derive(Serialize)]
struct TrainOutput {
    losses: Vec<f64>,
    beta: Vec<(String, f64)>,
    clusters: Vec<usize>,
    nmi: f64,
    ari: f64,
}

#[derive(Serialize)]
struct Neighbor {
    region: usize,
    distance: f64,
    community: usize,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[wasm_bindgen]
impl Demo {
    /// Generates a grid city with planted communities and builds its graph.
    #[wasm_bindgen(constructor)]
    pub fn new(regions: usize, communities: usize, seed: u64) -> Result<Demo, String> {
        let spec = SyntheticCitySpec { regions, communities, seed, ..Default::default() };
        let city = generate_synthetic_city(&spec).map_err(err)?;
        let t = &city.dataset.tables;
        let graph = build_hug(t, &HugConfig { seed, ..Default::default() }).map_err(err)?;
        let adjacencies = all_builtin_adjacencies(&graph).map_err(err)?;
        let targets = RegionTargets::from_tables(t.regions.len(), &t.pois, &t.checkins, &t.trips, &city.dataset.landuse)
            .map_err(err)?;
        Ok(Demo {
            spec,
            communities: city.communities,
            graph,
            adjacencies,
            targets,
            embeddings: None,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn grid_cols(&self) -> usize {
        self.spec.grid_cols()
    }

    /// Planted community per region.
    #[wasm_bindgen(getter)]
    pub fn communities(&self) -> Vec<usize> {
        self.communities.clone()
    }

    /// Graph statistics table, one relation per line.
    pub fn stats(&self) -> String {
        let mut out = self.graph.statistics().to_string();
        for a in &self.adjacencies {
            out.push_str(&format!("{:<6} {} neighbor pairs\n", a.metapath.name, a.pair_count()));
        }
        out
    }

    /// Trains for `epochs` and clusters the result into as many groups as
    /// there are planted communities. Returns JSON.
    pub fn train(&mut self, epochs: usize, lr: f64, seed: u64) -> Result<String, String> {
        let cfg = TrainingConfig { epochs, lr, seed, replicates: 1, ..Default::default() };
        let run = train(&self.graph, &self.adjacencies, &self.targets, &cfg).map_err(err)?;
        let k = self.spec.communities;
        let clusters = kmeans(&run.embeddings.z, k, 10, seed).map_err(err)?.labels;
        let out = TrainOutput {
            losses: run.history.iter().map(|r| r.total).collect(),
            beta: self.adjacencies.iter().map(|a| a.metapath.name.clone()).zip(run.beta.iter().copied()).collect(),
            nmi: nmi(&clusters, &self.communities).map_err(err)?,
            ari: ari(&clusters, &self.communities).map_err(err)?,
            clusters,
        };
        self.embeddings = Some(run.embeddings);
        serde_json::to_string(&out).map_err(err)
    }

    /// Nearest regions to `region` in the trained embedding space, as JSON.
    pub fn neighbors(&self, region: usize, count: usize) -> Result<String, String> {
        let e = self.embeddings.as_ref().ok_or("train the model first")?;
        let list: Vec<Neighbor> = nearest_neighbors(&e.z, region, count)
            .map_err(err)?
            .into_iter()
            .map(|(r, d)| Neighbor { region: r, distance: d, community: self.communities[r] })
            .collect();
        serde_json::to_string(&list).map_err(err)
    }
}
