//! Synthetic grid city with planted communities, used as a test substrate.
//!
//! Regions sit on a grid with 4-adjacency. Each community has its own POI
//! category and land-use profile, a peak activity hour, and trips are
//! drawn with community-to-community gravity weights and distance decay.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::LandUseRecord;
use crate::graph::{AdjacencyRecord, CheckinRecord, EventTables, PoiRecord, RegionRecord, TripRecord};
use crate::ingest::{Dataset, DistanceRecord, DistrictRecord, FlowRecord, ValueRecord};

/// How communities are laid over the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommunityLayout {
    /// Contiguous vertical bands of columns.
    #[default]
    Bands,
    /// Uniformly random assignment, unrelated to position.
    Scattered,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCitySpec {
    pub regions: usize,
    pub communities: usize,
    /// Grid width; defaults to `ceil(sqrt(regions))`.
    pub grid_cols: Option<usize>,
    pub layout: CommunityLayout,
    pub categories: Vec<String>,
    /// Per community, relative weight of each POI category.
    pub category_profiles: Option<Vec<Vec<f64>>>,
    pub landuse_types: Vec<String>,
    pub landuse_profiles: Option<Vec<Vec<f64>>>,
    /// Per community, hour of day when its activity peaks.
    pub peak_hours: Option<Vec<usize>>,
    /// Community-to-community trip weights (`communities x communities`).
    pub od_gravity: Option<Vec<Vec<f64>>>,
    /// Grid distance over which trip attraction decays by `e`.
    pub distance_decay: f64,
    pub pois_per_region: usize,
    pub checkins_per_region: usize,
    pub trips_per_region: usize,
    pub seed: u64,
}

impl Default for SyntheticCitySpec {
    fn default() -> Self {
        Self {
            regions: 300,
            communities: 2,
            grid_cols: None,
            layout: CommunityLayout::Bands,
            categories: [
                "Arts", "College", "Food", "Nightlife", "Outdoors", "Professional", "Residence", "Shops", "Travel",
            ]
            .map(String::from)
            .to_vec(),
            category_profiles: None,
            landuse_types: ["Commercial", "Industrial", "OpenSpace", "Public", "Residential"]
                .map(String::from)
                .to_vec(),
            landuse_profiles: None,
            peak_hours: None,
            od_gravity: None,
            distance_decay: 6.0,
            pois_per_region: 8,
            checkins_per_region: 30,
            trips_per_region: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid synthetic city spec: {0}")]
    InvalidSpec(String),
}

/// Profiles where community `k` uses only the items `i` with `i % c == k`.
pub fn disjoint_profiles(communities: usize, items: usize) -> Vec<Vec<f64>> {
    (0..communities)
        .map(|k| (0..items).map(|i| if i % communities == k { 1.0 } else { 0.0 }).collect())
        .collect()
}

impl SyntheticCitySpec {
    pub fn grid_cols(&self) -> usize {
        self.grid_cols.unwrap_or_else(|| (self.regions as f64).sqrt().ceil() as usize).max(1)
    }

    fn category_profiles(&self) -> Vec<Vec<f64>> {
        self.category_profiles
            .clone()
            .unwrap_or_else(|| disjoint_profiles(self.communities, self.categories.len()))
    }

    fn landuse_profiles(&self) -> Vec<Vec<f64>> {
        self.landuse_profiles
            .clone()
            .unwrap_or_else(|| disjoint_profiles(self.communities, self.landuse_types.len()))
    }

    fn peak_hours(&self) -> Vec<usize> {
        self.peak_hours
            .clone()
            .unwrap_or_else(|| (0..self.communities).map(|k| (8 + 12 * k / self.communities) % 24).collect())
    }

    fn od_gravity(&self) -> Vec<Vec<f64>> {
        self.od_gravity.clone().unwrap_or_else(|| {
            (0..self.communities)
                .map(|a| (0..self.communities).map(|b| if a == b { 1.0 } else { 0.1 }).collect())
                .collect()
        })
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.regions == 0 {
            return bad("regions must be positive".into());
        }
        if self.communities == 0 || self.communities > self.regions {
            return bad(format!("communities must be in 1..={}", self.regions));
        }
        if self.layout == CommunityLayout::Bands && self.communities > self.grid_cols() {
            return bad("more bands than grid columns".into());
        }
        if self.categories.is_empty() || self.landuse_types.is_empty() {
            return bad("need at least one category and land-use type".into());
        }
        let c = self.communities;
        let check = |name: &str, p: &[Vec<f64>], width: usize| -> Result<(), SynthError> {
            if p.len() != c || p.iter().any(|r| r.len() != width) {
                return bad(format!("{name} must be {c} x {width}"));
            }
            if p.iter().any(|r| r.iter().any(|w| !(*w >= 0.0 && w.is_finite())) || r.iter().sum::<f64>() <= 0.0) {
                return bad(format!("{name} rows must be non-negative with positive sum"));
            }
            Ok(())
        };
        check("category_profiles", &self.category_profiles(), self.categories.len())?;
        check("landuse_profiles", &self.landuse_profiles(), self.landuse_types.len())?;
        check("od_gravity", &self.od_gravity(), c)?;
        if self.peak_hours().len() != c || self.peak_hours().iter().any(|h| *h >= 24) {
            return bad("peak_hours must list one hour in 0..24 per community".into());
        }
        if !(self.distance_decay > 0.0) {
            return bad("distance_decay must be positive".into());
        }
        if self.pois_per_region == 0 && self.checkins_per_region > 0 {
            return bad("check-ins need at least one POI per region".into());
        }
        Ok(())
    }
}

/// Generated tables plus the planted community of every region.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCity {
    pub dataset: Dataset,
    pub communities: Vec<usize>,
}

fn week_start() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2024, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

fn format_ts(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn hour_weights(peak: usize) -> Vec<f64> {
    (0..24)
        .map(|h: usize| {
            let d = (h as i64 - peak as i64).rem_euclid(24).min((peak as i64 - h as i64).rem_euclid(24)) as f64;
            (-d * d / 8.0).exp() + 0.01
        })
        .collect()
}

fn random_time(rng: &mut ChaCha8Rng, hours: &WeightedIndex<f64>) -> NaiveDateTime {
    let day = rng.gen_range(0..7i64);
    let hour = hours.sample(rng) as i64;
    let minute = rng.gen_range(0..60i64);
    week_start() + Duration::minutes((day * 24 + hour) * 60 + minute)
}

fn weighted(weights: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(weights).expect("validated weights")
}

/// Generates a full input table set. Deterministic for a given spec.
pub fn generate_synthetic_city(spec: &SyntheticCitySpec) -> Result<SyntheticCity, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.regions;
    let cols = spec.grid_cols();
    let pos = |i: usize| ((i / cols) as f64, (i % cols) as f64);
    let dist = |i: usize, j: usize| {
        let (a, b) = (pos(i), pos(j));
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    };
    let community: Vec<usize> = match spec.layout {
        CommunityLayout::Bands => (0..n).map(|i| (i % cols) * spec.communities / cols).collect(),
        CommunityLayout::Scattered => {
            // every community gets at least one region
            let mut c: Vec<usize> = (0..n).map(|i| i % spec.communities).collect();
            c.shuffle(&mut rng);
            c
        }
    };

    let regions = (0..n)
        .map(|id| RegionRecord {
            id,
            name: format!("r{id}"),
        })
        .collect();
    let mut adjacency = Vec::new();
    for i in 0..n {
        if (i % cols) + 1 < cols && i + 1 < n {
            adjacency.push(AdjacencyRecord { src: i, dst: i + 1 });
        }
        if i + cols < n {
            adjacency.push(AdjacencyRecord { src: i, dst: i + cols });
        }
    }

    let cat_w: Vec<WeightedIndex<f64>> = spec.category_profiles().iter().map(|p| weighted(p)).collect();
    let hours: Vec<WeightedIndex<f64>> = spec.peak_hours().iter().map(|&p| weighted(&hour_weights(p))).collect();
    let mut pois = Vec::new();
    let mut checkins = Vec::new();
    for i in 0..n {
        let k = community[i];
        let first = pois.len();
        for v in 0..spec.pois_per_region {
            pois.push(PoiRecord {
                venue_id: format!("v{i}_{v}"),
                region_id: i,
                category: spec.categories[cat_w[k].sample(&mut rng)].clone(),
            });
        }
        for _ in 0..spec.checkins_per_region {
            let venue = &pois[first + rng.gen_range(0..spec.pois_per_region)];
            checkins.push(CheckinRecord {
                user: format!("u{}", rng.gen_range(0..1000)),
                venue_id: venue.venue_id.clone(),
                timestamp: format_ts(random_time(&mut rng, &hours[k])),
            });
        }
    }

    let gravity = spec.od_gravity();
    let mut trips = Vec::new();
    for o in 0..n {
        let dest_w: Vec<f64> = (0..n)
            .map(|d| {
                if d == o {
                    0.0
                } else {
                    gravity[community[o]][community[d]] * (-dist(o, d) / spec.distance_decay).exp()
                }
            })
            .collect();
        let Ok(dests) = WeightedIndex::new(&dest_w) else {
            continue;
        };
        for _ in 0..spec.trips_per_region {
            let d = dests.sample(&mut rng);
            let pickup = random_time(&mut rng, &hours[community[o]]);
            let dropoff = pickup + Duration::minutes(rng.gen_range(5..45));
            trips.push(TripRecord {
                pickup_ts: format_ts(pickup),
                dropoff_ts: format_ts(dropoff),
                origin_region: o,
                dest_region: d,
            });
        }
    }

    let land = spec.landuse_profiles();
    let mut landuse = Vec::new();
    for i in 0..n {
        for (t, name) in spec.landuse_types.iter().enumerate() {
            let w = land[community[i]][t];
            if w > 0.0 {
                landuse.push(LandUseRecord {
                    region_id: i,
                    landuse_type: name.clone(),
                    area: (w * rng.gen_range(0.5..1.5) * 1000.0).round() / 1000.0,
                });
            }
        }
    }

    let districts = (0..n)
        .map(|i| DistrictRecord {
            region_id: i,
            district: format!("d{}", community[i]),
        })
        .collect();
    let crime = (0..n)
        .map(|i| ValueRecord {
            region_id: i,
            value: ((50.0 + 40.0 * community[i] as f64 + rng.gen_range(-5.0..5.0)) * 100.0).round() / 100.0,
        })
        .collect();
    let income = (0..n)
        .map(|i| ValueRecord {
            region_id: i,
            value: ((80.0 - 30.0 * community[i] as f64 + rng.gen_range(-5.0..5.0)) * 100.0).round() / 100.0,
        })
        .collect();
    let mut bike_flows = Vec::new();
    let mut distances = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let d = dist(i, j);
            if i != j && d <= 2.0 {
                let mean = 30.0 * gravity[community[i]][community[j]] * (-d / 2.0).exp();
                bike_flows.push(FlowRecord {
                    origin: i,
                    dest: j,
                    count: (mean * rng.gen_range(0.8..1.2)).round(),
                });
                distances.push(DistanceRecord {
                    src: i,
                    dst: j,
                    distance: (d * 1000.0).round() / 1000.0,
                });
            }
        }
    }

    Ok(SyntheticCity {
        dataset: Dataset {
            tables: EventTables {
                regions,
                adjacency,
                pois,
                checkins,
                trips,
            },
            landuse,
            districts: Some(districts),
            crime: Some(crime),
            income: Some(income),
            bike_flows: Some(bike_flows),
            distances: Some(distances),
        },
        communities: community,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attributes::{checkin_counts, category_distribution, hellinger_matrix};

    fn small(communities: usize, seed: u64) -> SyntheticCitySpec {
        SyntheticCitySpec {
            regions: 40,
            communities,
            seed,
            ..Default::default()
        }
    }

    fn mean_gap(spec: &SyntheticCitySpec) -> (f64, f64) {
        let city = generate_synthetic_city(spec).unwrap();
        let t = &city.dataset.tables;
        let (counts, _) = checkin_counts(&t.pois, &t.checkins, spec.regions).unwrap();
        let s = hellinger_matrix(&category_distribution(&counts).unwrap()).0;
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for i in 0..spec.regions {
            for j in (i + 1)..spec.regions {
                let bucket = if city.communities[i] == city.communities[j] { &mut within } else { &mut across };
                bucket.push(s.get(i, j));
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        (mean(&within), mean(&across))
    }

    #[test]
    fn disjoint_profiles_separate_checkin_similarity() {
        let (within, across) = mean_gap(&small(2, 1));
        assert!(across - within > 0.2, "within {within}, across {across}");
        assert!((across - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_community_is_homogeneous() {
        let spec = small(1, 2);
        let city = generate_synthetic_city(&spec).unwrap();
        let t = &city.dataset.tables;
        let (counts, _) = checkin_counts(&t.pois, &t.checkins, spec.regions).unwrap();
        let s = hellinger_matrix(&category_distribution(&counts).unwrap()).0;
        // compare pair similarities for the left and right halves of the grid
        let half = spec.regions / 2;
        let mean_block = |lo: usize, hi: usize| {
            let mut v = Vec::new();
            for i in lo..hi {
                for j in (i + 1)..hi {
                    v.push(s.get(i, j));
                }
            }
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((mean_block(0, half) - mean_block(half, spec.regions)).abs() < 0.05);
    }

    #[test]
    fn bands_are_contiguous_and_cover_regions() {
        let spec = SyntheticCitySpec::default();
        let city = generate_synthetic_city(&spec).unwrap();
        let cols = spec.grid_cols();
        assert_eq!(cols, 18);
        assert_eq!(city.communities.len(), 300);
        for i in 0..300 {
            if i % cols + 1 < cols && i + 1 < 300 {
                assert!(city.communities[i] <= city.communities[i + 1]);
            }
        }
        assert!(city.communities.contains(&0) && city.communities.contains(&1));
        crate::ingest::validate(&city.dataset).unwrap();
        let d = &city.dataset;
        assert_eq!(d.tables.adjacency.len(), (16 * 17 + 11) + (300 - 18));
        assert_eq!(d.tables.checkins.len(), 300 * 30);
        assert_eq!(d.bike_flows.as_ref().unwrap().len(), d.distances.as_ref().unwrap().len());
    }

    #[test]
    fn same_seed_gives_identical_files() {
        let spec = small(2, 7);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_city(&spec).unwrap().dataset.write_dir(a.path()).unwrap();
        generate_synthetic_city(&spec).unwrap().dataset.write_dir(b.path()).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert_eq!(names.len(), 11);
        for name in names {
            assert_eq!(
                std::fs::read(a.path().join(&name)).unwrap(),
                std::fs::read(b.path().join(&name)).unwrap()
            );
        }
        let other = generate_synthetic_city(&small(2, 8)).unwrap();
        assert_ne!(other.dataset, generate_synthetic_city(&spec).unwrap().dataset);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic_city(&SyntheticCitySpec { regions: 0, ..Default::default() }).is_err());
        assert!(generate_synthetic_city(&SyntheticCitySpec { communities: 0, ..Default::default() }).is_err());
        let wrong_profile = SyntheticCitySpec {
            category_profiles: Some(vec![vec![1.0; 9]]),
            ..Default::default()
        };
        assert!(matches!(generate_synthetic_city(&wrong_profile), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn scattered_layout_mixes_neighbors() {
        let spec = SyntheticCitySpec {
            layout: CommunityLayout::Scattered,
            ..small(2, 3)
        };
        let city = generate_synthetic_city(&spec).unwrap();
        let cross = city
            .dataset
            .tables
            .adjacency
            .iter()
            .filter(|a| city.communities[a.src] != city.communities[a.dst])
            .count();
        assert!(cross > city.dataset.tables.adjacency.len() / 5);
    }
}
