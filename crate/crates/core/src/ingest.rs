//! CSV ingestion with line-numbered validation.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attributes::LandUseRecord;
use crate::graph::{parse_timestamp, AdjacencyRecord, CheckinRecord, EventTables, PoiRecord, RegionRecord, TripRecord};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("missing input file {0}")]
    MissingFile(PathBuf),
    #[error("{file}: line {line}: {message}")]
    SchemaViolation { file: String, line: u64, message: String },
    #[error("{file}: {source}")]
    Io {
        file: String,
        #[source]
        source: std::io::Error,
    },
}

/// `origin,dest,count` observed bike trips between two regions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub origin: usize,
    pub dest: usize,
    pub count: f64,
}

/// `src,dst,distance` between two region centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub src: usize,
    pub dst: usize,
    pub distance: f64,
}

/// `region_id,district` ground-truth grouping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistrictRecord {
    pub region_id: usize,
    pub district: String,
}

/// `region_id,value` for a per-region regression target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueRecord {
    pub region_id: usize,
    pub value: f64,
}

/// Input locations. Unset paths default to the standard file name inside
/// `dir`; optional inputs are skipped when their file does not exist.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub dir: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub adjacency: Option<PathBuf>,
    pub pois: Option<PathBuf>,
    pub checkins: Option<PathBuf>,
    pub trips: Option<PathBuf>,
    pub landuse: Option<PathBuf>,
    pub districts: Option<PathBuf>,
    pub crime: Option<PathBuf>,
    pub income: Option<PathBuf>,
    pub bike_flows: Option<PathBuf>,
    pub distances: Option<PathBuf>,
}

pub const REGIONS_FILE: &str = "regions.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const POIS_FILE: &str = "pois.csv";
pub const CHECKINS_FILE: &str = "checkins.csv";
pub const TRIPS_FILE: &str = "trips.csv";
pub const LANDUSE_FILE: &str = "landuse.csv";
pub const DISTRICTS_FILE: &str = "districts.csv";
pub const CRIME_FILE: &str = "crime.csv";
pub const INCOME_FILE: &str = "income.csv";
pub const BIKE_FLOWS_FILE: &str = "bike_flows.csv";
pub const DISTANCES_FILE: &str = "distances.csv";

impl InputPaths {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Default::default()
        }
    }

    fn resolve(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        match (explicit, &self.dir) {
            (Some(p), _) => p.clone(),
            (None, Some(d)) => d.join(name),
            (None, None) => PathBuf::from(name),
        }
    }

    /// Rebases relative paths onto `base` (the config file's directory).
    pub fn rebased(&self, base: &Path) -> Self {
        let fix = |p: &Option<PathBuf>| p.as_ref().map(|p| if p.is_relative() { base.join(p) } else { p.clone() });
        Self {
            dir: fix(&self.dir),
            regions: fix(&self.regions),
            adjacency: fix(&self.adjacency),
            pois: fix(&self.pois),
            checkins: fix(&self.checkins),
            trips: fix(&self.trips),
            landuse: fix(&self.landuse),
            districts: fix(&self.districts),
            crime: fix(&self.crime),
            income: fix(&self.income),
            bike_flows: fix(&self.bike_flows),
            distances: fix(&self.distances),
        }
    }
}

/// Everything read from disk, validated against the region table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub tables: EventTables,
    pub landuse: Vec<LandUseRecord>,
    pub districts: Option<Vec<DistrictRecord>>,
    pub crime: Option<Vec<ValueRecord>>,
    pub income: Option<Vec<ValueRecord>>,
    pub bike_flows: Option<Vec<FlowRecord>>,
    pub distances: Option<Vec<DistanceRecord>>,
}

impl Dataset {
    pub fn region_count(&self) -> usize {
        self.tables.regions.len()
    }

    /// Ground-truth labels as dense cluster ids (districts sorted by name).
    pub fn district_labels(&self) -> Option<Vec<usize>> {
        let records = self.districts.as_ref()?;
        let names: BTreeMap<&str, usize> = records
            .iter()
            .map(|r| r.district.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(k, n)| (n, k))
            .collect();
        let mut labels = vec![None; self.region_count()];
        for r in records {
            labels[r.region_id] = Some(names[r.district.as_str()]);
        }
        labels.into_iter().collect()
    }

    /// Per-region values, or `None` if any region lacks one.
    pub fn values(records: &Option<Vec<ValueRecord>>, regions: usize) -> Option<Vec<f64>> {
        let mut out = vec![None; regions];
        for r in records.as_ref()? {
            out[r.region_id] = Some(r.value);
        }
        out.into_iter().collect()
    }

    pub fn row_counts(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::from([
            ("regions", self.tables.regions.len()),
            ("adjacency", self.tables.adjacency.len()),
            ("pois", self.tables.pois.len()),
            ("checkins", self.tables.checkins.len()),
            ("trips", self.tables.trips.len()),
            ("landuse", self.landuse.len()),
        ]);
        let optional = [
            ("districts", self.districts.as_ref().map(Vec::len)),
            ("crime", self.crime.as_ref().map(Vec::len)),
            ("income", self.income.as_ref().map(Vec::len)),
            ("bike_flows", self.bike_flows.as_ref().map(Vec::len)),
            ("distances", self.distances.as_ref().map(Vec::len)),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                m.insert(k, v);
            }
        }
        m
    }

    /// Writes every table under `dir` with the standard file names.
    pub fn write_dir(&self, dir: &Path) -> Result<(), IngestError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_csv(&dir.join(REGIONS_FILE), &self.tables.regions)?;
        write_csv(&dir.join(ADJACENCY_FILE), &self.tables.adjacency)?;
        write_csv(&dir.join(POIS_FILE), &self.tables.pois)?;
        write_csv(&dir.join(CHECKINS_FILE), &self.tables.checkins)?;
        write_csv(&dir.join(TRIPS_FILE), &self.tables.trips)?;
        write_csv(&dir.join(LANDUSE_FILE), &self.landuse)?;
        if let Some(d) = &self.districts {
            write_csv(&dir.join(DISTRICTS_FILE), d)?;
        }
        if let Some(d) = &self.crime {
            write_csv(&dir.join(CRIME_FILE), d)?;
        }
        if let Some(d) = &self.income {
            write_csv(&dir.join(INCOME_FILE), d)?;
        }
        if let Some(d) = &self.bike_flows {
            write_csv(&dir.join(BIKE_FLOWS_FILE), d)?;
        }
        if let Some(d) = &self.distances {
            write_csv(&dir.join(DISTANCES_FILE), d)?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> IngestError {
    IngestError::Io {
        file: path.display().to_string(),
        source,
    }
}

/// Serializes rows with a header line.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    write_rows(file, rows).map_err(|e| io_err(path, e))
}

fn write_rows<T: Serialize, W: Write>(w: W, rows: &[T]) -> std::io::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()
}

/// Parses CSV text with a header row; each row error names its line.
pub fn parse_csv<T: DeserializeOwned, R: Read>(file: &str, input: R) -> Result<Vec<T>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::SchemaViolation {
            file: file.to_owned(),
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::SchemaViolation {
            file: file.to_owned(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record.deserialize(Some(&headers)).map_err(|e| IngestError::SchemaViolation {
            file: file.to_owned(),
            line,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn read_required<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    if !path.is_file() {
        return Err(IngestError::MissingFile(path.to_owned()));
    }
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let rows = parse_csv(&path.display().to_string(), file)?;
    log::info!("read {} rows from {}", rows.len(), path.display());
    Ok(rows)
}

fn read_optional<T: DeserializeOwned>(path: &Path, explicit: bool) -> Result<Option<Vec<T>>, IngestError> {
    if !explicit && !path.is_file() {
        return Ok(None);
    }
    read_required(path).map(Some)
}

/// Line of data row `k` (header on line 1), for rows that parsed.
fn line_of(k: usize) -> u64 {
    k as u64 + 2
}

/// Checks every reference against the region and venue tables.
pub fn validate(data: &Dataset) -> Result<(), IngestError> {
    let n = data.region_count();
    let fail = |file: &str, k: usize, message: String| IngestError::SchemaViolation {
        file: file.to_owned(),
        line: line_of(k),
        message,
    };
    let mut seen = vec![false; n];
    for (k, r) in data.tables.regions.iter().enumerate() {
        if r.id >= n || seen[r.id] {
            return Err(fail(REGIONS_FILE, k, format!("region ids must be unique and contiguous from 0, got {}", r.id)));
        }
        seen[r.id] = true;
    }
    let region = |file: &str, k: usize, id: usize| {
        if id < n {
            Ok(())
        } else {
            Err(fail(file, k, format!("unknown region id {id}")))
        }
    };
    for (k, a) in data.tables.adjacency.iter().enumerate() {
        region(ADJACENCY_FILE, k, a.src)?;
        region(ADJACENCY_FILE, k, a.dst)?;
    }
    let mut venues = HashSet::new();
    for (k, p) in data.tables.pois.iter().enumerate() {
        region(POIS_FILE, k, p.region_id)?;
        venues.insert(p.venue_id.as_str());
    }
    for (k, c) in data.tables.checkins.iter().enumerate() {
        if !venues.contains(c.venue_id.as_str()) {
            return Err(fail(CHECKINS_FILE, k, format!("unknown venue {}", c.venue_id)));
        }
        if parse_timestamp(&c.timestamp).is_none() {
            return Err(fail(CHECKINS_FILE, k, format!("malformed timestamp {}", c.timestamp)));
        }
    }
    for (k, t) in data.tables.trips.iter().enumerate() {
        region(TRIPS_FILE, k, t.origin_region)?;
        region(TRIPS_FILE, k, t.dest_region)?;
        for ts in [&t.pickup_ts, &t.dropoff_ts] {
            if parse_timestamp(ts).is_none() {
                return Err(fail(TRIPS_FILE, k, format!("malformed timestamp {ts}")));
            }
        }
    }
    for (k, l) in data.landuse.iter().enumerate() {
        region(LANDUSE_FILE, k, l.region_id)?;
        if !(l.area >= 0.0 && l.area.is_finite()) {
            return Err(fail(LANDUSE_FILE, k, format!("area must be non-negative, got {}", l.area)));
        }
    }
    if let Some(d) = &data.districts {
        for (k, r) in d.iter().enumerate() {
            region(DISTRICTS_FILE, k, r.region_id)?;
        }
    }
    for (file, values) in [(CRIME_FILE, &data.crime), (INCOME_FILE, &data.income)] {
        for (k, r) in values.iter().flatten().enumerate() {
            region(file, k, r.region_id)?;
            if !r.value.is_finite() {
                return Err(fail(file, k, "value must be finite".into()));
            }
        }
    }
    for (k, f) in data.bike_flows.iter().flatten().enumerate() {
        region(BIKE_FLOWS_FILE, k, f.origin)?;
        region(BIKE_FLOWS_FILE, k, f.dest)?;
        if !(f.count >= 0.0 && f.count.is_finite()) {
            return Err(fail(BIKE_FLOWS_FILE, k, format!("count must be non-negative, got {}", f.count)));
        }
    }
    for (k, d) in data.distances.iter().flatten().enumerate() {
        region(DISTANCES_FILE, k, d.src)?;
        region(DISTANCES_FILE, k, d.dst)?;
        if !(d.distance >= 0.0 && d.distance.is_finite()) {
            return Err(fail(DISTANCES_FILE, k, format!("distance must be non-negative, got {}", d.distance)));
        }
    }
    Ok(())
}

/// Reads and validates every configured input.
pub fn ingest(paths: &InputPaths) -> Result<Dataset, IngestError> {
    let regions: Vec<RegionRecord> = read_required(&paths.resolve(&paths.regions, REGIONS_FILE))?;
    let adjacency: Vec<AdjacencyRecord> = read_required(&paths.resolve(&paths.adjacency, ADJACENCY_FILE))?;
    let pois: Vec<PoiRecord> = read_required(&paths.resolve(&paths.pois, POIS_FILE))?;
    let checkins: Vec<CheckinRecord> = read_required(&paths.resolve(&paths.checkins, CHECKINS_FILE))?;
    let trips: Vec<TripRecord> = read_required(&paths.resolve(&paths.trips, TRIPS_FILE))?;
    let landuse: Vec<LandUseRecord> = read_required(&paths.resolve(&paths.landuse, LANDUSE_FILE))?;
    let data = Dataset {
        tables: EventTables {
            regions,
            adjacency,
            pois,
            checkins,
            trips,
        },
        landuse,
        districts: read_optional(&paths.resolve(&paths.districts, DISTRICTS_FILE), paths.districts.is_some())?,
        crime: read_optional(&paths.resolve(&paths.crime, CRIME_FILE), paths.crime.is_some())?,
        income: read_optional(&paths.resolve(&paths.income, INCOME_FILE), paths.income.is_some())?,
        bike_flows: read_optional(&paths.resolve(&paths.bike_flows, BIKE_FLOWS_FILE), paths.bike_flows.is_some())?,
        distances: read_optional(&paths.resolve(&paths.distances, DISTANCES_FILE), paths.distances.is_some())?,
    };
    validate(&data)?;
    Ok(data)
}
