//! Region attribute distributions used as training targets: trip
//! conditionals from the OD matrix, check-in and land-use category
//! distributions, and pairwise Hellinger distances between regions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::graph::{CheckinRecord, PoiRecord, TripRecord};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AttributeError {
    #[error("negative count {value} at ({row}, {col})")]
    NegativeCount { row: usize, col: usize, value: f64 },
    #[error("non-square OD matrix {0}x{1}")]
    NotSquare(usize, usize),
    #[error("{table} row {row}: unknown region id {region}")]
    UnknownRegion {
        table: &'static str,
        row: usize,
        region: usize,
    },
    #[error("check-in row {row}: unknown venue {venue:?}")]
    UnknownVenue { row: usize, venue: String },
}

fn check_non_negative(m: &Matrix) -> Result<(), AttributeError> {
    for i in 0..m.rows() {
        for (j, &v) in m.row(i).iter().enumerate() {
            if !(v >= 0.0) {
                return Err(AttributeError::NegativeCount { row: i, col: j, value: v });
            }
        }
    }
    Ok(())
}

/// `F[i][j]` = number of trips from region `i` to region `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdMatrix(pub Matrix);

impl OdMatrix {
    pub fn from_trips(trips: &[TripRecord], regions: usize) -> Result<Self, AttributeError> {
        let mut f = Matrix::zeros(regions, regions);
        for (row, t) in trips.iter().enumerate() {
            for region in [t.origin_region, t.dest_region] {
                if region >= regions {
                    return Err(AttributeError::UnknownRegion { table: "trips", row, region });
                }
            }
            let v = f.get(t.origin_region, t.dest_region);
            f.set(t.origin_region, t.dest_region, v + 1.0);
        }
        Ok(Self(f))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalTripDistributions {
    /// Column `j` is the distribution of origins for destination `j`.
    pub p_org_given_dst: Matrix,
    /// Row `i` is the distribution of destinations for origin `i`.
    pub p_dst_given_org: Matrix,
}

/// Normalizes `F` by column (origins given destination) and by row
/// (destinations given origin). Zero marginals become uniform `1/N`.
pub fn trip_conditionals(f: &OdMatrix) -> Result<ConditionalTripDistributions, AttributeError> {
    let f = &f.0;
    if f.rows() != f.cols() {
        return Err(AttributeError::NotSquare(f.rows(), f.cols()));
    }
    check_non_negative(f)?;
    let n = f.rows();
    let uniform = 1.0 / n as f64;
    let inbound = f.col_sums();
    let outbound = f.row_sums();
    let p_org_given_dst = Matrix::from_fn(n, n, |i, j| {
        if inbound[j] > 0.0 {
            f.get(i, j) / inbound[j]
        } else {
            uniform
        }
    });
    let p_dst_given_org = Matrix::from_fn(n, n, |i, j| {
        if outbound[i] > 0.0 {
            f.get(i, j) / outbound[i]
        } else {
            uniform
        }
    });
    Ok(ConditionalTripDistributions {
        p_org_given_dst,
        p_dst_given_org,
    })
}

/// Row-stochastic `N x C` matrix of per-region category shares.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoryDistribution {
    pub p: Matrix,
    pub categories: Vec<String>,
}

/// Row-normalizes non-negative counts; all-zero rows become uniform `1/C`.
pub fn category_distribution(counts: &Matrix) -> Result<Matrix, AttributeError> {
    check_non_negative(counts)?;
    let c = counts.cols();
    let sums = counts.row_sums();
    Ok(Matrix::from_fn(counts.rows(), c, |i, j| {
        if sums[i] > 0.0 {
            counts.get(i, j) / sums[i]
        } else {
            1.0 / c as f64
        }
    }))
}

/// Symmetric `N x N` matrix of Hellinger distances, zero on the diagonal.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix(pub Matrix);

/// Hellinger distance `(1/√2)·‖√p − √q‖₂` between two distributions.
pub fn hellinger(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let s: f64 = p
        .iter()
        .zip(q)
        .map(|(a, b)| {
            let d = a.sqrt() - b.sqrt();
            d * d
        })
        .sum();
    (s / 2.0).sqrt()
}

/// Pairwise Hellinger distances between the rows of `p`. Each unordered
/// pair is evaluated once and mirrored.
pub fn hellinger_matrix(p: &Matrix) -> SimilarityMatrix {
    let n = p.rows();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let d = hellinger(p.row(i), p.row(j)).min(1.0);
            s.set(i, j, d);
            s.set(j, i, d);
        }
    }
    SimilarityMatrix(s)
}

/// Check-in visits per (region, category) via each venue's POI record.
/// Categories are the sorted distinct POI categories.
pub fn checkin_counts(
    pois: &[PoiRecord],
    checkins: &[CheckinRecord],
    regions: usize,
) -> Result<(Matrix, Vec<String>), AttributeError> {
    let categories: Vec<String> = pois
        .iter()
        .map(|p| p.category.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cat_index: HashMap<&str, usize> =
        categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let mut venues = HashMap::new();
    for (row, p) in pois.iter().enumerate() {
        if p.region_id >= regions {
            return Err(AttributeError::UnknownRegion { table: "pois", row, region: p.region_id });
        }
        venues.insert(p.venue_id.as_str(), (p.region_id, cat_index[p.category.as_str()]));
    }
    let mut counts = Matrix::zeros(regions, categories.len());
    for (row, ck) in checkins.iter().enumerate() {
        let &(r, c) = venues
            .get(ck.venue_id.as_str())
            .ok_or_else(|| AttributeError::UnknownVenue { row, venue: ck.venue_id.clone() })?;
        counts.set(r, c, counts.get(r, c) + 1.0);
    }
    Ok((counts, categories))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandUseRecord {
    pub region_id: usize,
    pub landuse_type: String,
    pub area: f64,
}

/// Land-use area per (region, type); types sorted.
pub fn landuse_areas(records: &[LandUseRecord], regions: usize) -> Result<(Matrix, Vec<String>), AttributeError> {
    let types: Vec<String> = records
        .iter()
        .map(|r| r.landuse_type.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<&str, usize> = types.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let mut areas = Matrix::zeros(regions, types.len());
    for (row, r) in records.iter().enumerate() {
        if r.region_id >= regions {
            return Err(AttributeError::UnknownRegion { table: "landuse", row, region: r.region_id });
        }
        if !(r.area >= 0.0) {
            return Err(AttributeError::NegativeCount { row, col: index[r.landuse_type.as_str()], value: r.area });
        }
        let c = index[r.landuse_type.as_str()];
        areas.set(r.region_id, c, areas.get(r.region_id, c) + r.area);
    }
    Ok((areas, types))
}

/// All supervision targets for training, computed once.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionTargets {
    pub od: OdMatrix,
    pub trips: ConditionalTripDistributions,
    pub checkin: CategoryDistribution,
    pub landuse: CategoryDistribution,
    pub s_chk: SimilarityMatrix,
    pub s_land: SimilarityMatrix,
}

impl RegionTargets {
    /// Targets from raw tables. Trips are used unfiltered.
    pub fn from_tables(
        regions: usize,
        pois: &[PoiRecord],
        checkins: &[CheckinRecord],
        trips: &[TripRecord],
        landuse: &[LandUseRecord],
    ) -> Result<Self, AttributeError> {
        let od = OdMatrix::from_trips(trips, regions)?;
        let (chk_counts, categories) = checkin_counts(pois, checkins, regions)?;
        let (areas, types) = landuse_areas(landuse, regions)?;
        Self::from_counts(od, chk_counts, categories, areas, types)
    }

    pub fn from_counts(
        od: OdMatrix,
        checkin_counts: Matrix,
        categories: Vec<String>,
        landuse_areas: Matrix,
        landuse_types: Vec<String>,
    ) -> Result<Self, AttributeError> {
        let trips = trip_conditionals(&od)?;
        let checkin = CategoryDistribution {
            p: category_distribution(&checkin_counts)?,
            categories,
        };
        let landuse = CategoryDistribution {
            p: category_distribution(&landuse_areas)?,
            categories: landuse_types,
        };
        let s_chk = hellinger_matrix(&checkin.p);
        let s_land = hellinger_matrix(&landuse.p);
        Ok(Self {
            od,
            trips,
            checkin,
            landuse,
            s_chk,
            s_land,
        })
    }

    pub fn region_count(&self) -> usize {
        self.od.0.rows()
    }

    /// Reorders every matrix by `perm`, where new region `k` is old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let sq = |m: &Matrix| Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(perm[i], perm[j]));
        let rows = |m: &Matrix| m.select_rows(perm);
        Self {
            od: OdMatrix(sq(&self.od.0)),
            trips: ConditionalTripDistributions {
                p_org_given_dst: sq(&self.trips.p_org_given_dst),
                p_dst_given_org: sq(&self.trips.p_dst_given_org),
            },
            checkin: CategoryDistribution { p: rows(&self.checkin.p), categories: self.checkin.categories.clone() },
            landuse: CategoryDistribution { p: rows(&self.landuse.p), categories: self.landuse.categories.clone() },
            s_chk: SimilarityMatrix(sq(&self.s_chk.0)),
            s_land: SimilarityMatrix(sq(&self.s_land.0)),
        }
    }
}

/// Writes a matrix as CSV with a `region_id` column and the given headers.
pub fn write_matrix_csv<W: Write>(w: W, m: &Matrix, headers: &[String]) -> csv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut head = vec!["region_id".to_string()];
    head.extend(headers.iter().cloned());
    wr.write_record(&head)?;
    for i in 0..m.rows() {
        let mut rec = vec![i.to_string()];
        rec.extend(m.row(i).iter().map(|v| v.to_string()));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_region_swap() {
        let f = OdMatrix(Matrix::from_rows(&[vec![0.0, 2.0], vec![2.0, 0.0]]));
        let p = trip_conditionals(&f).unwrap();
        assert_eq!(p.p_org_given_dst.get(0, 1), 1.0);
        assert_eq!(p.p_org_given_dst.get(1, 0), 1.0);
        assert_eq!(p.p_dst_given_org.get(0, 1), 1.0);
        assert_eq!(p.p_org_given_dst.get(0, 0), 0.0);
    }

    #[test]
    fn single_trip() {
        let mut m = Matrix::zeros(3, 3);
        m.set(2, 1, 4.0);
        let p = trip_conditionals(&OdMatrix(m)).unwrap();
        assert_eq!(p.p_org_given_dst.col_values(1), vec![0.0, 0.0, 1.0]);
        // destinations with no inbound trips fall back to uniform
        assert_eq!(p.p_org_given_dst.col_values(0), vec![1.0 / 3.0; 3]);
        assert_eq!(p.p_dst_given_org.row(2), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn all_zero_od_is_uniform() {
        let p = trip_conditionals(&OdMatrix(Matrix::zeros(4, 4))).unwrap();
        assert!(p.p_org_given_dst.as_slice().iter().all(|&v| v == 0.25));
        assert!(p.p_dst_given_org.as_slice().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn negative_counts_rejected() {
        let m = Matrix::from_rows(&[vec![1.0, -1.0], vec![0.0, 0.0]]);
        assert!(matches!(trip_conditionals(&OdMatrix(m.clone())), Err(AttributeError::NegativeCount { row: 0, col: 1, .. })));
        assert!(category_distribution(&m).is_err());
        assert!(trip_conditionals(&OdMatrix(Matrix::zeros(2, 3))).is_err());
    }

    #[test]
    fn category_rows() {
        let p = category_distribution(&Matrix::from_rows(&[vec![3.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]])).unwrap();
        assert_eq!(p.row(0), &[0.75, 0.25, 0.0]);
        assert_eq!(p.row(1), &[1.0 / 3.0; 3]);
    }

    #[test]
    fn hellinger_closed_forms() {
        assert_eq!(hellinger(&[0.2, 0.8], &[0.2, 0.8]), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        let expect = (1.0 / 2f64.sqrt()) * ((0.5f64.sqrt() - 1.0).powi(2) + 0.5).sqrt();
        let got = hellinger(&[0.5, 0.5], &[1.0, 0.0]);
        assert!((got - expect).abs() < 1e-15);
        assert!((got - 0.5412).abs() < 1e-4);
    }

    #[test]
    fn hellinger_matrix_is_symmetric_with_zero_diagonal() {
        let p = Matrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let s = hellinger_matrix(&p).0;
        assert_eq!(s, s.transpose());
        assert!((0..3).all(|i| s.get(i, i) == 0.0));
        assert!((s.get(1, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tables_to_targets() {
        let pois = vec![
            PoiRecord { venue_id: "a".into(), region_id: 0, category: "Food".into() },
            PoiRecord { venue_id: "b".into(), region_id: 1, category: "Arts".into() },
        ];
        let ck = |v: &str| CheckinRecord { user: "u".into(), venue_id: v.into(), timestamp: "2012-01-02T00:00:00".into() };
        let checkins = vec![ck("a"), ck("a"), ck("b")];
        let landuse = vec![
            LandUseRecord { region_id: 0, landuse_type: "res".into(), area: 3.0 },
            LandUseRecord { region_id: 0, landuse_type: "com".into(), area: 1.0 },
        ];
        let t = RegionTargets::from_tables(2, &pois, &checkins, &[], &landuse).unwrap();
        assert_eq!(t.checkin.categories, vec!["Arts", "Food"]);
        assert_eq!(t.checkin.p.row(0), &[0.0, 1.0]);
        assert_eq!(t.landuse.p.row(0), &[0.25, 0.75]);
        assert_eq!(t.landuse.p.row(1), &[0.5, 0.5]);
        assert!((t.s_chk.0.get(0, 1) - 1.0).abs() < 1e-15);
        assert!(matches!(
            RegionTargets::from_tables(2, &pois, &[ck("zz")], &[], &landuse),
            Err(AttributeError::UnknownVenue { row: 0, .. })
        ));
    }

    proptest! {
        #[test]
        fn scaling_od_preserves_conditionals(
            vals in proptest::collection::vec(0u32..20, 16),
            c in 0.01f64..100.0,
        ) {
            let f = Matrix::from_vec(4, 4, vals.iter().map(|&v| v as f64).collect());
            let scaled = f.map(|v| v * c);
            let a = trip_conditionals(&OdMatrix(f)).unwrap();
            let b = trip_conditionals(&OdMatrix(scaled)).unwrap();
            prop_assert!(a.p_org_given_dst.max_abs_diff(&b.p_org_given_dst) < 1e-12);
            prop_assert!(a.p_dst_given_org.max_abs_diff(&b.p_dst_given_org) < 1e-12);
        }
    }
}
