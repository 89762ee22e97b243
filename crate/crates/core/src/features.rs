//! Per-environment feature vector.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gridmap::{interior_with_contour, CellState, GridMap, GridMapError, InteriorMask};
use crate::traversal::{closest_node, simulate_exploration, Leg, TraversalError, TraversalParams, TraversalResult};
use crate::voronoi::{build_voronoi, VoronoiBuild, VoronoiError, VoronoiParams};

/// Column names of the features, in dataset order.
pub const FEATURE_NAMES: [&str; 6] = ["vtd_m", "vtr_rad", "area_m2", "perimeter_m", "node_count", "edge_count"];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Map(#[from] GridMapError),
    #[error(transparent)]
    Voronoi(#[from] VoronoiError),
    #[error(transparent)]
    Traversal(#[from] TraversalError),
    #[error("the Voronoi skeleton is empty; the interior may be too narrow")]
    EmptySkeleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub vtd_m: f64,
    pub vtr_rad: f64,
    pub node_count: usize,
    pub edge_count: usize,
    pub area_m2: f64,
    pub perimeter_m: f64,
    /// SHA-256 of the traversal legs the VTD/VTR values came from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_digest: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<Leg>>,
}

impl FeatureVector {
    /// Looks a feature up by its dataset column name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "vtd_m" | "vtd" => self.vtd_m,
            "vtr_rad" | "vtr" => self.vtr_rad,
            "area_m2" | "area" => self.area_m2,
            "perimeter_m" | "perimeter" => self.perimeter_m,
            "node_count" => self.node_count as f64,
            "edge_count" => self.edge_count as f64,
            _ => return None,
        })
    }

    pub fn values(&self) -> [f64; 6] {
        FEATURE_NAMES.map(|n| self.get(n).expect("known feature"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub voronoi: VoronoiParams,
    pub traversal: TraversalParams,
    /// Metric start position; defaults to the interior centroid snapped to
    /// the nearest graph node.
    pub start: Option<(f64, f64)>,
    pub keep_trace: bool,
}

#[derive(Debug, Clone)]
pub struct FeatureExtraction {
    pub features: FeatureVector,
    pub mask: InteriorMask,
    pub voronoi: VoronoiBuild,
    pub traversal: TraversalResult,
    pub start: (f64, f64),
}

pub fn trace_digest(legs: &[Leg]) -> String {
    let bytes = serde_json::to_vec(legs).expect("legs serialise");
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Centroid of the mask in fractional pixel coordinates.
pub fn mask_centroid(mask: &InteriorMask) -> Option<(f64, f64)> {
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
    for (r, c) in mask.iter_set() {
        sr += r as f64;
        sc += c as f64;
        n += 1;
    }
    (n > 0).then(|| (sr / n as f64, sc / n as f64))
}

/// interior mask -> Voronoi skeleton graph -> simulated exploration.
pub fn extract_features(map: &GridMap, cfg: &FeatureConfig) -> Result<FeatureExtraction, FeatureError> {
    let (mask, contour) = interior_with_contour(map)?;
    let voronoi = build_voronoi(map, &mask, &cfg.voronoi)?;
    if voronoi.graph.is_empty() {
        return Err(FeatureError::EmptySkeleton);
    }

    let start = match cfg.start {
        Some(s) => s,
        None => {
            let (r, c) = mask_centroid(&mask).ok_or(FeatureError::EmptySkeleton)?;
            let node = closest_node(&voronoi.graph, r, c).ok_or(FeatureError::EmptySkeleton)?;
            let (nr, nc) = voronoi.graph.nodes()[node];
            map.pixel_to_metric(nr as f64, nc as f64)
        }
    };
    let traversal = simulate_exploration(map, &voronoi.graph, start, &cfg.traversal)?;

    let res = map.resolution();
    let free_inside = map
        .cells()
        .iter()
        .zip(mask.bits())
        .filter(|(&c, &m)| m && c == CellState::Free)
        .count();
    let features = FeatureVector {
        vtd_m: traversal.vtd,
        vtr_rad: traversal.vtr,
        node_count: voronoi.graph.node_count(),
        edge_count: voronoi.graph.edge_count(),
        area_m2: free_inside as f64 * res * res,
        perimeter_m: contour.length as f64 * res,
        trace_digest: Some(trace_digest(&traversal.legs)),
        trace: cfg.keep_trace.then(|| traversal.legs.clone()),
    };
    Ok(FeatureExtraction {
        features,
        mask,
        voronoi,
        traversal,
        start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn bordered_room_area() {
        let map = synth::bordered_room(10, 10, 0.05);
        let fx = extract_features(&map, &FeatureConfig::default()).unwrap();
        assert_eq!(fx.mask.count(), 64);
        assert!((fx.features.area_m2 - 0.16).abs() < 1e-12);
        assert_eq!(fx.features.vtd_m, 0.0);
    }

    fn short_range() -> FeatureConfig {
        let mut cfg = FeatureConfig::default();
        cfg.traversal.sensor.range = 2.0;
        cfg
    }

    #[test]
    fn sealed_room_is_ignored_and_connecting_it_adds_distance() {
        // corridor along the top, solid rock below it
        let mut map = synth::bordered_room(200, 21, 0.05).padded(0, 0, 60, 0, CellState::Occupied);
        let cfg = FeatureConfig {
            start: Some(map.pixel_to_metric(10.0, 10.0)),
            ..short_range()
        };
        let base = extract_features(&map, &cfg).unwrap().features;

        synth::add_sealed_room(&mut map, 40, 140, 75, 195);
        let sealed = extract_features(&map, &cfg).unwrap().features;
        assert_eq!(sealed.vtd_m, base.vtd_m);

        synth::carve(&mut map, 20, 160, 41, 170);
        let open = extract_features(&map, &cfg).unwrap().features;
        assert!(open.vtd_m > base.vtd_m, "{} <= {}", open.vtd_m, base.vtd_m);
    }

    #[test]
    fn room_features_are_deterministic() {
        let map = synth::two_rooms(120, 60, 0.05);
        let cfg = FeatureConfig::default();
        let a = extract_features(&map, &cfg).unwrap();
        let b = extract_features(&map, &cfg).unwrap();
        assert_eq!(a.features, b.features);
        assert!(a.features.area_m2 > 0.0 && a.features.perimeter_m > 0.0);
        assert_eq!(a.features.get("vtd_m"), Some(a.features.vtd_m));
        assert_eq!(a.features.get("bogus"), None);
    }

    #[test]
    fn small_corridor_fully_visible() {
        let map = synth::corridor(10.0, 2.0, 0.05);
        let fx = extract_features(&map, &FeatureConfig::default()).unwrap();
        assert_eq!(fx.features.vtd_m, 0.0);
        assert_eq!(fx.traversal.seen_count, fx.traversal.reachable_count);
    }
}
