//! Sensor-limited exploration of the Voronoi graph.
//!
//! A virtual robot starts at the graph node nearest to its start position,
//! marks every node it can see as explored, then repeatedly walks the
//! shortest path to the nearest unexplored node, looking around after every
//! step. The distance and rotation it accumulates are the Voronoi traversal
//! distance (VTD) and rotation (VTR).

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::GridMap;
use crate::trajectory::wrap_angle;
use crate::voronoi::{GraphEdge, VoronoiGraph};

#[derive(Debug, Error)]
pub enum TraversalError {
    #[error("the Voronoi graph is empty")]
    EmptyGraph,
    #[error("invalid sensor: {0}")]
    BadSensor(String),
    #[error("graph node ({row}, {col}) lies outside the {width}x{height} map")]
    NodeOutsideMap {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
}

/// Planar laser scanner model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorConfig {
    /// Field of view (rad), centred on the heading.
    pub fov: f64,
    /// Beam spacing (rad). Recorded for completeness; node visibility does
    /// not depend on it.
    pub angular_resolution: f64,
    /// Maximum range (m).
    pub range: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            fov: 270f64.to_radians(),
            angular_resolution: 0.5f64.to_radians(),
            range: 30.0,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<(), TraversalError> {
        if !(self.fov > 0.0 && self.fov <= 2.0 * PI + 1e-12) {
            return Err(TraversalError::BadSensor(format!("fov must lie in (0, 2pi], got {}", self.fov)));
        }
        if !(self.range > 0.0 && self.range.is_finite()) {
            return Err(TraversalError::BadSensor(format!("range must be positive, got {}", self.range)));
        }
        if !(self.angular_resolution > 0.0) {
            return Err(TraversalError::BadSensor(format!(
                "angular resolution must be positive, got {}",
                self.angular_resolution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraversalParams {
    pub sensor: SensorConfig,
    /// Rotation is only accumulated between nodes at least this far apart (m).
    pub rotation_min_dist: f64,
    /// Heading at the start node (rad, 0 = +x / increasing column).
    pub initial_heading: f64,
    /// Long graph edges are split into waypoints at most this far apart (m)
    /// so the robot keeps perceiving along corridors.
    pub waypoint_spacing: f64,
}

impl Default for TraversalParams {
    fn default() -> Self {
        Self {
            sensor: SensorConfig::default(),
            rotation_min_dist: 0.5,
            initial_heading: 0.0,
            waypoint_spacing: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose {
    pub node: usize,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VirtualRobotState {
    pub node: usize,
    pub heading: f64,
    pub seen: Vec<bool>,
}

impl VirtualRobotState {
    pub fn new(node: usize, heading: f64, node_count: usize) -> Self {
        Self {
            node,
            heading,
            seen: vec![false; node_count],
        }
    }

    pub fn seen_count(&self) -> usize {
        self.seen.iter().filter(|&&s| s).count()
    }

    pub fn pose(&self) -> RobotPose {
        RobotPose {
            node: self.node,
            heading: self.heading,
        }
    }
}

/// Heading (rad) of the direction from pixel `a` to pixel `b`, in the map
/// frame (x = column, y = row).
pub fn bearing(a: (usize, usize), b: (usize, usize)) -> f64 {
    (b.0 as f64 - a.0 as f64).atan2(b.1 as f64 - a.1 as f64)
}

pub fn pixel_distance(a: (usize, usize), b: (usize, usize)) -> f64 {
    (b.0 as f64 - a.0 as f64).hypot(b.1 as f64 - a.1 as f64)
}

/// True when no blocking cell lies on the Bresenham segment strictly
/// between `a` and `b`.
pub fn line_of_sight(map: &GridMap, a: (usize, usize), b: (usize, usize)) -> bool {
    let (mut r, mut c) = (a.0 as i64, a.1 as i64);
    let (r1, c1) = (b.0 as i64, b.1 as i64);
    let dc = (c1 - c).abs();
    let dr = -(r1 - r).abs();
    let sc = if c < c1 { 1 } else { -1 };
    let sr = if r < r1 { 1 } else { -1 };
    let mut err = dc + dr;
    loop {
        if r == r1 && c == c1 {
            return true;
        }
        let e2 = 2 * err;
        if e2 >= dr {
            err += dr;
            c += sc;
        }
        if e2 <= dc {
            err += dc;
            r += sr;
        }
        if (r, c) != (r1, c1) && map.get_signed(r, c).is_blocking() {
            return false;
        }
    }
}

fn sees(map: &GridMap, from: (usize, usize), heading: f64, to: (usize, usize), s: &SensorConfig) -> bool {
    if from == to {
        return true;
    }
    if pixel_distance(from, to) * map.resolution() > s.range {
        return false;
    }
    if s.fov < 2.0 * PI {
        let off = wrap_angle(bearing(from, to) - heading).abs();
        if off > s.fov / 2.0 + 1e-12 {
            return false;
        }
    }
    line_of_sight(map, from, to)
}

/// Ids of the nodes visible from `pose`, ascending.
pub fn visible_nodes(map: &GridMap, g: &VoronoiGraph, pose: &RobotPose, s: &SensorConfig) -> Vec<usize> {
    let from = g.nodes()[pose.node];
    (0..g.node_count())
        .filter(|&j| sees(map, from, pose.heading, g.nodes()[j], s))
        .collect()
}

fn perceive(map: &GridMap, g: &VoronoiGraph, state: &mut VirtualRobotState, s: &SensorConfig) -> usize {
    let from = g.nodes()[state.node];
    let mut newly = 0;
    for j in 0..g.node_count() {
        if !state.seen[j] && sees(map, from, state.heading, g.nodes()[j], s) {
            state.seen[j] = true;
            newly += 1;
        }
    }
    newly
}

/// Single-source Dijkstra over pixel weights. Equal-distance predecessors
/// resolve to the smallest id.
#[derive(Debug, Clone)]
pub struct ShortestPaths {
    pub dist: Vec<u64>,
    pub pred: Vec<usize>,
}

impl ShortestPaths {
    pub fn path_to(&self, target: usize) -> Option<Vec<usize>> {
        if self.dist[target] == u64::MAX {
            return None;
        }
        let mut path = vec![target];
        let mut v = target;
        while self.pred[v] != usize::MAX {
            v = self.pred[v];
            path.push(v);
        }
        path.reverse();
        Some(path)
    }
}

pub fn dijkstra(adj: &[Vec<(usize, u32)>], source: usize) -> ShortestPaths {
    let n = adj.len();
    let mut dist = vec![u64::MAX; n];
    let mut pred = vec![usize::MAX; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[source] = 0;
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if done[u] {
            continue;
        }
        done[u] = true;
        for &(v, w) in &adj[u] {
            let nd = d + w as u64;
            if nd < dist[v] || (nd == dist[v] && !done[v] && u < pred[v]) {
                if nd < dist[v] {
                    heap.push(Reverse((nd, v)));
                }
                dist[v] = nd;
                pred[v] = u;
            }
        }
    }
    ShortestPaths { dist, pred }
}

/// Nearest (by path weight) unseen node reachable from the robot, ties to
/// the smallest id, together with the path to it.
pub fn nearest_frontier_path(adj: &[Vec<(usize, u32)>], state: &VirtualRobotState) -> Option<(usize, Vec<usize>)> {
    let sp = dijkstra(adj, state.node);
    let target = (0..adj.len())
        .filter(|&v| !state.seen[v] && sp.dist[v] != u64::MAX)
        .min_by_key(|&v| (sp.dist[v], v))?;
    let path = sp.path_to(target)?;
    Some((target, path))
}

pub fn nearest_frontier(g: &VoronoiGraph, state: &VirtualRobotState) -> Option<usize> {
    nearest_frontier_path(&g.adjacency(), state).map(|(t, _)| t)
}

/// Splits every edge longer than `spacing_px` into equal straight pieces.
/// Original node ids are kept; waypoints are appended after them.
pub fn densify(g: &VoronoiGraph, spacing_px: f64) -> VoronoiGraph {
    let mut nodes = g.nodes().to_vec();
    let mut edges = Vec::with_capacity(g.edge_count());
    for e in g.edges() {
        let (pa, pb) = (g.nodes()[e.a], g.nodes()[e.b]);
        let len = pixel_distance(pa, pb);
        let pieces = if spacing_px > 0.0 {
            ((len / spacing_px).ceil() as u32).clamp(1, e.weight)
        } else {
            1
        };
        if pieces <= 1 {
            edges.push(*e);
            continue;
        }
        let mut prev = e.a;
        let mut used = 0u32;
        for k in 1..=pieces {
            let next = if k == pieces {
                e.b
            } else {
                let t = k as f64 / pieces as f64;
                let r = pa.0 as f64 + t * (pb.0 as f64 - pa.0 as f64);
                let c = pa.1 as f64 + t * (pb.1 as f64 - pa.1 as f64);
                nodes.push((r.round() as usize, c.round() as usize));
                nodes.len() - 1
            };
            let target = (e.weight as u64 * k as u64 / pieces as u64) as u32;
            edges.push(GraphEdge {
                a: prev,
                b: next,
                weight: target - used,
            });
            used = target;
            prev = next;
        }
    }
    VoronoiGraph::new(nodes, edges)
}

/// One step between adjacent nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub from: usize,
    pub to: usize,
    /// Metres moved.
    pub distance: f64,
    /// Radians turned before moving (0 when the step is too short to count).
    pub rotation: f64,
    /// Running totals after this step.
    pub vtd: f64,
    pub vtr: f64,
    pub newly_seen: usize,
}

/// The walk towards one selected frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Leg {
    pub target: usize,
    pub path: Vec<usize>,
    pub distance: f64,
    pub rotation: f64,
    pub steps: Vec<Step>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraversalResult {
    pub vtd: f64,
    pub vtr: f64,
    pub start_node: usize,
    /// Frontier nodes in the order they were selected.
    pub visit_order: Vec<usize>,
    pub legs: Vec<Leg>,
    pub seen_count: usize,
    /// Nodes reachable from the start node; only these must be seen.
    pub reachable_count: usize,
    /// Graph actually walked (input graph plus waypoints).
    #[serde(skip)]
    pub graph: VoronoiGraph,
}

/// Graph node closest to a pixel position, ties to the smallest id.
pub fn closest_node(g: &VoronoiGraph, row: f64, col: f64) -> Option<usize> {
    g.nodes()
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| (i, (r as f64 - row).powi(2) + (c as f64 - col).powi(2)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Runs the mapping / exploration loop from the metric start position
/// `(x, y)` until every reachable node has been seen.
pub fn simulate_exploration(
    map: &GridMap,
    g: &VoronoiGraph,
    start: (f64, f64),
    params: &TraversalParams,
) -> Result<TraversalResult, TraversalError> {
    params.sensor.validate()?;
    if g.is_empty() {
        return Err(TraversalError::EmptyGraph);
    }
    if let Some(&(row, col)) = g.nodes().iter().find(|&&(r, c)| r >= map.height() || c >= map.width()) {
        return Err(TraversalError::NodeOutsideMap {
            row,
            col,
            width: map.width(),
            height: map.height(),
        });
    }
    let res = map.resolution();
    let graph = densify(g, params.waypoint_spacing / res);
    let adj = graph.adjacency();
    let (sr, sc) = map.metric_to_pixel(start.0, start.1);
    let start_node = closest_node(&graph, sr, sc).ok_or(TraversalError::EmptyGraph)?;
    let reachable_count = dijkstra(&adj, start_node).dist.iter().filter(|&&d| d != u64::MAX).count();

    let min_px = params.rotation_min_dist / res;
    let mut state = VirtualRobotState::new(start_node, wrap_angle(params.initial_heading), graph.node_count());
    perceive(map, &graph, &mut state, &params.sensor);

    let (mut vtd, mut vtr) = (0.0, 0.0);
    let mut visit_order = Vec::new();
    let mut legs = Vec::new();
    while let Some((target, path)) = nearest_frontier_path(&adj, &state) {
        visit_order.push(target);
        let mut steps = Vec::with_capacity(path.len().saturating_sub(1));
        let (mut leg_d, mut leg_r) = (0.0, 0.0);
        for w in path.windows(2) {
            let (pa, pb) = (graph.nodes()[w[0]], graph.nodes()[w[1]]);
            let d_px = pixel_distance(pa, pb);
            let mut rotation = 0.0;
            if d_px >= min_px && d_px > 0.0 {
                let dir = bearing(pa, pb);
                rotation = wrap_angle(dir - state.heading).abs();
                state.heading = dir;
            }
            let distance = d_px * res;
            vtd += distance;
            vtr += rotation;
            leg_d += distance;
            leg_r += rotation;
            state.node = w[1];
            let newly_seen = perceive(map, &graph, &mut state, &params.sensor);
            steps.push(Step {
                from: w[0],
                to: w[1],
                distance,
                rotation,
                vtd,
                vtr,
                newly_seen,
            });
        }
        // the target is where the robot now stands
        state.seen[target] = true;
        legs.push(Leg {
            target,
            path,
            distance: leg_d,
            rotation: leg_r,
            steps,
        });
    }

    Ok(TraversalResult {
        vtd,
        vtr,
        start_node,
        visit_order,
        legs,
        seen_count: state.seen_count(),
        reachable_count,
        graph,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::CellState;

    fn open_map(w: usize, h: usize, res: f64) -> GridMap {
        GridMap::filled(w, h, res, CellState::Free).unwrap()
    }

    fn chain(points: &[(usize, usize)]) -> VoronoiGraph {
        let edges = (1..points.len())
            .map(|k| GraphEdge {
                a: k - 1,
                b: k,
                weight: pixel_distance(points[k - 1], points[k]).round().max(1.0) as u32,
            })
            .collect();
        VoronoiGraph::new(points.to_vec(), edges)
    }

    #[test]
    fn range_limit() {
        let map = open_map(50, 5, 1.0);
        let g = chain(&[(2, 0), (2, 10), (2, 21)]);
        let s = SensorConfig {
            range: 20.0,
            ..Default::default()
        };
        let pose = RobotPose { node: 0, heading: 0.0 };
        assert_eq!(visible_nodes(&map, &g, &pose, &s), vec![0, 1]);
    }

    #[test]
    fn ahead_is_visible_behind_wall_is_not() {
        let mut map = open_map(20, 5, 1.0);
        let g = chain(&[(2, 2), (2, 10)]);
        let pose = RobotPose { node: 0, heading: 0.0 };
        assert_eq!(visible_nodes(&map, &g, &pose, &SensorConfig::default()), vec![0, 1]);
        map.set(2, 6, CellState::Occupied);
        assert_eq!(visible_nodes(&map, &g, &pose, &SensorConfig::default()), vec![0]);
    }

    #[test]
    fn field_of_view_excludes_rear() {
        let map = open_map(30, 5, 1.0);
        let g = chain(&[(2, 15), (2, 5), (2, 25)]);
        let pose = RobotPose { node: 0, heading: 0.0 };
        let s = SensorConfig {
            fov: PI / 2.0,
            ..Default::default()
        };
        assert_eq!(visible_nodes(&map, &g, &pose, &s), vec![0, 2]);
    }

    #[test]
    fn frontier_selection() {
        let g = chain(&[(0, 0), (0, 1), (0, 2)]);
        let mut st = VirtualRobotState::new(0, 0.0, 3);
        st.seen = vec![true, true, false];
        assert_eq!(nearest_frontier(&g, &st), Some(2));
        st.seen = vec![true; 3];
        assert_eq!(nearest_frontier(&g, &st), None);

        // star: two unseen leaves at equal distance, smaller id wins
        let g = VoronoiGraph::new(
            vec![(5, 5), (5, 9), (5, 1)],
            vec![GraphEdge { a: 0, b: 1, weight: 4 }, GraphEdge { a: 0, b: 2, weight: 4 }],
        );
        let st = VirtualRobotState {
            node: 0,
            heading: 0.0,
            seen: vec![true, false, false],
        };
        assert_eq!(nearest_frontier(&g, &st), Some(1));
    }

    #[test]
    fn dijkstra_prefers_smaller_predecessor_on_ties() {
        // 0 -> {1, 2} -> 3 with equal weights
        let adj = vec![
            vec![(1, 1), (2, 1)],
            vec![(0, 1), (3, 1)],
            vec![(0, 1), (3, 1)],
            vec![(1, 1), (2, 1)],
        ];
        let sp = dijkstra(&adj, 0);
        assert_eq!(sp.dist, vec![0, 1, 1, 2]);
        assert_eq!(sp.path_to(3), Some(vec![0, 1, 3]));
    }

    #[test]
    fn fully_visible_graph_costs_nothing() {
        let map = open_map(40, 40, 0.1);
        let g = chain(&[(20, 20), (20, 30), (30, 30)]);
        let r = simulate_exploration(&map, &g, (2.0, 2.0), &TraversalParams::default()).unwrap();
        assert_eq!((r.vtd, r.vtr), (0.0, 0.0));
        assert!(r.legs.is_empty());

        let single = VoronoiGraph::new(vec![(3, 3)], vec![]);
        let r = simulate_exploration(&map, &single, (0.0, 0.0), &TraversalParams::default()).unwrap();
        assert_eq!((r.vtd, r.vtr), (0.0, 0.0));
    }

    #[test]
    fn empty_graph_is_an_error() {
        let map = open_map(4, 4, 0.1);
        let r = simulate_exploration(&map, &VoronoiGraph::default(), (0.0, 0.0), &TraversalParams::default());
        assert!(matches!(r, Err(TraversalError::EmptyGraph)));
    }

    #[test]
    fn densify_preserves_weight_and_endpoints() {
        let g = VoronoiGraph::new(vec![(0, 0), (0, 100)], vec![GraphEdge { a: 0, b: 1, weight: 100 }]);
        let d = densify(&g, 30.0);
        assert_eq!(d.node_count(), 5);
        assert_eq!(d.total_weight(), 100);
        assert_eq!(&d.nodes()[..2], g.nodes());
        assert_eq!(d.nodes()[2], (0, 25));
        assert_eq!(densify(&g, 200.0), g);
    }

    #[test]
    fn turning_corner_accumulates_rotation() {
        // L-shaped corridor of free space between walls; robot must turn 90 degrees
        let mut map = open_map(120, 120, 0.1);
        for r in 0..120 {
            for c in 0..120 {
                let in_h = (5..15).contains(&r);
                let in_v = (5..115).contains(&r) && (100..110).contains(&c);
                if !(in_h && c < 110 || in_v) {
                    map.set(r, c, CellState::Occupied);
                }
            }
        }
        let g = chain(&[(10, 5), (10, 105), (110, 105)]);
        let params = TraversalParams {
            sensor: SensorConfig {
                range: 5.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = simulate_exploration(&map, &g, (0.5, 1.0), &params).unwrap();
        assert_eq!(r.seen_count, r.reachable_count);
        assert!((r.vtr - PI / 2.0).abs() < 1e-9, "vtr {}", r.vtr);
        let mut last = (0.0, 0.0);
        for s in r.legs.iter().flat_map(|l| &l.steps) {
            assert!(s.vtd >= last.0 && s.vtr >= last.1);
            last = (s.vtd, s.vtr);
        }
    }
}
