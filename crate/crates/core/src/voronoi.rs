//! Sparsified Voronoi skeleton graph of a floor plan.
//!
//! The generalized Voronoi diagram of the blocking cells is rasterised with
//! an exact Euclidean feature transform, cleaned with a 5x5 dilation followed
//! by Zhang-Suen thinning, and turned into a pixel graph whose straight
//! pass-through nodes are then collapsed.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridmap::{CellState, GridMap, InteriorMask, Mask};

/// Pre- and post-thinning skeleton rasters share the mask representation.
pub type SkeletonImage = Mask;

#[derive(Debug, Error)]
pub enum VoronoiError {
    #[error("the map has no free space")]
    NoFreeSpace,
    #[error("the map has no obstacles to build a Voronoi diagram from")]
    NoObstacles,
    #[error("mask is {mw}x{mh} but the map is {w}x{h}")]
    Shape { w: usize, h: usize, mw: usize, mh: usize },
}

/// Tunables of the skeleton pipeline. Defaults are recorded in every graph
/// file so results can be traced back to them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoronoiParams {
    /// Maximum `|d1 - d2|` (px) for a pixel to count as equidistant.
    pub ridge_tolerance: f64,
    /// Side of the square dilation kernel (px).
    pub dilation_kernel: usize,
    /// Branches ending in a tip shorter than this (px) are dropped.
    pub min_spur_length: usize,
    /// Pass-through nodes closer than this (px) to the chord joining their
    /// neighbours are removed.
    pub collinear_tolerance: f64,
}

impl Default for VoronoiParams {
    fn default() -> Self {
        Self {
            ridge_tolerance: 1.0,
            dilation_kernel: 5,
            min_spur_length: 4,
            collinear_tolerance: 0.5,
        }
    }
}

/// Exact squared Euclidean distance to the nearest blocking cell, plus that
/// cell's `(row, col)`, for every pixel.
#[derive(Debug, Clone)]
pub struct FeatureTransform {
    width: usize,
    height: usize,
    dist2: Vec<i64>,
    nearest: Vec<(u32, u32)>,
}

const INF: i64 = i64::MAX / 4;

impl FeatureTransform {
    /// Felzenszwalb-Huttenlocher separable transform, tracking arg-mins.
    pub fn compute(map: &GridMap) -> Option<Self> {
        let (w, h) = (map.width(), map.height());
        let blocking: Vec<bool> = map.cells().iter().map(|c| c.is_blocking()).collect();
        if !blocking.iter().any(|&b| b) {
            return None;
        }

        // columns: nearest blocking row in the same column
        let mut col_row = vec![u32::MAX; w * h];
        for c in 0..w {
            let mut last: Option<usize> = None;
            for r in 0..h {
                if blocking[r * w + c] {
                    last = Some(r);
                }
                if let Some(l) = last {
                    col_row[r * w + c] = l as u32;
                }
            }
            let mut next: Option<usize> = None;
            for r in (0..h).rev() {
                if blocking[r * w + c] {
                    next = Some(r);
                }
                if let Some(n) = next {
                    let cur = col_row[r * w + c];
                    if cur == u32::MAX || (n - r) < r - cur as usize {
                        col_row[r * w + c] = n as u32;
                    }
                }
            }
        }

        let mut dist2 = vec![INF; w * h];
        let mut nearest = vec![(u32::MAX, u32::MAX); w * h];
        let mut f = vec![INF; w];
        let mut v = vec![0usize; w];
        let mut z = vec![0f64; w + 1];
        for r in 0..h {
            for q in 0..w {
                let cr = col_row[r * w + q];
                f[q] = if cr == u32::MAX {
                    INF
                } else {
                    let d = r as i64 - cr as i64;
                    d * d
                };
            }
            // lower envelope of parabolas rooted at finite f
            let mut k: isize = -1;
            for q in 0..w {
                if f[q] >= INF {
                    continue;
                }
                loop {
                    if k < 0 {
                        k = 0;
                        v[0] = q;
                        z[0] = f64::NEG_INFINITY;
                        z[1] = f64::INFINITY;
                        break;
                    }
                    let p = v[k as usize];
                    let s = ((f[q] + (q * q) as i64) - (f[p] + (p * p) as i64)) as f64
                        / (2.0 * (q as f64 - p as f64));
                    if s <= z[k as usize] {
                        k -= 1;
                        continue;
                    }
                    k += 1;
                    v[k as usize] = q;
                    z[k as usize] = s;
                    z[k as usize + 1] = f64::INFINITY;
                    break;
                }
            }
            if k < 0 {
                continue;
            }
            let mut j = 0usize;
            for c in 0..w {
                while z[j + 1] < c as f64 {
                    j += 1;
                }
                let q = v[j];
                let dc = c as i64 - q as i64;
                dist2[r * w + c] = dc * dc + f[q];
                nearest[r * w + c] = (col_row[r * w + q], q as u32);
            }
        }
        Some(Self {
            width: w,
            height: h,
            dist2,
            nearest,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dist2(&self, row: usize, col: usize) -> i64 {
        self.dist2[row * self.width + col]
    }

    pub fn distance(&self, row: usize, col: usize) -> f64 {
        (self.dist2(row, col) as f64).sqrt()
    }

    pub fn nearest(&self, row: usize, col: usize) -> (usize, usize) {
        let (r, c) = self.nearest[row * self.width + col];
        (r as usize, c as usize)
    }
}

fn free_and_inside(map: &GridMap, mask: &InteriorMask) -> Mask {
    let bits = map
        .cells()
        .iter()
        .zip(mask.bits())
        .map(|(&c, &m)| m && c == CellState::Free)
        .collect();
    Mask::from_bits(map.width(), map.height(), bits)
}

fn check_shape(map: &GridMap, mask: &Mask) -> Result<(), VoronoiError> {
    if map.width() != mask.width() || map.height() != mask.height() {
        return Err(VoronoiError::Shape {
            w: map.width(),
            h: map.height(),
            mw: mask.width(),
            mh: mask.height(),
        });
    }
    Ok(())
}

/// Marks interior free pixels whose nearest obstacle and the nearest
/// *distinct* obstacle are within `tolerance` px of equidistance.
///
/// Two obstacle pixels count as distinct when they are farther apart than
/// any pair a straight wall could offer within the tolerance, see
/// [`distinct_threshold`].
///
/// Candidate second obstacles come from the feature transform of the
/// 8-neighbourhood, which is where the nearest-obstacle assignment flips
/// when crossing the diagram.
pub fn tessellate(map: &GridMap, mask: &InteriorMask, tolerance: f64) -> Result<SkeletonImage, VoronoiError> {
    check_shape(map, mask)?;
    if map.count(CellState::Free) == 0 {
        return Err(VoronoiError::NoFreeSpace);
    }
    let (w, h) = (map.width(), map.height());
    let mut ridge = Mask::new(w, h);
    if mask.is_empty() {
        return Ok(ridge);
    }
    let ft = FeatureTransform::compute(map).ok_or(VoronoiError::NoObstacles)?;
    let allowed = free_and_inside(map, mask);
    for (r, c) in allowed.iter_set() {
        let d1 = (ft.dist2(r, c) as f64).sqrt();
        let (ar, ac) = ft.nearest(r, c);
        let mut best = f64::INFINITY;
        for dr in -1i64..=1 {
            for dc in -1i64..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if map.get(nr, nc).is_blocking() {
                    continue;
                }
                let (br, bc) = ft.nearest(nr, nc);
                let sep2 = sq(br as i64 - ar as i64) + sq(bc as i64 - ac as i64);
                if sep2 as f64 <= distinct_threshold(d1, tolerance) {
                    continue;
                }
                let d2 = ((sq(br as i64 - r as i64) + sq(bc as i64 - c as i64)) as f64).sqrt();
                best = best.min(d2);
            }
        }
        if best - d1 <= tolerance {
            ridge.set(r, c, true);
        }
    }
    Ok(ridge)
}

/// Squared separation below which two obstacle pixels seen from clearance
/// `d1` may lie on one straight wall: a wall pixel `k` px along from the
/// foot point is `sqrt(d1^2 + k^2)` away, within `tolerance` of `d1` iff
/// `k^2 <= 2 * tolerance * d1 + tolerance^2`.
pub fn distinct_threshold(d1: f64, tolerance: f64) -> f64 {
    2.0 * tolerance * d1 + tolerance * tolerance
}

#[inline]
fn sq(v: i64) -> i64 {
    v * v
}

/// Morphological dilation with a full `kernel x kernel` square, clipped to
/// `allowed`.
pub fn dilate(img: &SkeletonImage, allowed: &Mask, kernel: usize) -> SkeletonImage {
    let (w, h) = (img.width(), img.height());
    let half = (kernel / 2) as i64;
    let mut out = Mask::new(w, h);
    for (r, c) in img.iter_set() {
        for dr in -half..=half {
            for dc in -half..=half {
                let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if allowed.get(nr, nc) {
                    out.set(nr, nc, true);
                }
            }
        }
    }
    out
}

/// Interior free cells: the region skeleton pixels may occupy.
pub fn allowed_region(map: &GridMap, mask: &InteriorMask) -> Mask {
    free_and_inside(map, mask)
}

/// Zhang-Suen two-subiteration thinning, run to a fixpoint, with the Lü-Wang
/// neighbour-count bound (3..=6 instead of 2..=6). The original bound erases
/// two-pixel-thick diagonals entirely, which disconnects diagonal corridors.
pub fn thin(img: &SkeletonImage) -> SkeletonImage {
    let (w, h) = (img.width(), img.height());
    let mut bits = img.bits().to_vec();
    let at = |bits: &[bool], r: i64, c: i64| -> bool {
        r >= 0 && c >= 0 && r < h as i64 && c < w as i64 && bits[r as usize * w + c as usize]
    };
    let mut remove = Vec::new();
    loop {
        let mut changed = false;
        for step in 0..2 {
            remove.clear();
            for i in 0..w * h {
                if !bits[i] {
                    continue;
                }
                let (r, c) = ((i / w) as i64, (i % w) as i64);
                // P2..P9, clockwise from north
                let p = [
                    at(&bits, r - 1, c),
                    at(&bits, r - 1, c + 1),
                    at(&bits, r, c + 1),
                    at(&bits, r + 1, c + 1),
                    at(&bits, r + 1, c),
                    at(&bits, r + 1, c - 1),
                    at(&bits, r, c - 1),
                    at(&bits, r - 1, c - 1),
                ];
                let b = p.iter().filter(|&&x| x).count();
                if !(3..=6).contains(&b) {
                    continue;
                }
                let a = (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count();
                if a != 1 {
                    continue;
                }
                let (p2, p4, p6, p8) = (p[0], p[2], p[4], p[6]);
                let ok = if step == 0 {
                    !(p2 && p4 && p6) && !(p4 && p6 && p8)
                } else {
                    !(p2 && p4 && p8) && !(p2 && p6 && p8)
                };
                if ok {
                    remove.push(i);
                }
            }
            if !remove.is_empty() {
                changed = true;
                for &i in &remove {
                    bits[i] = false;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Mask::from_bits(w, h, bits)
}

/// Neighbours of a skeleton pixel under mixed (m-)adjacency: 4-neighbours
/// always, diagonal neighbours only when no shared 4-neighbour is set. This
/// keeps L-corners from forming triangles.
fn m_neighbors(img: &Mask, r: usize, c: usize) -> Vec<(usize, usize)> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let on = |r: i64, c: i64| r >= 0 && c >= 0 && r < h && c < w && img.get(r as usize, c as usize);
    let (r, c) = (r as i64, c as i64);
    let mut out = Vec::with_capacity(8);
    for dr in -1i64..=1 {
        for dc in -1i64..=1 {
            if (dr == 0 && dc == 0) || !on(r + dr, c + dc) {
                continue;
            }
            if dr != 0 && dc != 0 && (on(r + dr, c) || on(r, c + dc)) {
                continue;
            }
            out.push(((r + dr) as usize, (c + dc) as usize));
        }
    }
    out
}

/// Removes branches that end in a tip and reach a junction within fewer
/// than `min_len` pixels.
pub fn prune_spurs(img: &SkeletonImage, min_len: usize) -> SkeletonImage {
    let mut out = img.clone();
    if min_len == 0 {
        return out;
    }
    let mut doomed = Vec::new();
    for (r, c) in img.iter_set() {
        if m_neighbors(img, r, c).len() != 1 {
            continue;
        }
        let mut branch = vec![(r, c)];
        let mut prev = (r, c);
        let mut cur = m_neighbors(img, r, c)[0];
        loop {
            let nb = m_neighbors(img, cur.0, cur.1);
            if nb.len() >= 3 {
                // reached a junction: drop the short branch
                if branch.len() < min_len {
                    doomed.extend(branch.iter().copied());
                }
                break;
            }
            if nb.len() != 2 || branch.len() >= min_len {
                break;
            }
            branch.push(cur);
            let next = if nb[0] == prev { nb[1] } else { nb[0] };
            prev = cur;
            cur = next;
        }
    }
    for (r, c) in doomed {
        out.set(r, c, false);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    /// Length in pixel steps (diagonal steps count 1).
    pub weight: u32,
}

/// Undirected weighted graph over skeleton pixels. Node ids are indices into
/// `nodes`; edges satisfy `a < b`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoronoiGraph {
    nodes: Vec<(usize, usize)>,
    edges: Vec<GraphEdge>,
}

impl VoronoiGraph {
    /// Builds a graph, normalising edges to `a < b` and sorting them.
    ///
    /// Panics on self-loops, zero weights or out-of-range endpoints.
    pub fn new(nodes: Vec<(usize, usize)>, edges: Vec<GraphEdge>) -> Self {
        let mut edges: Vec<GraphEdge> = edges
            .into_iter()
            .map(|e| {
                assert!(e.a != e.b, "self-loop on node {}", e.a);
                assert!(e.weight > 0, "zero-weight edge {}-{}", e.a, e.b);
                assert!(e.a < nodes.len() && e.b < nodes.len(), "edge endpoint out of range");
                GraphEdge {
                    a: e.a.min(e.b),
                    b: e.a.max(e.b),
                    weight: e.weight,
                }
            })
            .collect();
        edges.sort_by_key(|e| (e.a, e.b));
        Self { nodes, edges }
    }

    pub fn nodes(&self) -> &[(usize, usize)] {
        &self.nodes
    }

    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adjacency lists sorted by neighbour id.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u32)>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn component_count(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut count = 0;
        for s in 0..self.nodes.len() {
            if seen[s] {
                continue;
            }
            count += 1;
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        count
    }

    /// Sum of edge weights, in pixels.
    pub fn total_weight(&self) -> u64 {
        self.edges.iter().map(|e| e.weight as u64).sum()
    }

    /// Shifts every node by whole pixels.
    pub fn translated(&self, drow: usize, dcol: usize) -> Self {
        Self {
            nodes: self.nodes.iter().map(|&(r, c)| (r + drow, c + dcol)).collect(),
            edges: self.edges.clone(),
        }
    }
}

/// One node per skeleton pixel (raster order) and a unit edge between
/// m-adjacent pixels.
pub fn build_pixel_graph(img: &SkeletonImage) -> VoronoiGraph {
    let nodes: Vec<(usize, usize)> = img.iter_set().collect();
    let mut id = vec![usize::MAX; img.width() * img.height()];
    for (k, &(r, c)) in nodes.iter().enumerate() {
        id[r * img.width() + c] = k;
    }
    let mut edges = Vec::new();
    for (k, &(r, c)) in nodes.iter().enumerate() {
        for (nr, nc) in m_neighbors(img, r, c) {
            let j = id[nr * img.width() + nc];
            if j > k {
                edges.push(GraphEdge { a: k, b: j, weight: 1 });
            }
        }
    }
    VoronoiGraph::new(nodes, edges)
}

/// Distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    let (dx, dy) = (p.0 - (a.0 + t * vx), p.1 - (a.1 + t * vy));
    dx.hypot(dy)
}

fn as_f(p: (usize, usize)) -> (f64, f64) {
    (p.0 as f64, p.1 as f64)
}

/// Whether a degree-2 node is a straight pass-through between its
/// neighbours.
pub fn is_pass_through(node: (usize, usize), n1: (usize, usize), n2: (usize, usize), tolerance: f64) -> bool {
    point_segment_distance(as_f(node), as_f(n1), as_f(n2)) < tolerance
}

/// Repeatedly collapses pass-through nodes (degree 2, collinear with both
/// neighbours) into a single edge carrying the summed weight. A node is kept
/// when its neighbours are already adjacent, so no parallel edges appear.
pub fn sparsify(g: &VoronoiGraph, tolerance: f64) -> VoronoiGraph {
    let n = g.node_count();
    let mut adj: Vec<BTreeMap<usize, u32>> = vec![BTreeMap::new(); n];
    for e in g.edges() {
        adj[e.a].insert(e.b, e.weight);
        adj[e.b].insert(e.a, e.weight);
    }
    let mut alive = vec![true; n];
    loop {
        let mut changed = false;
        for v in 0..n {
            if !alive[v] || adj[v].len() != 2 {
                continue;
            }
            let mut it = adj[v].iter();
            let (&a, &wa) = it.next().expect("degree 2");
            let (&b, &wb) = it.next().expect("degree 2");
            if adj[a].contains_key(&b) {
                continue;
            }
            if !is_pass_through(g.nodes[v], g.nodes[a], g.nodes[b], tolerance) {
                continue;
            }
            adj[a].remove(&v);
            adj[b].remove(&v);
            adj[a].insert(b, wa + wb);
            adj[b].insert(a, wa + wb);
            adj[v].clear();
            alive[v] = false;
            changed = true;
        }
        if !changed {
            break;
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    for v in 0..n {
        if alive[v] {
            remap[v] = nodes.len();
            nodes.push(g.nodes[v]);
        }
    }
    let mut edges = Vec::new();
    for v in 0..n {
        for (&u, &w) in &adj[v] {
            if v < u {
                edges.push(GraphEdge {
                    a: remap[v],
                    b: remap[u],
                    weight: w,
                });
            }
        }
    }
    VoronoiGraph::new(nodes, edges)
}

/// Every intermediate raster of the skeleton pipeline.
#[derive(Debug, Clone)]
pub struct VoronoiBuild {
    pub ridge: SkeletonImage,
    pub dilated: SkeletonImage,
    pub thinned: SkeletonImage,
    pub skeleton: SkeletonImage,
    pub pixel_graph: VoronoiGraph,
    pub graph: VoronoiGraph,
    pub params: VoronoiParams,
}

/// tessellate -> dilate -> thin -> prune spurs -> pixel graph -> sparsify.
pub fn build_voronoi(map: &GridMap, mask: &InteriorMask, params: &VoronoiParams) -> Result<VoronoiBuild, VoronoiError> {
    let ridge = tessellate(map, mask, params.ridge_tolerance)?;
    let allowed = allowed_region(map, mask);
    let dilated = dilate(&ridge, &allowed, params.dilation_kernel);
    let thinned = thin(&dilated);
    let skeleton = prune_spurs(&thinned, params.min_spur_length);
    let pixel_graph = build_pixel_graph(&skeleton);
    let graph = sparsify(&pixel_graph, params.collinear_tolerance);
    Ok(VoronoiBuild {
        ridge,
        dilated,
        thinned,
        skeleton,
        pixel_graph,
        graph,
        params: *params,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFileNode {
    pub id: usize,
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFileEdge {
    pub a: usize,
    pub b: usize,
    pub weight_px: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFileMap {
    pub width: usize,
    pub height: usize,
    pub resolution: f64,
    pub origin_x: f64,
    pub origin_y: f64,
}

/// On-disk JSON form of a [`VoronoiGraph`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub map: GraphFileMap,
    pub params: VoronoiParams,
    pub nodes: Vec<GraphFileNode>,
    pub edges: Vec<GraphFileEdge>,
}

impl GraphFile {
    pub fn new(g: &VoronoiGraph, map: &GridMap, params: &VoronoiParams) -> Self {
        Self {
            map: GraphFileMap {
                width: map.width(),
                height: map.height(),
                resolution: map.resolution(),
                origin_x: map.origin().0,
                origin_y: map.origin().1,
            },
            params: *params,
            nodes: g
                .nodes()
                .iter()
                .enumerate()
                .map(|(id, &(row, col))| GraphFileNode { id, row, col })
                .collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| GraphFileEdge {
                    a: e.a,
                    b: e.b,
                    weight_px: e.weight,
                })
                .collect(),
        }
    }

    pub fn to_graph(&self) -> VoronoiGraph {
        let mut nodes = vec![(0, 0); self.nodes.len()];
        for n in &self.nodes {
            nodes[n.id] = (n.row, n.col);
        }
        VoronoiGraph::new(
            nodes,
            self.edges
                .iter()
                .map(|e| GraphEdge {
                    a: e.a,
                    b: e.b,
                    weight: e.weight_px,
                })
                .collect(),
        )
    }
}

/// RGB rendering for inspection: the map in grey, skeleton pixels red,
/// sparsified graph nodes blue.
pub fn render_debug(map: &GridMap, build: &VoronoiBuild) -> image::RgbImage {
    let mut img = image::RgbImage::from_fn(map.width() as u32, map.height() as u32, |c, r| {
        let v = map.get(r as usize, c as usize).intensity();
        image::Rgb([v, v, v])
    });
    for (r, c) in build.skeleton.iter_set() {
        img.put_pixel(c as u32, r as u32, image::Rgb([220, 30, 30]));
    }
    for &(r, c) in build.graph.nodes() {
        img.put_pixel(c as u32, r as u32, image::Rgb([30, 60, 230]));
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridmap::interior_mask;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let bits = rows.iter().flat_map(|r| r.chars().map(|ch| ch == '#')).collect();
        Mask::from_bits(w, h, bits)
    }

    fn full(w: usize, h: usize) -> Mask {
        Mask::from_bits(w, h, vec![true; w * h])
    }

    #[test]
    fn feature_transform_matches_brute_force() {
        let mut m = GridMap::filled(13, 9, 1.0, CellState::Free).unwrap();
        for &(r, c) in &[(0, 0), (4, 7), (8, 12), (2, 10), (6, 1)] {
            m.set(r, c, CellState::Occupied);
        }
        let ft = FeatureTransform::compute(&m).unwrap();
        for r in 0..9 {
            for c in 0..13 {
                let best = [(0, 0), (4, 7), (8, 12), (2, 10), (6, 1)]
                    .iter()
                    .map(|&(or, oc): &(i64, i64)| sq(or - r as i64) + sq(oc - c as i64))
                    .min()
                    .unwrap();
                assert_eq!(ft.dist2(r, c), best, "({r},{c})");
                let (nr, nc) = ft.nearest(r, c);
                assert_eq!(sq(nr as i64 - r as i64) + sq(nc as i64 - c as i64), best);
            }
        }
        assert!(FeatureTransform::compute(&GridMap::filled(3, 3, 1.0, CellState::Free).unwrap()).is_none());
    }

    #[test]
    fn empty_mask_gives_empty_ridge() {
        let mut m = GridMap::filled(8, 8, 1.0, CellState::Free).unwrap();
        m.set(0, 0, CellState::Occupied);
        let ridge = tessellate(&m, &Mask::new(8, 8), 1.0).unwrap();
        assert!(ridge.is_empty());
        let all_wall = GridMap::filled(4, 4, 1.0, CellState::Occupied).unwrap();
        assert!(matches!(
            tessellate(&all_wall, &full(4, 4), 1.0),
            Err(VoronoiError::NoFreeSpace)
        ));
    }

    #[test]
    fn corridor_ridge_is_centre_band() {
        // walls on rows 0 and 19; free rows 1..=18
        let mut m = GridMap::filled(100, 20, 1.0, CellState::Free).unwrap();
        for c in 0..100 {
            m.set(0, c, CellState::Occupied);
            m.set(19, c, CellState::Occupied);
        }
        for r in 0..20 {
            m.set(r, 0, CellState::Occupied);
            m.set(r, 99, CellState::Occupied);
        }
        let mask = interior_mask(&m).unwrap();
        let ridge = tessellate(&m, &mask, 1.0).unwrap();
        for c in 20..80 {
            let rows: Vec<usize> = (0..20).filter(|&r| ridge.get(r, c)).collect();
            assert_eq!(rows, vec![9, 10], "column {c}");
        }
    }

    #[test]
    fn dilate_single_pixel() {
        let mut img = Mask::new(9, 9);
        img.set(4, 4, true);
        let out = dilate(&img, &full(9, 9), 5);
        assert_eq!(out.count(), 25);
        assert!(out.get(2, 2) && out.get(6, 6) && !out.get(1, 4));
        assert!(dilate(&Mask::new(9, 9), &full(9, 9), 5).is_empty());
    }

    #[test]
    fn dilate_clips_to_allowed() {
        let mut img = Mask::new(9, 9);
        img.set(4, 1, true);
        let mut allowed = full(9, 9);
        for r in 0..9 {
            allowed.set(r, 0, false);
        }
        let out = dilate(&img, &allowed, 5);
        // columns -1 and 0 are cut; columns 1..=3 remain
        assert_eq!(out.count(), 15);
        assert!(!out.get(4, 0));
    }

    #[test]
    fn thin_block_to_centre() {
        let mut img = Mask::new(9, 9);
        for r in 2..7 {
            for c in 2..7 {
                img.set(r, c, true);
            }
        }
        let out = thin(&img);
        assert_eq!(out.iter_set().collect::<Vec<_>>(), vec![(3, 4), (4, 3), (4, 4)]);
    }

    #[test]
    fn thin_keeps_thick_diagonal() {
        let mut img = Mask::new(40, 40);
        for k in 2..38usize {
            for d in 0..6usize {
                let c = k + d;
                if c < 38 {
                    img.set(k, c - 2, true);
                }
            }
        }
        let out = thin(&img);
        let g = build_pixel_graph(&out);
        assert_eq!(g.component_count(), 1);
        assert!(out.count() >= 30);
    }

    #[test]
    fn thin_keeps_one_pixel_line() {
        let img = mask_from(&["..........", ".########.", ".........."]);
        assert_eq!(thin(&img), img);
    }

    #[test]
    fn pixel_graph_examples() {
        let line = mask_from(&["###"]);
        let g = build_pixel_graph(&line);
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edges().iter().map(|e| e.weight).collect::<Vec<_>>(), vec![1, 1]);

        let dot = mask_from(&["...", ".#.", "..."]);
        let g = build_pixel_graph(&dot);
        assert_eq!((g.node_count(), g.edge_count()), (1, 0));

        let corner = mask_from(&["##", ".#"]);
        let g = build_pixel_graph(&corner);
        assert_eq!(g.edge_count(), 2);
        let adj = g.adjacency();
        // corner pixel (0,1) is node 1
        assert_eq!(adj[1].len(), 2);
    }

    #[test]
    fn diagonal_pixels_connect() {
        let diag = mask_from(&["#..", ".#.", "..#"]);
        let g = build_pixel_graph(&diag);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn sparsify_examples() {
        let g = VoronoiGraph::new(
            vec![(0, 0), (0, 1), (0, 2)],
            vec![GraphEdge { a: 0, b: 1, weight: 1 }, GraphEdge { a: 1, b: 2, weight: 1 }],
        );
        let s = sparsify(&g, 0.5);
        assert_eq!(s.nodes(), &[(0, 0), (0, 2)]);
        assert_eq!(s.edges(), &[GraphEdge { a: 0, b: 1, weight: 2 }]);

        let corner = build_pixel_graph(&mask_from(&["##", ".#"]));
        let s = sparsify(&corner, 0.5);
        assert_eq!(s.node_count(), 3);

        let long = Mask::from_bits(100, 1, vec![true; 100]);
        let s = sparsify(&build_pixel_graph(&long), 0.5);
        assert_eq!(s.node_count(), 2);
        assert_eq!(s.edges(), &[GraphEdge { a: 0, b: 1, weight: 99 }]);
    }

    #[test]
    fn sparsify_keeps_junctions_and_tips() {
        let plus = mask_from(&["..#..", "..#..", "#####", "..#..", "..#.."]);
        let s = sparsify(&build_pixel_graph(&plus), 0.5);
        // centre junction plus four tips
        assert_eq!(s.node_count(), 5);
        assert_eq!(s.edge_count(), 4);
        assert!(s.edges().iter().all(|e| e.weight == 2));
    }

    #[test]
    fn sparsify_never_creates_parallel_edges() {
        let ring = mask_from(&["###", "#.#", "###"]);
        let g = build_pixel_graph(&ring);
        let s = sparsify(&g, 0.5);
        assert_eq!(s.component_count(), 1);
        assert_eq!(s.total_weight(), g.total_weight());
        let mut pairs: Vec<_> = s.edges().iter().map(|e| (e.a, e.b)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), s.edge_count());
    }

    #[test]
    fn spur_pruning() {
        // long horizontal line with a 2-px spur hanging off column 5
        let img = mask_from(&[
            "...........",
            "###########",
            ".....#.....",
            ".....#.....",
            "...........",
        ]);
        let pruned = prune_spurs(&img, 4);
        assert!(!pruned.get(2, 5) && !pruned.get(3, 5));
        assert_eq!(pruned.count(), 11);
        // an isolated short segment has no junction and survives
        let seg = mask_from(&["##."]);
        assert_eq!(prune_spurs(&seg, 4), seg);
    }

    #[test]
    fn debug_render_marks_nodes() {
        let mut map = GridMap::filled(40, 12, 0.05, CellState::Occupied).unwrap();
        for r in 1..11 {
            for c in 1..39 {
                map.set(r, c, CellState::Free);
            }
        }
        let mask = crate::gridmap::interior_mask(&map).unwrap();
        let b = build_voronoi(&map, &mask, &VoronoiParams::default()).unwrap();
        let img = render_debug(&map, &b);
        assert_eq!(img.dimensions(), (40, 12));
        let (r, c) = b.graph.nodes()[0];
        assert_eq!(img.get_pixel(c as u32, r as u32).0, [30, 60, 230]);
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
    }

    #[test]
    fn graph_file_roundtrip() {
        let g = build_pixel_graph(&mask_from(&["##", ".#"]));
        let map = GridMap::filled(2, 2, 0.05, CellState::Free).unwrap();
        let file = GraphFile::new(&g, &map, &VoronoiParams::default());
        let text = serde_json::to_string(&file).unwrap();
        let back: GraphFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_graph(), g);
        assert!(text.contains("\"weight_px\""));
    }
}
