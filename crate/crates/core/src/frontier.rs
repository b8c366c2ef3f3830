//! Exploration graph over observed free space and frontier selection.
//!
//! Vertices are sampled in free voxels and joined by collision-free edges.
//! Each vertex gets a ray-cast volumetric gain; exploration gain discounts the
//! gains collected along the shortest path from the robot by path length and
//! by the vertex's angular deviation from the exploration heading.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::geometry::{angle_between, fibonacci_sphere, Vec3};
use crate::map::{classify, segment_voxels, OccupancyMap, VoxelKey, VoxelRay, VoxelState};

#[derive(Debug, Error, PartialEq)]
pub enum FrontierError {
    #[error("graph root {0:?} is not in free space ({1:?})")]
    RootNotFree(VoxelKey, VoxelState),
}

/// Axis-aligned box in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn around(center: &Vec3, half: &Vec3) -> Self {
        Self {
            min: center - half,
            max: center + half,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GainCounts {
    pub n_unknown: usize,
    pub n_free: usize,
    pub n_occupied: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub id: usize,
    pub position: Vec3,
    pub gain_counts: GainCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

/// Undirected graph; vertex ids are indices and the root is always id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontierGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, f64)>>,
}

impl FrontierGraph {
    pub const ROOT: usize = 0;

    /// Graph from explicit vertices and edges. Vertex 0 is the root.
    pub fn from_parts(positions: &[Vec3], edges: &[(usize, usize, f64)]) -> Self {
        let vertices = positions
            .iter()
            .enumerate()
            .map(|(id, p)| Vertex {
                id,
                position: *p,
                gain_counts: GainCounts::default(),
            })
            .collect();
        let mut adjacency = vec![Vec::new(); positions.len()];
        let edges = edges
            .iter()
            .map(|&(a, b, length)| {
                adjacency[a].push((b, length));
                adjacency[b].push((a, length));
                Edge { a, b, length }
            })
            .collect();
        Self {
            vertices,
            edges,
            adjacency,
        }
    }

    pub fn root(&self) -> &Vertex {
        &self.vertices[Self::ROOT]
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adjacency[v]
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Text export: `V id x y z n_unk n_free n_occ` and `E id1 id2 length`.
    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        for v in &self.vertices {
            let g = v.gain_counts;
            writeln!(
                w,
                "V {} {} {} {} {} {} {}",
                v.id, v.position.x, v.position.y, v.position.z, g.n_unknown, g.n_free, g.n_occupied
            )?;
        }
        for e in &self.edges {
            writeln!(w, "E {} {} {}", e.a, e.b, e.length)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphParams {
    pub n_samples: usize,
    pub connect_radius: f64,
    pub bounds: Aabb,
    pub seed: u64,
}

/// True when no voxel on the segment is classified occupied.
pub fn segment_is_free(map: &OccupancyMap, a: &Vec3, b: &Vec3) -> bool {
    segment_voxels(a, b, map.resolution())
        .into_iter()
        .all(|k| classify(map, k) != VoxelState::Occupied)
}

/// Samples free voxels inside `bounds` and connects them within
/// `connect_radius`. Only the root's connected component is kept.
pub fn build_graph(map: &OccupancyMap, root: &Vec3, params: &GraphParams) -> Result<FrontierGraph, FrontierError> {
    let res = map.resolution();
    let root_key = map.key_of(root);
    let root_state = classify(map, root_key);
    if root_state != VoxelState::Free {
        return Err(FrontierError::RootNotFree(root_key, root_state));
    }

    let mut candidates: Vec<VoxelKey> = map
        .iter()
        .filter(|(k, c)| c.observed && **k != root_key && params.bounds.contains(&k.center(res)))
        .map(|(k, _)| *k)
        .filter(|k| classify(map, *k) == VoxelState::Free)
        .collect();
    candidates.sort_unstable();

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let amount = params.n_samples.min(candidates.len());
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), amount).into_vec();
    picked.sort_unstable();

    let mut positions = vec![*root];
    positions.extend(picked.iter().map(|&i| candidates[i].center(res)));

    let r2 = params.connect_radius * params.connect_radius;
    let mut edges = Vec::new();
    for a in 0..positions.len() {
        for b in a + 1..positions.len() {
            let d2 = (positions[a] - positions[b]).norm_squared();
            if d2 <= r2 && segment_is_free(map, &positions[a], &positions[b]) {
                edges.push((a, b, d2.sqrt()));
            }
        }
    }

    // keep the root's component, renumbered in original order
    let full = FrontierGraph::from_parts(&positions, &edges);
    let mut reached = vec![false; positions.len()];
    reached[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(v) = queue.pop_front() {
        for &(n, _) in full.neighbors(v) {
            if !reached[n] {
                reached[n] = true;
                queue.push_back(n);
            }
        }
    }
    let mut new_id = vec![usize::MAX; positions.len()];
    let mut kept = Vec::new();
    for (old, p) in positions.iter().enumerate() {
        if reached[old] {
            new_id[old] = kept.len();
            kept.push(*p);
        }
    }
    let kept_edges: Vec<_> = edges
        .iter()
        .filter(|(a, _, _)| reached[*a])
        .map(|&(a, b, l)| (new_id[a], new_id[b], l))
        .collect();
    Ok(FrontierGraph::from_parts(&kept, &kept_edges))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fov {
    pub n_rays: usize,
    pub max_range: f64,
    /// Rays stop when they leave this box.
    pub bounds: Option<Aabb>,
}

/// Counts voxels seen from `position` along the given directions. Each voxel
/// is counted once; rays stop at the first occupied voxel.
pub fn volumetric_gain_along(
    map: &OccupancyMap,
    position: &Vec3,
    directions: &[Vec3],
    max_range: f64,
    bounds: Option<&Aabb>,
) -> GainCounts {
    let res = map.resolution();
    let mut seen: FxHashSet<VoxelKey> = FxHashSet::default();
    let mut counts = GainCounts::default();
    for dir in directions {
        let Some(ray) = VoxelRay::new(position, dir, res, max_range) else {
            continue;
        };
        for step in ray {
            if bounds.is_some_and(|b| !b.contains(&step.key.center(res))) {
                break;
            }
            let state = classify(map, step.key);
            if seen.insert(step.key) {
                match state {
                    VoxelState::Unknown => counts.n_unknown += 1,
                    VoxelState::Free => counts.n_free += 1,
                    VoxelState::Occupied => counts.n_occupied += 1,
                }
            }
            if state == VoxelState::Occupied {
                break;
            }
        }
    }
    counts
}

pub fn volumetric_gain(map: &OccupancyMap, position: &Vec3, fov: &Fov) -> GainCounts {
    let dirs = fibonacci_sphere(fov.n_rays);
    volumetric_gain_along(map, position, &dirs, fov.max_range, fov.bounds.as_ref())
}

/// Fills `gain_counts` for every vertex.
pub fn compute_gains(graph: &mut FrontierGraph, map: &OccupancyMap, fov: &Fov) {
    let dirs = fibonacci_sphere(fov.n_rays);
    for v in &mut graph.vertices {
        v.gain_counts = volumetric_gain_along(map, &v.position, &dirs, fov.max_range, fov.bounds.as_ref());
    }
}

/// Single-source shortest paths from the root.
#[derive(Debug, Clone, PartialEq)]
pub struct ShortestPaths {
    /// `None` for vertices the root cannot reach.
    pub distance: Vec<Option<f64>>,
    pub parent: Vec<Option<usize>>,
}

impl ShortestPaths {
    /// Vertices from the root to `v`, or `None` when unreachable.
    pub fn path(&self, v: usize) -> Option<Vec<usize>> {
        self.distance[v]?;
        let mut out = vec![v];
        let mut cur = v;
        while let Some(p) = self.parent[cur] {
            out.push(p);
            cur = p;
        }
        out.reverse();
        Some(out)
    }
}

#[derive(PartialEq)]
struct QueueItem(f64, usize);

impl Eq for QueueItem {}

impl Ord for QueueItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for QueueItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over edge lengths.
pub fn shortest_paths(graph: &FrontierGraph) -> ShortestPaths {
    let n = graph.len();
    let mut distance = vec![None; n];
    let mut parent = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    if n == 0 {
        return ShortestPaths { distance, parent };
    }
    distance[FrontierGraph::ROOT] = Some(0.0);
    heap.push(QueueItem(0.0, FrontierGraph::ROOT));
    while let Some(QueueItem(d, v)) = heap.pop() {
        if settled[v] {
            continue;
        }
        settled[v] = true;
        for &(n, len) in graph.neighbors(v) {
            let nd = d + len;
            if distance[n].is_none_or(|old| nd < old) {
                distance[n] = Some(nd);
                parent[n] = Some(v);
                heap.push(QueueItem(nd, n));
            }
        }
    }
    ShortestPaths { distance, parent }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainParams {
    pub gamma_s: f64,
    pub gamma_d: f64,
    pub w_unknown: f64,
    pub w_free: f64,
    pub w_occupied: f64,
    /// Unit vector.
    pub exploration_heading: Vec3,
}

impl Default for GainParams {
    fn default() -> Self {
        Self {
            gamma_s: 0.5,
            gamma_d: 0.2,
            w_unknown: 1.0,
            w_free: 0.0,
            w_occupied: 0.0,
            exploration_heading: Vec3::x(),
        }
    }
}

impl GainParams {
    pub fn with_heading(mut self, heading: Vec3) -> Self {
        let n = heading.norm();
        if n > 1e-12 {
            self.exploration_heading = heading / n;
        }
        self
    }

    pub fn volumetric(&self, c: &GainCounts) -> f64 {
        self.w_unknown * c.n_unknown as f64 + self.w_free * c.n_free as f64 + self.w_occupied * c.n_occupied as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedVertex {
    pub id: usize,
    pub position: Vec3,
    pub gain: f64,
    pub distance: f64,
}

/// Exploration gain of every reachable vertex, sorted descending (ties by id).
pub fn exploration_gain(graph: &FrontierGraph, paths: &ShortestPaths, params: &GainParams) -> Vec<RankedVertex> {
    let root = graph.root().position;
    let mut ranked: Vec<RankedVertex> = graph
        .vertices
        .iter()
        .filter_map(|v| {
            let path = paths.path(v.id)?;
            let collected: f64 = path
                .iter()
                .map(|&j| {
                    let d = paths.distance[j].unwrap_or(0.0);
                    params.volumetric(&graph.vertices[j].gain_counts) * (-params.gamma_d * d).exp()
                })
                .sum();
            let s = angle_between(&(v.position - root), &params.exploration_heading);
            Some(RankedVertex {
                id: v.id,
                position: v.position,
                gain: (-params.gamma_s * s).exp() * collected,
                distance: paths.distance[v.id].unwrap_or(0.0),
            })
        })
        .collect();
    ranked.sort_by(|a, b| b.gain.total_cmp(&a.gain).then(a.id.cmp(&b.id)));
    ranked
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectParams {
    /// Minimum spacing between selected vertices.
    pub d_m: f64,
    pub n_max: usize,
    /// Maximum straight-line distance from the root.
    pub max_range: f64,
}

/// Greedy spacing-constrained pick from a ranked list. The root itself is
/// never selected.
pub fn select_frontiers(ranked: &[RankedVertex], root: &Vec3, params: &SelectParams) -> Vec<RankedVertex> {
    let mut out: Vec<RankedVertex> = Vec::new();
    for cand in ranked {
        if out.len() >= params.n_max {
            break;
        }
        if cand.id == FrontierGraph::ROOT || (cand.position - root).norm() > params.max_range {
            continue;
        }
        if out.iter().all(|s| (s.position - cand.position).norm() >= params.d_m) {
            out.push(*cand);
        }
    }
    out
}
