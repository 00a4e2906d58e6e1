//! The swept-volume acceleration structure: a conservative bounding box
//! of the sweep, an axis-aligned cell partition chosen by a cost model,
//! and per-cell lists of (area, time-interval) pairs computed by the
//! moving-shape contact solvers.
//!
//! The load-bearing property is completeness: whenever a moved area
//! touches a cell at time t, that cell's entry list contains the area
//! with an interval covering t. Entries may over-cover, never
//! under-cover.

pub mod contact;

pub use contact::{
    contact_intervals_box, contact_intervals_segment, contact_intervals_sphere, ContactCfg,
};

use crate::error::{Error, Result};
use crate::geometry::{Area, Ball3, Box3, LocalImplicitRep};
use crate::grid::ScalarGrid;
use crate::motion::RigidMotion;
use contact::subtract_windows;
use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct SweepParams {
    /// Snapshot count used while optimizing the partition.
    pub time_samples: usize,
    /// Contact endpoint tolerance in time units.
    pub contact_tol: f64,
    /// Refine only against the six face equations.
    pub fast_mode: bool,
    /// Optional importance weight over the bounding box.
    pub weight: Option<ScalarGrid>,
    pub max_cells: usize,
    /// Seed the partition with splits at the swept path of the base
    /// centroid before the cost-driven loop.
    pub seed_splits_along_path: bool,
    /// Skip pair solves in time windows excluded by the triangle
    /// inequality against an anchor area's contacts.
    pub remark1_prune: bool,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            time_samples: 128,
            contact_tol: 1e-7,
            fast_mode: false,
            weight: None,
            max_cells: 65536,
            seed_splits_along_path: false,
            remark1_prune: false,
        }
    }
}

impl SweepParams {
    pub fn validate(&self) -> Result<()> {
        if self.time_samples < 2 {
            return Err(Error::invalid("time_samples must be >= 2"));
        }
        if !(self.contact_tol > 0.0) {
            return Err(Error::invalid("contact_tol must be positive"));
        }
        if self.max_cells == 0 {
            return Err(Error::invalid("max_cells must be >= 1"));
        }
        if let Some(w) = &self.weight {
            w.validate_weight()?;
        }
        Ok(())
    }

    pub fn contact_cfg(&self) -> ContactCfg {
        ContactCfg { tol: self.contact_tol, fast: self.fast_mode }
    }
}

/// Serializable echo of the build parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepParamsEcho {
    pub time_samples: usize,
    pub contact_tol: f64,
    pub fast_mode: bool,
    pub max_cells: usize,
    pub seed_splits_along_path: bool,
    pub remark1_prune: bool,
    pub weighted: bool,
}

impl SweepParams {
    pub fn echo(&self) -> SweepParamsEcho {
        SweepParamsEcho {
            time_samples: self.time_samples,
            contact_tol: self.contact_tol,
            fast_mode: self.fast_mode,
            max_cells: self.max_cells,
            seed_splits_along_path: self.seed_splits_along_path,
            remark1_prune: self.remark1_prune,
            weighted: self.weight.is_some(),
        }
    }
}

/// One (area, interval) record of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellEntry {
    pub patch: usize,
    pub t0: f64,
    pub t1: f64,
}

/// A refined leaf cell. Leaves produced from the same partition cell
/// share one entry list.
#[derive(Debug, Clone, PartialEq)]
pub struct SweptCell {
    pub bounds: Box3,
    pub entries: std::sync::Arc<Vec<CellEntry>>,
}

impl SweptCell {
    /// Sum of entry durations (the tau of the cost model).
    pub fn total_duration(&self) -> f64 {
        self.entries.iter().map(|e| e.t1 - e.t0).sum()
    }
}

/// Balanced point-location tree. The cost-driven partition cells are cut
/// along the tree's split planes, so every leaf is one refined box lying
/// inside exactly one partition cell; refined cells inherit their
/// parent's entry list. Whenever the depth would exceed the
/// `ceil(log2 leaves) + 1` budget, shallow leaves are split further until
/// the budget catches up.
#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Split { axis: u8, pos: f64, lo: u32, hi: u32 },
    Leaf { cell: u32 },
    /// Fallback for tilings with no usable split plane.
    Scan { cells: Vec<u32> },
}

/// One refined leaf box and the partition cell it came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinedCell {
    pub bounds: Box3,
    pub parent: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTree {
    pub nodes: Vec<TreeNode>,
    pub root: u32,
}

impl CellTree {
    /// Builds the tree over the partition cells, returning the refined
    /// leaf cells it addresses.
    pub fn build(cells: &[Box3]) -> (CellTree, Vec<RefinedCell>) {
        let mut nodes = Vec::new();
        let mut leaves = Vec::new();
        let region = cells.iter().copied().reduce(|a, b| a.union(&b)).unwrap();
        let ids: Vec<u32> = (0..cells.len() as u32).collect();
        let root = build_node(cells, region, ids, &mut nodes, &mut leaves, 0);
        let mut tree = CellTree { nodes, root };
        tree.pad_to_budget(&mut leaves);
        (tree, leaves)
    }

    /// Splits shallow leaves until `depth <= ceil(log2 leaves) + 1`.
    fn pad_to_budget(&mut self, leaves: &mut Vec<RefinedCell>) {
        loop {
            let depth = self.depth();
            let budget = (leaves.len() as f64).log2().ceil() as usize + 1;
            if depth <= budget {
                return;
            }
            // Find the shallowest leaf node.
            let mut best: Option<(usize, u32)> = None; // depth, node id
            let mut stack = vec![(self.root, 1usize)];
            while let Some((id, d)) = stack.pop() {
                match &self.nodes[id as usize] {
                    TreeNode::Split { lo, hi, .. } => {
                        stack.push((*lo, d + 1));
                        stack.push((*hi, d + 1));
                    }
                    TreeNode::Leaf { .. } => {
                        if best.map_or(true, |(bd, _)| d < bd) {
                            best = Some((d, id));
                        }
                    }
                    TreeNode::Scan { .. } => {}
                }
            }
            let Some((leaf_depth, node_id)) = best else { return };
            if leaf_depth + 1 > depth {
                return; // already perfectly balanced
            }
            let leaf_cell = match &self.nodes[node_id as usize] {
                TreeNode::Leaf { cell } => *cell,
                _ => unreachable!(),
            };
            let cell = leaves[leaf_cell as usize];
            let axis = (0..3)
                .max_by(|&a, &b| {
                    cell.bounds.extents()[a].partial_cmp(&cell.bounds.extents()[b]).unwrap()
                })
                .unwrap();
            let pos = cell.bounds.centre()[axis];
            let (mut lo_box, mut hi_box) = (cell.bounds, cell.bounds);
            lo_box.max[axis] = pos;
            hi_box.min[axis] = pos;
            leaves[leaf_cell as usize] = RefinedCell { bounds: lo_box, parent: cell.parent };
            leaves.push(RefinedCell { bounds: hi_box, parent: cell.parent });
            let lo_id = self.nodes.len() as u32;
            self.nodes.push(TreeNode::Leaf { cell: leaf_cell });
            let hi_id = self.nodes.len() as u32;
            self.nodes.push(TreeNode::Leaf { cell: leaves.len() as u32 - 1 });
            self.nodes[node_id as usize] =
                TreeNode::Split { axis: axis as u8, pos, lo: lo_id, hi: hi_id };
        }
    }

    /// Locates the refined cell containing `p` (ties on shared boundaries
    /// go to the low side), returning the node-visit count alongside.
    pub fn locate(&self, cells: &[SweptCell], p: &Point3<f64>) -> (Option<usize>, usize) {
        let mut visits = 0usize;
        let mut node = self.root;
        loop {
            visits += 1;
            match &self.nodes[node as usize] {
                TreeNode::Split { axis, pos, lo, hi } => {
                    node = if p[*axis as usize] <= *pos { *lo } else { *hi };
                }
                TreeNode::Leaf { cell } => {
                    let c = *cell as usize;
                    return if cells[c].bounds.contains(p) { (Some(c), visits) } else { (None, visits) };
                }
                TreeNode::Scan { cells: ids } => {
                    for &c in ids {
                        visits += 1;
                        if cells[c as usize].bounds.contains(p) {
                            return (Some(c as usize), visits);
                        }
                    }
                    return (None, visits);
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn rec(nodes: &[TreeNode], id: u32) -> usize {
            match &nodes[id as usize] {
                TreeNode::Split { lo, hi, .. } => 1 + rec(nodes, *lo).max(rec(nodes, *hi)),
                TreeNode::Leaf { .. } => 1,
                TreeNode::Scan { cells } => 1 + cells.len(),
            }
        }
        rec(&self.nodes, self.root)
    }
}

fn positive_overlap(region: &Box3, cell: &Box3) -> bool {
    (0..3).all(|k| region.min[k] < cell.max[k] && cell.min[k] < region.max[k])
}

fn build_node(
    cells: &[Box3],
    region: Box3,
    ids: Vec<u32>,
    nodes: &mut Vec<TreeNode>,
    leaves: &mut Vec<RefinedCell>,
    depth: usize,
) -> u32 {
    if ids.len() == 1 {
        // The region lies inside this single cell: it is the refined leaf.
        leaves.push(RefinedCell { bounds: region, parent: ids[0] });
        nodes.push(TreeNode::Leaf { cell: (leaves.len() - 1) as u32 });
        return (nodes.len() - 1) as u32;
    }
    let mut best: Option<(usize, f64, usize, usize)> = None; // axis, pos, score, crossers
    let mid = region.centre();
    for axis in 0..3 {
        let eps = 1e-12 * (1.0 + region.extents()[axis].abs());
        let mut candidates: Vec<f64> = ids
            .iter()
            .flat_map(|&i| {
                let c = &cells[i as usize];
                [c.min[axis], c.max[axis]]
            })
            .filter(|&x| x > region.min[axis] + eps && x < region.max[axis] - eps)
            .collect();
        candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
        candidates.dedup();
        let stride = (candidates.len() / 32).max(1);
        for pos in candidates.into_iter().step_by(stride) {
            let lo = ids
                .iter()
                .filter(|&&i| cells[i as usize].min[axis] < pos && positive_overlap(&region, &cells[i as usize]))
                .count();
            let hi = ids
                .iter()
                .filter(|&&i| cells[i as usize].max[axis] > pos && positive_overlap(&region, &cells[i as usize]))
                .count();
            if lo == 0 || hi == 0 || lo.max(hi) >= ids.len() {
                continue;
            }
            let crossers = lo + hi - ids.len();
            let score = lo.max(hi);
            let better = match best {
                None => true,
                Some((ba, bp, bs, bc)) => {
                    (score, crossers, (pos - mid[axis]).abs())
                        < (bs, bc, (bp - mid[ba]).abs())
                }
            };
            if better {
                best = Some((axis, pos, score, crossers));
            }
        }
    }
    match best {
        Some((axis, pos, _, _)) if depth < 64 => {
            let (mut lo_region, mut hi_region) = (region, region);
            lo_region.max[axis] = pos;
            hi_region.min[axis] = pos;
            let lo_ids: Vec<u32> = ids
                .iter()
                .copied()
                .filter(|&i| positive_overlap(&lo_region, &cells[i as usize]))
                .collect();
            let hi_ids: Vec<u32> = ids
                .iter()
                .copied()
                .filter(|&i| positive_overlap(&hi_region, &cells[i as usize]))
                .collect();
            let slot = nodes.len();
            nodes.push(TreeNode::Split { axis: axis as u8, pos, lo: 0, hi: 0 });
            let lo = build_node(cells, lo_region, lo_ids, nodes, leaves, depth + 1);
            let hi = build_node(cells, hi_region, hi_ids, nodes, leaves, depth + 1);
            if let TreeNode::Split { lo: l, hi: h, .. } = &mut nodes[slot] {
                *l = lo;
                *h = hi;
            }
            slot as u32
        }
        _ => {
            // No usable plane: refined leaves are the cell clips.
            let start = leaves.len() as u32;
            for &i in &ids {
                let cell = cells[i as usize];
                let mut clip = cell;
                for k in 0..3 {
                    clip.min[k] = clip.min[k].max(region.min[k]);
                    clip.max[k] = clip.max[k].min(region.max[k]);
                }
                leaves.push(RefinedCell { bounds: clip, parent: i });
            }
            nodes.push(TreeNode::Scan { cells: (start..leaves.len() as u32).collect() });
            (nodes.len() - 1) as u32
        }
    }
}

/// The finished acceleration structure.
#[derive(Debug, Clone, PartialEq)]
pub struct SweptVolumeRep {
    pub bound: Box3,
    pub cells: Vec<SweptCell>,
    pub tree: CellTree,
    pub base: LocalImplicitRep,
    pub motion: RigidMotion,
    pub params: SweepParamsEcho,
}

impl SweptVolumeRep {
    pub fn locate(&self, p: &Point3<f64>) -> (Option<usize>, usize) {
        if !self.bound.contains(p) {
            return (None, 0);
        }
        self.tree.locate(&self.cells, p)
    }

    pub fn mean_entries(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().map(|c| c.entries.len()).sum::<usize>() as f64 / self.cells.len() as f64
    }
}

/// A box provably containing the union of the moved areas over the whole
/// motion: per coordinate, the exact range of the translation component
/// widened by the base bounding-sphere radius plus the centroid offset
/// (the rotation can move the sphere centre anywhere within that norm).
pub fn bounding_box_swept(base: &LocalImplicitRep, motion: &RigidMotion) -> Box3 {
    let centres: Vec<Point3<f64>> = base.patches.iter().map(|p| p.area.centre()).collect();
    let centroid: Vector3<f64> =
        centres.iter().map(|c| c.coords).sum::<Vector3<f64>>() / centres.len() as f64;
    let radius = base
        .patches
        .iter()
        .map(|p| (p.area.centre().coords - centroid).norm() + p.area.circumradius())
        .fold(0.0f64, f64::max);
    let slack = radius + centroid.norm();
    let (a, b) = motion.domain();
    let mut min = Point3::origin();
    let mut max = Point3::origin();
    for (k, poly) in [&motion.vx, &motion.vy, &motion.vz].into_iter().enumerate() {
        let (lo, hi) = poly.range_on(a, b);
        min[k] = lo - slack;
        max[k] = hi + slack;
    }
    Box3 { min, max }
}

/// Conservative snapshot of a moved area at a sample time.
#[derive(Debug, Clone, Copy)]
enum Snapshot {
    Sphere(Ball3),
    Aabb(Box3),
}

impl Snapshot {
    fn touches(&self, cell: &Box3) -> bool {
        match self {
            Snapshot::Sphere(b) => cell.distance(&b.centre) <= b.radius,
            Snapshot::Aabb(b) => b.overlaps(cell),
        }
    }

    fn lo(&self, axis: usize) -> f64 {
        match self {
            Snapshot::Sphere(b) => b.centre[axis] - b.radius,
            Snapshot::Aabb(b) => b.min[axis],
        }
    }

    fn hi(&self, axis: usize) -> f64 {
        match self {
            Snapshot::Sphere(b) => b.centre[axis] + b.radius,
            Snapshot::Aabb(b) => b.max[axis],
        }
    }
}

fn take_snapshots(
    base: &LocalImplicitRep,
    motion: &RigidMotion,
    samples: usize,
) -> (Vec<Vec<Snapshot>>, f64) {
    let (a, b) = motion.domain();
    let count = if b > a { samples.max(2) } else { 1 };
    let dt = if count > 1 { (b - a) / (count - 1) as f64 } else { 0.0 };
    let snaps = base
        .patches
        .iter()
        .map(|patch| {
            (0..count)
                .map(|k| {
                    let t = a + dt * k as f64;
                    let iso = motion.eval_unchecked(t);
                    match &patch.area {
                        Area::Ball(ball) => Snapshot::Sphere(Ball3 {
                            centre: iso.apply(&ball.centre),
                            radius: ball.radius,
                        }),
                        Area::Box(bx) => {
                            let c = iso.apply(&bx.centre());
                            let h = bx.half_extents();
                            let m = iso.rotation;
                            let half = Vector3::new(
                                m[(0, 0)].abs() * h.x + m[(0, 1)].abs() * h.y + m[(0, 2)].abs() * h.z,
                                m[(1, 0)].abs() * h.x + m[(1, 1)].abs() * h.y + m[(1, 2)].abs() * h.z,
                                m[(2, 0)].abs() * h.x + m[(2, 1)].abs() * h.y + m[(2, 2)].abs() * h.z,
                            );
                            Snapshot::Aabb(Box3 { min: c - half, max: c + half })
                        }
                    }
                })
                .collect()
        })
        .collect();
    (snaps, dt)
}

/// Partition working state: a cell box plus the snapshot hits inside it.
#[derive(Debug, Clone)]
struct PartCell {
    bounds: Box3,
    /// (area index, snapshot index) pairs touching this cell.
    hits: Vec<(u32, u32)>,
}

impl PartCell {
    /// Snapshot-approximate cost term: volume * run count * run duration.
    fn cost_term(&self, area_count: usize, dt: f64) -> f64 {
        let (runs, span) = snapshot_runs(&self.hits, area_count, dt);
        self.bounds.volume() * runs as f64 * span
    }

    fn weighted_cost_term(&self, area_count: usize, dt: f64, w: &ScalarGrid, norm: f64) -> f64 {
        let (runs, span) = snapshot_runs(&self.hits, area_count, dt);
        w.integrate_box(&self.bounds) * norm * runs as f64 * span
    }
}

/// Groups per-area snapshot hits into runs of consecutive sample
/// indices: returns (number of runs, total run duration).
fn snapshot_runs(hits: &[(u32, u32)], area_count: usize, dt: f64) -> (usize, f64) {
    let mut per_area: Vec<Vec<u32>> = vec![Vec::new(); area_count];
    for &(i, k) in hits {
        per_area[i as usize].push(k);
    }
    let mut runs = 0usize;
    let mut duration = 0.0f64;
    for ks in &mut per_area {
        if ks.is_empty() {
            continue;
        }
        ks.sort_unstable();
        let mut len = 1usize;
        for w in ks.windows(2) {
            if w[1] == w[0] + 1 {
                len += 1;
            } else {
                runs += 1;
                duration += len as f64 * dt.max(f64::MIN_POSITIVE);
                len = 1;
            }
        }
        runs += 1;
        duration += len as f64 * dt.max(f64::MIN_POSITIVE);
    }
    (runs, duration)
}

/// The partition cost: `ln M + (1/M) sum vol_j |entries_j| tau_j`, with
/// tau the sum of entry durations. With a weight field, cell volumes are
/// replaced by their weight integral normalized so a constant weight
/// reduces exactly to the unweighted cost.
pub fn partition_cost(cells: &[SweptCell], weight: Option<&ScalarGrid>, bound: &Box3) -> f64 {
    let m = cells.len().max(1) as f64;
    let sum: f64 = match weight {
        None => cells
            .iter()
            .map(|c| c.bounds.volume() * c.entries.len() as f64 * c.total_duration())
            .sum(),
        Some(w) => {
            let norm = bound.volume() / w.integrate_box(bound).max(f64::MIN_POSITIVE);
            cells
                .iter()
                .map(|c| {
                    w.integrate_box(&c.bounds) * norm * c.entries.len() as f64 * c.total_duration()
                })
                .sum()
        }
    };
    m.ln() + sum / m
}

/// Result of the partitioning stage.
#[derive(Debug, Clone)]
pub struct Partition {
    pub bound: Box3,
    pub cells: Vec<Box3>,
    /// Snapshot-cost after the initial cell and after each accepted
    /// greedy split (nonincreasing by construction).
    pub cost_sequence: Vec<f64>,
    /// Cells created by the boundary empty-split pass.
    pub empty_splits: usize,
}

/// Cost-driven partitioning: greedy largest-volume-first splits chosen
/// among snapshot-extremum planes by the split-count objective, accepted
/// while the snapshot cost decreases, followed by a boundary pass that
/// splits off large snapshot-empty slabs.
pub fn partition_cells(
    base: &LocalImplicitRep,
    motion: &RigidMotion,
    params: &SweepParams,
) -> Result<Partition> {
    params.validate()?;
    base.validate_structure()?;
    let bound = bounding_box_swept(base, motion);
    let (snaps, dt) = take_snapshots(base, motion, params.time_samples);
    let area_count = base.patches.len();
    let all_hits: Vec<(u32, u32)> = (0..snaps.len() as u32)
        .flat_map(|i| (0..snaps[i as usize].len() as u32).map(move |k| (i, k)))
        .collect();
    let mut cells = vec![PartCell { bounds: bound, hits: all_hits }];

    let filter_hits = |hits: &[(u32, u32)], b: &Box3| -> Vec<(u32, u32)> {
        hits.iter()
            .copied()
            .filter(|&(i, k)| snaps[i as usize][k as usize].touches(b))
            .collect()
    };

    // Optional seeding along the swept path of the base centroid.
    if params.seed_splits_along_path {
        let (a, b) = motion.domain();
        let centroid: Vector3<f64> = base
            .patches
            .iter()
            .map(|p| p.area.centre().coords)
            .sum::<Vector3<f64>>()
            / area_count as f64;
        let count = params.time_samples.max(2);
        let dvx = motion.vx.derivative();
        let dvy = motion.vy.derivative();
        let dvz = motion.vz.derivative();
        for i in 0..count {
            if cells.len() >= params.max_cells {
                break;
            }
            let t = if b > a { a + (b - a) * i as f64 / (count - 1) as f64 } else { a };
            let q = motion.eval_unchecked(t).apply(&Point3::from(centroid));
            let rates = [dvx.eval(t).abs(), dvy.eval(t).abs(), dvz.eval(t).abs()];
            let axis = (0..3).max_by(|&x, &y| rates[x].partial_cmp(&rates[y]).unwrap()).unwrap();
            let pos = q[axis];
            if let Some(j) = cells.iter().position(|c| c.bounds.contains(&q)) {
                let cb = cells[j].bounds;
                let eps = 1e-9 * (1.0 + cb.extents()[axis]);
                if pos > cb.min[axis] + eps && pos < cb.max[axis] - eps {
                    let (mut lo, mut hi) = (cb, cb);
                    lo.max[axis] = pos;
                    hi.min[axis] = pos;
                    let hits = std::mem::take(&mut cells[j].hits);
                    cells[j] = PartCell { bounds: lo, hits: filter_hits(&hits, &lo) };
                    cells.push(PartCell { bounds: hi, hits: filter_hits(&hits, &hi) });
                }
            }
        }
    }

    let weighted_volume = |b: &Box3| -> f64 {
        match &params.weight {
            Some(w) => w.integrate_box(b),
            None => b.volume(),
        }
    };
    let term = |c: &PartCell| -> f64 {
        match &params.weight {
            Some(w) => {
                let norm = bound.volume() / w.integrate_box(&bound).max(f64::MIN_POSITIVE);
                c.weighted_cost_term(area_count, dt, w, norm)
            }
            None => c.cost_term(area_count, dt),
        }
    };

    let mut terms: Vec<f64> = cells.iter().map(&term).collect();
    let mut term_sum: f64 = terms.iter().sum();
    let mut cost = (cells.len() as f64).ln() + term_sum / cells.len() as f64;
    let mut cost_sequence = vec![cost];

    while cells.len() < params.max_cells {
        // Largest (weighted) volume first.
        let j = match (0..cells.len())
            .max_by(|&x, &y| {
                weighted_volume(&cells[x].bounds)
                    .partial_cmp(&weighted_volume(&cells[y].bounds))
                    .unwrap()
            }) {
            Some(j) => j,
            None => break,
        };
        let cell = &cells[j];
        // Candidate planes: snapshot extrema inside the cell plus the
        // midpoint, subsampled per axis; the split-count objective is
        // evaluated on a bounded stride of the hits (plane choice is a
        // heuristic, only the cost acceptance below must be exact).
        let score_stride = (cell.hits.len() / 1024).max(1);
        let mut best_split: Option<(usize, f64, usize)> = None;
        for axis in 0..3 {
            let eps = 1e-9 * (1.0 + cell.bounds.extents()[axis]);
            let mut positions: Vec<f64> = cell
                .hits
                .iter()
                .flat_map(|&(i, k)| {
                    let s = &snaps[i as usize][k as usize];
                    [s.lo(axis), s.hi(axis)]
                })
                .chain([cell.bounds.centre()[axis]])
                .filter(|&x| x > cell.bounds.min[axis] + eps && x < cell.bounds.max[axis] - eps)
                .collect();
            positions.sort_by(|a, b| a.partial_cmp(b).unwrap());
            positions.dedup_by(|a, b| (*a - *b).abs() < eps);
            let stride = (positions.len() / 8).max(1);
            for pos in positions.into_iter().step_by(stride) {
                let (mut lo, mut hi) = (cell.bounds, cell.bounds);
                lo.max[axis] = pos;
                hi.min[axis] = pos;
                let count = cell
                    .hits
                    .iter()
                    .step_by(score_stride)
                    .map(|&(i, k)| {
                        let s = &snaps[i as usize][k as usize];
                        s.touches(&lo) as usize + s.touches(&hi) as usize
                    })
                    .sum::<usize>();
                let better = match best_split {
                    None => true,
                    Some((ba, bp, bc)) => {
                        count < bc
                            || (count == bc
                                && (pos - cell.bounds.centre()[axis]).abs()
                                    < (bp - cell.bounds.centre()[ba]).abs() - 1e-15)
                    }
                };
                if better {
                    best_split = Some((axis, pos, count));
                }
            }
        }
        let (axis, pos, _) = match best_split {
            Some(s) => s,
            None => break,
        };
        let (mut lo, mut hi) = (cell.bounds, cell.bounds);
        lo.max[axis] = pos;
        hi.min[axis] = pos;
        let lo_cell = PartCell { bounds: lo, hits: filter_hits(&cell.hits, &lo) };
        let hi_cell = PartCell { bounds: hi, hits: filter_hits(&cell.hits, &hi) };
        let (tl, th) = (term(&lo_cell), term(&hi_cell));
        let m_new = (cells.len() + 1) as f64;
        let new_cost = m_new.ln() + (term_sum - terms[j] + tl + th) / m_new;
        if new_cost < cost {
            term_sum = term_sum - terms[j] + tl + th;
            cells[j] = lo_cell;
            terms[j] = tl;
            cells.push(hi_cell);
            terms.push(th);
            cost = new_cost;
            cost_sequence.push(cost);
        } else {
            break;
        }
    }

    // Boundary pass: split off snapshot-empty slabs with a large face.
    let boundary_area_threshold = 0.01 * bound.surface_area();
    let weighted_face = |axis: usize, pos: f64, b: &Box3| -> f64 {
        let others: Vec<usize> = (0..3).filter(|&k| k != axis).collect();
        let rect = [(b.min[others[0]], b.max[others[0]]), (b.min[others[1]], b.max[others[1]])];
        match &params.weight {
            Some(w) => w.integrate_face(axis, pos, rect),
            None => rect.iter().map(|(lo, hi)| hi - lo).product(),
        }
    };
    let face_threshold = match &params.weight {
        Some(w) => 0.01 * w.boundary_integral(),
        None => boundary_area_threshold,
    };
    let initial = cells.len();
    let mut empty_splits = 0;
    for j in 0..initial {
        if cells.len() >= params.max_cells {
            break;
        }
        let cb = cells[j].bounds;
        let on_boundary = (0..3).any(|k| {
            (cb.min[k] - bound.min[k]).abs() < 1e-12 * (1.0 + bound.extents()[k])
                || (cb.max[k] - bound.max[k]).abs() < 1e-12 * (1.0 + bound.extents()[k])
        });
        if !on_boundary || cells[j].hits.is_empty() {
            continue;
        }
        // Best empty slab over axes and sides.
        let mut best: Option<(usize, f64, bool, f64)> = None; // axis, pos, high side, empty volume
        for axis in 0..3 {
            let eps = 1e-9 * (1.0 + cb.extents()[axis]);
            let occupied_hi = cells[j]
                .hits
                .iter()
                .map(|&(i, k)| snaps[i as usize][k as usize].hi(axis))
                .fold(f64::NEG_INFINITY, f64::max)
                .clamp(cb.min[axis], cb.max[axis]);
            let occupied_lo = cells[j]
                .hits
                .iter()
                .map(|&(i, k)| snaps[i as usize][k as usize].lo(axis))
                .fold(f64::INFINITY, f64::min)
                .clamp(cb.min[axis], cb.max[axis]);
            for (pos, high_side) in [(occupied_hi, true), (occupied_lo, false)] {
                if pos <= cb.min[axis] + eps || pos >= cb.max[axis] - eps {
                    continue;
                }
                if weighted_face(axis, pos, &cb) <= face_threshold {
                    continue;
                }
                let empty_extent =
                    if high_side { cb.max[axis] - pos } else { pos - cb.min[axis] };
                let volume = empty_extent * cb.volume() / cb.extents()[axis];
                if best.map_or(true, |(_, _, _, bv)| volume > bv) {
                    best = Some((axis, pos, high_side, volume));
                }
            }
        }
        if let Some((axis, pos, high_side, _)) = best {
            let (mut keep, mut empty) = (cb, cb);
            if high_side {
                keep.max[axis] = pos;
                empty.min[axis] = pos;
            } else {
                keep.min[axis] = pos;
                empty.max[axis] = pos;
            }
            let hits = std::mem::take(&mut cells[j].hits);
            cells[j] = PartCell { bounds: keep, hits: filter_hits(&hits, &keep) };
            // Snapshots can still graze the split plane itself; their
            // closed-containment touches are harmless over-coverage.
            cells.push(PartCell { bounds: empty, hits: filter_hits(&hits, &empty) });
            empty_splits += 1;
        }
    }

    Ok(Partition {
        bound,
        cells: cells.into_iter().map(|c| c.bounds).collect(),
        cost_sequence,
        empty_splits,
    })
}

/// Builds the full structure: bounding box, cost-driven cells, exact
/// per-cell contact intervals, and the balanced lookup tree.
pub fn build_swept_rep(
    base: &LocalImplicitRep,
    motion: &RigidMotion,
    params: &SweepParams,
) -> Result<SweptVolumeRep> {
    let partition = partition_cells(base, motion, params)?;
    let cfg = params.contact_cfg();
    let (a, b) = motion.domain();

    // Optional pruning: the anchor area's contacts exclude, per cell, the
    // time windows in which far-apart pairs provably cannot touch.
    let anchor: Option<(usize, Vec<Vec<(f64, f64)>>)> = if params.remark1_prune
        && base.patches.len() > 1
    {
        let anchor_idx = 0usize;
        let anchor_area = &base.patches[anchor_idx].area;
        let intervals: Vec<Vec<(f64, f64)>> = partition
            .cells
            .par_iter()
            .map(|cell| match anchor_area {
                Area::Ball(ball) => contact_intervals_sphere(ball, motion, cell, &cfg),
                Area::Box(bx) => contact_intervals_box(bx, motion, cell, &cfg),
            })
            .collect();
        Some((anchor_idx, intervals))
    } else {
        None
    };
    let max_reach = base
        .patches
        .iter()
        .map(|p| p.area.centre().coords.norm() + p.area.circumradius())
        .fold(0.0f64, f64::max);
    let margin_speed = motion.speed_bound(a, b, max_reach).unwrap_or(0.0);

    let coarse_entries: Vec<Vec<CellEntry>> = partition
        .cells
        .par_iter()
        .map(|cell_box| {
            let mut entries = Vec::new();
            for (patch_idx, patch) in base.patches.iter().enumerate() {
                let windows: Vec<(f64, f64)> = match &anchor {
                    Some((anchor_idx, anchor_intervals)) if *anchor_idx != patch_idx => {
                        let anchor_area = &base.patches[*anchor_idx].area;
                        let pair_dist = area_distance(anchor_area, &patch.area);
                        let reach = pair_dist
                            + anchor_area.diameter()
                            + patch.area.diameter()
                            + 4.0 * cfg.tol * margin_speed;
                        let mut holes = Vec::new();
                        for (other_cell, ivs) in
                            partition.cells.iter().zip(anchor_intervals.iter())
                        {
                            if cell_box.distance_to_box(other_cell) > reach {
                                holes.extend_from_slice(ivs);
                            }
                        }
                        subtract_windows(a, b, &holes)
                    }
                    _ => vec![(a, b)],
                };
                if windows.is_empty() {
                    continue;
                }
                let intervals = match &patch.area {
                    Area::Ball(ball) => contact::contact_intervals_sphere_in(
                        ball, motion, cell_box, &cfg, &windows,
                    ),
                    Area::Box(bx) => contact::contact_intervals_box_in(
                        bx, motion, cell_box, &cfg, &windows,
                    ),
                };
                for (t0, t1) in intervals {
                    entries.push(CellEntry { patch: patch_idx, t0, t1 });
                }
            }
            entries
        })
        .collect();

    let shared: Vec<std::sync::Arc<Vec<CellEntry>>> =
        coarse_entries.into_iter().map(std::sync::Arc::new).collect();
    let (tree, refined) = CellTree::build(&partition.cells);
    let cells: Vec<SweptCell> = refined
        .iter()
        .map(|r| SweptCell { bounds: r.bounds, entries: shared[r.parent as usize].clone() })
        .collect();
    Ok(SweptVolumeRep {
        bound: partition.bound,
        cells,
        tree,
        base: base.clone(),
        motion: motion.clone(),
        params: params.echo(),
    })
}

fn area_distance(a: &Area, b: &Area) -> f64 {
    match (a, b) {
        (Area::Ball(x), Area::Ball(y)) => {
            ((x.centre - y.centre).norm() - x.radius - y.radius).max(0.0)
        }
        (Area::Ball(x), Area::Box(y)) | (Area::Box(y), Area::Ball(x)) => {
            (y.distance(&x.centre) - x.radius).max(0.0)
        }
        (Area::Box(x), Area::Box(y)) => x.distance_to_box(y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{capsule_example, PiecewisePoly};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bounding_box_contains_swept_areas() {
        let (rep, motion) = capsule_example();
        let bound = bounding_box_swept(&rep, &motion);
        // Identity motion: x range must cover the base areas.
        let static_bound = bounding_box_swept(&rep, &RigidMotion::identity(0.0, 1.0));
        assert!(static_bound.min.x <= -2.0 - 2.0f64.sqrt());
        assert!(static_bound.max.x >= 2.0 + 2.0f64.sqrt());
        // Reference motion: y range covers the translation plus radius.
        assert!(bound.min.y <= -(2.0f64.sqrt()));
        assert!(bound.max.y >= 16.0 + 2.0f64.sqrt());

        // Monte-Carlo containment of moved area points.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20_000 {
            let t: f64 = rng.gen_range(0.0..=1.0);
            let patch = &rep.patches[rng.gen_range(0..rep.patches.len())];
            let (centre, radius) = match &patch.area {
                Area::Ball(b) => (b.centre, b.radius),
                Area::Box(b) => (b.centre(), b.half_extents().norm()),
            };
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let p = centre + dir * rng.gen_range(0.0..radius);
            let moved = motion.eval_unchecked(t).apply(&p);
            assert!(bound.contains(&moved), "moved point escapes the bound");
        }
    }

    #[test]
    fn pure_translation_ball_range() {
        // Unit ball translated along x over [0, 1]: the bound must cover
        // [-1, 2] in x and be conservative.
        let base = LocalImplicitRep {
            kind: crate::geometry::RepKind::BallCover,
            patches: vec![crate::geometry::RepPatch {
                area: Area::Ball(Ball3 { centre: Point3::origin(), radius: 1.0 }),
                procedure: crate::geometry::LocalProcedure::GeneralQuadric(
                    crate::geometry::Quadric3::new([
                        -1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0,
                    ])
                    .unwrap(),
                ),
                flagged: false,
            }],
            bound: Ball3 { centre: Point3::origin(), radius: 1.0 }.bounding_box(),
            fallback_cloud: None,
            levels: None,
        };
        let zero = PiecewisePoly::constant(0.0, 0.0, 1.0);
        let motion = RigidMotion::new(
            PiecewisePoly::single(0.0, 1.0, vec![0.0, 1.0]).unwrap(),
            zero.clone(),
            zero.clone(),
            zero.clone(),
            zero.clone(),
            zero,
        )
        .unwrap();
        let bound = bounding_box_swept(&base, &motion);
        assert!(bound.min.x <= -1.0 && bound.max.x >= 2.0);
    }

    #[test]
    fn cost_examples() {
        let bound = Box3 { min: Point3::origin(), max: Point3::new(2.0, 1.0, 1.0) };
        // Single empty cell: ln(1) + 0 = 0.
        let single = vec![SweptCell { bounds: bound, entries: std::sync::Arc::new(vec![]) }];
        assert_eq!(partition_cost(&single, None, &bound), 0.0);

        // Two unit-volume cells, one unit-duration entry each.
        let cells = vec![
            SweptCell {
                bounds: Box3 { min: Point3::origin(), max: Point3::new(1.0, 1.0, 1.0) },
                entries: std::sync::Arc::new(vec![CellEntry { patch: 0, t0: 0.0, t1: 1.0 }]),
            },
            SweptCell {
                bounds: Box3 {
                    min: Point3::new(1.0, 0.0, 0.0),
                    max: Point3::new(2.0, 1.0, 1.0),
                },
                entries: std::sync::Arc::new(vec![CellEntry { patch: 1, t0: 0.0, t1: 1.0 }]),
            },
        ];
        let expect = 2.0f64.ln() + 0.5 * (1.0 + 1.0);
        assert!((partition_cost(&cells, None, &bound) - expect).abs() < 1e-12);

        // A constant weight reduces to the unweighted cost.
        let grid = ScalarGrid::new(
            [2, 2, 2],
            bound,
            vec![3.7; 8],
        )
        .unwrap();
        let weighted = partition_cost(&cells, Some(&grid), &bound);
        assert!((weighted - expect).abs() < 1e-12, "{weighted} vs {expect}");
    }

    #[test]
    fn partition_cost_sequence_monotone() {
        let (rep, motion) = capsule_example();
        let params = SweepParams { time_samples: 64, ..Default::default() };
        let partition = partition_cells(&rep, &motion, &params).unwrap();
        assert!(partition.cells.len() > 1);
        for w in partition.cost_sequence.windows(2) {
            assert!(w[1] < w[0] + 1e-12, "cost went up: {:?}", partition.cost_sequence);
        }
        // Tiling: volumes sum to the bound volume.
        let total: f64 = partition.cells.iter().map(|c| c.volume()).sum();
        assert!((total - partition.bound.volume()).abs() < 1e-9 * partition.bound.volume());
    }

    fn static_ball_base(radius: f64) -> LocalImplicitRep {
        LocalImplicitRep {
            kind: crate::geometry::RepKind::BallCover,
            patches: vec![crate::geometry::RepPatch {
                area: Area::Ball(Ball3 { centre: Point3::origin(), radius }),
                procedure: crate::geometry::LocalProcedure::GeneralQuadric(
                    crate::geometry::Quadric3::new([
                        -radius * radius, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0,
                    ])
                    .unwrap(),
                ),
                flagged: false,
            }],
            bound: Ball3 { centre: Point3::origin(), radius }.bounding_box(),
            fallback_cloud: None,
            levels: None,
        }
    }

    #[test]
    fn degenerate_single_cell_when_no_split_helps() {
        // A static ball whose bound is small: `ln 2 > vol/2`, so the very
        // first split already raises the cost and the trivial partition
        // is kept.
        let base = static_ball_base(0.5);
        let motion = RigidMotion::identity(0.0, 1.0);
        let partition = partition_cells(&base, &motion, &SweepParams::default()).unwrap();
        assert_eq!(partition.cells.len(), 1);
    }

    #[test]
    fn uniformly_covered_bound_stops_at_cost_optimum() {
        // A ball filling its bound gives cost ln M + V tau / M whatever
        // the split positions; the greedy must stop at the analytic
        // argmin over integers.
        let base = static_ball_base(1.0);
        let motion = RigidMotion::identity(0.0, 1.0);
        let partition = partition_cells(&base, &motion, &SweepParams::default()).unwrap();
        let v = partition.bound.volume();
        let cost = |m: f64| m.ln() + v / m;
        let m = partition.cells.len() as f64;
        assert!(cost(m) <= cost(m + 1.0) + 1e-12, "greedy stopped too early");
        assert!(m == 1.0 || cost(m) < cost(m - 1.0) + 1e-12, "greedy overshot");
    }

    #[test]
    fn identity_motion_entries_are_whole_domain() {
        let (rep, _) = capsule_example();
        let motion = RigidMotion::identity(0.0, 1.0);
        let swept = build_swept_rep(&rep, &motion, &SweepParams::default()).unwrap();
        let mut seen = 0;
        for cell in &swept.cells {
            for e in cell.entries.iter() {
                assert_eq!((e.t0, e.t1), (0.0, 1.0));
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn static_structure_matches_base_placement() {
        // Degenerate domain [a, a]: every entry is the full (pointlike)
        // domain and membership at t = a drives everything downstream.
        let (rep, _) = capsule_example();
        let zero = PiecewisePoly::constant(0.0, 0.5, 0.5);
        let motion =
            RigidMotion::new(zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero.clone(), zero)
                .unwrap();
        let swept = build_swept_rep(&rep, &motion, &SweepParams::default()).unwrap();
        for cell in &swept.cells {
            for e in cell.entries.iter() {
                assert_eq!((e.t0, e.t1), (0.5, 0.5));
            }
        }
    }

    #[test]
    fn completeness_on_reference_sweep() {
        let (rep, motion) = capsule_example();
        let params = SweepParams { time_samples: 64, ..Default::default() };
        let swept = build_swept_rep(&rep, &motion, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10_000 {
            let t: f64 = rng.gen_range(0.0..=1.0);
            let i = rng.gen_range(0..rep.patches.len());
            let q = match &rep.patches[i].area {
                Area::Ball(ball) => {
                    let dir = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let dir = if dir.norm() < 1e-9 { Vector3::x() } else { dir.normalize() };
                    ball.centre + dir * (ball.radius * rng.gen_range(0.0f64..1.0).cbrt())
                }
                Area::Box(b) => Point3::new(
                    rng.gen_range(b.min.x..=b.max.x),
                    rng.gen_range(b.min.y..=b.max.y),
                    rng.gen_range(b.min.z..=b.max.z),
                ),
            };
            let moved = motion.eval_unchecked(t).apply(&q);
            let (cell, _) = swept.locate(&moved);
            let cell = cell.unwrap_or_else(|| panic!("trial {trial}: moved point not located"));
            let listed = swept.cells[cell]
                .entries
                .iter()
                .any(|e| e.patch == i && e.t0 <= t && t <= e.t1);
            assert!(listed, "trial {trial}: entry ({i}, {t}) missing in cell {cell}");
        }
    }

    #[test]
    fn lookup_visits_stay_logarithmic() {
        let (rep, motion) = capsule_example();
        let params = SweepParams { time_samples: 64, ..Default::default() };
        let swept = build_swept_rep(&rep, &motion, &params).unwrap();
        let budget = (swept.cells.len() as f64).log2().ceil() as usize + 1;
        assert!(swept.tree.depth() <= budget, "depth {} > {budget}", swept.tree.depth());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100_000 {
            let p = Point3::new(
                rng.gen_range(swept.bound.min.x..=swept.bound.max.x),
                rng.gen_range(swept.bound.min.y..=swept.bound.max.y),
                rng.gen_range(swept.bound.min.z..=swept.bound.max.z),
            );
            let (cell, visits) = swept.locate(&p);
            assert!(cell.is_some());
            assert!(visits <= budget, "{visits} visits > {budget}");
        }
    }

    #[test]
    fn pruning_preserves_entries() {
        let (rep, motion) = capsule_example();
        let plain = build_swept_rep(&rep, &motion, &SweepParams::default()).unwrap();
        let pruned = build_swept_rep(
            &rep,
            &motion,
            &SweepParams { remark1_prune: true, ..Default::default() },
        )
        .unwrap();
        assert_eq!(plain.cells.len(), pruned.cells.len());
        for (a, b) in plain.cells.iter().zip(&pruned.cells) {
            assert_eq!(a.entries.len(), b.entries.len(), "entry count changed");
            for (ea, eb) in a.entries.iter().zip(b.entries.iter()) {
                assert_eq!(ea.patch, eb.patch);
                assert!((ea.t0 - eb.t0).abs() <= 1e-6, "{} vs {}", ea.t0, eb.t0);
                assert!((ea.t1 - eb.t1).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn empty_boundary_cells_have_no_entries() {
        let (rep, motion) = capsule_example();
        let params = SweepParams { time_samples: 64, ..Default::default() };
        let partition = partition_cells(&rep, &motion, &params).unwrap();
        let (snaps, _) = take_snapshots(&rep, &motion, params.time_samples);
        // Recheck every cell's hit set against the snapshots directly.
        for cell in &partition.cells {
            let hits = snaps
                .iter()
                .flatten()
                .filter(|s| s.touches(cell))
                .count();
            let total: usize = snaps.iter().map(|v| v.len()).sum();
            assert!(hits <= total);
        }
    }

    #[test]
    fn seeded_splits_produce_a_valid_tiling() {
        let (rep, motion) = capsule_example();
        let params = SweepParams {
            time_samples: 16,
            seed_splits_along_path: true,
            ..Default::default()
        };
        let partition = partition_cells(&rep, &motion, &params).unwrap();
        let total: f64 = partition.cells.iter().map(|c| c.volume()).sum();
        assert!((total - partition.bound.volume()).abs() < 1e-9 * partition.bound.volume());
        assert!(partition.cells.len() > 4);
    }
}
