//! Structured text formats: representation files, motion specs and swept
//! structure bundles, all JSON with full-precision floats (serde's
//! shortest round-trip rendering reparses to identical bits).

use crate::error::{Error, Result};
use crate::geometry::{
    Area, Ball3, BivariatePatch, Box3, Frame, LocalImplicitRep, LocalProcedure, OrientedPoint,
    OrientedPointCloud, Quadric3, RepKind, RepPatch,
};
use crate::motion::{PiecewisePoly, RigidMotion};
use crate::sweep::{CellEntry, CellTree, SweepParamsEcho, SweptCell, SweptVolumeRep, TreeNode};
use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Serialize, Deserialize)]
struct BoxDto {
    min: [f64; 3],
    max: [f64; 3],
}

impl From<&Box3> for BoxDto {
    fn from(b: &Box3) -> Self {
        Self { min: [b.min.x, b.min.y, b.min.z], max: [b.max.x, b.max.y, b.max.z] }
    }
}

impl BoxDto {
    fn build(&self) -> Result<Box3> {
        Box3::new(Point3::from(self.min), Point3::from(self.max))
    }
}

#[derive(Serialize, Deserialize)]
struct BallDto {
    centre: [f64; 3],
    radius: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AreaDto {
    Box(BoxDto),
    Ball(BallDto),
}

#[derive(Serialize, Deserialize)]
struct PatchFnDto {
    origin: [f64; 3],
    u: [f64; 3],
    v: [f64; 3],
    n: [f64; 3],
    coeffs: [f64; 6],
}

impl From<&BivariatePatch> for PatchFnDto {
    fn from(p: &BivariatePatch) -> Self {
        let f = &p.frame;
        Self {
            origin: [f.origin.x, f.origin.y, f.origin.z],
            u: [f.u.x, f.u.y, f.u.z],
            v: [f.v.x, f.v.y, f.v.z],
            n: [f.n.x, f.n.y, f.n.z],
            coeffs: [p.c20, p.c11, p.c02, p.c10, p.c01, p.c00],
        }
    }
}

impl PatchFnDto {
    fn build(&self) -> Result<BivariatePatch> {
        let frame = Frame::new(
            Point3::from(self.origin),
            Vector3::from(self.u),
            Vector3::from(self.v),
            Vector3::from(self.n),
        )?;
        Ok(BivariatePatch::from_coeffs(frame, self.coeffs))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ProcedureDto {
    Quadric([f64; 10]),
    Patch(PatchFnDto),
    MinOfPatches(Vec<PatchFnDto>),
}

impl From<&LocalProcedure> for ProcedureDto {
    fn from(p: &LocalProcedure) -> Self {
        match p {
            LocalProcedure::GeneralQuadric(q) => ProcedureDto::Quadric(q.coeffs),
            LocalProcedure::Patch(b) => ProcedureDto::Patch(b.into()),
            LocalProcedure::MinOfPatches(ps) => {
                ProcedureDto::MinOfPatches(ps.iter().map(Into::into).collect())
            }
        }
    }
}

impl ProcedureDto {
    fn build(&self) -> Result<LocalProcedure> {
        Ok(match self {
            ProcedureDto::Quadric(c) => LocalProcedure::GeneralQuadric(Quadric3::new(*c)?),
            ProcedureDto::Patch(p) => LocalProcedure::Patch(p.build()?),
            ProcedureDto::MinOfPatches(ps) => LocalProcedure::min_of_patches(
                ps.iter().map(|p| p.build()).collect::<Result<Vec<_>>>()?,
            )?,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct RepPatchDto {
    area: AreaDto,
    procedure: ProcedureDto,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    flagged: bool,
}

#[derive(Serialize, Deserialize)]
struct RepDto {
    kind: String,
    bound: BoxDto,
    patches: Vec<RepPatchDto>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fallback_cloud: Option<Vec<[f64; 6]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Vec<Vec<(BallDto, ProcedureDto)>>>,
}

fn area_to_dto(a: &Area) -> AreaDto {
    match a {
        Area::Box(b) => AreaDto::Box(b.into()),
        Area::Ball(b) => AreaDto::Ball(BallDto {
            centre: [b.centre.x, b.centre.y, b.centre.z],
            radius: b.radius,
        }),
    }
}

fn area_from_dto(a: &AreaDto) -> Result<Area> {
    Ok(match a {
        AreaDto::Box(b) => Area::Box(b.build()?),
        AreaDto::Ball(b) => Area::Ball(Ball3::new(Point3::from(b.centre), b.radius)?),
    })
}

fn cloud_to_rows(cloud: &OrientedPointCloud) -> Vec<[f64; 6]> {
    cloud
        .points()
        .iter()
        .map(|p| {
            [p.position.x, p.position.y, p.position.z, p.normal.x, p.normal.y, p.normal.z]
        })
        .collect()
}

fn cloud_from_rows(rows: &[[f64; 6]]) -> Result<OrientedPointCloud> {
    OrientedPointCloud::new(
        rows.iter()
            .map(|r| OrientedPoint {
                position: Point3::new(r[0], r[1], r[2]),
                normal: Vector3::new(r[3], r[4], r[5]),
            })
            .collect(),
    )
}

fn rep_to_dto(rep: &LocalImplicitRep) -> RepDto {
    RepDto {
        kind: match rep.kind {
            RepKind::OctreeBased => "octree".to_string(),
            RepKind::BallCover => "ball_cover".to_string(),
        },
        bound: (&rep.bound).into(),
        patches: rep
            .patches
            .iter()
            .map(|p| RepPatchDto {
                area: area_to_dto(&p.area),
                procedure: (&p.procedure).into(),
                flagged: p.flagged,
            })
            .collect(),
        fallback_cloud: rep.fallback_cloud.as_ref().map(cloud_to_rows),
        levels: rep.levels.as_ref().map(|levels| {
            levels
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|(ball, proc)| {
                            (
                                BallDto {
                                    centre: [ball.centre.x, ball.centre.y, ball.centre.z],
                                    radius: ball.radius,
                                },
                                proc.into(),
                            )
                        })
                        .collect()
                })
                .collect()
        }),
    }
}

fn rep_from_dto(dto: &RepDto) -> Result<LocalImplicitRep> {
    let kind = match dto.kind.as_str() {
        "octree" => RepKind::OctreeBased,
        "ball_cover" => RepKind::BallCover,
        other => return Err(Error::invalid(format!("unknown representation kind `{other}`"))),
    };
    let rep = LocalImplicitRep {
        kind,
        bound: dto.bound.build()?,
        patches: dto
            .patches
            .iter()
            .map(|p| {
                Ok(RepPatch {
                    area: area_from_dto(&p.area)?,
                    procedure: p.procedure.build()?,
                    flagged: p.flagged,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        fallback_cloud: dto.fallback_cloud.as_deref().map(cloud_from_rows).transpose()?,
        levels: dto
            .levels
            .as_ref()
            .map(|levels| {
                levels
                    .iter()
                    .map(|level| {
                        level
                            .iter()
                            .map(|(ball, proc)| {
                                Ok((
                                    Ball3::new(Point3::from(ball.centre), ball.radius)?,
                                    proc.build()?,
                                ))
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?,
    };
    rep.validate_structure()?;
    Ok(rep)
}

pub fn rep_to_json(rep: &LocalImplicitRep) -> Result<String> {
    Ok(serde_json::to_string_pretty(&rep_to_dto(rep))?)
}

pub fn rep_from_json(text: &str) -> Result<LocalImplicitRep> {
    rep_from_dto(&serde_json::from_str(text)?)
}

pub fn save_rep(rep: &LocalImplicitRep, path: &Path) -> Result<()> {
    std::fs::write(path, rep_to_json(rep)?)?;
    Ok(())
}

pub fn load_rep(path: &Path) -> Result<LocalImplicitRep> {
    rep_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
struct SegmentDto {
    span: [f64; 2],
    coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MotionDto {
    domain: [f64; 2],
    vx: Vec<SegmentDto>,
    vy: Vec<SegmentDto>,
    vz: Vec<SegmentDto>,
    alpha: Vec<SegmentDto>,
    beta: Vec<SegmentDto>,
    gamma: Vec<SegmentDto>,
}

fn poly_to_segments(p: &PiecewisePoly) -> Vec<SegmentDto> {
    p.knots()
        .windows(2)
        .zip(p.segments())
        .map(|(w, coeffs)| SegmentDto { span: [w[0], w[1]], coeffs: coeffs.clone() })
        .collect()
}

fn poly_from_segments(name: &str, segments: &[SegmentDto], domain: [f64; 2]) -> Result<PiecewisePoly> {
    if segments.is_empty() {
        return Err(Error::invalid(format!("component {name} has no segments")));
    }
    let scale = 1.0 + domain[0].abs().max(domain[1].abs());
    let mut knots = vec![segments[0].span[0]];
    let mut coeffs = Vec::new();
    for (i, seg) in segments.iter().enumerate() {
        if (seg.span[0] - *knots.last().unwrap()).abs() > 1e-9 * scale {
            return Err(Error::invalid(format!(
                "component {name}: segment {i} starts at {} but the previous span ended at {}",
                seg.span[0],
                knots.last().unwrap()
            )));
        }
        knots.push(seg.span[1]);
        coeffs.push(seg.coeffs.clone());
    }
    if (knots[0] - domain[0]).abs() > 1e-9 * scale
        || (*knots.last().unwrap() - domain[1]).abs() > 1e-9 * scale
    {
        return Err(Error::invalid(format!(
            "component {name} spans [{}, {}] but the domain is [{}, {}]",
            knots[0],
            knots.last().unwrap(),
            domain[0],
            domain[1]
        )));
    }
    knots[0] = domain[0];
    *knots.last_mut().unwrap() = domain[1];
    PiecewisePoly::new(knots, coeffs)
}

pub fn motion_to_json(motion: &RigidMotion) -> Result<String> {
    let (a, b) = motion.domain();
    let dto = MotionDto {
        domain: [a, b],
        vx: poly_to_segments(&motion.vx),
        vy: poly_to_segments(&motion.vy),
        vz: poly_to_segments(&motion.vz),
        alpha: poly_to_segments(&motion.alpha),
        beta: poly_to_segments(&motion.beta),
        gamma: poly_to_segments(&motion.gamma),
    };
    Ok(serde_json::to_string_pretty(&dto)?)
}

pub fn motion_from_json(text: &str) -> Result<RigidMotion> {
    let dto: MotionDto = serde_json::from_str(text)?;
    if !(dto.domain[0] <= dto.domain[1]) {
        return Err(Error::invalid("motion domain must satisfy a <= b"));
    }
    RigidMotion::new(
        poly_from_segments("vx", &dto.vx, dto.domain)?,
        poly_from_segments("vy", &dto.vy, dto.domain)?,
        poly_from_segments("vz", &dto.vz, dto.domain)?,
        poly_from_segments("alpha", &dto.alpha, dto.domain)?,
        poly_from_segments("beta", &dto.beta, dto.domain)?,
        poly_from_segments("gamma", &dto.gamma, dto.domain)?,
    )
}

pub fn save_motion(motion: &RigidMotion, path: &Path) -> Result<()> {
    std::fs::write(path, motion_to_json(motion)?)?;
    Ok(())
}

pub fn load_motion(path: &Path) -> Result<RigidMotion> {
    motion_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TreeNodeDto {
    Split { axis: u8, pos: f64, lo: u32, hi: u32 },
    Leaf { cell: u32 },
    Scan { cells: Vec<u32> },
}

#[derive(Serialize, Deserialize)]
struct ParamsEchoDto {
    time_samples: usize,
    contact_tol: f64,
    fast_mode: bool,
    max_cells: usize,
    seed_splits_along_path: bool,
    remark1_prune: bool,
    weighted: bool,
}

#[derive(Serialize, Deserialize)]
struct SweptDto {
    bound: BoxDto,
    base: RepDto,
    motion: MotionDto,
    params: ParamsEchoDto,
    tree: Vec<TreeNodeDto>,
    root: u32,
    /// Entry lists as (patch index, t0, t1) triplets; cells reference
    /// them by index (leaves refined from one partition cell share one).
    entry_lists: Vec<Vec<(usize, f64, f64)>>,
    cells: Vec<SweptCellDto>,
}

#[derive(Serialize, Deserialize)]
struct SweptCellDto {
    bounds: BoxDto,
    entries: u32,
}

pub fn swept_to_json(rep: &SweptVolumeRep) -> Result<String> {
    let dto = SweptDto {
        bound: (&rep.bound).into(),
        base: rep_to_dto(&rep.base),
        motion: serde_json::from_str(&motion_to_json(&rep.motion)?)?,
        params: ParamsEchoDto {
            time_samples: rep.params.time_samples,
            contact_tol: rep.params.contact_tol,
            fast_mode: rep.params.fast_mode,
            max_cells: rep.params.max_cells,
            seed_splits_along_path: rep.params.seed_splits_along_path,
            remark1_prune: rep.params.remark1_prune,
            weighted: rep.params.weighted,
        },
        tree: rep
            .tree
            .nodes
            .iter()
            .map(|n| match n {
                TreeNode::Split { axis, pos, lo, hi } => {
                    TreeNodeDto::Split { axis: *axis, pos: *pos, lo: *lo, hi: *hi }
                }
                TreeNode::Leaf { cell } => TreeNodeDto::Leaf { cell: *cell },
                TreeNode::Scan { cells } => TreeNodeDto::Scan { cells: cells.clone() },
            })
            .collect(),
        root: rep.tree.root,
        entry_lists: Vec::new(),
        cells: Vec::new(),
    };
    let mut dto = dto;
    let mut list_index: std::collections::HashMap<*const Vec<CellEntry>, u32> =
        std::collections::HashMap::new();
    for c in &rep.cells {
        let key = std::sync::Arc::as_ptr(&c.entries);
        let idx = *list_index.entry(key).or_insert_with(|| {
            dto.entry_lists
                .push(c.entries.iter().map(|e| (e.patch, e.t0, e.t1)).collect());
            (dto.entry_lists.len() - 1) as u32
        });
        dto.cells.push(SweptCellDto { bounds: (&c.bounds).into(), entries: idx });
    }
    Ok(serde_json::to_string_pretty(&dto)?)
}

pub fn swept_from_json(text: &str) -> Result<SweptVolumeRep> {
    let dto: SweptDto = serde_json::from_str(text)?;
    let base = rep_from_dto(&dto.base)?;
    let motion = motion_from_json(&serde_json::to_string(&dto.motion)?)?;
    let entry_lists: Vec<std::sync::Arc<Vec<CellEntry>>> = dto
        .entry_lists
        .iter()
        .map(|list| {
            let entries = list
                .iter()
                .map(|&(patch, t0, t1)| {
                    if patch >= base.patches.len() {
                        return Err(Error::invalid(format!(
                            "cell entry references patch {patch} of {}",
                            base.patches.len()
                        )));
                    }
                    if !(t0 <= t1) {
                        return Err(Error::invalid("cell entry interval is reversed"));
                    }
                    Ok(CellEntry { patch, t0, t1 })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(std::sync::Arc::new(entries))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<SweptCell> = dto
        .cells
        .iter()
        .map(|c| {
            let list = entry_lists
                .get(c.entries as usize)
                .ok_or_else(|| Error::invalid("cell entry list index out of range"))?;
            Ok(SweptCell { bounds: c.bounds.build()?, entries: list.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    let nodes: Vec<TreeNode> = dto
        .tree
        .iter()
        .map(|n| match n {
            TreeNodeDto::Split { axis, pos, lo, hi } => {
                TreeNode::Split { axis: *axis, pos: *pos, lo: *lo, hi: *hi }
            }
            TreeNodeDto::Leaf { cell } => TreeNode::Leaf { cell: *cell },
            TreeNodeDto::Scan { cells } => TreeNode::Scan { cells: cells.clone() },
        })
        .collect();
    if dto.root as usize >= nodes.len() {
        return Err(Error::invalid("tree root out of range"));
    }
    Ok(SweptVolumeRep {
        bound: dto.bound.build()?,
        cells,
        tree: CellTree { nodes, root: dto.root },
        base,
        motion,
        params: SweepParamsEcho {
            time_samples: dto.params.time_samples,
            contact_tol: dto.params.contact_tol,
            fast_mode: dto.params.fast_mode,
            max_cells: dto.params.max_cells,
            seed_splits_along_path: dto.params.seed_splits_along_path,
            remark1_prune: dto.params.remark1_prune,
            weighted: dto.params.weighted,
        },
    })
}

pub fn save_swept(rep: &SweptVolumeRep, path: &Path) -> Result<()> {
    std::fs::write(path, swept_to_json(rep)?)?;
    Ok(())
}

pub fn load_swept(path: &Path) -> Result<SweptVolumeRep> {
    swept_from_json(&std::fs::read_to_string(path)?)
}
