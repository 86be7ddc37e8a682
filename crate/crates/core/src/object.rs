//! Object primitives, fingertip contact planning, the motion-transfer matrix and the
//! translation of object geometry and manipulation goals into via points.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::grasp::ContactPoint;
use crate::hand::{angle_between, ContactAssignment, HandModel, JointConfig};
use crate::linalg;
use crate::synergy::{SynergyModel, SynergyVelocityMap};
use crate::traj::ViaPoint;

pub const OBJECT_SCHEMA_VERSION: u32 = 1;
/// Largest fingertip-to-surface distance accepted after closing.
pub const CONTACT_TOLERANCE: f64 = 1e-3;
const CLOSURE_TOL: f64 = 1e-7;
const BISECTION_ITERS: usize = 200;
pub const PRESHAPE_TIME: f64 = 0.6;
pub const GRASP_TIME: f64 = 1.0;
pub const DEFAULT_MANIPULATION_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        radius: f64,
    },
    /// Extents along the object x, y and z axes.
    Box {
        width: f64,
        depth: f64,
        height: f64,
    },
    /// Axis along the object z axis.
    Cylinder {
        radius: f64,
        height: f64,
    },
}

impl Shape {
    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Cylinder { .. } => "cylinder",
        }
    }

    pub fn dims(&self) -> Vec<f64> {
        match *self {
            Shape::Sphere { radius } => vec![radius],
            Shape::Box {
                width,
                depth,
                height,
            } => vec![width, depth, height],
            Shape::Cylinder { radius, height } => vec![radius, height],
        }
    }

    pub fn from_dims(kind: &str, dims: &[f64]) -> Result<Self> {
        let shape = match (kind, dims) {
            ("sphere", [r]) => Shape::Sphere { radius: *r },
            ("box", [w, d, h]) => Shape::Box {
                width: *w,
                depth: *d,
                height: *h,
            },
            ("cylinder", [r, h]) => Shape::Cylinder {
                radius: *r,
                height: *h,
            },
            ("sphere" | "box" | "cylinder", _) => {
                return Err(Error::schema(
                    "dims",
                    format!("wrong number of dimensions for {kind}"),
                ))
            }
            _ => {
                return Err(Error::schema(
                    "kind",
                    format!("unknown object kind `{kind}`"),
                ))
            }
        };
        Ok(shape)
    }

    /// Signed distance in the object frame.
    fn local_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { radius } => p.norm() - radius,
            Shape::Box {
                width,
                depth,
                height,
            } => {
                let q = Vector3::new(
                    p.x.abs() - width / 2.0,
                    p.y.abs() - depth / 2.0,
                    p.z.abs() - height / 2.0,
                );
                q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
            }
            Shape::Cylinder { radius, height } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - height / 2.0;
                (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt() + dr.max(dz).min(0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectPrimitive {
    pub shape: Shape,
    pub pose: Isometry3<f64>,
    pub mass: f64,
}

impl ObjectPrimitive {
    pub fn new(shape: Shape, pose: Isometry3<f64>, mass: f64) -> Result<Self> {
        if shape.dims().iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "{} dimensions must be positive",
                shape.kind()
            )));
        }
        if !(mass >= 0.0 && mass.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "mass must be non-negative, got {mass}"
            )));
        }
        Ok(Self { shape, pose, mass })
    }

    pub fn at_origin(shape: Shape, mass: f64) -> Result<Self> {
        Self::new(shape, Isometry3::identity(), mass)
    }

    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        self.shape
            .local_distance(&self.pose.inverse_transform_point(&(*p).into()).coords)
    }

    /// Outward surface normal at (or near) `p`, from the distance field.
    pub fn outward_normal(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let h = 1e-7;
        let g = Vector3::from_fn(|i, _| {
            let mut hi = *p;
            let mut lo = *p;
            hi[i] += h;
            lo[i] -= h;
            (self.signed_distance(&hi) - self.signed_distance(&lo)) / (2.0 * h)
        });
        g.normalize()
    }

    /// Gravity wrench about the object center.
    pub fn weight_wrench(&self, gravity: f64) -> DVector<f64> {
        DVector::from_vec(vec![0.0, 0.0, -self.mass * gravity, 0.0, 0.0, 0.0])
    }

    pub fn to_file(&self) -> ObjectFile {
        let (r, p, y) = self.pose.rotation.euler_angles();
        ObjectFile {
            schema_version: OBJECT_SCHEMA_VERSION,
            kind: self.shape.kind().into(),
            dims: self.shape.dims(),
            pose: PoseFile {
                pos: self.center().into(),
                rpy: [r, p, y],
            },
            mass: self.mass,
        }
    }

    pub fn from_file(f: &ObjectFile) -> Result<Self> {
        if f.schema_version != OBJECT_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", f.schema_version),
            ));
        }
        let shape = Shape::from_dims(&f.kind, &f.dims)?;
        Self::new(shape, f.pose.isometry(), f.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PoseFile {
    pub pos: [f64; 3],
    pub rpy: [f64; 3],
}

impl PoseFile {
    pub fn isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.pos[0], self.pos[1], self.pos[2]),
            UnitQuaternion::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectFile {
    pub schema_version: u32,
    pub kind: String,
    pub dims: Vec<f64>,
    #[serde(default)]
    pub pose: PoseFile,
    pub mass: f64,
}

/// Stacked `[I, −[p_i − o]ₓ, (p_i − o)]` blocks: contact velocities from `[ȯ; ω; ṙ]`.
pub fn motion_transfer_matrix(origin: &Vector3<f64>, positions: &[Vector3<f64>]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(3 * positions.len(), 7);
    for (i, p) in positions.iter().enumerate() {
        let lever = p - origin;
        a.view_mut((3 * i, 0), (3, 3))
            .copy_from(&nalgebra::Matrix3::identity());
        a.view_mut((3 * i, 3), (3, 3))
            .copy_from(&(-linalg::skew(&lever)));
        a.view_mut((3 * i, 6), (3, 1)).copy_from(&lever);
    }
    a
}

pub fn contact_velocities(a_m: &DMatrix<f64>, motion: &DVector<f64>) -> Result<DVector<f64>> {
    ensure_dim("object motion", a_m.ncols(), motion.len())?;
    Ok(a_m * motion)
}

/// Fingers used for an `n`-contact grasp: the thumb alone, the widest pair for two contacts,
/// otherwise the thumb plus the fingers whose mean direction best opposes it.
pub fn select_fingers(hand: &HandModel, n: usize) -> Result<Vec<usize>> {
    let count = hand.fingers().len();
    if n < 1 || n > count {
        return Err(Error::InvalidInput(format!(
            "{n} contacts requested from a hand with {count} fingers"
        )));
    }
    if n == 1 {
        return Ok(vec![hand.thumb()]);
    }
    let angles: Vec<f64> = hand.fingers().iter().map(|f| f.base_angle()).collect();
    if n == 2 {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for i in 0..count {
            for j in i + 1..count {
                let sep = angle_between(angles[i], angles[j]);
                if sep > best.2 + 1e-12 {
                    best = (i, j, sep);
                }
            }
        }
        return Ok(vec![best.0, best.1]);
    }
    let thumb = hand.thumb();
    let others: Vec<usize> = (0..count).filter(|&i| i != thumb).collect();
    let target = angles[thumb] + PI;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for mask in 0u32..(1 << others.len()) {
        if mask.count_ones() as usize != n - 1 {
            continue;
        }
        let subset: Vec<usize> = others
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &f)| f)
            .collect();
        let (s, c) = subset.iter().fold((0.0, 0.0), |(s, c), &f| {
            (s + angles[f].sin(), c + angles[f].cos())
        });
        let err = angle_between(s.atan2(c), target);
        if best.as_ref().is_none_or(|b| err < b.1 - 1e-12) {
            best = Some((subset, err));
        }
    }
    let mut fingers = vec![thumb];
    fingers.extend(best.expect("at least one subset").0);
    Ok(fingers)
}

/// Finger indices by name.
pub fn fingers_by_name(hand: &HandModel, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            hand.fingers()
                .iter()
                .position(|f| &f.name == n)
                .ok_or_else(|| {
                    Error::InvalidInput(format!("hand {} has no finger `{n}`", hand.name()))
                })
        })
        .collect()
}

/// Object size the selected fingertips must span, and where the object sits given the tips.
/// Radial distances are signed along each finger's base direction so that a tip curling past
/// the palm axis keeps shrinking the span.
fn span_and_center(
    shape: &Shape,
    tips: &[Vector3<f64>],
    bearings: &[f64],
    thumb_first: bool,
) -> Result<(f64, Vector3<f64>)> {
    let z = tips.iter().map(|t| t.z).sum::<f64>() / tips.len() as f64;
    match shape {
        Shape::Sphere { .. } | Shape::Cylinder { .. } => {
            let radial = tips
                .iter()
                .zip(bearings)
                .map(|(t, b)| t.x * b.cos() + t.y * b.sin())
                .sum::<f64>()
                / tips.len() as f64;
            Ok((radial, Vector3::new(0.0, 0.0, z)))
        }
        Shape::Box { .. } => {
            if !thumb_first {
                return Err(Error::InvalidInput(
                    "box grasps need an opposing thumb".into(),
                ));
            }
            let thumb_x = tips[0].x;
            let others = &tips[1..];
            let face_x = others.iter().map(|t| t.x).sum::<f64>() / others.len() as f64;
            Ok((
                face_x - thumb_x,
                Vector3::new(0.5 * (face_x + thumb_x), 0.0, z),
            ))
        }
    }
}

fn target_span(shape: &Shape) -> f64 {
    match *shape {
        Shape::Sphere { radius } | Shape::Cylinder { radius, .. } => radius,
        Shape::Box { width, .. } => width,
    }
}

/// A closed grasp: posture touching the object, contact sites and the placed object.
#[derive(Debug, Clone)]
pub struct PlannedGrasp {
    pub fingers: Vec<usize>,
    pub assignment: ContactAssignment,
    pub contacts: Vec<ContactPoint>,
    pub posture: JointConfig,
    pub object: ObjectPrimitive,
    /// Closure parameter along the path at contact.
    pub closure: f64,
}

/// Close `path(s)` for `s ∈ [0, s_max]` until the selected tips span the object, then place the
/// object between them and check every tip lies on its surface.
fn close_on(
    hand: &HandModel,
    object: &ObjectPrimitive,
    fingers: &[usize],
    mu: f64,
    s_max: f64,
    path: impl Fn(f64) -> Result<JointConfig>,
) -> Result<PlannedGrasp> {
    let assignment = ContactAssignment::fingertips(hand, fingers)?;
    let thumb_first = fingers[0] == hand.thumb();
    let size = target_span(&object.shape);
    let bearings: Vec<f64> = fingers
        .iter()
        .map(|&f| hand.fingers()[f].base_angle())
        .collect();
    let gap = |s: f64| -> Result<f64> {
        let tips = hand.contact_positions(&path(s)?, &assignment)?;
        Ok(span_and_center(&object.shape, &tips, &bearings, thumb_first)?.0 - size)
    };
    let open_gap = gap(0.0)?;
    if open_gap < 0.0 {
        return Err(Error::Unreachable(format!(
            "{} of size {size} m exceeds the open hand span",
            object.shape.kind()
        )));
    }
    if gap(s_max)? > 0.0 {
        return Err(Error::Adaptation(format!(
            "{} of size {size} m is too small to reach within the closure range",
            object.shape.kind()
        )));
    }
    let (mut lo, mut hi) = (0.0, s_max);
    for _ in 0..BISECTION_ITERS {
        if hi - lo < CLOSURE_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if gap(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let closure = 0.5 * (lo + hi);
    let posture = path(closure)?;
    let tips = hand.contact_positions(&posture, &assignment)?;
    let (_, center) = span_and_center(&object.shape, &tips, &bearings, thumb_first)?;
    let placed = ObjectPrimitive::new(
        object.shape,
        Isometry3::from_parts(Translation3::from(center), UnitQuaternion::identity()),
        object.mass,
    )?;
    for (i, tip) in tips.iter().enumerate() {
        let d = placed.signed_distance(tip);
        if d.abs() > CONTACT_TOLERANCE {
            return Err(Error::Adaptation(format!(
                "fingertip {i} ends {:.2} mm from the {} surface",
                d.abs() * 1e3,
                object.shape.kind()
            )));
        }
    }
    let contacts = contacts_on(&placed, &tips, mu)?;
    Ok(PlannedGrasp {
        fingers: fingers.to_vec(),
        assignment,
        contacts,
        posture,
        object: placed,
        closure,
    })
}

fn check_support(object: &ObjectPrimitive, n: usize) -> Result<()> {
    if matches!(object.shape, Shape::Box { .. }) && n > 3 {
        return Err(Error::InvalidInput(
            "box grasps support at most 3 contacts".into(),
        ));
    }
    Ok(())
}

/// Close the hand along its closure direction from the open posture until `n` fingertips
/// touch the object. The object is placed between the fingertips (hand-relative pose).
pub fn plan_contacts(
    hand: &HandModel,
    object: &ObjectPrimitive,
    n: usize,
    mu: f64,
) -> Result<PlannedGrasp> {
    check_support(object, n)?;
    plan_with_fingers(hand, object, &select_fingers(hand, n)?, mu)
}

/// As [`plan_contacts`] with an explicit finger list; a box needs the thumb first.
pub fn plan_with_fingers(
    hand: &HandModel,
    object: &ObjectPrimitive,
    fingers: &[usize],
    mu: f64,
) -> Result<PlannedGrasp> {
    if fingers.is_empty() {
        return Err(Error::InvalidInput("no fingers selected".into()));
    }
    if matches!(object.shape, Shape::Box { .. }) && fingers.len() < 2 {
        return Err(Error::InvalidInput(
            "box grasps need at least 2 contacts".into(),
        ));
    }
    check_support(object, fingers.len())?;
    let dir = hand.closure_direction();
    let s_max = limit_along(&DVector::zeros(hand.n_q()), &dir, &hand.limits());
    close_on(hand, object, fingers, mu, s_max, |s| {
        Ok(JointConfig::new(&dir * s))
    })
}

/// Largest `s ≥ 0` keeping `start + s·dir` within the limits.
fn limit_along(start: &DVector<f64>, dir: &DVector<f64>, limits: &[[f64; 2]]) -> f64 {
    let mut s_max = f64::INFINITY;
    for ((x, d), l) in start.iter().zip(dir.iter()).zip(limits) {
        if *d > 1e-12 {
            s_max = s_max.min((l[1] - x) / d);
        } else if *d < -1e-12 {
            s_max = s_max.min((l[0] - x) / d);
        }
    }
    s_max.max(0.0)
}

/// Grasp reached by closing along the first synergy, with the via points that command it.
#[derive(Debug, Clone)]
pub struct AdaptedGrasp {
    pub grasp: PlannedGrasp,
    pub e_open: DVector<f64>,
    pub e_grasp: DVector<f64>,
    pub via_points: Vec<ViaPoint>,
}

/// Translate object geometry into synergy via points: a partly closed pre-shape and the
/// touching grasp at the end of the movement.
pub fn object_to_via_points(
    hand: &HandModel,
    model: &SynergyModel,
    object: &ObjectPrimitive,
    n_contacts: usize,
    mu: f64,
) -> Result<AdaptedGrasp> {
    check_support(object, n_contacts)?;
    adapt_with_fingers(
        hand,
        model,
        object,
        &select_fingers(hand, n_contacts)?,
        mu,
        0.5,
    )
}

/// As [`object_to_via_points`] with explicit fingers and pre-shape closure fraction.
pub fn adapt_with_fingers(
    hand: &HandModel,
    model: &SynergyModel,
    object: &ObjectPrimitive,
    fingers: &[usize],
    mu: f64,
    preshape_fraction: f64,
) -> Result<AdaptedGrasp> {
    ensure_dim("synergy model joints", hand.n_q(), model.n_q())?;
    check_support(object, fingers.len())?;
    let e_open = model.project(&JointConfig::zeros(hand.n_q()))?;
    let (grasp, closure, dir) = close_along_synergy(
        hand,
        model.s0(),
        model.basis(),
        &e_open,
        object,
        fingers,
        mu,
    )?;
    let e_grasp = &e_open + &dir * closure;
    let e_pre = &e_open + &dir * (preshape_fraction * closure);
    let via_points = vec![
        ViaPoint::hard(PRESHAPE_TIME, e_pre),
        ViaPoint::hard(GRASP_TIME, e_grasp.clone()),
    ];
    Ok(AdaptedGrasp {
        grasp,
        e_open,
        e_grasp,
        via_points,
    })
}

/// Close the posture `s0 + basis·(e_start + s·d)` along the first coefficient, `d` signed to
/// close the hand. Returns the grasp, the closure amount and `d`.
pub fn close_along_synergy(
    hand: &HandModel,
    s0: &DVector<f64>,
    basis: &DMatrix<f64>,
    e_start: &DVector<f64>,
    object: &ObjectPrimitive,
    fingers: &[usize],
    mu: f64,
) -> Result<(PlannedGrasp, f64, DVector<f64>)> {
    ensure_dim("synergy basis rows", hand.n_q(), basis.nrows())?;
    ensure_dim("start coefficients", basis.ncols(), e_start.len())?;
    let mut dir = DVector::zeros(basis.ncols());
    dir[0] = 1.0;
    if basis.column(0).dot(&hand.closure_direction()) < 0.0 {
        dir[0] = -1.0;
    }
    let posture = |e: &DVector<f64>| JointConfig::new(s0 + basis * e);
    let q_start = posture(e_start);
    let s_max = limit_along(&q_start.theta, &(basis * &dir), &hand.limits());
    let grasp = close_on(hand, object, fingers, mu, s_max, |s| {
        Ok(posture(&(e_start + &dir * s)))
    })?;
    let closure = grasp.closure;
    Ok((grasp, closure, dir))
}

/// Contact points at fingertip positions on a placed object, normals pointing inward.
pub fn contacts_on(
    object: &ObjectPrimitive,
    tips: &[Vector3<f64>],
    mu: f64,
) -> Result<Vec<ContactPoint>> {
    tips.iter()
        .enumerate()
        .map(|(i, tip)| {
            let normal = if matches!(object.shape, Shape::Box { .. }) {
                // flat faces: the face normal, not the distance-field corner blend
                let local = object.pose.inverse_transform_point(&(*tip).into()).coords;
                object.pose.rotation * Vector3::new(-local.x.signum(), 0.0, 0.0)
            } else {
                -object.outward_normal(tip)
            };
            ContactPoint::new(*tip, normal, mu).map_err(|e| match e {
                Error::InvalidContact { reason, .. } => Error::InvalidContact { index: i, reason },
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalKind {
    Rotate { axis: [f64; 3], angle: f64 },
    Translate { delta: [f64; 3] },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManipulationGoal {
    pub kind: GoalKind,
    pub duration: f64,
}

impl ManipulationGoal {
    /// Constant object twist `[ȯ; ω; ṙ]` achieving the goal over its duration.
    pub fn twist(&self) -> Result<DVector<f64>> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidInput(format!(
                "goal duration must be positive, got {}",
                self.duration
            )));
        }
        let mut tw = DVector::zeros(7);
        match self.kind {
            GoalKind::Rotate { axis, angle } => {
                let a = Vector3::from(axis);
                if (a.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidInput(
                        "rotation axis must be a unit vector".into(),
                    ));
                }
                tw.rows_mut(3, 3).copy_from(&(a * (angle / self.duration)));
            }
            GoalKind::Translate { delta } => {
                tw.rows_mut(0, 3)
                    .copy_from(&(Vector3::from(delta) / self.duration));
            }
        }
        Ok(tw)
    }
}

/// Integrate the goal's twist through the synergy velocity map at the grasp posture and emit a
/// via point at each of `n_steps + 1` evenly spaced normalized times.
pub fn manipulation_to_via_points(
    hand: &HandModel,
    model: &SynergyModel,
    grasp: &PlannedGrasp,
    e_grasp: &DVector<f64>,
    goal: &ManipulationGoal,
    n_steps: usize,
) -> Result<Vec<ViaPoint>> {
    if n_steps == 0 {
        return Err(Error::InvalidInput(
            "need at least one manipulation step".into(),
        ));
    }
    let twist = goal.twist()?;
    let q = model.reconstruct_unclamped(e_grasp)?;
    let positions = hand.contact_positions(&q, &grasp.assignment)?;
    let a_m = motion_transfer_matrix(&grasp.object.center(), &positions);
    let map = SynergyVelocityMap::new(hand, model, &q, &grasp.assignment, &a_m)?;
    let e_dot = &map.twist_to_synergy * twist;
    let dt = goal.duration / n_steps as f64;
    Ok((0..=n_steps)
        .map(|k| {
            ViaPoint::hard(
                k as f64 / n_steps as f64,
                e_grasp + &e_dot * (dt * k as f64),
            )
        })
        .collect())
}

/// Linear ramp from `e_grasp` by the scripted change `end − start`, as `n_steps + 1` via points.
pub fn ramp_via_points(
    e_grasp: &DVector<f64>,
    start: &DVector<f64>,
    end: &DVector<f64>,
    n_steps: usize,
) -> Result<Vec<ViaPoint>> {
    ensure_dim("ramp start", e_grasp.len(), start.len())?;
    ensure_dim("ramp end", e_grasp.len(), end.len())?;
    if n_steps == 0 {
        return Err(Error::InvalidInput("need at least one ramp step".into()));
    }
    Ok((0..=n_steps)
        .map(|k| {
            let a = k as f64 / n_steps as f64;
            ViaPoint::hard(a, e_grasp + (end - start) * a)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hand::BuiltinHand;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere(r: f64) -> ObjectPrimitive {
        ObjectPrimitive::at_origin(Shape::Sphere { radius: r }, 0.1).unwrap()
    }

    #[test]
    fn distances() {
        assert!((sphere(0.03).signed_distance(&Vector3::new(0.05, 0.0, 0.0)) - 0.02).abs() < 1e-15);
        let b = ObjectPrimitive::at_origin(
            Shape::Box {
                width: 0.1,
                depth: 0.2,
                height: 0.3,
            },
            0.1,
        )
        .unwrap();
        assert!((b.signed_distance(&Vector3::zeros()) + 0.05).abs() < 1e-15);
        assert!((b.signed_distance(&Vector3::new(0.08, 0.0, 0.0)) - 0.03).abs() < 1e-15);
        let c = ObjectPrimitive::at_origin(
            Shape::Cylinder {
                radius: 0.02,
                height: 0.1,
            },
            0.1,
        )
        .unwrap();
        assert!((c.signed_distance(&Vector3::new(0.0, 0.03, 0.0)) - 0.01).abs() < 1e-15);
        assert!((c.signed_distance(&Vector3::new(0.0, 0.0, 0.07)) - 0.02).abs() < 1e-15);
        assert!((c.outward_normal(&Vector3::new(0.02, 0.0, 0.0)) - Vector3::x()).norm() < 1e-6);
        assert!(ObjectPrimitive::at_origin(Shape::Sphere { radius: 0.0 }, 0.1).is_err());
    }

    #[test]
    fn transfer_matrix_blocks() {
        let o = Vector3::new(0.1, 0.2, 0.3);
        let a = motion_transfer_matrix(&o, &[o]);
        assert_eq!(a.view((0, 0), (3, 3)).into_owned(), DMatrix::identity(3, 3));
        assert_eq!(a.columns(3, 4).amax(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ps: Vec<Vector3<f64>> = (0..3)
            .map(|_| Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect();
        let a = motion_transfer_matrix(&o, &ps);
        let v = Vector3::new(0.3, -0.1, 0.2);
        let w = Vector3::new(-0.5, 0.7, 0.1);
        let mut tw = DVector::zeros(7);
        tw.rows_mut(0, 3).copy_from(&v);
        tw.rows_mut(3, 3).copy_from(&w);
        let pd = contact_velocities(&a, &tw).unwrap();
        for (i, p) in ps.iter().enumerate() {
            let exact = v + w.cross(&(p - o));
            assert!((pd.fixed_rows::<3>(3 * i) - exact).amax() < 1e-12);
        }
        let single = motion_transfer_matrix(&Vector3::zeros(), &[Vector3::new(0.03, 0.0, 0.0)]);
        let mut radial = DVector::zeros(7);
        radial[6] = 1.0;
        assert_eq!(
            contact_velocities(&single, &radial).unwrap(),
            DVector::from_vec(vec![0.03, 0.0, 0.0])
        );
        assert_eq!(
            contact_velocities(&a, &DVector::zeros(7)).unwrap().amax(),
            0.0
        );
        assert!(contact_velocities(&a, &DVector::zeros(6)).is_err());
    }

    #[test]
    fn finger_selection() {
        let h = HandModel::builtin(BuiltinHand::Anthropomorphic20Dof);
        let names = |v: Vec<usize>| {
            v.into_iter()
                .map(|i| h.fingers()[i].name.clone())
                .collect::<Vec<_>>()
        };
        assert_eq!(names(select_fingers(&h, 2).unwrap()), ["thumb", "middle"]);
        assert_eq!(
            names(select_fingers(&h, 3).unwrap()),
            ["thumb", "index", "ring"]
        );
        assert_eq!(select_fingers(&h, 5).unwrap().len(), 5);
        assert!(select_fingers(&h, 6).is_err());
    }

    #[test]
    fn antipodal_sphere_pair() {
        let h = HandModel::builtin(BuiltinHand::Anthropomorphic20Dof);
        let g = plan_contacts(&h, &sphere(0.03), 2, 0.5).unwrap();
        let o = g.object.center();
        for c in &g.contacts {
            assert!(c.normal.cross(&(o - c.position)).norm() < 1e-9);
            assert!(c.normal.dot(&(o - c.position)) > 0.0);
            assert!(g.object.signed_distance(&c.position).abs() <= CONTACT_TOLERANCE);
        }
        let d = g.contacts[1].position - g.contacts[0].position;
        assert!(d.cross(&(o - g.contacts[0].position)).norm() < 1e-9);
    }

    #[test]
    fn box_tripod_opposes_thumb() {
        for which in BuiltinHand::ALL {
            let h = HandModel::builtin(which);
            let b = ObjectPrimitive::at_origin(
                Shape::Box {
                    width: 0.05,
                    depth: 0.08,
                    height: 0.06,
                },
                0.1,
            )
            .unwrap();
            let g = plan_contacts(&h, &b, 3, 0.5).unwrap();
            let thumb = &g.contacts[0];
            let mid = (g.contacts[1].position + g.contacts[2].position) / 2.0;
            let opp = (mid - thumb.position).angle(&thumb.normal).to_degrees();
            assert!(opp < 30.0, "opposition off by {opp} degrees");
            assert!(thumb.normal.angle(&g.contacts[1].normal).to_degrees() > 150.0);
            assert!(plan_contacts(&h, &b, 4, 0.5).is_err());
        }
    }

    #[test]
    fn unreachable_and_monotone() {
        let h = HandModel::builtin(BuiltinHand::Anthropomorphic20Dof);
        assert!(matches!(
            plan_contacts(&h, &sphere(0.5), 3, 0.5),
            Err(Error::Unreachable(_))
        ));
        let small = plan_contacts(&h, &sphere(0.02), 3, 0.5).unwrap();
        let large = plan_contacts(&h, &sphere(0.04), 3, 0.5).unwrap();
        assert!(large.closure < small.closure);
    }

    #[test]
    fn goal_twists() {
        let g = ManipulationGoal {
            kind: GoalKind::Rotate {
                axis: [0.0, 0.0, 1.0],
                angle: 0.5,
            },
            duration: 2.0,
        };
        assert_eq!(g.twist().unwrap()[5], 0.25);
        let bad = ManipulationGoal {
            kind: GoalKind::Rotate {
                axis: [0.0, 0.0, 2.0],
                angle: 0.5,
            },
            duration: 2.0,
        };
        assert!(bad.twist().is_err());
        let e = DVector::from_vec(vec![0.46, 0.17]);
        let ramp = ramp_via_points(
            &e,
            &DVector::from_vec(vec![0.47, 0.18]),
            &DVector::from_vec(vec![0.54, 0.27]),
            8,
        )
        .unwrap();
        assert_eq!(ramp.len(), 9);
        assert!((&ramp[8].mean - &e - DVector::from_vec(vec![0.07, 0.09])).amax() < 1e-12);
    }
}
