//! Kinematic hand descriptions: finger chains, forward kinematics, the hand Jacobian,
//! joint coupling and joint compliance.
//!
//! Each link rotates about its own axis (expressed in the frame reached so far) and then
//! translates by `length` along the rotated local x-axis. Fingertips sit at the end of the
//! last link.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Isometry3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::linalg;

pub const HAND_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub axis: Unit<Vector3<f64>>,
    pub length: f64,
    pub limits: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerChain {
    pub name: String,
    pub base: Isometry3<f64>,
    pub links: Vec<Link>,
}

impl FingerChain {
    /// Angle of the finger base around the palm axis (z), in radians.
    pub fn base_angle(&self) -> f64 {
        let p = self.base.translation.vector;
        p.y.atan2(p.x)
    }
}

/// Joint-space configuration in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub theta: DVector<f64>,
    pub timestamp: Option<f64>,
}

impl JointConfig {
    pub fn new(theta: DVector<f64>) -> Self {
        Self {
            theta,
            timestamp: None,
        }
    }

    pub fn at(theta: DVector<f64>, t: f64) -> Self {
        Self {
            theta,
            timestamp: Some(t),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(DVector::zeros(n))
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// A point rigidly attached to a link, in the link frame after its joint rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSite {
    pub finger: usize,
    pub link: usize,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactAssignment {
    pub sites: Vec<ContactSite>,
}

impl ContactAssignment {
    /// One contact at the tip of each listed finger.
    pub fn fingertips(hand: &HandModel, fingers: &[usize]) -> Result<Self> {
        let mut sites = Vec::with_capacity(fingers.len());
        for (i, &f) in fingers.iter().enumerate() {
            let chain = hand.fingers.get(f).ok_or_else(|| Error::InvalidContact {
                index: i,
                reason: format!("finger {f} out of range"),
            })?;
            let last = chain.links.len() - 1;
            sites.push(ContactSite {
                finger: f,
                link: last,
                offset: Vector3::new(chain.links[last].length, 0.0, 0.0),
            });
        }
        Ok(Self { sites })
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn fingers(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.finger).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactFrame {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinHand {
    Anthropomorphic20Dof,
    ThreeFinger4Dof,
}

impl BuiltinHand {
    pub const ALL: [BuiltinHand; 2] = [
        BuiltinHand::Anthropomorphic20Dof,
        BuiltinHand::ThreeFinger4Dof,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BuiltinHand::Anthropomorphic20Dof => "anthropomorphic_20dof",
            BuiltinHand::ThreeFinger4Dof => "three_finger_4dof",
        }
    }
}

impl FromStr for BuiltinHand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anthropomorphic_20dof" => Ok(BuiltinHand::Anthropomorphic20Dof),
            "three_finger_4dof" => Ok(BuiltinHand::ThreeFinger4Dof),
            other => Err(Error::InvalidInput(format!(
                "unknown built-in hand `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandModel {
    name: String,
    fingers: Vec<FingerChain>,
    coupling: DMatrix<f64>,
    compliance: DMatrix<f64>,
    offsets: Vec<usize>,
}

impl HandModel {
    pub fn new(
        name: impl Into<String>,
        fingers: Vec<FingerChain>,
        coupling: DMatrix<f64>,
        compliance: DMatrix<f64>,
    ) -> Result<Self> {
        if fingers.is_empty() {
            return Err(Error::schema("fingers", "at least one finger required"));
        }
        let mut offsets = Vec::with_capacity(fingers.len());
        let mut n_q = 0;
        for (i, f) in fingers.iter().enumerate() {
            if f.links.is_empty() {
                return Err(Error::schema(
                    format!("fingers[{i}].links"),
                    "finger has no links",
                ));
            }
            for (k, l) in f.links.iter().enumerate() {
                let path = format!("fingers[{i}].links[{k}]");
                if !(l.length.is_finite() && l.length >= 0.0) {
                    return Err(Error::schema(
                        format!("{path}.length"),
                        "length must be >= 0",
                    ));
                }
                if !(l.limits[0].is_finite() && l.limits[1].is_finite())
                    || l.limits[0] > l.limits[1]
                {
                    return Err(Error::schema(
                        format!("{path}.limits"),
                        "lower limit exceeds upper limit",
                    ));
                }
            }
            offsets.push(n_q);
            n_q += f.links.len();
        }
        if coupling.nrows() != n_q {
            return Err(Error::schema(
                "coupling",
                format!("expected {n_q} rows, found {}", coupling.nrows()),
            ));
        }
        if coupling.ncols() == 0 || linalg::rank(&coupling) < coupling.ncols() {
            return Err(Error::schema(
                "coupling",
                "coupling must have full column rank",
            ));
        }
        if compliance.shape() != (n_q, n_q) {
            return Err(Error::schema(
                "compliance",
                format!(
                    "expected {n_q}x{n_q}, found {}x{}",
                    compliance.nrows(),
                    compliance.ncols()
                ),
            ));
        }
        if !linalg::is_spd(&compliance) {
            return Err(Error::schema(
                "compliance",
                "compliance must be symmetric positive-definite",
            ));
        }
        Ok(Self {
            name: name.into(),
            fingers,
            coupling,
            compliance,
            offsets,
        })
    }

    pub fn builtin(which: BuiltinHand) -> Self {
        match which {
            BuiltinHand::Anthropomorphic20Dof => anthropomorphic(),
            BuiltinHand::ThreeFinger4Dof => three_finger(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fingers(&self) -> &[FingerChain] {
        &self.fingers
    }

    pub fn n_q(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.fingers.last().map_or(0, |f| f.links.len())
    }

    pub fn n_dof(&self) -> usize {
        self.coupling.ncols()
    }

    pub fn coupling(&self) -> &DMatrix<f64> {
        &self.coupling
    }

    pub fn compliance(&self) -> &DMatrix<f64> {
        &self.compliance
    }

    /// Index of the first joint of `finger` in the stacked joint vector.
    pub fn joint_offset(&self, finger: usize) -> usize {
        self.offsets[finger]
    }

    pub fn joint_range(&self, finger: usize) -> std::ops::Range<usize> {
        let o = self.offsets[finger];
        o..o + self.fingers[finger].links.len()
    }

    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.fingers
            .iter()
            .flat_map(|f| f.links.iter().map(|l| l.limits))
            .collect()
    }

    /// Actuator-space limits such that `coupling * q_dof` stays inside the joint limits.
    pub fn dof_limits(&self) -> Vec<[f64; 2]> {
        let lim = self.limits();
        (0..self.n_dof())
            .map(|d| {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for (j, l) in lim.iter().enumerate() {
                    let c = self.coupling[(j, d)];
                    if c.abs() > 1e-12 {
                        let (a, b) = (l[0] / c, l[1] / c);
                        lo = lo.max(a.min(b));
                        hi = hi.min(a.max(b));
                    }
                }
                [lo, hi]
            })
            .collect()
    }

    pub fn actuate(&self, q_dof: &DVector<f64>) -> Result<JointConfig> {
        ensure_dim("actuator vector", self.n_dof(), q_dof.len())?;
        Ok(JointConfig::new(&self.coupling * q_dof))
    }

    /// Clamp into joint limits. Returns the clamped configuration and whether clamping occurred.
    pub fn clamp(&self, q: &JointConfig) -> (JointConfig, bool) {
        let mut out = q.clone();
        let mut clamped = false;
        for (v, l) in out.theta.iter_mut().zip(self.limits()) {
            let c = v.clamp(l[0], l[1]);
            if c != *v {
                clamped = true;
                *v = c;
            }
        }
        if clamped {
            log::warn!("{}: joint configuration clamped to limits", self.name);
        }
        (out, clamped)
    }

    /// Unit-free closing direction in joint space: every joint whose axis is not the
    /// base-frame z axis (flexion rather than ab/adduction), projected onto the range of
    /// the coupling matrix and normalized.
    pub fn closure_direction(&self) -> DVector<f64> {
        let mut flex = DVector::zeros(self.n_q());
        for (i, f) in self.fingers.iter().enumerate() {
            for (k, l) in f.links.iter().enumerate() {
                if l.axis.z.abs() < 0.5 {
                    flex[self.offsets[i] + k] = 1.0;
                }
            }
        }
        let (cpinv, _) = linalg::pinv(&self.coupling);
        let d = &self.coupling * (cpinv * flex);
        let n = d.norm();
        if n > 0.0 {
            d / n
        } else {
            d
        }
    }

    /// The finger whose base is angularly furthest from all others (the opposing digit).
    pub fn thumb(&self) -> usize {
        let angles: Vec<f64> = self.fingers.iter().map(FingerChain::base_angle).collect();
        let mut best = (0, f64::NEG_INFINITY);
        for (i, &a) in angles.iter().enumerate() {
            let sep = angles
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &b)| angle_between(a, b))
                .fold(f64::INFINITY, f64::min);
            if sep > best.1 + 1e-12 {
                best = (i, sep);
            }
        }
        best.0
    }

    fn check_q(&self, q: &JointConfig) -> Result<()> {
        ensure_dim("joint configuration", self.n_q(), q.len())
    }

    fn check_site(&self, i: usize, s: &ContactSite) -> Result<()> {
        let f = self
            .fingers
            .get(s.finger)
            .ok_or_else(|| Error::InvalidContact {
                index: i,
                reason: format!("finger {} out of range", s.finger),
            })?;
        if s.link >= f.links.len() {
            return Err(Error::InvalidContact {
                index: i,
                reason: format!("link {} out of range for finger {}", s.link, s.finger),
            });
        }
        Ok(())
    }

    /// Joint frames of one finger: `(frame before the rotation, frame after the rotation)`.
    fn chain_frames(
        &self,
        finger: usize,
        q: &JointConfig,
    ) -> Vec<(Isometry3<f64>, Isometry3<f64>)> {
        let chain = &self.fingers[finger];
        let mut t = chain.base;
        let mut out = Vec::with_capacity(chain.links.len());
        for (k, link) in chain.links.iter().enumerate() {
            let angle = q.theta[self.offsets[finger] + k];
            let rotated = t * UnitQuaternion::from_axis_angle(&link.axis, angle);
            out.push((t, rotated));
            t = rotated * Translation3::new(link.length, 0.0, 0.0);
        }
        out
    }

    /// Fingertip frames, one per finger.
    pub fn forward_kinematics(&self, q: &JointConfig) -> Result<Vec<ContactFrame>> {
        self.check_q(q)?;
        Ok((0..self.fingers.len())
            .map(|f| {
                let frames = self.chain_frames(f, q);
                let (_, last) = frames.last().expect("non-empty chain");
                let len = self.fingers[f].links.last().expect("non-empty").length;
                let tip = last * Translation3::new(len, 0.0, 0.0);
                ContactFrame {
                    position: tip.translation.vector,
                    orientation: tip.rotation,
                }
            })
            .collect())
    }

    pub fn contact_frames(
        &self,
        q: &JointConfig,
        contacts: &ContactAssignment,
    ) -> Result<Vec<ContactFrame>> {
        self.check_q(q)?;
        contacts
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| {
                self.check_site(i, s)?;
                let frames = self.chain_frames(s.finger, q);
                let (_, rotated) = frames[s.link];
                let p = rotated * Translation3::from(s.offset);
                Ok(ContactFrame {
                    position: p.translation.vector,
                    orientation: p.rotation,
                })
            })
            .collect()
    }

    pub fn contact_positions(
        &self,
        q: &JointConfig,
        contacts: &ContactAssignment,
    ) -> Result<Vec<Vector3<f64>>> {
        Ok(self
            .contact_frames(q, contacts)?
            .into_iter()
            .map(|f| f.position)
            .collect())
    }

    /// Hand Jacobian `J_h` (3·n_c × n_q), rows grouped per contact.
    pub fn jacobian(&self, q: &JointConfig, contacts: &ContactAssignment) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        let mut j = DMatrix::zeros(3 * contacts.len(), self.n_q());
        for (i, s) in contacts.sites.iter().enumerate() {
            self.check_site(i, s)?;
            let frames = self.chain_frames(s.finger, q);
            let p = (frames[s.link].1 * Translation3::from(s.offset))
                .translation
                .vector;
            for (k, (before, _)) in frames.iter().enumerate().take(s.link + 1) {
                let axis = before.rotation * self.fingers[s.finger].links[k].axis.into_inner();
                let col = axis.cross(&(p - before.translation.vector));
                j.fixed_view_mut::<3, 1>(3 * i, self.offsets[s.finger] + k)
                    .copy_from(&col);
            }
        }
        Ok(j)
    }

    pub fn to_file(&self) -> HandModelFile {
        HandModelFile {
            schema_version: HAND_SCHEMA_VERSION,
            name: self.name.clone(),
            fingers: self
                .fingers
                .iter()
                .map(|f| {
                    let (r, p, y) = f.base.rotation.euler_angles();
                    FingerFile {
                        name: Some(f.name.clone()),
                        base_frame: FrameFile {
                            pos: f.base.translation.vector.into(),
                            rpy: [r, p, y],
                        },
                        links: f
                            .links
                            .iter()
                            .map(|l| LinkFile {
                                axis: l.axis.into_inner().into(),
                                length: l.length,
                                limits: l.limits,
                            })
                            .collect(),
                    }
                })
                .collect(),
            coupling: rows_of(&self.coupling),
            compliance: rows_of(&self.compliance),
        }
    }

    pub fn from_file(file: &HandModelFile) -> Result<Self> {
        if file.schema_version != HAND_SCHEMA_VERSION {
            return Err(Error::schema(
                "schema_version",
                format!("unsupported version {}", file.schema_version),
            ));
        }
        let mut fingers = Vec::with_capacity(file.fingers.len());
        for (i, f) in file.fingers.iter().enumerate() {
            let mut links = Vec::with_capacity(f.links.len());
            for (k, l) in f.links.iter().enumerate() {
                let axis = Vector3::from(l.axis);
                if (axis.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::schema(
                        format!("fingers[{i}].links[{k}].axis"),
                        format!("axis must be unit-norm (norm {})", axis.norm()),
                    ));
                }
                links.push(Link {
                    axis: Unit::new_unchecked(axis),
                    length: l.length,
                    limits: l.limits,
                });
            }
            let [r, p, y] = f.base_frame.rpy;
            fingers.push(FingerChain {
                name: f.name.clone().unwrap_or_else(|| format!("finger{i}")),
                base: Isometry3::from_parts(
                    Translation3::from(Vector3::from(f.base_frame.pos)),
                    UnitQuaternion::from_euler_angles(r, p, y),
                ),
                links,
            });
        }
        let coupling = matrix_from_rows("coupling", &file.coupling)?;
        let compliance = matrix_from_rows("compliance", &file.compliance)?;
        Self::new(file.name.clone(), fingers, coupling, compliance)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }

    /// Either a built-in name or a path to a hand JSON file.
    pub fn resolve(spec: &str) -> Result<Self> {
        match spec.parse::<BuiltinHand>() {
            Ok(b) => Ok(Self::builtin(b)),
            Err(_) => Self::load(Path::new(spec)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandModelFile {
    pub schema_version: u32,
    pub name: String,
    pub fingers: Vec<FingerFile>,
    pub coupling: Vec<Vec<f64>>,
    pub compliance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base_frame: FrameFile,
    pub links: Vec<LinkFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameFile {
    pub pos: [f64; 3],
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkFile {
    pub axis: [f64; 3],
    pub length: f64,
    pub limits: [f64; 2],
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::schema(format!("{path}[{i}]"), "ragged matrix row"));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema(format!("{path}[{i}]"), "non-finite entry"));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

pub(crate) fn angle_between(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

// Human-scale phalanges.
const PROXIMAL: f64 = 0.04;
const MEDIAL: f64 = 0.03;
const DISTAL: f64 = 0.02;
const DEFAULT_COMPLIANCE: f64 = 0.1;

fn flex_axis() -> Unit<Vector3<f64>> {
    // positive flexion curls the finger from the palm plane towards +z
    Unit::new_unchecked(Vector3::new(0.0, -1.0, 0.0))
}

fn spread_axis() -> Unit<Vector3<f64>> {
    Unit::new_unchecked(Vector3::z())
}

fn radial_base(radius: f64, angle: f64) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(radius * angle.cos(), radius * angle.sin(), 0.0),
        UnitQuaternion::from_euler_angles(0.0, 0.0, angle),
    )
}

fn anthropomorphic() -> HandModel {
    let layout = [
        ("thumb", 180.0f64),
        ("index", 30.0),
        ("middle", 0.0),
        ("ring", -30.0),
        ("little", -60.0),
    ];
    let flex = [-0.2, 1.7];
    let fingers = layout
        .iter()
        .map(|&(name, deg)| FingerChain {
            name: name.to_string(),
            base: radial_base(0.02, deg.to_radians()),
            links: vec![
                Link {
                    axis: spread_axis(),
                    length: 0.0,
                    limits: [-0.35, 0.35],
                },
                Link {
                    axis: flex_axis(),
                    length: PROXIMAL,
                    limits: flex,
                },
                Link {
                    axis: flex_axis(),
                    length: MEDIAL,
                    limits: flex,
                },
                Link {
                    axis: flex_axis(),
                    length: DISTAL,
                    limits: flex,
                },
            ],
        })
        .collect();
    HandModel::new(
        BuiltinHand::Anthropomorphic20Dof.name(),
        fingers,
        DMatrix::identity(20, 20),
        DMatrix::identity(20, 20) * DEFAULT_COMPLIANCE,
    )
    .expect("built-in anthropomorphic hand is valid")
}

fn three_finger() -> HandModel {
    let flex = [-0.2, 1.7];
    let spread = [-0.6, 0.6];
    let two_link = |spread_link: bool| {
        let mut links = Vec::new();
        if spread_link {
            links.push(Link {
                axis: spread_axis(),
                length: 0.0,
                limits: spread,
            });
        }
        links.push(Link {
            axis: flex_axis(),
            length: PROXIMAL + 0.01,
            limits: flex,
        });
        links.push(Link {
            axis: flex_axis(),
            length: MEDIAL + 0.01,
            limits: flex,
        });
        links
    };
    let fingers = vec![
        FingerChain {
            name: "f1".into(),
            base: radial_base(0.025, 40f64.to_radians()),
            links: two_link(true),
        },
        FingerChain {
            name: "f2".into(),
            base: radial_base(0.025, -40f64.to_radians()),
            links: two_link(true),
        },
        FingerChain {
            name: "thumb".into(),
            base: radial_base(0.025, PI),
            links: two_link(false),
        },
    ];
    // joints: f1 [spread, prox, dist], f2 [spread, prox, dist], thumb [prox, dist]
    // actuators: spread (mirrored on f1/f2), f1 flexion, f2 flexion, thumb flexion
    let mut coupling = DMatrix::zeros(8, 4);
    coupling[(0, 0)] = 1.0;
    coupling[(3, 0)] = -1.0;
    for (dof, joints) in [(1, [1, 2]), (2, [4, 5]), (3, [6, 7])] {
        for j in joints {
            coupling[(j, dof)] = 1.0;
        }
    }
    HandModel::new(
        BuiltinHand::ThreeFinger4Dof.name(),
        fingers,
        coupling,
        DMatrix::identity(8, 8) * DEFAULT_COMPLIANCE,
    )
    .expect("built-in three-finger hand is valid")
}
