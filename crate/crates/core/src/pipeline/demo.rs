use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::DemoConfig;
use crate::error::{Error, Result};
use crate::hand::{HandModel, JointConfig};
use crate::linalg;
use crate::object::{plan_contacts, ObjectPrimitive, Shape};
use crate::synergy::{Demonstration, DemonstrationSet, PhaseMarker};

/// Phase boundaries of a synthetic demonstration, in normalized time.
pub const PHASES: [(&str, f64); 4] = [
    ("open", 0.0),
    ("grasp", 0.1),
    ("manipulate", 0.5),
    ("release", 0.8),
];

/// The nine training objects: three shapes at three sizes each.
pub fn training_objects() -> Vec<(String, ObjectPrimitive)> {
    let mut out = Vec::new();
    for r in [0.025, 0.035, 0.045] {
        let s = Shape::Sphere { radius: r };
        out.push((
            format!("sphere_r{:.0}", r * 1e3),
            ObjectPrimitive::at_origin(s, 0.1).expect("valid"),
        ));
    }
    for w in [0.04, 0.055, 0.07] {
        let s = Shape::Box {
            width: w,
            depth: 0.1,
            height: 0.1,
        };
        out.push((
            format!("box_w{:.0}", w * 1e3),
            ObjectPrimitive::at_origin(s, 0.1).expect("valid"),
        ));
    }
    for r in [0.02, 0.03, 0.04] {
        let s = Shape::Cylinder {
            radius: r,
            height: 0.12,
        };
        out.push((
            format!("cylinder_r{:.0}", r * 1e3),
            ObjectPrimitive::at_origin(s, 0.1).expect("valid"),
        ));
    }
    out
}

fn min_jerk(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

/// In-hand manipulation direction: the opposing digit flexes while the others extend,
/// restricted to what the actuators can produce and orthogonal to the closure direction.
pub fn manipulation_direction(hand: &HandModel) -> DVector<f64> {
    let closure = hand.closure_direction();
    let thumb = hand.thumb();
    let mut raw = DVector::zeros(hand.n_q());
    for f in 0..hand.fingers().len() {
        let sign = if f == thumb { 1.0 } else { -1.0 };
        for j in hand.joint_range(f) {
            if closure[j].abs() > 1e-12 {
                raw[j] = sign;
            }
        }
    }
    let (cpinv, _) = linalg::pinv(hand.coupling());
    let reachable = hand.coupling() * (cpinv * raw);
    let d = &reachable - &closure * closure.dot(&reachable);
    d.normalize()
}

/// Closure amplitude along the hand's closure direction that touches each object.
pub fn closure_amplitudes(
    hand: &HandModel,
    objects: &[(String, ObjectPrimitive)],
    n_contacts: usize,
) -> Result<Vec<f64>> {
    objects
        .iter()
        .map(|(tag, obj)| {
            plan_contacts(hand, obj, n_contacts, 0.5)
                .map(|g| g.closure)
                .map_err(|e| match e {
                    Error::Unreachable(m) | Error::Adaptation(m) => {
                        Error::Unreachable(format!("training object {tag}: {m}"))
                    }
                    other => other,
                })
        })
        .collect()
}

/// Synthetic open → grasp → manipulate → release demonstrations, one per object.
pub fn generate_demos(
    hand: &HandModel,
    objects: &[(String, ObjectPrimitive)],
    cfg: &DemoConfig,
    seed: u64,
) -> Result<DemonstrationSet> {
    let closure = hand.closure_direction();
    let manip = manipulation_direction(hand);
    let alphas = closure_amplitudes(hand, objects, cfg.n_contacts)?;
    let beta = cfg.manipulation_amplitude * alphas.iter().sum::<f64>() / alphas.len() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.samples;
    let mut demos = Vec::with_capacity(objects.len());
    for ((tag, _), &alpha) in objects.iter().zip(&alphas) {
        let samples = (0..n)
            .map(|k| {
                let u = k as f64 / (n - 1) as f64;
                let mut q = clean_posture(u, alpha, beta, &closure, &manip);
                if cfg.noise_std > 0.0 {
                    for v in q.iter_mut() {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += cfg.noise_std * z;
                    }
                }
                JointConfig::at(q, u)
            })
            .collect();
        demos.push(Demonstration {
            object_tag: tag.clone(),
            samples,
            phases: PHASES
                .iter()
                .map(|(n, s)| PhaseMarker {
                    name: (*n).into(),
                    start: *s,
                })
                .collect(),
        });
    }
    DemonstrationSet::new(demos)
}

/// Noise-free posture at normalized time `u`.
pub fn clean_posture(
    u: f64,
    alpha: f64,
    beta: f64,
    closure: &DVector<f64>,
    manip: &DVector<f64>,
) -> DVector<f64> {
    let (grasp, manipulate, release) = (PHASES[1].1, PHASES[2].1, PHASES[3].1);
    if u < grasp {
        DVector::zeros(closure.len())
    } else if u < manipulate {
        closure * (alpha * min_jerk((u - grasp) / (manipulate - grasp)))
    } else if u < release {
        let w = std::f64::consts::TAU * (u - manipulate) / (release - manipulate);
        closure * alpha + manip * (beta * w.sin())
    } else {
        closure * (alpha * (1.0 - min_jerk((u - release) / (1.0 - release))))
    }
}

/// CSV with header `t,q1..qN`; each demonstration starts with `# demo k object=tag` and its
/// phase markers `# phase name start`.
pub fn demos_to_csv(set: &DemonstrationSet, duration: f64) -> String {
    let mut out = String::from("t");
    for i in 1..=set.n_q() {
        let _ = write!(out, ",q{i}");
    }
    out.push('\n');
    for (k, d) in set.demos().iter().enumerate() {
        let _ = writeln!(out, "# demo {k} object={}", d.object_tag);
        for p in &d.phases {
            let _ = writeln!(out, "# phase {} {}", p.name, p.start);
        }
        for s in &d.samples {
            let _ = write!(out, "{}", s.timestamp.unwrap_or(0.0) * duration);
            for v in s.theta.iter() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

/// Parse demonstration CSV; timestamps are normalized to [0, 1] per demonstration.
pub fn demos_from_csv(text: &str) -> Result<DemonstrationSet> {
    struct Raw {
        tag: String,
        phases: Vec<PhaseMarker>,
        rows: Vec<(f64, DVector<f64>)>,
    }
    let mut n_q = None;
    let mut demos: Vec<Raw> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let mut words = comment.split_whitespace();
            match words.next() {
                Some("demo") => {
                    let tag = words
                        .find_map(|w| w.strip_prefix("object="))
                        .unwrap_or("unknown")
                        .to_string();
                    demos.push(Raw {
                        tag,
                        phases: Vec::new(),
                        rows: Vec::new(),
                    });
                }
                Some("phase") => {
                    let (Some(name), Some(start)) = (words.next(), words.next()) else {
                        return Err(Error::Parse {
                            line: line_no,
                            reason: "phase marker needs a name and a start".into(),
                        });
                    };
                    let start =
                        start
                            .parse()
                            .map_err(|e: std::num::ParseFloatError| Error::Parse {
                                line: line_no,
                                reason: e.to_string(),
                            })?;
                    let Some(d) = demos.last_mut() else {
                        return Err(Error::Parse {
                            line: line_no,
                            reason: "phase marker before any demo".into(),
                        });
                    };
                    d.phases.push(PhaseMarker {
                        name: name.into(),
                        start,
                    });
                }
                _ => {}
            }
            continue;
        }
        let Some(n) = n_q else {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let valid = cols.len() >= 2
                && cols[0] == "t"
                && cols[1..]
                    .iter()
                    .enumerate()
                    .all(|(i, c)| *c == format!("q{}", i + 1));
            if !valid {
                return Err(Error::Parse {
                    line: line_no,
                    reason: "expected header t,q1..qN".into(),
                });
            }
            n_q = Some(cols.len() - 1);
            continue;
        };
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse {
                line: line_no,
                reason: e.to_string(),
            })?;
        if vals.len() != n + 1 {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {} fields, got {}", n + 1, vals.len()),
            });
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                reason: "non-finite value".into(),
            });
        }
        if demos.is_empty() {
            demos.push(Raw {
                tag: "demo0".into(),
                phases: Vec::new(),
                rows: Vec::new(),
            });
        }
        let d = demos.last_mut().expect("just ensured");
        if d.rows.last().is_some_and(|(t, _)| vals[0] <= *t) {
            return Err(Error::Parse {
                line: line_no,
                reason: "timestamps must be strictly increasing".into(),
            });
        }
        d.rows
            .push((vals[0], DVector::from_column_slice(&vals[1..])));
    }
    let mut out = Vec::with_capacity(demos.len());
    for (k, d) in demos.into_iter().enumerate() {
        if d.rows.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "demonstration {k} has fewer than 2 samples"
            )));
        }
        let t0 = d.rows[0].0;
        let span = d.rows[d.rows.len() - 1].0 - t0;
        let samples = d
            .rows
            .into_iter()
            .map(|(t, q)| JointConfig::at(q, ((t - t0) / span).clamp(0.0, 1.0)))
            .collect();
        out.push(Demonstration {
            object_tag: d.tag,
            samples,
            phases: d.phases,
        });
    }
    DemonstrationSet::new(out)
}
