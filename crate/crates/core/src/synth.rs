//! Procedural depth scenes: analytic primitives ray-cast from a pinhole
//! depth camera, with a capsule-skeleton actor whose pose encodes the class.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};
use core::ops::{Add, Mul, Neg, Sub};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DepthFrame, DepthRange, Provenance};
use crate::rng::{derive_seed, seeded, StageRng};

/// Hand-hygiene positives in the reference corpus: 11,994 of 113,379 frames.
pub const REFERENCE_POSITIVE: (u64, u64) = (11_994, 113_379);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    HandHygiene,
    Icu,
}

impl Task {
    pub fn num_classes(self) -> usize {
        self.class_names().len()
    }

    pub fn class_names(self) -> &'static [&'static str] {
        match self {
            Task::HandHygiene => &["no dispenser use", "dispenser use"],
            Task::Icu => &[
                "background",
                "get in bed",
                "get out of bed",
                "get in chair",
                "get out of chair",
            ],
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Task::HandHygiene => "hand_hygiene",
            Task::Icu => "icu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    /// Wall-mounted at 1.5 m, pitched 12 degrees down.
    Side,
    /// Ceiling-mounted, looking straight down.
    TopDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewMix {
    Side,
    TopDown,
    /// Each instance picks a view with equal probability.
    Mixed,
}

// ---------------------------------------------------------------------------
// geometry

#[derive(Debug, Clone, Copy, PartialEq)]
struct V3(f64, f64, f64);

impl V3 {
    fn dot(self, o: V3) -> f64 {
        self.0 * o.0 + self.1 * o.1 + self.2 * o.2
    }

    fn norm(self) -> f64 {
        libm::sqrt(self.dot(self))
    }

    fn unit(self) -> V3 {
        self * (1.0 / self.norm())
    }
}

impl Add for V3 {
    type Output = V3;
    fn add(self, o: V3) -> V3 {
        V3(self.0 + o.0, self.1 + o.1, self.2 + o.2)
    }
}

impl Sub for V3 {
    type Output = V3;
    fn sub(self, o: V3) -> V3 {
        V3(self.0 - o.0, self.1 - o.1, self.2 - o.2)
    }
}

impl Mul<f64> for V3 {
    type Output = V3;
    fn mul(self, s: f64) -> V3 {
        V3(self.0 * s, self.1 * s, self.2 * s)
    }
}

impl Neg for V3 {
    type Output = V3;
    fn neg(self) -> V3 {
        V3(-self.0, -self.1, -self.2)
    }
}

const UP: V3 = V3(0.0, 1.0, 0.0);
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
enum Prim {
    /// `n . p = c`
    Plane { n: V3, c: f64 },
    Aabb { lo: V3, hi: V3 },
    Sphere { c: V3, r: f64 },
    Capsule { a: V3, b: V3, r: f64 },
}

impl Prim {
    /// Nearest positive hit distance along a unit-direction ray.
    fn hit(&self, o: V3, d: V3) -> Option<f64> {
        match *self {
            Prim::Plane { n, c } => {
                let den = n.dot(d);
                if den.abs() < EPS {
                    return None;
                }
                let t = (c - n.dot(o)) / den;
                (t > EPS).then_some(t)
            }
            Prim::Aabb { lo, hi } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                for (oi, di, l, h) in [(o.0, d.0, lo.0, hi.0), (o.1, d.1, lo.1, hi.1), (o.2, d.2, lo.2, hi.2)] {
                    if di.abs() < EPS {
                        if oi < l || oi > h {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((l - oi) / di, (h - oi) / di);
                    let (a, b) = if a < b { (a, b) } else { (b, a) };
                    t0 = t0.max(a);
                    t1 = t1.min(b);
                }
                (t0 <= t1 && t0 > EPS).then_some(t0)
            }
            Prim::Sphere { c, r } => sphere_hit(o, d, c, r),
            Prim::Capsule { a, b, r } => {
                let ba = b - a;
                let oa = o - a;
                let baba = ba.dot(ba);
                let bard = ba.dot(d);
                let baoa = ba.dot(oa);
                let rdoa = d.dot(oa);
                let oaoa = oa.dot(oa);
                let qa = baba - bard * bard;
                if qa > EPS {
                    let qb = baba * rdoa - baoa * bard;
                    let qc = baba * oaoa - baoa * baoa - r * r * baba;
                    let h = qb * qb - qa * qc;
                    if h < 0.0 {
                        return None;
                    }
                    let t = (-qb - libm::sqrt(h)) / qa;
                    let y = baoa + t * bard;
                    if y > 0.0 && y < baba {
                        return (t > EPS).then_some(t);
                    }
                }
                let ta = sphere_hit(o, d, a, r);
                let tb = sphere_hit(o, d, b, r);
                match (ta, tb) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }
}

fn sphere_hit(o: V3, d: V3, c: V3, r: f64) -> Option<f64> {
    let oc = o - c;
    let b = oc.dot(d);
    let h = b * b - (oc.dot(oc) - r * r);
    if h < 0.0 {
        return None;
    }
    let t = -b - libm::sqrt(h);
    (t > EPS).then_some(t)
}

fn aabb(x0: f64, x1: f64, y0: f64, y1: f64, z0: f64, z1: f64) -> Prim {
    Prim::Aabb {
        lo: V3(x0, y0, z0),
        hi: V3(x1, y1, z1),
    }
}

struct Camera {
    origin: V3,
    right: V3,
    up: V3,
    forward: V3,
    focal: f64,
    side: usize,
}

/// Horizontal (and vertical) field of view.
pub const FOV_DEG: f64 = 70.0;

impl Camera {
    fn new(view: View, side: usize) -> Self {
        let focal = (side as f64 / 2.0) / libm::tan((FOV_DEG / 2.0).to_radians());
        match view {
            View::Side => {
                let p = 12f64.to_radians();
                Camera {
                    origin: V3(0.0, 1.5, 0.0),
                    right: V3(1.0, 0.0, 0.0),
                    up: V3(0.0, libm::cos(p), libm::sin(p)),
                    forward: V3(0.0, -libm::sin(p), libm::cos(p)),
                    focal,
                    side,
                }
            }
            View::TopDown => Camera {
                origin: V3(0.0, 3.25, 2.2),
                right: V3(1.0, 0.0, 0.0),
                up: V3(0.0, 0.0, 1.0),
                forward: V3(0.0, -1.0, 0.0),
                focal,
                side,
            },
        }
    }

    fn ray(&self, px: usize, py: usize) -> V3 {
        let half = self.side as f64 / 2.0;
        let u = (px as f64 + 0.5 - half) / self.focal;
        let v = -(py as f64 + 0.5 - half) / self.focal;
        (self.right * u + self.up * v + self.forward).unit()
    }
}

// room extents, meters
const ROOM_HALF_WIDTH: f64 = 2.4;
const BACK_WALL_Z: f64 = 3.4;
const CEILING_Y: f64 = 3.3;

fn room(task: Task) -> Vec<Prim> {
    let mut prims = vec![
        Prim::Plane { n: UP, c: 0.0 },
        Prim::Plane { n: UP, c: CEILING_Y },
        Prim::Plane {
            n: V3(0.0, 0.0, 1.0),
            c: BACK_WALL_Z,
        },
        Prim::Plane {
            n: V3(1.0, 0.0, 0.0),
            c: ROOM_HALF_WIDTH,
        },
        Prim::Plane {
            n: V3(1.0, 0.0, 0.0),
            c: -ROOM_HALF_WIDTH,
        },
    ];
    match task {
        Task::HandHygiene => {
            // partition wall with a dispenser on its inner face
            prims.push(aabb(1.0, 1.15, 0.0, 2.0, 1.8, BACK_WALL_Z));
            prims.push(aabb(0.92, 1.0, 1.0, 1.25, 2.3, 2.45));
        }
        Task::Icu => {
            // bed along the back wall, chair to its right
            prims.push(aabb(-1.5, 0.3, 0.0, 0.6, 2.5, BACK_WALL_Z));
            prims.push(aabb(-1.5, -1.4, 0.6, 1.1, 2.5, BACK_WALL_Z));
            prims.push(aabb(0.8, 1.3, 0.0, 0.45, 2.2, 2.7));
            prims.push(aabb(0.8, 1.3, 0.45, 1.05, 2.62, 2.7));
        }
    }
    prims
}

// ---------------------------------------------------------------------------
// actor

/// Joint angles in radians in the actor's sagittal plane. Limb angles are
/// measured from straight down toward the facing direction; `torso` from
/// straight up toward the facing direction. Index 0 is the left side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// Pelvis height above the floor, meters.
    pub pelvis: f64,
    pub torso: f64,
    pub hips: [f64; 2],
    pub knees: [f64; 2],
    pub shoulders: [f64; 2],
    pub elbows: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    /// Floor position under the pelvis.
    pub x: f64,
    pub z: f64,
    /// Facing direction: 0 looks along +z (away from a side camera).
    pub yaw: f64,
    /// Standing height, meters.
    pub height: f64,
    pub pose: Pose,
}

const STANDARD_HEIGHT: f64 = 1.75;
const THIGH: f64 = 0.45;
const SHIN: f64 = 0.45;
const TORSO: f64 = 0.55;
const UPPER_ARM: f64 = 0.30;
const FOREARM: f64 = 0.27;

impl Actor {
    fn scale(&self) -> f64 {
        self.height / STANDARD_HEIGHT
    }

    fn frame(&self) -> (V3, V3) {
        let fwd = V3(libm::sin(self.yaw), 0.0, libm::cos(self.yaw));
        let lat = V3(libm::cos(self.yaw), 0.0, -libm::sin(self.yaw));
        (fwd, lat)
    }

    fn primitives(&self) -> Vec<Prim> {
        let s = self.scale();
        let p = &self.pose;
        let (fwd, lat) = self.frame();
        let limb = |angle: f64| UP * -libm::cos(angle) + fwd * libm::sin(angle);
        let trunk = UP * libm::cos(p.torso) + fwd * libm::sin(p.torso);
        let pelvis = V3(self.x, p.pelvis, self.z);
        let neck = pelvis + trunk * (TORSO * s);
        let mut out = vec![
            Prim::Capsule {
                a: pelvis,
                b: neck - trunk * (0.05 * s),
                r: 0.15 * s,
            },
            Prim::Sphere {
                c: neck + trunk * (0.16 * s),
                r: 0.11 * s,
            },
        ];
        for (i, side) in [-1.0, 1.0].into_iter().enumerate() {
            let hip = pelvis + lat * (side * 0.1 * s);
            let knee = hip + limb(p.hips[i]) * (THIGH * s);
            let ankle = knee + limb(p.hips[i] - p.knees[i]) * (SHIN * s);
            out.push(Prim::Capsule {
                a: hip,
                b: knee,
                r: 0.075 * s,
            });
            out.push(Prim::Capsule {
                a: knee,
                b: ankle,
                r: 0.055 * s,
            });
            let shoulder = neck - trunk * (0.05 * s) + lat * (side * 0.19 * s);
            let elbow = shoulder + limb(p.shoulders[i]) * (UPPER_ARM * s);
            let wrist = elbow + limb(p.shoulders[i] + p.elbows[i]) * (FOREARM * s);
            out.push(Prim::Capsule {
                a: shoulder,
                b: elbow,
                r: 0.045 * s,
            });
            out.push(Prim::Capsule {
                a: elbow,
                b: wrist,
                r: 0.04 * s,
            });
        }
        out
    }
}

/// Knee flexion that puts the ankle `lift` meters above the floor for a
/// thigh at `hip` radians, bending the shin backward.
fn knee_for_floor(pelvis: f64, hip: f64, scale: f64, lift: f64) -> f64 {
    let ankle_drop = pelvis - THIGH * scale * libm::cos(hip) - (0.05 + lift) * scale;
    let c = (ankle_drop / (SHIN * scale)).clamp(-1.0, 1.0);
    (hip + libm::acos(c)).max(0.0)
}

// ---------------------------------------------------------------------------
// scenes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub task: Task,
    pub label: Option<usize>,
    pub actor: Option<Actor>,
    pub view: View,
    pub side: usize,
    pub noise_sigma_mm: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl SceneSpec {
    /// Same scene with the actor removed.
    pub fn background(&self) -> SceneSpec {
        SceneSpec {
            actor: None,
            ..self.clone()
        }
    }
}

/// Renders a raw millimeter frame. Depth is the distance along the camera
/// axis; misses, dropouts and anything outside the sensor range read 0.
pub fn gen_scene(spec: &SceneSpec) -> Result<DepthFrame> {
    if spec.side == 0 {
        return Err(Error::ZeroDimension);
    }
    if let Some(l) = spec.label {
        if l >= spec.task.num_classes() {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: spec.task.num_classes(),
            });
        }
    }
    if !(spec.noise_sigma_mm >= 0.0) || !(0.0..=1.0).contains(&spec.dropout) {
        return Err(Error::Config(format!(
            "noise_sigma_mm {} / dropout {} out of range",
            spec.noise_sigma_mm, spec.dropout
        )));
    }
    let cam = Camera::new(spec.view, spec.side);
    let scene = room(spec.task);
    let actor = spec.actor.map(|a| a.primitives()).unwrap_or_default();
    let bound = bounding_sphere(&actor);
    let range = DepthRange::SENSOR;
    let (lo, hi) = (range.min_raw(), range.max_raw());
    let noise = Normal::new(0.0, spec.noise_sigma_mm.max(0.0)).expect("finite sigma");
    let mut rng = seeded(derive_seed(spec.seed, "sensor-noise"));
    let mut data = Vec::with_capacity(spec.side * spec.side);
    for py in 0..spec.side {
        for px in 0..spec.side {
            let d = cam.ray(px, py);
            let mut t = f64::INFINITY;
            for p in &scene {
                if let Some(h) = p.hit(cam.origin, d) {
                    t = t.min(h);
                }
            }
            if let Some((c, r)) = bound {
                if sphere_hit(cam.origin, d, c, r).is_some() || (cam.origin - c).norm() < r {
                    for p in &actor {
                        if let Some(h) = p.hit(cam.origin, d) {
                            t = t.min(h);
                        }
                    }
                }
            }
            // the noise stream advances identically for every pixel so an
            // actor never shifts the noise of the background
            let n = noise.sample(&mut rng);
            let drop = rng.random::<f64>() < spec.dropout;
            let mm = if t.is_finite() && !drop {
                let z = t * d.dot(cam.forward);
                libm::round(z * 1000.0 + n)
            } else {
                0.0
            };
            data.push(if mm >= lo as f64 && mm <= hi as f64 { mm as u16 } else { 0 });
        }
    }
    DepthFrame::raw(spec.side, spec.side, data, range, Provenance::Synthetic)
}

fn bounding_sphere(prims: &[Prim]) -> Option<(V3, f64)> {
    if prims.is_empty() {
        return None;
    }
    let mut pts = Vec::new();
    for p in prims {
        match *p {
            Prim::Sphere { c, r } => pts.push((c, r)),
            Prim::Capsule { a, b, r } => {
                pts.push((a, r));
                pts.push((b, r));
            }
            _ => return None,
        }
    }
    let n = pts.len() as f64;
    let c = pts.iter().fold(V3(0.0, 0.0, 0.0), |acc, (p, _)| acc + *p) * (1.0 / n);
    let r = pts.iter().map(|(p, r)| (*p - c).norm() + r).fold(0.0, f64::max);
    Some((c, r + 1e-6))
}

/// Per-instance actor identity; frames of one instance vary around it.
#[derive(Debug, Clone, Copy, PartialEq)]
struct InstanceBase {
    present: bool,
    x: f64,
    z: f64,
    yaw: f64,
    height: f64,
    /// Task-specific variant switch (second hand raised, walking direction,
    /// standing vs. empty background).
    variant: bool,
    amp: f64,
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn sample_base<R: Rng>(task: Task, label: usize, rng: &mut R) -> InstanceBase {
    let height = uniform(rng, 1.55, 1.9);
    let variant = rng.random_bool(0.5);
    let amp = uniform(rng, 0.0, 1.0);
    let mut b = InstanceBase {
        present: true,
        x: 0.0,
        z: 0.0,
        yaw: 0.0,
        height,
        variant,
        amp,
    };
    match (task, label) {
        (Task::HandHygiene, 1) => {
            b.x = uniform(rng, 0.45, 0.62);
            b.z = uniform(rng, 2.25, 2.5);
            b.yaw = FRAC_PI_2 + uniform(rng, -0.15, 0.15);
        }
        (Task::HandHygiene, _) => {
            // absent, crossing the room, or walking past the dispenser
            let r = rng.random::<f64>();
            b.present = r >= 0.35;
            if r < 0.85 {
                b.x = uniform(rng, -1.3, -0.1);
                b.z = uniform(rng, 1.8, 3.0);
                b.yaw = if variant { FRAC_PI_2 } else { -FRAC_PI_2 } + uniform(rng, -0.3, 0.3);
            } else {
                b.x = uniform(rng, 0.15, 0.4);
                b.z = uniform(rng, 2.0, 2.8);
                b.yaw = if variant { 0.0 } else { PI } + uniform(rng, -0.2, 0.2);
            }
        }
        (Task::Icu, 0) => {
            b.present = variant;
            b.x = uniform(rng, -0.6, 0.5);
            b.z = uniform(rng, 1.5, 2.1);
            b.yaw = uniform(rng, -PI, PI);
        }
        (Task::Icu, 1) => {
            b.x = uniform(rng, -0.7, -0.3);
            b.z = uniform(rng, 2.8, 3.0);
            b.yaw = FRAC_PI_2 + uniform(rng, -0.15, 0.15);
        }
        (Task::Icu, 2) => {
            b.x = uniform(rng, -1.0, -0.1);
            b.z = uniform(rng, 2.55, 2.7);
            b.yaw = PI + uniform(rng, -0.3, 0.3);
        }
        (Task::Icu, 3) => {
            b.x = uniform(rng, 0.95, 1.15);
            b.z = uniform(rng, 2.3, 2.45);
            b.yaw = PI + uniform(rng, -0.25, 0.25);
        }
        (Task::Icu, _) => {
            b.x = uniform(rng, 0.95, 1.15);
            b.z = uniform(rng, 2.4, 2.5);
            b.yaw = PI + uniform(rng, -0.25, 0.25);
        }
    }
    b
}

/// Actor for frame phase `t` in `[0, 1)` of an instance.
fn frame_actor<R: Rng>(task: Task, label: usize, base: &InstanceBase, t: f64, rng: &mut R) -> Option<Actor> {
    if !base.present {
        return None;
    }
    let s = base.height / STANDARD_HEIGHT;
    let jit = |rng: &mut R, a: f64| uniform(rng, -a, a);
    let standing = 0.95 * s;
    let mut a = Actor {
        x: base.x,
        z: base.z,
        yaw: base.yaw + jit(rng, 0.05),
        height: base.height,
        pose: Pose {
            pelvis: standing,
            torso: jit(rng, 0.05),
            hips: [0.0; 2],
            knees: [0.0; 2],
            shoulders: [0.1, 0.1],
            elbows: [0.1, 0.1],
        },
    };
    let deg = |d: f64| d.to_radians();
    match (task, label) {
        (Task::HandHygiene, 1) => {
            let reach = deg(60.0 + 25.0 * base.amp) + jit(rng, deg(8.0));
            a.pose.shoulders = [reach, if base.variant { reach + jit(rng, deg(6.0)) } else { 0.15 }];
            a.pose.elbows = [deg(25.0) + jit(rng, deg(10.0)), deg(20.0)];
            a.pose.torso = deg(8.0) + jit(rng, deg(4.0));
            a.pose.hips = [deg(3.0), deg(3.0)];
        }
        (Task::HandHygiene, _) | (Task::Icu, 0) => {
            let (fwd, _) = a.frame();
            let stride = 0.8 * (t - 0.5);
            a.x += fwd.0 * stride;
            a.z += fwd.2 * stride;
            let phase = 2.0 * PI * (2.0 * t + base.amp);
            let swing = deg(15.0 + 12.0 * base.amp) * libm::sin(phase);
            a.pose.hips = [swing, -swing];
            a.pose.shoulders = [-0.8 * swing, 0.8 * swing];
            a.pose.elbows = [deg(15.0), deg(15.0)];
            for i in 0..2 {
                a.pose.knees[i] = knee_for_floor(a.pose.pelvis, a.pose.hips[i], s, 0.0);
            }
        }
        (Task::Icu, 1) => {
            // lying back onto the bed, legs swinging up
            a.pose.pelvis = 0.6 + 0.1 * s;
            a.pose.torso = -deg(35.0 + 50.0 * t) + jit(rng, deg(5.0));
            let hip = deg(60.0 + 30.0 * t) + jit(rng, deg(5.0));
            a.pose.hips = [hip, hip];
            a.pose.knees = [deg(60.0 * (1.0 - t)), deg(60.0 * (1.0 - t))];
            a.pose.shoulders = [deg(20.0), deg(20.0)];
        }
        (Task::Icu, 2) => {
            // sitting on the bed edge, feet down, leaning out
            a.pose.pelvis = 0.6 + 0.08 * s;
            a.pose.torso = deg(5.0 + 30.0 * t) + jit(rng, deg(5.0));
            let hip = deg(85.0) + jit(rng, deg(5.0));
            a.pose.hips = [hip, hip];
            a.pose.knees = [deg(95.0), deg(95.0)];
            a.pose.shoulders = [-deg(15.0), -deg(15.0)];
            a.pose.elbows = [deg(10.0), deg(10.0)];
        }
        (Task::Icu, 3) => {
            // lowering into the chair
            a.pose.pelvis = (0.85 - 0.3 * t) * s;
            a.pose.torso = deg(20.0 + 15.0 * t) + jit(rng, deg(4.0));
            let hip = deg(40.0 + 40.0 * t) + jit(rng, deg(4.0));
            a.pose.hips = [hip, hip];
            for i in 0..2 {
                a.pose.knees[i] = knee_for_floor(a.pose.pelvis, hip, s, 0.0);
            }
            a.pose.shoulders = [-deg(25.0), -deg(25.0)];
        }
        (Task::Icu, _) => {
            // seated, leaning forward to push up
            a.pose.pelvis = 0.5 + 0.02 * s;
            a.pose.torso = deg(35.0 + 20.0 * t) + jit(rng, deg(5.0));
            a.pose.hips = [deg(90.0), deg(90.0)];
            a.pose.knees = [deg(100.0), deg(100.0)];
            let reach = deg(40.0 + 30.0 * base.amp);
            a.pose.shoulders = [reach, reach];
        }
    }
    Some(a)
}

// ---------------------------------------------------------------------------
// datasets

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mixture {
    Uniform,
    /// Binary positive fraction of the reference hand-hygiene corpus.
    Reference,
    Weights(Vec<f64>),
}

impl Mixture {
    pub fn weights(&self, classes: usize) -> Result<Vec<f64>> {
        let w = match self {
            Mixture::Uniform => vec![1.0 / classes as f64; classes],
            Mixture::Reference => {
                if classes != 2 {
                    return Err(Error::Config(format!(
                        "mixture: the reference ratio is binary, task has {classes} classes"
                    )));
                }
                let p = REFERENCE_POSITIVE.0 as f64 / REFERENCE_POSITIVE.1 as f64;
                vec![1.0 - p, p]
            }
            Mixture::Weights(w) => w.clone(),
        };
        if w.len() != classes {
            return Err(Error::Config(format!(
                "mixture: {} weights for {classes} classes",
                w.len()
            )));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !(*v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("mixture: weights must be >= 0 and sum to 1, got {sum}")));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenMode {
    Labeled,
    /// Unlabeled frames drawn from every task and class, for
    /// super-resolution training.
    SrCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub task: Task,
    pub instances: usize,
    #[serde(default = "one")]
    pub frames_per_instance: usize,
    #[serde(default = "uniform_mixture")]
    pub mixture: Mixture,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_view")]
    pub view: ViewMix,
    #[serde(default = "default_noise")]
    pub noise_sigma_mm: f64,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default = "default_side")]
    pub side: usize,
    #[serde(default = "default_mode")]
    pub mode: GenMode,
}

fn one() -> usize {
    1
}
fn uniform_mixture() -> Mixture {
    Mixture::Uniform
}
fn default_train_fraction() -> f64 {
    0.9
}
fn default_view() -> ViewMix {
    ViewMix::Side
}
fn default_noise() -> f64 {
    4.0
}
fn default_dropout() -> f64 {
    0.002
}
fn default_side() -> usize {
    224
}
fn default_mode() -> GenMode {
    GenMode::Labeled
}

impl GenSpec {
    pub fn new(task: Task, instances: usize, seed: u64) -> Self {
        GenSpec {
            task,
            instances,
            frames_per_instance: 1,
            mixture: Mixture::Uniform,
            train_fraction: default_train_fraction(),
            seed,
            view: ViewMix::Side,
            noise_sigma_mm: default_noise(),
            dropout: default_dropout(),
            side: default_side(),
            mode: GenMode::Labeled,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 {
            return Err(Error::Config("instances: must be positive".into()));
        }
        if self.frames_per_instance == 0 {
            return Err(Error::Config("frames_per_instance: must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction: must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if !(self.noise_sigma_mm >= 0.0 && self.noise_sigma_mm.is_finite()) {
            return Err(Error::Config(format!("noise_sigma_mm: invalid {}", self.noise_sigma_mm)));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout: must lie in [0, 1], got {}", self.dropout)));
        }
        if self.side == 0 {
            return Err(Error::Config("side: must be positive".into()));
        }
        self.mixture.weights(self.task.num_classes())?;
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` items to `weights` (summing to 1).
/// Ties in the fractional part go to the lower index.
pub fn apportion(n: usize, weights: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - libm::floor(quotas[a]);
        let fb = quotas[b] - libm::floor(quotas[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Per-class train counts for a stratified split whose total is
/// `round(total * fraction)`.
pub fn stratified_train_counts(class_counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    let target = libm::round(total as f64 * fraction) as usize;
    let quotas: Vec<f64> = class_counts.iter().map(|&c| c as f64 * fraction).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| libm::floor(*q) as usize).collect();
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - libm::floor(quotas[a]);
        let fb = quotas[b] - libm::floor(quotas[b]);
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(counts.iter().sum());
    for &i in order.iter().cycle().take(2 * order.len()) {
        if missing == 0 {
            break;
        }
        if counts[i] < class_counts[i] {
            counts[i] += 1;
            missing -= 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedFrame {
    pub instance: usize,
    pub frame: usize,
    pub label: Option<usize>,
    pub split: Split,
    pub scene: SceneSpec,
}

impl PlannedFrame {
    /// Stable file stem.
    pub fn stem(&self) -> String {
        format!("i{:05}_f{:03}", self.instance, self.frame)
    }
}

/// Lays out every frame of a dataset: class per instance, stratified
/// instance-level split, and the scene for each frame. Pure in `spec`.
pub fn plan_dataset(spec: &GenSpec) -> Result<Vec<PlannedFrame>> {
    spec.validate()?;
    let n = spec.instances;
    let mut label_rng = seeded(derive_seed(spec.seed, "labels"));
    let (tasks, labels): (Vec<Task>, Vec<usize>) = match spec.mode {
        GenMode::Labeled => {
            let k = spec.task.num_classes();
            let counts = apportion(n, &spec.mixture.weights(k)?);
            let mut labels: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &m)| core::iter::repeat_n(c, m))
                .collect();
            labels.shuffle(&mut label_rng);
            (vec![spec.task; n], labels)
        }
        GenMode::SrCorpus => (0..n)
            .map(|_| {
                let task = if label_rng.random_bool(0.5) {
                    Task::HandHygiene
                } else {
                    Task::Icu
                };
                (task, label_rng.random_range(0..task.num_classes()))
            })
            .unzip(),
    };

    // stratify by (task, class) so both modes share one code path
    let mut strata: Vec<((Task, usize), Vec<usize>)> = Vec::new();
    for i in 0..n {
        let key = (tasks[i], labels[i]);
        match strata.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(i),
            None => strata.push((key, vec![i])),
        }
    }
    strata.sort_by_key(|((t, c), _)| (*t as u8, *c));
    let sizes: Vec<usize> = strata.iter().map(|(_, v)| v.len()).collect();
    let train_counts = stratified_train_counts(&sizes, spec.train_fraction);
    let mut split = vec![Split::Train; n];
    let mut split_rng = seeded(derive_seed(spec.seed, "split"));
    for ((_, members), &n_train) in strata.iter_mut().zip(&train_counts) {
        members.shuffle(&mut split_rng);
        for &i in &members[n_train..] {
            split[i] = Split::Test;
        }
    }

    let mut out = Vec::with_capacity(n * spec.frames_per_instance);
    for i in 0..n {
        let mut rng: StageRng = seeded(derive_seed(spec.seed, &format!("instance/{i}")));
        let view = match spec.view {
            ViewMix::Side => View::Side,
            ViewMix::TopDown => View::TopDown,
            ViewMix::Mixed => {
                if rng.random_bool(0.5) {
                    View::TopDown
                } else {
                    View::Side
                }
            }
        };
        let base = sample_base(tasks[i], labels[i], &mut rng);
        for f in 0..spec.frames_per_instance {
            let t = (f as f64 + uniform(&mut rng, 0.0, 1.0)) / spec.frames_per_instance as f64;
            let actor = frame_actor(tasks[i], labels[i], &base, t, &mut rng);
            out.push(PlannedFrame {
                instance: i,
                frame: f,
                label: match spec.mode {
                    GenMode::Labeled => Some(labels[i]),
                    GenMode::SrCorpus => None,
                },
                split: split[i],
                scene: SceneSpec {
                    task: tasks[i],
                    label: Some(labels[i]),
                    actor,
                    view,
                    side: spec.side,
                    noise_sigma_mm: spec.noise_sigma_mm,
                    dropout: spec.dropout,
                    seed: derive_seed(spec.seed, &format!("frame/{i}/{f}")),
                },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(task: Task, label: usize, seed: u64) -> SceneSpec {
        let mut rng = seeded(seed);
        let base = sample_base(task, label, &mut rng);
        SceneSpec {
            task,
            label: Some(label),
            actor: frame_actor(task, label, &base, 0.5, &mut rng),
            view: View::Side,
            side: 64,
            noise_sigma_mm: 4.0,
            dropout: 0.002,
            seed,
        }
    }

    #[test]
    fn absent_actor_matches_background() {
        let s = spec(Task::HandHygiene, 1, 3);
        assert!(s.actor.is_some());
        let with = gen_scene(&s).unwrap();
        let bg = gen_scene(&s.background()).unwrap();
        assert_ne!(with, bg);
        let mut empty = s.clone();
        empty.actor = None;
        assert_eq!(gen_scene(&empty).unwrap(), bg);
    }

    #[test]
    fn deterministic_and_in_envelope() {
        for task in [Task::HandHygiene, Task::Icu] {
            for label in 0..task.num_classes() {
                for view in [View::Side, View::TopDown] {
                    let mut s = spec(task, label, 10 + label as u64);
                    s.view = view;
                    let a = gen_scene(&s).unwrap();
                    assert_eq!(a, gen_scene(&s).unwrap());
                    let raw = a.as_raw().unwrap();
                    assert!(raw.iter().all(|&v| v == 0 || (800..=4000).contains(&v)));
                    let zeros = raw.iter().filter(|&&v| v == 0).count();
                    assert!(zeros < raw.len() / 10, "{task:?}/{label}/{view:?}: {zeros} empty pixels");
                }
            }
        }
    }

    #[test]
    fn noiseless_depth_is_exact() {
        // a ray through the image center of the top-down view hits the floor
        let s = SceneSpec {
            task: Task::HandHygiene,
            label: None,
            actor: None,
            view: View::TopDown,
            side: 2,
            noise_sigma_mm: 0.0,
            dropout: 0.0,
            seed: 0,
        };
        let f = gen_scene(&s).unwrap();
        let cam = Camera::new(View::TopDown, 2);
        let d = cam.ray(0, 0);
        let z = 3.25 / -d.1 * d.dot(cam.forward);
        assert_eq!(f.as_raw().unwrap()[0], libm::round(z * 1000.0) as u16);
    }

    #[test]
    fn capsule_hits() {
        let c = Prim::Capsule {
            a: V3(0.0, -1.0, 5.0),
            b: V3(0.0, 1.0, 5.0),
            r: 0.5,
        };
        let o = V3(0.0, 0.0, 0.0);
        assert!((c.hit(o, V3(0.0, 0.0, 1.0)).unwrap() - 4.5).abs() < 1e-12);
        // end cap
        let d = V3(0.0, 1.2, 5.0).unit();
        let t = c.hit(o, d).unwrap();
        let p = d * t;
        assert!(((p - V3(0.0, 1.0, 5.0)).norm() - 0.5).abs() < 1e-9);
        assert!(c.hit(o, V3(1.0, 0.0, 0.0)).is_none());
    }

    #[test]
    fn class_counts() {
        let p = Mixture::Reference.weights(2).unwrap();
        assert_eq!(apportion(1000, &p), vec![894, 106]);
        // round(1000 * 11994 / 113379)
        let want = libm::round(1000.0 * 11994.0 / 113379.0) as usize;
        assert_eq!(apportion(1000, &p)[1], want);
        assert_eq!(apportion(10, &[0.5, 0.5]), vec![5, 5]);
        assert_eq!(apportion(7, &[0.2; 5]), vec![2, 2, 1, 1, 1]);
        assert!(Mixture::Weights(vec![0.5, 0.4]).weights(2).is_err());
        assert!(Mixture::Reference.weights(5).is_err());
    }

    #[test]
    fn split_rounding() {
        let counts = apportion(316, &[0.2; 5]);
        let train = stratified_train_counts(&counts, 0.9);
        assert_eq!(train.iter().sum::<usize>(), 284);
        assert_eq!(316 - train.iter().sum::<usize>(), 32);
        for (t, c) in train.iter().zip(&counts) {
            assert!(*t <= *c);
        }
    }

    #[test]
    fn plan_is_stratified_and_pure() {
        let mut g = GenSpec::new(Task::Icu, 316, 5);
        g.side = 8;
        g.frames_per_instance = 2;
        let plan = plan_dataset(&g).unwrap();
        assert_eq!(plan, plan_dataset(&g).unwrap());
        assert_eq!(plan.len(), 632);
        let test_instances = plan.iter().filter(|p| p.split == Split::Test && p.frame == 0).count();
        assert_eq!(test_instances, 32);
        // every frame of an instance shares its split
        for w in plan.chunks(2) {
            assert_eq!(w[0].split, w[1].split);
            assert_eq!(w[0].instance, w[1].instance);
        }
        g.train_fraction = 1.0;
        assert!(plan_dataset(&g).unwrap_err().to_string().contains("train_fraction"));
    }

    #[test]
    fn sr_corpus_is_unlabeled() {
        let mut g = GenSpec::new(Task::HandHygiene, 20, 1);
        g.mode = GenMode::SrCorpus;
        g.side = 8;
        let plan = plan_dataset(&g).unwrap();
        assert!(plan.iter().all(|p| p.label.is_none()));
        assert!(plan.iter().any(|p| p.scene.task == Task::Icu));
    }
}
