//! Deterministic kinematic workcell.
//!
//! The end effector is a point that translates inside an axis-aligned box and
//! carries a tool rotation and a gripper. Grasping is proximity based: closing
//! the gripper attaches the nearest free object whose footprint contains the
//! gripper and whose vertical extent is within [`GRASP_Z_TOLERANCE_UM`].
//! Released objects fall straight down onto the highest support below them.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::geom::{mm_to_um, normalize_deg, um_to_mm, Point, Pose};
use crate::xml;

pub const GRASP_Z_TOLERANCE_UM: i64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("scene file: {0}")]
    Format(String),
    #[error("reading scene file {path}: {message}")]
    Io { path: String, message: String },
    #[error("scene is inconsistent: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Workspace {
    pub min: Point,
    pub max: Point,
    pub table_height: i64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            min: Point::from_mm(0.0, -400.0, 0.0),
            max: Point::from_mm(800.0, 400.0, 600.0),
            table_height: 0,
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<(), SceneError> {
        let (lo, hi) = (self.min.axes(), self.max.axes());
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(SceneError::Invalid("workspace bounds are empty".into()));
        }
        if self.table_height < self.min.z || self.table_height > self.max.z {
            return Err(SceneError::Invalid("table height outside z bounds".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point) -> bool {
        let (lo, hi, a) = (self.min.axes(), self.max.axes(), p.axes());
        (0..3).all(|i| lo[i] <= a[i] && a[i] <= hi[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "to")]
pub enum Attachment {
    /// Resting on the table or on another object.
    Support,
    /// Carried rigidly; `offset` is object position minus gripper position.
    Gripper { offset: Point },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneObject {
    pub name: String,
    /// Centre of the object's base.
    pub position: Point,
    pub rotation: f64,
    pub grasp_radius: i64,
    pub height: i64,
    pub attachment: Attachment,
}

impl SceneObject {
    pub fn new(name: &str, position: Point, grasp_radius_mm: f64, height_mm: f64) -> Self {
        Self {
            name: name.to_string(),
            position,
            rotation: 0.0,
            grasp_radius: mm_to_um(grasp_radius_mm),
            height: mm_to_um(height_mm),
            attachment: Attachment::Support,
        }
    }

    pub fn top(&self) -> i64 {
        self.position.z + self.height
    }

    pub fn is_held(&self) -> bool {
        matches!(self.attachment, Attachment::Gripper { .. })
    }

    /// Vertical gap between `z` and the object's extent; zero inside it.
    fn z_gap(&self, z: i64) -> i64 {
        if z < self.position.z {
            self.position.z - z
        } else if z > self.top() {
            z - self.top()
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum SimEvent {
    Clamped { axis: Axis, requested_mm: f64, limit_mm: f64 },
    Grasped { object: String },
    Released { object: String, z_mm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RobotPose {
    pub position: Point,
    pub rotation: f64,
    /// 1.0 open, 0.0 closed.
    pub gripper: f64,
}

impl RobotPose {
    pub fn from_pose(p: &Pose) -> Self {
        Self { position: p.point(), rotation: normalize_deg(p.rotation), gripper: p.gripper }
    }

    pub fn to_pose(&self) -> Pose {
        let [x, y, z] = self.position.to_mm();
        Pose { x, y, z, rotation: self.rotation, gripper: self.gripper }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub workspace: Workspace,
    pub home: Pose,
    pub start: Option<Pose>,
    pub objects: Vec<SceneObject>,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            workspace: Workspace::default(),
            home: Pose::new(400.0, 0.0, 300.0, 0.0, 1.0),
            start: None,
            objects: Vec::new(),
        }
    }
}

impl Scene {
    /// Reads the `<scene>` XML format.
    pub fn parse(text: &str) -> Result<Self, SceneError> {
        let root = xml::parse_document(text).map_err(SceneError::Format)?;
        if root.name != "scene" {
            return Err(SceneError::Format(format!("root element is <{}>", root.name)));
        }
        let fmt = SceneError::Format;
        let mut scene = Scene::default();

        if let Some(ws) = root.child("workspace") {
            let d = Workspace::default();
            let (lo, hi) = (d.min.to_mm(), d.max.to_mm());
            let get = |k: &str, dflt: f64| ws.parse_attr_or::<f64>(k, dflt).map_err(fmt);
            scene.workspace = Workspace {
                min: Point::from_mm(get("xmin", lo[0])?, get("ymin", lo[1])?, get("zmin", lo[2])?),
                max: Point::from_mm(get("xmax", hi[0])?, get("ymax", hi[1])?, get("zmax", hi[2])?),
                table_height: mm_to_um(get("table", 0.0)?),
            };
        }
        let pose_of = |el: &xml::Element, base: Pose| -> Result<Pose, SceneError> {
            Ok(Pose::new(
                el.parse_attr_or("x", base.x).map_err(fmt)?,
                el.parse_attr_or("y", base.y).map_err(fmt)?,
                el.parse_attr_or("z", base.z).map_err(fmt)?,
                el.parse_attr_or("rotation", base.rotation).map_err(fmt)?,
                el.parse_attr_or("gripper", base.gripper).map_err(fmt)?,
            ))
        };
        if let Some(home) = root.child("home") {
            scene.home = pose_of(home, scene.home)?;
        }
        if let Some(start) = root.child("start") {
            scene.start = Some(pose_of(start, scene.home)?);
        }
        for obj in root.children_named("object") {
            let name = obj.attr("name").map_err(fmt)?;
            let p = Point::from_mm(
                obj.parse_attr("x").map_err(fmt)?,
                obj.parse_attr("y").map_err(fmt)?,
                obj.parse_attr_or("z", um_to_mm(scene.workspace.table_height)).map_err(fmt)?,
            );
            let mut o = SceneObject::new(
                name,
                p,
                obj.parse_attr("radius").map_err(fmt)?,
                obj.parse_attr("height").map_err(fmt)?,
            );
            o.rotation = normalize_deg(obj.parse_attr_or("rotation", 0.0).map_err(fmt)?);
            scene.objects.push(o);
        }
        scene.validate()?;
        Ok(scene)
    }

    pub fn load(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|e| SceneError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        self.workspace.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.name.as_str()) {
                return Err(SceneError::Invalid(format!("duplicate object {:?}", o.name)));
            }
            if o.grasp_radius <= 0 {
                return Err(SceneError::Invalid(format!("{}: radius must be > 0", o.name)));
            }
            if o.position.z < self.workspace.table_height {
                return Err(SceneError::Invalid(format!("{} is below the table", o.name)));
            }
        }
        for p in std::iter::once(&self.home).chain(self.start.iter()) {
            if !self.workspace.contains(p.point()) {
                return Err(SceneError::Invalid("home/start pose outside workspace".into()));
            }
        }
        Ok(())
    }
}

/// The workcell state: robot plus objects.
#[derive(Debug, Clone, PartialEq)]
pub struct Sim {
    pub workspace: Workspace,
    pub home: Pose,
    robot: RobotPose,
    objects: BTreeMap<String, SceneObject>,
}

impl Sim {
    pub fn new(scene: &Scene) -> Self {
        let start = scene.start.unwrap_or(scene.home);
        Self {
            workspace: scene.workspace,
            home: scene.home,
            robot: RobotPose::from_pose(&start),
            objects: scene.objects.iter().map(|o| (o.name.clone(), o.clone())).collect(),
        }
    }

    pub fn robot(&self) -> &RobotPose {
        &self.robot
    }

    pub fn position(&self) -> Point {
        self.robot.position
    }

    pub fn objects(&self) -> impl Iterator<Item = &SceneObject> {
        self.objects.values()
    }

    pub fn object(&self, name: &str) -> Option<&SceneObject> {
        self.objects.get(name)
    }

    pub fn held(&self) -> Option<&SceneObject> {
        self.objects.values().find(|o| o.is_held())
    }

    fn held_offset(&self) -> Option<Point> {
        self.held().map(|o| match o.attachment {
            Attachment::Gripper { offset } => offset,
            Attachment::Support => Point::ZERO,
        })
    }

    /// Box the gripper may occupy: its own bounds, the held object's bounds
    /// translated by the carry offset, and the table surface.
    pub fn gripper_bounds(&self) -> (Point, Point) {
        let ws = &self.workspace;
        let mut lo = ws.min.axes();
        let mut hi = ws.max.axes();
        lo[2] = lo[2].max(ws.table_height);
        if let Some(off) = self.held_offset() {
            let off = off.axes();
            let (wlo, whi) = (ws.min.axes(), ws.max.axes());
            for i in 0..3 {
                lo[i] = lo[i].max(wlo[i] - off[i]);
                hi[i] = hi[i].min(whi[i] - off[i]);
            }
            lo[2] = lo[2].max(ws.table_height - off[2]);
        }
        for i in 0..3 {
            // Degenerate carry offsets can cross the box; pin to the lower edge.
            hi[i] = hi[i].max(lo[i]);
        }
        (Point::from_axes(lo), Point::from_axes(hi))
    }

    /// Clamps `target` per axis into [`Self::gripper_bounds`].
    pub fn clamp_target(&self, target: Point) -> (Point, Vec<SimEvent>) {
        let (lo, hi) = self.gripper_bounds();
        let (lo, hi, mut t) = (lo.axes(), hi.axes(), target.axes());
        let mut events = Vec::new();
        for (i, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
            let clamped = t[i].clamp(lo[i], hi[i]);
            if clamped != t[i] {
                events.push(SimEvent::Clamped {
                    axis,
                    requested_mm: um_to_mm(t[i]),
                    limit_mm: um_to_mm(clamped),
                });
                t[i] = clamped;
            }
        }
        (Point::from_axes(t), events)
    }

    /// Translates the gripper by `delta`, clamped to the workspace; a held
    /// object moves with it.
    pub fn apply_displacement(&mut self, delta: Point) -> Vec<SimEvent> {
        let (target, events) = self.clamp_target(self.robot.position + delta);
        self.set_position(target);
        events
    }

    fn set_position(&mut self, p: Point) {
        self.robot.position = p;
        for o in self.objects.values_mut() {
            if let Attachment::Gripper { offset } = o.attachment {
                o.position = p + offset;
            }
        }
    }

    /// Closes the gripper, attaching the nearest free object in reach.
    pub fn close_gripper(&mut self) -> Option<SimEvent> {
        self.robot.gripper = 0.0;
        if self.held().is_some() {
            return None;
        }
        let grip = self.robot.position;
        let mut best: Option<(f64, &str)> = None;
        for o in self.objects.values() {
            let xy = grip.xy_distance(o.position);
            let gap = o.z_gap(grip.z);
            if xy >= o.grasp_radius as f64 || gap >= GRASP_Z_TOLERANCE_UM {
                continue;
            }
            let dist = xy.hypot(gap as f64);
            // Map iteration is name ordered, so strict `<` keeps the first name on ties.
            if best.is_none_or(|(d, _)| dist < d) {
                best = Some((dist, o.name.as_str()));
            }
        }
        let name = best?.1.to_string();
        let obj = self.objects.get_mut(&name).expect("present");
        obj.attachment = Attachment::Gripper { offset: obj.position - grip };
        Some(SimEvent::Grasped { object: name })
    }

    /// Opens the gripper; a held object drops onto the highest support whose
    /// footprint overlaps its own and whose top is not above the object's top.
    pub fn open_gripper(&mut self) -> Option<SimEvent> {
        self.robot.gripper = 1.0;
        let name = self.held()?.name.clone();
        let falling = self.objects[&name].clone();
        let rest = self
            .objects
            .values()
            .filter(|o| o.name != name && !o.is_held())
            .filter(|o| {
                o.position.xy_distance(falling.position)
                    < (o.grasp_radius + falling.grasp_radius) as f64
            })
            .map(SceneObject::top)
            .filter(|top| *top <= falling.top())
            .fold(self.workspace.table_height, i64::max);
        let obj = self.objects.get_mut(&name).expect("present");
        obj.attachment = Attachment::Support;
        obj.position.z = rest.min(self.workspace.max.z);
        Some(SimEvent::Released { object: name, z_mm: um_to_mm(obj.position.z) })
    }

    /// Rotates the tool; a held object turns with it about the gripper axis.
    pub fn rotate_tool(&mut self, deg: f64) {
        self.robot.rotation = normalize_deg(self.robot.rotation + deg);
        let grip = self.robot.position;
        for o in self.objects.values_mut() {
            if let Attachment::Gripper { offset } = o.attachment {
                let offset = offset.rotated_z(deg);
                o.attachment = Attachment::Gripper { offset };
                o.rotation = normalize_deg(o.rotation + deg);
                o.position = grip + offset;
            }
        }
        // Rotation of the carry offset can push the object out of bounds.
        let (p, _) = self.clamp_target(self.robot.position);
        self.set_position(p);
    }

    /// Sets the tool rotation to an absolute angle.
    pub fn set_rotation(&mut self, deg: f64) {
        let delta = normalize_deg(deg) - self.robot.rotation;
        if delta != 0.0 {
            self.rotate_tool(delta);
        }
    }

    /// Human-style scene edit: places an object at `position` on its support.
    pub fn place_object(&mut self, name: &str, position: Point, rotation: Option<f64>) -> bool {
        let Some(o) = self.objects.get_mut(name) else {
            return false;
        };
        o.attachment = Attachment::Support;
        o.position = position;
        if let Some(r) = rotation {
            o.rotation = normalize_deg(r);
        }
        true
    }

    /// Every containment invariant holds.
    pub fn is_contained(&self) -> bool {
        let ws = &self.workspace;
        ws.contains(self.robot.position)
            && self.robot.position.z >= ws.table_height
            && self.objects.values().all(|o| ws.contains(o.position) && o.position.z >= ws.table_height)
            && self.objects.values().filter(|o| o.is_held()).count() <= 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(x: f64, y: f64, z: f64) -> Point {
        Point::from_mm(x, y, z)
    }

    fn sim_with(objects: Vec<SceneObject>, start: Point) -> Sim {
        let mut scene = Scene { objects, ..Scene::default() };
        let [x, y, z] = start.to_mm();
        scene.start = Some(Pose::new(x, y, z, 0.0, 1.0));
        Sim::new(&scene)
    }

    #[test]
    fn clamps_at_table_plus_hanging_object() {
        // An 8 mm tall part grasped from its top hangs 8 mm below the gripper.
        let part = SceneObject::new("part", mm(400.0, 0.0, 0.0), 15.0, 8.0);
        let mut sim = sim_with(vec![part], mm(400.0, 0.0, 8.0));
        assert!(sim.close_gripper().is_some());
        sim.apply_displacement(mm(0.0, 0.0, 92.0));
        assert_eq!(sim.position().z, mm_to_um(100.0));
        let events = sim.apply_displacement(mm(0.0, 0.0, -300.0));
        assert_eq!(sim.position().z, mm_to_um(8.0));
        assert!(matches!(events.as_slice(), [SimEvent::Clamped { axis: Axis::Z, .. }]));
        assert_eq!(sim.object("part").unwrap().position.z, 0);
    }

    #[test]
    fn zero_displacement_is_identity() {
        let mut sim = sim_with(vec![], mm(100.0, 50.0, 200.0));
        let before = sim.clone();
        assert!(sim.apply_displacement(Point::ZERO).is_empty());
        assert_eq!(sim, before);
    }

    #[test]
    fn grasp_at_object_pose() {
        let mut sim = sim_with(vec![SceneObject::new("a", mm(300.0, 0.0, 0.0), 15.0, 20.0)], mm(300.0, 0.0, 0.0));
        assert_eq!(sim.close_gripper(), Some(SimEvent::Grasped { object: "a".into() }));
        assert!(sim.object("a").unwrap().is_held());
    }

    #[test]
    fn equidistant_tie_goes_to_first_name() {
        let objects = vec![
            SceneObject::new("b", mm(305.0, 0.0, 0.0), 15.0, 20.0),
            SceneObject::new("a", mm(295.0, 0.0, 0.0), 15.0, 20.0),
        ];
        let mut sim = sim_with(objects, mm(300.0, 0.0, 10.0));
        assert_eq!(sim.close_gripper(), Some(SimEvent::Grasped { object: "a".into() }));
    }

    #[test]
    fn grasp_distance_predicate() {
        // Oracle: evaluate the distance predicate directly.
        let reach = |gap_mm: f64, xy_mm: f64| gap_mm < 10.0 && xy_mm < 15.0;
        for (gap, xy) in [(9.0, 0.0), (9.999, 14.9), (10.0, 0.0), (0.0, 15.0), (4.0, 3.0)] {
            let obj = SceneObject::new("o", mm(300.0, 0.0, 0.0), 15.0, 20.0);
            let mut sim = sim_with(vec![obj], mm(300.0 + xy, 0.0, 20.0 + gap));
            assert_eq!(sim.close_gripper().is_some(), reach(gap, xy), "gap {gap} xy {xy}");
        }
    }

    #[test]
    fn release_falls_to_highest_support() {
        let objects = vec![
            SceneObject::new("base", mm(300.0, 0.0, 0.0), 20.0, 40.0),
            SceneObject::new("part", mm(500.0, 0.0, 0.0), 10.0, 10.0),
        ];
        let mut sim = sim_with(objects, mm(500.0, 0.0, 5.0));
        sim.close_gripper();
        sim.apply_displacement(mm(0.0, 0.0, 195.0));
        sim.open_gripper();
        assert_eq!(sim.object("part").unwrap().position.z, 0);

        sim.apply_displacement(mm(0.0, 0.0, -200.0));
        sim.close_gripper();
        sim.apply_displacement(mm(-195.0, 0.0, 200.0));
        let ev = sim.open_gripper();
        // Oracle: highest top among overlapping supports.
        let expected = [40.0f64].into_iter().fold(0.0, f64::max);
        assert_eq!(ev, Some(SimEvent::Released { object: "part".into(), z_mm: expected }));
    }

    #[test]
    fn open_with_nothing_held_only_opens() {
        let mut sim = sim_with(vec![], mm(300.0, 0.0, 100.0));
        sim.close_gripper();
        assert_eq!(sim.open_gripper(), None);
        assert_eq!(sim.robot().gripper, 1.0);
    }

    #[test]
    fn rotation_wraps() {
        let mut sim = sim_with(vec![], mm(300.0, 0.0, 100.0));
        sim.rotate_tool(90.0);
        assert_eq!(sim.robot().rotation, 90.0);
        sim.set_rotation(350.0);
        sim.rotate_tool(20.0);
        assert_eq!(sim.robot().rotation, 10.0);
        sim.set_rotation(0.0);
        for _ in 0..4 {
            sim.rotate_tool(90.0);
        }
        assert_eq!(sim.robot().rotation, 0.0);
    }

    #[test]
    fn held_object_rotates_with_tool() {
        let obj = SceneObject::new("o", mm(305.0, 0.0, 0.0), 15.0, 20.0);
        let mut sim = sim_with(vec![obj], mm(300.0, 0.0, 10.0));
        sim.close_gripper();
        sim.rotate_tool(90.0);
        let o = sim.object("o").unwrap();
        assert_eq!(o.position, mm(300.0, 5.0, 0.0));
        assert_eq!(o.rotation, 90.0);
    }

    #[test]
    fn scene_file_parses() {
        let scene = Scene::parse(
            r#"<scene>
                 <workspace xmin="0" xmax="800" ymin="-500" ymax="500" zmin="0" zmax="600" table="0"/>
                 <home x="400" y="0" z="350"/>
                 <object name="gear1" x="300" y="100" radius="15" height="20"/>
               </scene>"#,
        )
        .unwrap();
        assert_eq!(scene.workspace.max.y, mm_to_um(500.0));
        assert_eq!(scene.home.z, 350.0);
        assert_eq!(scene.objects[0].position, mm(300.0, 100.0, 0.0));
        assert!(Scene::parse("<scene><object name=\"a\" x=\"1\" y=\"1\" radius=\"0\" height=\"1\"/></scene>").is_err());
        assert!(Scene::parse("<stage/>").is_err());
    }
}
