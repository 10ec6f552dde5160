//! Transcript replay and pose assertions.
//!
//! A transcript is one command per line. `#` starts a comment. Lines starting
//! with `@` are directives:
//!
//! - `@tick N`: run N ticks. Any use switches the transcript to paced mode,
//!   where lines are no longer drained one at a time.
//! - `@running`: the robot is already started (no homing, not a command).
//! - `@step LABEL`: starts an automated step.
//! - `@human LABEL`: starts a human step; its `@set` lines edit the scene.
//! - `@set OBJECT X Y Z [ROTATION]`: places an object (mm, degrees).
//! - `@rotate OBJECT DEG`: turns an object in place.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::dispatcher::{Dispatcher, Event, EventKind, ObjectView, PoseView};
use crate::geom::Point;

/// Tick budget for draining after one line.
pub const MAX_DRAIN_TICKS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: no object named {name:?}")]
    UnknownObject { line: usize, name: String },
    #[error("line {line}: queue did not drain within {MAX_DRAIN_TICKS} ticks")]
    NoDrain { line: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Directive {
    Command(String),
    Tick(u64),
    Running,
    Step(String),
    Human(String),
    Set { object: String, position: [f64; 3], rotation: Option<f64> },
    Rotate { object: String, deg: f64 },
}

/// Parses a transcript into numbered directives.
pub fn parse_transcript(text: &str) -> Result<Vec<(usize, Directive)>, ReplayError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some(directive) = content.strip_prefix('@') else {
            out.push((line, Directive::Command(content.to_string())));
            continue;
        };
        let syntax = |message: &str| ReplayError::Syntax { line, message: message.into() };
        let mut words = directive.split_whitespace();
        let head = words.next().unwrap_or("");
        let rest: Vec<&str> = words.collect();
        let label = || rest.join(" ");
        let d = match head {
            "tick" => match rest.as_slice() {
                [n] => Directive::Tick(n.parse().map_err(|_| syntax("@tick needs a tick count"))?),
                _ => return Err(syntax("@tick needs a tick count")),
            },
            "running" if rest.is_empty() => Directive::Running,
            "step" => Directive::Step(label()),
            "human" => Directive::Human(label()),
            "set" => {
                let nums = |s: &[&str]| -> Option<Vec<f64>> { s.iter().map(|v| v.parse().ok()).collect() };
                match rest.split_first() {
                    Some((object, vals)) if vals.len() == 3 || vals.len() == 4 => {
                        let v = nums(vals).ok_or_else(|| syntax("@set coordinates must be numbers"))?;
                        Directive::Set {
                            object: (*object).to_string(),
                            position: [v[0], v[1], v[2]],
                            rotation: v.get(3).copied(),
                        }
                    }
                    _ => return Err(syntax("@set needs OBJECT X Y Z [ROTATION]")),
                }
            }
            "rotate" => match rest.as_slice() {
                [object, deg] => Directive::Rotate {
                    object: (*object).to_string(),
                    deg: deg.parse().map_err(|_| syntax("@rotate angle must be a number"))?,
                },
                _ => return Err(syntax("@rotate needs OBJECT DEG")),
            },
            _ => return Err(syntax(&format!("unknown directive @{head}"))),
        };
        out.push((line, d));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectedLine {
    pub line: usize,
    pub text: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub label: String,
    pub human: bool,
    /// No rejected line, execution error or warning inside the step.
    pub completed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub commands: usize,
    pub accepted: usize,
    pub rejected: Vec<RejectedLine>,
    pub ticks: u64,
    pub errors: usize,
    pub warnings: usize,
    pub clamps: usize,
    pub steps: Vec<StepResult>,
    pub tasks: Vec<String>,
    pub robot: PoseView,
    pub objects: Vec<ObjectView>,
}

impl Report {
    pub fn robot_steps(&self) -> (usize, usize) {
        let robot: Vec<_> = self.steps.iter().filter(|s| !s.human).collect();
        (robot.iter().filter(|s| s.completed).count(), robot.len())
    }

    pub fn human_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.human).count()
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "commands: {}", self.commands)?;
        writeln!(f, "accepted: {}", self.accepted)?;
        writeln!(f, "rejected: {}", self.rejected.len())?;
        for r in &self.rejected {
            writeln!(f, "  line {}: {:?} {}: {}", r.line, r.text, r.kind, r.message)?;
        }
        writeln!(f, "ticks: {}", self.ticks)?;
        writeln!(f, "errors: {} warnings: {} clamps: {}", self.errors, self.warnings, self.clamps)?;
        if !self.steps.is_empty() {
            let (done, total) = self.robot_steps();
            writeln!(f, "robot steps: {done}/{total} human steps: {}", self.human_steps())?;
            for s in &self.steps {
                let who = if s.human { "human" } else { "robot" };
                let status = if s.completed { "ok" } else { "FAILED" };
                writeln!(f, "  {who} {}: {status}", s.label)?;
            }
        }
        if !self.tasks.is_empty() {
            writeln!(f, "tasks: {}", self.tasks.join(", "))?;
        }
        let r = &self.robot;
        writeln!(
            f,
            "robot: x={:.3} y={:.3} z={:.3} rotation={:.1} gripper={:.1}",
            r.x, r.y, r.z, r.rotation, r.gripper
        )?;
        for o in &self.objects {
            let held = if o.held { " held" } else { "" };
            writeln!(f, "object {}: x={:.3} y={:.3} z={:.3} rotation={:.1}{held}", o.name, o.x, o.y, o.z, o.rotation)?;
        }
        Ok(())
    }
}

struct Tally {
    errors: usize,
    warnings: usize,
    clamps: usize,
}

impl Tally {
    /// Counts events; returns whether any was an execution error or warning.
    fn add(&mut self, events: &[Event]) -> bool {
        let mut failed = false;
        for e in events {
            match e.kind {
                EventKind::Error { .. } => {
                    self.errors += 1;
                    failed = true;
                }
                EventKind::Warning { .. } => {
                    self.warnings += 1;
                    failed = true;
                }
                EventKind::Clamped { .. } => self.clamps += 1,
                _ => {}
            }
        }
        failed
    }
}

/// Runs a transcript to completion at ticks of `dt` seconds.
pub fn replay(d: &mut Dispatcher, transcript: &str, dt: f64) -> Result<Report, ReplayError> {
    let directives = parse_transcript(transcript)?;
    let paced = directives.iter().any(|(_, d)| matches!(d, Directive::Tick(_)));
    let mut tally = Tally { errors: 0, warnings: 0, clamps: 0 };
    let (mut commands, mut accepted) = (0, 0);
    let mut rejected = Vec::new();
    let mut steps: Vec<StepResult> = Vec::new();
    let start_tick = d.tick_count();

    let drain = |d: &mut Dispatcher, tally: &mut Tally, line: usize| -> Result<bool, ReplayError> {
        let (events, idle) = d.drain(dt, MAX_DRAIN_TICKS);
        if !idle {
            return Err(ReplayError::NoDrain { line });
        }
        Ok(tally.add(&events))
    };

    for (line, directive) in &directives {
        let line = *line;
        let mut failed = false;
        match directive {
            Directive::Command(text) => {
                commands += 1;
                let ack = d.submit(text);
                match ack.error {
                    None => accepted += 1,
                    Some(e) => {
                        failed = true;
                        rejected.push(RejectedLine { line, text: text.clone(), kind: e.kind, message: e.message });
                    }
                }
                if !paced {
                    failed |= drain(d, &mut tally, line)?;
                }
            }
            Directive::Tick(n) => {
                for _ in 0..*n {
                    let events = d.tick(dt);
                    failed |= tally.add(&events);
                }
            }
            Directive::Running => d.set_running(true),
            Directive::Step(label) | Directive::Human(label) => {
                // A step begins once the previous one has finished moving.
                let f = drain(d, &mut tally, line)?;
                if let Some(s) = steps.last_mut() {
                    s.completed &= !f;
                }
                let human = matches!(directive, Directive::Human(_));
                steps.push(StepResult { label: label.clone(), human, completed: true });
            }
            Directive::Set { object, position, rotation } => {
                let [x, y, z] = *position;
                if !d.place_object(object, Point::from_mm(x, y, z), *rotation) {
                    return Err(ReplayError::UnknownObject { line, name: object.clone() });
                }
            }
            Directive::Rotate { object, deg } => {
                let Some(o) = d.sim().object(object) else {
                    return Err(ReplayError::UnknownObject { line, name: object.clone() });
                };
                let (position, rotation) = (o.position, o.rotation + deg);
                d.place_object(object, position, Some(rotation));
            }
        }
        if failed {
            if let Some(s) = steps.last_mut() {
                s.completed = false;
            }
        }
    }
    let last_line = directives.last().map_or(0, |(l, _)| *l);
    let failed = drain(d, &mut tally, last_line)?;
    if failed {
        if let Some(s) = steps.last_mut() {
            s.completed = false;
        }
    }

    let snap = d.snapshot();
    Ok(Report {
        commands,
        accepted,
        rejected,
        ticks: d.tick_count() - start_tick,
        errors: tally.errors,
        warnings: tally.warnings,
        clamps: tally.clamps,
        steps,
        tasks: d.store().tasks().map(|t| t.name().to_string()).collect(),
        robot: snap.robot,
        objects: snap.objects,
    })
}

/// Expected final poses, read from an assert file:
///
/// ```text
/// tolerance 1
/// robot 400 -300 400
/// object part 215 500 0
/// accepted 19
/// ```
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assertions {
    pub tolerance_mm: f64,
    pub robot: Option<[f64; 3]>,
    pub objects: Vec<(String, [f64; 3])>,
    pub accepted: Option<usize>,
    pub robot_steps: Option<usize>,
}

impl Assertions {
    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let mut a = Assertions { tolerance_mm: 1e-9, ..Self::default() };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let words: Vec<&str> = content.split_whitespace().collect();
            let syntax = || ReplayError::Syntax { line, message: format!("bad assertion {content:?}") };
            let nums = |s: &[&str]| -> Result<[f64; 3], ReplayError> {
                let v: Vec<f64> = s.iter().map(|w| w.parse().map_err(|_| syntax())).collect::<Result<_, _>>()?;
                v.try_into().map_err(|_| syntax())
            };
            match words.as_slice() {
                ["tolerance", t] => a.tolerance_mm = t.parse().map_err(|_| syntax())?,
                ["robot", rest @ ..] => a.robot = Some(nums(rest)?),
                ["object", name, rest @ ..] => a.objects.push((name.to_string(), nums(rest)?)),
                ["accepted", n] => a.accepted = Some(n.parse().map_err(|_| syntax())?),
                ["steps", n] => a.robot_steps = Some(n.parse().map_err(|_| syntax())?),
                _ => return Err(syntax()),
            }
        }
        Ok(a)
    }

    /// Returns one message per failed assertion.
    pub fn check(&self, report: &Report) -> Vec<String> {
        let mut failures = Vec::new();
        let tol = self.tolerance_mm;
        let close = |got: [f64; 3], want: [f64; 3]| got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol);
        if let Some(want) = self.robot {
            let r = &report.robot;
            if !close([r.x, r.y, r.z], want) {
                failures.push(format!("robot at ({}, {}, {}), expected {want:?} ± {tol}", r.x, r.y, r.z));
            }
        }
        for (name, want) in &self.objects {
            match report.objects.iter().find(|o| &o.name == name) {
                None => failures.push(format!("no object named {name:?}")),
                Some(o) if !close([o.x, o.y, o.z], *want) => failures.push(format!(
                    "object {name} at ({}, {}, {}), expected {want:?} ± {tol}",
                    o.x, o.y, o.z
                )),
                Some(_) => {}
            }
        }
        if let Some(n) = self.accepted {
            if report.accepted != n {
                failures.push(format!("{} commands accepted, expected {n}", report.accepted));
            }
        }
        if let Some(n) = self.robot_steps {
            let (done, total) = report.robot_steps();
            if done != n || total != n {
                failures.push(format!("{done}/{total} robot steps completed, expected {n}/{n}"));
            }
        }
        failures
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatcher::{Config, DEFAULT_TICK_S};
    use crate::sim::{Scene, SceneObject};
    use crate::store::Store;

    fn dispatcher() -> Dispatcher {
        let mut scene = Scene::default();
        scene.objects.push(SceneObject::new("cube", Point::from_mm(400.0, 0.0, 0.0), 15.0, 20.0));
        Dispatcher::new(&scene, Store::in_memory(), Config::default())
    }

    const SCRIPT: &str = "\
start robot
# comment
down 280   # reach the cube
close
up 100
bogus words
";

    #[test]
    fn reports_counts_and_poses() {
        let mut d = dispatcher();
        let report = replay(&mut d, SCRIPT, DEFAULT_TICK_S).unwrap();
        assert_eq!(report.commands, 5);
        assert_eq!(report.accepted, 4);
        assert_eq!(report.rejected[0].line, 6);
        assert_eq!(report.rejected[0].kind, "UnknownCommand");
        assert_eq!(report.robot.z, 120.0);
        assert!(report.objects[0].held);
        assert_eq!(report.objects[0].z, 100.0);
    }

    #[test]
    fn replay_is_byte_reproducible() {
        let a = replay(&mut dispatcher(), SCRIPT, DEFAULT_TICK_S).unwrap().to_string();
        let b = replay(&mut dispatcher(), SCRIPT, DEFAULT_TICK_S).unwrap().to_string();
        assert_eq!(a, b);
    }

    #[test]
    fn running_directive_skips_homing() {
        let mut d = dispatcher();
        let report = replay(&mut d, "@running\nright 10\n", DEFAULT_TICK_S).unwrap();
        assert_eq!(report.commands, 1);
        assert_eq!(report.robot.y, -10.0);
    }

    #[test]
    fn paced_mode_lets_stop_interrupt() {
        let mut d = dispatcher();
        let t = "start robot\n@tick 100\nleft 300\nset mode continuous\nleft\n@tick 10\nstop\n";
        let report = replay(&mut d, t, DEFAULT_TICK_S).unwrap();
        assert_eq!(report.accepted, 5);
        // Step "left 300" lands in one tick; the continuous jog then runs
        // ~9 ticks at 1 mm each before the stop.
        assert!(report.robot.y > 300.0 && report.robot.y < 311.0, "{}", report.robot.y);
    }

    #[test]
    fn steps_and_scene_edits() {
        let mut d = dispatcher();
        let t = "start robot\n@step one\nup 10\n@step two\nnonsense\n@human three\n@set cube 100 100 0\n@rotate cube 400\n";
        let report = replay(&mut d, t, DEFAULT_TICK_S).unwrap();
        assert_eq!(report.robot_steps(), (1, 2));
        assert_eq!(report.human_steps(), 1);
        assert_eq!(report.objects[0].x, 100.0);
        assert_eq!(report.objects[0].rotation, 40.0);
        let err = replay(&mut dispatcher(), "@set ghost 1 2 3\n", DEFAULT_TICK_S).unwrap_err();
        assert!(matches!(err, ReplayError::UnknownObject { line: 1, .. }));
    }

    #[test]
    fn directive_errors() {
        assert!(matches!(parse_transcript("@tick x"), Err(ReplayError::Syntax { line: 1, .. })));
        assert!(parse_transcript("@nope").is_err());
        assert!(parse_transcript("@set a 1 2").is_err());
    }

    #[test]
    fn assertions() {
        let mut d = dispatcher();
        let report = replay(&mut d, SCRIPT, DEFAULT_TICK_S).unwrap();
        let a = Assertions::parse("tolerance 1\nrobot 400 0 120.5\nobject cube 400 0 100\naccepted 4\n").unwrap();
        assert!(a.check(&report).is_empty(), "{:?}", a.check(&report));
        let a = Assertions::parse("robot 400 0 121\nobject nope 0 0 0\naccepted 5\n").unwrap();
        assert_eq!(a.check(&report).len(), 3);
        assert!(Assertions::parse("robot 1 2").is_err());
    }
}
