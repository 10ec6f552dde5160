//! Expansion of hierarchical commands into primitives, and task recording.
//!
//! Expansion is a pure function of the command, the store and an
//! [`ExpansionContext`]. Position lists consumed by `repeat <task> <list>` are
//! reported back in [`Expansion::consumed`] and only popped from the store by
//! the caller once the whole expansion has succeeded.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::geom::{mm_to_um, Point};
use crate::parser::{
    Command, Direction, DirectionalMove, MotionMode, Name, RepeatSpec, TARGET_PLACEHOLDER,
};
use crate::store::{Store, StoreError, TaskDefinition};

/// Height above a template pose used for approach and retreat, in mm.
pub const APPROACH_MM: u32 = 50;
/// Default traversal either side of a push pose, in mm.
pub const PUSH_LENGTH_MM: u32 = 90;
/// Deepest allowed nesting of task invocations.
pub const MAX_REPEAT_DEPTH: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("task nesting deeper than {MAX_REPEAT_DEPTH} levels")]
    RecursionLimit,
    #[error("nothing to repeat")]
    NothingToRepeat,
    #[error("already recording task {0:?}")]
    AlreadyRecording(String),
    #[error("not recording")]
    NotRecording,
    #[error("task {0:?} would be empty")]
    EmptyTask(String),
    #[error("{0:?} cannot be expanded into motion")]
    ControlCommand(String),
}

impl EngineError {
    pub fn kind(&self) -> &'static str {
        match self {
            EngineError::Store(StoreError::UnknownName { .. }) => "UnknownName",
            EngineError::Store(StoreError::EmptyList(_)) => "EmptyList",
            EngineError::Store(_) => "StorageFailure",
            EngineError::RecursionLimit => "RecursionLimit",
            EngineError::NothingToRepeat => "NothingToRepeat",
            EngineError::AlreadyRecording(_) => "AlreadyRecording",
            EngineError::NotRecording => "NotRecording",
            EngineError::EmptyTask(_) => "EmptyTask",
            EngineError::ControlCommand(_) => "ControlCommand",
        }
    }
}

/// Absolute motion target produced by templates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Target {
    pub position: Point,
    pub rotation: f64,
}

/// What the dispatcher executes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase", tag = "op")]
pub enum Primitive {
    SetMode { mode: MotionMode },
    SetStepSize { mm: u32 },
    SavePosition { name: Name },
    MoveToNamed { name: Name },
    MoveTo { target: Target },
    Jog { step: DirectionalMove },
    Fused { moves: Vec<DirectionalMove> },
    /// `expect_held` marks a release that belongs to a place template.
    Open { expect_held: bool },
    Close,
    Rotate { deg: u32 },
    Home,
    ListAdd { list: Name, pose: Name },
    /// Continuous repetition: re-expands `task` and re-enqueues itself.
    Loop { task: Name },
}

impl Primitive {
    pub fn is_motion(&self) -> bool {
        matches!(
            self,
            Primitive::MoveToNamed { .. }
                | Primitive::MoveTo { .. }
                | Primitive::Jog { .. }
                | Primitive::Fused { .. }
                | Primitive::Home
        )
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::SetMode { mode } => write!(f, "set mode {mode}"),
            Primitive::SetStepSize { mm } => write!(f, "step size {mm}"),
            Primitive::SavePosition { name } => write!(f, "save position {name}"),
            Primitive::MoveToNamed { name } => write!(f, "position {name}"),
            Primitive::MoveTo { target } => {
                write!(f, "move to {} rotation {}", target.position, target.rotation)
            }
            Primitive::Jog { step } => write!(f, "{step}"),
            Primitive::Fused { moves } => {
                write!(f, "{}", Command::FusedMove(moves.clone()))
            }
            Primitive::Open { .. } => f.write_str("open"),
            Primitive::Close => f.write_str("close"),
            Primitive::Rotate { deg } => write!(f, "rotate {deg}"),
            Primitive::Home => f.write_str("home"),
            Primitive::ListAdd { list, pose } => write!(f, "list {list} add {pose}"),
            Primitive::Loop { task } => write!(f, "repeat {task} continuous"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExpansionContext {
    /// Last eligible top-level command, the referent of `again`.
    pub last: Option<Command>,
    pub depth: u8,
    /// Pose bound to [`TARGET_PLACEHOLDER`] while repeating over a list.
    pub binding: Option<Name>,
}

impl ExpansionContext {
    pub fn new(last: Option<Command>) -> Self {
        Self { last, ..Self::default() }
    }

    fn nested(&self, binding: Option<Name>) -> Result<Self, EngineError> {
        if self.depth >= MAX_REPEAT_DEPTH {
            return Err(EngineError::RecursionLimit);
        }
        Ok(Self { last: self.last.clone(), depth: self.depth + 1, binding })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Expansion {
    pub primitives: Vec<Primitive>,
    /// How many entries each position list gave up.
    pub consumed: BTreeMap<Name, usize>,
}

impl Expansion {
    /// Pops the consumed list entries from the store.
    pub fn commit(&self, store: &mut Store) -> Result<(), StoreError> {
        for (list, n) in &self.consumed {
            for _ in 0..*n {
                store.pop_front(list)?;
            }
        }
        Ok(())
    }
}

/// Expands `cmd` into primitives without mutating the store.
pub fn expand(cmd: &Command, store: &Store, ctx: &ExpansionContext) -> Result<Expansion, EngineError> {
    let mut out = Expansion::default();
    expand_into(cmd, store, ctx, &mut out)?;
    Ok(out)
}

fn expand_into(
    cmd: &Command,
    store: &Store,
    ctx: &ExpansionContext,
    out: &mut Expansion,
) -> Result<(), EngineError> {
    let cmd = match (&ctx.binding, cmd) {
        (Some(bound), c) => c.rename_pose(&placeholder(), bound),
        (None, c) => c.clone(),
    };
    let push = |out: &mut Expansion, p: Primitive| out.primitives.push(p);
    match &cmd {
        Command::SetMode(mode) => push(out, Primitive::SetMode { mode: *mode }),
        Command::SetStepSize(s) => push(out, Primitive::SetStepSize { mm: s.mm() }),
        Command::SavePosition(name) => push(out, Primitive::SavePosition { name: name.clone() }),
        Command::MoveToPosition(name) => push(out, Primitive::MoveToNamed { name: name.clone() }),
        Command::Move(step) => push(out, Primitive::Jog { step: *step }),
        Command::FusedMove(moves) => push(out, Primitive::Fused { moves: moves.clone() }),
        Command::OpenGripper => push(out, Primitive::Open { expect_held: false }),
        Command::CloseGripper => push(out, Primitive::Close),
        Command::RotateTool(deg) => push(out, Primitive::Rotate { deg: *deg }),
        Command::Home => push(out, Primitive::Home),
        Command::ListAdd { list, pose } => {
            push(out, Primitive::ListAdd { list: list.clone(), pose: pose.clone() })
        }
        Command::Pick(_)
        | Command::Place(_)
        | Command::Stack { .. }
        | Command::Hold { .. }
        | Command::Push { .. } => out.primitives.extend(expand_template(&cmd, store)?),
        Command::Sequence(children) => {
            for child in children {
                expand_into(child, store, ctx, out)?;
            }
        }
        Command::Again => {
            let last = ctx.last.as_ref().ok_or(EngineError::NothingToRepeat)?;
            if matches!(last, Command::Again) {
                return Err(EngineError::NothingToRepeat);
            }
            expand_into(last, store, ctx, out)?;
        }
        Command::RunTask(name) => {
            let task = store.lookup_task(name)?;
            run_task(task, store, &ctx.nested(ctx.binding.clone())?, out)?;
        }
        Command::Repeat { task, spec } => {
            let def = store.lookup_task(task)?;
            match spec {
                RepeatSpec::Count(k) => {
                    let inner = ctx.nested(ctx.binding.clone())?;
                    for _ in 0..*k {
                        run_task(def, store, &inner, out)?;
                    }
                }
                RepeatSpec::Continuous => {
                    // Validate once so a broken task fails at submit time.
                    ctx.nested(None)?;
                    push(out, Primitive::Loop { task: task.clone() });
                }
                RepeatSpec::List(list) => {
                    let entries = &store.lookup_list(list)?.poses;
                    let start = out.consumed.get(list).copied().unwrap_or(0);
                    if start >= entries.len() {
                        return Err(StoreError::EmptyList(list.to_string()).into());
                    }
                    for entry in entries.iter().skip(start) {
                        let inner = ctx.nested(Some(entry.clone()))?;
                        *out.consumed.entry(list.clone()).or_default() += 1;
                        run_task(def, store, &inner, out)?;
                    }
                }
            }
        }
        Command::StartRobot
        | Command::StopRobot
        | Command::StopExecution
        | Command::RecordStart(_)
        | Command::RecordFinish => return Err(EngineError::ControlCommand(cmd.to_string())),
    }
    Ok(())
}

fn run_task(
    task: &TaskDefinition,
    store: &Store,
    ctx: &ExpansionContext,
    out: &mut Expansion,
) -> Result<(), EngineError> {
    for c in task.commands() {
        expand_into(c, store, ctx, out)?;
    }
    Ok(())
}

fn placeholder() -> Name {
    Name::new(TARGET_PLACEHOLDER).expect("valid")
}

/// Net displacement of a fused move; children without a magnitude travel one
/// step.
pub fn fuse(moves: &[DirectionalMove], step_mm: u32) -> Point {
    moves.iter().fold(Point::ZERO, |acc, m| acc + displacement(m, step_mm))
}

/// Displacement of one directional move.
pub fn displacement(m: &DirectionalMove, step_mm: u32) -> Point {
    let mm = m.magnitude_mm.unwrap_or(step_mm);
    Point::from_axis(m.direction.axis(), mm_to_um(mm as f64))
}

/// Built-in pick / place / stack / hold / push skills at a named pose.
pub fn expand_template(cmd: &Command, store: &Store) -> Result<Vec<Primitive>, EngineError> {
    let at = |name: &Name| -> Result<(Point, f64), EngineError> {
        let pose = store.lookup_pose(name)?;
        Ok((pose.point(), pose.rotation))
    };
    let up = |mm: u32| Point::new(0, 0, mm_to_um(mm as f64));
    let move_to = |position: Point, rotation: f64| Primitive::MoveTo {
        target: Target { position, rotation },
    };
    let approach = up(APPROACH_MM);

    let place_at = |p: Point, r: f64, release: bool| {
        let mut prims = vec![move_to(p + approach, r), move_to(p, r)];
        if release {
            prims.push(Primitive::Open { expect_held: true });
            prims.push(move_to(p + approach, r));
        }
        prims
    };

    Ok(match cmd {
        Command::Pick(name) => {
            let (p, r) = at(name)?;
            vec![
                move_to(p + approach, r),
                Primitive::Open { expect_held: false },
                move_to(p, r),
                Primitive::Close,
                move_to(p + approach, r),
            ]
        }
        Command::Place(name) => {
            let (p, r) = at(name)?;
            place_at(p, r, true)
        }
        Command::Stack { pose, offset_mm } => {
            let (p, r) = at(pose)?;
            place_at(p + up(*offset_mm), r, true)
        }
        Command::Hold { pose, offset_mm } => {
            let (p, r) = at(pose)?;
            place_at(p + up(*offset_mm), r, false)
        }
        Command::Push { pose, direction, length_mm } => {
            let (p, r) = at(pose)?;
            let length = mm_to_um(length_mm.unwrap_or(PUSH_LENGTH_MM) as f64);
            let along = Point::from_axis(direction.axis(), length);
            vec![
                move_to(p - along + approach, r),
                move_to(p - along, r),
                move_to(p + along, r),
                move_to(p + along + approach, r),
            ]
        }
        other => return Err(EngineError::ControlCommand(other.to_string())),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordingSession {
    pub name: Name,
    pub captured: Vec<Command>,
}

/// At most one open recording session.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recorder {
    session: Option<RecordingSession>,
}

impl Recorder {
    pub fn active(&self) -> Option<&RecordingSession> {
        self.session.as_ref()
    }

    pub fn start(&mut self, name: Name) -> Result<(), EngineError> {
        if let Some(s) = &self.session {
            return Err(EngineError::AlreadyRecording(s.name.to_string()));
        }
        self.session = Some(RecordingSession { name, captured: Vec::new() });
        Ok(())
    }

    /// Captures an accepted top-level command; control commands are skipped.
    pub fn capture(&mut self, cmd: &Command) {
        if let Some(s) = &mut self.session {
            if !cmd.is_control() {
                s.captured.push(cmd.clone());
            }
        }
    }

    /// Closes the session and persists it as a task.
    pub fn finish(&mut self, store: &mut Store) -> Result<TaskDefinition, EngineError> {
        let session = self.session.take().ok_or(EngineError::NotRecording)?;
        if session.captured.is_empty() {
            return Err(EngineError::EmptyTask(session.name.to_string()));
        }
        let def = TaskDefinition::new(session.name, session.captured)?;
        store.save_task(def.clone())?;
        Ok(def)
    }
}

/// Direction of travel for a single-axis move, if any.
pub fn single_axis(delta: Point) -> Option<Direction> {
    Direction::ALL.into_iter().find(|d| {
        let a = d.axis();
        let v = delta.axes();
        let n = v.iter().filter(|c| **c != 0).count();
        n == 1 && (0..3).all(|i| v[i] == 0 || v[i].signum() == a[i])
    })
}
