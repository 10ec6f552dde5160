//! Command queue and execution loop.
//!
//! [`Dispatcher`] is single-threaded and driven by [`Dispatcher::tick`]. It
//! owns the simulator, the store and the queue of pending primitives.
//! [`Runner`] puts one on its own thread with a command channel and a
//! priority stop channel.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::geom::{mm_to_um, um_to_mm, Point};
use crate::lexicon::Lexicon;
use crate::parser::{parse, Command, MotionMode, Name, STEP_SIZE_RANGE};
use crate::sim::{Scene, SceneObject, Sim, SimEvent};
use crate::store::Store;
use crate::taskengine::{
    displacement, expand, fuse, EngineError, ExpansionContext, Primitive, Recorder,
};

/// Jog speed for continuous-mode moves, mm/s.
pub const JOG_SPEED_MM_S: f64 = 50.0;
/// Speed of point-to-point moves (named poses, templates, home), mm/s.
pub const TRAVEL_SPEED_MM_S: f64 = 250.0;
/// Default simulation tick, seconds.
pub const DEFAULT_TICK_S: f64 = 0.02;
pub const DEFAULT_STEP_MM: u32 = 20;

/// Far enough to reach any workspace boundary.
const UNBOUNDED_UM: i64 = 1_000_000_000;

#[derive(Debug, Clone)]
pub struct Config {
    pub lexicon: Lexicon,
    pub jog_speed_mm_s: f64,
    pub travel_speed_mm_s: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            lexicon: Lexicon::with_defaults(),
            jog_speed_mm_s: JOG_SPEED_MM_S,
            travel_speed_mm_s: TRAVEL_SPEED_MM_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub kind: String,
    pub message: String,
}

/// Immediate reply to a submitted line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub line: String,
    /// Canonical text of the accepted command.
    pub command: Option<String>,
    /// Primitives appended to the queue.
    pub enqueued: usize,
    pub error: Option<Rejection>,
}

impl Ack {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }

    fn accepted(line: &str, cmd: &Command, enqueued: usize) -> Self {
        Self { line: line.into(), command: Some(cmd.to_string()), enqueued, error: None }
    }

    fn rejected(line: &str, kind: &str, message: String) -> Self {
        let error = Some(Rejection { kind: kind.into(), message });
        Self { line: line.into(), command: None, enqueued: 0, error }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase", rename_all_fields = "camelCase", tag = "kind")]
pub enum EventKind {
    Started,
    Shutdown,
    MotionStarted { command: String },
    MotionFinished { command: String },
    Grasped { object: String },
    Released { object: String, z_mm: f64 },
    Clamped { axis: String, requested_mm: f64, limit_mm: f64 },
    PoseSaved { name: String },
    TaskRecorded { name: String, commands: usize },
    Warning { code: String, message: String },
    Error { command: String, code: String, message: String },
    Stopped { flushed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub tick: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EventKind::Started => f.write_str("started"),
            EventKind::Shutdown => f.write_str("shut down"),
            EventKind::MotionStarted { command } => write!(f, "started {command}"),
            EventKind::MotionFinished { command } => write!(f, "finished {command}"),
            EventKind::Grasped { object } => write!(f, "grasped {object}"),
            EventKind::Released { object, z_mm } => write!(f, "released {object} at z={z_mm}"),
            EventKind::Clamped { axis, requested_mm, limit_mm } => {
                write!(f, "clamped {axis}: {requested_mm} -> {limit_mm}")
            }
            EventKind::PoseSaved { name } => write!(f, "saved position {name}"),
            EventKind::TaskRecorded { name, commands } => {
                write!(f, "recorded task {name} ({commands} commands)")
            }
            EventKind::Warning { code, message } => write!(f, "warning {code}: {message}"),
            EventKind::Error { command, code, message } => {
                write!(f, "error {code} in {command:?}: {message}")
            }
            EventKind::Stopped { flushed } => write!(f, "stopped ({flushed} flushed)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseView {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation: f64,
    pub gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObjectView {
    pub name: String,
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub rotation: f64,
    pub radius: f64,
    pub height: f64,
    pub held: bool,
}

/// Consistent view of everything at a tick boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Snapshot {
    pub tick: u64,
    pub time_s: f64,
    pub running: bool,
    pub mode: MotionMode,
    pub step_size_mm: u32,
    pub robot: PoseView,
    pub held: Option<String>,
    pub recording: Option<String>,
    pub queue_length: usize,
    pub executing: Option<String>,
    pub objects: Vec<ObjectView>,
    pub positions: BTreeMap<String, [f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
struct Motion {
    label: String,
    from: Point,
    to: Point,
    length_um: f64,
    travelled_um: f64,
    speed_um_s: f64,
    /// Yields to the next queued primitive (continuous jogs).
    yields: bool,
}

impl Motion {
    fn position_at(&self, travelled: f64) -> Point {
        if self.length_um == 0.0 || travelled >= self.length_um {
            return self.to;
        }
        let f = travelled / self.length_um;
        let d = self.to - self.from;
        let lerp = |v: i64| (v as f64 * f).round() as i64;
        self.from + Point::new(lerp(d.x), lerp(d.y), lerp(d.z))
    }
}

pub struct Dispatcher {
    config: Config,
    sim: Sim,
    store: Store,
    recorder: Recorder,
    mode: MotionMode,
    step_mm: u32,
    running: bool,
    pending: VecDeque<Primitive>,
    executing: Option<Motion>,
    last: Option<Command>,
    tick: u64,
    time_s: f64,
    log: Option<Box<dyn Write + Send>>,
    side_events: Vec<Event>,
}

impl Dispatcher {
    pub fn new(scene: &Scene, store: Store, config: Config) -> Self {
        Self {
            config,
            sim: Sim::new(scene),
            store,
            recorder: Recorder::default(),
            mode: MotionMode::Step,
            step_mm: DEFAULT_STEP_MM,
            running: false,
            pending: VecDeque::new(),
            executing: None,
            last: None,
            tick: 0,
            time_s: 0.0,
            log: None,
            side_events: Vec::new(),
        }
    }

    /// Writes a JSON line per submission and per event.
    pub fn set_log(&mut self, log: Box<dyn Write + Send>) {
        self.log = Some(log);
    }

    pub fn sim(&self) -> &Sim {
        &self.sim
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn running(&self) -> bool {
        self.running
    }

    /// Marks the robot as started without homing it.
    pub fn set_running(&mut self, running: bool) {
        self.running = running;
    }

    pub fn mode(&self) -> MotionMode {
        self.mode
    }

    pub fn step_mm(&self) -> u32 {
        self.step_mm
    }

    pub fn recording(&self) -> Option<&Name> {
        self.recorder.active().map(|s| &s.name)
    }

    pub fn queue_len(&self) -> usize {
        self.pending.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &Primitive> {
        self.pending.iter()
    }

    pub fn is_idle(&self) -> bool {
        self.pending.is_empty() && self.executing.is_none()
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    /// Scripted scene edit standing in for a human step.
    pub fn place_object(&mut self, name: &str, position: Point, rotation: Option<f64>) -> bool {
        self.sim.place_object(name, position, rotation)
    }

    /// Parses, expands and enqueues one line. Never waits for execution.
    pub fn submit(&mut self, line: &str) -> Ack {
        let ack = self.submit_inner(line);
        self.log_json(&serde_json::json!({
            "tick": self.tick, "t": self.time_s, "line": line, "ack": &ack,
        }));
        ack
    }

    fn submit_inner(&mut self, line: &str) -> Ack {
        let tokens = self.config.lexicon.normalize(line);
        let cmd = match parse(&tokens) {
            Ok(c) => c,
            Err(e) => return Ack::rejected(line, e.kind(), e.to_string()),
        };
        // Stop is honored regardless of the running gate.
        match &cmd {
            Command::StopExecution => {
                self.stop();
                return Ack::accepted(line, &cmd, 0);
            }
            Command::StartRobot => {
                self.running = true;
                self.pending.push_back(Primitive::Home);
                self.push_event(EventKind::Started);
                return Ack::accepted(line, &cmd, 1);
            }
            _ if !self.running => {
                return Ack::rejected(line, "NotRunning", "robot is not started".into());
            }
            Command::StopRobot => {
                self.stop();
                self.running = false;
                self.push_event(EventKind::Shutdown);
                return Ack::accepted(line, &cmd, 0);
            }
            Command::RecordStart(name) => {
                return match self.recorder.start(name.clone()) {
                    Ok(()) => Ack::accepted(line, &cmd, 0),
                    Err(e) => engine_rejection(line, e),
                };
            }
            Command::RecordFinish => {
                return match self.recorder.finish(&mut self.store) {
                    Ok(def) => {
                        let commands = def.commands().len();
                        let name = def.name().to_string();
                        self.push_event(EventKind::TaskRecorded { name, commands });
                        Ack::accepted(line, &cmd, 0)
                    }
                    Err(e) => engine_rejection(line, e),
                };
            }
            _ => {}
        }

        let resolved = match cmd {
            Command::Again => match &self.last {
                Some(last) => last.clone(),
                None => return engine_rejection(line, EngineError::NothingToRepeat),
            },
            other => other,
        };
        let ctx = ExpansionContext::new(self.last.clone());
        let expansion = match expand(&resolved, &self.store, &ctx) {
            Ok(x) => x,
            Err(e) => return engine_rejection(line, e),
        };
        if let Err(e) = self.check_named_targets(&expansion.primitives) {
            return engine_rejection(line, e);
        }
        if let Err(e) = expansion.commit(&mut self.store) {
            return engine_rejection(line, e.into());
        }
        let n = expansion.primitives.len();
        self.pending.extend(expansion.primitives);
        self.recorder.capture(&resolved);
        let ack = Ack::accepted(line, &resolved, n);
        self.last = Some(resolved);
        ack
    }

    /// Rejects moves to poses that neither exist nor get saved earlier in the
    /// queue.
    fn check_named_targets(&self, new: &[Primitive]) -> Result<(), EngineError> {
        let mut saved: BTreeSet<&Name> = self.pending.iter().filter_map(saved_name).collect();
        for p in new {
            if let Primitive::MoveToNamed { name } = p {
                if !saved.contains(name) {
                    self.store.lookup_pose(name)?;
                }
            }
            if let Some(n) = saved_name(p) {
                saved.insert(n);
            }
        }
        Ok(())
    }

    /// Halts the current motion where it is and flushes the queue. The
    /// recording session, if any, stays open.
    pub fn stop(&mut self) {
        let halted = self.executing.take();
        let flushed = self.pending.len() + usize::from(halted.is_some());
        self.pending.clear();
        if let Some(m) = halted {
            self.push_event(EventKind::MotionFinished { command: m.label });
        }
        self.push_event(EventKind::Stopped { flushed });
    }

    /// Advances simulated time by `dt` seconds. The result starts with any
    /// events raised by submissions since the previous tick.
    pub fn tick(&mut self, dt: f64) -> Vec<Event> {
        assert!(dt > 0.0, "tick needs a positive duration");
        let mut stamped = self.take_side_events();
        self.tick += 1;
        self.time_s += dt;
        let mut events = Vec::new();
        let mut budget = true;

        loop {
            if let Some(m) = &mut self.executing {
                if m.yields && !self.pending.is_empty() {
                    let label = m.label.clone();
                    self.executing = None;
                    events.push(EventKind::MotionFinished { command: label });
                    continue;
                }
                if !budget {
                    break;
                }
                budget = false;
                m.travelled_um += m.speed_um_s * dt;
                let target = m.position_at(m.travelled_um);
                let done = m.travelled_um >= m.length_um;
                let label = m.label.clone();
                let delta = target - self.sim.position();
                events.extend(self.sim.apply_displacement(delta).into_iter().map(sim_event));
                if done {
                    self.executing = None;
                    events.push(EventKind::MotionFinished { command: label });
                }
                continue;
            }
            let Some(next) = self.pending.front() else { break };
            // A motion or loop starting now needs this tick's budget.
            if !budget && (next.is_motion() || matches!(next, Primitive::Loop { .. })) {
                break;
            }
            let next = self.pending.pop_front().expect("front exists");
            if let Primitive::Loop { .. } = next {
                budget = false;
            }
            self.execute(next, &mut events, &mut budget);
        }

        for kind in events {
            let e = Event { tick: self.tick, kind };
            self.log_json(&serde_json::json!({ "tick": e.tick, "t": self.time_s, "event": &e }));
            stamped.push(e);
        }
        stamped
    }

    fn execute(&mut self, p: Primitive, events: &mut Vec<EventKind>, budget: &mut bool) {
        let label = p.to_string();
        match p {
            Primitive::SetMode { mode } => self.mode = mode,
            Primitive::SetStepSize { mm } => {
                self.step_mm = mm.clamp(STEP_SIZE_RANGE.0, STEP_SIZE_RANGE.1)
            }
            Primitive::SavePosition { name } => {
                let pose = self.sim.robot().to_pose();
                match self.store.save_pose(name.clone(), pose) {
                    Ok(()) => events.push(EventKind::PoseSaved { name: name.to_string() }),
                    Err(e) => events.push(error_event(&label, e.into())),
                }
            }
            Primitive::MoveToNamed { name } => match self.store.lookup_pose(&name) {
                Ok(pose) => {
                    self.sim.set_rotation(pose.rotation);
                    self.start_motion(label, pose.point(), self.config.travel_speed_mm_s, false, events);
                }
                Err(e) => events.push(error_event(&label, e.into())),
            },
            Primitive::MoveTo { target } => {
                self.sim.set_rotation(target.rotation);
                self.start_motion(label, target.position, self.config.travel_speed_mm_s, false, events);
            }
            Primitive::Home => {
                let home = self.sim.home;
                self.sim.set_rotation(home.rotation);
                self.start_motion(label, home.point(), self.config.travel_speed_mm_s, false, events);
            }
            Primitive::Jog { step } => match self.mode {
                MotionMode::Step => self.jump(label, displacement(&step, self.step_mm), events, budget),
                MotionMode::Continuous => {
                    let (delta, yields) = match step.magnitude_mm {
                        Some(_) => (displacement(&step, self.step_mm), false),
                        None => (Point::from_axis(step.direction.axis(), UNBOUNDED_UM), true),
                    };
                    let to = self.sim.position() + delta;
                    self.start_motion(label, to, self.config.jog_speed_mm_s, yields, events);
                }
            },
            Primitive::Fused { moves } => {
                let delta = fuse(&moves, self.step_mm);
                match self.mode {
                    MotionMode::Step => self.jump(label, delta, events, budget),
                    MotionMode::Continuous => {
                        let to = self.sim.position() + delta;
                        self.start_motion(label, to, self.config.jog_speed_mm_s, false, events);
                    }
                }
            }
            Primitive::Open { expect_held } => match self.sim.open_gripper() {
                Some(e) => events.push(sim_event(e)),
                None if expect_held => events.push(EventKind::Warning {
                    code: "NotHolding".into(),
                    message: "released with nothing in the gripper".into(),
                }),
                None => {}
            },
            Primitive::Close => events.extend(self.sim.close_gripper().map(sim_event)),
            Primitive::Rotate { deg } => self.sim.rotate_tool(deg as f64),
            Primitive::ListAdd { list, pose } => {
                if let Err(e) = self.store.list_push(list, pose) {
                    events.push(error_event(&label, e.into()));
                }
            }
            Primitive::Loop { task } => {
                // A newer command ends a continuous repetition.
                if !self.pending.is_empty() {
                    return;
                }
                let ctx = ExpansionContext::new(self.last.clone());
                let next = expand(&Command::RunTask(task.clone()), &self.store, &ctx)
                    .and_then(|x| x.commit(&mut self.store).map(|()| x).map_err(Into::into));
                match next {
                    Ok(x) => {
                        self.pending.extend(x.primitives);
                        self.pending.push_back(Primitive::Loop { task });
                    }
                    Err(e) => events.push(error_event(&label, e)),
                }
            }
        }
    }

    /// Step-mode move: reaches its waypoint at the end of the tick.
    fn jump(&mut self, label: String, delta: Point, events: &mut Vec<EventKind>, budget: &mut bool) {
        *budget = false;
        events.push(EventKind::MotionStarted { command: label.clone() });
        events.extend(self.sim.apply_displacement(delta).into_iter().map(sim_event));
        events.push(EventKind::MotionFinished { command: label });
    }

    fn start_motion(
        &mut self,
        label: String,
        to: Point,
        speed_mm_s: f64,
        yields: bool,
        events: &mut Vec<EventKind>,
    ) {
        let from = self.sim.position();
        let (to, clamps) = self.sim.clamp_target(to);
        // Unbounded jogs always hit a wall; that is their stopping rule.
        if !yields {
            events.extend(clamps.into_iter().map(sim_event));
        }
        events.push(EventKind::MotionStarted { command: label.clone() });
        self.executing = Some(Motion {
            label,
            from,
            to,
            length_um: (to - from).norm(),
            travelled_um: 0.0,
            speed_um_s: speed_mm_s * mm_to_um(1.0) as f64,
            yields,
        });
    }

    /// Ticks until the queue is drained, at most `max_ticks` times. Returns
    /// the events and whether the dispatcher went idle.
    pub fn drain(&mut self, dt: f64, max_ticks: u64) -> (Vec<Event>, bool) {
        let mut events = Vec::new();
        for _ in 0..max_ticks {
            if self.is_idle() {
                return (events, true);
            }
            events.extend(self.tick(dt));
        }
        let idle = self.is_idle();
        (events, idle)
    }

    pub fn snapshot(&self) -> Snapshot {
        let r = self.sim.robot();
        let [x, y, z] = r.position.to_mm();
        Snapshot {
            tick: self.tick,
            time_s: self.time_s,
            running: self.running,
            mode: self.mode,
            step_size_mm: self.step_mm,
            robot: PoseView { x, y, z, rotation: r.rotation, gripper: r.gripper },
            held: self.sim.held().map(|o| o.name.clone()),
            recording: self.recording().map(Name::to_string),
            queue_length: self.pending.len(),
            executing: self.executing.as_ref().map(|m| m.label.clone()),
            objects: self.sim.objects().map(object_view).collect(),
            positions: self
                .store
                .poses()
                .map(|(n, p)| (n.to_string(), [p.x, p.y, p.z]))
                .collect(),
        }
    }

    fn push_event(&mut self, kind: EventKind) {
        // Submit-time events share the log but belong to no tick.
        let e = Event { tick: self.tick, kind };
        self.log_json(&serde_json::json!({ "tick": e.tick, "t": self.time_s, "event": &e }));
        self.side_events.push(e);
    }

    /// Events raised outside `tick` (start, shutdown, stop, task recorded).
    pub fn take_side_events(&mut self) -> Vec<Event> {
        std::mem::take(&mut self.side_events)
    }

    fn log_json(&mut self, value: &serde_json::Value) {
        if let Some(log) = &mut self.log {
            // Logging is best effort; a full disk must not stop the robot.
            let _ = writeln!(log, "{value}");
        }
    }
}

fn saved_name(p: &Primitive) -> Option<&Name> {
    match p {
        Primitive::SavePosition { name } => Some(name),
        _ => None,
    }
}

fn object_view(o: &SceneObject) -> ObjectView {
    let [x, y, z] = o.position.to_mm();
    ObjectView {
        name: o.name.clone(),
        x,
        y,
        z,
        rotation: o.rotation,
        radius: o.grasp_radius as f64 / mm_to_um(1.0) as f64,
        height: um_to_mm(o.height),
        held: o.is_held(),
    }
}

fn sim_event(e: SimEvent) -> EventKind {
    match e {
        SimEvent::Clamped { axis, requested_mm, limit_mm } => {
            EventKind::Clamped { axis: axis.to_string(), requested_mm, limit_mm }
        }
        SimEvent::Grasped { object } => EventKind::Grasped { object },
        SimEvent::Released { object, z_mm } => EventKind::Released { object, z_mm },
    }
}

fn error_event(command: &str, e: EngineError) -> EventKind {
    EventKind::Error { command: command.into(), code: e.kind().into(), message: e.to_string() }
}

fn engine_rejection(line: &str, e: EngineError) -> Ack {
    Ack::rejected(line, e.kind(), e.to_string())
}

type AckCallback = Box<dyn FnOnce(Ack) + Send>;
type TickCallback = Box<dyn FnMut(&Snapshot, &[Event]) + Send>;

struct Inbound {
    seq: u64,
    line: String,
    reply: AckCallback,
}

struct Shared {
    /// Serializes sequence assignment with the send so a stop barrier sees
    /// every earlier command already in the channel.
    next_seq: Mutex<u64>,
    snapshot: RwLock<Snapshot>,
    shutdown: AtomicBool,
}

/// Cloneable handle to a dispatcher running on its own thread.
#[derive(Clone)]
pub struct RunnerHandle {
    shared: Arc<Shared>,
    commands: Sender<Inbound>,
    stops: Sender<u64>,
}

impl RunnerHandle {
    /// Queues a line; `reply` runs on the dispatcher thread with the ack.
    pub fn submit(&self, line: impl Into<String>, reply: impl FnOnce(Ack) + Send + 'static) {
        let mut seq = self.shared.next_seq.lock().expect("seq lock");
        let msg = Inbound { seq: *seq, line: line.into(), reply: Box::new(reply) };
        *seq += 1;
        // A closed channel means the runner is gone; the callback is dropped.
        let _ = self.commands.send(msg);
    }

    /// Submits and waits for the ack (not for execution).
    pub fn submit_wait(&self, line: impl Into<String>) -> Option<Ack> {
        let (tx, rx) = mpsc::channel();
        self.submit(line, move |ack| {
            let _ = tx.send(ack);
        });
        rx.recv().ok()
    }

    /// Priority stop: overtakes everything still waiting in the command
    /// channel.
    pub fn stop(&self) {
        let seq = self.shared.next_seq.lock().expect("seq lock");
        let _ = self.stops.send(*seq);
    }

    /// Latest published snapshot.
    pub fn snapshot(&self) -> Snapshot {
        self.shared.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn shutdown(&self) {
        self.shared.shutdown.store(true, Ordering::SeqCst);
    }
}

pub struct Runner {
    handle: RunnerHandle,
    thread: Option<JoinHandle<Dispatcher>>,
}

impl Runner {
    /// Starts the dispatcher thread ticking every `tick` of wall time.
    /// `on_tick` receives each snapshot and the events of that tick.
    pub fn spawn(mut dispatcher: Dispatcher, tick: Duration, mut on_tick: TickCallback) -> Self {
        let (commands, command_rx) = mpsc::channel::<Inbound>();
        let (stops, stop_rx) = mpsc::channel::<u64>();
        let shared = Arc::new(Shared {
            next_seq: Mutex::new(0),
            snapshot: RwLock::new(dispatcher.snapshot()),
            shutdown: AtomicBool::new(false),
        });
        let handle = RunnerHandle { shared: shared.clone(), commands, stops };
        let thread = thread::spawn(move || {
            let dt = tick.as_secs_f64();
            let mut deadline = Instant::now();
            let mut backlog: VecDeque<Inbound> = VecDeque::new();
            while !shared.shutdown.load(Ordering::SeqCst) {
                // Priority channel first.
                while let Ok(barrier) = stop_rx.try_recv() {
                    handle_stop(&mut dispatcher, &command_rx, &mut backlog, barrier);
                }
                backlog.extend(command_rx.try_iter());
                for m in backlog.drain(..) {
                    let ack = dispatcher.submit(&m.line);
                    (m.reply)(ack);
                }
                let events = dispatcher.tick(dt);
                let snap = dispatcher.snapshot();
                *shared.snapshot.write().expect("snapshot lock") = snap.clone();
                on_tick(&snap, &events);

                deadline += tick;
                let now = Instant::now();
                if deadline > now {
                    // Wake early for a stop.
                    match stop_rx.recv_timeout(deadline - now) {
                        Ok(barrier) => {
                            handle_stop(&mut dispatcher, &command_rx, &mut backlog, barrier);
                            let late = dispatcher.take_side_events();
                            if !late.is_empty() {
                                let snap = dispatcher.snapshot();
                                *shared.snapshot.write().expect("snapshot lock") = snap.clone();
                                on_tick(&snap, &late);
                            }
                            let now = Instant::now();
                            if deadline > now {
                                thread::sleep(deadline - now);
                            }
                        }
                        Err(RecvTimeoutError::Timeout) => {}
                        Err(RecvTimeoutError::Disconnected) => thread::sleep(deadline - now),
                    }
                } else {
                    deadline = now;
                }
            }
            dispatcher
        });
        Self { handle, thread: Some(thread) }
    }

    pub fn handle(&self) -> RunnerHandle {
        self.handle.clone()
    }

    /// Stops the thread and returns the dispatcher.
    pub fn join(mut self) -> Dispatcher {
        self.handle.shutdown();
        self.thread.take().expect("joined once").join().expect("dispatcher thread panicked")
    }
}

impl Drop for Runner {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.handle.shutdown();
            let _ = t.join();
        }
    }
}

/// Submits everything that arrived before the stop, then stops.
fn handle_stop(
    dispatcher: &mut Dispatcher,
    command_rx: &Receiver<Inbound>,
    backlog: &mut VecDeque<Inbound>,
    barrier: u64,
) {
    backlog.extend(command_rx.try_iter());
    while backlog.front().is_some_and(|m| m.seq < barrier) {
        let m = backlog.pop_front().expect("front");
        let ack = dispatcher.submit(&m.line);
        (m.reply)(ack);
    }
    dispatcher.stop();
}
