//! Command grammar.
//!
//! A line is split on `and` into clauses (a flat [`Command::Sequence`]), and a
//! clause is split on `then` into directional parts that fuse into a single
//! displacement ([`Command::FusedMove`]). Every other clause is one of the
//! single-command forms, each identified by its first token.
//!
//! [`Command`]'s `Display` output is the canonical text form: it re-parses to
//! an equal AST, which is what the store persists.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{tokenize, Token};

/// Smallest and largest accepted step sizes, in mm.
pub const STEP_SIZE_RANGE: (u32, u32) = (1, 500);

/// Name reserved for the pose bound by `repeat <task> <list>`.
pub const TARGET_PLACEHOLDER: &str = "target";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("empty command")]
    Empty,
    #[error("unknown command {0:?}")]
    UnknownCommand(String),
    #[error("malformed arguments for {head:?}: {reason}")]
    MalformedArguments { head: String, reason: String },
    #[error("`then` can only join directional moves, found {0:?}")]
    MixedConnective(String),
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::Empty => "Empty",
            ParseError::UnknownCommand(_) => "UnknownCommand",
            ParseError::MalformedArguments { .. } => "MalformedArguments",
            ParseError::MixedConnective(_) => "MixedConnective",
        }
    }
}

/// A pose, task, or list identifier: lowercase, nonempty, no whitespace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Name(String);

impl Name {
    /// Builds a name from free text, joining words with `_`. Returns `None`
    /// for text that would not survive a tokenize round trip.
    pub fn new(raw: &str) -> Option<Self> {
        let joined = raw.split_whitespace().collect::<Vec<_>>().join("_").to_lowercase();
        if joined.is_empty() || joined.contains('#') || CONNECTIVES.contains(&joined.as_str()) {
            return None;
        }
        Some(Name(joined))
    }

    fn from_tokens(tokens: &[Token]) -> Option<Self> {
        let text = tokens.iter().map(Token::text).collect::<Vec<_>>().join(" ");
        Self::new(&text)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Name {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Left,
    Right,
    Back,
    Front,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Up,
        Direction::Down,
        Direction::Left,
        Direction::Right,
        Direction::Back,
        Direction::Front,
    ];

    pub fn from_word(w: &str) -> Option<Self> {
        Some(match w {
            "up" => Direction::Up,
            "down" => Direction::Down,
            "left" => Direction::Left,
            "right" => Direction::Right,
            "back" => Direction::Back,
            "front" => Direction::Front,
            _ => return None,
        })
    }

    pub fn word(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Back => "back",
            Direction::Front => "front",
        }
    }

    /// Unit axis vector: front=+x, back=−x, left=+y, right=−y, up=+z, down=−z.
    pub fn axis(self) -> [i64; 3] {
        match self {
            Direction::Front => [1, 0, 0],
            Direction::Back => [-1, 0, 0],
            Direction::Left => [0, 1, 0],
            Direction::Right => [0, -1, 0],
            Direction::Up => [0, 0, 1],
            Direction::Down => [0, 0, -1],
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

/// `<direction> [<mm>]`; without a magnitude the current step size applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DirectionalMove {
    pub direction: Direction,
    pub magnitude_mm: Option<u32>,
}

impl DirectionalMove {
    pub fn new(direction: Direction, magnitude_mm: Option<u32>) -> Self {
        Self { direction, magnitude_mm }
    }
}

impl fmt::Display for DirectionalMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.magnitude_mm {
            Some(mm) => write!(f, "{} {mm}", self.direction),
            None => write!(f, "{}", self.direction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionMode {
    Step,
    Continuous,
}

impl fmt::Display for MotionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionMode::Step => "step",
            MotionMode::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSize {
    Low,
    Medium,
    High,
    Millimeters(u32),
}

impl StepSize {
    /// Resolved step length in mm.
    pub fn mm(self) -> u32 {
        match self {
            StepSize::Low => 5,
            StepSize::Medium => 20,
            StepSize::High => 50,
            StepSize::Millimeters(mm) => mm,
        }
    }
}

impl fmt::Display for StepSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSize::Low => f.write_str("low"),
            StepSize::Medium => f.write_str("medium"),
            StepSize::High => f.write_str("high"),
            StepSize::Millimeters(mm) => write!(f, "{mm}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum RepeatSpec {
    Count(u32),
    Continuous,
    List(Name),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Command {
    StartRobot,
    StopRobot,
    SetMode(MotionMode),
    SavePosition(Name),
    MoveToPosition(Name),
    Move(DirectionalMove),
    StopExecution,
    SetStepSize(StepSize),
    OpenGripper,
    CloseGripper,
    RotateTool(u32),
    Home,
    RecordStart(Name),
    RecordFinish,
    RunTask(Name),
    Repeat { task: Name, spec: RepeatSpec },
    Pick(Name),
    Place(Name),
    Stack { pose: Name, offset_mm: u32 },
    /// Like `Stack`, but the gripper keeps holding at the target.
    Hold { pose: Name, offset_mm: u32 },
    Push { pose: Name, direction: Direction, length_mm: Option<u32> },
    /// `list <name> add <pose>`: appends a pose name to a position list.
    ListAdd { list: Name, pose: Name },
    Again,
    Sequence(Vec<Command>),
    FusedMove(Vec<DirectionalMove>),
}

impl Command {
    /// Recording, stopping and start-up commands steer the interpreter itself.
    pub fn is_control(&self) -> bool {
        matches!(
            self,
            Command::StartRobot
                | Command::StopRobot
                | Command::StopExecution
                | Command::RecordStart(_)
                | Command::RecordFinish
                | Command::Again
        )
    }

    /// Rewrites every pose reference equal to `from` into `to`.
    pub fn rename_pose(&self, from: &Name, to: &Name) -> Command {
        let swap = |n: &Name| if n == from { to.clone() } else { n.clone() };
        match self {
            Command::MoveToPosition(n) => Command::MoveToPosition(swap(n)),
            Command::SavePosition(n) => Command::SavePosition(swap(n)),
            Command::Pick(n) => Command::Pick(swap(n)),
            Command::Place(n) => Command::Place(swap(n)),
            Command::Stack { pose, offset_mm } => {
                Command::Stack { pose: swap(pose), offset_mm: *offset_mm }
            }
            Command::Hold { pose, offset_mm } => {
                Command::Hold { pose: swap(pose), offset_mm: *offset_mm }
            }
            Command::Push { pose, direction, length_mm } => Command::Push {
                pose: swap(pose),
                direction: *direction,
                length_mm: *length_mm,
            },
            Command::ListAdd { list, pose } => {
                Command::ListAdd { list: list.clone(), pose: swap(pose) }
            }
            Command::Sequence(children) => {
                Command::Sequence(children.iter().map(|c| c.rename_pose(from, to)).collect())
            }
            other => other.clone(),
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::StartRobot => f.write_str("start robot"),
            Command::StopRobot => f.write_str("stop robot"),
            Command::SetMode(mode) => write!(f, "set mode {mode}"),
            Command::SavePosition(n) => write!(f, "save position {n}"),
            Command::MoveToPosition(n) => write!(f, "position {n}"),
            Command::Move(m) => write!(f, "{m}"),
            Command::StopExecution => f.write_str("stop execution"),
            Command::SetStepSize(s) => write!(f, "step size {s}"),
            Command::OpenGripper => f.write_str("open"),
            Command::CloseGripper => f.write_str("close"),
            Command::RotateTool(deg) => write!(f, "rotate {deg}"),
            Command::Home => f.write_str("home"),
            Command::RecordStart(n) => write!(f, "record {n}"),
            Command::RecordFinish => f.write_str("finish"),
            Command::RunTask(n) => write!(f, "task {n}"),
            Command::Repeat { task, spec } => match spec {
                RepeatSpec::Count(k) => write!(f, "repeat {task} {k}"),
                RepeatSpec::Continuous => write!(f, "repeat {task} continuous"),
                RepeatSpec::List(list) => write!(f, "repeat {task} {list}"),
            },
            Command::Pick(n) => write!(f, "pick {n}"),
            Command::Place(n) => write!(f, "place {n}"),
            Command::Stack { pose, offset_mm } => write!(f, "stack {pose} {offset_mm}"),
            Command::Hold { pose, offset_mm } => write!(f, "hold {pose} {offset_mm}"),
            Command::Push { pose, direction, length_mm } => match length_mm {
                Some(l) => write!(f, "push {pose} {direction} {l}"),
                None => write!(f, "push {pose} {direction}"),
            },
            Command::ListAdd { list, pose } => write!(f, "list {list} add {pose}"),
            Command::Again => f.write_str("again"),
            Command::Sequence(children) => {
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" and ")?;
                    }
                    write!(f, "{c}")?;
                }
                Ok(())
            }
            Command::FusedMove(moves) => {
                for (i, m) in moves.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" then ")?;
                    }
                    write!(f, "{m}")?;
                }
                Ok(())
            }
        }
    }
}

const CONNECTIVES: [&str; 2] = ["and", "then"];

const HEADS: [&str; 29] = [
    "again", "back", "close", "down", "finish", "front", "hold", "home", "left", "list", "load",
    "move", "open", "pick", "place", "position", "push", "record", "repeat", "right", "rotate",
    "save", "set", "stack", "start", "step", "stop", "task", "up",
];

/// Every keyword a command may start with, sorted and deduplicated.
pub fn command_heads() -> Vec<&'static str> {
    let mut heads = HEADS.to_vec();
    heads.sort_unstable();
    heads.dedup();
    heads
}

/// Result of parsing one submitted line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutcome(pub Result<Command, ParseError>);

impl ParseOutcome {
    pub fn command(&self) -> Option<&Command> {
        self.0.as_ref().ok()
    }

    pub fn diagnostic(&self) -> Option<String> {
        self.0.as_ref().err().map(ToString::to_string)
    }
}

/// Parses alias-resolved tokens into one command.
pub fn parse(tokens: &[Token]) -> Result<Command, ParseError> {
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let clauses: Vec<&[Token]> = tokens.split(|t| t.is_word("and")).collect();
    let mut commands = Vec::with_capacity(clauses.len());
    for clause in &clauses {
        if clause.is_empty() {
            return Err(malformed("and", "`and` needs a command on both sides"));
        }
        commands.push(parse_clause(clause)?);
    }
    if commands.len() == 1 {
        return Ok(commands.pop().expect("one clause"));
    }
    if let Some(bad) = commands.iter().find(|c| {
        matches!(c, Command::RecordStart(_) | Command::RecordFinish | Command::StopExecution)
    }) {
        return Err(malformed("and", &format!("{bad:?} cannot be concatenated")));
    }
    Ok(Command::Sequence(commands))
}

/// Convenience: tokenize without aliases, then parse.
pub fn parse_line(line: &str) -> Result<Command, ParseError> {
    parse(&tokenize(line))
}

fn malformed(head: &str, reason: &str) -> ParseError {
    ParseError::MalformedArguments { head: head.to_string(), reason: reason.to_string() }
}

fn parse_clause(tokens: &[Token]) -> Result<Command, ParseError> {
    if !tokens.iter().any(|t| t.is_word("then")) {
        return parse_single(tokens);
    }
    let mut moves = Vec::new();
    for part in tokens.split(|t| t.is_word("then")) {
        if part.is_empty() {
            return Err(malformed("then", "`then` needs a move on both sides"));
        }
        match parse_single(part) {
            Ok(Command::Move(m)) => moves.push(m),
            // A nested fused clause cannot occur: `then` was split above.
            Ok(other) => return Err(ParseError::MixedConnective(other.to_string())),
            Err(ParseError::UnknownCommand(w)) => return Err(ParseError::MixedConnective(w)),
            Err(e) => return Err(e),
        }
    }
    Ok(Command::FusedMove(moves))
}

fn parse_single(tokens: &[Token]) -> Result<Command, ParseError> {
    let (head_tok, args) = tokens.split_first().ok_or(ParseError::Empty)?;
    let Some(head) = head_tok.as_word() else {
        return Err(ParseError::UnknownCommand(head_tok.text().to_string()));
    };
    let bad = |reason: &str| malformed(head, reason);
    let no_args = |cmd: Command| {
        if args.is_empty() {
            Ok(cmd)
        } else {
            Err(bad("unexpected trailing words"))
        }
    };

    if let Some(direction) = Direction::from_word(head) {
        return parse_move(direction, args).ok_or_else(|| bad("expected an optional distance"));
    }

    match head {
        "move" => {
            let (dir, rest) = args.split_first().ok_or_else(|| bad("expected a direction"))?;
            let direction = dir
                .as_word()
                .and_then(Direction::from_word)
                .ok_or_else(|| bad("expected a direction"))?;
            parse_move(direction, rest).ok_or_else(|| bad("expected an optional distance"))
        }
        "start" => match args {
            [t] if t.is_word("robot") => Ok(Command::StartRobot),
            _ => Err(bad("expected `start robot`")),
        },
        "stop" => match args {
            [] => Ok(Command::StopExecution),
            [t] if t.is_word("execution") => Ok(Command::StopExecution),
            [t] if t.is_word("robot") => Ok(Command::StopRobot),
            _ => Err(bad("expected `stop robot` or `stop execution`")),
        },
        "set" => match args {
            [m, v] if m.is_word("mode") && v.is_word("step") => {
                Ok(Command::SetMode(MotionMode::Step))
            }
            [m, v] if m.is_word("mode") && v.is_word("continuous") => {
                Ok(Command::SetMode(MotionMode::Continuous))
            }
            _ => Err(bad("expected `set mode step|continuous`")),
        },
        "save" => match args {
            [p, rest @ ..] if p.is_word("position") => {
                parse_name(rest).map(Command::SavePosition).ok_or_else(|| bad("expected a name"))
            }
            _ => Err(bad("expected `save position <name>`")),
        },
        "position" => parse_name(args)
            .map(Command::MoveToPosition)
            .ok_or_else(|| bad("expected a pose name")),
        "load" => match args {
            [p, rest @ ..] if p.is_word("position") => parse_name(rest)
                .map(Command::MoveToPosition)
                .ok_or_else(|| bad("expected a pose name")),
            _ => Err(bad("expected `load position <name>`")),
        },
        "step" => {
            let [s, value] = args else {
                return Err(bad("expected `step size <low|medium|high|mm>`"));
            };
            if !s.is_word("size") {
                return Err(bad("expected `step size`"));
            }
            let size = match value {
                Token::Word(w) if w == "low" => StepSize::Low,
                Token::Word(w) if w == "medium" => StepSize::Medium,
                Token::Word(w) if w == "high" => StepSize::High,
                Token::Number { value, .. }
                    if (STEP_SIZE_RANGE.0..=STEP_SIZE_RANGE.1).contains(value) =>
                {
                    StepSize::Millimeters(*value)
                }
                _ => return Err(bad("step size must be low, medium, high or 1..=500 mm")),
            };
            Ok(Command::SetStepSize(size))
        }
        "open" | "close" => {
            let cmd = if head == "open" { Command::OpenGripper } else { Command::CloseGripper };
            match args {
                [] => Ok(cmd),
                [t] if t.is_word("tool") || t.is_word("gripper") => Ok(cmd),
                _ => Err(bad("unexpected trailing words")),
            }
        }
        "rotate" => {
            let rest = match args {
                [t, rest @ ..] if t.is_word("tool") || t.is_word("gripper") => rest,
                rest => rest,
            };
            match rest {
                [Token::Number { value, .. }] => Ok(Command::RotateTool(*value)),
                _ => Err(bad("expected an angle in degrees")),
            }
        }
        "home" => no_args(Command::Home),
        "record" => parse_name(args).map(Command::RecordStart).ok_or_else(|| bad("expected a name")),
        "finish" => no_args(Command::RecordFinish),
        "task" => parse_name(args).map(Command::RunTask).ok_or_else(|| bad("expected a task name")),
        "again" => no_args(Command::Again),
        "repeat" => {
            let (last, name_toks) =
                args.split_last().ok_or_else(|| bad("expected `repeat <task> <count|list>`"))?;
            let task = parse_name(name_toks).ok_or_else(|| bad("expected a task name"))?;
            let spec = match last {
                Token::Number { value, .. } => RepeatSpec::Count(*value),
                Token::Word(w) if w == "continuous" => RepeatSpec::Continuous,
                Token::Word(w) => {
                    RepeatSpec::List(Name::new(w).ok_or_else(|| bad("expected a list name"))?)
                }
            };
            Ok(Command::Repeat { task, spec })
        }
        "pick" => parse_name(args).map(Command::Pick).ok_or_else(|| bad("expected a pose name")),
        "place" => parse_name(args).map(Command::Place).ok_or_else(|| bad("expected a pose name")),
        "stack" | "hold" => {
            let (last, rest) =
                args.split_last().ok_or_else(|| bad("expected `<pose> [distance] <mm>`"))?;
            let offset_mm = last.as_number().ok_or_else(|| bad("expected a vertical offset"))?;
            let rest = match rest {
                [name @ .., d] if d.is_word("distance") => name,
                name => name,
            };
            let pose = parse_name(rest).ok_or_else(|| bad("expected a pose name"))?;
            Ok(if head == "stack" {
                Command::Stack { pose, offset_mm }
            } else {
                Command::Hold { pose, offset_mm }
            })
        }
        "push" => {
            let (length_mm, rest) = match args.split_last() {
                Some((Token::Number { value, .. }, rest)) => (Some(*value), rest),
                _ => (None, args),
            };
            let (dir, name_toks) =
                rest.split_last().ok_or_else(|| bad("expected `push <pose> <direction>`"))?;
            let direction = dir
                .as_word()
                .and_then(Direction::from_word)
                .ok_or_else(|| bad("expected a direction"))?;
            let pose = parse_name(name_toks).ok_or_else(|| bad("expected a pose name"))?;
            Ok(Command::Push { pose, direction, length_mm })
        }
        "list" => {
            let add = args
                .iter()
                .position(|t| t.is_word("add"))
                .ok_or_else(|| bad("expected `list <name> add <pose>`"))?;
            let list = parse_name(&args[..add]).ok_or_else(|| bad("expected a list name"))?;
            let pose = parse_name(&args[add + 1..]).ok_or_else(|| bad("expected a pose name"))?;
            Ok(Command::ListAdd { list, pose })
        }
        _ => Err(ParseError::UnknownCommand(head.to_string())),
    }
}

fn parse_move(direction: Direction, args: &[Token]) -> Option<Command> {
    match args {
        [] => Some(Command::Move(DirectionalMove::new(direction, None))),
        [Token::Number { value, .. }] => {
            Some(Command::Move(DirectionalMove::new(direction, Some(*value))))
        }
        _ => None,
    }
}

/// `name := (word | number) [number]`, joined with `_`.
fn parse_name(tokens: &[Token]) -> Option<Name> {
    match tokens {
        [_] => Name::from_tokens(tokens),
        [_, Token::Number { .. }] => Name::from_tokens(tokens),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p(line: &str) -> Result<Command, ParseError> {
        parse_line(line)
    }

    fn name(s: &str) -> Name {
        Name::new(s).unwrap()
    }

    fn mv(d: Direction, m: Option<u32>) -> DirectionalMove {
        DirectionalMove::new(d, m)
    }

    #[test]
    fn examples() {
        assert_eq!(p("save position pick"), Ok(Command::SavePosition(name("pick"))));
        assert_eq!(
            p("down then down then left 200"),
            Ok(Command::FusedMove(vec![
                mv(Direction::Down, None),
                mv(Direction::Down, None),
                mv(Direction::Left, Some(200)),
            ]))
        );
        // Oracle: each clause parsed on its own, then concatenated.
        let clauses: Vec<Command> = ["pick part", "place top"].iter().map(|c| p(c).unwrap()).collect();
        assert_eq!(p("pick part and place top"), Ok(Command::Sequence(clauses)));
    }

    #[test]
    fn heads() {
        let heads = command_heads();
        assert!(heads.contains(&"pick"));
        assert!(heads.contains(&"repeat"));
        assert!(heads.len() >= 20);
        let mut sorted = heads.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted, heads);
        for h in &heads {
            assert!(!matches!(p(h), Err(ParseError::UnknownCommand(_))), "{h}");
        }
    }

    #[test]
    fn move_prefix_optional() {
        assert_eq!(p("move up"), p("up"));
        assert_eq!(p("move left 30"), Ok(Command::Move(mv(Direction::Left, Some(30)))));
    }

    #[test]
    fn sequences_flatten() {
        let Ok(Command::Sequence(children)) = p("home and open and close") else { panic!() };
        assert_eq!(children.len(), 3);
        assert!(children.iter().all(|c| !matches!(c, Command::Sequence(_))));
    }

    #[test]
    fn fusion_rejects_non_moves() {
        assert!(matches!(p("up then close"), Err(ParseError::MixedConnective(_))));
        assert!(matches!(p("pick part then down"), Err(ParseError::MixedConnective(_))));
        assert!(matches!(p("down then"), Err(ParseError::MalformedArguments { .. })));
    }

    #[test]
    fn repeat_argument_overload() {
        assert_eq!(
            p("repeat one 3"),
            Ok(Command::Repeat { task: name("one"), spec: RepeatSpec::Count(3) })
        );
        assert_eq!(
            p("repeat wipe continuous"),
            Ok(Command::Repeat { task: name("wipe"), spec: RepeatSpec::Continuous })
        );
        assert_eq!(
            p("repeat polish spots"),
            Ok(Command::Repeat { task: name("polish"), spec: RepeatSpec::List(name("spots")) })
        );
        assert!(p("repeat").is_err());
        assert!(p("repeat 3").is_err());
    }

    #[test]
    fn templates() {
        assert_eq!(
            p("stack table distance fifty"),
            Ok(Command::Stack { pose: name("table"), offset_mm: 50 })
        );
        assert_eq!(
            p("hold table distance one hundred"),
            Ok(Command::Hold { pose: name("table"), offset_mm: 100 })
        );
        assert_eq!(
            p("push gears front"),
            Ok(Command::Push { pose: name("gears"), direction: Direction::Front, length_mm: None })
        );
        assert_eq!(
            p("push gears front 60"),
            Ok(Command::Push {
                pose: name("gears"),
                direction: Direction::Front,
                length_mm: Some(60)
            })
        );
        assert_eq!(p("place gear three"), Ok(Command::Place(name("gear_three"))));
    }

    #[test]
    fn error_kinds() {
        assert_eq!(p(""), Err(ParseError::Empty));
        assert!(matches!(p("dance"), Err(ParseError::UnknownCommand(_))));
        assert!(matches!(p("rotate"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("pick"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("home now"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("step size 600"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("up and"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("record x and up"), Err(ParseError::MalformedArguments { .. })));
        assert!(matches!(p("42"), Err(ParseError::UnknownCommand(_))));
    }

    #[test]
    fn record_name_can_be_a_number_word() {
        assert_eq!(p("record one"), Ok(Command::RecordStart(name("one"))));
        assert_eq!(p("task one"), Ok(Command::RunTask(name("one"))));
    }

    fn arb_name() -> impl Strategy<Value = Name> {
        prop_oneof![
            "[a-z]{1,8}".prop_filter("keyword-free", |s| Name::new(s).is_some()
                && !["and", "then", "add", "distance", "continuous"].contains(&s.as_str())
                && Direction::from_word(s).is_none()),
            Just("one".to_string()),
            Just("gear_three".to_string()),
            Just("slot_2".to_string()),
        ]
        .prop_map(|s| Name::new(&s).unwrap())
    }

    fn arb_move() -> impl Strategy<Value = DirectionalMove> {
        (prop::sample::select(Direction::ALL.to_vec()), prop::option::of(0u32..=9999))
            .prop_map(|(d, m)| DirectionalMove::new(d, m))
    }

    fn arb_simple() -> impl Strategy<Value = Command> {
        prop_oneof![
            Just(Command::StartRobot),
            Just(Command::StopRobot),
            Just(Command::Home),
            Just(Command::OpenGripper),
            Just(Command::CloseGripper),
            Just(Command::Again),
            Just(Command::SetMode(MotionMode::Continuous)),
            Just(Command::SetStepSize(StepSize::Low)),
            (1u32..=500).prop_map(|mm| Command::SetStepSize(StepSize::Millimeters(mm))),
            (0u32..=9999).prop_map(Command::RotateTool),
            arb_move().prop_map(Command::Move),
            arb_name().prop_map(Command::SavePosition),
            arb_name().prop_map(Command::MoveToPosition),
            arb_name().prop_map(Command::RunTask),
            arb_name().prop_map(Command::Pick),
            arb_name().prop_map(Command::Place),
            (arb_name(), 0u32..=9999).prop_map(|(pose, offset_mm)| Command::Stack { pose, offset_mm }),
            (arb_name(), 0u32..=9999).prop_map(|(pose, offset_mm)| Command::Hold { pose, offset_mm }),
            (arb_name(), prop::sample::select(Direction::ALL.to_vec()), prop::option::of(0u32..999))
                .prop_map(|(pose, direction, length_mm)| Command::Push { pose, direction, length_mm }),
            (arb_name(), arb_name()).prop_map(|(list, pose)| Command::ListAdd { list, pose }),
            (arb_name(), 0u32..=9999)
                .prop_map(|(task, k)| Command::Repeat { task, spec: RepeatSpec::Count(k) }),
            (arb_name(), "[a-z]{1,6}".prop_filter("list", |s| s != "continuous" && s != "and" && s != "then"))
                .prop_map(|(task, l)| Command::Repeat { task, spec: RepeatSpec::List(Name::new(&l).unwrap()) }),
            prop::collection::vec(arb_move(), 2..6).prop_map(Command::FusedMove),
        ]
    }

    fn arb_command() -> impl Strategy<Value = Command> {
        prop_oneof![
            4 => arb_simple(),
            1 => prop::collection::vec(arb_simple(), 2..5).prop_map(Command::Sequence),
        ]
    }

    proptest! {
        #[test]
        fn display_reparses_to_same_ast(cmd in arb_command()) {
            let text = cmd.to_string();
            prop_assert_eq!(p(&text), Ok(cmd));
        }

        #[test]
        fn parse_is_deterministic(words in prop::collection::vec(
            prop::sample::select(vec!["up", "down", "then", "and", "pick", "x", "3", "close", "repeat"]), 0..8)) {
            let line = words.join(" ");
            prop_assert_eq!(p(&line), p(&line));
            if let Ok(Command::FusedMove(moves)) = p(&line) {
                prop_assert!(moves.len() >= 2);
            }
            if let Ok(Command::Sequence(children)) = p(&line) {
                prop_assert!(children.len() >= 2);
                prop_assert!(children.iter().all(|c| !matches!(c, Command::Sequence(_))));
            }
        }
    }
}
