use std::fs::OpenOptions;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::time::Duration;

use anyhow::{Context, Result};
use verbot_core::dispatcher::{Config, Dispatcher, Event, EventKind, Runner, Snapshot};
use verbot_core::lexicon::{AliasTable, Lexicon};
use verbot_core::replay::{replay as run_transcript, Assertions};
use verbot_core::{Scene, Store};

use crate::{EXIT_ASSERTION, EXIT_OK};

/// Everything the three modes share.
pub struct Setup {
    pub dispatcher: Dispatcher,
    pub tick: Duration,
}

impl Setup {
    pub fn from_args(
        store: Option<&Path>,
        scene: Option<&Path>,
        log: Option<&Path>,
        aliases: Option<&Path>,
        tick_ms: u64,
    ) -> Result<Self> {
        let scene = match scene {
            Some(p) => Scene::load(p).with_context(|| format!("loading scene {}", p.display()))?,
            None => Scene::default(),
        };
        let store = match store {
            Some(p) => Store::open(p).with_context(|| format!("opening store {}", p.display()))?,
            None => Store::in_memory(),
        };
        let mut table = AliasTable::with_defaults();
        if let Some(p) = aliases {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading aliases {}", p.display()))?;
            table.extend_from_str(&text).with_context(|| format!("loading aliases {}", p.display()))?;
        }
        let config = Config { lexicon: Lexicon::new(table), ..Config::default() };
        let mut dispatcher = Dispatcher::new(&scene, store, config);
        if let Some(p) = log {
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .with_context(|| format!("opening log {}", p.display()))?;
            dispatcher.set_log(Box::new(io::LineWriter::new(file)));
        }
        Ok(Self { dispatcher, tick: Duration::from_millis(tick_ms) })
    }
}

fn print_event(e: &Event) {
    if !matches!(e.kind, EventKind::MotionStarted { .. }) {
        println!("  [{}] {}", e.tick, e.kind);
    }
}

pub fn repl(setup: Setup) -> Result<u8> {
    let runner = Runner::spawn(
        setup.dispatcher,
        setup.tick,
        Box::new(|_: &Snapshot, events: &[Event]| events.iter().for_each(print_event)),
    );
    let handle = runner.handle();
    let stdin = io::stdin();
    let mut eof = true;
    for line in stdin.lock().lines() {
        let line = line.context("reading stdin")?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        if text == "exit" || text == "quit" {
            eof = false;
            break;
        }
        match handle.submit_wait(text) {
            Some(ack) => match &ack.error {
                None => println!("ok: {}", ack.command.as_deref().unwrap_or("")),
                Some(e) => println!("rejected ({}): {}", e.kind, e.message),
            },
            None => break,
        }
        io::stdout().flush().ok();
    }
    // Piped input: let the queue finish before leaving.
    if eof {
        let submitted_by = handle.snapshot().tick;
        loop {
            let s = handle.snapshot();
            if s.tick > submitted_by && s.queue_length == 0 && s.executing.is_none() {
                break;
            }
            std::thread::sleep(setup.tick);
        }
    }
    runner.join();
    Ok(EXIT_OK)
}

pub fn replay(setup: Setup, transcript: &Path, assert_file: Option<&Path>, json: bool) -> Result<u8> {
    let text = std::fs::read_to_string(transcript)
        .with_context(|| format!("reading transcript {}", transcript.display()))?;
    let assertions = match assert_file {
        Some(p) => {
            let a = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(Assertions::parse(&a).with_context(|| format!("parsing {}", p.display()))?)
        }
        None => None,
    };
    let mut dispatcher = setup.dispatcher;
    let report = run_transcript(&mut dispatcher, &text, setup.tick.as_secs_f64())
        .with_context(|| format!("replaying {}", transcript.display()))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    let failures = assertions.map(|a| a.check(&report)).unwrap_or_default();
    for f in &failures {
        eprintln!("assertion failed: {f}");
    }
    Ok(if failures.is_empty() { EXIT_OK } else { EXIT_ASSERTION })
}
