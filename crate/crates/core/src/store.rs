//! Named poses, recorded tasks and position lists, persisted as `store.xml`.
//!
//! ```xml
//! <store version="1">
//!   <position name="pick"><xyz x="120.0" y="-45.0" z="80.0"/><tool rotation="90.0" gripper="1.0"/></position>
//!   <task name="one"><cmd>down</cmd><cmd>close</cmd></task>
//!   <list name="parts"><ref name="slot1"/></list>
//! </store>
//! ```
//!
//! Task commands are stored as canonical command text and re-parsed on load.
//! Every mutation rewrites the file through a temp file and a rename.

use std::collections::{BTreeMap, VecDeque};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use crate::geom::Pose;
use crate::parser::{self, Command, Name};
use crate::xml::{self, escape};

pub const STORE_FILE: &str = "store.xml";
pub const STORE_VERSION: &str = "1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("unknown {kind} {name:?}")]
    UnknownName { kind: NameKind, name: String },
    #[error("position list {0:?} is empty")]
    EmptyList(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("store file is malformed: {0}")]
    Malformed(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NameKind {
    Pose,
    Task,
    List,
}

impl std::fmt::Display for NameKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NameKind::Pose => "position",
            NameKind::Task => "task",
            NameKind::List => "list",
        })
    }
}

/// A named, nonempty command sequence that never contains recording markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDefinition {
    name: Name,
    commands: Vec<Command>,
}

impl TaskDefinition {
    pub fn new(name: Name, commands: Vec<Command>) -> Result<Self, StoreError> {
        if commands.is_empty() {
            return Err(StoreError::InvalidTask(format!("task {name} has no commands")));
        }
        fn nests(c: &Command) -> bool {
            match c {
                Command::RecordStart(_) | Command::RecordFinish => true,
                Command::Sequence(cs) => cs.iter().any(nests),
                _ => false,
            }
        }
        if commands.iter().any(nests) {
            return Err(StoreError::InvalidTask(format!("task {name} contains record/finish")));
        }
        Ok(Self { name, commands })
    }

    pub fn name(&self) -> &Name {
        &self.name
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PositionList {
    pub poses: VecDeque<Name>,
}

/// Failure injection point for [`Store`] writes.
pub struct StagedWrite {
    tmp: PathBuf,
    target: PathBuf,
}

impl StagedWrite {
    /// Writes `bytes` to a sibling temp file and syncs it; the target is
    /// untouched until [`StagedWrite::commit`].
    pub fn stage(target: &Path, bytes: &[u8]) -> Result<Self, StoreError> {
        let tmp = target.with_extension("xml.tmp");
        let failure = |e: std::io::Error| StoreError::StorageFailure(format!("{}: {e}", tmp.display()));
        let mut f = fs::File::create(&tmp).map_err(failure)?;
        f.write_all(bytes).map_err(failure)?;
        f.sync_all().map_err(failure)?;
        Ok(Self { tmp, target: target.to_path_buf() })
    }

    pub fn temp_path(&self) -> &Path {
        &self.tmp
    }

    pub fn commit(self) -> Result<(), StoreError> {
        fs::rename(&self.tmp, &self.target).map_err(|e| {
            StoreError::StorageFailure(format!("renaming onto {}: {e}", self.target.display()))
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    dir: Option<PathBuf>,
    poses: BTreeMap<Name, Pose>,
    tasks: BTreeMap<Name, TaskDefinition>,
    lists: BTreeMap<Name, PositionList>,
}

impl Store {
    /// A store that never touches disk.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) `dir/store.xml`.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)
            .map_err(|e| StoreError::StorageFailure(format!("{}: {e}", dir.display())))?;
        let path = dir.join(STORE_FILE);
        let mut store = match fs::read_to_string(&path) {
            Ok(text) => Self::from_xml(&text)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::in_memory(),
            Err(e) => return Err(StoreError::StorageFailure(format!("{}: {e}", path.display()))),
        };
        store.dir = Some(dir.to_path_buf());
        Ok(store)
    }

    pub fn path(&self) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(STORE_FILE))
    }

    /// Compares contents, ignoring where the store lives.
    pub fn same_contents(&self, other: &Store) -> bool {
        self.poses == other.poses && self.tasks == other.tasks && self.lists == other.lists
    }

    fn persist(&self) -> Result<(), StoreError> {
        let Some(path) = self.path() else {
            return Ok(());
        };
        StagedWrite::stage(&path, self.to_xml().as_bytes())?.commit()
    }

    pub fn save_pose(&mut self, name: Name, pose: Pose) -> Result<(), StoreError> {
        self.poses.insert(name, pose.quantized());
        self.persist()
    }

    pub fn lookup_pose(&self, name: &Name) -> Result<Pose, StoreError> {
        self.poses.get(name).copied().ok_or_else(|| unknown(NameKind::Pose, name))
    }

    pub fn poses(&self) -> impl Iterator<Item = (&Name, &Pose)> {
        self.poses.iter()
    }

    pub fn save_task(&mut self, def: TaskDefinition) -> Result<(), StoreError> {
        self.tasks.insert(def.name.clone(), def);
        self.persist()
    }

    pub fn lookup_task(&self, name: &Name) -> Result<&TaskDefinition, StoreError> {
        self.tasks.get(name).ok_or_else(|| unknown(NameKind::Task, name))
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskDefinition> {
        self.tasks.values()
    }

    pub fn save_list(&mut self, name: Name, poses: Vec<Name>) -> Result<(), StoreError> {
        self.lists.insert(name, PositionList { poses: poses.into() });
        self.persist()
    }

    pub fn lookup_list(&self, name: &Name) -> Result<&PositionList, StoreError> {
        self.lists.get(name).ok_or_else(|| unknown(NameKind::List, name))
    }

    /// Appends to a list, creating it when absent.
    pub fn list_push(&mut self, name: Name, pose: Name) -> Result<(), StoreError> {
        self.lists.entry(name).or_default().poses.push_back(pose);
        self.persist()
    }

    /// Removes and returns the first entry, persisting the shortened list.
    pub fn pop_front(&mut self, name: &Name) -> Result<Name, StoreError> {
        let list = self.lists.get_mut(name).ok_or_else(|| unknown(NameKind::List, name))?;
        let head = list.poses.pop_front().ok_or_else(|| StoreError::EmptyList(name.to_string()))?;
        self.persist()?;
        Ok(head)
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "<?xml version=\"1.0\" encoding=\"UTF-8\"?>");
        let _ = writeln!(out, "<store version=\"{STORE_VERSION}\">");
        for (name, p) in &self.poses {
            let _ = writeln!(
                out,
                "  <position name=\"{}\"><xyz x=\"{:.1}\" y=\"{:.1}\" z=\"{:.1}\"/><tool rotation=\"{:.1}\" gripper=\"{:.1}\"/></position>",
                escape(name.as_str()),
                p.x,
                p.y,
                p.z,
                p.rotation,
                p.gripper
            );
        }
        for task in self.tasks.values() {
            let _ = writeln!(out, "  <task name=\"{}\">", escape(task.name.as_str()));
            for cmd in &task.commands {
                let _ = writeln!(out, "    <cmd>{}</cmd>", escape(cmd.to_string()));
            }
            let _ = writeln!(out, "  </task>");
        }
        for (name, list) in &self.lists {
            let _ = writeln!(out, "  <list name=\"{}\">", escape(name.as_str()));
            for r in &list.poses {
                let _ = writeln!(out, "    <ref name=\"{}\"/>", escape(r.as_str()));
            }
            let _ = writeln!(out, "  </list>");
        }
        out.push_str("</store>\n");
        out
    }

    pub fn from_xml(text: &str) -> Result<Self, StoreError> {
        let root = xml::parse_document(text).map_err(StoreError::Malformed)?;
        let bad = StoreError::Malformed;
        if root.name != "store" {
            return Err(bad(format!("root element is <{}>", root.name)));
        }
        let version = root.attr("version").map_err(bad)?;
        if version != STORE_VERSION {
            return Err(bad(format!("unsupported store version {version:?}")));
        }
        let name_of = |el: &xml::Element| -> Result<Name, StoreError> {
            let raw = el.attr("name").map_err(bad)?;
            Name::new(raw).ok_or_else(|| bad(format!("invalid name {raw:?}")))
        };

        let mut store = Store::in_memory();
        for el in &root.children {
            match el.name.as_str() {
                "position" => {
                    let xyz = el.child("xyz").ok_or_else(|| bad("<position> without <xyz>".into()))?;
                    let tool = el.child("tool");
                    let tool_attr = |k: &str, d: f64| match tool {
                        Some(t) => t.parse_attr_or::<f64>(k, d).map_err(bad),
                        None => Ok(d),
                    };
                    let pose = Pose::new(
                        xyz.parse_attr("x").map_err(bad)?,
                        xyz.parse_attr("y").map_err(bad)?,
                        xyz.parse_attr("z").map_err(bad)?,
                        tool_attr("rotation", 0.0)?,
                        tool_attr("gripper", 1.0)?,
                    );
                    store.poses.insert(name_of(el)?, pose.quantized());
                }
                "task" => {
                    let name = name_of(el)?;
                    let commands = el
                        .children_named("cmd")
                        .map(|c| {
                            parser::parse_line(&c.text)
                                .map_err(|e| bad(format!("task {name}: {:?}: {e}", c.text)))
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    store.tasks.insert(name.clone(), TaskDefinition::new(name, commands)?);
                }
                "list" => {
                    let poses = el.children_named("ref").map(name_of).collect::<Result<_, _>>()?;
                    store.lists.insert(name_of(el)?, PositionList { poses });
                }
                other => return Err(bad(format!("unexpected element <{other}>"))),
            }
        }
        Ok(store)
    }
}

fn unknown(kind: NameKind, name: &Name) -> StoreError {
    StoreError::UnknownName { kind, name: name.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_line;

    fn n(s: &str) -> Name {
        Name::new(s).unwrap()
    }

    fn pose(x: f64) -> Pose {
        Pose::new(x, -45.0, 80.0, 90.0, 1.0)
    }

    #[test]
    fn write_then_read() {
        let mut store = Store::in_memory();
        store.save_pose(n("pick"), pose(120.0)).unwrap();
        assert_eq!(store.lookup_pose(&n("pick")), Ok(pose(120.0)));
        store.save_pose(n("pick"), pose(130.0)).unwrap();
        assert_eq!(store.lookup_pose(&n("pick")), Ok(pose(130.0)));
        assert!(matches!(
            store.lookup_pose(&n("nonexistent")),
            Err(StoreError::UnknownName { kind: NameKind::Pose, .. })
        ));
    }

    #[test]
    fn namespaces_are_disjoint() {
        let mut store = Store::in_memory();
        let task = TaskDefinition::new(n("pick"), vec![Command::Home]).unwrap();
        store.save_task(task).unwrap();
        store.save_list(n("pick"), vec![n("a")]).unwrap();
        assert!(store.lookup_pose(&n("pick")).is_err());
        store.save_pose(n("pick"), pose(1.0)).unwrap();
        assert!(store.lookup_pose(&n("pick")).is_ok());
        assert_eq!(store.lookup_task(&n("pick")).unwrap().commands(), &[Command::Home]);
        assert_eq!(store.lookup_list(&n("pick")).unwrap().poses.len(), 1);
    }

    #[test]
    fn four_poses_four_position_elements() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        for (i, name) in ["part", "gear", "top", "table"].iter().enumerate() {
            store.save_pose(n(name), pose(i as f64 * 10.0)).unwrap();
        }
        let text = fs::read_to_string(dir.path().join(STORE_FILE)).unwrap();
        assert_eq!(text.matches("<position ").count(), 4);
        assert!(!text.contains('\r'));
    }

    #[test]
    fn task_of_fourteen_commands() {
        let lines = [
            "down", "down", "back", "down", "close", "step size medium", "up", "position place",
            "step size low", "down", "down", "open", "position place", "home",
        ];
        let cmds: Vec<Command> = lines.iter().map(|l| parse_line(l).unwrap()).collect();
        let mut store = Store::in_memory();
        store.save_task(TaskDefinition::new(n("one"), cmds).unwrap()).unwrap();
        assert_eq!(store.lookup_task(&n("one")).unwrap().commands().len(), 14);
    }

    #[test]
    fn task_invariants() {
        assert!(TaskDefinition::new(n("x"), vec![]).is_err());
        assert!(TaskDefinition::new(n("x"), vec![Command::RecordFinish]).is_err());
    }

    #[test]
    fn pop_front_then_empty() {
        let mut store = Store::in_memory();
        store.save_list(n("parts"), vec![n("slot1")]).unwrap();
        assert_eq!(store.pop_front(&n("parts")), Ok(n("slot1")));
        assert_eq!(store.pop_front(&n("parts")), Err(StoreError::EmptyList("parts".into())));
        assert!(matches!(store.pop_front(&n("nope")), Err(StoreError::UnknownName { .. })));
    }

    #[test]
    fn persists_across_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut store = Store::open(dir.path()).unwrap();
            store.save_pose(n("place"), pose(5.5)).unwrap();
            store.save_list(n("parts"), vec![n("a"), n("b")]).unwrap();
            store.pop_front(&n("parts")).unwrap();
        }
        let store = Store::open(dir.path()).unwrap();
        assert_eq!(store.lookup_pose(&n("place")), Ok(pose(5.5)));
        assert_eq!(store.lookup_list(&n("parts")).unwrap().poses, VecDeque::from([n("b")]));
    }

    #[test]
    fn example_document_parses() {
        let store = Store::from_xml(
            r#"<store version="1"><position name="pick"><xyz x="120.0" y="-45.0" z="80.0"/><tool rotation="90.0" gripper="1.0"/></position><task name="one"><cmd>down</cmd><cmd>close</cmd></task><list name="parts"><ref name="slot1"/></list></store>"#,
        )
        .unwrap();
        assert_eq!(store.lookup_pose(&n("pick")), Ok(pose(120.0)));
        assert_eq!(store.lookup_task(&n("one")).unwrap().commands().len(), 2);
        assert!(Store::from_xml(r#"<store version="2"/>"#).is_err());
        assert!(Store::from_xml(r#"<store version="1"><task name="t"><cmd>dance</cmd></task></store>"#).is_err());
    }

    #[test]
    fn unwritable_directory_is_storage_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        drop(dir);
        assert!(matches!(store.save_pose(n("p"), pose(1.0)), Err(StoreError::StorageFailure(_))));
    }

    #[test]
    fn crash_before_rename_keeps_previous_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = Store::open(dir.path()).unwrap();
        store.save_pose(n("old"), pose(1.0)).unwrap();
        let before = fs::read_to_string(dir.path().join(STORE_FILE)).unwrap();

        store.poses.insert(n("new"), pose(2.0));
        let staged = StagedWrite::stage(&store.path().unwrap(), store.to_xml().as_bytes()).unwrap();
        assert!(staged.temp_path().exists());
        drop(staged);

        assert_eq!(fs::read_to_string(dir.path().join(STORE_FILE)).unwrap(), before);
        let reopened = Store::open(dir.path()).unwrap();
        assert!(reopened.lookup_pose(&n("old")).is_ok());
        assert!(reopened.lookup_pose(&n("new")).is_err());
    }
}
