//! Verbal command interpreter for a simulated pick-and-place arm.
//!
//! Text flows through [`lexicon`] (tokens, number words, aliases), [`parser`]
//! (command AST), [`taskengine`] (expansion into primitives) and
//! [`dispatcher`] (queue, execution against [`sim`], persistence via
//! [`store`]).

pub mod dispatcher;
pub mod geom;
pub mod lexicon;
pub mod parser;
pub mod replay;
pub mod sim;
pub mod store;
pub mod taskengine;
mod xml;


pub use geom::{Point, Pose};
pub use lexicon::{Lexicon, Token};
pub use parser::{parse, parse_line, Command, Name, ParseError};
pub use sim::{Scene, Sim};
pub use store::{Store, StoreError};
pub use taskengine::{expand, EngineError, Primitive};
