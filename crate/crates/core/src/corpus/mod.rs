//! Test programs: the bundled case corpus, a random program generator and a
//! concrete interpreter used as an oracle.

mod generate;
mod interp;
mod runner;

pub use generate::{generate_large_program, generate_program, GeneratedProgram};
pub use interp::{interpret_trace, Access, ObjKey, Outcome, Trace, DEFAULT_STEP_LIMIT};
pub use runner::{load_case, run_case, run_corpus, CaseResult, CaseVerdict, CorpusCase, ExpectedFinding};
