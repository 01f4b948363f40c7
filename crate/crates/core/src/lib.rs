pub mod chart_parser;
pub mod checks;
pub mod diagnostic;
pub mod diagnostics;
pub mod featstruct;
pub mod fstructure;
pub mod grammar;
pub mod lexicon;
pub mod pipeline;
pub mod results;
pub mod syntax;
pub mod td_parser;
pub mod testsuite;
pub mod tree;
pub mod workbench;

pub use diagnostic::{Diagnostic, Severity};
pub use featstruct::{Bindings, FeatureStructure, Value};
pub use grammar::{CompiledGrammar, Formalism, Grammar};
