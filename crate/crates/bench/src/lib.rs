//! Shared fixtures for the criterion benchmarks.

use std::path::PathBuf;

use gramwb::pipeline::Toolkit;
use gramwb::{FeatureStructure, Value};

/// The demo data shipped with the repository.
pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// A demo grammar with the demo lexicon and its interface rules.
pub fn demo_toolkit(grammar: &str, rules: &str) -> Toolkit {
    let d = demo_dir();
    Toolkit::load(&d.join(grammar), &d.join("demo.lex"), &d.join(rules)).expect("demo data loads")
}

/// A structure `width` features wide and `depth` levels deep. Leaves are
/// atoms except every third one, which is a variable shared across levels,
/// so unification has to propagate bindings.
pub fn nested(depth: usize, width: usize, salt: &str) -> FeatureStructure {
    let mut fs = FeatureStructure::new();
    for i in 0..width {
        let v = if depth == 0 {
            if i % 3 == 0 {
                Value::var(format!("V{i}"))
            } else {
                Value::atom(format!("{salt}{i}"))
            }
        } else {
            Value::Struct(nested(depth - 1, width, salt))
        };
        fs.insert(format!("f{i}"), v);
    }
    fs
}
