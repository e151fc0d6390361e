//! Benchmark target queries over object pairs.

use vqbe_core::{DslError, PredicateRegistry, Query};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub name: &'static str,
    pub text: &'static str,
}

pub const TRAJECTORY_TARGETS: [Target; 12] = [
    Target { name: "TQ1", text: "(Bottom(o1), Near(o1, o2))" },
    Target { name: "TQ2", text: "Far(o1, o2); Near(o1, o2); Far(o1, o2)" },
    Target { name: "TQ3", text: "Far(o1, o2); (Behind(o1, o2), Near(o1, o2))" },
    Target { name: "TQ4", text: "Far(o1, o2); (Behind(o1, o2), Left(o1), Near(o1, o2))" },
    Target { name: "TQ5", text: "(FrontOf(o1, o2), Top(o1))" },
    Target { name: "TQ6", text: "Near(o1, o2); Far(o1, o2)" },
    Target { name: "TQ7", text: "(Behind(o1, o2), Left(o1), Near(o1, o2))" },
    Target { name: "TQ8", text: "(Bottom(o1), Far(o1, o2)); Near(o1, o2)" },
    Target { name: "TQ9", text: "(Far(o1, o2), Left(o1)); (Left(o1), Near(o1, o2))" },
    Target { name: "TQ1D", text: "Duration(Far(o1, o2), 5); Near(o1, o2); Far(o1, o2)" },
    Target {
        name: "TQ2D",
        text: "Duration(LeftOf(o1, o2), 5); (Near(o1, o2), Top(o1)); Duration(RightOf(o1, o2), 5)",
    },
    Target {
        name: "TQ3D",
        text: "Duration((FrontOf(o1, o2), Left(o1)), 15); Duration((Left(o1), RightOf(o1, o2), Top(o1)), 5)",
    },
];

/// Targets without duration constraints.
pub fn plain_targets() -> &'static [Target] {
    &TRAJECTORY_TARGETS[..9]
}

pub fn duration_targets() -> &'static [Target] {
    &TRAJECTORY_TARGETS[9..]
}

pub fn target(name: &str) -> Option<&'static Target> {
    TRAJECTORY_TARGETS.iter().find(|t| t.name.eq_ignore_ascii_case(name))
}

/// A target given by name (`TQ3`) or by query text. Returns a display name
/// and the parsed query.
pub fn resolve_target(spec: &str, registry: &PredicateRegistry) -> Result<(String, Query), DslError> {
    match target(spec) {
        Some(t) => Ok((t.name.to_string(), Query::parse(t.text, registry)?)),
        None => Ok((spec.to_string(), Query::parse(spec, registry)?)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_targets_parse_and_print_back() {
        let r = PredicateRegistry::builtin();
        for t in TRAJECTORY_TARGETS {
            let q = Query::parse(t.text, &r).unwrap();
            assert_eq!(q.to_string(), t.text, "{}", t.name);
            assert!(q.check_bounds(&vqbe_core::SearchConfig::trajectory()).is_ok(), "{}", t.name);
        }
        assert!(plain_targets().iter().all(|t| !t.text.contains("Duration")));
        assert!(duration_targets().iter().all(|t| t.text.contains("Duration")));
    }

    #[test]
    fn resolve_by_name_or_text() {
        let r = PredicateRegistry::builtin();
        assert_eq!(resolve_target("tq6", &r).unwrap().0, "TQ6");
        assert_eq!(resolve_target("Near(o1, o2)", &r).unwrap().0, "Near(o1, o2)");
        assert!(resolve_target("Nope(o1)", &r).is_err());
    }
}
