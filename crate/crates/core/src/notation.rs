//! Parser and formatter for the compact fusion-setup notation.
//!
//! Grammar: `setup := group ("-" group)*`, `group := "(" name ("," name)* ")" ("@" memory)?`.
//! Example: `(A,B)-(C)` puts tasks A and B in one group and C in its own.
//! An optional `@<mb>` suffix attaches a memory size: `(A,B)@128-(C)@1024`.
//!
//! The notation is lossy on purpose: it lists group memberships only. The
//! home table of the resulting setup is derived (first group containing each
//! task in written order), so asymmetric routing produced by the optimizer
//! does not survive a round trip through notation. Campaign artifacts store
//! homes separately for that reason.

use std::collections::BTreeMap;

use crate::domain::{AppSpec, FusionGroup, FusionSetup, SetupViolation, DEFAULT_MEMORY_MB};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NotationError {
    #[error("at byte {pos}: expected {expected}")]
    Syntax { pos: usize, expected: &'static str },
    #[error("at byte {pos}: unknown task `{name}`")]
    UnknownTask { pos: usize, name: String },
    #[error("at byte {pos}: empty fusion group")]
    EmptyGroup { pos: usize },
    #[error("at byte {pos}: task `{name}` listed twice in one group")]
    DuplicateInGroup { pos: usize, name: String },
    #[error("at byte {pos}: invalid memory size")]
    BadMemory { pos: usize },
    #[error("setup leaves tasks uncovered: {0}")]
    Uncovered(String),
}

type ParsedGroup = (Vec<(String, usize)>, Option<u32>);

struct Parser<'a> {
    text: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            text,
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn expect(&mut self, ch: u8, expected: &'static str) -> Result<(), NotationError> {
        if self.peek() == Some(ch) {
            self.pos += 1;
            Ok(())
        } else {
            Err(NotationError::Syntax {
                pos: self.pos,
                expected,
            })
        }
    }

    fn name(&mut self) -> Result<(String, usize), NotationError> {
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' {
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(NotationError::Syntax {
                pos: start,
                expected: "task name",
            });
        }
        Ok((self.text[start..self.pos].to_string(), start))
    }

    fn group(&mut self) -> Result<ParsedGroup, NotationError> {
        let open = self.pos;
        self.expect(b'(', "`(`")?;
        if self.peek() == Some(b')') {
            return Err(NotationError::EmptyGroup { pos: open });
        }
        let mut members: Vec<(String, usize)> = Vec::new();
        loop {
            let (name, pos) = self.name()?;
            if members.iter().any(|(m, _)| *m == name) {
                return Err(NotationError::DuplicateInGroup { pos, name });
            }
            members.push((name, pos));
            match self.peek() {
                Some(b',') => {
                    self.pos += 1;
                }
                Some(b')') => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    return Err(NotationError::Syntax {
                        pos: self.pos,
                        expected: "`,` or `)`",
                    })
                }
            }
        }
        let memory = if self.peek() == Some(b'@') {
            self.pos += 1;
            let start = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == start {
                return Err(NotationError::BadMemory { pos: start });
            }
            let value: u32 = self.text[start..self.pos]
                .parse()
                .map_err(|_| NotationError::BadMemory { pos: start })?;
            Some(value)
        } else {
            None
        };
        Ok((members, memory))
    }
}

/// Parses the notation against an application, assigning the default 128MB
/// to groups without an explicit `@` suffix.
pub fn parse_setup_notation(text: &str, app: &AppSpec) -> Result<FusionSetup, NotationError> {
    parse_setup_notation_with_default(text, app, DEFAULT_MEMORY_MB)
}

/// Same as [`parse_setup_notation`] with a caller-chosen default memory.
pub fn parse_setup_notation_with_default(
    text: &str,
    app: &AppSpec,
    default_memory_mb: u32,
) -> Result<FusionSetup, NotationError> {
    let mut parser = Parser::new(text);
    let mut raw_groups: Vec<(Vec<String>, u32)> = Vec::new();
    loop {
        let (members, memory) = parser.group()?;
        for (name, pos) in &members {
            if app.task(name).is_none() {
                return Err(NotationError::UnknownTask {
                    pos: *pos,
                    name: name.clone(),
                });
            }
        }
        raw_groups.push((
            members.into_iter().map(|(name, _)| name).collect(),
            memory.unwrap_or(default_memory_mb),
        ));
        match parser.peek() {
            Some(b'-') => {
                parser.pos += 1;
            }
            None => break,
            _ => {
                return Err(NotationError::Syntax {
                    pos: parser.pos,
                    expected: "`-` or end of input",
                })
            }
        }
    }

    let mut groups = Vec::new();
    let mut home: BTreeMap<String, String> = BTreeMap::new();
    for (i, (members, memory_mb)) in raw_groups.iter().enumerate() {
        let id = format!("g{i}");
        for m in members {
            home.entry(m.clone()).or_insert_with(|| id.clone());
        }
        groups.push(FusionGroup {
            id,
            members: members.iter().cloned().collect(),
            memory_mb: *memory_mb,
        });
    }
    let setup = FusionSetup { groups, home };

    let uncovered: Vec<String> = crate::domain::validate_setup(&setup, app)
        .into_iter()
        .filter_map(|v| match v {
            SetupViolation::MissingTask(t) => Some(t),
            _ => None,
        })
        .collect();
    if !uncovered.is_empty() {
        return Err(NotationError::Uncovered(uncovered.join(",")));
    }
    Ok(setup)
}

/// Canonical membership notation: groups ordered by smallest member, members
/// sorted. Memory sizes and homes are not printed.
pub fn format_setup(setup: &FusionSetup) -> String {
    let canon = setup.canonicalize();
    canon
        .groups
        .iter()
        .map(|g| g.label())
        .collect::<Vec<_>>()
        .join("-")
}

/// Canonical notation with `@memory` suffixes, e.g. `(A,B)@128-(C)@1024`.
pub fn format_setup_with_memory(setup: &FusionSetup) -> String {
    let canon = setup.canonicalize();
    canon
        .groups
        .iter()
        .map(|g| format!("{}@{}", g.label(), g.memory_mb))
        .collect::<Vec<_>>()
        .join("-")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::TaskSpec;

    fn app(names: &[&str]) -> AppSpec {
        AppSpec::new(
            "t",
            names.iter().map(|n| TaskSpec::new(n, 1.0, 1)).collect(),
            &[names[0]],
        )
    }

    #[test]
    fn parses_two_groups() {
        let app = app(&["A", "B", "C"]);
        let setup = parse_setup_notation("(A,B)-(C)", &app).unwrap();
        assert_eq!(setup.groups.len(), 2);
        assert_eq!(setup.groups[0].label(), "(A,B)");
        assert_eq!(setup.groups[1].label(), "(C)");
        assert_eq!(setup.home["A"], "g0");
        assert_eq!(setup.home["B"], "g0");
        assert_eq!(setup.home["C"], "g1");
        assert_eq!(setup.groups[0].memory_mb, DEFAULT_MEMORY_MB);
        assert!(crate::domain::validate_setup(&setup, &app).is_empty());
    }

    #[test]
    fn parses_singleton() {
        let app = app(&["A"]);
        let setup = parse_setup_notation("(A)", &app).unwrap();
        assert_eq!(setup.groups.len(), 1);
        assert_eq!(setup.home["A"], "g0");
    }

    #[test]
    fn parses_tree_path_setup() {
        let app = app(&["A", "B", "C", "D", "E", "F", "G"]);
        let setup = parse_setup_notation("(A,B,D,E)-(C)-(F)-(G)", &app).unwrap();
        let labels: Vec<String> = setup.groups.iter().map(|g| g.label()).collect();
        assert_eq!(labels, vec!["(A,B,D,E)", "(C)", "(F)", "(G)"]);
    }

    #[test]
    fn home_is_first_containing_group_in_written_order() {
        let app = app(&["A", "B"]);
        let setup = parse_setup_notation("(B)-(A,B)", &app).unwrap();
        assert_eq!(setup.home["B"], "g0");
        assert_eq!(setup.home["A"], "g1");
    }

    #[test]
    fn unknown_task_reports_position() {
        let app = app(&["A"]);
        let err = parse_setup_notation("(A)-(Z)", &app).unwrap_err();
        assert_eq!(
            err,
            NotationError::UnknownTask {
                pos: 5,
                name: "Z".into()
            }
        );
    }

    #[test]
    fn empty_group_rejected() {
        let app = app(&["A"]);
        let err = parse_setup_notation("()", &app).unwrap_err();
        assert!(matches!(err, NotationError::EmptyGroup { pos: 0 }));
    }

    #[test]
    fn uncovered_task_rejected() {
        let app = app(&["A", "B"]);
        let err = parse_setup_notation("(A)", &app).unwrap_err();
        assert_eq!(err, NotationError::Uncovered("B".into()));
    }

    #[test]
    fn malformed_syntax_reports_position() {
        let app = app(&["A", "B"]);
        let err = parse_setup_notation("(A,)", &app).unwrap_err();
        assert!(matches!(err, NotationError::Syntax { pos: 3, .. }));
    }

    #[test]
    fn format_sorts_groups_and_members() {
        let app = app(&["A", "B", "C"]);
        let setup = parse_setup_notation("(C)-(B,A)", &app).unwrap();
        assert_eq!(format_setup(&setup), "(A,B)-(C)");
    }

    #[test]
    fn memory_suffix_round_trip() {
        let app = app(&["A", "B", "C"]);
        let setup = parse_setup_notation("(A,B)@128-(C)@1024", &app).unwrap();
        assert_eq!(setup.groups[1].memory_mb, 1024);
        assert_eq!(format_setup_with_memory(&setup), "(A,B)@128-(C)@1024");
    }

    #[test]
    fn canonical_round_trip_is_identity() {
        let app = app(&["A", "B", "C", "D", "E", "F", "G"]);
        let s = "(A,B,D,E)-(C)-(F)-(G)";
        let setup = parse_setup_notation(s, &app).unwrap();
        assert_eq!(format_setup(&setup), s);
        let reparsed = parse_setup_notation(&format_setup(&setup), &app).unwrap();
        assert_eq!(reparsed.canonicalize(), setup.canonicalize());
    }
}
