use serde::{Deserialize, Serialize};

use crate::corpus::Demonstration;
use crate::error::{Error, Result};

/// Prompt layout: task description first, then the demonstrations in the
/// given order, then the input, all joined by `separator`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub task_description: String,
    pub demo_format: String,
    pub input_format: String,
    pub separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            task_description: "Judge whether the passage answers the query. Answer Yes or No.".into(),
            demo_format: "Passage: {passage}\nQuery: {query}\nDoes the passage answer the query? Answer: {label}"
                .into(),
            input_format: "Passage: {passage}\nQuery: {query}\nDoes the passage answer the query? Answer:".into(),
            separator: "\n\n".into(),
        }
    }
}

const DEMO_SLOTS: [&str; 3] = ["query", "passage", "label"];
const INPUT_SLOTS: [&str; 2] = ["query", "passage"];

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        check_slots("demo_format", &self.demo_format, &DEMO_SLOTS)?;
        check_slots("input_format", &self.input_format, &INPUT_SLOTS)
    }

    pub fn render_demo(&self, demo: &Demonstration) -> String {
        fill(&self.demo_format, |slot| match slot {
            "query" => Some(demo.query.text.as_str()),
            "passage" => Some(demo.passage.text.as_str()),
            "label" => Some(demo.label.as_str()),
            _ => None,
        })
    }

    pub fn render_input(&self, query: &str, passage: &str) -> String {
        fill(&self.input_format, |slot| match slot {
            "query" => Some(query),
            "passage" => Some(passage),
            _ => None,
        })
    }

    pub fn render(&self, demos: &[&Demonstration], query: &str, passage: &str) -> String {
        let mut parts = Vec::with_capacity(demos.len() + 2);
        if !self.task_description.is_empty() {
            parts.push(self.task_description.clone());
        }
        parts.extend(demos.iter().map(|d| self.render_demo(d)));
        parts.push(self.render_input(query, passage));
        parts.join(&self.separator)
    }
}

fn placeholders(format: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = format;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) => {
                out.push(&after[..end]);
                rest = &after[end + 1..];
            }
            None => break,
        }
    }
    out
}

fn check_slots(name: &str, format: &str, slots: &[&str]) -> Result<()> {
    let found = placeholders(format);
    for slot in slots {
        let n = found.iter().filter(|f| *f == slot).count();
        if n != 1 {
            return Err(Error::Template(format!("{name} must contain {{{slot}}} exactly once, found {n}")));
        }
    }
    if let Some(extra) = found.iter().find(|f| !slots.contains(f)) {
        return Err(Error::Template(format!("{name} has unknown placeholder {{{extra}}}")));
    }
    Ok(())
}

/// Single-pass substitution so that substituted text is never re-scanned.
fn fill<'a>(format: &str, value: impl Fn(&str) -> Option<&'a str>) -> String {
    let mut out = String::with_capacity(format.len() + 64);
    let mut rest = format;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}').and_then(|end| value(&after[..end]).map(|v| (end, v))) {
            Some((end, v)) => {
                out.push_str(v);
                rest = &after[end + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, Passage, Query};

    #[test]
    fn default_template_is_valid_and_renders_in_order() {
        let t = PromptTemplate::default();
        t.validate().unwrap();
        let demo = Demonstration {
            query: Query {
                id: "q".into(),
                text: "what {passage} is".into(),
            },
            passage: Passage {
                id: "p".into(),
                text: "fish".into(),
            },
            label: Label::No,
        };
        let s = t.render(&[&demo], "iq", "ip");
        let parts: Vec<&str> = s.split("\n\n").collect();
        assert_eq!(parts.len(), 3);
        assert_eq!(parts[0], t.task_description);
        assert!(parts[1].ends_with("Answer: No"));
        // substituted text containing a placeholder is left alone
        assert!(parts[1].contains("Query: what {passage} is"));
        assert_eq!(parts[2], "Passage: ip\nQuery: iq\nDoes the passage answer the query? Answer:");
    }

    #[test]
    fn rejects_missing_or_repeated_slots() {
        let mut t = PromptTemplate {
            demo_format: "{query} {passage}".into(),
            ..PromptTemplate::default()
        };
        assert!(t.validate().is_err());
        t.demo_format = "{query} {query} {passage} {label}".into();
        assert!(t.validate().is_err());
        t = PromptTemplate::default();
        t.input_format = "{query} {passage} {label}".into();
        assert!(t.validate().is_err());
    }
}
