//! Prompt templates with `{name}` placeholders.
//!
//! A template file is either plain text (one user message) or split into
//! role blocks by lines reading exactly `[system]` and `[user]`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gateway::{Message, Role};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub system: Option<String>,
    pub user: String,
}

impl Template {
    pub fn parse(text: &str) -> Result<Template> {
        let trimmed = text.trim_start();
        if !trimmed.starts_with("[system]") && !trimmed.starts_with("[user]") {
            return Ok(Template {
                system: None,
                user: text.trim().to_string(),
            });
        }
        let mut system: Option<String> = None;
        let mut user: Option<String> = None;
        let mut current: Option<&str> = None;
        let mut buf = Vec::new();
        let mut flush = |role: Option<&str>, buf: &mut Vec<&str>| {
            let body = buf.join("\n").trim().to_string();
            buf.clear();
            match role {
                Some("system") => system = Some(body),
                Some("user") => user = Some(body),
                _ => {}
            }
        };
        for line in trimmed.lines() {
            match line.trim() {
                "[system]" | "[user]" => {
                    flush(current, &mut buf);
                    current = Some(if line.trim() == "[system]" { "system" } else { "user" });
                }
                _ => buf.push(line),
            }
        }
        flush(current, &mut buf);
        let user = user
            .filter(|u| !u.is_empty())
            .ok_or_else(|| Error::Config("template has no [user] block".into()))?;
        Ok(Template {
            system: system.filter(|s| !s.is_empty()),
            user,
        })
    }

    /// Load `name` from `dir` if present, else use `default`.
    pub fn load_or(dir: Option<&Path>, name: &str, default: &str) -> Result<Template> {
        if let Some(dir) = dir {
            let path = dir.join(name);
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                return Template::parse(&text);
            }
        }
        Template::parse(default)
    }

    pub fn render(&self, vars: &BTreeMap<String, String>) -> Vec<Message> {
        let mut out = Vec::new();
        if let Some(s) = &self.system {
            out.push(Message::new(Role::System, substitute(s, vars)));
        }
        out.push(Message::new(Role::User, substitute(&self.user, vars)));
        out
    }
}

/// Replace every `{key}` for keys in `vars`; other braces are left alone.
pub fn substitute(text: &str, vars: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if vars.contains_key(&after[..end]) => {
                out.push_str(&vars[&after[..end]]);
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
