//! Fixture-driven oracle.
//!
//! Fixture files are UTF-8 with one entry per line:
//!
//! ```text
//! # comment
//! <prompt hash><TAB><reply>
//! ~<regex><TAB><reply template>
//! ```
//!
//! Exact hash entries win. Otherwise the `~` routes are tried in file order
//! against `system + "\n" + user`; the first match produces the reply, with
//! `$name` / `${name}` expanded from the route's capture groups (`$$` is a
//! literal dollar). Replies use `\n`, `\t` and `\\` escapes.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;

use super::{Oracle, OracleError, Prompt};
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct ScriptedOracle {
    name: String,
    exact: HashMap<String, String>,
    routes: Vec<(Regex, String)>,
}

pub fn unescape_reply(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

pub fn escape_reply(reply: &str) -> String {
    let mut out = String::with_capacity(reply.len());
    for c in reply.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

impl ScriptedOracle {
    pub fn new(name: impl Into<String>) -> Self {
        ScriptedOracle {
            name: name.into(),
            exact: HashMap::new(),
            routes: Vec::new(),
        }
    }

    pub fn with_reply(mut self, prompt: &Prompt, reply: impl Into<String>) -> Self {
        self.exact.insert(prompt.hash(), reply.into());
        self
    }

    pub fn with_route(mut self, pattern: &str, reply: impl Into<String>) -> Result<Self> {
        let re = Regex::new(pattern)
            .map_err(|e| Error::Validation(format!("bad route pattern {pattern:?}: {e}")))?;
        self.routes.push((re, reply.into()));
        Ok(self)
    }

    pub fn parse(name: impl Into<String>, text: &str, origin: &Path) -> Result<Self> {
        let mut oracle = ScriptedOracle::new(name);
        for (lineno, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, reply) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(origin, lineno, "expected key<TAB>reply"))?;
            let reply = unescape_reply(reply);
            if let Some(pattern) = key.strip_prefix('~') {
                let re = Regex::new(pattern)
                    .map_err(|e| Error::parse(origin, lineno, format!("bad route regex: {e}")))?;
                oracle.routes.push((re, reply));
            } else {
                let key = key.trim().to_ascii_lowercase();
                if key.is_empty() || !key.chars().all(|c| c.is_ascii_hexdigit()) {
                    return Err(Error::parse(origin, lineno, format!("bad prompt hash {key:?}")));
                }
                if oracle.exact.insert(key.clone(), reply).is_some() {
                    log::warn!("{}: fixture hash {key} repeated; last entry wins", origin.display());
                }
            }
        }
        Ok(oracle)
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(name, &text, path)
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Resolves a raw key (prompt or other request text) to a reply.
    pub(crate) fn lookup(&self, hash: &str, text: &str) -> Result<String, OracleError> {
        if let Some(reply) = self.exact.get(hash) {
            return Ok(reply.clone());
        }
        for (re, template) in &self.routes {
            if let Some(caps) = re.captures(text) {
                let mut out = String::new();
                caps.expand(template, &mut out);
                return Ok(out);
            }
        }
        Err(OracleError::FixtureMiss {
            oracle: self.name.clone(),
            hash: hash.to_string(),
        })
    }
}

impl Oracle for ScriptedOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &Prompt) -> Result<String, OracleError> {
        self.lookup(&prompt.hash(), &prompt.joined())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_fixture_hit() {
        let p = Prompt::user("classify: anatomical entity");
        let text = format!("# fixture\n{}\t(moderate)\n", p.hash());
        let o = ScriptedOracle::parse("s", &text, Path::new("f.tsv")).unwrap();
        assert_eq!(o.complete(&p).unwrap(), "(moderate)");
    }

    #[test]
    fn fixture_miss_names_hash() {
        let o = ScriptedOracle::new("s");
        let p = Prompt::user("anything");
        match o.complete(&p).unwrap_err() {
            OracleError::FixtureMiss { hash, .. } => assert_eq!(hash, p.hash()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn routes_expand_captures_and_escapes() {
        let text = "~term: (?P<t>\\w+)\\.\tterm=$t\\nnext line\n~.*\tfallback\n";
        let o = ScriptedOracle::parse("s", text, Path::new("f.tsv")).unwrap();
        assert_eq!(
            o.complete(&Prompt::user("Input: term: continuant.")).unwrap(),
            "term=continuant\nnext line"
        );
        assert_eq!(o.complete(&Prompt::user("other")).unwrap(), "fallback");
    }

    #[test]
    fn exact_entries_win_over_routes() {
        let p = Prompt::user("x");
        let text = format!("~.*\troute\n{}\texact\n", p.hash());
        let o = ScriptedOracle::parse("s", &text, Path::new("f.tsv")).unwrap();
        assert_eq!(o.complete(&p).unwrap(), "exact");
    }

    #[test]
    fn malformed_line_is_reported() {
        let err = ScriptedOracle::parse("s", "nohash-no-tab\n", Path::new("f.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn escape_round_trip() {
        let s = "a\\b\nc\td";
        assert_eq!(unescape_reply(&escape_reply(s)), s);
    }
}
