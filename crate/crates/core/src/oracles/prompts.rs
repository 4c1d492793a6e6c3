//! Prompt templates loaded from text assets.
//!
//! A template file has a `[system]` line, the system text, a `[user]` line and
//! the user text. `{name}` is a placeholder, `{{` and `}}` are literal braces.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use super::{OracleError, Prompt};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub template_id: String,
    pub system: String,
    pub user: String,
}

enum Piece<'a> {
    Text(&'a str),
    Brace(char),
    Slot(&'a str),
}

fn pieces(text: &str) -> Vec<Piece<'_>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Brace('{'));
                i += 2;
                start = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push(Piece::Text(&text[start..i]));
                out.push(Piece::Brace('}'));
                i += 2;
                start = i;
            }
            b'{' => {
                let rest = &text[i + 1..];
                let len = rest
                    .bytes()
                    .take_while(|b| b.is_ascii_lowercase() || *b == b'_')
                    .count();
                if len > 0 && rest.as_bytes().get(len) == Some(&b'}') {
                    out.push(Piece::Text(&text[start..i]));
                    out.push(Piece::Slot(&rest[..len]));
                    i += len + 2;
                    start = i;
                } else {
                    i += 1;
                }
            }
            _ => i += 1,
        }
    }
    out.push(Piece::Text(&text[start..]));
    out
}

fn render_text(text: &str, vars: &[(&str, &str)]) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(text.len());
    for piece in pieces(text) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Brace(c) => out.push(c),
            Piece::Slot(name) => match vars.iter().find(|(k, _)| *k == name) {
                Some((_, v)) => out.push_str(v),
                None => return Err(name.to_string()),
            },
        }
    }
    Ok(out)
}

impl PromptTemplate {
    pub fn parse(template_id: &str, text: &str) -> Result<Self> {
        let mut system: Vec<&str> = Vec::new();
        let mut user: Vec<&str> = Vec::new();
        let mut seen_user = false;
        let mut section = None;
        for line in text.lines() {
            match line.trim_end() {
                "[system]" => section = Some(false),
                "[user]" => {
                    section = Some(true);
                    seen_user = true;
                }
                _ => match section {
                    Some(false) => system.push(line),
                    Some(true) => user.push(line),
                    None if line.trim().is_empty() => {}
                    None => {
                        return Err(Error::Validation(format!(
                            "prompt {template_id}: text outside a [system]/[user] section"
                        )))
                    }
                },
            }
        }
        if !seen_user {
            return Err(Error::Validation(format!(
                "prompt {template_id}: missing [user] section"
            )));
        }
        Ok(PromptTemplate {
            template_id: template_id.to_string(),
            system: system.join("\n").trim().to_string(),
            user: user.join("\n").trim().to_string(),
        })
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        pieces(&self.system)
            .into_iter()
            .chain(pieces(&self.user))
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(s.to_string()),
                _ => None,
            })
            .collect()
    }

    /// Substitutes every placeholder. Supplying a variable the template does
    /// not use, or omitting one it does, is an error.
    pub fn render(&self, vars: &[(&str, &str)]) -> Result<Prompt, OracleError> {
        let slots = self.placeholders();
        if let Some((k, _)) = vars.iter().find(|(k, _)| !slots.contains(*k)) {
            return Err(OracleError::Template(format!(
                "{}: no placeholder {{{k}}}",
                self.template_id
            )));
        }
        let missing = |name: String| {
            OracleError::Template(format!("{}: no value for {{{name}}}", self.template_id))
        };
        Ok(Prompt {
            system: render_text(&self.system, vars).map_err(missing)?,
            user: render_text(&self.user, vars).map_err(missing)?,
        })
    }
}

/// Every template the pipeline renders.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    pub granularity: PromptTemplate,
    pub query_low: PromptTemplate,
    pub query_high: PromptTemplate,
    pub voting: PromptTemplate,
    pub relevance: PromptTemplate,
    pub mcq: PromptTemplate,
    pub annotation: PromptTemplate,
    pub answer: PromptTemplate,
}

const BUILTIN: [(&str, &str); 8] = [
    ("granularity", include_str!("../../prompts/granularity.txt")),
    ("query_low", include_str!("../../prompts/query_low.txt")),
    ("query_high", include_str!("../../prompts/query_high.txt")),
    ("voting", include_str!("../../prompts/voting.txt")),
    ("relevance", include_str!("../../prompts/relevance.txt")),
    ("mcq", include_str!("../../prompts/mcq.txt")),
    ("annotation", include_str!("../../prompts/annotation.txt")),
    ("answer", include_str!("../../prompts/answer.txt")),
];

const EXPECTED_SLOTS: [(&str, &[&str]); 8] = [
    ("granularity", &["term"]),
    ("query_low", &["keywords", "persona"]),
    ("query_high", &["keywords", "persona"]),
    ("voting", &["description", "domain", "tag_list"]),
    ("relevance", &["answer", "domain", "question", "requirement"]),
    ("mcq", &["domain", "input_content"]),
    ("annotation", &["query", "unit_list"]),
    ("answer", &["question"]),
];

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self::assemble(|id| {
            let text = BUILTIN.iter().find(|(k, _)| *k == id).unwrap().1;
            PromptTemplate::parse(id, text)
        })
        .expect("bundled prompts are valid")
    }

    /// Loads `<id>.txt` for each template from `dir`. Files that are absent
    /// fall back to the bundled copy.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Validation(format!(
                "prompts directory {} does not exist",
                dir.display()
            )));
        }
        Self::assemble(|id| {
            let path = dir.join(format!("{id}.txt"));
            if path.exists() {
                let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                PromptTemplate::parse(id, &text)
            } else {
                log::info!("prompt {id}: using bundled template");
                let text = BUILTIN.iter().find(|(k, _)| *k == id).unwrap().1;
                PromptTemplate::parse(id, text)
            }
        })
    }

    fn assemble(mut load: impl FnMut(&str) -> Result<PromptTemplate>) -> Result<Self> {
        let mut get = |id: &str| -> Result<PromptTemplate> {
            let t = load(id)?;
            let want: BTreeSet<String> = EXPECTED_SLOTS
                .iter()
                .find(|(k, _)| *k == id)
                .unwrap()
                .1
                .iter()
                .map(|s| s.to_string())
                .collect();
            if t.placeholders() != want {
                return Err(Error::Validation(format!(
                    "prompt {id}: placeholders {:?}, expected {:?}",
                    t.placeholders(),
                    want
                )));
            }
            Ok(t)
        };
        Ok(PromptLibrary {
            granularity: get("granularity")?,
            query_low: get("query_low")?,
            query_high: get("query_high")?,
            voting: get("voting")?,
            relevance: get("relevance")?,
            mcq: get("mcq")?,
            annotation: get("annotation")?,
            answer: get("answer")?,
        })
    }
}

/// The twenty scientific personas used for synthetic query generation.
pub const PERSONAS: [&str; 20] = [
    "Astrophysicist",
    "Marine Biologist",
    "AI Researcher",
    "Molecular Geneticist",
    "Quantum Physicist",
    "Environmental Chemist",
    "Neuroscientist",
    "Ecologist",
    "Bioinformatician",
    "Pharmacologist",
    "Geologist",
    "Biomedical Engineer",
    "Mathematical Modeler",
    "Virologist",
    "Behavioral Psychologist",
    "Data Scientist",
    "Theoretical Chemist",
    "Climate Scientist",
    "Structural Biologist",
    "Robotics Engineer",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_library_loads() {
        let lib = PromptLibrary::builtin();
        let p = lib.granularity.render(&[("term", "continuant")]).unwrap();
        assert_eq!(p.system, "You are a helpful AI assistant.");
        assert!(p.user.ends_with("Input: term: continuant."));
        assert!(lib.answer.system.is_empty());
    }

    #[test]
    fn double_braces_render_literally() {
        let lib = PromptLibrary::builtin();
        let p = lib
            .mcq
            .render(&[("domain", "chemistry"), ("input_content", "Q")])
            .unwrap();
        assert!(p.user.contains("{\n\"query\""));
        assert!(p.user.ends_with("}"));
        assert!(!p.user.contains("{{"));
    }

    #[test]
    fn render_rejects_unknown_and_missing_vars() {
        let t = PromptTemplate::parse("t", "[user]\nhello {name}").unwrap();
        assert!(t.render(&[("name", "x"), ("other", "y")]).is_err());
        assert!(t.render(&[]).is_err());
        assert_eq!(t.render(&[("name", "x")]).unwrap().user, "hello x");
    }

    #[test]
    fn non_placeholder_braces_survive() {
        let t = PromptTemplate::parse("t", "[user]\n{ not a slot } {Caps} {x}").unwrap();
        assert_eq!(t.placeholders().len(), 1);
        assert_eq!(t.render(&[("x", "1")]).unwrap().user, "{ not a slot } {Caps} 1");
    }

    #[test]
    fn load_dir_overrides_one_template() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("answer.txt"), "[user]\nQ: {question}\nLetter only.").unwrap();
        let lib = PromptLibrary::load_dir(dir.path()).unwrap();
        assert_eq!(lib.answer.render(&[("question", "x")]).unwrap().user, "Q: x\nLetter only.");
        assert_eq!(lib.voting, PromptLibrary::builtin().voting);
    }

    #[test]
    fn load_dir_rejects_wrong_placeholders() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("answer.txt"), "[user]\n{prompt}").unwrap();
        assert!(PromptLibrary::load_dir(dir.path()).is_err());
    }
}
