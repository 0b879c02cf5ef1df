//! Prompt templates. The three module prompts (mode selector, reasoning,
//! action generation) live in `prompts/` as plain-text assets with named
//! placeholders; the built copies are embedded so the library works without
//! the directory present.

use std::io;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct PromptSet {
    pub mode_selector: String,
    pub cot_reasoning: String,
    pub action_generation: String,
}

impl PromptSet {
    /// The templates shipped with the repository.
    pub fn builtin() -> Self {
        Self {
            mode_selector: include_str!("../../../../prompts/mode_selector.txt").to_string(),
            cot_reasoning: include_str!("../../../../prompts/cot_reasoning.txt").to_string(),
            action_generation: include_str!("../../../../prompts/action_generation.txt").to_string(),
        }
    }

    /// Loads the three templates from a directory (`mode_selector.txt`,
    /// `cot_reasoning.txt`, `action_generation.txt`).
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        Ok(Self {
            mode_selector: std::fs::read_to_string(dir.join("mode_selector.txt"))?,
            cot_reasoning: std::fs::read_to_string(dir.join("cot_reasoning.txt"))?,
            action_generation: std::fs::read_to_string(dir.join("action_generation.txt"))?,
        })
    }
}

impl Default for PromptSet {
    fn default() -> Self {
        Self::builtin()
    }
}

/// Replaces `{name}` placeholders. Unknown placeholders are left intact.
pub fn fill(template: &str, substitutions: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in substitutions {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_templates_carry_their_placeholders() {
        let prompts = PromptSet::builtin();
        assert!(prompts.mode_selector.contains("{instruction}"));
        assert!(prompts.mode_selector.contains("{observation_table}"));
        assert!(prompts.cot_reasoning.contains("{primitive_docs}"));
        assert!(prompts.action_generation.contains("{primitive_docs}"));
        assert!(prompts.action_generation.contains("{rationale}"));
    }

    #[test]
    fn fill_replaces_named_placeholders() {
        let out = fill("a {x} b {y} {x}", &[("x", "1"), ("y", "2")]);
        assert_eq!(out, "a 1 b 2 1");
    }
}
