//! Prompt templates, embedded as editable text assets.
//!
//! Every template is plain text with `{slot}` placeholders. `render` replaces
//! exactly the named slots and leaves every other brace alone, so JSON bodies
//! and `\boxed{}` examples inside the templates survive untouched.

pub const SYSTEM_PROMPT: &str = include_str!("../assets/system_prompt.txt");
pub const DISTILL_PROMPT: &str = include_str!("../assets/distill_prompt.txt");
pub const CLUSTER_PROMPT: &str = include_str!("../assets/cluster_prompt.txt");
pub const JUDGE_PROMPT: &str = include_str!("../assets/judge_prompt.txt");
pub const SEARCH_TOOL_SCHEMA: &str = include_str!("../assets/search_tool.json");

/// Replace each `{name}` slot with its value. Multiple occurrences of the
/// same slot are all replaced.
pub fn render(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in slots {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_only_named_slots() {
        let s = render("a {x} b {{literal}} {x}", &[("x", "1")]);
        assert_eq!(s, "a 1 b {{literal}} 1");
    }

    #[test]
    fn templates_carry_their_slots() {
        assert!(SYSTEM_PROMPT.contains("{func_schemas}"));
        assert!(SYSTEM_PROMPT.contains("{experience}"));
        for slot in ["{question}", "{successes}", "{failures}"] {
            assert!(DISTILL_PROMPT.contains(slot), "missing {slot}");
        }
        assert!(CLUSTER_PROMPT.contains("{experiences}"));
        for slot in ["{question}", "{answer}", "{response}"] {
            assert!(JUDGE_PROMPT.contains(slot), "missing {slot}");
        }
        // The boxed-answer convention in the agent prompt must survive rendering.
        let rendered = render(
            SYSTEM_PROMPT,
            &[("func_schemas", "{}"), ("experience", "None.")],
        );
        assert!(rendered.contains("\\boxed{20C}"));
        assert!(rendered.contains("<tool_call>"));
    }
}
