//! Versioned prompt templates with `{{name}}` placeholders.

pub const EXTRACT: &str = include_str!("../../prompts/extract.txt");
pub const MODEL: &str = include_str!("../../prompts/model.txt");
pub const MODEL_REPAIR: &str = include_str!("../../prompts/model_repair.txt");
pub const REFORMAT: &str = include_str!("../../prompts/reformat.txt");
pub const CONSISTENCY: &str = include_str!("../../prompts/consistency.txt");
pub const CODEGEN: &str = include_str!("../../prompts/codegen.txt");
pub const REPAIR: &str = include_str!("../../prompts/repair.txt");

/// Replaces each `{{key}}` in one pass, so substituted values are never
/// rescanned. Unknown placeholders are left as written.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        match after.find("}}") {
            Some(close) => {
                let key = &after[..close];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => {
                        out.push_str("{{");
                        out.push_str(key);
                        out.push_str("}}");
                    }
                }
                rest = &after[close + 2..];
            }
            None => {
                out.push_str(&rest[open..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}
