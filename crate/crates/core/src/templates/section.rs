/// Splits prose into sentences at `.`, `!`, or `?` followed by whitespace.
///
/// Abbreviations such as "approx. 3 cm" are split too; report prose rarely
/// needs better.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + c.len_utf8();
                    push_trimmed(&mut out, &text[start..end]);
                    start = end;
                }
            }
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed<'a>(out: &mut Vec<&'a str>, s: &'a str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s);
    }
}

/// Sentences mentioning any keyword (case-insensitive), joined in order with
/// single spaces. `None` when nothing matches.
pub fn extract_organ_section(full_text: &str, keywords: &[String]) -> Option<String> {
    let keys: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).filter(|k| !k.is_empty()).collect();
    let picked: Vec<&str> = split_sentences(full_text)
        .into_iter()
        .filter(|s| {
            let lower = s.to_lowercase();
            keys.iter().any(|k| lower.contains(k.as_str()))
        })
        .collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.join(" "))
    }
}

/// Keywords used to find the organ's sentences when none are configured.
pub fn default_keywords(organ: &str) -> Vec<String> {
    let words: &[&str] = match organ {
        "liver" => &["liver", "hepatic", "biliary", "bile duct"],
        _ => &[],
    };
    if words.is_empty() {
        vec![organ.to_string()]
    } else {
        words.iter().map(|w| w.to_string()).collect()
    }
}
