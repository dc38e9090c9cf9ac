//! Rule-based caption generation: two templates with fixed selection
//! probabilities, variables filled from per-variable candidate lists.
//!
//! Template 1 (p = 0.7): `(race) (identity) wearing (color1) (upper cloth) and (color2) (lower cloth)`
//! Template 2 (p = 0.3): `(race) (identity) wearing (color1) (clothing)`

use rand::Rng;

use crate::error::{Error, Result};

const FULL_VOCAB: &str = include_str!("../../assets/caption_vocab_full.txt");

pub const FORMAT_PROBS: [f64; 2] = [0.7, 0.3];

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionGrammar {
    pub format_probs: [f64; 2],
    pub race: Vec<String>,
    pub identity: Vec<String>,
    /// Shared candidate list for color1 and color2.
    pub color: Vec<String>,
    pub upper: Vec<String>,
    pub lower: Vec<String>,
    pub clothing: Vec<String>,
}

impl CaptionGrammar {
    /// The complete vocabulary shipped as a data file.
    pub fn full() -> Self {
        let mut sections: std::collections::HashMap<String, Vec<String>> =
            std::collections::HashMap::new();
        let mut current = String::new();
        for line in FULL_VOCAB.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = name.to_string();
                sections.entry(current.clone()).or_default();
            } else {
                let list = sections.entry(current.clone()).or_default();
                if !list.iter().any(|v| v == line) {
                    list.push(line.to_string());
                }
            }
        }
        let take = |name: &str| sections.get(name).cloned().unwrap_or_default();
        let grammar = Self {
            format_probs: FORMAT_PROBS,
            race: take("race"),
            identity: take("identity"),
            color: take("color"),
            upper: take("upper"),
            lower: take("lower"),
            clothing: take("clothing"),
        };
        grammar.validate().expect("bundled vocabulary is valid");
        grammar
    }

    /// Small default vocabulary for fast tests; grammar logic is identical.
    pub fn truncated() -> Self {
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect();
        Self {
            format_probs: FORMAT_PROBS,
            race: list(&["An Asian", "A North American"]),
            identity: list(&["man", "woman", "boy", "girl"]),
            color: list(&["sky blue", "red", "black", "forest green", "baby pink", "white"]),
            upper: list(&["t-shirt", "hoodie", "sweater"]),
            lower: list(&["jeans", "shorts", "skirt"]),
            clothing: list(&["one-piece", "dress", "jumpsuit"]),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.format_probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invariant("format_probs", "must sum to 1"));
        }
        for (name, list) in [
            ("race", &self.race),
            ("identity", &self.identity),
            ("color", &self.color),
            ("upper", &self.upper),
            ("lower", &self.lower),
            ("clothing", &self.clothing),
        ] {
            if list.is_empty() {
                return Err(Error::Invariant {
                    field: "vocab",
                    reason: format!("candidate list `{name}` is empty"),
                });
            }
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut impl Rng, list: &'a [String]) -> &'a str {
    &list[rng.gen_range(0..list.len())]
}

/// Draw a caption: template chosen by the documented probabilities, every
/// variable substituted from its candidate list.
pub fn generate_caption(rng: &mut impl Rng, grammar: &CaptionGrammar) -> String {
    let format1 = rng.gen::<f64>() < grammar.format_probs[0];
    let race = pick(rng, &grammar.race);
    let identity = pick(rng, &grammar.identity);
    if format1 {
        let color1 = pick(rng, &grammar.color);
        let upper = pick(rng, &grammar.upper);
        let color2 = pick(rng, &grammar.color);
        let lower = pick(rng, &grammar.lower);
        format!("{race} {identity} wearing {color1} {upper} and {color2} {lower}")
    } else {
        let color1 = pick(rng, &grammar.color);
        let clothing = pick(rng, &grammar.clothing);
        format!("{race} {identity} wearing {color1} {clothing}")
    }
}

/// Variable bindings of a parsed caption.
#[derive(Debug, Clone, PartialEq)]
pub enum ParsedCaption {
    TwoPiece {
        race: String,
        identity: String,
        color1: String,
        upper: String,
        color2: String,
        lower: String,
    },
    OnePiece {
        race: String,
        identity: String,
        color1: String,
        clothing: String,
    },
}

/// Candidates from `list` that prefix `s`, returning the remainder after the
/// candidate and one following space (or end of string).
fn matches_at<'a>(s: &'a str, list: &[String]) -> Vec<(usize, &'a str)> {
    let mut out = Vec::new();
    for (i, cand) in list.iter().enumerate() {
        if let Some(rest) = s.strip_prefix(cand.as_str()) {
            if rest.is_empty() {
                out.push((i, rest));
            } else if let Some(rest) = rest.strip_prefix(' ') {
                out.push((i, rest));
            }
        }
    }
    out
}

/// Parse a caption back against the grammar; `None` when it matches neither
/// template exactly.
pub fn parse_caption(text: &str, grammar: &CaptionGrammar) -> Option<ParsedCaption> {
    for (ri, rest) in matches_at(text, &grammar.race) {
        for (ii, rest) in matches_at(rest, &grammar.identity) {
            let Some(rest) = rest.strip_prefix("wearing ") else {
                continue;
            };
            // Template 1: color1 upper "and" color2 lower
            for (c1, rest1) in matches_at(rest, &grammar.color) {
                for (ui, rest1) in matches_at(rest1, &grammar.upper) {
                    let Some(rest1) = rest1.strip_prefix("and ") else {
                        continue;
                    };
                    for (c2, rest1) in matches_at(rest1, &grammar.color) {
                        for (li, rest1) in matches_at(rest1, &grammar.lower) {
                            if rest1.is_empty() {
                                return Some(ParsedCaption::TwoPiece {
                                    race: grammar.race[ri].clone(),
                                    identity: grammar.identity[ii].clone(),
                                    color1: grammar.color[c1].clone(),
                                    upper: grammar.upper[ui].clone(),
                                    color2: grammar.color[c2].clone(),
                                    lower: grammar.lower[li].clone(),
                                });
                            }
                        }
                    }
                }
            }
            // Template 2: color1 clothing
            for (c1, rest2) in matches_at(rest, &grammar.color) {
                for (ci, rest2) in matches_at(rest2, &grammar.clothing) {
                    if rest2.is_empty() {
                        return Some(ParsedCaption::OnePiece {
                            race: grammar.race[ri].clone(),
                            identity: grammar.identity[ii].clone(),
                            color1: grammar.color[c1].clone(),
                            clothing: grammar.clothing[ci].clone(),
                        });
                    }
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn paper_example_caption_is_producible() {
        let full = CaptionGrammar::full();
        let parsed = parse_caption("An Asian girl wearing sky blue one-piece", &full).unwrap();
        assert_eq!(
            parsed,
            ParsedCaption::OnePiece {
                race: "An Asian".into(),
                identity: "girl".into(),
                color1: "sky blue".into(),
                clothing: "one-piece".into(),
            }
        );
        // The truncated default can produce it too.
        assert!(parse_caption("An Asian girl wearing sky blue one-piece", &CaptionGrammar::truncated()).is_some());
    }

    #[test]
    fn format_one_frequency_matches_seven_tenths() {
        let grammar = CaptionGrammar::truncated();
        let mut rng = seeded_rng(1, "caption/freq");
        let n = 10_000;
        let mut fmt1 = 0usize;
        for _ in 0..n {
            let cap = generate_caption(&mut rng, &grammar);
            if cap.contains(" and ") {
                fmt1 += 1;
            }
        }
        let freq = fmt1 as f64 / n as f64;
        assert!((freq - 0.7).abs() < 0.02, "format-1 frequency {freq}");
    }

    #[test]
    fn every_generated_caption_reparses() {
        for grammar in [CaptionGrammar::truncated(), CaptionGrammar::full()] {
            let mut rng = seeded_rng(2, "caption/reparse");
            for _ in 0..2_000 {
                let cap = generate_caption(&mut rng, &grammar);
                assert!(parse_caption(&cap, &grammar).is_some(), "unparseable: {cap}");
            }
        }
    }

    #[test]
    fn producible_set_equals_templates_times_vocab() {
        // Tiny vocabulary small enough to enumerate exhaustively.
        let list = |items: &[&str]| items.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let g = CaptionGrammar {
            format_probs: FORMAT_PROBS,
            race: list(&["An Asian"]),
            identity: list(&["boy", "girl"]),
            color: list(&["red", "sky blue"]),
            upper: list(&["hoodie"]),
            lower: list(&["jeans", "skirt"]),
            clothing: list(&["dress"]),
        };
        let mut expected = std::collections::BTreeSet::new();
        for r in &g.race {
            for i in &g.identity {
                for c1 in &g.color {
                    for u in &g.upper {
                        for c2 in &g.color {
                            for l in &g.lower {
                                expected.insert(format!("{r} {i} wearing {c1} {u} and {c2} {l}"));
                            }
                        }
                    }
                    for cl in &g.clothing {
                        expected.insert(format!("{r} {i} wearing {c1} {cl}"));
                    }
                }
            }
        }
        // Every enumerated caption parses; sampling only ever lands inside
        // the enumerated set.
        for cap in &expected {
            assert!(parse_caption(cap, &g).is_some(), "{cap}");
        }
        let mut rng = seeded_rng(3, "caption/closure");
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..5_000 {
            seen.insert(generate_caption(&mut rng, &g));
        }
        assert!(seen.is_subset(&expected));
        assert_eq!(seen, expected, "sampling should cover the tiny vocabulary");
    }

    #[test]
    fn malformed_captions_do_not_parse() {
        let g = CaptionGrammar::truncated();
        for bad in [
            "An Asian girl wearing sky blue",
            "girl wearing sky blue one-piece",
            "An Asian girl wearing neon one-piece",
            "An Asian girl wearing sky blue one-piece extra",
            "An Asian girl in sky blue one-piece",
        ] {
            assert!(parse_caption(bad, &g).is_none(), "parsed: {bad}");
        }
    }

    #[test]
    fn full_vocabulary_has_expected_sections() {
        let g = CaptionGrammar::full();
        assert_eq!(g.race.len(), 6);
        assert_eq!(g.identity.len(), 4);
        assert!(g.color.len() > 180, "colors: {}", g.color.len());
        assert_eq!(g.upper.len(), 28);
        assert_eq!(g.lower.len(), 28);
        assert_eq!(g.clothing.len(), 20);
    }
}
