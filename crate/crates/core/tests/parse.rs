mod common;

use proptest::prelude::*;
use serde::Deserialize;
use toonscan_core::icvl::{parse_label, ParsedLabel};
use toonscan_core::model::ClassToken;

#[derive(Deserialize)]
struct Case {
    reply: String,
    expected: Option<String>,
}

fn expected(c: &Case) -> ParsedLabel {
    match c.expected.as_deref() {
        Some("C") => ParsedLabel::Token(ClassToken::C),
        Some("H") => ParsedLabel::Token(ClassToken::H),
        None => ParsedLabel::Unparseable,
        Some(other) => panic!("bad corpus label {other}"),
    }
}

#[test]
fn adversarial_corpus() {
    let cases: Vec<Case> = serde_json::from_str(&common::read_fixture("parse_corpus.json")).unwrap();
    assert_eq!(cases.len(), 50);
    let wrong: Vec<_> = cases
        .iter()
        .filter(|c| parse_label(&c.reply) != expected(c))
        .map(|c| format!("{:?} -> {:?}", c.reply, parse_label(&c.reply)))
        .collect();
    assert!(wrong.is_empty(), "{wrong:#?}");
}

proptest! {
    #[test]
    fn never_panics(s in any::<String>()) {
        let _ = parse_label(&s);
    }

    #[test]
    fn explicit_form_wins(prefix in "[a-z .,]{0,40}", t in prop_oneof![Just('C'), Just('H')], suffix in "[ -~]{0,40}") {
        let reply = format!("{prefix} class: {t}{}", if suffix.is_empty() { String::new() } else { format!(" {suffix}") });
        let want = if t == 'C' { ClassToken::C } else { ClassToken::H };
        prop_assert_eq!(parse_label(&reply), ParsedLabel::Token(want));
    }

    #[test]
    fn lowercase_text_is_unparseable(s in "[a-z0-9 .,:;!?'-]{0,80}") {
        prop_assert_eq!(parse_label(&s), ParsedLabel::Unparseable);
    }

    #[test]
    fn tokens_inside_words_never_match(pre in "[abd-gi-zABD-GI-Z_'-]{0,6}", post in "[a-z0-9_'-]{0,6}", t in prop_oneof![Just('C'), Just('H')]) {
        prop_assume!(!pre.is_empty() || !post.is_empty());
        prop_assert_eq!(parse_label(&format!("{pre}{t}{post}")), ParsedLabel::Unparseable);
    }
}
