//! Prompt strategies and their expansion into chat messages.
//!
//! Every builder here is a pure function of its inputs. The literal template
//! strings are fixed; only the target language name, the domain tag and the
//! sentences are substituted into them.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::LanguagePair;

pub const TASK_SYSTEM: &str = "You are a machine translation system.";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("strategy `{strategy}` requires `{field}`")]
    MissingField { strategy: Strategy, field: &'static str },
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("source sentence is empty")]
    EmptySource,
    #[error("chain-of-thought demonstration has no aligned spans")]
    EmptyAlignment,
    #[error("chain-of-thought demonstration has an empty span at position {0}")]
    EmptySpan(usize),
    #[error("domain set needs at least two domains, got {0}")]
    DegenerateDomainSet(usize),
    #[error("domain `{0}` is not in the domain set")]
    DomainNotInSet(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

pub type MessageList = Vec<ChatMessage>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Baseline,
    Tsp,
    Dsp,
    Fdsp,
    FewShot,
    ZeroShotCot,
    OneShotCot,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Baseline,
        Strategy::Tsp,
        Strategy::Dsp,
        Strategy::Fdsp,
        Strategy::FewShot,
        Strategy::ZeroShotCot,
        Strategy::OneShotCot,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::Tsp => "tsp",
            Strategy::Dsp => "dsp",
            Strategy::Fdsp => "fdsp",
            Strategy::FewShot => "few_shot",
            Strategy::ZeroShotCot => "zero_shot_cot",
            Strategy::OneShotCot => "one_shot_cot",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| PromptError::UnknownStrategy(s.to_string()))
    }
}

/// A demonstration for one-shot chain-of-thought prompting: a sentence pair
/// and its ordered span alignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedDemo {
    pub source: String,
    pub target: String,
    pub alignment: Vec<(String, String)>,
}

impl AlignedDemo {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.alignment.is_empty() {
            return Err(PromptError::EmptyAlignment);
        }
        for (i, (s, t)) in self.alignment.iter().enumerate() {
            if s.trim().is_empty() || t.trim().is_empty() {
                return Err(PromptError::EmptySpan(i + 1));
            }
        }
        Ok(())
    }
}

/// A source/reference pair shown as an in-context example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    pub source: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub strategy: Strategy,
    pub pair: LanguagePair,
    /// Domain tag substituted into the system message. For `fdsp` this is
    /// already the wrong domain (see [`wrong_domain`]).
    pub domain: Option<String>,
    pub demos: Vec<Demo>,
    pub cot_demo: Option<AlignedDemo>,
    /// Prepend the task system message to few-shot prompts.
    pub with_task_system: bool,
}

impl PromptSpec {
    pub fn new(strategy: Strategy, pair: LanguagePair) -> Self {
        PromptSpec { strategy, pair, domain: None, demos: Vec::new(), cot_demo: None, with_task_system: true }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn with_demos(mut self, demos: Vec<Demo>) -> Self {
        self.demos = demos;
        self
    }

    pub fn with_cot_demo(mut self, demo: AlignedDemo) -> Self {
        self.cot_demo = Some(demo);
        self
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let missing = |field| Err(PromptError::MissingField { strategy: self.strategy, field });
        match self.strategy {
            Strategy::Dsp | Strategy::Fdsp if self.domain.as_deref().is_none_or(|d| d.trim().is_empty()) => {
                missing("domain")
            }
            Strategy::FewShot if self.demos.is_empty() => missing("demos"),
            Strategy::OneShotCot => match &self.cot_demo {
                None => missing("cot_demo"),
                Some(demo) => demo.validate(),
            },
            _ => Ok(()),
        }
    }
}

fn translation_instruction(tgt_name: &str) -> String {
    format!("Please provide the {tgt_name} translation for the following sentence:")
}

fn cot_instruction(tgt_name: &str) -> String {
    format!(
        "Please provide the {tgt_name} translation for the following sentence step by step and then provide the complete sentence:"
    )
}

fn domain_system(domain: &str) -> String {
    format!("You are a machine translation system that translates sentences in the {domain} domain.")
}

fn query(instruction: &str, sentence: &str) -> String {
    format!("{instruction} {sentence}")
}

/// Expands a prompt strategy into the chat messages sent for `src`.
pub fn build_prompt(spec: &PromptSpec, src: &str) -> Result<MessageList, PromptError> {
    spec.validate()?;
    if src.trim().is_empty() {
        return Err(PromptError::EmptySource);
    }
    let tgt = spec.pair.tgt_name.as_str();
    let plain = translation_instruction(tgt);
    let messages = match spec.strategy {
        Strategy::Baseline => vec![ChatMessage::user(query(&plain, src))],
        Strategy::Tsp => vec![ChatMessage::system(TASK_SYSTEM), ChatMessage::user(query(&plain, src))],
        Strategy::Dsp | Strategy::Fdsp => {
            let domain = spec.domain.as_deref().expect("validated");
            vec![ChatMessage::system(domain_system(domain)), ChatMessage::user(query(&plain, src))]
        }
        Strategy::FewShot => {
            let mut out = Vec::with_capacity(2 * spec.demos.len() + 2);
            if spec.with_task_system {
                out.push(ChatMessage::system(TASK_SYSTEM));
            }
            for demo in &spec.demos {
                out.push(ChatMessage::user(query(&plain, &demo.source)));
                out.push(ChatMessage::assistant(demo.reference.clone()));
            }
            out.push(ChatMessage::user(query(&plain, src)));
            out
        }
        Strategy::ZeroShotCot => {
            vec![ChatMessage::system(TASK_SYSTEM), ChatMessage::user(query(&cot_instruction(tgt), src))]
        }
        Strategy::OneShotCot => {
            let demo = spec.cot_demo.as_ref().expect("validated");
            let block = format_cot_demo(demo, &spec.pair)?;
            vec![
                ChatMessage::system(TASK_SYSTEM),
                ChatMessage::user(format!("{block} {}", query(&cot_instruction(tgt), src))),
            ]
        }
    };
    Ok(messages)
}

/// Renders the worked example of a one-shot chain-of-thought prompt:
/// instruction and source, the numbered span pairs, then the full target.
pub fn format_cot_demo(demo: &AlignedDemo, pair: &LanguagePair) -> Result<String, PromptError> {
    demo.validate()?;
    let tgt = pair.tgt_name.as_str();
    let mut out = query(&cot_instruction(tgt), &demo.source);
    for (i, (s, t)) in demo.alignment.iter().enumerate() {
        out.push_str(&format!(" {}. {} - {}", i + 1, s.trim(), t.trim()));
    }
    out.push_str(&format!(" The complete sentence in {tgt} is: {}", demo.target));
    Ok(out)
}

/// Picks the deliberately wrong domain used by F-DSP.
///
/// biomedical and news are exchanged; e-commerce maps to news. Any other
/// domain, or a mapped domain absent from `domain_set`, falls back to the
/// lexicographically first other member of the set.
pub fn wrong_domain(true_domain: &str, domain_set: &BTreeSet<String>) -> Result<String, PromptError> {
    if domain_set.len() < 2 {
        return Err(PromptError::DegenerateDomainSet(domain_set.len()));
    }
    if !domain_set.contains(true_domain) {
        return Err(PromptError::DomainNotInSet(true_domain.to_string()));
    }
    let mapped = match true_domain {
        "biomedical" => Some("news"),
        "news" => Some("biomedical"),
        "e-commerce" => Some("news"),
        _ => None,
    };
    if let Some(m) = mapped.filter(|m| domain_set.contains(*m)) {
        return Ok(m.to_string());
    }
    Ok(domain_set.iter().find(|d| d.as_str() != true_domain).expect("at least two domains").clone())
}

/// Recovers the sentence being translated from the final user message of a
/// prompt built by [`build_prompt`]: the text after the last translation
/// instruction. Returns the whole content when no instruction is found.
pub fn extract_query(content: &str) -> &str {
    const MARKERS: [&str; 2] = [
        " translation for the following sentence step by step and then provide the complete sentence: ",
        " translation for the following sentence: ",
    ];
    MARKERS
        .iter()
        .filter_map(|m| content.rfind(m).map(|pos| pos + m.len()))
        .max()
        .map_or(content, |start| &content[start..])
}

/// Recovers the target language name from a translation instruction.
pub fn extract_target_name(content: &str) -> Option<&str> {
    const PREFIX: &str = "Please provide the ";
    const SUFFIX: &str = " translation for the following sentence";
    let start = content.rfind(PREFIX)? + PREFIX.len();
    let len = content[start..].find(SUFFIX)?;
    Some(&content[start..start + len])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use proptest::strategy::Strategy as _;

    fn pair(tgt: &str, name: &str) -> LanguagePair {
        LanguagePair::new("en", tgt, name).unwrap()
    }

    const S: &str =
        "Sadly, as newer methods of writing have emerged, the pencil has been relegated to lesser status and uses.";

    #[test]
    fn baseline_template() {
        let spec = PromptSpec::new(Strategy::Baseline, pair("de", "German"));
        let msgs = build_prompt(&spec, S).unwrap();
        assert_eq!(
            msgs,
            vec![ChatMessage::user(format!("Please provide the German translation for the following sentence: {S}"))]
        );
    }

    #[test]
    fn tsp_template() {
        let spec = PromptSpec::new(Strategy::Tsp, pair("de", "German"));
        let msgs = build_prompt(&spec, S).unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0], ChatMessage::system("You are a machine translation system."));
        assert_eq!(msgs[1].content, format!("Please provide the German translation for the following sentence: {S}"));
    }

    #[test]
    fn dsp_template() {
        let p = LanguagePair::new("zh", "en", "English").unwrap();
        let spec = PromptSpec::new(Strategy::Dsp, p).with_domain("biomedical");
        let msgs = build_prompt(&spec, "句子").unwrap();
        assert_eq!(
            msgs[0].content,
            "You are a machine translation system that translates sentences in the biomedical domain."
        );
        assert_eq!(msgs[1].content, "Please provide the English translation for the following sentence: 句子");
    }

    #[test]
    fn zero_shot_cot_template() {
        let spec = PromptSpec::new(Strategy::ZeroShotCot, pair("de", "German"));
        let msgs = build_prompt(&spec, S).unwrap();
        assert_eq!(msgs[0].content, TASK_SYSTEM);
        assert_eq!(
            msgs[1].content,
            format!("Please provide the German translation for the following sentence step by step and then provide the complete sentence: {S}")
        );
    }

    fn hiking_demo() -> AlignedDemo {
        let spans = [
            ("That said", "jedoch damit"),
            ("expect", "Rechnen sie"),
            ("to be", "zu sein"),
            ("out of breath", "außer Atem"),
            ("and", "und"),
            ("take care", "vorsichtig"),
            ("in the steeper portions", "in den steileren Abschnitten"),
            ("especially", "besonders"),
            ("when wet", "wenn es nass ist"),
            ("become", "werden"),
            ("dangerous", "gefährlich"),
            ("quickly", "schnell"),
        ];
        AlignedDemo {
            source: "That said, expect to be out of breath, and take care in the steeper portions, especially when wet, as it can become dangerous quickly.".into(),
            target: "Rechnen Sie jedoch damit, außer Atem zu sein, und seien Sie in den steileren Abschnitten vorsichtig, besonders wenn es nass ist, da es dort schnell gefährlich werden kann.".into(),
            alignment: spans.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }

    #[test]
    fn cot_demo_enumeration() {
        let text = format_cot_demo(&hiking_demo(), &pair("de", "German")).unwrap();
        assert!(text.contains(" 1. That said - jedoch damit 2. expect - Rechnen sie "));
        assert!(text.contains("12. quickly - schnell The complete sentence in German is: Rechnen Sie jedoch"));
        assert!(!text.contains("13."));

        let single = AlignedDemo {
            source: "Sadly".into(),
            target: "Leider".into(),
            alignment: vec![("Sadly".into(), "Leider".into())],
        };
        let text = format_cot_demo(&single, &pair("de", "German")).unwrap();
        assert!(text.contains("1. Sadly - Leider"));
    }

    #[test]
    fn cot_demo_empty_alignment() {
        let demo = AlignedDemo { source: "a".into(), target: "b".into(), alignment: vec![] };
        assert_eq!(format_cot_demo(&demo, &pair("de", "German")), Err(PromptError::EmptyAlignment));
    }

    #[test]
    fn one_shot_cot_layout() {
        let spec = PromptSpec::new(Strategy::OneShotCot, pair("de", "German")).with_cot_demo(hiking_demo());
        let msgs = build_prompt(&spec, S).unwrap();
        let block = format_cot_demo(&hiking_demo(), &pair("de", "German")).unwrap();
        assert_eq!(msgs[0].content, TASK_SYSTEM);
        assert_eq!(
            msgs[1].content,
            format!("{block} Please provide the German translation for the following sentence step by step and then provide the complete sentence: {S}")
        );
        assert_eq!(extract_query(&msgs[1].content), S);
    }

    #[test]
    fn few_shot_layout() {
        let demos = vec![
            Demo { source: "a".into(), reference: "A".into() },
            Demo { source: "b".into(), reference: "B".into() },
        ];
        let spec = PromptSpec::new(Strategy::FewShot, pair("de", "German")).with_demos(demos);
        let msgs = build_prompt(&spec, "q").unwrap();
        let roles: Vec<Role> = msgs.iter().map(|m| m.role).collect();
        assert_eq!(roles, vec![Role::System, Role::User, Role::Assistant, Role::User, Role::Assistant, Role::User]);
        assert_eq!(msgs[1].content, "Please provide the German translation for the following sentence: a");
        assert_eq!(msgs[4].content, "B");
        let tsp = build_prompt(&PromptSpec::new(Strategy::Tsp, pair("de", "German")), "q").unwrap();
        assert_eq!(msgs.last(), tsp.last());

        let mut bare = spec.clone();
        bare.with_task_system = false;
        assert_eq!(build_prompt(&bare, "q").unwrap()[0].role, Role::User);
    }

    #[test]
    fn missing_fields() {
        let p = pair("de", "German");
        assert_eq!(
            build_prompt(&PromptSpec::new(Strategy::Dsp, p.clone()), "x"),
            Err(PromptError::MissingField { strategy: Strategy::Dsp, field: "domain" })
        );
        assert_eq!(
            build_prompt(&PromptSpec::new(Strategy::FewShot, p.clone()), "x"),
            Err(PromptError::MissingField { strategy: Strategy::FewShot, field: "demos" })
        );
        assert_eq!(
            build_prompt(&PromptSpec::new(Strategy::OneShotCot, p.clone()), "x"),
            Err(PromptError::MissingField { strategy: Strategy::OneShotCot, field: "cot_demo" })
        );
        assert_eq!(build_prompt(&PromptSpec::new(Strategy::Tsp, p), "  "), Err(PromptError::EmptySource));
        assert_eq!("cot".parse::<Strategy>(), Err(PromptError::UnknownStrategy("cot".into())));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.as_str()));
        }
    }

    #[test]
    fn wrong_domain_exchange() {
        let set: BTreeSet<String> = ["biomedical", "news"].iter().map(|s| s.to_string()).collect();
        assert_eq!(wrong_domain("biomedical", &set).unwrap(), "news");
        assert_eq!(wrong_domain("news", &set).unwrap(), "biomedical");
        let one: BTreeSet<String> = ["e-commerce".to_string()].into();
        assert_eq!(wrong_domain("e-commerce", &one), Err(PromptError::DegenerateDomainSet(1)));
        let three: BTreeSet<String> = ["biomedical", "news", "e-commerce"].iter().map(|s| s.to_string()).collect();
        assert_eq!(wrong_domain("e-commerce", &three).unwrap(), "news");
        let other: BTreeSet<String> = ["general", "legal", "news"].iter().map(|s| s.to_string()).collect();
        assert_eq!(wrong_domain("news", &other).unwrap(), "general");
        assert_eq!(wrong_domain("general", &other).unwrap(), "legal");
        assert!(matches!(wrong_domain("sports", &other), Err(PromptError::DomainNotInSet(_))));
    }

    #[test]
    fn target_name_extraction() {
        let c = "Please provide the Romanian translation for the following sentence: x";
        assert_eq!(extract_target_name(c), Some("Romanian"));
        assert_eq!(extract_query(c), "x");
        assert_eq!(extract_query("no template"), "no template");
    }

    fn sentence() -> impl proptest::strategy::Strategy<Value = String> {
        "[a-zA-Z0-9 ,.!?'äöü中文]{1,60}".prop_filter("non-blank", |s| !s.trim().is_empty())
    }

    proptest! {
        #[test]
        fn tsp_is_baseline_plus_system(src in sentence(), name in "[A-Z][a-z]{2,10}") {
            let p = LanguagePair::new("xx", "yy", &name).unwrap();
            let base = build_prompt(&PromptSpec::new(Strategy::Baseline, p.clone()), &src).unwrap();
            let tsp = build_prompt(&PromptSpec::new(Strategy::Tsp, p), &src).unwrap();
            prop_assert_eq!(tsp.len(), base.len() + 1);
            prop_assert_eq!(&tsp[0], &ChatMessage::system(TASK_SYSTEM));
            prop_assert_eq!(&tsp[1..], &base[..]);
        }

        #[test]
        fn dsp_fdsp_differ_only_in_domain(src in sentence(), d1 in "[a-z]{3,12}", d2 in "[a-z]{3,12}") {
            let p = LanguagePair::new("en", "de", "German").unwrap();
            let dsp = build_prompt(&PromptSpec::new(Strategy::Dsp, p.clone()).with_domain(d1.clone()), &src).unwrap();
            let fdsp = build_prompt(&PromptSpec::new(Strategy::Fdsp, p).with_domain(d2.clone()), &src).unwrap();
            prop_assert_eq!(&dsp[1], &fdsp[1]);
            prop_assert_eq!(dsp[0].content.replacen(&format!(" {d1} domain."), &format!(" {d2} domain."), 1), fdsp[0].content.clone());
        }

        #[test]
        fn deterministic_and_no_placeholders(src in sentence(), k in 0usize..4) {
            let p = LanguagePair::new("en", "de", "German").unwrap();
            let demos: Vec<Demo> = (0..k.max(1)).map(|i| Demo { source: format!("s{i}"), reference: format!("r{i}") }).collect();
            for strategy in Strategy::ALL {
                let spec = PromptSpec::new(strategy, p.clone())
                    .with_domain("news")
                    .with_demos(demos.clone())
                    .with_cot_demo(AlignedDemo { source: "a b".into(), target: "c d".into(), alignment: vec![("a".into(), "c".into())] });
                let first = build_prompt(&spec, &src).unwrap();
                prop_assert_eq!(&first, &build_prompt(&spec, &src).unwrap());
                for m in &first {
                    prop_assert!(!m.content.is_empty());
                    for bad in ["[TGT]", "[DOM]", "[FDOM]", "[S_", "[T_"] {
                        prop_assert!(!m.content.contains(bad));
                    }
                }
                prop_assert_eq!(extract_query(&first.last().unwrap().content), src.as_str());
            }
        }

        #[test]
        fn few_shot_without_demos_reduces_to_tsp(src in sentence()) {
            let p = LanguagePair::new("en", "ro", "Romanian").unwrap();
            let fs = build_prompt(
                &PromptSpec::new(Strategy::FewShot, p.clone()).with_demos(vec![Demo { source: "x".into(), reference: "y".into() }]),
                &src,
            ).unwrap();
            let tsp = build_prompt(&PromptSpec::new(Strategy::Tsp, p), &src).unwrap();
            let stripped: Vec<ChatMessage> = fs.iter().enumerate().filter(|(i, _)| *i == 0 || *i == fs.len() - 1).map(|(_, m)| m.clone()).collect();
            prop_assert_eq!(stripped, tsp);
        }
    }
}
