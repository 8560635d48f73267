//! Transcript preprocessing: speaker turns, sentence splitting, tokenization
//! and lexicon-based romanization.

use std::collections::HashMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MARKER_PATTERN: &str = r"^\S{1,12}[:：]";
pub const DEFAULT_TERMINATORS: &[char] = &['。', '！', '？', '；', '.', '!', '?', ';'];

/// Closing quotes and brackets that stay with the sentence they follow.
const CLOSERS: &[char] = &[
    '"', '\'', '”', '’', '」', '』', ')', '）', ']', '】', '》', '〉', '}',
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerTurn {
    pub speaker_id: String,
    pub text: String,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnExtraction {
    pub turns: Vec<SpeakerTurn>,
    /// Non-whitespace characters dropped because they precede the first marker.
    pub dropped_chars: usize,
}

#[derive(Debug, Clone)]
pub struct MarkerPattern {
    regex: Regex,
}

impl MarkerPattern {
    pub fn new(pattern: &str) -> Result<Self> {
        let regex = Regex::new(pattern).map_err(|e| Error::Config(format!("marker pattern: {e}")))?;
        Ok(Self { regex })
    }
}

impl Default for MarkerPattern {
    fn default() -> Self {
        Self::new(DEFAULT_MARKER_PATTERN).expect("default marker pattern compiles")
    }
}

/// Splits raw transcript text into speaker turns at lines opening with a
/// `NAME:` marker. Text before the first marker is dropped and counted.
pub fn extract_speaker_turns(raw_text: &str, pattern: &MarkerPattern) -> Result<TurnExtraction> {
    let mut turns: Vec<SpeakerTurn> = Vec::new();
    let mut dropped_chars = 0;
    let mut current: Option<(String, String)> = None;

    let flush = |cur: Option<(String, String)>, turns: &mut Vec<SpeakerTurn>| {
        if let Some((speaker_id, text)) = cur {
            let order = turns.len();
            turns.push(SpeakerTurn {
                speaker_id,
                text: text.trim().to_string(),
                order,
            });
        }
    };

    for line in raw_text.split_inclusive('\n') {
        if let Some(m) = pattern.regex.find(line) {
            flush(current.take(), &mut turns);
            let marker = m.as_str();
            let name = marker.trim_end_matches([':', '：']).to_string();
            current = Some((name, line[m.end()..].to_string()));
        } else if let Some((_, text)) = current.as_mut() {
            text.push_str(line);
        } else {
            dropped_chars += line.chars().filter(|c| !c.is_whitespace()).count();
        }
    }
    flush(current, &mut turns);
    if turns.is_empty() {
        return Err(Error::NoSpeakerMarkers);
    }
    if dropped_chars > 0 {
        tracing::warn!(dropped_chars, "text before the first speaker marker was dropped");
    }
    Ok(TurnExtraction {
        turns,
        dropped_chars,
    })
}

/// Splits `text` after each run of terminators (plus trailing closers).
/// Sentences are whitespace-trimmed; empty ones are dropped.
pub fn split_sentences(text: &str, terminators: &[char]) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    let emit = |s: &mut String, out: &mut Vec<String>| {
        let t = s.trim();
        if !t.is_empty() {
            out.push(t.to_string());
        }
        s.clear();
    };
    while let Some(c) = chars.next() {
        current.push(c);
        if terminators.contains(&c) {
            while let Some(&n) = chars.peek() {
                if terminators.contains(&n) || CLOSERS.contains(&n) {
                    current.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            emit(&mut current, &mut out);
        }
    }
    emit(&mut current, &mut out);
    out
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '\'' || c == '-'
}

/// Character tokenization: one token per CJK (or other non-ASCII-word)
/// character, maximal `[A-Za-z0-9'-]` runs as single tokens, whitespace dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars() {
        if is_word_char(c) {
            run.push(c);
            continue;
        }
        if !run.is_empty() {
            out.push(std::mem::take(&mut run));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !run.is_empty() {
        out.push(run);
    }
    out
}

/// Tokens that carry sound; punctuation-only tokens are not speakable.
pub fn is_speakable(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Rebuilds surface text from tokens: ASCII word tokens that would otherwise
/// fuse are separated by a space.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut prev_word = false;
    for t in tokens {
        let t = t.as_ref();
        let word = t.chars().all(is_word_char);
        if word && prev_word {
            out.push(' ');
        }
        out.push_str(t);
        prev_word = word;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sent_id: String,
    /// `order` of the owning speaker turn.
    pub turn_ref: usize,
    pub speaker_id: String,
    pub text: String,
    pub tokens: Vec<String>,
}

impl Sentence {
    pub fn speakable_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(String::as_str).filter(|t| is_speakable(t))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceDoc {
    pub doc_id: String,
    pub turns: Vec<SpeakerTurn>,
    pub sentences: Vec<Sentence>,
}

pub fn sentence_id(doc_id: &str, index: usize) -> String {
    format!("{doc_id}_s{index:05}")
}

impl SentenceDoc {
    /// Turns -> sentences -> tokens with stable ids.
    pub fn from_turns(doc_id: &str, turns: Vec<SpeakerTurn>, terminators: &[char]) -> Self {
        let mut sentences = Vec::new();
        for turn in &turns {
            for text in split_sentences(&turn.text, terminators) {
                let tokens = tokenize(&text);
                sentences.push(Sentence {
                    sent_id: sentence_id(doc_id, sentences.len()),
                    turn_ref: turn.order,
                    speaker_id: turn.speaker_id.clone(),
                    text,
                    tokens,
                });
            }
        }
        Self {
            doc_id: doc_id.to_string(),
            turns,
            sentences,
        }
    }

    pub fn from_raw(doc_id: &str, raw: &str, pattern: &MarkerPattern, terminators: &[char]) -> Result<Self> {
        let ex = extract_speaker_turns(raw, pattern)?;
        Ok(Self::from_turns(doc_id, ex.turns, terminators))
    }

    /// Rebuilds a document from sentence records (turns are reconstructed
    /// from `turn_ref`/`speaker_id`).
    pub fn from_sentences(doc_id: &str, sentences: Vec<Sentence>) -> Self {
        let mut turns: Vec<SpeakerTurn> = Vec::new();
        for s in &sentences {
            match turns.last_mut() {
                Some(t) if t.order == s.turn_ref => t.text.push_str(&s.text),
                _ => turns.push(SpeakerTurn {
                    speaker_id: s.speaker_id.clone(),
                    text: s.text.clone(),
                    order: s.turn_ref,
                }),
            }
        }
        Self {
            doc_id: doc_id.to_string(),
            turns,
            sentences,
        }
    }
}

/// Token -> romanized syllables. One pronunciation per token: the first one
/// listed in the source file wins.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PronLexicon {
    entries: HashMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Romanized {
    pub tokens: Vec<String>,
    pub unmapped: usize,
}

impl PronLexicon {
    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<String>)>,
        S: Into<String>,
    {
        let mut map = HashMap::new();
        for (tok, syls) in entries {
            map.entry(tok.into()).or_insert(syls);
        }
        Self { entries: map }
    }

    pub fn parse_tsv(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("lexicon line {}: missing tab", n + 1)))?;
            let syls: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
            if tok.is_empty() || syls.is_empty() {
                return Err(Error::Format(format!("lexicon line {}: empty field", n + 1)));
            }
            rows.push((tok.to_string(), syls));
        }
        Ok(Self::from_entries(rows))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tsv(&text)
    }

    pub fn get(&self, token: &str) -> Option<&[String]> {
        self.entries.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tokens of `vocab` without a lexicon entry.
    pub fn unmapped<'a>(&self, vocab: impl IntoIterator<Item = &'a str>) -> Vec<&'a str> {
        vocab.into_iter().filter(|t| !self.entries.contains_key(*t)).collect()
    }
}

pub fn romanize<S: AsRef<str>>(tokens: &[S], lexicon: &PronLexicon) -> Romanized {
    let mut out = Vec::with_capacity(tokens.len());
    let mut unmapped = 0;
    for t in tokens {
        let t = t.as_ref();
        match lexicon.get(t) {
            Some(syls) => out.extend(syls.iter().cloned()),
            None => {
                unmapped += 1;
                out.push(t.to_string());
            }
        }
    }
    Romanized {
        tokens: out,
        unmapped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn two_markers_two_turns() {
        let ex = extract_speaker_turns("张先生: 你好\n李女士: 再见", &MarkerPattern::default()).unwrap();
        let got: Vec<(&str, &str)> = ex
            .turns
            .iter()
            .map(|t| (t.speaker_id.as_str(), t.text.as_str()))
            .collect();
        assert_eq!(got, [("张先生", "你好"), ("李女士", "再见")]);
        assert_eq!(ex.turns[1].order, 1);
        assert_eq!(ex.dropped_chars, 0);
    }

    #[test]
    fn preamble_dropped_and_counted() {
        let ex = extract_speaker_turns("议程 一\n主席：开会。\n继续。", &MarkerPattern::default()).unwrap();
        assert_eq!(ex.dropped_chars, 3);
        assert_eq!(ex.turns.len(), 1);
        assert_eq!(ex.turns[0].text, "开会。\n继续。");
    }

    #[test]
    fn no_markers() {
        assert!(matches!(
            extract_speaker_turns("没有 标记 的 文本", &MarkerPattern::default()),
            Err(Error::NoSpeakerMarkers)
        ));
    }

    #[test]
    fn sentence_split_examples() {
        assert_eq!(split_sentences("甲。乙！丙", DEFAULT_TERMINATORS), s(&["甲。", "乙！", "丙"]));
        assert!(split_sentences("", DEFAULT_TERMINATORS).is_empty());
        assert_eq!(
            split_sentences("他说：「好。」然后走了。", DEFAULT_TERMINATORS),
            s(&["他说：「好。」", "然后走了。"])
        );
        assert_eq!(split_sentences("真的？！ 好", DEFAULT_TERMINATORS), s(&["真的？！", "好"]));
    }

    #[test]
    fn tokenize_policy() {
        assert_eq!(tokenize("我哋ok"), s(&["我", "哋", "ok"]));
        assert_eq!(tokenize("2021年"), s(&["2021", "年"]));
        assert_eq!(tokenize("it's a well-known 事，"), s(&["it's", "a", "well-known", "事", "，"]));
        assert!(!is_speakable("，"));
        assert!(is_speakable("年"));
        assert_eq!(detokenize(&tokenize("我 ok 你 hi there")), "我ok你hi there");
    }

    #[test]
    fn romanize_lookup() {
        let lex = PronLexicon::parse_tsv("你\tnei5\n好\thou2\n好\thou3\n").unwrap();
        let r = romanize(&["你", "好"], &lex);
        assert_eq!(r.tokens, s(&["nei5", "hou2"]));
        assert_eq!(r.unmapped, 0);
        let r = romanize(&["你", "吗"], &lex);
        assert_eq!(r.tokens, s(&["nei5", "吗"]));
        assert_eq!(r.unmapped, 1);
        assert_eq!(lex.unmapped(["你", "吗"]), vec!["吗"]);
    }

    #[test]
    fn doc_ids_are_stable() {
        let doc = SentenceDoc::from_raw(
            "d1",
            "甲：一。二。\n乙：三！",
            &MarkerPattern::default(),
            DEFAULT_TERMINATORS,
        )
        .unwrap();
        let ids: Vec<&str> = doc.sentences.iter().map(|s| s.sent_id.as_str()).collect();
        assert_eq!(ids, ["d1_s00000", "d1_s00001", "d1_s00002"]);
        assert_eq!(doc.sentences[2].speaker_id, "乙");
        assert_eq!(doc.sentences[2].turn_ref, 1);
        let rebuilt = SentenceDoc::from_sentences("d1", doc.sentences.clone());
        assert_eq!(rebuilt.turns.len(), 2);
    }
}
