//! Review text cleanup: Unicode NFC, Arabic to Persian letter mapping,
//! emoji removal, whitespace collapse, half-space (ZWNJ) normalization and
//! a table-driven spelling correction.
//!
//! The whole pipeline is idempotent for any spelling table accepted by
//! [`SpellingTable::new`].

use std::io::Read;
use std::path::Path;

use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const ZWNJ: char = '\u{200C}';

/// Tokens that attach to the preceding word with a half-space.
const SUFFIXES: &[&str] = &["ها", "های", "هایی", "هایم", "تر", "ترین"];
/// Tokens that attach to the following word with a half-space.
const PREFIXES: &[&str] = &["می", "نمی"];

const DEFAULT_SPELLING: &str = include_str!("../../data/spelling_default.csv");

/// Counts gathered while normalizing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NormalizeStats {
    pub emoji_removed: usize,
    pub letters_mapped: usize,
    pub half_space_joins: usize,
    pub spelling_replacements: usize,
}

impl std::ops::AddAssign for NormalizeStats {
    fn add_assign(&mut self, o: Self) {
        self.emoji_removed += o.emoji_removed;
        self.letters_mapped += o.letters_mapped;
        self.half_space_joins += o.half_space_joins;
        self.spelling_replacements += o.spelling_replacements;
    }
}

/// Word-level corrections applied longest-match-first.
#[derive(Clone, Debug, Default)]
pub struct SpellingTable {
    // Sorted by descending key length so the first hit is the longest.
    entries: Vec<(Vec<String>, Vec<String>)>,
}

impl SpellingTable {
    /// Builds a table from `(wrong, correct)` pairs. Both sides are passed
    /// through the rest of the pipeline first. A table whose corrections
    /// could themselves be corrected again is rejected.
    pub fn new<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut entries = Vec::new();
        for (wrong, correct) in pairs {
            let key = tokens(&base_normalize(wrong.as_ref(), &mut NormalizeStats::default()));
            let value = tokens(&base_normalize(correct.as_ref(), &mut NormalizeStats::default()));
            if key.is_empty() || value.is_empty() {
                return Err(Error::Schema(format!(
                    "spelling entry {:?} -> {:?} normalizes to an empty side",
                    wrong.as_ref(),
                    correct.as_ref()
                )));
            }
            if let Some(t) = value.iter().find(|t| is_affix(t)) {
                return Err(Error::Schema(format!(
                    "spelling correction {:?} contains bare affix {t:?}",
                    correct.as_ref()
                )));
            }
            entries.push((key, value));
        }
        for (_, value) in &entries {
            for (key, _) in &entries {
                if let Some(t) = value.iter().find(|t| key.contains(t)) {
                    return Err(Error::Schema(format!(
                        "spelling correction token {t:?} also occurs in a correctable key"
                    )));
                }
            }
        }
        entries.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
        Ok(Self { entries })
    }

    /// The table shipped with the crate.
    pub fn default_table() -> Self {
        Self::from_csv_reader(DEFAULT_SPELLING.as_bytes()).expect("shipped spelling table is valid")
    }

    /// Reads a `wrong,correct` CSV (the header row is optional).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(false)
            .from_reader(reader);
        let mut pairs = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != 2 {
                return Err(Error::Schema(format!("spelling table row {} needs 2 fields", i + 1)));
            }
            if i == 0 && &row[0] == "wrong" && &row[1] == "correct" {
                continue;
            }
            pairs.push((row[0].to_string(), row[1].to_string()));
        }
        Self::new(pairs)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(f)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn apply(&self, toks: Vec<String>, stats: &mut NormalizeStats) -> Vec<String> {
        if self.entries.is_empty() {
            return toks;
        }
        let mut out = Vec::with_capacity(toks.len());
        let mut i = 0;
        while i < toks.len() {
            let hit = self
                .entries
                .iter()
                .find(|(key, _)| toks[i..].starts_with(key));
            match hit {
                Some((key, value)) => {
                    out.extend(value.iter().cloned());
                    i += key.len();
                    stats.spelling_replacements += 1;
                }
                None => {
                    out.push(toks[i].clone());
                    i += 1;
                }
            }
        }
        out
    }
}

/// Text normalizer bound to a spelling table.
#[derive(Clone, Debug)]
pub struct Normalizer {
    spelling: SpellingTable,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            spelling: SpellingTable::default_table(),
        }
    }
}

impl Normalizer {
    pub fn new(spelling: SpellingTable) -> Self {
        Self { spelling }
    }

    pub fn normalize(&self, raw: &str) -> String {
        self.normalize_with_stats(raw).0
    }

    pub fn normalize_with_stats(&self, raw: &str) -> (String, NormalizeStats) {
        let mut stats = NormalizeStats::default();
        let base = base_normalize(raw, &mut stats);
        let toks = self.spelling.apply(tokens(&base), &mut stats);
        (toks.join(" "), stats)
    }
}

/// Normalizes with the shipped spelling table.
pub fn normalize_text(raw: &str) -> String {
    thread_local! {
        static DEFAULT: Normalizer = Normalizer::default();
    }
    DEFAULT.with(|n| n.normalize(raw))
}

fn base_normalize(raw: &str, stats: &mut NormalizeStats) -> String {
    let nfc: String = raw.nfc().collect();
    let mut mapped = String::with_capacity(nfc.len());
    for c in nfc.chars() {
        match persian_letter(c) {
            Some(Some(p)) => {
                mapped.push(p);
                stats.letters_mapped += 1;
            }
            Some(None) => stats.letters_mapped += 1,
            None => mapped.push(c),
        }
    }
    let mut kept = String::with_capacity(mapped.len());
    for c in mapped.chars() {
        if is_emoji(c) {
            stats.emoji_removed += 1;
        } else {
            kept.push(c);
        }
    }
    // Removing emoji can leave combining marks next to a new base letter.
    let recomposed: String = kept.nfc().collect();
    let collapsed = collapse_whitespace(&recomposed);
    half_space(&collapsed, stats)
}

/// Arabic code points with a Persian counterpart. `Some(None)` means drop.
fn persian_letter(c: char) -> Option<Option<char>> {
    match c {
        '\u{064A}' | '\u{0649}' => Some(Some('\u{06CC}')),
        '\u{0643}' => Some(Some('\u{06A9}')),
        '\u{0629}' => Some(Some('\u{0647}')),
        '\u{0640}' => Some(None),
        '\u{0660}'..='\u{0669}' => {
            char::from_u32(c as u32 - 0x0660 + 0x06F0).map(Some)
        }
        _ => None,
    }
}

pub(crate) fn map_arabic_letters(s: &str) -> String {
    s.chars()
        .filter_map(|c| match persian_letter(c) {
            Some(p) => p,
            None => Some(c),
        })
        .collect()
}

/// Emoji, pictographs and the joiners/selectors used to build emoji sequences.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F000..=0x1FAFF
        | 0x2600..=0x27BF
        | 0x2300..=0x23FF
        | 0x2B00..=0x2BFF
        | 0xFE00..=0xFE0F
        | 0x200D
        | 0x20E3
        | 0x3030 | 0x303D | 0x3297 | 0x3299
        | 0xE0020..=0xE007F)
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_affix(t: &str) -> bool {
    SUFFIXES.contains(&t) || PREFIXES.contains(&t)
}

/// Collapses ZWNJ runs, strips ZWNJ at word edges, and attaches the affix
/// tokens with a single ZWNJ.
fn half_space(s: &str, stats: &mut NormalizeStats) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut pending_prefix = false;
    for raw in s.split(' ') {
        let word = clean_zwnj(raw);
        if word.is_empty() {
            continue;
        }
        if pending_prefix {
            let last = out.last_mut().expect("prefix was pushed");
            last.push(ZWNJ);
            last.push_str(&word);
            pending_prefix = false;
            stats.half_space_joins += 1;
        } else if SUFFIXES.contains(&word.as_str()) && !out.is_empty() {
            let last = out.last_mut().expect("non-empty");
            last.push(ZWNJ);
            last.push_str(&word);
            stats.half_space_joins += 1;
        } else {
            pending_prefix = PREFIXES.contains(&word.as_str());
            out.push(word);
        }
    }
    out.join(" ")
}

fn clean_zwnj(word: &str) -> String {
    let mut out = String::with_capacity(word.len());
    for c in word.chars() {
        if c == ZWNJ && (out.is_empty() || out.ends_with(ZWNJ)) {
            continue;
        }
        out.push(c);
    }
    while out.ends_with(ZWNJ) {
        out.pop();
    }
    out
}

fn tokens(s: &str) -> Vec<String> {
    s.split(' ').filter(|t| !t.is_empty()).map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn maps_arabic_yeh_and_kaf() {
        assert_eq!(normalize_text("علي"), "علی");
        assert_eq!(normalize_text("كتاب"), "کتاب");
        assert_eq!(normalize_text("\u{0661}\u{0662}"), "۱۲");
    }

    #[test]
    fn removes_emoji() {
        assert_eq!(normalize_text("سلام 😊"), "سلام");
        assert_eq!(normalize_text("👍🏽 عالی ❤️"), "عالی");
        assert_eq!(normalize_text("👨\u{200D}👩\u{200D}👧 خانه"), "خانه");
    }

    #[test]
    fn collapses_whitespace() {
        assert_eq!(normalize_text("  خیلی \t\n  خوب  "), "خیلی خوب");
    }

    #[test]
    fn half_space_joins_affixes() {
        assert_eq!(normalize_text("می روم"), "می\u{200C}روم");
        assert_eq!(normalize_text("اتاق ها"), "اتاق\u{200C}ها");
        assert_eq!(normalize_text("بزرگ تر"), "بزرگ\u{200C}تر");
        assert_eq!(normalize_text("اتاق\u{200C}\u{200C}ها"), "اتاق\u{200C}ها");
        assert_eq!(normalize_text("\u{200C}خوب \u{200C}"), "خوب");
    }

    #[test]
    fn spelling_table_longest_match_first() {
        let table = SpellingTable::new([("وای فای", "وای‌فای"), ("فای", "فایل")]).unwrap();
        let n = Normalizer::new(table);
        let (out, stats) = n.normalize_with_stats("وای فای ضعیف فای");
        assert_eq!(out, "وای\u{200C}فای ضعیف فایل");
        assert_eq!(stats.spelling_replacements, 2);
    }

    #[test]
    fn shipped_table_corrects() {
        assert_eq!(normalize_text("اطاق تمیز"), "اتاق تمیز");
    }

    #[test]
    fn rejects_non_closed_table() {
        assert!(SpellingTable::new([("a", "b"), ("b", "c")]).is_err());
        assert!(SpellingTable::new([("x", "ها")]).is_err());
        assert!(SpellingTable::new([("x", "😊")]).is_err());
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("می".to_string()),
            Just("ها".to_string()),
            Just("ترین".to_string()),
            Just("اطاق".to_string()),
            Just("وای".to_string()),
            Just("فای".to_string()),
            Just("خونه".to_string()),
            Just("😊".to_string()),
            Just("\u{200C}".to_string()),
            Just("\u{200D}".to_string()),
            Just("\u{FE0F}".to_string()),
            Just("\u{0301}".to_string()),
            Just(" ".to_string()),
            Just("\t".to_string()),
            Just("ي".to_string()),
            Just("ك".to_string()),
            Just("ـ".to_string()),
            "[a-e]{1,3}",
            "[\u{0627}-\u{064A}]{1,4}",
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn idempotent(parts in proptest::collection::vec(fragment(), 0..12)) {
            let s: String = parts.concat();
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once.clone());
            prop_assert!(!once.chars().any(is_emoji));
        }
    }
}
