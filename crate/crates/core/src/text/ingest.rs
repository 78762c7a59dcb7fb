//! CSV ingestion and export in the `review,Category,sentiment` schema.
//!
//! One row carries one (review, aspect, sentiment) triple. Rows sharing the
//! same `id` (or, without an id column, the same review text) merge into
//! one [`ReviewRecord`]. A row with both `Category` and `sentiment` empty
//! yields a review without aspects.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use super::normalize::{NormalizeStats, Normalizer};
use super::record::{Aspect, ReviewRecord, Sentiment};
use crate::error::{Error, Result};

pub const REVIEW_COLUMN: &str = "review";
pub const CATEGORY_COLUMN: &str = "Category";
pub const SENTIMENT_COLUMN: &str = "sentiment";
pub const ID_COLUMN: &str = "id";

/// Why a row was not turned into a label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RejectedRow {
    /// 1-based data row number (the header is row 0).
    pub row: usize,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Ingested {
    pub records: Vec<ReviewRecord>,
    pub rows_read: usize,
    pub rejected: Vec<RejectedRow>,
}

pub fn ingest_csv(path: &Path) -> Result<Ingested> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(f)
}

pub fn ingest_reader<R: Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim_start_matches('\u{FEFF}') == name);
    let missing: Vec<&str> = [REVIEW_COLUMN, CATEGORY_COLUMN, SENTIMENT_COLUMN]
        .into_iter()
        .filter(|c| col(c).is_none())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing required column(s): {}",
            missing.join(", ")
        )));
    }
    let (review_col, cat_col, sent_col) = (
        col(REVIEW_COLUMN).unwrap(),
        col(CATEGORY_COLUMN).unwrap(),
        col(SENTIMENT_COLUMN).unwrap(),
    );
    let id_col = col(ID_COLUMN);

    let mut out = Ingested::default();
    let mut by_key: HashMap<String, usize> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        out.rows_read += 1;
        let field = |c: usize| row.get(c).unwrap_or("").trim();
        let text = row.get(review_col).unwrap_or("").to_string();
        let (cat, sent) = (field(cat_col), field(sent_col));

        let label = if cat.is_empty() && sent.is_empty() {
            None
        } else {
            match (cat.parse::<Aspect>(), sent.parse::<Sentiment>()) {
                (Ok(a), Ok(s)) => Some((a, s)),
                (Err(e), _) | (_, Err(e)) => {
                    out.rejected.push(RejectedRow {
                        row: row_no,
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        };

        let given_id = id_col.map(field).filter(|s| !s.is_empty()).map(str::to_string);
        let key = match &given_id {
            Some(id) => format!("id\u{1F}{id}"),
            None => format!("text\u{1F}{text}"),
        };
        let idx = match by_key.get(&key) {
            Some(&idx) => idx,
            None => {
                let id = given_id.unwrap_or_else(|| format!("r{:06}", out.records.len()));
                out.records.push(ReviewRecord::new(id, text.clone()));
                by_key.insert(key, out.records.len() - 1);
                out.records.len() - 1
            }
        };
        if let Some((aspect, sentiment)) = label {
            let rec = &mut out.records[idx];
            match rec.sentiments.get(&aspect) {
                Some(prev) if *prev != sentiment => out.rejected.push(RejectedRow {
                    row: row_no,
                    reason: format!("conflicting sentiment for aspect {aspect}"),
                }),
                Some(_) => {}
                None => rec.insert_label(aspect, sentiment),
            }
        }
    }
    Ok(out)
}

/// Counts reported by [`preprocess`].
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PreprocessStats {
    pub rows_in: usize,
    pub rows_out: usize,
    pub rows_rejected: usize,
    pub emoji_removed: usize,
    pub letters_mapped: usize,
    pub half_space_joins: usize,
    pub spelling_replacements: usize,
    pub rejected: Vec<String>,
}

/// Normalizes the review column row by row and canonicalizes the label
/// columns. Rows whose labels do not parse are dropped and counted. Other
/// columns are kept as they are, so running the output through again
/// changes nothing.
pub fn preprocess<R: Read, W: Write>(reader: R, writer: W, normalizer: &Normalizer) -> Result<PreprocessStats> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{FEFF}').to_string())
        .collect();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(review_col), Some(cat_col), Some(sent_col)) =
        (col(REVIEW_COLUMN), col(CATEGORY_COLUMN), col(SENTIMENT_COLUMN))
    else {
        return Err(Error::Schema(format!(
            "need columns {REVIEW_COLUMN}, {CATEGORY_COLUMN}, {SENTIMENT_COLUMN}"
        )));
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&headers)?;
    let mut stats = PreprocessStats::default();
    let mut totals = NormalizeStats::default();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        stats.rows_in += 1;
        let mut fields: Vec<String> = row.iter().map(str::to_string).collect();
        fields.resize(headers.len(), String::new());
        let (cat, sent) = (fields[cat_col].trim().to_string(), fields[sent_col].trim().to_string());
        if !(cat.is_empty() && sent.is_empty()) {
            match (cat.parse::<Aspect>(), sent.parse::<Sentiment>()) {
                (Ok(a), Ok(s)) => {
                    fields[cat_col] = a.name().to_string();
                    fields[sent_col] = s.name().to_string();
                }
                (Err(e), _) | (_, Err(e)) => {
                    stats.rows_rejected += 1;
                    stats.rejected.push(format!("row {}: {e}", i + 1));
                    continue;
                }
            }
        } else {
            fields[cat_col].clear();
            fields[sent_col].clear();
        }
        let (text, st) = normalizer.normalize_with_stats(&fields[review_col]);
        totals += st;
        fields[review_col] = text;
        w.write_record(&fields)?;
        stats.rows_out += 1;
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    stats.emoji_removed = totals.emoji_removed;
    stats.letters_mapped = totals.letters_mapped;
    stats.half_space_joins = totals.half_space_joins;
    stats.spelling_replacements = totals.spelling_replacements;
    Ok(stats)
}

/// Writes records in the ingest schema with an `id` column appended.
pub fn write_csv<W: Write>(records: &[ReviewRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([REVIEW_COLUMN, CATEGORY_COLUMN, SENTIMENT_COLUMN, ID_COLUMN])?;
    for r in records {
        if r.sentiments.is_empty() {
            w.write_record([r.text.as_str(), "", "", r.id.as_str()])?;
        }
        for (a, s) in r.triples() {
            w.write_record([r.text.as_str(), a.name(), s.name(), r.id.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(())
}

pub fn write_csv_path(records: &[ReviewRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(records, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_preprocess(input: &str) -> (String, PreprocessStats) {
        let mut out = Vec::new();
        let stats = preprocess(input.as_bytes(), &mut out, &Normalizer::default()).unwrap();
        (String::from_utf8(out).unwrap(), stats)
    }

    #[test]
    fn preprocess_is_idempotent_and_strips_emoji() {
        let input = "review,Category,sentiment\nعالی بود 😀,Host,Positive\nبد,parking,negative\n";
        let (once, stats) = run_preprocess(input);
        assert_eq!((stats.rows_in, stats.rows_out, stats.rows_rejected), (2, 1, 1));
        assert!(stats.emoji_removed >= 1);
        assert!(!once.contains('😀'));
        assert!(once.contains(",host,positive"));
        let (twice, _) = run_preprocess(&once);
        assert_eq!(once, twice);
    }

    #[test]
    fn preprocess_header_only() {
        let (out, stats) = run_preprocess("review,Category,sentiment\n");
        assert_eq!(out, "review,Category,sentiment\n");
        assert_eq!(stats, PreprocessStats::default());
    }

    fn ingest(s: &str) -> Ingested {
        ingest_reader(s.as_bytes()).unwrap()
    }

    #[test]
    fn single_row() {
        let got = ingest("review,Category,sentiment\nt,price,negative\n");
        assert_eq!(got.records.len(), 1);
        let r = &got.records[0];
        assert_eq!(r.aspects.iter().copied().collect::<Vec<_>>(), vec![Aspect::Price]);
        assert_eq!(r.sentiments[&Aspect::Price], Sentiment::Negative);
    }

    #[test]
    fn rows_with_same_text_merge() {
        let got = ingest("review,Category,sentiment\nt,price,negative\nt,host,positive\n");
        assert_eq!(got.records.len(), 1);
        assert_eq!(got.records[0].aspects.len(), 2);
        assert_eq!(got.records[0].overall_sentiment, None);
    }

    #[test]
    fn header_only_is_empty() {
        let got = ingest("review,Category,sentiment\n");
        assert!(got.records.is_empty());
        assert!(got.rejected.is_empty());
    }

    #[test]
    fn unknown_labels_are_counted() {
        let got = ingest(
            "review,Category,sentiment\na,parking,negative\nb,price,meh\nc,price,positive\nc,price,negative\n",
        );
        assert_eq!(got.rejected.len(), 3);
        assert_eq!(got.rejected[0].row, 1);
        assert_eq!(got.records.len(), 1);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let err = ingest_reader("review,sentiment\nx,positive\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Schema(m) if m.contains("Category")));
    }

    #[test]
    fn export_round_trip_keeps_ids() {
        let recs = vec![
            ReviewRecord::new("s1", "a, \"quoted\"")
                .with_label(Aspect::Host, Sentiment::Positive)
                .with_label(Aspect::Price, Sentiment::Neutral),
            ReviewRecord::new("s2", "no aspect"),
        ];
        let mut buf = Vec::new();
        write_csv(&recs, &mut buf).unwrap();
        let back = ingest_reader(buf.as_slice()).unwrap();
        assert_eq!(back.records, recs);
    }
}
