//! Exercise/response index encodings, sequence padding, the three-line
//! triplet interchange format, vocabulary remapping, and seeded dataset
//! splits.
//!
//! Index conventions: exercise tags are dense 1-based after remapping, the
//! value (interaction) index is q + r*Q in [1, 2Q], and 0 is the padding
//! index, which can never alias a real interaction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashMap;
use thiserror::Error;

/// Padding index used for masked positions.
pub const PAD_INDEX: usize = 0;

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("exercise tag {q} outside [1, {vocab}]")]
    TagOutOfRange { q: usize, vocab: usize },
    #[error("response {0} outside {{0, 1}}")]
    BadResponse(u8),
    #[error("value index {x} outside [1, {max}]")]
    ValueIndexOutOfRange { x: usize, max: usize },
    #[error("empty sequence cannot be padded")]
    EmptySequence,
    #[error("window length must be at least 1")]
    BadWindow,
    #[error("need at least {needed} sequences to split, found {found}")]
    TooFewSequences { needed: usize, found: usize },
    #[error("split fraction {0} outside (0, 1)")]
    BadFraction(f64),
    #[error("split produced an empty partition (n = {n}, test = {test}, valid = {valid})")]
    EmptyPartition { n: usize, test: usize, valid: usize },
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: expected an integer, found '{token}'")]
    BadInteger { line: usize, token: String },
    #[error("line {line}: declared {declared} interactions but found {found} values")]
    CountMismatch {
        line: usize,
        declared: usize,
        found: usize,
    },
    #[error("line {line}: response '{token}' outside {{0, 1}}")]
    BadResponseToken { line: usize, token: String },
    #[error("line {line}: interaction count must be at least 1")]
    EmptyRecord { line: usize },
    #[error("record starting at line {line} is truncated")]
    Truncated { line: usize },
    #[error("line {line}: exercise tag {tag} is not in the vocabulary")]
    UnknownTag { line: usize, tag: i64 },
}

/// One (exercise, response) pair. `exercise` is a dense 1-based tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub exercise: usize,
    pub response: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudentSequence {
    pub student: String,
    pub interactions: Vec<Interaction>,
}

/// One fixed-length row of a padded batch. Padded positions hold `PAD_INDEX`
/// and a false mask bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedRow {
    pub key_idx: Vec<usize>,
    pub value_idx: Vec<usize>,
    pub mask: Vec<bool>,
}

impl PaddedRow {
    /// Number of leading valid positions.
    pub fn valid_len(&self) -> usize {
        self.mask.iter().take_while(|m| **m).count()
    }

    /// Response recovered from the value index law x = q + r*Q.
    pub fn response_at(&self, t: usize, vocab: usize) -> u8 {
        u8::from(self.value_idx[t] > vocab)
    }
}

/// Key-side index for exercise q: the one-hot position, kept 1-based.
pub fn encode_key_index(q: usize, vocab: usize) -> Result<usize, EncodingError> {
    if q < 1 || q > vocab {
        return Err(EncodingError::TagOutOfRange { q, vocab });
    }
    Ok(q)
}

/// Value-side index x = q + r*Q in [1, 2Q].
pub fn encode_value_index(q: usize, r: u8, vocab: usize) -> Result<usize, EncodingError> {
    if q < 1 || q > vocab {
        return Err(EncodingError::TagOutOfRange { q, vocab });
    }
    if r > 1 {
        return Err(EncodingError::BadResponse(r));
    }
    Ok(q + usize::from(r) * vocab)
}

/// Inverse of `encode_value_index`.
pub fn decode_value_index(x: usize, vocab: usize) -> Result<(usize, u8), EncodingError> {
    if x < 1 || x > 2 * vocab {
        return Err(EncodingError::ValueIndexOutOfRange { x, max: 2 * vocab });
    }
    if x > vocab {
        Ok((x - vocab, 1))
    } else {
        Ok((x, 0))
    }
}

/// Splits a sequence into consecutive chunks of at most `t_max` interactions
/// (never truncating), padding the final chunk with the null index.
pub fn pad_sequence(
    seq: &StudentSequence,
    t_max: usize,
    vocab: usize,
) -> Result<Vec<PaddedRow>, EncodingError> {
    if t_max == 0 {
        return Err(EncodingError::BadWindow);
    }
    if seq.interactions.is_empty() {
        return Err(EncodingError::EmptySequence);
    }
    let mut rows = Vec::with_capacity(seq.interactions.len().div_ceil(t_max));
    for chunk in seq.interactions.chunks(t_max) {
        let mut row = PaddedRow {
            key_idx: vec![PAD_INDEX; t_max],
            value_idx: vec![PAD_INDEX; t_max],
            mask: vec![false; t_max],
        };
        for (t, it) in chunk.iter().enumerate() {
            row.key_idx[t] = encode_key_index(it.exercise, vocab)?;
            row.value_idx[t] = encode_value_index(it.exercise, it.response, vocab)?;
            row.mask[t] = true;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Inverse of `pad_sequence` over the valid prefix of each row.
pub fn unpad_rows(rows: &[PaddedRow], vocab: usize) -> Result<Vec<Interaction>, EncodingError> {
    let mut out = Vec::new();
    for row in rows {
        for t in 0..row.valid_len() {
            let (exercise, response) = decode_value_index(row.value_idx[t], vocab)?;
            out.push(Interaction { exercise, response });
        }
    }
    Ok(out)
}

/// Dense 1-based ids for an arbitrary set of integer exercise tags. Ids are
/// assigned in ascending tag order, so the mapping depends only on the tag
/// set, not on file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    originals: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl Vocabulary {
    pub fn from_tags<I: IntoIterator<Item = i64>>(tags: I) -> Self {
        let mut originals: Vec<i64> = tags.into_iter().collect();
        originals.sort_unstable();
        originals.dedup();
        let index = originals
            .iter()
            .enumerate()
            .map(|(i, &t)| (t, i + 1))
            .collect();
        Vocabulary { originals, index }
    }

    /// Identity mapping over tags 1..=q, as produced by the synthetic
    /// generator.
    pub fn identity(q: usize) -> Self {
        Vocabulary::from_tags((1..=q).map(|t| t as i64))
    }

    /// Number of distinct exercises Q.
    pub fn len(&self) -> usize {
        self.originals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.originals.is_empty()
    }

    pub fn dense(&self, original: i64) -> Option<usize> {
        self.index.get(&original).copied()
    }

    pub fn original(&self, dense: usize) -> Option<i64> {
        if dense >= 1 {
            self.originals.get(dense - 1).copied()
        } else {
            None
        }
    }

    pub fn originals(&self) -> &[i64] {
        &self.originals
    }

    /// Two-column text: original tag, dense id.
    pub fn mapping_text(&self) -> String {
        let mut out = String::new();
        for (i, tag) in self.originals.iter().enumerate() {
            out.push_str(&format!("{tag},{}\n", i + 1));
        }
        out
    }
}

struct RawRecord {
    start_line: usize,
    tags: Vec<i64>,
    responses: Vec<u8>,
}

fn parse_count(line: &str, line_no: usize) -> Result<usize, ParseError> {
    let token = line.trim();
    let n: usize = token.parse().map_err(|_| ParseError::BadInteger {
        line: line_no,
        token: token.to_string(),
    })?;
    if n == 0 {
        return Err(ParseError::EmptyRecord { line: line_no });
    }
    Ok(n)
}

fn parse_raw_records(text: &str) -> Result<Vec<RawRecord>, ParseError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut records = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            // Blank lines tolerated between and after records.
            i += 1;
            continue;
        }
        let start_line = i + 1;
        let n = parse_count(lines[i], start_line)?;
        if i + 2 >= lines.len() {
            return Err(ParseError::Truncated { line: start_line });
        }

        let tag_line_no = start_line + 1;
        let tags: Vec<i64> = lines[i + 1]
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                tok.parse::<i64>().map_err(|_| ParseError::BadInteger {
                    line: tag_line_no,
                    token: tok.to_string(),
                })
            })
            .collect::<Result<_, _>>()?;
        if tags.len() != n {
            return Err(ParseError::CountMismatch {
                line: tag_line_no,
                declared: n,
                found: tags.len(),
            });
        }

        let resp_line_no = start_line + 2;
        let responses: Vec<u8> = lines[i + 2]
            .split(',')
            .map(|tok| {
                let tok = tok.trim();
                match tok {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    _ => Err(ParseError::BadResponseToken {
                        line: resp_line_no,
                        token: tok.to_string(),
                    }),
                }
            })
            .collect::<Result<_, _>>()?;
        if responses.len() != n {
            return Err(ParseError::CountMismatch {
                line: resp_line_no,
                declared: n,
                found: responses.len(),
            });
        }

        records.push(RawRecord {
            start_line,
            tags,
            responses,
        });
        i += 3;
    }
    Ok(records)
}

fn remap_records(
    records: Vec<RawRecord>,
    vocab: &Vocabulary,
) -> Result<Vec<StudentSequence>, ParseError> {
    records
        .into_iter()
        .enumerate()
        .map(|(k, rec)| {
            let interactions = rec
                .tags
                .iter()
                .zip(&rec.responses)
                .map(|(&tag, &response)| {
                    let exercise = vocab.dense(tag).ok_or(ParseError::UnknownTag {
                        line: rec.start_line + 1,
                        tag,
                    })?;
                    Ok(Interaction { exercise, response })
                })
                .collect::<Result<_, ParseError>>()?;
            Ok(StudentSequence {
                student: format!("student_{}", k + 1),
                interactions,
            })
        })
        .collect()
}

/// Parses the three-line-per-student triplet format and remaps tags to a
/// dense [1, Q] vocabulary.
pub fn parse_triplet_format(
    text: &str,
) -> Result<(Vec<StudentSequence>, Vocabulary), ParseError> {
    let records = parse_raw_records(text)?;
    let vocab = Vocabulary::from_tags(records.iter().flat_map(|r| r.tags.iter().copied()));
    let seqs = remap_records(records, &vocab)?;
    Ok((seqs, vocab))
}

/// Parses triplet text against an existing vocabulary; tags outside it are
/// rejected. Used when a dataset must align with a trained model.
pub fn parse_triplet_with_vocab(
    text: &str,
    vocab: &Vocabulary,
) -> Result<Vec<StudentSequence>, ParseError> {
    let records = parse_raw_records(text)?;
    remap_records(records, vocab)
}

/// Inverse of the parser for dense sequences: tags are written as their dense
/// ids, which keeps parse(serialize(parse(text))) a fixed point.
pub fn serialize_triplet_format(seqs: &[StudentSequence]) -> String {
    let mut out = String::new();
    for seq in seqs {
        out.push_str(&format!("{}\n", seq.interactions.len()));
        let tags: Vec<String> = seq
            .interactions
            .iter()
            .map(|it| it.exercise.to_string())
            .collect();
        out.push_str(&tags.join(","));
        out.push('\n');
        let resps: Vec<String> = seq
            .interactions
            .iter()
            .map(|it| it.response.to_string())
            .collect();
        out.push_str(&resps.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<StudentSequence>,
    pub valid: Vec<StudentSequence>,
    pub test: Vec<StudentSequence>,
}

fn check_fraction(f: f64) -> Result<(), EncodingError> {
    if !(f.is_finite() && f > 0.0 && f < 1.0) {
        return Err(EncodingError::BadFraction(f));
    }
    Ok(())
}

/// Shuffles whole sequences with a seeded generator, holds out
/// round(n * test_fraction) as the test set, then round(rest * valid_fraction)
/// of the remainder as the validation set.
pub fn split_dataset(
    seqs: Vec<StudentSequence>,
    test_fraction: f64,
    valid_fraction_of_train: f64,
    seed: u64,
) -> Result<Splits, EncodingError> {
    check_fraction(test_fraction)?;
    check_fraction(valid_fraction_of_train)?;
    let n = seqs.len();
    if n < 5 {
        return Err(EncodingError::TooFewSequences { needed: 5, found: n });
    }

    let mut shuffled = seqs;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let test_n = (n as f64 * test_fraction).round() as usize;
    let rest = n - test_n;
    let valid_n = (rest as f64 * valid_fraction_of_train).round() as usize;
    let train_n = rest - valid_n;
    if test_n == 0 || valid_n == 0 || train_n == 0 {
        return Err(EncodingError::EmptyPartition {
            n,
            test: test_n,
            valid: valid_n,
        });
    }

    let test = shuffled.split_off(n - test_n);
    let valid = shuffled.split_off(train_n);
    Ok(Splits {
        train: shuffled,
        valid,
        test,
    })
}

/// Two-way variant used when the test set arrives as its own file.
pub fn split_train_valid(
    seqs: Vec<StudentSequence>,
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<StudentSequence>, Vec<StudentSequence>), EncodingError> {
    check_fraction(valid_fraction)?;
    let n = seqs.len();
    if n < 2 {
        return Err(EncodingError::TooFewSequences { needed: 2, found: n });
    }
    let mut shuffled = seqs;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let valid_n = (n as f64 * valid_fraction).round() as usize;
    let train_n = n - valid_n;
    if valid_n == 0 || train_n == 0 {
        return Err(EncodingError::EmptyPartition {
            n,
            test: 0,
            valid: valid_n,
        });
    }
    let valid = shuffled.split_off(train_n);
    Ok((shuffled, valid))
}

/// Largest dense tag present, or 0 for an empty dataset.
pub fn max_exercise_tag(seqs: &[StudentSequence]) -> usize {
    seqs.iter()
        .flat_map(|s| s.interactions.iter())
        .map(|it| it.exercise)
        .max()
        .unwrap_or(0)
}
