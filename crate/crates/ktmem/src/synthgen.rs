//! Synthetic student simulator with known concept structure.
//!
//! Every virtual student works through the full exercise bank once, in a
//! single shuffled order shared by all students. Each exercise belongs to
//! one hidden concept and carries a fixed difficulty; the chance of a
//! correct answer follows an item-response curve in (ability − difficulty)
//! with a guessing floor, and the student's ability on a concept grows by a
//! fixed increment every time the concept is practiced. The hidden
//! exercise→concept map is returned alongside the data so concept-discovery
//! results can be scored against it.

use crate::encoding::{Interaction, StudentSequence};
use crate::tensor::{sigmoid, standard_normal};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("concepts ({concepts}) must be between 1 and the exercise count ({exercises})")]
    BadConceptCount { concepts: usize, exercises: usize },
    #[error("{name} = {value} is not a probability in [0, 1]")]
    BadProbability { name: &'static str, value: f64 },
    #[error("student counts must be positive")]
    NoStudents,
    #[error("ground truth line {line}: {message}")]
    BadGroundTruth { line: usize, message: String },
}

/// Generator settings. Defaults reproduce the large synthetic benchmark
/// shape: 2000 train + 2000 test students over 50 exercises drawn from 5
/// concepts, each sequence of length 50.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub train_students: usize,
    pub test_students: usize,
    pub exercises: usize,
    pub concepts: usize,
    /// Floor on the correctness probability (random guessing).
    pub guess: f64,
    /// Ability gained on a concept each time it is practiced.
    pub learning_increment: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_students: 2000,
            test_students: 2000,
            exercises: 50,
            concepts: 5,
            guess: 0.25,
            learning_increment: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.concepts == 0 || self.concepts > self.exercises {
            return Err(SynthError::BadConceptCount {
                concepts: self.concepts,
                exercises: self.exercises,
            });
        }
        if !(0.0..=1.0).contains(&self.guess) || !self.guess.is_finite() {
            return Err(SynthError::BadProbability {
                name: "guess",
                value: self.guess,
            });
        }
        if self.train_students == 0 && self.test_students == 0 {
            return Err(SynthError::NoStudents);
        }
        Ok(())
    }
}

/// Hidden structure behind a generated dataset, indexed by dense exercise
/// id: entry `e − 1` holds exercise `e`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Concept of each exercise, values in `[1, concepts]`.
    pub concept: Vec<usize>,
    /// Difficulty of each exercise on the ability scale.
    pub difficulty: Vec<f64>,
}

impl GroundTruth {
    pub fn exercises(&self) -> usize {
        self.concept.len()
    }

    /// Concept of exercise `e` (1-based dense id).
    pub fn concept_of(&self, e: usize) -> Option<usize> {
        self.concept.get(e.checked_sub(1)?).copied()
    }

    pub fn difficulty_of(&self, e: usize) -> Option<f64> {
        self.difficulty.get(e.checked_sub(1)?).copied()
    }

    /// Comma-separated text: one `exercise,concept,difficulty` line per
    /// exercise, in dense-id order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (&c, &d)) in self.concept.iter().zip(&self.difficulty).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, c, d));
        }
        out
    }

    /// Parses the `to_text` format. Lines must cover exercises 1..=n in
    /// order; difficulties round-trip exactly through their shortest decimal
    /// representation.
    pub fn parse_text(text: &str) -> Result<GroundTruth, SynthError> {
        let mut concept = Vec::new();
        let mut difficulty = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(SynthError::BadGroundTruth {
                    line: line_no,
                    message: format!("expected 3 comma-separated fields, found {}", fields.len()),
                });
            }
            let bad = |message: String| SynthError::BadGroundTruth {
                line: line_no,
                message,
            };
            let e: usize = fields[0]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad exercise id {:?}", fields[0])))?;
            if e != concept.len() + 1 {
                return Err(bad(format!(
                    "exercise ids must run 1..=n in order; expected {}, found {e}",
                    concept.len() + 1
                )));
            }
            let c: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad concept id {:?}", fields[1])))?;
            if c == 0 {
                return Err(bad("concept ids start at 1".into()));
            }
            let d: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| bad(format!("bad difficulty {:?}", fields[2])))?;
            concept.push(c);
            difficulty.push(d);
        }
        if concept.is_empty() {
            return Err(SynthError::BadGroundTruth {
                line: 0,
                message: "no exercises".into(),
            });
        }
        Ok(GroundTruth {
            concept,
            difficulty,
        })
    }
}

/// Probability of a correct answer: a guessing floor plus an item-response
/// curve, `guess + (1 − guess) · sigmoid(ability − difficulty)`.
pub fn response_prob(ability: f64, difficulty: f64, guess: f64) -> f64 {
    guess + (1.0 - guess) * sigmoid(ability - difficulty)
}

/// Generates `(train, test, ground truth)` deterministically from the seed.
///
/// Global structure (difficulties, the shared answering order, the
/// round-robin concept assignment over that order) comes from the seed's
/// base stream; student `i` overall draws from substream `i + 1`, so a
/// student's record depends only on `(seed, i)`.
pub fn generate(
    config: &SynthConfig,
) -> Result<(Vec<StudentSequence>, Vec<StudentSequence>, GroundTruth), SynthError> {
    config.validate()?;
    let mut master = ChaCha20Rng::seed_from_u64(config.seed);

    let difficulty: Vec<f64> = (0..config.exercises)
        .map(|_| standard_normal(&mut master))
        .collect();

    // One shuffled pass through the bank, shared by every student.
    let mut order: Vec<usize> = (1..=config.exercises).collect();
    order.shuffle(&mut master);

    // Spread concepts round-robin along the shuffled order: every concept
    // lands on at least one exercise (concepts ≤ exercises) and practice of
    // the concepts interleaves over the session.
    let mut concept = vec![0usize; config.exercises];
    for (pos, &e) in order.iter().enumerate() {
        concept[e - 1] = pos % config.concepts + 1;
    }

    let simulate = |global_idx: usize| -> StudentSequence {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        rng.set_stream(global_idx as u64 + 1);
        let mut ability: Vec<f64> = (0..config.concepts)
            .map(|_| standard_normal(&mut rng))
            .collect();
        let mut interactions = Vec::with_capacity(config.exercises);
        for &e in &order {
            let c = concept[e - 1];
            let p = response_prob(ability[c - 1], difficulty[e - 1], config.guess);
            let response = u8::from(rng.gen::<f64>() < p);
            interactions.push(Interaction {
                exercise: e,
                response,
            });
            ability[c - 1] += config.learning_increment;
        }
        StudentSequence {
            student: format!("s{global_idx:05}"),
            interactions,
        }
    };

    let train: Vec<StudentSequence> = (0..config.train_students).map(simulate).collect();
    let test: Vec<StudentSequence> = (config.train_students
        ..config.train_students + config.test_students)
        .map(simulate)
        .collect();

    Ok((
        train,
        test,
        GroundTruth {
            concept,
            difficulty,
        },
    ))
}
