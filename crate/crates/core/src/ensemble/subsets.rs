//! Exhaustive counting of model subsets by majority-vote accuracy.
//!
//! Samples fall in three groups. Samples on which every model casts the same vote
//! contribute a constant. Samples with exactly two distinct votes, one of them the
//! label, keep a signed margin (label votes minus other votes) that moves by one per
//! subset transition, so counting them is a branch-free pass over a byte array.
//! The remaining samples keep one byte counter per class plus the best count
//! among the non-label classes, so a transition decides the winner in constant
//! time; counters are re-scanned only when the leading rival loses a vote or on
//! an exact tie.
//!
//! Subsets are visited in Gray-code order, one model added or removed per step.
//! The high bits of the subset mask are fixed per work unit so units walk
//! independently and their histograms are merged by addition.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::matrix::PredictionMatrix;
use super::vote::{majority_vote, TieBreak};
use crate::error::{Error, Result};

/// Largest ensemble that is enumerated exhaustively.
pub const MAX_EXHAUSTIVE_MODELS: usize = 32;

/// Which subset sizes are counted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum SubsetFamily {
    /// Every non-empty subset.
    All,
    /// Subsets of odd size, which cannot tie between two classes.
    Odd,
    /// Every subset of at least two models.
    #[default]
    AtLeastTwo,
    /// Sizes in `lo..=hi`.
    Range(usize, usize),
}

impl SubsetFamily {
    pub fn contains(&self, size: usize) -> bool {
        match *self {
            SubsetFamily::All => size >= 1,
            SubsetFamily::Odd => size % 2 == 1,
            SubsetFamily::AtLeastTwo => size >= 2,
            SubsetFamily::Range(lo, hi) => size >= lo.max(1) && size <= hi,
        }
    }

    /// Number of subsets of `k` models in the family.
    pub fn count(&self, k: usize) -> u128 {
        let mut binom = 1u128;
        let mut total = 0u128;
        for size in 0..=k {
            if self.contains(size) {
                total += binom;
            }
            binom = binom * (k - size) as u128 / (size + 1) as u128;
        }
        total
    }
}

impl fmt::Display for SubsetFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsetFamily::All => f.write_str("all"),
            SubsetFamily::Odd => f.write_str("odd"),
            SubsetFamily::AtLeastTwo => f.write_str("at-least-2"),
            SubsetFamily::Range(lo, hi) => write!(f, "{lo}-{hi}"),
        }
    }
}

impl FromStr for SubsetFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown subset family `{s}` (all, odd, at-least-2, or a size range like 3-7)"
            ))
        };
        match s {
            "all" => Ok(SubsetFamily::All),
            "odd" => Ok(SubsetFamily::Odd),
            "at-least-2" => Ok(SubsetFamily::AtLeastTwo),
            _ => {
                let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
                let lo: usize = lo.trim().parse().map_err(|_| bad())?;
                let hi: usize = hi.trim().parse().map_err(|_| bad())?;
                if lo == 0 || lo > hi {
                    return Err(Error::Config(format!("empty subset size range `{s}`")));
                }
                Ok(SubsetFamily::Range(lo, hi))
            }
        }
    }
}

/// Parses a percentage such as `99.82` into hundredths of a percent.
pub fn parse_threshold(s: &str) -> Result<u32> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad accuracy threshold `{s}`")))?;
    if !(0.0..=100.0).contains(&v) {
        return Err(Error::Config(format!("accuracy threshold {v} outside [0, 100]")));
    }
    Ok((v * 100.0).round() as u32)
}

/// Subset counts by number of correctly classified samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubsetCountReport {
    pub family: SubsetFamily,
    pub tie_break: TieBreak,
    pub models: usize,
    pub samples: usize,
    /// Thresholds in hundredths of a percent.
    pub thresholds: Vec<u32>,
    /// `histogram[c]` is the number of subsets whose vote gets `c` samples right.
    pub histogram: Vec<u64>,
    /// False when produced by random sampling.
    pub exact: bool,
}

impl SubsetCountReport {
    fn empty(matrix: &PredictionMatrix, family: SubsetFamily, tie: TieBreak, thresholds: &[u32]) -> Self {
        SubsetCountReport {
            family,
            tie_break: tie,
            models: matrix.models(),
            samples: matrix.samples(),
            thresholds: thresholds.to_vec(),
            histogram: vec![0; matrix.samples() + 1],
            exact: true,
        }
    }

    pub fn total(&self) -> u64 {
        self.histogram.iter().sum()
    }

    /// Accuracy of `correct` samples, floored to hundredths of a percent.
    pub fn level_of(&self, correct: usize) -> u32 {
        (correct as u64 * 10_000 / self.samples.max(1) as u64) as u32
    }

    /// Subsets whose accuracy is at least `bp` hundredths of a percent.
    pub fn at_least(&self, bp: u32) -> u64 {
        let n = self.samples.max(1) as u64;
        self.histogram
            .iter()
            .enumerate()
            .filter(|(c, _)| *c as u64 * 10_000 >= bp as u64 * n)
            .map(|(_, &h)| h)
            .sum()
    }

    /// Counts per threshold, in the order given.
    pub fn threshold_counts(&self) -> Vec<(u32, u64)> {
        self.thresholds.iter().map(|&t| (t, self.at_least(t))).collect()
    }

    /// Non-empty accuracy levels, highest first.
    pub fn levels(&self) -> Vec<(u32, u64)> {
        let mut out: Vec<(u32, u64)> = Vec::new();
        for (c, &h) in self.histogram.iter().enumerate().rev() {
            if h == 0 {
                continue;
            }
            let level = self.level_of(c);
            match out.last_mut() {
                Some((l, count)) if *l == level => *count += h,
                _ => out.push((level, h)),
            }
        }
        out
    }
}

fn pct(bp: u32) -> String {
    format!("{}.{:02}", bp / 100, bp % 100)
}

impl fmt::Display for SubsetCountReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "models      {}", self.models)?;
        writeln!(f, "samples     {}", self.samples)?;
        writeln!(f, "family      {}", self.family)?;
        writeln!(f, "tie-break   {}", self.tie_break)?;
        writeln!(
            f,
            "subsets     {}{}",
            self.total(),
            if self.exact { "" } else { " (sampled)" }
        )?;
        if !self.thresholds.is_empty() {
            writeln!(f, "\nthreshold%  subsets>=")?;
            for (t, c) in self.threshold_counts() {
                writeln!(f, "{:>10}  {c}", pct(t))?;
            }
        }
        writeln!(f, "\naccuracy%   subsets")?;
        for (l, c) in self.levels() {
            writeln!(f, "{:>9}   {c}", pct(l))?;
        }
        Ok(())
    }
}

/// Per-sample tables derived once from the matrix.
struct Prepared {
    k: usize,
    classes: usize,
    /// Samples every subset gets right.
    constant: u32,
    /// Per model, +1 or -1 for each two-vote sample.
    delta: Vec<Vec<i8>>,
    /// 1 where the label wins an even split under the lowest-class rule.
    tie_lowest: Vec<u8>,
    /// Per model, 1 where that model votes for the label.
    tie_first: Vec<Vec<u8>>,
    multi_labels: Vec<u8>,
    /// Per model, its vote on each multi-vote sample.
    multi_votes: Vec<Vec<u8>>,
}

impl Prepared {
    fn new(matrix: &PredictionMatrix) -> Self {
        let k = matrix.models();
        let mut p = Prepared {
            k,
            classes: matrix.classes(),
            constant: 0,
            delta: vec![Vec::new(); k],
            tie_lowest: Vec::new(),
            tie_first: vec![Vec::new(); k],
            multi_labels: Vec::new(),
            multi_votes: vec![Vec::new(); k],
        };
        for (s, &label) in matrix.labels().iter().enumerate() {
            let mut distinct: Vec<u8> = matrix.rows().iter().map(|r| r[s]).collect();
            distinct.sort_unstable();
            distinct.dedup();
            match distinct.len() {
                1 => p.constant += (distinct[0] == label) as u32,
                // Neither vote is the label: never right.
                2 if !distinct.contains(&label) => {}
                2 => {
                    let other = if distinct[0] == label { distinct[1] } else { distinct[0] };
                    p.tie_lowest.push((label < other) as u8);
                    for (j, row) in matrix.rows().iter().enumerate() {
                        let agrees = row[s] == label;
                        p.delta[j].push(if agrees { 1 } else { -1 });
                        p.tie_first[j].push(agrees as u8);
                    }
                }
                _ => {
                    p.multi_labels.push(label);
                    for (j, row) in matrix.rows().iter().enumerate() {
                        p.multi_votes[j].push(row[s]);
                    }
                }
            }
        }
        p
    }
}

/// Mutable state of one Gray-code walk.
struct Walker<'a> {
    p: &'a Prepared,
    tie: TieBreak,
    mask: u32,
    margin: Vec<i8>,
    counts: Vec<u8>,
    /// Per multi-vote sample, the largest count among classes other than the label.
    rival: Vec<u8>,
    ok: Vec<bool>,
}

impl<'a> Walker<'a> {
    fn new(p: &'a Prepared, tie: TieBreak, mask: u32) -> Self {
        let nb = p.tie_lowest.len();
        let nm = p.multi_labels.len();
        let mut w = Walker {
            p,
            tie,
            mask,
            margin: vec![0; nb],
            counts: vec![0; nm * p.classes],
            rival: vec![0; nm],
            ok: vec![false; nm],
        };
        for j in 0..p.k {
            if mask >> j & 1 == 1 {
                w.margin
                    .iter_mut()
                    .zip(&p.delta[j])
                    .for_each(|(m, &d)| *m += d);
                for (t, &c) in p.multi_votes[j].iter().enumerate() {
                    w.counts[t * p.classes + c as usize] += 1;
                }
            }
        }
        for t in 0..nm {
            w.rival[t] = w.scan_rival(t);
        }
        w.settle_all();
        w
    }

    fn first(&self) -> Option<usize> {
        (self.mask != 0).then(|| self.mask.trailing_zeros() as usize)
    }

    fn cell(&self, t: usize) -> &[u8] {
        let m = self.p.classes;
        &self.counts[t * m..(t + 1) * m]
    }

    fn scan_rival(&self, t: usize) -> u8 {
        let label = self.p.multi_labels[t] as usize;
        self.cell(t)
            .iter()
            .enumerate()
            .filter(|&(c, _)| c != label)
            .map(|(_, &v)| v)
            .max()
            .unwrap_or(0)
    }

    /// Whether the label wins sample `t`. Only an exact tie needs a scan.
    fn wins(&self, t: usize, first: Option<usize>) -> bool {
        let label = self.p.multi_labels[t];
        let counts = self.cell(t);
        let (lc, rival) = (counts[label as usize], self.rival[t]);
        if lc != rival {
            return lc > rival;
        }
        if self.tie == TieBreak::FirstModel {
            if let Some(j) = first {
                let f = self.p.multi_votes[j][t];
                if counts[f as usize] == lc {
                    return f == label;
                }
            }
        }
        counts[..label as usize].iter().all(|&v| v != lc)
    }

    fn settle_all(&mut self) {
        let first = self.first();
        for t in 0..self.ok.len() {
            self.ok[t] = self.wins(t, first);
        }
    }

    /// Adds or removes model `j`.
    fn flip(&mut self, j: usize) {
        self.mask ^= 1 << j;
        let adding = self.mask >> j & 1 == 1;
        let delta = &self.p.delta[j];
        if adding {
            self.margin.iter_mut().zip(delta).for_each(|(m, &d)| *m += d);
        } else {
            self.margin.iter_mut().zip(delta).for_each(|(m, &d)| *m -= d);
        }

        let m = self.p.classes;
        let first = self.first();
        for (t, &c) in self.p.multi_votes[j].iter().enumerate() {
            let label = self.p.multi_labels[t];
            let idx = t * m + c as usize;
            if adding {
                self.counts[idx] += 1;
                if c != label {
                    self.rival[t] = self.rival[t].max(self.counts[idx]);
                }
            } else {
                self.counts[idx] -= 1;
                if c != label && self.counts[idx] + 1 == self.rival[t] {
                    self.rival[t] = self.scan_rival(t);
                }
            }
            self.ok[t] = self.wins(t, first);
        }
    }

    fn correct(&self) -> u32 {
        let tie: &[u8] = match self.tie {
            TieBreak::LowestClass => &self.p.tie_lowest,
            TieBreak::FirstModel => match self.first() {
                Some(j) => &self.p.tie_first[j],
                None => return 0,
            },
        };
        // Byte accumulators over blocks short enough not to overflow.
        let mut binary = 0u32;
        for (mc, tc) in self.margin.chunks(255).zip(tie.chunks(255)) {
            let block = mc
                .iter()
                .zip(tc)
                .map(|(&m, &t)| (m > 0) as u8 | ((m == 0) as u8 & t))
                .fold(0u8, u8::wrapping_add);
            binary += block as u32;
        }
        let multi = self.ok.iter().filter(|&&o| o).count() as u32;
        self.p.constant + binary + multi
    }
}

fn walk(p: &Prepared, tie: TieBreak, family: SubsetFamily, start: u32, low_bits: u32, hist: &mut [u64]) {
    let mut w = Walker::new(p, tie, start);
    let mut record = |w: &Walker| {
        if w.mask != 0 && family.contains(w.mask.count_ones() as usize) {
            hist[w.correct() as usize] += 1;
        }
    };
    record(&w);
    for i in 1u64..(1u64 << low_bits) {
        w.flip(i.trailing_zeros() as usize);
        record(&w);
    }
}

/// Counts every subset in `family` by its majority-vote accuracy.
/// `thresholds` are in hundredths of a percent.
pub fn enumerate_subsets(
    matrix: &PredictionMatrix,
    family: SubsetFamily,
    tie: TieBreak,
    thresholds: &[u32],
) -> Result<SubsetCountReport> {
    let k = matrix.models();
    if k > MAX_EXHAUSTIVE_MODELS {
        return Err(Error::TooManyModels {
            k,
            max: MAX_EXHAUSTIVE_MODELS,
        });
    }
    let mut report = SubsetCountReport::empty(matrix, family, tie, thresholds);
    if k == 0 {
        return Ok(report);
    }
    let p = Prepared::new(matrix);
    let high = k.saturating_sub(12).min(10) as u32;
    let low = k as u32 - high;
    let n = matrix.samples();
    report.histogram = (0..1u64 << high)
        .into_par_iter()
        .fold(
            || vec![0u64; n + 1],
            |mut hist, prefix| {
                walk(&p, tie, family, (prefix << low) as u32, low, &mut hist);
                hist
            },
        )
        .reduce(
            || vec![0u64; n + 1],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(report)
}

/// Approximate counts from `draws` random subsets of the family; for ensembles
/// too large to enumerate.
pub fn sample_subsets(
    matrix: &PredictionMatrix,
    family: SubsetFamily,
    tie: TieBreak,
    thresholds: &[u32],
    draws: u64,
    seed: u64,
) -> Result<SubsetCountReport> {
    let k = matrix.models();
    if family.count(k) == 0 {
        return Err(Error::Config(format!("subset family {family} is empty for {k} models")));
    }
    let mut report = SubsetCountReport::empty(matrix, family, tie, thresholds);
    report.exact = false;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < draws {
        let models: Vec<usize> = (0..k).filter(|_| rng.gen::<bool>()).collect();
        if !family.contains(models.len()) {
            continue;
        }
        let votes = majority_vote(matrix, &models, tie);
        let correct = votes.iter().zip(matrix.labels()).filter(|(v, l)| v == l).count();
        report.histogram[correct] += 1;
        done += 1;
    }
    Ok(report)
}
