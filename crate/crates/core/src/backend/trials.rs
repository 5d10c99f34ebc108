use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// One scored (enrollment, test) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialScore {
    pub enroll: String,
    pub test: String,
    pub score: f64,
    /// `Some(true)` for a same-speaker trial.
    pub label: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialScoreSet {
    pub records: Vec<TrialScore>,
}

/// An unscored trial from a trial list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll: String,
    pub test: String,
    pub label: Option<bool>,
}

impl TrialScoreSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.score).collect()
    }

    /// `(score, is_target)` pairs; every record must be labeled.
    pub fn labeled(&self) -> Result<Vec<(f64, bool)>> {
        self.records
            .iter()
            .map(|r| {
                r.label
                    .map(|l| (r.score, l))
                    .ok_or_else(|| Error::TrialMismatch(format!("{} {} has no label", r.enroll, r.test)))
            })
            .collect()
    }

    /// True when both sets list the same trials in the same order.
    pub fn aligned_with(&self, other: &TrialScoreSet) -> bool {
        self.len() == other.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.enroll == b.enroll && a.test == b.test)
    }

    /// Copies labels from a trial list, matching on (enroll, test).
    pub fn attach_labels(&mut self, trials: &[Trial]) -> Result<()> {
        let map: HashMap<(&str, &str), Option<bool>> =
            trials.iter().map(|t| ((t.enroll.as_str(), t.test.as_str()), t.label)).collect();
        for r in &mut self.records {
            let label = map
                .get(&(r.enroll.as_str(), r.test.as_str()))
                .ok_or_else(|| Error::TrialMismatch(format!("{} {} not in the trial list", r.enroll, r.test)))?;
            r.label = *label;
        }
        Ok(())
    }
}

/// `enroll test [label]` lines, label 0 or 1.
pub fn parse_trials(path: &Path, text: &str) -> Result<Vec<Trial>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        let bad = |m: &str| Error::format(path, format!("line {}: {m}", n + 1));
        let label = match f.len() {
            0 => continue,
            2 => None,
            3 => Some(match f[2] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label must be 0 or 1")),
            }),
            _ => return Err(bad("expected `enroll test [label]`")),
        };
        out.push(Trial { enroll: f[0].to_string(), test: f[1].to_string(), label });
    }
    Ok(out)
}

pub fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trials(path, &text)
}

/// `enroll test score` lines, score with six decimals.
pub fn write_scores<W: Write>(mut w: W, scores: &TrialScoreSet) -> std::io::Result<()> {
    for r in &scores.records {
        writeln!(w, "{} {} {:.6}", r.enroll, r.test, r.score)?;
    }
    w.flush()
}

pub fn read_scores(path: &Path) -> Result<TrialScoreSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = |m: String| Error::format(path, format!("line {}: {m}", n + 1));
        if f.len() != 3 {
            return Err(bad("expected `enroll test score`".into()));
        }
        let score: f64 = f[2].parse().map_err(|e| bad(format!("{e}")))?;
        if !score.is_finite() {
            return Err(bad("non-finite score".into()));
        }
        records.push(TrialScore { enroll: f[0].into(), test: f[1].into(), score, label: None });
    }
    Ok(TrialScoreSet { records })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_lines() {
        let p = Path::new("t");
        let t = parse_trials(p, "a b 1\nc d 0\n\ne f\n").unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t[0].label, Some(true));
        assert_eq!(t[1].label, Some(false));
        assert_eq!(t[2].label, None);
        assert!(parse_trials(p, "a b 2\n").is_err());
        assert!(parse_trials(p, "a\n").is_err());
    }

    #[test]
    fn score_lines_have_six_decimals() {
        let s = TrialScoreSet {
            records: vec![TrialScore { enroll: "e".into(), test: "t".into(), score: 1.0 / 3.0, label: None }],
        };
        let mut buf = Vec::new();
        write_scores(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "e t 0.333333\n");
    }

    #[test]
    fn labels_join_by_pair() {
        let mut s = TrialScoreSet {
            records: vec![TrialScore { enroll: "e".into(), test: "t".into(), score: 0.1, label: None }],
        };
        let t = vec![Trial { enroll: "e".into(), test: "t".into(), label: Some(true) }];
        s.attach_labels(&t).unwrap();
        assert_eq!(s.labeled().unwrap(), [(0.1, true)]);
        assert!(matches!(s.attach_labels(&[]), Err(Error::TrialMismatch(_))));
    }
}
