//! Whitespace-separated text formats: trial lists, score files, corpus
//! manifests and metrics reports.

use std::fmt::Write as _;
use std::path::Path;

use xvecforge_core::backend::{ScoreSet, Trial, TrialLabel, TrialSet};
use xvecforge_core::synth::{CorpusManifest, UtteranceRecord};

use crate::error::{io_err, Error, Result};

fn parse_err(path: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { path: path.to_string(), line, message: message.into() }
}

/// Nonblank, non-comment lines as `(line number, fields)`.
fn records<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        let fields: Vec<&str> = l.split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn format_trials(trials: &TrialSet) -> String {
    let mut s = String::new();
    for t in &trials.trials {
        let _ = writeln!(s, "{} {} {}", t.enroll, t.test, t.label.as_str());
    }
    s
}

/// Lines of `<enroll> <test> [target|nontarget]`; a missing label reads as
/// unknown.
pub fn parse_trials(text: &str, origin: &str) -> Result<TrialSet> {
    let mut trials = Vec::new();
    for (line, f) in records(text) {
        let label = match f.len() {
            2 => TrialLabel::Unknown,
            3 => f[2].parse().map_err(|_| parse_err(origin, line, format!("unknown label `{}`", f[2])))?,
            n => return Err(parse_err(origin, line, format!("expected 2 or 3 fields, found {n}"))),
        };
        trials.push(Trial { enroll: f[0].to_string(), test: f[1].to_string(), label });
    }
    Ok(TrialSet { trials })
}

pub fn format_scores(scores: &ScoreSet) -> String {
    let mut s = String::new();
    for (t, v) in scores.trials.iter().zip(&scores.scores) {
        let _ = writeln!(s, "{} {} {v:.6}", t.enroll, t.test);
    }
    s
}

/// Reads `<enroll> <test> <score>` lines and aligns them with `trials`.
pub fn parse_scores(text: &str, origin: &str, trials: &TrialSet) -> Result<ScoreSet> {
    let rows: Vec<(usize, Vec<&str>)> = records(text).collect();
    if rows.len() != trials.trials.len() {
        return Err(Error::Invalid(format!("{origin}: {} scores for {} trials", rows.len(), trials.trials.len())));
    }
    let mut scores = Vec::with_capacity(rows.len());
    for ((line, f), t) in rows.iter().zip(&trials.trials) {
        if f.len() != 3 {
            return Err(parse_err(origin, *line, format!("expected 3 fields, found {}", f.len())));
        }
        if f[0] != t.enroll || f[1] != t.test {
            return Err(parse_err(origin, *line, format!("score for {} {} where the trial list has {} {}", f[0], f[1], t.enroll, t.test)));
        }
        let v: f64 = f[2].parse().map_err(|_| parse_err(origin, *line, format!("bad score `{}`", f[2])))?;
        scores.push(v);
    }
    Ok(ScoreSet::new(trials.clone(), scores)?)
}

pub fn format_manifest(m: &CorpusManifest) -> String {
    let mut s = format!("# seed {}\n", m.seed);
    for r in &m.records {
        let _ = writeln!(s, "{} {} {} {}", r.id, r.speaker, r.frames, r.split.as_str());
    }
    s
}

pub fn parse_manifest(text: &str, origin: &str) -> Result<CorpusManifest> {
    let seed = text
        .lines()
        .find_map(|l| l.trim().strip_prefix("# seed "))
        .map(|s| s.trim().parse::<u64>())
        .transpose()
        .map_err(|_| parse_err(origin, 1, "bad seed header"))?
        .unwrap_or(0);
    let mut records_out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line, f) in records(text) {
        if f.len() != 4 {
            return Err(parse_err(origin, line, format!("expected 4 fields, found {}", f.len())));
        }
        let frames = f[2].parse().map_err(|_| parse_err(origin, line, format!("bad frame count `{}`", f[2])))?;
        let split = f[3].parse().map_err(|_| parse_err(origin, line, format!("unknown split `{}`", f[3])))?;
        if !seen.insert(f[0]) {
            return Err(parse_err(origin, line, format!("duplicate utterance id `{}`", f[0])));
        }
        records_out.push(UtteranceRecord { id: f[0].to_string(), speaker: f[1].to_string(), frames, split });
    }
    Ok(CorpusManifest { records: records_out, seed })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionMetrics {
    pub condition: String,
    pub eer: f64,
    pub min_dcf: f64,
    pub num_target: usize,
    pub num_nontarget: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub system: String,
    pub conditions: Vec<ConditionMetrics>,
}

impl MetricsReport {
    pub fn format(&self) -> String {
        let mut s = format!("system={}\n", self.system);
        for c in &self.conditions {
            let _ = writeln!(s, "condition={}", c.condition);
            let _ = writeln!(s, "eer={:.6}", c.eer);
            let _ = writeln!(s, "min_dcf={:.6}", c.min_dcf);
            let _ = writeln!(s, "num_target={}", c.num_target);
            let _ = writeln!(s, "num_nontarget={}", c.num_nontarget);
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut report = Self::default();
        for (line, raw) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let (k, v) = raw.split_once('=').ok_or_else(|| parse_err(origin, line, "expected key=value"))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| parse_err(origin, line, format!("bad number `{v}`")));
            let count = |v: &str| v.parse::<usize>().map_err(|_| parse_err(origin, line, format!("bad count `{v}`")));
            let current = report.conditions.last_mut();
            match (k, current) {
                ("system", _) => report.system = v.to_string(),
                ("condition", _) => report.conditions.push(ConditionMetrics {
                    condition: v.to_string(),
                    eer: f64::NAN,
                    min_dcf: f64::NAN,
                    num_target: 0,
                    num_nontarget: 0,
                }),
                ("eer", Some(c)) => c.eer = num(v)?,
                ("min_dcf", Some(c)) => c.min_dcf = num(v)?,
                ("num_target", Some(c)) => c.num_target = count(v)?,
                ("num_nontarget", Some(c)) => c.num_nontarget = count(v)?,
                (k, _) => return Err(parse_err(origin, line, format!("unexpected key `{k}`"))),
            }
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use xvecforge_core::synth::Split;

    #[test]
    fn trials_and_scores_round_trip() {
        let text = "a b target\nc d nontarget\n# comment\n\ne f\n";
        let t = parse_trials(text, "t").unwrap();
        assert_eq!(t.trials.len(), 3);
        assert_eq!(t.trials[2].label, TrialLabel::Unknown);
        let s = ScoreSet::new(t.clone(), vec![1.0, -0.25, 1.0 / 3.0]).unwrap();
        let out = format_scores(&s);
        assert_eq!(out, "a b 1.000000\nc d -0.250000\ne f 0.333333\n");
        assert_eq!(parse_scores(&out, "s", &t).unwrap().scores[2], 0.333333);
        assert!(parse_scores("a b 1\n", "s", &t).is_err());
    }

    #[test]
    fn errors_cite_lines() {
        let e = parse_trials("a b target\na b maybe\n", "trials.txt").unwrap_err();
        assert_eq!(e.to_string(), "trials.txt:2: unknown label `maybe`");
        let e = parse_manifest("u s 10 train\nu s 10 test\n", "m").unwrap_err();
        assert!(e.to_string().starts_with("m:2:"));
    }

    #[test]
    fn manifest_round_trip() {
        let m = CorpusManifest {
            records: vec![
                UtteranceRecord { id: "u1".into(), speaker: "s1".into(), frames: 120, split: Split::Train },
                UtteranceRecord { id: "u2".into(), speaker: "s2".into(), frames: 90, split: Split::Unlabeled },
            ],
            seed: 42,
        };
        assert_eq!(parse_manifest(&format_manifest(&m), "m").unwrap(), m);
    }

    #[test]
    fn report_round_trip() {
        let r = MetricsReport {
            system: "baseline".into(),
            conditions: vec![ConditionMetrics { condition: "pooled".into(), eer: 0.0, min_dcf: 0.5, num_target: 3, num_nontarget: 9 }],
        };
        let text = r.format();
        assert!(text.contains("eer=0.000000\n"));
        assert_eq!(MetricsReport::parse(&text, "r").unwrap(), r);
    }
}
