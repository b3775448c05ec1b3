//! Prompt rendering and completion parsing.
//!
//! A prompt is `<instruction><lead-in><observed samples><generated samples>`
//! where every sample is followed by the separator, so the text always ends
//! where the next sample should begin and observed and generated samples are
//! rendered identically.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::types::{ObservedDataset, Sample, TaskKind, TaskSpec};

pub const BERNOULLI_INSTRUCTION: &str = "Provided are independent, identically distributed tosses of a coin, \
which flips 1 with probability p where p is unknown";

pub const GAUSSIAN_INSTRUCTION: &str = "Provided are independent, identically distributed draws from a Gaussian, \
with fixed but unknown mean and unit variance";

pub const LANGUAGE_INSTRUCTION: &str = "You will make predictions for a novel disease. The observed dataset \
contains records for multiple subjects which are assumed to be independent and identically distributed. \
For each subject there are two binary variables, indicating fever and disease diagnosis, respectively. \
Output your prediction for the disease diagnosis of the next subject.";

/// Field labels of a language-task record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordLayout {
    pub id_label: String,
    pub x_label: String,
    pub y_label: String,
    pub yes: char,
    pub no: char,
}

impl Default for RecordLayout {
    fn default() -> Self {
        Self {
            id_label: "Id:".into(),
            x_label: "Fever:".into(),
            y_label: "Diagnosis:".into(),
            yes: 'Y',
            no: 'N',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub instruction: String,
    /// Text between the instruction and the first sample.
    pub lead_in: String,
    pub separator: char,
    #[serde(default)]
    pub record: RecordLayout,
}

impl PromptTemplate {
    pub fn default_for(kind: TaskKind) -> Self {
        match kind {
            TaskKind::Bernoulli => Self {
                instruction: BERNOULLI_INSTRUCTION.into(),
                lead_in: ": ".into(),
                separator: ',',
                record: RecordLayout::default(),
            },
            TaskKind::Gaussian => Self {
                instruction: GAUSSIAN_INSTRUCTION.into(),
                lead_in: ": ".into(),
                separator: ',',
                record: RecordLayout::default(),
            },
            TaskKind::NaturalLanguage => Self {
                instruction: LANGUAGE_INSTRUCTION.into(),
                lead_in: "\n".into(),
                separator: '\n',
                record: RecordLayout::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |c: char| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '+';
        if bad(self.separator) {
            return Err(Error::InvalidArgument(format!(
                "separator {:?} would be confused with sample text",
                self.separator
            )));
        }
        Ok(())
    }

    /// Render one sample (without separator). `id` numbers language records.
    pub fn render_sample(&self, sample: &Sample, id: usize, out: &mut String) {
        match *sample {
            Sample::Binary(b) => out.push(if b { '1' } else { '0' }),
            Sample::Real(v) => {
                let _ = write!(out, "{v:.1}");
            }
            Sample::Pair { x, y } => {
                let r = &self.record;
                let yn = |b: bool| if b { r.yes } else { r.no };
                let _ = write!(
                    out,
                    "{} {id}\n{} {}\n{} {}",
                    r.id_label,
                    r.x_label,
                    yn(x),
                    r.y_label,
                    yn(y)
                );
            }
        }
    }

    /// Render samples, each followed by the separator. Record ids start at
    /// `first_id`.
    pub fn render_samples(&self, samples: &[Sample], first_id: usize, out: &mut String) {
        for (i, s) in samples.iter().enumerate() {
            self.render_sample(s, first_id + i, out);
            out.push(self.separator);
        }
    }

    /// Render a full prompt from raw sample slices.
    pub fn render(&self, kind: TaskKind, observed: &[Sample], generated: &[Sample]) -> Result<String> {
        for s in observed.iter().chain(generated) {
            s.expect_kind(kind)?;
        }
        let mut out = String::with_capacity(self.instruction.len() + 8 * (observed.len() + generated.len()));
        out.push_str(&self.instruction);
        out.push_str(&self.lead_in);
        self.render_samples(observed, 0, &mut out);
        self.render_samples(generated, observed.len(), &mut out);
        Ok(out)
    }

    /// Parse one sample from the start of `text`, skipping leading whitespace
    /// and separators. Returns the sample and the number of bytes consumed.
    pub fn parse_next_sample(&self, text: &str, kind: TaskKind) -> Result<(Sample, usize), ParseFailure> {
        let mut cur = Cursor { text, pos: 0 };
        cur.skip(|c| c.is_whitespace() || c == self.separator);
        let start = cur.pos;
        let sample = match kind {
            TaskKind::Bernoulli => self.parse_binary(&mut cur),
            TaskKind::Gaussian => parse_real(&mut cur),
            TaskKind::NaturalLanguage => self.parse_record(&mut cur),
        }
        .map_err(|kind| cur.failure(kind, start))?;
        // A token must end at a boundary: "10" is not a binary sample.
        match cur.peek() {
            None => {}
            Some(c) if c.is_whitespace() || c == self.separator => {}
            Some(_) => return Err(cur.failure(ParseFailureKind::Invalid, start)),
        }
        Ok((sample, cur.pos))
    }

    /// Parse every sample in `text`. Trailing whitespace and separators are
    /// allowed; anything else must be a well-formed sample.
    pub fn parse_samples(&self, text: &str, kind: TaskKind) -> Result<Vec<Sample>, ParseFailure> {
        let mut out = Vec::new();
        let mut offset = 0;
        loop {
            let rest = &text[offset..];
            if rest.chars().all(|c| c.is_whitespace() || c == self.separator) {
                return Ok(out);
            }
            let (s, used) = self.parse_next_sample(rest, kind).map_err(|mut f| {
                f.offset += offset;
                f
            })?;
            out.push(s);
            offset += used;
        }
    }

    fn parse_binary(&self, cur: &mut Cursor<'_>) -> Result<Sample, ParseFailureKind> {
        match cur.bump() {
            Some('0') => Ok(Sample::Binary(false)),
            Some('1') => Ok(Sample::Binary(true)),
            Some(_) => Err(ParseFailureKind::Invalid),
            None => Err(ParseFailureKind::Incomplete),
        }
    }

    fn parse_record(&self, cur: &mut Cursor<'_>) -> Result<Sample, ParseFailureKind> {
        let r = &self.record;
        cur.expect_str(&r.id_label)?;
        cur.skip(|c| c == ' ' || c == '\t');
        if cur.skip(|c| c.is_ascii_digit()) == 0 {
            return Err(cur.missing());
        }
        cur.require_whitespace()?;
        cur.expect_str(&r.x_label)?;
        cur.skip(|c| c == ' ' || c == '\t');
        let x = self.parse_yes_no(cur)?;
        cur.require_whitespace()?;
        cur.expect_str(&r.y_label)?;
        cur.skip(|c| c == ' ' || c == '\t');
        let y = self.parse_yes_no(cur)?;
        Ok(Sample::Pair { x, y })
    }

    fn parse_yes_no(&self, cur: &mut Cursor<'_>) -> Result<bool, ParseFailureKind> {
        match cur.bump() {
            Some(c) if c == self.record.yes => Ok(true),
            Some(c) if c == self.record.no => Ok(false),
            Some(_) => Err(ParseFailureKind::Invalid),
            None => Err(ParseFailureKind::Incomplete),
        }
    }
}

/// Optional sign, digits, '.', exactly one digit.
fn parse_real(cur: &mut Cursor<'_>) -> Result<Sample, ParseFailureKind> {
    let start = cur.pos;
    if matches!(cur.peek(), Some('-' | '+')) {
        cur.bump();
    }
    if cur.skip(|c| c.is_ascii_digit()) == 0 {
        return Err(cur.missing());
    }
    match cur.bump() {
        Some('.') => {}
        Some(_) => return Err(ParseFailureKind::Invalid),
        None => return Err(ParseFailureKind::Incomplete),
    }
    match cur.bump() {
        Some(c) if c.is_ascii_digit() => {}
        Some(_) => return Err(ParseFailureKind::Invalid),
        None => return Err(ParseFailureKind::Incomplete),
    }
    if matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
        // More than one decimal digit.
        return Err(ParseFailureKind::Invalid);
    }
    let value: f64 = cur.text[start..cur.pos].parse().map_err(|_| ParseFailureKind::Invalid)?;
    Ok(Sample::real(value))
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<char> {
        self.text[self.pos..].chars().next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn skip(&mut self, pred: impl Fn(char) -> bool) -> usize {
        let before = self.pos;
        while matches!(self.peek(), Some(c) if pred(c)) {
            self.bump();
        }
        self.pos - before
    }

    /// Failure kind when the next expected character is absent.
    fn missing(&self) -> ParseFailureKind {
        if self.pos >= self.text.len() {
            ParseFailureKind::Incomplete
        } else {
            ParseFailureKind::Invalid
        }
    }

    fn expect_str(&mut self, s: &str) -> Result<(), ParseFailureKind> {
        let rest = &self.text[self.pos..];
        if rest.starts_with(s) {
            self.pos += s.len();
            Ok(())
        } else if s.starts_with(rest) {
            Err(ParseFailureKind::Incomplete)
        } else {
            Err(ParseFailureKind::Invalid)
        }
    }

    fn require_whitespace(&mut self) -> Result<(), ParseFailureKind> {
        if self.skip(char::is_whitespace) == 0 {
            return Err(self.missing());
        }
        Ok(())
    }

    fn failure(&self, kind: ParseFailureKind, start: usize) -> ParseFailure {
        let end = (self.pos.max(start) + 1).min(self.text.len());
        let end = (end..=self.text.len()).find(|&i| self.text.is_char_boundary(i)).unwrap_or(self.text.len());
        ParseFailure {
            kind,
            offset: start,
            prefix: self.text[start..end].to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParseFailureKind {
    /// The text ended inside a token; more text could complete it.
    Incomplete,
    /// The text cannot be the start of a sample.
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?} sample at byte {offset}: {prefix:?}")]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    /// Byte offset where the failed token starts.
    pub offset: usize,
    /// Text from the token start up to and including the offending character.
    pub prefix: String,
}

/// Render a prompt for `observed` followed by `generated`.
pub fn render_prompt(
    template: &PromptTemplate,
    task: &TaskSpec,
    observed: &ObservedDataset,
    generated: &[Sample],
) -> Result<String> {
    if observed.task().kind() != task.kind() {
        return Err(Error::KindMismatch {
            expected: task.kind(),
            found: observed.task().kind(),
        });
    }
    template.render(task.kind(), observed.samples(), generated)
}

/// [`PromptTemplate::parse_next_sample`] with the default template for `kind`.
pub fn parse_next_sample(text: &str, kind: TaskKind) -> Result<(Sample, usize), ParseFailure> {
    PromptTemplate::default_for(kind).parse_next_sample(text, kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(task: TaskSpec, samples: Vec<Sample>) -> ObservedDataset {
        ObservedDataset::new(task, samples, None).unwrap()
    }

    #[test]
    fn bernoulli_prompt() {
        let task = TaskSpec::bernoulli(0.5);
        let t = PromptTemplate::default_for(TaskKind::Bernoulli);
        let d = dataset(task, vec![Sample::Binary(true), Sample::Binary(false)]);
        let p = render_prompt(&t, &task, &d, &[]).unwrap();
        assert_eq!(
            p,
            "Provided are independent, identically distributed tosses of a coin, which flips 1 with \
             probability p where p is unknown: 1,0,"
        );
    }

    #[test]
    fn gaussian_prompt() {
        let task = TaskSpec::gaussian(1.0);
        let t = PromptTemplate::default_for(TaskKind::Gaussian);
        let d = dataset(task, vec![Sample::real(1.1), Sample::real(0.8)]);
        let p = render_prompt(&t, &task, &d, &[Sample::real(1.3)]).unwrap();
        assert!(p.ends_with("with fixed but unknown mean and unit variance: 1.1,0.8,1.3,"), "{p}");
        assert_eq!(p, render_prompt(&t, &task, &d, &[Sample::real(1.3)]).unwrap());
        let observed_only = render_prompt(&t, &task, &d, &[]).unwrap();
        assert!(p.starts_with(&observed_only));
    }

    #[test]
    fn language_prompt_numbers_records_continuously() {
        let task = TaskSpec::natural_language();
        let t = PromptTemplate::default_for(TaskKind::NaturalLanguage);
        let d = dataset(task, vec![Sample::pair(true, false)]);
        let p = render_prompt(&t, &task, &d, &[Sample::pair(false, true)]).unwrap();
        assert!(p.starts_with(LANGUAGE_INSTRUCTION));
        assert!(p.ends_with("subject.\nId: 0\nFever: Y\nDiagnosis: N\nId: 1\nFever: N\nDiagnosis: Y\n"), "{p:?}");
    }

    #[test]
    fn render_rejects_kind_mismatch() {
        let t = PromptTemplate::default_for(TaskKind::Bernoulli);
        assert!(t.render(TaskKind::Bernoulli, &[Sample::real(1.0)], &[]).is_err());
        let task = TaskSpec::gaussian(0.0);
        let d = dataset(TaskSpec::bernoulli(0.5), vec![Sample::Binary(true)]);
        assert!(render_prompt(&t, &task, &d, &[]).is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_next_sample("1,0,1", TaskKind::Bernoulli).unwrap(), (Sample::Binary(true), 1));
        assert_eq!(parse_next_sample("-1.3,0.2", TaskKind::Gaussian).unwrap(), (Sample::real(-1.3), 4));
        let f = parse_next_sample("2", TaskKind::Gaussian).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Incomplete);
        let f = parse_next_sample("2,", TaskKind::Gaussian).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Invalid);
        assert_eq!(f.prefix, "2,");
    }

    #[test]
    fn parse_skips_leading_separators_and_whitespace() {
        assert_eq!(parse_next_sample(" ,\n 0,", TaskKind::Bernoulli).unwrap(), (Sample::Binary(false), 5));
        assert_eq!(parse_next_sample("", TaskKind::Bernoulli).unwrap_err().kind, ParseFailureKind::Incomplete);
    }

    #[test]
    fn parse_requires_token_boundary() {
        assert_eq!(parse_next_sample("10", TaskKind::Bernoulli).unwrap_err().kind, ParseFailureKind::Invalid);
        assert_eq!(parse_next_sample("1.25,", TaskKind::Gaussian).unwrap_err().kind, ParseFailureKind::Invalid);
        assert_eq!(parse_next_sample("x", TaskKind::Bernoulli).unwrap_err().kind, ParseFailureKind::Invalid);
        assert_eq!(parse_next_sample("1;0", TaskKind::Bernoulli).unwrap_err().kind, ParseFailureKind::Invalid);
    }

    #[test]
    fn parse_records() {
        let text = "Id: 17\nFever: N\nDiagnosis: Y\nId: 18";
        let (s, used) = parse_next_sample(text, TaskKind::NaturalLanguage).unwrap();
        assert_eq!(s, Sample::pair(false, true));
        assert_eq!(&text[..used], "Id: 17\nFever: N\nDiagnosis: Y");
        let f = parse_next_sample(&text[used..], TaskKind::NaturalLanguage).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Incomplete);
        let f = parse_next_sample("Id: 3\nFever: maybe", TaskKind::NaturalLanguage).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Invalid);
        let f = parse_next_sample("Patient 3", TaskKind::NaturalLanguage).unwrap_err();
        assert_eq!(f.kind, ParseFailureKind::Invalid);
    }

    #[test]
    fn parse_samples_reads_rendered_section() {
        let t = PromptTemplate::default_for(TaskKind::Gaussian);
        let xs = vec![Sample::real(-0.1), Sample::real(12.0), Sample::real(0.0)];
        let mut text = String::new();
        t.render_samples(&xs, 0, &mut text);
        assert_eq!(text, "-0.1,12.0,0.0,");
        assert_eq!(t.parse_samples(&text, TaskKind::Gaussian).unwrap(), xs);
        let err = t.parse_samples("0.1,oops", TaskKind::Gaussian).unwrap_err();
        assert_eq!(err.offset, 4);
    }

    #[test]
    fn custom_separator() {
        let mut t = PromptTemplate::default_for(TaskKind::Bernoulli);
        t.separator = ';';
        let p = t.render(TaskKind::Bernoulli, &[Sample::Binary(true)], &[Sample::Binary(false)]).unwrap();
        assert!(p.ends_with(": 1;0;"));
        assert_eq!(t.parse_next_sample(";1;", TaskKind::Bernoulli).unwrap(), (Sample::Binary(true), 2));
        t.separator = '7';
        assert!(t.validate().is_err());
    }
}
