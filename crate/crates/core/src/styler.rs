//! Template-driven citation rendering with character-exact field labels.
//!
//! A [`CitationStyle`] is plain data: an ordered list of segments, each
//! pulling one field out of a [`BibRecord`] and wrapping it in a literal
//! prefix and suffix. Rendering records the character range of every field
//! so the word tokens can be labeled exactly.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{BibRecord, Person};
use crate::types::{tokenize_with_breaks, FieldLabel, LabeledCitation, Origin};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    AuthorList,
    Year,
    Title,
    Venue,
    VolumeIssue,
    Pages,
    Literal(String),
}

impl FieldSource {
    pub fn label(&self) -> FieldLabel {
        match self {
            FieldSource::AuthorList => FieldLabel::Author,
            FieldSource::Year => FieldLabel::Year,
            FieldSource::Title => FieldLabel::Title,
            FieldSource::Venue => FieldLabel::Venue,
            _ => FieldLabel::Other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: FieldSource,
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthorFormat {
    /// "Shannon, C.E."
    FamilyCommaInitials,
    /// "C. E. Shannon"
    InitialsFamily,
}

fn default_initial_mark() -> String {
    ".".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CitationStyle {
    pub name: String,
    pub segments: Vec<Segment>,
    pub author_format: AuthorFormat,
    pub author_separator: String,
    #[serde(default)]
    pub terminal: String,
    /// Text written after each initial ("." gives "C.E.", "" gives "CE").
    #[serde(default = "default_initial_mark")]
    pub initial_mark: String,
}

impl CitationStyle {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Invalid("style has an empty name".into()));
        }
        for required in [
            FieldSource::AuthorList,
            FieldSource::Year,
            FieldSource::Title,
            FieldSource::Venue,
        ] {
            let count = self
                .segments
                .iter()
                .filter(|s| s.source == required)
                .count();
            if count != 1 {
                return Err(Error::Invalid(format!(
                    "style `{}`: {:?} must appear exactly once (found {count})",
                    self.name, required
                )));
            }
        }
        if self
            .segments
            .iter()
            .any(|s| matches!(&s.source, FieldSource::Literal(t) if t.is_empty()))
        {
            return Err(Error::Invalid(format!(
                "style `{}`: empty literal segment",
                self.name
            )));
        }
        Ok(())
    }

    /// Rendered author list under this style's author format.
    pub fn format_authors(&self, authors: &[Person]) -> String {
        authors
            .iter()
            .map(|p| self.format_person(p))
            .collect::<Vec<_>>()
            .join(&self.author_separator)
    }

    fn format_person(&self, p: &Person) -> String {
        let initials: Vec<String> = p
            .given
            .split(|c: char| c.is_whitespace() || c == '.' || c == '-')
            .filter_map(|part| part.chars().next())
            .map(|c| format!("{c}{}", self.initial_mark))
            .collect();
        if initials.is_empty() {
            return p.family.clone();
        }
        match self.author_format {
            AuthorFormat::FamilyCommaInitials => format!("{}, {}", p.family, initials.concat()),
            AuthorFormat::InitialsFamily => format!("{} {}", initials.join(" "), p.family),
        }
    }

    /// Text of one segment's field, or `None` when the record lacks it.
    pub fn field_text(&self, record: &BibRecord, source: &FieldSource) -> Option<String> {
        match source {
            FieldSource::AuthorList => Some(self.format_authors(&record.authors)),
            FieldSource::Year => Some(record.year.to_string()),
            FieldSource::Title => Some(record.title.trim().to_string()),
            FieldSource::Venue => Some(record.venue.trim().to_string()),
            FieldSource::VolumeIssue => match (&record.volume, &record.issue) {
                (Some(v), Some(i)) => Some(format!("{v}({i})")),
                (Some(v), None) => Some(v.clone()),
                _ => None,
            },
            FieldSource::Pages => record.pages.as_ref().map(|p| {
                if p.first == p.last {
                    p.first.clone()
                } else {
                    format!("{}-{}", p.first, p.last)
                }
            }),
            FieldSource::Literal(t) => Some(t.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedCitation {
    pub citation: LabeledCitation,
    pub style_name: String,
}

/// Render a record under a style. Optional segments whose field is missing
/// are dropped together with their prefix and suffix.
pub fn render(record: &BibRecord, style: &CitationStyle) -> Result<RenderedCitation> {
    render_with(record, style, |d| d.to_string())
}

/// Render with each non-empty delimiter (segment prefix, suffix, terminal)
/// independently collapsed to a single space with probability `drop`.
pub fn render_noisy<R: Rng>(
    record: &BibRecord,
    style: &CitationStyle,
    drop: f64,
    rng: &mut R,
) -> Result<RenderedCitation> {
    render_with(record, style, |d| {
        if !d.is_empty() && rng.gen_bool(drop) {
            " ".to_string()
        } else {
            d.to_string()
        }
    })
}

fn render_with(
    record: &BibRecord,
    style: &CitationStyle,
    mut delimiter: impl FnMut(&str) -> String,
) -> Result<RenderedCitation> {
    let mut text = String::new();
    let mut len = 0usize;
    let mut ranges: Vec<(usize, usize, FieldLabel)> = Vec::new();
    let push = |text: &mut String, s: &str| -> usize {
        text.push_str(s);
        s.chars().count()
    };
    for seg in &style.segments {
        let Some(field) = style.field_text(record, &seg.source) else {
            continue;
        };
        let prefix = delimiter(&seg.prefix);
        if len > 0 || !prefix.trim().is_empty() {
            len += push(&mut text, &prefix);
        }
        let start = len;
        len += push(&mut text, &field);
        ranges.push((start, len, seg.source.label()));
        len += push(&mut text, &delimiter(&seg.suffix));
    }
    text.push_str(&delimiter(&style.terminal));
    let source = text.trim_end().to_string();

    let mut breaks: Vec<usize> = ranges.iter().flat_map(|&(s, e, _)| [s, e]).collect();
    breaks.sort_unstable();
    breaks.dedup();
    let tokens = tokenize_with_breaks(&source, &breaks);
    let labels = tokens
        .iter()
        .map(|t| {
            ranges
                .iter()
                .find(|&&(s, e, _)| t.char_start >= s && t.char_end <= e)
                .map_or(FieldLabel::Other, |&(_, _, l)| l)
        })
        .collect();
    let citation = LabeledCitation {
        source,
        tokens,
        labels,
        origin: Origin::Generated,
    };
    if citation.is_empty() {
        return Err(Error::Invalid(format!(
            "style `{}` rendered an empty citation",
            style.name
        )));
    }
    Ok(RenderedCitation {
        citation,
        style_name: style.name.clone(),
    })
}

/// Render every record under `per_record_styles` distinct, randomly chosen
/// styles. When any record carries a discipline tag, records are first
/// downsampled so each tag contributes the same number.
pub fn generate_corpus(
    records: &[BibRecord],
    styles: &[CitationStyle],
    per_record_styles: usize,
    seed: u64,
    balance: bool,
) -> Result<Vec<RenderedCitation>> {
    generate_noisy_corpus(records, styles, per_record_styles, seed, balance, 0.0)
}

/// [`generate_corpus`] with delimiters dropped as in [`render_noisy`].
pub fn generate_noisy_corpus(
    records: &[BibRecord],
    styles: &[CitationStyle],
    per_record_styles: usize,
    seed: u64,
    balance: bool,
    drop: f64,
) -> Result<Vec<RenderedCitation>> {
    if !(0.0..=1.0).contains(&drop) {
        return Err(Error::Invalid(format!(
            "delimiter drop probability must be in [0, 1], got {drop}"
        )));
    }
    if records.is_empty() {
        return Ok(Vec::new());
    }
    if styles.is_empty() {
        return Err(Error::Invalid("no citation styles given".into()));
    }
    if per_record_styles == 0 || per_record_styles > styles.len() {
        return Err(Error::Invalid(format!(
            "per_record_styles must be in 1..={}, got {per_record_styles}",
            styles.len()
        )));
    }
    for s in styles {
        s.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let selected = if balance {
        balanced_indices(records, &mut rng)
    } else {
        (0..records.len()).collect()
    };

    let style_ids: Vec<usize> = (0..styles.len()).collect();
    let mut out = Vec::with_capacity(selected.len() * per_record_styles);
    for i in selected {
        let chosen: Vec<usize> = style_ids
            .choose_multiple(&mut rng, per_record_styles)
            .copied()
            .collect();
        for s in chosen {
            out.push(if drop > 0.0 {
                render_noisy(&records[i], &styles[s], drop, &mut rng)?
            } else {
                render(&records[i], &styles[s])?
            });
        }
    }
    Ok(out)
}

/// Indices of a discipline-balanced subset, in original order.
fn balanced_indices(records: &[BibRecord], rng: &mut ChaCha8Rng) -> Vec<usize> {
    if records.iter().all(|r| r.discipline.is_none()) {
        return (0..records.len()).collect();
    }
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups
            .entry(r.discipline.as_deref().unwrap_or(""))
            .or_default()
            .push(i);
    }
    let keep = groups.values().map(Vec::len).min().unwrap_or(0);
    let mut selected: Vec<usize> = groups
        .into_values()
        .flat_map(|mut idx| {
            idx.shuffle(rng);
            idx.truncate(keep);
            idx
        })
        .collect();
    selected.sort_unstable();
    selected
}

fn seg(source: FieldSource, prefix: &str, suffix: &str) -> Segment {
    Segment {
        source,
        prefix: prefix.into(),
        suffix: suffix.into(),
    }
}

/// The five shipped styles.
pub fn builtin_styles() -> Vec<CitationStyle> {
    use FieldSource::*;
    vec![
        CitationStyle {
            name: "harvard-like".into(),
            segments: vec![
                seg(AuthorList, "", ", "),
                seg(Year, "", ". "),
                seg(Title, "", ". "),
                seg(Venue, "", ""),
                seg(VolumeIssue, ", ", ""),
                seg(Pages, ", pp.", ""),
            ],
            author_format: AuthorFormat::FamilyCommaInitials,
            author_separator: ", ".into(),
            terminal: ".".into(),
            initial_mark: ".".into(),
        },
        CitationStyle {
            name: "ieee-like".into(),
            segments: vec![
                seg(AuthorList, "", " ( "),
                seg(Year, "", "), "),
                seg(Title, "", ", "),
                seg(Venue, "", ""),
                seg(Pages, ", pages ", ""),
            ],
            author_format: AuthorFormat::FamilyCommaInitials,
            author_separator: ", ".into(),
            terminal: ".".into(),
            initial_mark: "".into(),
        },
        CitationStyle {
            name: "chicago-like".into(),
            segments: vec![
                seg(AuthorList, "", ". "),
                seg(Year, "", ". "),
                seg(Title, "\"", ".\" "),
                seg(Venue, "", ""),
                seg(VolumeIssue, " ", ""),
                seg(Pages, ": ", ""),
            ],
            author_format: AuthorFormat::InitialsFamily,
            author_separator: ", ".into(),
            terminal: ".".into(),
            initial_mark: ".".into(),
        },
        CitationStyle {
            name: "plain-numbered".into(),
            segments: vec![
                seg(Literal("[1]".into()), "", " "),
                seg(AuthorList, "", ", "),
                seg(Title, "", ", "),
                seg(Venue, "", ""),
                seg(VolumeIssue, ", vol. ", ""),
                seg(Pages, ", ", ""),
                seg(Year, ", ", ""),
            ],
            author_format: AuthorFormat::InitialsFamily,
            author_separator: " and ".into(),
            terminal: ".".into(),
            initial_mark: ".".into(),
        },
        CitationStyle {
            name: "abbrev-initials".into(),
            segments: vec![
                seg(AuthorList, "", " "),
                seg(Year, "(", ") "),
                seg(Title, "", ". "),
                seg(Venue, "", ""),
                seg(VolumeIssue, " ", ""),
                seg(Pages, ":", ""),
            ],
            author_format: AuthorFormat::FamilyCommaInitials,
            author_separator: "; ".into(),
            terminal: "".into(),
            initial_mark: "".into(),
        },
    ]
}

/// Styles file: one JSON style per line.
pub fn read_styles(path: &Path) -> Result<Vec<CitationStyle>> {
    let styles: Vec<CitationStyle> = crate::io::read_jsonl(path)?;
    let mut names = HashSet::new();
    for s in &styles {
        s.validate()?;
        if !names.insert(s.name.clone()) {
            return Err(Error::Invalid(format!("duplicate style `{}`", s.name)));
        }
    }
    Ok(styles)
}

pub fn write_styles(path: &Path, styles: &[CitationStyle]) -> Result<()> {
    crate::io::write_jsonl(path, styles)
}

pub fn style_by_name<'a>(styles: &'a [CitationStyle], name: &str) -> Option<&'a CitationStyle> {
    styles.iter().find(|s| s.name == name)
}
