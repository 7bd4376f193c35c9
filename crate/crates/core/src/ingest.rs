//! Bibliographic record ingestion from JSON lines and a BibTeX subset.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::normalize_whitespace;

pub const MIN_YEAR: i32 = 1800;
pub const MAX_YEAR: i32 = 2100;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Person {
    pub family: String,
    pub given: String,
}

impl Person {
    pub fn new(family: impl Into<String>, given: impl Into<String>) -> Self {
        Person {
            family: family.into(),
            given: given.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pages {
    pub first: String,
    pub last: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BibRecord {
    pub authors: Vec<Person>,
    pub title: String,
    pub venue: String,
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub issue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pages: Option<Pages>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discipline: Option<String>,
}

impl BibRecord {
    pub fn validate(&self) -> Result<()> {
        if self.authors.is_empty() {
            return Err(Error::Invalid("record has no authors".into()));
        }
        if self.authors.iter().any(|a| a.family.trim().is_empty()) {
            return Err(Error::Invalid("author with empty family name".into()));
        }
        if self.title.trim().is_empty() {
            return Err(Error::Invalid("empty title".into()));
        }
        if self.venue.trim().is_empty() {
            return Err(Error::Invalid("empty venue".into()));
        }
        if !(MIN_YEAR..=MAX_YEAR).contains(&self.year) {
            return Err(Error::Invalid(format!(
                "year {} outside [{MIN_YEAR}, {MAX_YEAR}]",
                self.year
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Lines,
    Bibtex,
}

impl FromStr for RecordFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lines" | "jsonl" => Ok(RecordFormat::Lines),
            "bibtex" | "bib" => Ok(RecordFormat::Bibtex),
            other => Err(Error::Invalid(format!("unknown record format `{other}`"))),
        }
    }
}

/// A record that was skipped in lenient mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReadOutcome {
    pub records: Vec<BibRecord>,
    pub diagnostics: Vec<Diagnostic>,
}

pub fn read_records(path: &Path, format: RecordFormat, strict: bool) -> Result<ReadOutcome> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let items = match format {
        RecordFormat::Lines => parse_record_lines(&text),
        RecordFormat::Bibtex => parse_bibtex_file(&text),
    };
    collect(path.to_path_buf(), items, strict)
}

fn collect(
    path: PathBuf,
    items: Vec<(usize, Result<BibRecord>)>,
    strict: bool,
) -> Result<ReadOutcome> {
    let mut out = ReadOutcome::default();
    for (line, item) in items {
        match item.and_then(|r| r.validate().map(|_| r)) {
            Ok(r) => out.records.push(r),
            Err(e) if strict => {
                return Err(Error::Record {
                    path,
                    line,
                    message: e.to_string(),
                });
            }
            Err(e) => {
                log::warn!("{}:{line}: skipping record: {e}", path.display());
                out.diagnostics.push(Diagnostic {
                    line,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

/// One JSON record per non-blank line; returns `(line number, parse result)`.
pub fn parse_record_lines(text: &str) -> Vec<(usize, Result<BibRecord>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            (
                i + 1,
                serde_json::from_str::<BibRecord>(l).map_err(Error::from),
            )
        })
        .collect()
}

pub fn write_records(path: &Path, records: &[BibRecord]) -> Result<()> {
    crate::io::write_jsonl(path, records)
}

/// Split a `.bib` file into entries and parse each one.
pub fn parse_bibtex_file(text: &str) -> Vec<(usize, Result<BibRecord>)> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line = 1;
    while i < chars.len() {
        if chars[i] == '\n' {
            line += 1;
        }
        if chars[i] != '@' {
            i += 1;
            continue;
        }
        let start_line = line;
        let start = i;
        // Scan to the matching close of the entry body.
        let mut depth = 0i32;
        let mut j = i;
        let mut opened = false;
        while j < chars.len() {
            match chars[j] {
                '{' | '(' => {
                    depth += 1;
                    opened = true;
                }
                '}' | ')' => {
                    depth -= 1;
                    if opened && depth == 0 {
                        break;
                    }
                }
                '\n' => line += 1,
                _ => {}
            }
            j += 1;
        }
        let end = (j + 1).min(chars.len());
        let entry: String = chars[start..end].iter().collect();
        let kind: String = entry[1..]
            .chars()
            .take_while(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        if !matches!(kind.as_str(), "comment" | "preamble" | "string") {
            out.push((start_line, parse_bibtex_entry(&entry)));
        }
        i = end;
    }
    out
}

const ENTRY_TYPES: [&str; 3] = ["article", "inproceedings", "book"];

/// Parse a single `@type{key, field = value, ...}` entry.
pub fn parse_bibtex_entry(text: &str) -> Result<BibRecord> {
    let text = text.trim();
    let rest = text
        .strip_prefix('@')
        .ok_or_else(|| Error::Bibtex("entry must start with `@`".into()))?;
    let open = rest
        .find(['{', '('])
        .ok_or_else(|| Error::Bibtex("missing entry body".into()))?;
    let kind = rest[..open].trim().to_ascii_lowercase();
    if !ENTRY_TYPES.contains(&kind.as_str()) {
        return Err(Error::Bibtex(format!("unsupported entry type `{kind}`")));
    }
    let closing = if rest[open..].starts_with('{') {
        '}'
    } else {
        ')'
    };
    let body = &rest[open + 1..];
    let body = body
        .trim_end()
        .strip_suffix(closing)
        .ok_or_else(|| Error::Bibtex("unbalanced braces".into()))?;
    check_balanced(body)?;

    let fields = split_fields(body)?;
    let mut authors = None;
    let mut title = None;
    let mut venue_journal = None;
    let mut venue_booktitle = None;
    let mut publisher = None;
    let mut year = None;
    let mut volume = None;
    let mut issue = None;
    let mut pages = None;
    let mut discipline = None;
    // The first comma-separated item is the citation key.
    for (name, value) in fields.into_iter().skip(1) {
        let Some(name) = name else { continue };
        match name.as_str() {
            "author" => authors = Some(parse_authors(&value)),
            "title" => title = Some(value),
            "journal" => venue_journal = Some(value),
            "booktitle" => venue_booktitle = Some(value),
            "publisher" => publisher = Some(value),
            "year" => year = Some(value),
            "volume" => volume = Some(value),
            "number" | "issue" => issue = Some(value),
            "pages" => pages = parse_pages(&value),
            "discipline" | "keywords" => discipline = Some(value),
            _ => {}
        }
    }
    let authors = authors
        .filter(|a| !a.is_empty())
        .ok_or(Error::MissingField("author"))?;
    let title = title
        .filter(|t| !t.is_empty())
        .ok_or(Error::MissingField("title"))?;
    let year_text = year.ok_or(Error::MissingField("year"))?;
    let year = year_text
        .trim()
        .parse::<i32>()
        .map_err(|_| Error::Bibtex(format!("year `{year_text}` is not an integer")))?;
    let venue = match kind.as_str() {
        "book" => venue_booktitle.or(venue_journal).or(publisher),
        _ => venue_journal.or(venue_booktitle),
    }
    .filter(|v| !v.is_empty())
    .ok_or(Error::MissingField("journal"))?;
    Ok(BibRecord {
        authors,
        title,
        venue,
        year,
        volume,
        issue,
        pages,
        discipline,
    })
}

fn check_balanced(s: &str) -> Result<()> {
    let mut depth = 0i32;
    for c in s.chars() {
        match c {
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::Bibtex("unbalanced braces".into()));
                }
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Bibtex("unbalanced braces".into()));
    }
    Ok(())
}

/// Split the entry body on top-level commas into `(field name, cleaned value)`.
fn split_fields(body: &str) -> Result<Vec<(Option<String>, String)>> {
    let mut items = Vec::new();
    let mut depth = 0;
    let mut in_quotes = false;
    let mut current = String::new();
    for c in body.chars() {
        match c {
            '{' => depth += 1,
            '}' => depth -= 1,
            '"' if depth == 0 => in_quotes = !in_quotes,
            ',' if depth == 0 && !in_quotes => {
                items.push(std::mem::take(&mut current));
                continue;
            }
            _ => {}
        }
        current.push(c);
    }
    items.push(current);
    let mut out = Vec::new();
    for item in items {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        match item.split_once('=') {
            Some((name, value)) if !name.contains('{') => {
                out.push((Some(name.trim().to_ascii_lowercase()), clean_value(value)?));
            }
            _ => out.push((None, item.to_string())),
        }
    }
    Ok(out)
}

/// Strip the outer delimiters and any inner grouping braces, collapse whitespace.
fn clean_value(raw: &str) -> Result<String> {
    let raw = raw.trim();
    let inner = if let Some(v) = raw.strip_prefix('{') {
        v.strip_suffix('}')
            .ok_or_else(|| Error::Bibtex("unbalanced braces".into()))?
    } else if let Some(v) = raw.strip_prefix('"') {
        v.strip_suffix('"')
            .ok_or_else(|| Error::Bibtex("unterminated quoted value".into()))?
    } else {
        raw
    };
    let stripped: String = inner.chars().filter(|&c| c != '{' && c != '}').collect();
    Ok(normalize_whitespace(&stripped))
}

/// Split on " and " and normalize each name to family/given.
pub fn parse_authors(value: &str) -> Vec<Person> {
    value
        .split(" and ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse_name)
        .collect()
}

/// "Family, Given" or "Given Family" (last word is the family name).
pub fn parse_name(name: &str) -> Person {
    if let Some((family, given)) = name.split_once(',') {
        return Person::new(normalize_whitespace(family), normalize_whitespace(given));
    }
    let words: Vec<&str> = name.split_whitespace().collect();
    match words.split_last() {
        Some((family, given)) => Person::new(*family, given.join(" ")),
        None => Person::new("", ""),
    }
}

fn parse_pages(value: &str) -> Option<Pages> {
    let parts: Vec<&str> = value
        .split(|c: char| c == '-' || c == '–')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    match parts.as_slice() {
        [first, last] => Some(Pages {
            first: first.to_string(),
            last: last.to_string(),
        }),
        [single] => Some(Pages {
            first: single.to_string(),
            last: single.to_string(),
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shannon() -> BibRecord {
        BibRecord {
            authors: vec![Person::new("Shannon", "C. E.")],
            title: "A mathematical theory of communication".into(),
            venue: "Bell System Technical Journal".into(),
            year: 1948,
            volume: None,
            issue: None,
            pages: None,
            discipline: None,
        }
    }

    #[test]
    fn one_line_record() {
        let line = r#"{"authors":[{"family":"Shannon","given":"C. E."}],"title":"A mathematical theory of communication","venue":"Bell System Technical Journal","year":1948}"#;
        let items = parse_record_lines(line);
        assert_eq!(items.len(), 1);
        assert_eq!(items[0].1.as_ref().unwrap(), &shannon());
    }

    #[test]
    fn bibtex_article_matches_lines_record() {
        let entry = "@article{x, author={Shannon, C. E.}, title={A mathematical theory of communication}, journal={Bell System Technical Journal}, year={1948}}";
        assert_eq!(parse_bibtex_entry(entry).unwrap(), shannon());
    }

    #[test]
    fn bibtex_author_split() {
        let entry =
            "@article{k, author={Doe, Jane and Roe, Rex}, title={T}, journal={J}, year={2000}}";
        let rec = parse_bibtex_entry(entry).unwrap();
        assert_eq!(
            rec.authors,
            vec![Person::new("Doe", "Jane"), Person::new("Roe", "Rex")]
        );
    }

    #[test]
    fn given_family_form() {
        assert_eq!(
            parse_name("Claude E. Shannon"),
            Person::new("Shannon", "Claude E.")
        );
        assert_eq!(parse_name("Shannon"), Person::new("Shannon", ""));
    }

    #[test]
    fn bibtex_missing_year() {
        let entry = "@article{k, author={Doe, J}, title={T}, journal={J}}";
        let err = parse_bibtex_entry(entry).unwrap_err();
        assert!(matches!(err, Error::MissingField("year")), "{err}");
        assert!(err.to_string().contains("year"));
    }

    #[test]
    fn bibtex_booktitle_is_venue() {
        let entry =
            "@inproceedings{k, author={Doe, J}, title={T}, booktitle={Proc. of X}, year=2001}";
        assert_eq!(parse_bibtex_entry(entry).unwrap().venue, "Proc. of X");
    }

    #[test]
    fn bibtex_unbalanced() {
        let entry = "@article{k, author={Doe, J, title={T}, journal={J}, year={2000}}";
        assert!(matches!(parse_bibtex_entry(entry), Err(Error::Bibtex(_))));
    }

    #[test]
    fn bibtex_quoted_values_and_pages() {
        let entry = "@article{k,\n  author = \"Doe, J\",\n  title = \"A {GPU} study\",\n  journal = \"J\",\n  year = 2000,\n  pages = {3--55}\n}";
        let rec = parse_bibtex_entry(entry).unwrap();
        assert_eq!(rec.title, "A GPU study");
        assert_eq!(
            rec.pages,
            Some(Pages {
                first: "3".into(),
                last: "55".into()
            })
        );
    }

    #[test]
    fn bibtex_whitespace_insensitive() {
        let a = "@article{k,author={Doe, J},title={T},journal={J},year={2000}}";
        let b = "@article{ k ,\n\n   author  =  {Doe, J} ,\n title={T},\tjournal = {J}, year = {2000} ,\n}";
        assert_eq!(
            parse_bibtex_entry(a).unwrap(),
            parse_bibtex_entry(b).unwrap()
        );
    }

    #[test]
    fn lenient_skips_empty_title() {
        let text = concat!(
            r#"{"authors":[{"family":"A","given":"B"}],"title":"","venue":"V","year":2000}"#,
            "\n",
            r#"{"authors":[{"family":"A","given":"B"}],"title":"T","venue":"V","year":2000}"#,
            "\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(&path, text).unwrap();
        let out = read_records(&path, RecordFormat::Lines, false).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 1);
        assert!(read_records(&path, RecordFormat::Lines, true).is_err());
    }

    #[test]
    fn bibtex_file_counts_records_and_diagnostics() {
        let text = "@string{foo = \"bar\"}\n@article{a, author={A, B}, title={T}, journal={J}, year={1999}}\n\n@article{b, author={A, B}, title={T}, journal={J}}\n@book{c, author={C D}, title={Book}, publisher={P}, year=1890}\n";
        let items = parse_bibtex_file(text);
        assert_eq!(items.len(), 3);
        assert_eq!(items[1].0, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bib");
        std::fs::write(&path, text).unwrap();
        let out = read_records(&path, RecordFormat::Bibtex, false).unwrap();
        assert_eq!(out.records.len() + out.diagnostics.len(), 3);
        assert_eq!(out.records[1].venue, "P");
    }

    #[test]
    fn year_bounds() {
        let mut r = shannon();
        r.year = 1799;
        assert!(r.validate().is_err());
        r.year = 2100;
        assert!(r.validate().is_ok());
    }
}
