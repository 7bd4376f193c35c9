//! Subword vocabulary induction (pair merging), greedy longest-match
//! subword tokenization, and word/subword label alignment.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::sha256_hex;
use crate::types::{FieldLabel, LabeledCitation};

pub const CONTINUATION: &str = "##";
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const MASK: &str = "[MASK]";
pub const CLS: &str = "[CLS]";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
pub const CLS_ID: u32 = 3;
pub const NUM_SPECIAL: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

impl SubwordVocab {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let specials = [PAD, UNK, MASK, CLS];
        if pieces.len() < NUM_SPECIAL || pieces[..NUM_SPECIAL] != specials {
            return Err(Error::Invalid(
                "vocabulary must start with [PAD] [UNK] [MASK] [CLS]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.contains(['\n', '\r']) {
                return Err(Error::Invalid(format!(
                    "invalid vocabulary piece at id {i}"
                )));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Invalid(format!("duplicate vocabulary piece `{p}`")));
            }
            max_piece_chars = max_piece_chars.max(p.chars().count());
        }
        Ok(SubwordVocab {
            pieces,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIAL
    }

    /// File form: one piece per line, line number = id.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for p in &self.pieces {
            s.push_str(p);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(s: &str) -> Result<Self> {
        Self::from_pieces(s.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_bytes(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_file_string(&text)
    }

    /// Content hash persisted with models trained on this vocabulary.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_file_string().as_bytes())
    }
}

fn char_piece(c: char, first: bool) -> String {
    if first {
        c.to_string()
    } else {
        format!("{CONTINUATION}{c}")
    }
}

fn merge_pieces(a: &str, b: &str) -> String {
    format!("{a}{}", b.strip_prefix(CONTINUATION).unwrap_or(b))
}

/// Build a vocabulary by repeatedly merging the most frequent adjacent
/// symbol pair, starting from characters seen at least `min_char_count`
/// times (each in both word-initial and continuation form).
pub fn build_vocab(
    corpus: &[LabeledCitation],
    target_size: usize,
    min_char_count: usize,
) -> Result<SubwordVocab> {
    let mut word_freq: BTreeMap<&str, usize> = BTreeMap::new();
    for c in corpus {
        for w in c.words() {
            *word_freq.entry(w).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Invalid(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let mut char_freq: BTreeMap<char, usize> = BTreeMap::new();
    for (w, f) in &word_freq {
        for ch in w.chars() {
            *char_freq.entry(ch).or_default() += f;
        }
    }
    let alphabet: BTreeSet<char> = char_freq
        .into_iter()
        .filter(|&(_, n)| n >= min_char_count.max(1))
        .map(|(c, _)| c)
        .collect();
    let base = NUM_SPECIAL + 2 * alphabet.len();
    if target_size < base {
        return Err(Error::Invalid(format!(
            "target size {target_size} is below the {base} special and character pieces"
        )));
    }

    let mut pieces: Vec<String> = [PAD, UNK, MASK, CLS]
        .iter()
        .map(|s| s.to_string())
        .collect();
    pieces.extend(alphabet.iter().map(|&c| char_piece(c, true)));
    pieces.extend(alphabet.iter().map(|&c| char_piece(c, false)));
    let mut ids: HashMap<String, u32> = pieces
        .iter()
        .enumerate()
        .map(|(i, p)| (p.clone(), i as u32))
        .collect();

    let mut words: Vec<(Vec<u32>, usize)> = word_freq
        .iter()
        .filter(|(w, _)| w.chars().all(|c| alphabet.contains(&c)))
        .map(|(w, &f)| {
            let syms = w
                .chars()
                .enumerate()
                .map(|(i, c)| ids[&char_piece(c, i == 0)])
                .collect();
            (syms, f)
        })
        .collect();

    while pieces.len() < target_size {
        let mut counts: HashMap<(u32, u32), usize> = HashMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0], pair[1])).or_default() += f;
            }
        }
        let best = counts
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .max_by(|(pa, na), (pb, nb)| {
                na.cmp(nb).then_with(|| {
                    // Ties go to the lexicographically smallest pair.
                    (&pieces[pb.0 as usize], &pieces[pb.1 as usize])
                        .cmp(&(&pieces[pa.0 as usize], &pieces[pa.1 as usize]))
                })
            });
        let Some(((a, b), _)) = best else { break };
        let merged = merge_pieces(&pieces[a as usize], &pieces[b as usize]);
        let merged_id = match ids.get(&merged) {
            Some(&id) => id,
            None => {
                let id = pieces.len() as u32;
                ids.insert(merged.clone(), id);
                pieces.push(merged);
                id
            }
        };
        for (syms, _) in &mut words {
            if syms.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(merged_id);
                    i += 2;
                } else {
                    out.push(syms[i]);
                    i += 1;
                }
            }
            *syms = out;
        }
    }
    SubwordVocab::from_pieces(pieces)
}

/// Greedy longest-match from the left. Any unmatched position turns the
/// whole word into `[UNK]`.
pub fn tokenize_word(word: &str, vocab: &SubwordVocab) -> Vec<u32> {
    let chars: Vec<char> = word.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut buf = String::new();
    while start < chars.len() {
        let mut end = chars.len().min(start + vocab.max_piece_chars);
        let mut found = None;
        while end > start {
            buf.clear();
            if start > 0 {
                buf.push_str(CONTINUATION);
            }
            buf.extend(&chars[start..end]);
            if let Some(id) = vocab.id(&buf) {
                found = Some(id);
                break;
            }
            end -= 1;
        }
        match found {
            Some(id) => {
                out.push(id);
                start = end;
            }
            None => return vec![UNK_ID],
        }
    }
    out
}

/// Subword encoding of one citation, with `[CLS]` at position 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordSequence {
    pub ids: Vec<u32>,
    /// Source word of each position; `None` for specials.
    pub word_index: Vec<Option<usize>>,
    pub labels: Vec<FieldLabel>,
    /// Position of the first subword of each encoded word.
    pub word_starts: Vec<usize>,
}

impl SubwordSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of words whose first subword survived truncation.
    pub fn num_words(&self) -> usize {
        self.word_starts.len()
    }

    /// Word-level labels, read off each word's first subword.
    pub fn word_labels(&self) -> Vec<FieldLabel> {
        self.word_starts.iter().map(|&p| self.labels[p]).collect()
    }

    /// Subword positions belonging to word `w`.
    pub fn word_positions(&self, w: usize) -> impl Iterator<Item = usize> + '_ {
        self.word_index
            .iter()
            .enumerate()
            .filter(move |(_, wi)| **wi == Some(w))
            .map(|(p, _)| p)
    }
}

pub fn encode_citation(
    c: &LabeledCitation,
    vocab: &SubwordVocab,
    max_len: usize,
) -> Result<SubwordSequence> {
    if max_len < 2 {
        return Err(Error::Encoding(format!(
            "max_len must be at least 2, got {max_len}"
        )));
    }
    if c.tokens.len() != c.labels.len() {
        return Err(Error::Encoding("token and label counts differ".into()));
    }
    let mut seq = SubwordSequence {
        ids: vec![CLS_ID],
        word_index: vec![None],
        labels: vec![FieldLabel::Other],
        word_starts: Vec::new(),
    };
    for (w, (tok, &label)) in c.tokens.iter().zip(&c.labels).enumerate() {
        let pieces = tokenize_word(&tok.text, vocab);
        if w == 0 && pieces.len() > max_len - 1 {
            return Err(Error::Encoding(format!(
                "first word needs {} subwords but max_len is {max_len}",
                pieces.len()
            )));
        }
        for (k, id) in pieces.into_iter().enumerate() {
            if seq.ids.len() >= max_len {
                return Ok(seq);
            }
            if k == 0 {
                seq.word_starts.push(seq.ids.len());
            }
            seq.ids.push(id);
            seq.word_index.push(Some(w));
            seq.labels.push(label);
        }
    }
    Ok(seq)
}

/// Reassemble the source string from subword pieces, placing each word at
/// its original character offset and filling gaps with spaces.
pub fn detokenize(seq: &SubwordSequence, vocab: &SubwordVocab, c: &LabeledCitation) -> String {
    let mut words: Vec<String> = vec![String::new(); c.tokens.len()];
    for (&id, wi) in seq.ids.iter().zip(&seq.word_index) {
        if let Some(w) = wi {
            let p = vocab.piece(id);
            words[*w].push_str(p.strip_prefix(CONTINUATION).unwrap_or(p));
        }
    }
    let mut out: Vec<char> = Vec::new();
    for (tok, text) in c.tokens.iter().zip(&words) {
        while out.len() < tok.char_start {
            out.push(' ');
        }
        out.extend(text.chars());
    }
    out.into_iter().collect()
}
