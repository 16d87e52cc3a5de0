//! Byte n-gram counting and budgeted top-k frequency dictionaries.
//!
//! Dictionaries rank entries by count descending, then key bytes ascending.
//! That total order drives truncation, feature selection and the on-disk
//! format, so every output is reproducible.

use std::borrow::Borrow;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, Read, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::corpus::{Label, Sample};
use crate::error::{Error, Result};

/// A fixed-length byte sequence. Ordered lexicographically by its bytes.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NGramKey(Box<[u8]>);

impl NGramKey {
    pub fn new(bytes: &[u8]) -> NGramKey {
        NGramKey(bytes.into())
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn from_hex(s: &str) -> Option<NGramKey> {
        hex::decode(s).ok().map(|b| NGramKey(b.into_boxed_slice()))
    }
}

impl Borrow<[u8]> for NGramKey {
    fn borrow(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for NGramKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "NGramKey({})", self.to_hex())
    }
}

impl fmt::Display for NGramKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Origin {
    Sample,
    Family,
    BenignPool,
    /// Result of merging dictionaries of mixed or unknown origin.
    Merged,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NGramDictionary {
    n: usize,
    entries: BTreeMap<NGramKey, u64>,
    budget: Option<usize>,
    origin: Origin,
}

impl NGramDictionary {
    pub fn empty(n: usize, origin: Origin) -> NGramDictionary {
        NGramDictionary {
            n,
            entries: BTreeMap::new(),
            budget: None,
            origin,
        }
    }

    /// Build from explicit entries. Keys must have length `n` and counts must be positive.
    pub fn from_entries(
        n: usize,
        entries: impl IntoIterator<Item = (NGramKey, u64)>,
        origin: Origin,
    ) -> Result<NGramDictionary> {
        let mut map = BTreeMap::new();
        for (k, c) in entries {
            if k.len() != n {
                return Err(Error::contract(format!("key {k} does not have length {n}")));
            }
            if c == 0 {
                return Err(Error::contract(format!("key {k} has zero count")));
            }
            *map.entry(k).or_insert(0) += c;
        }
        Ok(NGramDictionary {
            n,
            entries: map,
            budget: None,
            origin,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = origin;
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[u8]) -> u64 {
        self.entries.get(key).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.entries.values().sum()
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&NGramKey, u64)> {
        self.entries.iter().map(|(k, &c)| (k, c))
    }

    /// Entries in rank order: count descending, then key ascending.
    pub fn ranked(&self) -> Vec<(&NGramKey, u64)> {
        let mut v: Vec<_> = self.iter().collect();
        // stable sort keeps the key-ascending order of the BTreeMap within equal counts
        v.sort_by(|a, b| b.1.cmp(&a.1));
        v
    }

    /// Add every entry of `other` into `self`.
    pub fn merge_from(&mut self, other: &NGramDictionary) -> Result<()> {
        if other.n != self.n {
            return Err(Error::contract(format!(
                "cannot merge {}-gram dictionary into {}-gram dictionary",
                other.n, self.n
            )));
        }
        for (k, &c) in &other.entries {
            *self.entries.entry(k.clone()).or_insert(0) += c;
        }
        self.budget = None;
        if self.origin != other.origin {
            self.origin = Origin::Merged;
        }
        Ok(())
    }
}

/// Incremental n-gram counter over a stream of byte chunks. Windows spanning
/// chunk boundaries are counted; memory is proportional to distinct keys.
pub struct NGramCounter {
    n: usize,
    seen: usize,
    roll: u64,
    tail: Vec<u8>,
    counts: Counts,
}

// Grams of up to 8 bytes are packed big-endian into a u64 while counting.
enum Counts {
    Dense(Vec<u64>),
    Packed(FxHashMap<u64, u64>),
    Wide(HashMap<NGramKey, u64>),
}

impl NGramCounter {
    pub fn new(n: usize) -> Result<NGramCounter> {
        if n == 0 {
            return Err(Error::contract("n-gram length must be at least 1"));
        }
        let counts = match n {
            1 | 2 => Counts::Dense(vec![0; 1 << (8 * n)]),
            3..=8 => Counts::Packed(FxHashMap::default()),
            _ => Counts::Wide(HashMap::new()),
        };
        Ok(NGramCounter {
            n,
            seen: 0,
            roll: 0,
            tail: Vec::new(),
            counts,
        })
    }

    pub fn feed(&mut self, chunk: &[u8]) {
        let n = self.n;
        let mask = if n >= 8 { u64::MAX } else { (1u64 << (8 * n)) - 1 };
        match &mut self.counts {
            Counts::Dense(v) => {
                for &b in chunk {
                    self.roll = ((self.roll << 8) | u64::from(b)) & mask;
                    self.seen += 1;
                    if self.seen >= n {
                        v[self.roll as usize] += 1;
                    }
                }
            }
            Counts::Packed(m) => {
                for &b in chunk {
                    self.roll = ((self.roll << 8) | u64::from(b)) & mask;
                    self.seen += 1;
                    if self.seen >= n {
                        *m.entry(self.roll).or_insert(0) += 1;
                    }
                }
            }
            Counts::Wide(m) => {
                if chunk.is_empty() {
                    return;
                }
                let bump = |m: &mut HashMap<NGramKey, u64>, w: &[u8]| match m.get_mut(w) {
                    Some(c) => *c += 1,
                    None => {
                        m.insert(NGramKey::new(w), 1);
                    }
                };
                if !self.tail.is_empty() {
                    // windows that start inside the carried tail
                    let mut joined = self.tail.clone();
                    joined.extend_from_slice(&chunk[..chunk.len().min(n - 1)]);
                    for w in joined.windows(n) {
                        bump(m, w);
                    }
                }
                for w in chunk.windows(n) {
                    bump(m, w);
                }
                let keep = n - 1;
                if chunk.len() >= keep {
                    self.tail.clear();
                    self.tail.extend_from_slice(&chunk[chunk.len() - keep..]);
                } else {
                    self.tail.extend_from_slice(chunk);
                    let excess = self.tail.len().saturating_sub(keep);
                    self.tail.drain(..excess);
                }
            }
        }
    }

    pub fn finish(self, origin: Origin) -> NGramDictionary {
        let n = self.n;
        let unpack = |g: u64| NGramKey::new(&g.to_be_bytes()[8 - n..]);
        let entries = match self.counts {
            Counts::Dense(v) => v
                .into_iter()
                .enumerate()
                .filter(|&(_, c)| c > 0)
                .map(|(g, c)| (unpack(g as u64), c))
                .collect(),
            Counts::Packed(m) => m.into_iter().map(|(g, c)| (unpack(g), c)).collect(),
            Counts::Wide(m) => m.into_iter().collect(),
        };
        NGramDictionary {
            n,
            entries,
            budget: None,
            origin,
        }
    }
}

/// Count every stride-1 window of length `n`. Inputs shorter than `n` give an empty dictionary.
pub fn count_ngrams(bytes: &[u8], n: usize) -> Result<NGramDictionary> {
    let mut c = NGramCounter::new(n)?;
    c.feed(bytes);
    Ok(c.finish(Origin::Sample))
}

/// Streaming variant of [`count_ngrams`] over any reader.
pub fn count_ngrams_reader<R: Read>(mut reader: R, n: usize) -> Result<NGramDictionary> {
    let mut c = NGramCounter::new(n)?;
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let read = reader.read(&mut buf)?;
        if read == 0 {
            break;
        }
        c.feed(&buf[..read]);
    }
    Ok(c.finish(Origin::Sample))
}

/// Keep the `k` highest-ranked entries.
pub fn truncate_top_k(dict: &NGramDictionary, k: usize) -> NGramDictionary {
    let entries = if dict.len() <= k {
        dict.entries.clone()
    } else {
        dict.ranked()
            .into_iter()
            .take(k)
            .map(|(key, c)| (key.clone(), c))
            .collect()
    };
    NGramDictionary {
        n: dict.n,
        entries,
        budget: Some(k),
        origin: dict.origin,
    }
}

/// Key-wise sum of `dicts`, all of which must have gram length `n`.
pub fn merge<'a>(
    n: usize,
    dicts: impl IntoIterator<Item = &'a NGramDictionary>,
) -> Result<NGramDictionary> {
    let mut out: Option<NGramDictionary> = None;
    for d in dicts {
        match out.as_mut() {
            None => {
                if d.n != n {
                    return Err(Error::contract(format!(
                        "cannot merge {}-gram dictionary into {n}-gram merge",
                        d.n
                    )));
                }
                let mut first = d.clone();
                first.budget = None;
                out = Some(first);
            }
            Some(acc) => acc.merge_from(d)?,
        }
    }
    Ok(out.unwrap_or_else(|| NGramDictionary::empty(n, Origin::Merged)))
}

/// Per-sample and per-family truncation sizes. `None` disables truncation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Budgets {
    pub k_malware: Option<usize>,
    pub k_benign: Option<usize>,
    pub k_family: Option<usize>,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            k_malware: Some(100),
            k_benign: Some(500),
            k_family: Some(1500),
        }
    }
}

impl Budgets {
    /// No truncation anywhere: vectors and family rankings use true counts.
    pub fn exact() -> Self {
        Budgets {
            k_malware: None,
            k_benign: None,
            k_family: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("k_malware", self.k_malware),
            ("k_benign", self.k_benign),
            ("k_family", self.k_family),
        ] {
            if k == Some(0) {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

fn budgeted(dict: NGramDictionary, k: Option<usize>) -> NGramDictionary {
    match k {
        Some(k) => truncate_top_k(&dict, k),
        None => dict,
    }
}

/// Count and budget one sample's dictionary.
pub fn sample_dict(sample: &Sample, n: usize, budgets: &Budgets) -> Result<NGramDictionary> {
    let raw = match sample.bytes() {
        Some(b) => count_ngrams(b, n)?,
        None => count_ngrams_reader(sample.open()?, n)?,
    };
    Ok(match sample.label() {
        Label::Malware => budgeted(raw, budgets.k_malware),
        Label::Benign => budgeted(raw, budgets.k_benign).with_origin(Origin::BenignPool),
    })
}

/// Dictionaries for every sample, keyed by sample id. Runs in parallel.
pub fn build_sample_dicts(
    samples: &[Sample],
    n: usize,
    budgets: &Budgets,
) -> Result<BTreeMap<String, NGramDictionary>> {
    budgets.validate()?;
    if n == 0 {
        return Err(Error::contract("n-gram length must be at least 1"));
    }
    samples
        .par_iter()
        .map(|s| Ok((s.id().to_string(), sample_dict(s, n, budgets)?)))
        .collect()
}

/// Merge a family's sample dictionaries and keep the top `k_family`.
pub fn build_family_dict<'a>(
    n: usize,
    sample_dicts: impl IntoIterator<Item = &'a NGramDictionary>,
    k_family: Option<usize>,
) -> Result<NGramDictionary> {
    let merged = merge(n, sample_dicts)?.with_origin(Origin::Family);
    Ok(budgeted(merged, k_family))
}

/// Write in the dictionary text format: a `n=<n> budget=<k|none>` header,
/// then `<hex key>\t<count>` lines in rank order.
pub fn write_dictionary<W: Write>(dict: &NGramDictionary, mut w: W) -> Result<()> {
    match dict.budget {
        Some(k) => writeln!(w, "n={} budget={k}", dict.n)?,
        None => writeln!(w, "n={} budget=none", dict.n)?,
    }
    for (k, c) in dict.ranked() {
        writeln!(w, "{}\t{c}", k.to_hex())?;
    }
    Ok(())
}

pub fn dictionary_to_string(dict: &NGramDictionary) -> String {
    let mut buf = Vec::new();
    write_dictionary(dict, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("dictionary text is ascii")
}

pub fn read_dictionary<R: BufRead>(r: R, origin: Origin, name: &str) -> Result<NGramDictionary> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(name, 1, "missing header"))??;
    let (n, budget) = parse_dict_header(&header).ok_or_else(|| {
        Error::parse(name, 1, format!("bad header {header:?}, expected `n=<n> budget=<k|none>`"))
    })?;
    let mut entries = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (key, count) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(name, lineno, "expected `<hex>\\t<count>`"))?;
        let key = NGramKey::from_hex(key)
            .filter(|k| k.len() == n)
            .ok_or_else(|| Error::parse(name, lineno, format!("bad {n}-gram key {key:?}")))?;
        let count: u64 = count
            .parse()
            .ok()
            .filter(|&c| c > 0)
            .ok_or_else(|| Error::parse(name, lineno, format!("bad count {count:?}")))?;
        if entries.insert(key, count).is_some() {
            return Err(Error::parse(name, lineno, "duplicate key"));
        }
    }
    if let Some(k) = budget {
        if entries.len() > k {
            return Err(Error::parse(name, 1, format!("{} entries exceed budget {k}", entries.len())));
        }
    }
    Ok(NGramDictionary {
        n,
        entries,
        budget,
        origin,
    })
}

fn parse_dict_header(h: &str) -> Option<(usize, Option<usize>)> {
    let (a, b) = h.trim_end().split_once(' ')?;
    let n: usize = a.strip_prefix("n=")?.parse().ok().filter(|&n| n >= 1)?;
    let budget = match b.strip_prefix("budget=")? {
        "none" => None,
        k => Some(k.parse().ok().filter(|&k| k >= 1)?),
    };
    Some((n, budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dict(pairs: &[(&[u8], u64)]) -> NGramDictionary {
        NGramDictionary::from_entries(
            pairs[0].0.len(),
            pairs.iter().map(|(k, c)| (NGramKey::new(k), *c)),
            Origin::Sample,
        )
        .unwrap()
    }

    fn brute_force(bytes: &[u8], n: usize) -> BTreeMap<Vec<u8>, u64> {
        let mut m = BTreeMap::new();
        if bytes.len() >= n {
            for i in 0..=bytes.len() - n {
                *m.entry(bytes[i..i + n].to_vec()).or_insert(0) += 1;
            }
        }
        m
    }

    fn as_map(d: &NGramDictionary) -> BTreeMap<Vec<u8>, u64> {
        d.iter().map(|(k, c)| (k.as_bytes().to_vec(), c)).collect()
    }

    #[test]
    fn counts_hand_example() {
        let d = count_ngrams(&[0x41, 0x42, 0x41, 0x42], 2).unwrap();
        assert_eq!(d.get(b"AB"), 2);
        assert_eq!(d.get(b"BA"), 1);
        assert_eq!(d.len(), 2);
    }

    #[test]
    fn overlapping_windows_all_count() {
        assert_eq!(count_ngrams(b"AAA", 2).unwrap().get(b"AA"), 2);
    }

    #[test]
    fn short_input_is_empty() {
        assert!(count_ngrams(&[1, 2, 3], 4).unwrap().is_empty());
        assert!(count_ngrams(&[1], 0).is_err());
    }

    #[test]
    fn chunked_feed_matches_whole() {
        let bytes: Vec<u8> = (0..2000u32).map(|i| (i * 7 % 13) as u8).collect();
        for n in [1, 2, 4, 6] {
            let whole = count_ngrams(&bytes, n).unwrap();
            let mut c = NGramCounter::new(n).unwrap();
            for chunk in bytes.chunks(3) {
                c.feed(chunk);
            }
            assert_eq!(c.finish(Origin::Sample), whole);
            let r = count_ngrams_reader(bytes.as_slice(), n).unwrap();
            assert_eq!(r, whole);
        }
    }

    #[test]
    fn truncation_tie_break_is_lexicographic() {
        let d = dict(&[(b"AA", 5), (b"AB", 5), (b"AC", 1)]);
        let t = truncate_top_k(&d, 2);
        assert_eq!(as_map(&t), as_map(&dict(&[(b"AA", 5), (b"AB", 5)])));
        let t1 = truncate_top_k(&dict(&[(b"AB", 5), (b"AA", 5)]), 1);
        assert_eq!(t1.get(b"AA"), 5);
        assert_eq!(t1.len(), 1);
    }

    #[test]
    fn truncation_identity_when_small() {
        let d = dict(&[(b"AA", 5), (b"AB", 2)]);
        assert_eq!(as_map(&truncate_top_k(&d, 3)), as_map(&d));
    }

    #[test]
    fn merge_examples() {
        let a = dict(&[(b"AB", 2)]);
        let b = dict(&[(b"AB", 3), (b"BA", 1)]);
        let m = merge(2, [&a, &b]).unwrap();
        assert_eq!(as_map(&m), as_map(&dict(&[(b"AB", 5), (b"BA", 1)])));
        let e = NGramDictionary::empty(2, Origin::Sample);
        assert_eq!(as_map(&merge(2, [&a, &e]).unwrap()), as_map(&a));
        assert!(merge(2, std::iter::empty()).unwrap().is_empty());
        let c = dict(&[(b"ABC", 1)]);
        assert!(matches!(merge(2, [&a, &c]), Err(Error::Contract(_))));
    }

    #[test]
    fn family_dict_examples() {
        let a = dict(&[(b"AB", 2), (b"CD", 1)]);
        let fam = build_family_dict(2, [&a], Some(1)).unwrap();
        assert_eq!(as_map(&fam), as_map(&truncate_top_k(&a, 1)));
        let b = dict(&[(b"XY", 4)]);
        let u = build_family_dict(2, [&a, &b], Some(1500)).unwrap();
        assert_eq!(u.len(), 3);
        assert_eq!(u.get(b"XY"), 4);
        assert_eq!(u.origin(), Origin::Family);
    }

    #[test]
    fn dictionary_text_round_trip() {
        let d = truncate_top_k(&dict(&[(b"\x00\xff", 9), (b"AB", 9), (b"zz", 1)]), 2);
        let text = dictionary_to_string(&d);
        assert_eq!(text, "n=2 budget=2\n00ff\t9\n4142\t9\n");
        let back = read_dictionary(text.as_bytes(), Origin::Sample, "t").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn dictionary_parse_errors_name_line() {
        let bad = "n=2 budget=none\n4142\t3\n41\t2\n";
        match read_dictionary(bad.as_bytes(), Origin::Sample, "t") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(read_dictionary("n=2\n".as_bytes(), Origin::Sample, "t").is_err());
        assert!(read_dictionary("n=2 budget=1\n4142\t1\n4143\t1\n".as_bytes(), Origin::Sample, "t").is_err());
    }

    proptest! {
        #[test]
        fn streaming_equals_brute_force(bytes in proptest::collection::vec(any::<u8>(), 0..600), n in 1usize..12) {
            let d = count_ngrams(&bytes, n).unwrap();
            prop_assert_eq!(as_map(&d), brute_force(&bytes, n));
            prop_assert_eq!(d.total(), (bytes.len() + 1).saturating_sub(n) as u64);
        }

        #[test]
        fn chunking_does_not_change_counts(
            bytes in proptest::collection::vec(0u8..4, 0..400),
            cuts in proptest::collection::vec(1usize..13, 1..40),
            n in 1usize..12,
        ) {
            let mut c = NGramCounter::new(n).unwrap();
            let mut at = 0;
            for step in cuts.iter().cycle() {
                if at >= bytes.len() {
                    break;
                }
                let end = (at + step).min(bytes.len());
                c.feed(&bytes[at..end]);
                at = end;
            }
            prop_assert_eq!(as_map(&c.finish(Origin::Sample)), brute_force(&bytes, n));
        }

        #[test]
        fn truncation_is_idempotent_and_monotone(
            counts in proptest::collection::btree_map(any::<[u8; 2]>(), 1u64..20, 0..60),
            k in 1usize..40,
        ) {
            let d = NGramDictionary::from_entries(2, counts.iter().map(|(k, &c)| (NGramKey::new(k), c)), Origin::Sample).unwrap();
            let t = truncate_top_k(&d, k);
            prop_assert!(t.len() <= k);
            prop_assert_eq!(as_map(&truncate_top_k(&t, k)), as_map(&t));
            let min_kept = t.iter().map(|(_, c)| c).min().unwrap_or(u64::MAX);
            for (key, c) in d.iter() {
                if t.get(key.as_bytes()) == 0 {
                    prop_assert!(c <= min_kept);
                }
            }
        }
    }
}
