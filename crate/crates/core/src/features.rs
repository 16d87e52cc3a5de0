//! Feature selection over the malware class and row-stochastic vectorization.

use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::ngram::{merge, NGramDictionary, NGramKey};
use crate::scalar::Scalar;

pub const DEFAULT_FEATURE_COUNT: usize = 20;

/// Ordered selected n-grams plus the family combination they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSet {
    pub n: usize,
    pub keys: Vec<NGramKey>,
    pub provenance: Vec<String>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Merge the (malware) family dictionaries and take the top `m` keys.
pub fn select_features(
    family_dicts: &[&NGramDictionary],
    m: usize,
    provenance: Vec<String>,
) -> Result<FeatureSet> {
    let first = family_dicts
        .first()
        .ok_or_else(|| Error::config("feature selection needs at least one family dictionary"))?;
    if m == 0 {
        return Err(Error::config("feature count m must be at least 1"));
    }
    let n = first.n();
    let merged = merge(n, family_dicts.iter().copied())?;
    let keys = merged
        .ranked()
        .into_iter()
        .take(m)
        .map(|(k, _)| k.clone())
        .collect();
    Ok(FeatureSet { n, keys, provenance })
}

/// Relative frequencies of the selected keys within one sample dictionary.
/// Mass outside the feature set is ignored; no overlap yields the zero vector.
pub fn vectorize<T: Scalar>(dict: &NGramDictionary, fs: &FeatureSet) -> Result<Vec<T>> {
    if dict.n() != fs.n {
        return Err(Error::contract(format!(
            "dictionary has n={} but feature set has n={}",
            dict.n(),
            fs.n
        )));
    }
    let counts: Vec<u64> = fs.keys.iter().map(|k| dict.get(k.as_bytes())).collect();
    let sum: u64 = counts.iter().sum();
    if sum == 0 {
        return Ok(vec![T::zero(); counts.len()]);
    }
    // integer counts are exact in f64, so scaling all counts leaves the quotients unchanged
    let sum = sum as f64;
    Ok(counts.into_iter().map(|c| T::of(c as f64 / sum)).collect())
}

/// Dense row-major feature rows with ±1 labels and sample ids.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<T> {
    pub feature_set: Option<FeatureSet>,
    dim: usize,
    data: Vec<T>,
    labels: Vec<Label>,
    sample_ids: Vec<String>,
}

impl<T: Scalar> FeatureMatrix<T> {
    /// Build from raw rows. Ids default to the row index.
    pub fn from_rows(rows: Vec<Vec<T>>, labels: Vec<Label>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| format!("row-{i:06}")).collect();
        Self::from_parts(None, rows, labels, ids)
    }

    pub fn from_parts(
        feature_set: Option<FeatureSet>,
        rows: Vec<Vec<T>>,
        labels: Vec<Label>,
        sample_ids: Vec<String>,
    ) -> Result<Self> {
        if rows.len() != labels.len() || rows.len() != sample_ids.len() {
            return Err(Error::contract("rows, labels and sample ids differ in length"));
        }
        let dim = match (&feature_set, rows.first()) {
            (Some(fs), _) => fs.len(),
            (None, Some(r)) => r.len(),
            (None, None) => 0,
        };
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::contract(format!("every row must have {dim} columns")));
        }
        Ok(FeatureMatrix {
            feature_set,
            dim,
            data: rows.into_iter().flatten().collect(),
            labels,
            sample_ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        (0..self.len()).map(move |i| self.row(i))
    }

    /// Row-major backing storage.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// New matrix holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            feature_set: self.feature_set.clone(),
            dim: self.dim,
            data,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            sample_ids: rows.iter().map(|&r| self.sample_ids[r].clone()).collect(),
        }
    }
}

/// Vectorize malware rows (label +1) then benign rows (label -1), each class ordered by id.
pub fn build_matrix<T: Scalar>(
    malware: &[(&str, &NGramDictionary)],
    benign: &[(&str, &NGramDictionary)],
    fs: &FeatureSet,
) -> Result<FeatureMatrix<T>> {
    let mut mal = malware.to_vec();
    mal.sort_by(|a, b| a.0.cmp(b.0));
    let mut ben = benign.to_vec();
    ben.sort_by(|a, b| a.0.cmp(b.0));
    let ordered: Vec<(&str, &NGramDictionary, Label)> = mal
        .into_iter()
        .map(|(id, d)| (id, d, Label::Malware))
        .chain(ben.into_iter().map(|(id, d)| (id, d, Label::Benign)))
        .collect();
    let rows = ordered
        .par_iter()
        .map(|(_, d, _)| vectorize::<T>(d, fs))
        .collect::<Result<Vec<_>>>()?;
    FeatureMatrix::from_parts(
        Some(fs.clone()),
        rows,
        ordered.iter().map(|o| o.2).collect(),
        ordered.iter().map(|o| o.0.to_string()).collect(),
    )
}

/// `n=<n> m=<m>` header, then one hex key per line in rank order.
pub fn write_feature_set<W: Write>(fs: &FeatureSet, mut w: W) -> Result<()> {
    writeln!(w, "n={} m={}", fs.n, fs.keys.len())?;
    for k in &fs.keys {
        writeln!(w, "{}", k.to_hex())?;
    }
    Ok(())
}

pub fn read_feature_set<R: BufRead>(r: R, name: &str) -> Result<FeatureSet> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(name, 1, "missing header"))??;
    let parsed = header.trim_end().split_once(' ').and_then(|(a, b)| {
        let n: usize = a.strip_prefix("n=")?.parse().ok()?;
        let m: usize = b.strip_prefix("m=")?.parse().ok()?;
        Some((n, m))
    });
    let (n, m) = parsed.ok_or_else(|| Error::parse(name, 1, "expected `n=<n> m=<m>`"))?;
    let mut keys: Vec<NGramKey> = Vec::with_capacity(m);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let k = NGramKey::from_hex(line.trim())
            .filter(|k| k.len() == n)
            .ok_or_else(|| Error::parse(name, i + 2, format!("bad {n}-gram key {line:?}")))?;
        if keys.contains(&k) {
            return Err(Error::parse(name, i + 2, "duplicate key"));
        }
        keys.push(k);
    }
    if keys.len() != m {
        return Err(Error::parse(name, 1, format!("header says m={m} but {} keys follow", keys.len())));
    }
    Ok(FeatureSet {
        n,
        keys,
        provenance: Vec::new(),
    })
}

/// CSV export with columns `sample_id,label,f0..f{m-1}`.
pub fn write_matrix_csv<T: Scalar, W: Write>(matrix: &FeatureMatrix<T>, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..matrix.dim()).map(|i| format!("f{i}")));
    out.write_record(&header)?;
    for i in 0..matrix.len() {
        let mut rec = vec![
            matrix.sample_ids()[i].clone(),
            matrix.labels()[i].sign().to_string(),
        ];
        rec.extend(matrix.row(i).iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ngram::Origin;

    fn dict(pairs: &[(&[u8], u64)]) -> NGramDictionary {
        NGramDictionary::from_entries(
            2,
            pairs.iter().map(|(k, c)| (NGramKey::new(k), *c)),
            Origin::Sample,
        )
        .unwrap()
    }

    fn fs(keys: &[&[u8]]) -> FeatureSet {
        FeatureSet {
            n: 2,
            keys: keys.iter().map(|k| NGramKey::new(k)).collect(),
            provenance: vec![],
        }
    }

    #[test]
    fn vectorize_examples() {
        let f = fs(&[b"AB", b"BA"]);
        let v: Vec<f64> = vectorize(&dict(&[(b"AB", 3), (b"BA", 1)]), &f).unwrap();
        assert_eq!(v, vec![0.75, 0.25]);
        let z: Vec<f64> = vectorize(&dict(&[(b"CC", 3)]), &f).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let w: Vec<f64> = vectorize(&dict(&[(b"AB", 3), (b"BA", 1), (b"CC", 6)]), &f).unwrap();
        assert_eq!(w, vec![0.75, 0.25]);
        let d4 = NGramDictionary::empty(4, Origin::Sample);
        assert!(vectorize::<f64>(&d4, &f).is_err());
    }

    #[test]
    fn selection_examples() {
        let a = dict(&[(b"AA", 5), (b"AB", 9), (b"AC", 1)]);
        let one = select_features(&[&a], 2, vec![]).unwrap();
        assert_eq!(one.keys, fs(&[b"AB", b"AA"]).keys);
        let two = select_features(&[&a, &a], 2, vec![]).unwrap();
        assert_eq!(one.keys, two.keys);
        assert!(select_features(&[], 20, vec![]).is_err());
        let all = select_features(&[&a], usize::MAX, vec![]).unwrap();
        assert_eq!(&all.keys[..2], &one.keys[..]);
    }

    #[test]
    fn matrix_orders_malware_then_benign_by_id() {
        let f = fs(&[b"AB", b"BA"]);
        let d1 = dict(&[(b"AB", 1)]);
        let d2 = dict(&[(b"BA", 1)]);
        let m: FeatureMatrix<f64> =
            build_matrix(&[("m2", &d1), ("m1", &d2)], &[("b1", &d1)], &f).unwrap();
        assert_eq!(m.sample_ids(), ["m1", "m2", "b1"]);
        assert_eq!(m.labels(), [Label::Malware, Label::Malware, Label::Benign]);
        assert_eq!(m.row(0), [0.0, 1.0]);
        let only_benign: FeatureMatrix<f64> = build_matrix(&[], &[("b1", &d1)], &f).unwrap();
        assert_eq!(only_benign.count(Label::Malware), 0);
        assert_eq!(only_benign.len(), 1);
    }

    #[test]
    fn feature_set_round_trip() {
        let f = fs(&[b"AB", b"\x00\x01"]);
        let mut buf = Vec::new();
        write_feature_set(&f, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "n=2 m=2\n4142\n0001\n");
        assert_eq!(read_feature_set(buf.as_slice(), "t").unwrap().keys, f.keys);
        assert!(read_feature_set("n=2 m=3\n4142\n".as_bytes(), "t").is_err());
    }

    #[test]
    fn csv_export() {
        let m = FeatureMatrix::from_parts(None, vec![vec![0.5f64, 0.5]], vec![Label::Benign], vec!["s".into()]).unwrap();
        let mut buf = Vec::new();
        write_matrix_csv(&m, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sample_id,label,f0,f1\ns,-1,0.5,0.5\n");
    }
}
