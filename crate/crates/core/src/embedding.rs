//! Sentence vectors: a frozen on-disk store or a small trainable encoder.
//!
//! # Store file format
//!
//! ```text
//! dim=<d>
//! <id>\t<label>\t<v1> <v2> ... <vd>
//! ```
//!
//! UTF-8 with LF line endings, one record per line. Ids are unique; ids and
//! labels may not contain tabs or newlines. Values are decimal floats and
//! the writer emits the shortest representation that parses back to the
//! same `f64`, so a save/load cycle is bit-exact.
//!
//! Tools exporting transformer embeddings into this format must choose a
//! pooling strategy (CLS token, mean over tokens, ...) and keep it fixed
//! for every record of a store. Record the choice alongside the file;
//! mixing pooling within one store makes the vectors incomparable.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::heads::Parameters;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub label: String,
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    by_id: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument(
                "embedding dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            ..Self::default()
        })
    }

    pub fn from_records(dim: usize, records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut s = Self::new(dim)?;
        for r in records {
            s.push(r)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, r: EmbeddingRecord) -> Result<()> {
        if r.vector.len() != self.dim {
            return Err(Error::Argument(format!(
                "record `{}` has {} values, store dimension is {}",
                r.id,
                r.vector.len(),
                self.dim
            )));
        }
        if self.by_id.contains_key(&r.id) {
            return Err(Error::Argument(format!("duplicate id `{}`", r.id)));
        }
        self.by_id.insert(r.id.clone(), self.records.len());
        self.records.push(r);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn get(&self, i: usize) -> &EmbeddingRecord {
        &self.records[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Record indices grouped by label, labels in sorted order.
    pub fn by_label(&self) -> BTreeMap<String, Vec<usize>> {
        group_by_label(self.records.iter().map(|r| r.label.as_str()))
    }

    pub fn labels(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.label.clone()).collect()
    }

    /// `[rows.len(), d]` matrix of the selected records.
    pub fn matrix(&self, rows: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            data.extend_from_slice(&self.records[i].vector);
        }
        Tensor::new(vec![rows.len(), self.dim], data)
    }
}

pub(crate) fn group_by_label<'a>(
    labels: impl Iterator<Item = &'a str>,
) -> BTreeMap<String, Vec<usize>> {
    let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.enumerate() {
        m.entry(l.to_string()).or_default().push(i);
    }
    m
}

/// Parses store text; `origin` names the source in error messages.
pub fn parse_store(text: &str, origin: &Path) -> Result<EmbeddingStore> {
    let fmt = |line: usize, msg: String| Error::Format {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines
        .next()
        .ok_or_else(|| fmt(1, "missing `dim=<d>` header".into()))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| fmt(1, format!("expected `dim=<d>` header, found `{header}`")))?;
    let mut store = EmbeddingStore::new(dim)?;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(3, '\t');
        let (Some(id), Some(label), Some(values)) = (parts.next(), parts.next(), parts.next())
        else {
            return Err(fmt(n, "expected `<id>\\t<label>\\t<values>`".into()));
        };
        let vector = values
            .split_ascii_whitespace()
            .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| fmt(n, "values must be finite decimal numbers".into()))?;
        if vector.len() != dim {
            return Err(fmt(
                n,
                format!("{} values, header declares dim={dim}", vector.len()),
            ));
        }
        if store.index_of(id).is_some() {
            return Err(fmt(n, format!("duplicate id `{id}`")));
        }
        store.push(EmbeddingRecord {
            id: id.to_string(),
            label: label.to_string(),
            vector,
        })?;
    }
    Ok(store)
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_store(&text, path)
}

pub fn write_store<W: Write>(store: &EmbeddingStore, mut out: W) -> std::io::Result<()> {
    writeln!(out, "dim={}", store.dim)?;
    for r in &store.records {
        write!(out, "{}\t{}\t", r.id, r.label)?;
        for (j, v) in r.vector.iter().enumerate() {
            if j > 0 {
                out.write_all(b" ")?;
            }
            write!(out, "{v}")?;
        }
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save_store(store: &EmbeddingStore, path: &Path) -> Result<()> {
    let bad = |s: &str| s.is_empty() || s.contains(['\t', '\n', '\r']);
    if let Some(r) = store.records.iter().find(|r| bad(&r.id) || bad(&r.label)) {
        return Err(Error::Argument(format!(
            "record `{}` has an empty id or label, or one containing a tab or newline",
            r.id
        )));
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_store(store, std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Reserved row for unknown tokens.
pub const UNK: usize = 0;

/// Bag-of-embeddings encoder: mean of token rows, then a linear projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyEncoder {
    vocab: BTreeMap<String, usize>,
    /// `[|vocab| + 1, d₀]`, row 0 is UNK.
    pub token_table: Tensor,
    /// `[d₀, d]`
    pub projection: Tensor,
}

impl ToyEncoder {
    /// Vocabulary from every token of `texts`, indexed in sorted order.
    pub fn new<'a, R: Rng + ?Sized>(
        texts: impl IntoIterator<Item = &'a str>,
        token_dim: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if token_dim == 0 || dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        let tokens: BTreeSet<String> = texts.into_iter().flat_map(tokenize).collect();
        let vocab: BTreeMap<String, usize> = tokens.into_iter().zip(1..).collect();
        let rows = vocab.len() + 1;
        let scale = 1.0 / (token_dim as f64).sqrt();
        let table = (0..rows * token_dim)
            .map(|_| rng.random_range(-1.0..1.0) * scale * 3f64.sqrt())
            .collect();
        Ok(Self {
            vocab,
            token_table: Tensor::new(vec![rows, token_dim], table)?,
            projection: Tensor::glorot(vec![token_dim, dim], rng),
        })
    }

    pub fn from_parts(
        vocab: BTreeMap<String, usize>,
        token_table: Tensor,
        projection: Tensor,
    ) -> Result<Self> {
        let (rows, d0) = token_table.rows_cols();
        if vocab.values().any(|&i| i == UNK || i >= rows) || projection.shape()[0] != d0 {
            return Err(Error::Config(
                "encoder vocabulary or shapes are inconsistent".into(),
            ));
        }
        Ok(Self {
            vocab,
            token_table,
            projection,
        })
    }

    pub fn dim(&self) -> usize {
        self.projection.shape()[1]
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Token rows of `text`; an empty text is a single UNK.
    pub fn token_ids(&self, text: &str) -> Vec<usize> {
        let ids: Vec<usize> = tokenize(text)
            .iter()
            .map(|t| self.vocab.get(t).copied().unwrap_or(UNK))
            .collect();
        if ids.is_empty() {
            vec![UNK]
        } else {
            ids
        }
    }

    pub fn encode(&self, text: &str) -> Result<Tensor> {
        let mut g = Graph::new();
        let (t, p) = (g.constant(&self.token_table), g.constant(&self.projection));
        let v = self.encode_batch(&mut g, t, p, &[text])?;
        Ok(Tensor::vector(g.value(v).to_vec()))
    }

    /// `[texts.len(), d]` encodings with `table` and `projection` already on
    /// the graph, so gradients reach them when they are params.
    pub fn encode_batch(
        &self,
        g: &mut Graph,
        table: Var,
        projection: Var,
        texts: &[&str],
    ) -> Result<Var> {
        let per_text: Vec<Vec<usize>> = texts.iter().map(|t| self.token_ids(t)).collect();
        let total: usize = per_text.iter().map(Vec::len).sum();
        let mut avg = vec![0.0; texts.len() * total];
        let mut ids = Vec::with_capacity(total);
        for (i, toks) in per_text.iter().enumerate() {
            let w = 1.0 / toks.len() as f64;
            for &t in toks {
                avg[i * total + ids.len()] = w;
                ids.push(t);
            }
        }
        let rows = g.gather_rows(table, &ids)?;
        let avg = g.constant(&Tensor::new(vec![texts.len(), total], avg)?);
        let pooled = g.matmul(avg, rows)?;
        g.matmul(pooled, projection)
    }
}

impl Parameters for ToyEncoder {
    fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.token_table, &self.projection]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.token_table, &mut self.projection]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheck};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: &str, label: &str, v: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            id: id.into(),
            label: label.into(),
            vector: v,
        }
    }

    #[test]
    fn parses_three_rows() {
        let text = "dim=4\na\tx\t1 2 3 4\nb\tx\t0 0 0 0.5\nc\ty\t-1 1e-3 2 3\n";
        let s = parse_store(text, Path::new("mem")).unwrap();
        assert_eq!((s.len(), s.dim()), (3, 4));
        assert_eq!(s.get(2).vector[1], 1e-3);
        assert_eq!(s.by_label()["x"], vec![0, 1]);
    }

    #[test]
    fn short_row_is_a_format_error_at_its_line() {
        let text = "dim=4\na\tx\t1 2 3 4\nb\tx\t1 2 3\n";
        match parse_store(text, Path::new("mem")).unwrap_err() {
            Error::Format { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn duplicate_id_and_bad_header_are_format_errors() {
        let dup = "dim=1\na\tx\t1\na\ty\t2\n";
        assert!(matches!(
            parse_store(dup, Path::new("m")),
            Err(Error::Format { line: 3, .. })
        ));
        assert!(matches!(
            parse_store("dims=1\n", Path::new("m")),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            parse_store("dim=1\na\tx\tnan\n", Path::new("m")),
            Err(Error::Format { line: 2, .. })
        ));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records = (0..20)
            .map(|i| {
                let v = (0..5)
                    .map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-30..30)) - 0.5)
                    .collect();
                rec(&format!("r{i}"), if i % 2 == 0 { "even" } else { "odd" }, v)
            })
            .collect();
        let store = EmbeddingStore::from_records(5, records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tsv");
        save_store(&store, &path).unwrap();
        let back = load_store(&path).unwrap();
        for (a, b) in store.records().iter().zip(back.records()) {
            assert_eq!(a.id, b.id);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.vector), bits(&b.vector));
        }
        assert_eq!(back, store);
    }

    #[test]
    fn save_rejects_tab_in_label() {
        let store = EmbeddingStore::from_records(1, vec![rec("a", "x\ty", vec![1.0])]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(save_store(&store, &dir.path().join("s")).is_err());
    }

    fn fixed_encoder() -> ToyEncoder {
        let vocab: BTreeMap<String, usize> = [("a".to_string(), 1), ("b".to_string(), 2)].into();
        let table = Tensor::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -2.0]]).unwrap();
        let proj = Tensor::from_rows(&[[1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]).unwrap();
        ToyEncoder::from_parts(vocab, table, proj).unwrap()
    }

    #[test]
    fn single_token_is_its_projected_row() {
        let e = fixed_encoder();
        assert_eq!(e.encode("A").unwrap().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_tokens_project_their_mean() {
        let e = fixed_encoder();
        // mean row [2, 0]
        assert_eq!(e.encode("a b").unwrap().data(), &[2.0, 0.0, 2.0]);
        assert_eq!(e.encode("b a").unwrap(), e.encode("a b").unwrap());
    }

    #[test]
    fn unknown_and_empty_text_use_unk() {
        let e = fixed_encoder();
        assert_eq!(e.token_ids("zzz"), vec![UNK]);
        assert_eq!(e.token_ids("   "), vec![UNK]);
        assert_eq!(e.encode("").unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn batch_matches_single_encodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let texts = ["the cat sat", "a dog", "the the dog cat unknownword"];
        let e = ToyEncoder::new(texts[..2].iter().copied(), 4, 3, &mut rng).unwrap();
        assert_eq!(e.dim(), 3);
        let mut g = Graph::new();
        let (t, p) = (g.constant(&e.token_table), g.constant(&e.projection));
        let b = e.encode_batch(&mut g, t, p, &texts).unwrap();
        for (i, text) in texts.iter().enumerate() {
            let single = e.encode(text).unwrap();
            for j in 0..3 {
                assert!((g.value(b)[i * 3 + j] - single.data()[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn encoder_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let texts = ["x y z", "y y", "z w x"];
        let e = ToyEncoder::new(texts.iter().copied(), 3, 4, &mut rng).unwrap();
        let inputs: Vec<Tensor> = e.tensors().into_iter().cloned().collect();
        let report = check_gradients(&inputs, GradCheck::default(), |g, v| {
            let out = e.encode_batch(g, v[0], v[1], &texts)?;
            let s = g.squash_rows(out);
            Ok(g.sum(s))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    proptest! {
        #[test]
        fn encode_is_order_invariant(perm in Just(vec!["one", "two", "three", "two"]).prop_shuffle()) {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let e = ToyEncoder::new(["one two three"], 3, 2, &mut rng).unwrap();
            let a = e.encode("one two three two").unwrap();
            let b = e.encode(&perm.join(" ")).unwrap();
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
