//! Gaussian inputs, locality-controlled labels, and the on-disk dataset format.
//!
//! Labels are 1-based class indices in `1..=K`, matching the file format.
//! Index lists (`indices` for k-local, `offsets` for k-global) are 1-based as
//! well and must be strictly increasing within `1..=d`.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

pub type Label = u32;

pub const MAGIC: &[u8; 4] = b"LOCB";
pub const FORMAT_VERSION: u32 = 1;

/// How the labels of a dataset were produced.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelRule {
    /// Sign of the product of the selected coordinates.
    KLocal { indices: Vec<usize> },
    /// Sign of the cyclic sum of shifted products.
    KGlobal { offsets: Vec<usize> },
    /// Uniform labels with no relation to the inputs.
    Random,
    /// Ising configurations sampled at one of two inverse temperatures.
    Ising { beta1: f64, beta2: f64 },
}

impl LabelRule {
    /// k-local rule on coordinates `1..=k`.
    pub fn k_local(k: usize) -> Self {
        LabelRule::KLocal {
            indices: (1..=k).collect(),
        }
    }

    /// k-global rule with offsets `1..=k`.
    pub fn k_global(k: usize) -> Self {
        LabelRule::KGlobal {
            offsets: (1..=k).collect(),
        }
    }

    pub fn kind_byte(&self) -> u8 {
        match self {
            LabelRule::KLocal { .. } => 0,
            LabelRule::KGlobal { .. } => 1,
            LabelRule::Random => 2,
            LabelRule::Ising { .. } => 3,
        }
    }

    /// Arity `k` (0 for rules without an index list).
    pub fn arity(&self) -> usize {
        self.index_list().len()
    }

    pub fn index_list(&self) -> &[usize] {
        match self {
            LabelRule::KLocal { indices } => indices,
            LabelRule::KGlobal { offsets } => offsets,
            _ => &[],
        }
    }

    /// Short name used in config files and result rows.
    pub fn name(&self) -> &'static str {
        match self {
            LabelRule::KLocal { .. } => "k_local",
            LabelRule::KGlobal { .. } => "k_global",
            LabelRule::Random => "random",
            LabelRule::Ising { .. } => "ising",
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            LabelRule::KLocal { indices } | LabelRule::KGlobal { offsets: indices } => {
                validate_indices(indices, d)
            }
            LabelRule::Random => Ok(()),
            LabelRule::Ising { beta1, beta2 } => {
                if !(beta1.is_finite() && beta2.is_finite()) || beta1 == beta2 {
                    return Err(Error::InvalidArgument(format!(
                        "ising temperatures must be finite and distinct, got {beta1} and {beta2}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Deterministic label of `x`, for the rules that are functions of the input.
    pub fn classify(&self, x: &[f64]) -> Option<Label> {
        match self {
            LabelRule::KLocal { indices } => Some(local_label_unchecked(x, indices)),
            LabelRule::KGlobal { offsets } => Some(global_label_unchecked(x, offsets)),
            LabelRule::Random | LabelRule::Ising { .. } => None,
        }
    }
}

fn validate_indices(indices: &[usize], d: usize) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("label rule needs k >= 1".into()));
    }
    for (pos, &i) in indices.iter().enumerate() {
        if i == 0 || i > d {
            return Err(Error::IndexOutOfRange { index: i, dim: d });
        }
        if pos > 0 && indices[pos - 1] >= i {
            return Err(Error::InvalidArgument(format!(
                "indices must be strictly increasing, got {indices:?}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub rule: LabelRule,
    pub seed: u64,
}

/// `N` inputs of dimension `d` stored row-major, with labels in `1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<f64>,
    labels: Vec<Label>,
    dim: usize,
    classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(
        inputs: Vec<f64>,
        labels: Vec<Label>,
        dim: usize,
        classes: usize,
        meta: DatasetMeta,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("input dimension must be >= 1".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * dim,
                actual: inputs.len(),
            });
        }
        if let Some(pos) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "input row {} column {}",
                pos / dim,
                pos % dim
            )));
        }
        if let Some((mu, &y)) = labels
            .iter()
            .enumerate()
            .find(|(_, &y)| y == 0 || y as usize > classes)
        {
            return Err(Error::Validation(format!(
                "label {y} of sample {mu} outside 1..={classes}"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            dim,
            classes,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn row(&self, mu: usize) -> &[f64] {
        &self.inputs[mu * self.dim..(mu + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.inputs.chunks_exact(self.dim)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let mut inputs = Vec::with_capacity(rows.len() * self.dim);
        let mut labels = Vec::with_capacity(rows.len());
        for &mu in rows {
            inputs.extend_from_slice(self.row(mu));
            labels.push(self.labels[mu]);
        }
        Dataset {
            inputs,
            labels,
            dim: self.dim,
            classes: self.classes,
            meta: self.meta.clone(),
        }
    }

    /// Fraction of samples carrying `label`.
    pub fn class_fraction(&self, label: Label) -> f64 {
        let hits = self.labels.iter().filter(|&&y| y == label).count();
        hits as f64 / self.len().max(1) as f64
    }
}

/// `n × d` i.i.d. standard normal entries, row-major.
pub fn gen_gaussian_inputs(n: usize, d: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..n * d).map(|_| rng.sample(StandardNormal)).collect())
}

fn check_index_list(x: &[f64], indices: &[usize]) -> Result<()> {
    if indices.is_empty() {
        return Err(Error::InvalidArgument("empty index list".into()));
    }
    match indices.iter().find(|&&i| i == 0 || i > x.len()) {
        Some(&i) => Err(Error::IndexOutOfRange {
            index: i,
            dim: x.len(),
        }),
        None => Ok(()),
    }
}

fn sign_label(value: f64) -> Label {
    if value >= 0.0 {
        1
    } else {
        2
    }
}

fn local_label_unchecked(x: &[f64], indices: &[usize]) -> Label {
    sign_label(indices.iter().map(|&i| x[i - 1]).product())
}

fn global_feature_unchecked(x: &[f64], offsets: &[usize]) -> f64 {
    let d = x.len();
    (1..=d)
        .map(|j| {
            offsets
                .iter()
                .map(|&i| x[(j + i - 1) % d])
                .product::<f64>()
        })
        .sum()
}

fn global_label_unchecked(x: &[f64], offsets: &[usize]) -> Label {
    sign_label(global_feature_unchecked(x, offsets))
}

/// Class 1 when the product of the selected coordinates is `>= 0`, else 2.
pub fn k_local_label(x: &[f64], indices: &[usize]) -> Result<Label> {
    check_index_list(x, indices)?;
    Ok(local_label_unchecked(x, indices))
}

/// `M = Σ_j Π_i x[j + i]` with cyclic indexing modulo `d`.
pub fn k_global_feature(x: &[f64], offsets: &[usize]) -> Result<f64> {
    check_index_list(x, offsets)?;
    Ok(global_feature_unchecked(x, offsets))
}

/// Class 1 when `M >= 0`, else 2.
pub fn k_global_label(x: &[f64], offsets: &[usize]) -> Result<Label> {
    check_index_list(x, offsets)?;
    Ok(global_label_unchecked(x, offsets))
}

/// Gaussian inputs labelled by `rule`. Inputs use `seed` directly; random
/// labels use a derived stream.
pub fn generate(rule: &LabelRule, n: usize, d: usize, seed: u64) -> Result<Dataset> {
    rule.validate(d)?;
    let inputs = gen_gaussian_inputs(n, d, seed)?;
    let labels: Vec<Label> = match rule {
        LabelRule::KLocal { indices } => inputs
            .chunks_exact(d)
            .map(|x| local_label_unchecked(x, indices))
            .collect(),
        LabelRule::KGlobal { offsets } => inputs
            .chunks_exact(d)
            .map(|x| global_label_unchecked(x, offsets))
            .collect(),
        LabelRule::Random => uniform_labels(n, 2, derive_seed(seed, 1)),
        LabelRule::Ising { .. } => {
            return Err(Error::InvalidArgument(
                "ising datasets are built by ising::build_ising_dataset".into(),
            ))
        }
    };
    Dataset::new(
        inputs,
        labels,
        d,
        2,
        DatasetMeta {
            rule: rule.clone(),
            seed,
        },
    )
}

fn uniform_labels(n: usize, classes: usize, seed: u64) -> Vec<Label> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| rng.gen_range(1..=classes as Label))
        .collect()
}

/// Replace every label with a uniform draw from `1..=K`. Inputs are copied unchanged.
pub fn randomize_labels(ds: &Dataset, seed: u64) -> Result<Dataset> {
    if ds.classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "randomizing labels needs K >= 2, got {}",
            ds.classes
        )));
    }
    Ok(Dataset {
        inputs: ds.inputs.clone(),
        labels: uniform_labels(ds.len(), ds.classes, seed),
        dim: ds.dim,
        classes: ds.classes,
        meta: DatasetMeta {
            rule: LabelRule::Random,
            seed,
        },
    })
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let n = to_u32(ds.len(), "N")?;
    let mut out = Vec::with_capacity(64 + ds.inputs.len() * 8 + ds.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.dim, "d")?.to_le_bytes());
    out.extend_from_slice(&to_u32(ds.classes, "K")?.to_le_bytes());
    out.push(ds.meta.rule.kind_byte());
    let indices = ds.meta.rule.index_list();
    out.extend_from_slice(&to_u32(indices.len(), "k")?.to_le_bytes());
    for &i in indices {
        out.extend_from_slice(&to_u32(i, "index")?.to_le_bytes());
    }
    out.extend_from_slice(&ds.meta.seed.to_le_bytes());
    if let LabelRule::Ising { beta1, beta2 } = ds.meta.rule {
        out.extend_from_slice(&beta1.to_le_bytes());
        out.extend_from_slice(&beta2.to_le_bytes());
    }
    for v in &ds.inputs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for y in &ds.labels {
        out.extend_from_slice(&y.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Header(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(MAGIC),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Header(format!("unsupported version {version}")));
    }
    let n = r.u32("N")? as usize;
    let d = r.u32("d")? as usize;
    let classes = r.u32("K")? as usize;
    let kind = r.u8("rule kind")?;
    let k = r.u32("k")? as usize;
    let indices = (0..k)
        .map(|_| r.u32("indices").map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let seed = r.u64("seed")?;
    let rule = match kind {
        0 => LabelRule::KLocal { indices },
        1 => LabelRule::KGlobal { offsets: indices },
        2 => LabelRule::Random,
        3 => LabelRule::Ising {
            beta1: r.f64("beta1")?,
            beta2: r.f64("beta2")?,
        },
        other => return Err(Error::Header(format!("unknown rule kind {other}"))),
    };
    if d == 0 {
        return Err(Error::Header("d must be >= 1".into()));
    }
    rule.validate(d).map_err(|e| Error::Header(e.to_string()))?;
    let total = n
        .checked_mul(d)
        .ok_or_else(|| Error::Header("N*d overflows".into()))?;
    r.ensure(total.saturating_mul(8).saturating_add(n.saturating_mul(4)), "payload")?;
    let inputs = (0..total)
        .map(|_| r.f64("inputs"))
        .collect::<Result<Vec<_>>>()?;
    let labels = (0..n).map(|_| r.u32("labels")).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::Validation(format!(
            "{} trailing bytes after labels",
            r.remaining()
        )));
    }
    Dataset::new(inputs, labels, d, classes, DatasetMeta { rule, seed })
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_dataset(ds)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

/// CSV export with header `x1,...,xd,label`. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_dataset_csv(ds: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    let header: Vec<String> = (1..=ds.dim).map(|i| format!("x{i}")).collect();
    writeln!(out, "{},label", header.join(","))?;
    for (x, y) in ds.rows().zip(&ds.labels) {
        for v in x {
            write!(out, "{v},")?;
        }
        writeln!(out, "{y}")?;
    }
    Ok(())
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what}={v} does not fit in u32")))
}

/// Little-endian cursor over a byte slice.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn ensure(&self, len: usize, what: &str) -> Result<()> {
        if self.remaining() < len {
            return Err(Error::Truncated(format!(
                "{what}: need {len} bytes, {} left",
                self.remaining()
            )));
        }
        Ok(())
    }

    pub(crate) fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        self.ensure(len, what)?;
        let slice = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(slice)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_bits(self.u64(what)?))
    }
}
