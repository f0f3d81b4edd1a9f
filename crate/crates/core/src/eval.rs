//! Scene top@k accuracy, attribute precision and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::model::MasrParams;

/// Cut-offs reported by [`evaluate`], restricted to `k <= K`.
pub const REPORTED_K: [usize; 3] = [1, 2, 5];

/// An attribute counts as predicted when its probability reaches this value.
pub const ATTRIBUTE_DECISION_THRESHOLD: f64 = 0.5;

/// Whether `truth` ranks among the `k` highest logits. Equal logits rank
/// the lower class index first.
pub fn in_top_k(logits: &[f64], truth: usize, k: usize) -> bool {
    let t = logits[truth];
    let ahead = logits
        .iter()
        .enumerate()
        .filter(|&(c, &v)| v > t || (v == t && c < truth))
        .count();
    ahead < k
}

pub fn topk_accuracy<L: AsRef<[f64]>>(logits: &[L], truths: &[usize], k: usize) -> Result<f64> {
    if logits.len() != truths.len() {
        return Err(Error::shape("topk_accuracy", logits.len(), truths.len()));
    }
    if logits.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let classes = logits[0].as_ref().len();
    if k == 0 || k > classes {
        return Err(Error::Config(format!(
            "k must lie in 1..={classes}, got {k}"
        )));
    }
    let mut hits = 0usize;
    for (row, &truth) in logits.iter().zip(truths) {
        let row = row.as_ref();
        if row.len() != classes {
            return Err(Error::shape("topk_accuracy", classes, row.len()));
        }
        if truth >= classes {
            return Err(Error::Index {
                what: "class",
                index: truth,
                len: classes,
            });
        }
        hits += usize::from(in_top_k(row, truth, k));
    }
    Ok(hits as f64 / logits.len() as f64)
}

/// Per-attribute `TP / (TP + FP)`; `None` where the attribute is never
/// predicted.
pub fn attribute_precision<P: AsRef<[f64]>, T: AsRef<[f64]>>(
    probabilities: &[P],
    truths: &[T],
) -> Result<Vec<Option<f64>>> {
    if probabilities.len() != truths.len() {
        return Err(Error::shape(
            "attribute_precision",
            probabilities.len(),
            truths.len(),
        ));
    }
    let m = probabilities.first().map_or(0, |p| p.as_ref().len());
    let mut tp = vec![0usize; m];
    let mut predicted = vec![0usize; m];
    for (p, t) in probabilities.iter().zip(truths) {
        let (p, t) = (p.as_ref(), t.as_ref());
        if p.len() != m || t.len() != m {
            return Err(Error::shape(
                "attribute_precision",
                m,
                format!("{}/{}", p.len(), t.len()),
            ));
        }
        for j in 0..m {
            if p[j] >= ATTRIBUTE_DECISION_THRESHOLD {
                predicted[j] += 1;
                if t[j] == 1.0 {
                    tp[j] += 1;
                }
            }
        }
    }
    Ok(tp
        .iter()
        .zip(&predicted)
        .map(|(&tp, &n)| (n > 0).then(|| tp as f64 / n as f64))
        .collect())
}

/// Mean of the defined precisions.
pub fn average_precision(precisions: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = precisions.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub topk: BTreeMap<usize, f64>,
    pub per_attribute: Vec<(String, Option<f64>)>,
    pub attribute_ap: Option<f64>,
    pub n_samples: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_owned(), |v| format!("{v}"))
}

impl EvalReport {
    /// `metric<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("metric\tvalue\n");
        let _ = writeln!(out, "n_samples\t{}", self.n_samples);
        for (k, acc) in &self.topk {
            let _ = writeln!(out, "top@{k}\t{acc}");
        }
        let _ = writeln!(out, "attribute_ap\t{}", fmt_opt(self.attribute_ap));
        for (label, p) in &self.per_attribute {
            let _ = writeln!(out, "precision/{label}\t{}", fmt_opt(*p));
        }
        out
    }

    pub fn render(&self) -> String {
        let mut out = format!("samples: {}\n\nscene accuracy\n", self.n_samples);
        for (k, acc) in &self.topk {
            let _ = writeln!(out, "  top@{k:<3} {:>6.2}%", acc * 100.0);
        }
        let width = self
            .per_attribute
            .iter()
            .map(|(l, _)| l.len())
            .max()
            .unwrap_or(0)
            .max(9);
        let _ = writeln!(out, "\n{:<width$}  precision", "attribute");
        for (label, p) in &self.per_attribute {
            let cell = p.map_or_else(|| "-".to_owned(), |p| format!("{:.2}", p * 100.0));
            let _ = writeln!(out, "{label:<width$}  {cell:>9}");
        }
        let ap = self
            .attribute_ap
            .map_or_else(|| "-".to_owned(), |p| format!("{:.2}", p * 100.0));
        let _ = writeln!(out, "{:<width$}  {ap:>9}", "AP");
        out
    }
}

/// Scores every sample of `data` with `params`.
pub fn evaluate(params: &MasrParams, data: &Dataset) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dims = params.dims();
    if dims.feature_dim != data.feature_dim
        || dims.attributes != data.num_attributes()
        || dims.categories != data.num_categories()
    {
        return Err(Error::shape(
            "evaluate",
            format!(
                "model d={} m={} K={}",
                dims.feature_dim, dims.attributes, dims.categories
            ),
            format!(
                "data d={} m={} K={}",
                data.feature_dim,
                data.num_attributes(),
                data.num_categories()
            ),
        ));
    }
    let traces = data
        .samples
        .par_iter()
        .map(|s| params.forward(&s.feature, &s.scores))
        .collect::<Result<Vec<_>>>()?;
    let logits: Vec<&[f64]> = traces.iter().map(|t| t.logits.as_slice()).collect();
    let truths: Vec<usize> = data.samples.iter().map(|s| s.category).collect();
    let mut topk = BTreeMap::new();
    for k in REPORTED_K.into_iter().filter(|&k| k <= dims.categories) {
        topk.insert(k, topk_accuracy(&logits, &truths, k)?);
    }
    let probs: Vec<&[f64]> = traces
        .iter()
        .map(|t| t.attribute_probs.as_slice())
        .collect();
    let targets: Vec<&[f64]> = data.samples.iter().map(|s| s.targets.as_slice()).collect();
    let precision = attribute_precision(&probs, &targets)?;
    Ok(EvalReport {
        topk,
        attribute_ap: average_precision(&precision),
        per_attribute: data
            .attribute_labels
            .iter()
            .cloned()
            .zip(precision)
            .collect(),
        n_samples: data.len(),
    })
}

/// One exported row: the feature followed by the re-weighted scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub image_id: String,
    pub category: String,
    pub values: Vec<f64>,
}

/// Writes `image_id, category, x..., v...` rows with a header.
pub fn export_embeddings_to<W: Write>(
    mut w: W,
    samples: &[Sample],
    categories: &[String],
    params: &MasrParams,
) -> Result<()> {
    let dims = params.dims();
    let mut out = String::from("image_id\tcategory");
    for i in 0..dims.feature_dim {
        let _ = write!(out, "\tx{i}");
    }
    for j in 0..dims.attributes {
        let _ = write!(out, "\tv{j}");
    }
    out.push('\n');
    for s in samples {
        let trace = params.forward(&s.feature, &s.scores)?;
        let category = categories.get(s.category).ok_or(Error::Index {
            what: "category",
            index: s.category,
            len: categories.len(),
        })?;
        out.push_str(&s.image_id);
        out.push('\t');
        out.push_str(category);
        for v in s.feature.iter().chain(trace.reweighted.iter()) {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io("<embeddings>", e))
}

pub fn export_embeddings(path: &Path, data: &Dataset, params: &MasrParams) -> Result<()> {
    let mut buf = Vec::new();
    export_embeddings_to(&mut buf, &data.samples, &data.categories, params)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings_from<R: BufRead>(reader: R, origin: &str) -> Result<Vec<Embedding>> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::parse(origin, 1, e))?,
        None => return Err(Error::parse(origin, 1, "missing header")),
    };
    let width = header.split('\t').count();
    if width < 3 || !header.starts_with("image_id\tcategory\t") {
        return Err(Error::parse(origin, 1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::parse(origin, lineno, e))?;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != width {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        let values = fields[2..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| Error::parse(origin, lineno, format!("bad value `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(Embedding {
            image_id: fields[0].into(),
            category: fields[1].into(),
            values,
        });
    }
    Ok(rows)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings_from(BufReader::new(file), &path.display().to_string())
}
