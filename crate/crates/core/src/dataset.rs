//! Training/evaluation samples: precomputed features joined with mined
//! attribute annotations.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::annotation::{binarize, AttributeAnnotation, AttributeVocabulary, ScoreThreshold};
use crate::error::{Error, Result};
use crate::model::ModelDims;
use crate::numerics::DenseVector;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image_id: String,
    pub feature: DenseVector,
    pub category: usize,
    /// Detector scores `a` after mining.
    pub scores: DenseVector,
    /// Binary attribute targets (`1` where the score exceeds the threshold).
    pub targets: DenseVector,
}

impl Sample {
    pub fn new(
        image_id: impl Into<String>,
        feature: DenseVector,
        category: usize,
        scores: DenseVector,
        xi: ScoreThreshold,
    ) -> Self {
        let targets = binarize(&scores, xi);
        Self {
            image_id: image_id.into(),
            feature,
            category,
            scores,
            targets,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub categories: Vec<String>,
    pub attribute_labels: Vec<String>,
    pub feature_dim: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attribute_labels.len()
    }

    pub fn dims(&self, cascade_depth: usize) -> ModelDims {
        ModelDims {
            feature_dim: self.feature_dim,
            attributes: self.num_attributes(),
            categories: self.num_categories(),
            cascade_depth,
        }
    }

    /// Joins feature rows with annotations by image id. Category indices
    /// follow the sorted category names of the whole annotation corpus, so
    /// datasets built from different feature files of one corpus agree.
    pub fn assemble(
        features: &[FeatureRow],
        corpus: &[AttributeAnnotation],
        vocab: &AttributeVocabulary,
        xi: ScoreThreshold,
    ) -> Result<Self> {
        let categories: Vec<String> = corpus
            .iter()
            .map(|a| a.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let category_index: HashMap<&str, usize> = categories
            .iter()
            .enumerate()
            .map(|(i, c)| (c.as_str(), i))
            .collect();
        let by_image: HashMap<&str, &AttributeAnnotation> =
            corpus.iter().map(|a| (a.image_id.as_str(), a)).collect();
        let feature_dim = features.first().map_or(0, |r| r.values.len());

        let samples = features
            .iter()
            .map(|row| {
                let ann = by_image.get(row.image_id.as_str()).ok_or_else(|| {
                    Error::Schema(format!(
                        "image `{}` has features but no annotation",
                        row.image_id
                    ))
                })?;
                if ann.category != row.category {
                    return Err(Error::Schema(format!(
                        "image `{}` is `{}` in the features but `{}` in the annotations",
                        row.image_id, row.category, ann.category
                    )));
                }
                if row.values.len() != feature_dim {
                    return Err(Error::Schema(format!(
                        "image `{}` has {} feature values, expected {feature_dim}",
                        row.image_id,
                        row.values.len()
                    )));
                }
                if ann.scores.dim() != vocab.len() {
                    return Err(Error::Schema(format!(
                        "image `{}` has {} scores for a vocabulary of {}",
                        row.image_id,
                        ann.scores.dim(),
                        vocab.len()
                    )));
                }
                Ok(Sample::new(
                    row.image_id.clone(),
                    DenseVector::new(row.values.clone())?,
                    category_index[ann.category.as_str()],
                    ann.scores.clone(),
                    xi,
                ))
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(Self {
            samples,
            categories,
            attribute_labels: vocab.attributes().iter().map(|a| a.label.clone()).collect(),
            feature_dim,
        })
    }
}

/// One line of a feature file.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub image_id: String,
    pub category: String,
    pub values: Vec<f64>,
}

/// Feature files are tab-separated with a header
/// `image_id<TAB>category<TAB>f0<TAB>f1...`.
pub fn write_features_to<W: Write>(mut w: W, rows: &[FeatureRow]) -> std::io::Result<()> {
    let d = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("image_id\tcategory");
    for i in 0..d {
        out.push_str(&format!("\tf{i}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&row.image_id);
        out.push('\t');
        out.push_str(&row.category);
        for v in &row.values {
            out.push_str(&format!("\t{v}"));
        }
        out.push('\n');
    }
    w.write_all(out.as_bytes())?;
    w.flush()
}

pub fn write_features(path: &Path, rows: &[FeatureRow]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features_to(std::io::BufWriter::new(file), rows).map_err(|e| Error::io(path, e))
}

pub fn read_features_from<R: BufRead>(reader: R, origin: &str) -> Result<Vec<FeatureRow>> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => line.map_err(|e| Error::parse(origin, 1, e))?,
        None => return Err(Error::parse(origin, 1, "missing header")),
    };
    let columns: Vec<&str> = header.split('\t').collect();
    if columns.len() < 3 || columns[0] != "image_id" || columns[1] != "category" {
        return Err(Error::parse(
            origin,
            1,
            "header must start with image_id<TAB>category and name at least one feature",
        ));
    }
    let d = columns.len() - 2;
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::parse(origin, lineno, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != d + 2 {
            return Err(Error::parse(
                origin,
                lineno,
                format!("expected {} fields, found {}", d + 2, fields.len()),
            ));
        }
        let values = fields[2..]
            .iter()
            .map(|f| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(
                    origin,
                    lineno,
                    format!("bad feature value `{f}`"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(FeatureRow {
            image_id: fields[0].to_owned(),
            category: fields[1].to_owned(),
            values,
        });
    }
    Ok(rows)
}

pub fn read_features(path: &Path) -> Result<Vec<FeatureRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features_from(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::Attribute;

    fn vocab() -> AttributeVocabulary {
        AttributeVocabulary::from_attributes(vec![
            Attribute {
                label: "sea".into(),
                origin: "stuff".into(),
            },
            Attribute {
                label: "person".into(),
                origin: "things".into(),
            },
        ])
        .unwrap()
    }

    fn ann(id: &str, cat: &str, s: [f64; 2]) -> AttributeAnnotation {
        AttributeAnnotation {
            image_id: id.into(),
            category: cat.into(),
            scores: DenseVector::new(s.to_vec()).unwrap(),
        }
    }

    fn row(id: &str, cat: &str, v: &[f64]) -> FeatureRow {
        FeatureRow {
            image_id: id.into(),
            category: cat.into(),
            values: v.to_vec(),
        }
    }

    #[test]
    fn assemble_joins_and_binarizes() {
        let corpus = [
            ann("a", "beach", [0.9, 0.0]),
            ann("b", "office", [0.0, 0.95]),
            ann("c", "beach", [0.85, 0.9]),
        ];
        let features = [
            row("b", "office", &[1.0, 2.0]),
            row("a", "beach", &[3.0, 4.0]),
        ];
        let ds = Dataset::assemble(&features, &corpus, &vocab(), ScoreThreshold::DEFAULT).unwrap();
        assert_eq!(ds.categories, vec!["beach", "office"]);
        assert_eq!(ds.samples[0].category, 1);
        assert_eq!(ds.samples[0].targets.as_slice(), &[0.0, 1.0]);
        assert_eq!(ds.samples[1].category, 0);
        assert_eq!(ds.feature_dim, 2);
    }

    #[test]
    fn assemble_rejects_mismatches() {
        let corpus = [ann("a", "beach", [0.9, 0.0])];
        let xi = ScoreThreshold::DEFAULT;
        assert!(Dataset::assemble(&[row("zz", "beach", &[1.0])], &corpus, &vocab(), xi).is_err());
        assert!(Dataset::assemble(&[row("a", "office", &[1.0])], &corpus, &vocab(), xi).is_err());
        let corpus2 = [ann("a", "beach", [0.9, 0.0]), ann("b", "beach", [0.9, 0.0])];
        assert!(Dataset::assemble(
            &[row("a", "beach", &[1.0]), row("b", "beach", &[1.0, 2.0])],
            &corpus2,
            &vocab(),
            xi
        )
        .is_err());
    }

    #[test]
    fn feature_file_round_trip() {
        let rows = vec![
            row("a", "x", &[0.1, -2.5e-7]),
            row("b", "y", &[1.0 / 3.0, 7.0]),
        ];
        let mut buf = Vec::new();
        write_features_to(&mut buf, &rows).unwrap();
        assert!(buf.starts_with(b"image_id\tcategory\tf0\tf1\n"));
        assert_eq!(read_features_from(buf.as_slice(), "f").unwrap(), rows);
    }

    #[test]
    fn feature_file_errors_carry_line_numbers() {
        let err =
            read_features_from("image_id\tcategory\tf0\na\tx\tnan\n".as_bytes(), "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = read_features_from("id\tcat\n".as_bytes(), "f").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
