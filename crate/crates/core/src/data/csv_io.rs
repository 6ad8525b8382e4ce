use std::collections::BTreeSet;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::Dataset;
use crate::{Error, Result};

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl std::str::FromStr for LabelColumn {
    type Err = std::convert::Infallible;

    /// `last`, a zero-based column number, or a header name.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(if s == "last" {
            LabelColumn::Last
        } else if let Ok(i) = s.parse() {
            LabelColumn::Index(i)
        } else {
            LabelColumn::Name(s.to_string())
        })
    }
}

impl std::fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelColumn::Name(n) => f.write_str(n),
            LabelColumn::Index(i) => write!(f, "{i}"),
            LabelColumn::Last => f.write_str("last"),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, label: &LabelColumn) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    load_csv_reader(file, &name, path, label)
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    s.strip_prefix('\'')
        .and_then(|t| t.strip_suffix('\''))
        .unwrap_or(s)
}

/// Orders label values numerically when they all parse as numbers.
fn sort_labels(values: BTreeSet<String>) -> Vec<String> {
    let mut v: Vec<String> = values.into_iter().collect();
    if v.iter().all(|s| s.parse::<f64>().is_ok()) {
        v.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        });
    }
    v
}

/// Parses a comma-separated table with a header row. `source` only labels
/// error messages.
pub fn load_csv_reader<R: Read>(
    reader: R,
    name: &str,
    source: &Path,
    label: &LabelColumn,
) -> Result<Dataset> {
    let parse_err = |line: u64, message: String| Error::Parse {
        path: PathBuf::from(source),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let width = headers.len();
    if width < 2 {
        return Err(parse_err(1, "need at least one feature and one label column".into()));
    }
    let label_idx = match label {
        LabelColumn::Last => width - 1,
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => return Err(Error::UnknownLabelColumn(i.to_string())),
        LabelColumn::Name(n) => headers
            .iter()
            .position(|h| unquote(h) == n)
            .ok_or_else(|| Error::UnknownLabelColumn(n.clone()))?,
    };

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != width {
            return Err(parse_err(
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let field = unquote(field);
            if field.is_empty() || field == "?" {
                return Err(parse_err(
                    line,
                    format!("missing value in column `{}`", &headers[j]),
                ));
            }
            if j == label_idx {
                raw_labels.push(field.to_string());
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(
                        line,
                        format!("non-numeric value `{field}` in column `{}`", &headers[j]),
                    )
                })?;
                values.push(v);
            }
        }
    }

    let n = raw_labels.len();
    let label_names = sort_labels(raw_labels.iter().cloned().collect());
    let labels = raw_labels
        .iter()
        .map(|l| label_names.binary_search_by(|probe| cmp_labels(probe, l)).unwrap())
        .collect();
    let features = Array2::from_shape_vec((n, width - 1), values)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let ds = Dataset::new(name, features, labels, label_names)?;
    if ds.len() < ds.class_count {
        return Err(parse_err(0, "fewer rows than classes".into()));
    }
    Ok(ds)
}

fn cmp_labels(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x.total_cmp(&y),
        _ => a.cmp(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn parse(text: &str, label: LabelColumn) -> Result<Dataset> {
        load_csv_reader(text.as_bytes(), "t", Path::new("t.csv"), &label)
    }

    #[test]
    fn parses_small_table() {
        let ds = parse("a,b,y\n1.5,2,no\n-3,4e1,yes\n0,0.25,no\n", LabelColumn::Name("y".into()))
            .unwrap();
        assert_eq!(ds.features, array![[1.5, 2.0], [-3.0, 40.0], [0.0, 0.25]]);
        assert_eq!(ds.labels, vec![0, 1, 0]);
        assert_eq!(ds.label_names, vec!["no", "yes"]);
        assert_eq!(ds.class_count, 2);
    }

    #[test]
    fn label_by_index_and_numeric_ordering() {
        let ds = parse("y,x\n10,1\n2,2\n10,3\n", LabelColumn::Index(0)).unwrap();
        assert_eq!(ds.label_names, vec!["2", "10"]);
        assert_eq!(ds.labels, vec![1, 0, 1]);
        assert_eq!(ds.features, array![[1.0], [2.0], [3.0]]);
    }

    #[test]
    fn quoted_nominal_labels() {
        let ds = parse("x,class\n1,'1'\n2,'0'\n", LabelColumn::Last).unwrap();
        assert_eq!(ds.label_names, vec!["0", "1"]);
        assert_eq!(ds.labels, vec![1, 0]);
    }

    #[test]
    fn missing_cell_names_the_line() {
        let err = parse("a,b,y\n1,2,0\n3,,1\n", LabelColumn::Last).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("missing"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_are_reported() {
        assert!(matches!(
            parse("a,b,y\n1,2,0\n3,1\n", LabelColumn::Last),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse("a,b,y\n1,x,0\n", LabelColumn::Last),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("a,b,y\n1,2,0\n", LabelColumn::Name("label".into())),
            Err(Error::UnknownLabelColumn(_))
        ));
    }

    #[test]
    fn label_column_from_str() {
        assert_eq!("last".parse::<LabelColumn>().unwrap(), LabelColumn::Last);
        assert_eq!("3".parse::<LabelColumn>().unwrap(), LabelColumn::Index(3));
        assert_eq!(
            "class".parse::<LabelColumn>().unwrap(),
            LabelColumn::Name("class".into())
        );
    }
}
