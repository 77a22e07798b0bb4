use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexSet;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// On-disk interaction formats.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    /// One `user<TAB>item` pair per line.
    Tsv,
    /// One line per user: `user item1 item2 ... itemK`, single-space separated.
    AdjList,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(DatasetFormat::Tsv),
            "adjlist" => Ok(DatasetFormat::AdjList),
            other => Err(Error::InvalidArgument(format!(
                "unknown dataset format `{other}` (expected tsv or adjlist)"
            ))),
        }
    }
}

/// Deduplicated `(user, item)` pairs keyed by external id, in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RawInteractions {
    pairs: IndexSet<(String, String)>,
}

impl RawInteractions {
    pub fn from_pairs<I, U, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (U, T)>,
        U: Into<String>,
        T: Into<String>,
    {
        RawInteractions {
            pairs: pairs.into_iter().map(|(u, i)| (u.into(), i.into())).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> + '_ {
        self.pairs.iter().map(|(u, i)| (u.as_str(), i.as_str()))
    }

    pub fn num_users(&self) -> usize {
        self.pairs.iter().map(|(u, _)| u).collect::<IndexSet<_>>().len()
    }

    pub fn num_items(&self) -> usize {
        self.pairs.iter().map(|(_, i)| i).collect::<IndexSet<_>>().len()
    }
}

/// Parse interaction text. Blank lines are ignored.
pub fn parse_interactions(text: &str, format: DatasetFormat) -> Result<RawInteractions> {
    let mut pairs = IndexSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        match format {
            DatasetFormat::Tsv => {
                let mut fields = line.split('\t');
                let (Some(u), Some(i), None) = (fields.next(), fields.next(), fields.next()) else {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("expected `user<TAB>item`, got `{line}`"),
                    });
                };
                let (u, i) = (u.trim(), i.trim());
                if u.is_empty() || i.is_empty() {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "empty user or item field".into(),
                    });
                }
                pairs.insert((u.to_string(), i.to_string()));
            }
            DatasetFormat::AdjList => {
                let mut fields = line.trim().split(' ');
                let user = fields.next().unwrap_or_default();
                for item in fields {
                    if item.is_empty() {
                        return Err(Error::Parse {
                            line: line_no,
                            msg: "items must be separated by single spaces".into(),
                        });
                    }
                    pairs.insert((user.to_string(), item.to_string()));
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no interactions in input".into()));
    }
    Ok(RawInteractions { pairs })
}

/// Read and parse an interaction file.
pub fn ingest(path: impl AsRef<Path>, format: DatasetFormat) -> Result<RawInteractions> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_dedups_in_appearance_order() {
        let raw = parse_interactions("a\tx\nb\ty\na\tx\n", DatasetFormat::Tsv).unwrap();
        assert_eq!(raw.len(), 2);
        let pairs: Vec<_> = raw.iter().collect();
        assert_eq!(pairs, vec![("a", "x"), ("b", "y")]);
    }

    #[test]
    fn adjlist_expands() {
        let raw = parse_interactions("0 5 7 9\n", DatasetFormat::AdjList).unwrap();
        let pairs: Vec<_> = raw.iter().collect();
        assert_eq!(pairs, vec![("0", "5"), ("0", "7"), ("0", "9")]);
    }

    #[test]
    fn adjlist_user_without_items_is_allowed() {
        let raw = parse_interactions("3\n0 1\n", DatasetFormat::AdjList).unwrap();
        assert_eq!(raw.len(), 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_interactions("a\tb\nbroken\n", DatasetFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse_interactions("0 1  2\n", DatasetFormat::AdjList).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            parse_interactions("\n\n", DatasetFormat::Tsv),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = ingest("/definitely/not/here.tsv", DatasetFormat::Tsv).unwrap_err();
        assert_eq!(err.category(), "io");
    }
}
