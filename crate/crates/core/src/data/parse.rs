use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One observed (user, item) pair. Rating values are discarded: every rating is a positive.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Interaction {
    pub user: String,
    pub item: String,
}

impl Interaction {
    pub fn new(user: impl Into<String>, item: impl Into<String>) -> Self {
        Self {
            user: user.into(),
            item: item.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatingFormat {
    /// `user::item::rating::timestamp`
    MovielensDat,
    /// `user<TAB>item<TAB>rating[<TAB>timestamp]`
    Tsv,
}

impl FromStr for RatingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens" | "movielens-dat" | "dat" => Ok(RatingFormat::MovielensDat),
            "tsv" => Ok(RatingFormat::Tsv),
            other => Err(Error::Config(format!(
                "unknown rating format `{other}` (expected movielens-dat or tsv)"
            ))),
        }
    }
}

impl std::fmt::Display for RatingFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RatingFormat::MovielensDat => "movielens-dat",
            RatingFormat::Tsv => "tsv",
        })
    }
}

/// Parses a rating stream into deduplicated interactions, in first-appearance order.
/// Blank lines are ignored.
pub fn parse_ratings<R: BufRead>(source: R, format: RatingFormat) -> Result<Vec<Interaction>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            RatingFormat::MovielensDat => line.split("::").collect(),
            RatingFormat::Tsv => line.split('\t').collect(),
        };
        let arity_ok = match format {
            RatingFormat::MovielensDat => fields.len() == 4,
            RatingFormat::Tsv => fields.len() == 3 || fields.len() == 4,
        };
        if !arity_ok {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {format} record, got {} field(s)", fields.len()),
            });
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "empty user or item key".into(),
            });
        }
        if fields[2].trim().parse::<f64>().is_err() {
            return Err(Error::Parse {
                line: line_no,
                message: format!("rating `{}` is not a number", fields[2]),
            });
        }
        let it = Interaction::new(user, item);
        if seen.insert(it.clone()) {
            out.push(it);
        }
    }
    Ok(out)
}

/// Drops users with fewer than `min_user` interactions, then items with fewer
/// than `min_item` among the survivors. One pass each, in that order.
pub fn filter_min_degree(interactions: &[Interaction], min_user: usize, min_item: usize) -> Vec<Interaction> {
    let mut user_deg: HashMap<&str, usize> = HashMap::new();
    for it in interactions {
        *user_deg.entry(&it.user).or_default() += 1;
    }
    let users_kept: Vec<&Interaction> = interactions
        .iter()
        .filter(|it| user_deg[it.user.as_str()] >= min_user)
        .collect();
    let mut item_deg: HashMap<&str, usize> = HashMap::new();
    for it in &users_kept {
        *item_deg.entry(&it.item).or_default() += 1;
    }
    users_kept
        .into_iter()
        .filter(|it| item_deg[it.item.as_str()] >= min_item)
        .cloned()
        .collect()
}

/// Keeps each distinct user independently with probability `fraction`.
pub fn subsample_users(interactions: &[Interaction], fraction: f64, seed: u64) -> Vec<Interaction> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep: HashMap<&str, bool> = HashMap::new();
    for it in interactions {
        keep.entry(&it.user).or_insert_with(|| rng.random::<f64>() < fraction);
    }
    interactions
        .iter()
        .filter(|it| keep[it.user.as_str()])
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ints(pairs: &[(&str, &str)]) -> Vec<Interaction> {
        pairs.iter().map(|(u, i)| Interaction::new(*u, *i)).collect()
    }

    #[test]
    fn movielens_line() {
        let got = parse_ratings("1::1193::5::978300760\n".as_bytes(), RatingFormat::MovielensDat).unwrap();
        assert_eq!(got, vec![Interaction::new("1", "1193")]);
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse_ratings("".as_bytes(), RatingFormat::MovielensDat).unwrap().is_empty());
        assert!(parse_ratings("".as_bytes(), RatingFormat::Tsv).unwrap().is_empty());
    }

    #[test]
    fn missing_fields_cite_line() {
        match parse_ratings("1::1193\n".as_bytes(), RatingFormat::MovielensDat) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
        match parse_ratings("a\tb\t1\nbad\n".as_bytes(), RatingFormat::Tsv) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicates_collapse_and_ratings_ignored() {
        let src = "u\ti\t1\nu\ti\t5\t100\nv\ti\t0.5\n";
        let got = parse_ratings(src.as_bytes(), RatingFormat::Tsv).unwrap();
        assert_eq!(got, ints(&[("u", "i"), ("v", "i")]));
    }

    #[test]
    fn two_pass_filter_hand_trace() {
        let input = ints(&[("u1", "i1"), ("u1", "i2"), ("u2", "i1")]);
        assert!(filter_min_degree(&input, 2, 2).is_empty());
        assert_eq!(filter_min_degree(&input, 1, 1), input);
    }

    #[test]
    fn filter_is_single_pass() {
        // u1 survives the user pass, loses i3 in the item pass, and ends below threshold.
        let input = ints(&[("u1", "i1"), ("u1", "i3"), ("u2", "i1"), ("u2", "i2"), ("u3", "i2"), ("u3", "i1")]);
        let out = filter_min_degree(&input, 2, 2);
        assert_eq!(out.iter().filter(|i| i.user == "u1").count(), 1);
    }
}
