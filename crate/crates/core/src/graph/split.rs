use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

/// Random train/val/test assignment over labeled nodes only.
///
/// Counts are `round(ratio · m)` for train and val over the `m` labeled
/// nodes; test takes the remainder. Unlabeled nodes stay unassigned.
pub fn assign_splits(
    labels: &[Option<usize>],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<Option<Split>>> {
    let (train, val, test) = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r)) || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::Validation(format!(
            "split ratios {train}/{val}/{test} must be in [0,1] and sum to 1"
        )));
    }
    let mut labeled: Vec<usize> = (0..labels.len()).filter(|&v| labels[v].is_some()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);

    let m = labeled.len();
    let n_train = ((train * m as f64).round() as usize).min(m);
    let n_val = ((val * m as f64).round() as usize).min(m - n_train);

    let mut splits = vec![None; labels.len()];
    for (i, &v) in labeled.iter().enumerate() {
        splits[v] = Some(if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(splits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(splits: &[Option<Split>], s: Split) -> usize {
        splits.iter().filter(|x| **x == Some(s)).count()
    }

    #[test]
    fn seventy_ten_twenty_on_ten_nodes() {
        let labels = vec![Some(0); 10];
        let a = assign_splits(&labels, (0.7, 0.1, 0.2), 7).unwrap();
        assert_eq!(count(&a, Split::Train), 7);
        assert_eq!(count(&a, Split::Val), 1);
        assert_eq!(count(&a, Split::Test), 2);
        let b = assign_splits(&labels, (0.7, 0.1, 0.2), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unlabeled_nodes_stay_unassigned() {
        let labels = vec![Some(0), None, Some(1), None];
        let s = assign_splits(&labels, (0.5, 0.0, 0.5), 1).unwrap();
        assert_eq!(s[1], None);
        assert_eq!(s[3], None);
        assert!(s[0].is_some() && s[2].is_some());
    }

    #[test]
    fn bad_ratios_rejected() {
        assert!(assign_splits(&[Some(0)], (0.5, 0.5, 0.5), 0).is_err());
    }

    #[test]
    fn tag_round_trip() {
        for s in [Split::Train, Split::Val, Split::Test] {
            assert_eq!(s.to_string().parse::<Split>().unwrap(), s);
        }
    }
}
