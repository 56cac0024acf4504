use rand::seq::SliceRandom;

use super::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitMode {
    /// Honor the dataset's own train/test tags.
    Preset,
    /// Seeded shuffle, first `round(ratio * N)` shapes go to train.
    Random,
}

fn subset(ds: &Dataset, idx: &[usize]) -> Dataset {
    Dataset {
        shapes: idx.iter().map(|&i| ds.shapes[i].clone()).collect(),
        num_classes: ds.num_classes,
        category: ds.category.clone(),
        level: ds.level,
        tags: ds.tags.as_ref().map(|t| idx.iter().map(|&i| t[i]).collect()),
    }
}

/// Partitions a dataset into disjoint `(train, test)` halves covering every shape.
pub fn split_dataset(ds: &Dataset, mode: SplitMode, ratio: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let (train, test): (Vec<usize>, Vec<usize>) = match mode {
        SplitMode::Preset => {
            let tags = ds
                .tags
                .as_ref()
                .ok_or_else(|| Error::invalid("preset split requested but the dataset carries no split tags"))?;
            (0..ds.len()).partition(|&i| tags[i] == SplitTag::Train)
        }
        SplitMode::Random => random_partition(ds.len(), ratio, seed),
    };
    Ok((subset(ds, &train), subset(ds, &test)))
}

fn random_partition(n: usize, ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Purpose::Split, &[]));
    let cut = (ratio * n as f64).round() as usize;
    let test = idx.split_off(cut.min(n));
    (idx, test)
}

/// Tags matching what a random split with the same `ratio` and `seed` picks.
pub fn random_tags(n: usize, ratio: f64, seed: u64) -> Result<Vec<SplitTag>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut tags = vec![SplitTag::Test; n];
    for i in random_partition(n, ratio, seed).0 {
        tags[i] = SplitTag::Train;
    }
    Ok(tags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::LabeledPointCloud;

    fn dataset(n: usize) -> Dataset {
        let shapes = (0..n)
            .map(|i| LabeledPointCloud::new(vec![[i as f64, 0.0, 0.0]], vec![0], 1).unwrap())
            .collect();
        Dataset::new(shapes, 1).unwrap()
    }

    fn ids(ds: &Dataset) -> Vec<usize> {
        ds.shapes.iter().map(|s| s.points()[0][0] as usize).collect()
    }

    #[test]
    fn random_split_cardinality_and_disjointness() {
        let ds = dataset(10);
        let (train, test) = split_dataset(&ds, SplitMode::Random, 0.8, 1).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        let mut all: Vec<usize> = ids(&train).into_iter().chain(ids(&test)).collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (train2, test2) = split_dataset(&ds, SplitMode::Random, 0.8, 1).unwrap();
        assert_eq!(ids(&train), ids(&train2));
        assert_eq!(ids(&test), ids(&test2));
    }

    #[test]
    fn preset_tags_are_honored() {
        let tags = vec![SplitTag::Test, SplitTag::Train, SplitTag::Train, SplitTag::Test];
        let ds = dataset(4).with_tags(tags).unwrap();
        let (train, test) = split_dataset(&ds, SplitMode::Preset, 0.5, 0).unwrap();
        assert_eq!(ids(&train), vec![1, 2]);
        assert_eq!(ids(&test), vec![0, 3]);
    }

    #[test]
    fn preset_without_tags_and_bad_ratio() {
        let ds = dataset(4);
        assert!(split_dataset(&ds, SplitMode::Preset, 0.5, 0).is_err());
        assert!(split_dataset(&ds, SplitMode::Random, 1.0, 0).is_err());
        assert!(split_dataset(&ds, SplitMode::Random, 0.0, 0).is_err());
    }
}
