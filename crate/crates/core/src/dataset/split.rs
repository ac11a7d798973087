//! Per-task train/validation/test partitioning.

use super::synth::shuffle;
use super::{DataError, MultiTaskDataset, SplitSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splits every task into disjoint, exhaustive train/validation/test parts.
///
/// One ChaCha8 stream seeded from `spec.seed` shuffles each task's indices in
/// task order, so the partition is a pure function of (dataset, spec).
/// Fractional sizes are rounded to the nearest sample.
pub fn split(
    ds: &MultiTaskDataset,
    spec: &SplitSpec,
) -> Result<(MultiTaskDataset, MultiTaskDataset, MultiTaskDataset), DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut train_tasks = Vec::with_capacity(ds.num_tasks());
    let mut val_tasks = Vec::with_capacity(ds.num_tasks());
    let mut test_tasks = Vec::with_capacity(ds.num_tasks());

    for (t, task) in ds.tasks().iter().enumerate() {
        let m = task.num_samples();
        let train_n = match (spec.train_fraction, spec.train_count_per_task) {
            (Some(f), _) => (f * m as f64).round() as usize,
            (_, Some(c)) => c,
            _ => unreachable!("validated"),
        };
        let val_n = match spec.validation_fraction {
            Some(f) => (f * m as f64).round() as usize,
            None => m.saturating_sub(train_n) / 2,
        };
        let need = |n: usize| DataError::InsufficientSamples {
            task: t,
            available: m,
            needed: n,
        };
        if train_n == 0 || val_n == 0 {
            return Err(need(train_n.max(1) + val_n.max(1) + 1));
        }
        let test_n = m
            .checked_sub(train_n + val_n)
            .filter(|&n| n >= 1)
            .ok_or_else(|| need(train_n + val_n + 1))?;

        let mut indices: Vec<usize> = (0..m).collect();
        shuffle(&mut indices, &mut rng);
        train_tasks.push(task.select(&indices[..train_n]));
        val_tasks.push(task.select(&indices[train_n..train_n + val_n]));
        test_tasks.push(task.select(&indices[train_n + val_n..train_n + val_n + test_n]));
    }

    Ok((
        MultiTaskDataset::new(train_tasks)?,
        MultiTaskDataset::new(val_tasks)?,
        MultiTaskDataset::new(test_tasks)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_gen, SynthSpec};

    fn toy() -> MultiTaskDataset {
        let (ds, _) = synth_gen(&SynthSpec {
            d: 3,
            tasks: 4,
            m_per_task: 10,
            offset_sparsity: 0.5,
            noise_std: 0.1,
            seed: 5,
        })
        .unwrap();
        ds
    }

    #[test]
    fn sizes_follow_fractions() {
        let ds = toy();
        let (train, val, test) = split(&ds, &SplitSpec::by_fraction(0.2, Some(0.4), 1)).unwrap();
        for t in 0..ds.num_tasks() {
            assert_eq!(train.task(t).num_samples(), 2);
            assert_eq!(val.task(t).num_samples(), 4);
            assert_eq!(test.task(t).num_samples(), 4);
        }
    }

    #[test]
    fn default_validation_is_half_the_remainder() {
        let ds = toy();
        let (train, val, test) = split(&ds, &SplitSpec::by_fraction(0.2, None, 1)).unwrap();
        assert_eq!(train.task(0).num_samples(), 2);
        assert_eq!(val.task(0).num_samples(), 4);
        assert_eq!(test.task(0).num_samples(), 4);

        let (train, val, test) = split(&ds, &SplitSpec::by_count(5, None, 1)).unwrap();
        assert_eq!(train.task(0).num_samples(), 5);
        assert_eq!(val.task(0).num_samples(), 2);
        assert_eq!(test.task(0).num_samples(), 3);
    }

    #[test]
    fn same_seed_same_partition() {
        let ds = toy();
        let spec = SplitSpec::by_fraction(0.3, None, 77);
        let (a1, b1, c1) = split(&ds, &spec).unwrap();
        let (a2, b2, c2) = split(&ds, &spec).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        assert_eq!(c1, c2);
        let (a3, _, _) = split(&ds, &spec.with_seed(78)).unwrap();
        assert_ne!(a1, a3);
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive() {
        let ds = toy();
        let (train, val, test) = split(&ds, &SplitSpec::by_fraction(0.2, Some(0.3), 9)).unwrap();
        for t in 0..ds.num_tasks() {
            let mut seen: Vec<(Vec<u64>, u64)> = Vec::new();
            for part in [&train, &val, &test] {
                let task = part.task(t);
                for i in 0..task.num_samples() {
                    let row: Vec<u64> = (0..task.dim())
                        .map(|j| task.features()[(i, j)].to_bits())
                        .collect();
                    seen.push((row, task.targets()[i].to_bits()));
                }
            }
            let mut original: Vec<(Vec<u64>, u64)> = (0..ds.task(t).num_samples())
                .map(|i| {
                    let row: Vec<u64> = (0..ds.dim())
                        .map(|j| ds.task(t).features()[(i, j)].to_bits())
                        .collect();
                    (row, ds.task(t).targets()[i].to_bits())
                })
                .collect();
            seen.sort();
            original.sort();
            assert_eq!(seen, original);
        }
    }

    #[test]
    fn insufficient_samples_names_task() {
        let ds = toy(); // 10 samples per task
        let err = split(&ds, &SplitSpec::by_count(9, None, 0)).unwrap_err();
        match err {
            DataError::InsufficientSamples {
                task, available, ..
            } => {
                assert_eq!(task, 0);
                assert_eq!(available, 10);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
