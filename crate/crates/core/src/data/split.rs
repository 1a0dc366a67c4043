use super::{Dataset, Trial};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Stratified k-fold split: returns `(train, test)` for `fold_index`.
///
/// Each class's trials are shuffled with `seed` and dealt round-robin into
/// folds, so fold sizes per class differ by at most one. Both halves keep the
/// original dataset order.
pub fn stratified_kfold(
    dataset: &Dataset,
    fold_index: usize,
    num_folds: usize,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train, test) = kfold_indices(dataset, fold_index, num_folds, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

pub(crate) fn kfold_indices(
    dataset: &Dataset,
    fold_index: usize,
    num_folds: usize,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if num_folds < 2 {
        return Err(Error::arg(
            "num_folds",
            format!("must be at least 2, got {num_folds}"),
        ));
    }
    if fold_index >= num_folds {
        return Err(Error::arg(
            "fold_index",
            format!("{fold_index} out of range for {num_folds} folds"),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut in_test = vec![false; dataset.len()];
    for (class, mut members) in dataset.indices_by_class().into_iter().enumerate() {
        if members.len() < num_folds {
            return Err(Error::arg(
                "num_folds",
                format!(
                    "class {class} has {} trials, fewer than {num_folds} folds",
                    members.len()
                ),
            ));
        }
        rng.shuffle(&mut members);
        for (pos, idx) in members.into_iter().enumerate() {
            if pos % num_folds == fold_index {
                in_test[idx] = true;
            }
        }
    }
    Ok((0..dataset.len()).partition(|&i| !in_test[i]))
}

/// Stratified holdout: returns `(kept, held_out)` where `held_out` takes
/// `round(fraction · class_size)` trials of each class.
pub fn stratified_holdout(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (kept, out) = holdout_indices(dataset, fraction, seed)?;
    Ok((dataset.subset(&kept), dataset.subset(&out)))
}

/// Index form of [`stratified_holdout`].
pub fn holdout_indices(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::arg(
            "fraction",
            format!("must lie in [0, 1), got {fraction}"),
        ));
    }
    let mut rng = Rng::new(seed);
    let mut held = vec![false; dataset.len()];
    for mut members in dataset.indices_by_class() {
        rng.shuffle(&mut members);
        let take = (fraction * members.len() as f64).round() as usize;
        for &idx in members.iter().take(take.min(members.len())) {
            held[idx] = true;
        }
    }
    Ok((0..dataset.len()).partition(|&i| !held[i]))
}

/// Number of crops `crop` produces.
pub fn crop_count(time_points: usize, window: usize, stride: usize) -> usize {
    if window == 0 || stride == 0 || window > time_points {
        0
    } else {
        (time_points - window) / stride + 1
    }
}

/// All maximal windows `[k·stride, k·stride + window)` inside the trial, labels copied.
pub fn crop(trial: &Trial, window: usize, stride: usize) -> Result<Vec<Trial>> {
    let t = trial.time_points();
    if window == 0 || window > t {
        return Err(Error::arg(
            "window",
            format!("window {window} must lie in 1..={t}"),
        ));
    }
    if stride == 0 {
        return Err(Error::arg("stride", "must be at least 1"));
    }
    (0..crop_count(t, window, stride))
        .map(|k| {
            Ok(Trial::new(
                trial.signal.columns(k * stride, window)?,
                trial.label,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SynthSpec};
    use crate::numerics::Matrix;

    fn balanced(per_class: usize) -> Dataset {
        generate(&SynthSpec {
            trials_per_class: per_class,
            time_points: 8,
            channels: 2,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn two_folds_of_ten() {
        let d = balanced(10);
        for fold in 0..2 {
            let (train, test) = stratified_kfold(&d, fold, 2, 3).unwrap();
            assert_eq!(test.class_counts(), vec![5, 5]);
            assert_eq!(train.class_counts(), vec![5, 5]);
        }
    }

    #[test]
    fn folds_partition_dataset() {
        let d = balanced(13);
        let mut seen = vec![0usize; d.len()];
        for fold in 0..4 {
            let (train, test) = kfold_indices(&d, fold, 4, 77).unwrap();
            assert_eq!(train.len() + test.len(), d.len());
            for i in test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn same_seed_same_split() {
        let d = balanced(12);
        assert_eq!(
            kfold_indices(&d, 1, 3, 5).unwrap(),
            kfold_indices(&d, 1, 3, 5).unwrap()
        );
        assert_ne!(
            kfold_indices(&d, 1, 3, 5).unwrap(),
            kfold_indices(&d, 1, 3, 6).unwrap()
        );
    }

    #[test]
    fn too_few_trials_for_folds() {
        let d = balanced(3);
        assert!(matches!(
            stratified_kfold(&d, 0, 4, 0),
            Err(Error::Argument {
                field: "num_folds",
                ..
            })
        ));
        assert!(stratified_kfold(&d, 0, 1, 0).is_err());
    }

    #[test]
    fn holdout_is_stratified() {
        let d = balanced(20);
        let (kept, held) = stratified_holdout(&d, 0.2, 9).unwrap();
        assert_eq!(held.class_counts(), vec![4, 4]);
        assert_eq!(kept.class_counts(), vec![16, 16]);
    }

    fn ramp(t: usize) -> Trial {
        Trial::new(Matrix::from_fn(2, t, |c, i| (c * 1000 + i) as f64), 1)
    }

    #[test]
    fn crop_count_at_100ms_stride() {
        let crops = crop(&ramp(1000), 500, 25).unwrap();
        assert_eq!(crops.len(), 21);
        assert_eq!(crops[20].signal[(0, 0)], 500.0);
        assert_eq!(crops[20].signal[(1, 499)], 1999.0);
        assert!(crops
            .iter()
            .all(|c| c.label == 1 && c.signal.shape() == (2, 500)));
    }

    #[test]
    fn full_window_is_identity() {
        let trial = ramp(40);
        assert_eq!(crop(&trial, 40, 7).unwrap(), vec![trial]);
    }

    #[test]
    fn large_stride_single_crop() {
        assert_eq!(crop(&ramp(40), 30, 11).unwrap().len(), 1);
    }

    #[test]
    fn window_too_large() {
        assert!(matches!(
            crop(&ramp(10), 11, 1),
            Err(Error::Argument {
                field: "window",
                ..
            })
        ));
        assert!(crop(&ramp(10), 5, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn count_formula(t in 4usize..200, w in 1usize..200, s in 1usize..60) {
            proptest::prop_assume!(w <= t);
            let crops = crop(&ramp(t), w, s).unwrap();
            proptest::prop_assert_eq!(crops.len(), (t - w) / s + 1);
        }
    }
}
