use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::GlycemicClass;
use crate::error::{Error, Result};

fn class_name(class: usize, n_classes: usize) -> String {
    match GlycemicClass::from_index(class) {
        Some(c) if n_classes == 3 => c.name().to_string(),
        _ => format!("class {class}"),
    }
}

/// Generator for one epoch's draws; epochs use distinct streams of `seed`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Draws, without replacement, the size of the smallest class from every
/// class and returns the chosen example indices in shuffled order.
pub fn undersample_epoch(labels: &[usize], n_classes: usize, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::InvalidInput(format!("label {l} outside {n_classes} classes")));
        }
        by_class[l].push(i);
    }
    if let Some(empty) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass {
            class: class_name(empty, n_classes),
        });
    }
    let k = by_class.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = epoch_rng(seed, epoch);
    let mut chosen = Vec::with_capacity(k * n_classes);
    for members in &mut by_class {
        let (head, _) = members.partial_shuffle(&mut rng, k);
        chosen.extend_from_slice(head);
    }
    chosen.shuffle(&mut rng);
    Ok(chosen)
}

/// Share of class `class` examples drawn at least once over `epochs`
/// undersampled epochs.
pub fn coverage(labels: &[usize], n_classes: usize, class: usize, seed: u64, epochs: usize) -> Result<f64> {
    let mut seen = vec![false; labels.len()];
    for epoch in 0..epochs {
        for i in undersample_epoch(labels, n_classes, seed, epoch)? {
            seen[i] = true;
        }
    }
    let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
    if members.is_empty() {
        return Err(Error::EmptyClass {
            class: class_name(class, n_classes),
        });
    }
    Ok(members.iter().filter(|&&i| seen[i]).count() as f64 / members.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn labels(counts: &[usize]) -> Vec<usize> {
        counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn balances_to_smallest_class() {
        let l = labels(&[100, 50, 10]);
        let draw = undersample_epoch(&l, 3, 1, 0).unwrap();
        assert_eq!(draw.len(), 30);
        for c in 0..3 {
            assert_eq!(draw.iter().filter(|&&i| l[i] == c).count(), 10);
        }
        let distinct: HashSet<_> = draw.iter().collect();
        assert_eq!(distinct.len(), draw.len());
    }

    #[test]
    fn fresh_draw_each_epoch() {
        let l = labels(&[100, 50, 10]);
        assert_ne!(undersample_epoch(&l, 3, 1, 0).unwrap(), undersample_epoch(&l, 3, 1, 1).unwrap());
        assert_eq!(undersample_epoch(&l, 3, 1, 4).unwrap(), undersample_epoch(&l, 3, 1, 4).unwrap());
    }

    #[test]
    fn empty_class_is_named() {
        let err = undersample_epoch(&labels(&[0, 5, 5]), 3, 1, 0).unwrap_err();
        assert!(err.to_string().contains("hypo"), "{err}");
    }
}
