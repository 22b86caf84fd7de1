use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One epoch of mini-batches as example indices.
///
/// Without `limit`, a random permutation is cut into batches (the last one
/// may be short). With `limit`, each batch draws only from at most `limit`
/// randomly chosen classes; class pools are drained without replacement so
/// every example still appears exactly once per epoch.
pub fn sample_batches(
    labels: &[usize],
    classes: usize,
    batch_size: usize,
    limit: Option<usize>,
    rng: &mut Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if batch_size > labels.len() {
        return Err(Error::Config(format!(
            "batch size {} exceeds dataset size {}",
            batch_size,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {} out of range for {} classes", bad, classes)));
    }
    let limit = match limit {
        None => None,
        Some(0) => return Err(Error::Config("classes-per-batch limit must be positive".into())),
        Some(l) if l > classes => {
            return Err(Error::Config(format!("classes-per-batch limit {} exceeds class count {}", l, classes)));
        }
        Some(l) if l == classes => None,
        Some(l) => Some(l),
    };

    let Some(limit) = limit else {
        let perm = rng.permutation(labels.len());
        return Ok(perm.chunks(batch_size).map(<[usize]>::to_vec).collect());
    };

    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for p in &mut pools {
        rng.shuffle(p);
    }
    let mut remaining = labels.len();
    let mut batches = Vec::new();
    while remaining > 0 {
        let mut open: Vec<usize> = (0..classes).filter(|&c| !pools[c].is_empty()).collect();
        rng.shuffle(&mut open);
        open.truncate(limit);
        // Uniform draws without replacement from the union of the chosen
        // pools: pick a class in proportion to what it has left.
        let mut left: usize = open.iter().map(|&c| pools[c].len()).sum();
        let take = left.min(batch_size);
        let mut batch = Vec::with_capacity(take);
        for _ in 0..take {
            let mut r = rng.below(left);
            let c = *open
                .iter()
                .find(|&&c| {
                    if r < pools[c].len() {
                        true
                    } else {
                        r -= pools[c].len();
                        false
                    }
                })
                .expect("draw is below the pooled count");
            batch.push(pools[c].pop().expect("chosen pool is non-empty"));
            left -= 1;
        }
        remaining -= take;
        batches.push(batch);
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_chunking() {
        let labels = vec![0; 10];
        let b = sample_batches(&labels, 1, 4, None, &mut Rng::new(1)).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        let mut all: Vec<_> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn limited_batches() {
        let labels: Vec<usize> = (0..200).map(|i| i % 4).collect();
        let b = sample_batches(&labels, 4, 16, Some(2), &mut Rng::new(2)).unwrap();
        for batch in &b {
            let mut ls: Vec<_> = batch.iter().map(|&i| labels[i]).collect();
            ls.sort();
            ls.dedup();
            assert!(ls.len() <= 2);
        }
        let mut all = b.concat();
        all.sort();
        assert_eq!(all, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn batch_larger_than_dataset() {
        assert!(sample_batches(&[0, 1], 2, 3, None, &mut Rng::new(0)).is_err());
    }
}
