use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Class-aware batches of positions into `labels`.
///
/// Each class is shuffled and cut into pairs (a trailing triple absorbs an odd
/// member); pairs from different classes are interleaved round-robin and packed
/// whole into batches, so every class present in a batch has at least two
/// members whenever its count allows.
pub fn make_batches(labels: &[usize], batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Config(format!(
            "batch_size must be at least 2, got {batch_size}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if labels.is_empty() {
        return Ok(Vec::new());
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_class: Vec<std::vec::IntoIter<Vec<usize>>> = (0..classes)
        .map(|c| {
            let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            idx.shuffle(&mut rng);
            let mut groups: Vec<Vec<usize>> = idx.chunks(2).map(<[usize]>::to_vec).collect();
            if groups.len() > 1 && groups.last().is_some_and(|g| g.len() == 1) {
                let lone = groups.pop().expect("non-empty");
                groups.last_mut().expect("non-empty").extend(lone);
            }
            groups.into_iter()
        })
        .collect();
    let mut groups = Vec::new();
    loop {
        let before = groups.len();
        for it in per_class.iter_mut() {
            groups.extend(it.next());
        }
        if groups.len() == before {
            break;
        }
    }
    if batch_size >= labels.len() {
        return Ok(vec![groups.concat()]);
    }
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for g in groups {
        if !current.is_empty() && current.len() + g.len() > batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(g);
    }
    if !current.is_empty() {
        // a lone trailing sample cannot form a contrastive batch
        match batches.last_mut() {
            Some(last) if current.len() == 1 => last.extend(current),
            _ => batches.push(current),
        }
    }
    Ok(batches)
}
