//! Negative sampling.

use std::collections::{BTreeSet, HashSet};

use rand::seq::index;
use rand::Rng;

use super::TrainError;
use crate::ids::EntityId;

/// Draws `n` entities outside `answers`. Draws are without replacement
/// unless fewer than `n` non-answers exist.
pub fn negative_sample<R: Rng>(
    num_entities: usize,
    answers: &BTreeSet<EntityId>,
    n: usize,
    rng: &mut R,
) -> Result<Vec<EntityId>, TrainError> {
    if n == 0 {
        return Err(TrainError::InvalidConfig(vec!["negatives must be at least 1".into()]));
    }
    let in_range = answers.iter().filter(|e| e.index() < num_entities).count();
    let free = num_entities - in_range;
    if free == 0 {
        return Err(TrainError::DegenerateQuery { answers: in_range });
    }
    if 2 * n <= free {
        let mut chosen = HashSet::with_capacity(n);
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let e = EntityId(rng.gen_range(0..num_entities) as u32);
            if !answers.contains(&e) && chosen.insert(e) {
                out.push(e);
            }
        }
        return Ok(out);
    }
    let complement: Vec<EntityId> =
        (0..num_entities as u32).map(EntityId).filter(|e| !answers.contains(e)).collect();
    if free >= n {
        Ok(index::sample(rng, free, n).into_iter().map(|i| complement[i]).collect())
    } else {
        Ok((0..n).map(|_| complement[rng.gen_range(0..free)]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[u32]) -> BTreeSet<EntityId> {
        ids.iter().map(|i| EntityId(*i)).collect()
    }

    #[test]
    fn forced_complement() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let negs = negative_sample(5, &set(&[1]), 4, &mut rng).unwrap();
        assert_eq!(negs.iter().copied().collect::<BTreeSet<_>>(), set(&[0, 2, 3, 4]));
        assert_eq!(negs.len(), 4);
    }

    #[test]
    fn falls_back_to_replacement_when_short() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let negs = negative_sample(4, &set(&[0, 1]), 5, &mut rng).unwrap();
        assert_eq!(negs.len(), 5);
        assert!(negs.iter().all(|e| e.0 >= 2));
    }

    #[test]
    fn never_returns_an_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let answers = set(&[0, 3, 4, 9, 17, 18, 25]);
        let mut draws = 0;
        while draws < 100_000 {
            for n in [1usize, 5, 12, 23] {
                let negs = negative_sample(30, &answers, n, &mut rng).unwrap();
                assert!(negs.iter().all(|e| !answers.contains(e)));
                if n <= 23 {
                    let distinct: BTreeSet<_> = negs.iter().collect();
                    assert_eq!(distinct.len(), n);
                }
                draws += n;
            }
        }
    }

    #[test]
    fn degenerate_and_invalid_requests() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(negative_sample(3, &set(&[0, 1, 2]), 2, &mut rng), Err(TrainError::DegenerateQuery { .. })));
        assert!(matches!(negative_sample(3, &set(&[0]), 0, &mut rng), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn seeded_draws_repeat() {
        let a = negative_sample(1000, &set(&[5]), 256, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = negative_sample(1000, &set(&[5]), 256, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
