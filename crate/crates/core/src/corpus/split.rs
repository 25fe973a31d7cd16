use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded 80/10/10 split at the conversation level: training gets
/// `floor(0.8 n)`, validation `floor(0.1 n)`, test the remainder.
pub fn split_dataset<T>(items: Vec<T>, seed: u64) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    let mut slots: Vec<Option<T>> = items.into_iter().map(Some).collect();
    let mut take = |range: std::ops::Range<usize>| -> Vec<T> {
        order[range].iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    let train = take(0..n_train);
    let val = take(n_train..n_train + n_val);
    let test = take(n_train + n_val..n);
    (train, val, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_items_split_eight_one_one() {
        let (a, b, c) = split_dataset((0..10).collect::<Vec<_>>(), 7);
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let mut all: Vec<_> = a.iter().chain(&b).chain(&c).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_split() {
        let items: Vec<_> = (0..57).collect();
        assert_eq!(split_dataset(items.clone(), 11), split_dataset(items.clone(), 11));
        assert_ne!(split_dataset(items.clone(), 11).0, split_dataset(items, 12).0);
    }
}
