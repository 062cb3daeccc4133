//! Bounded worker pool for fanning suite executions out across threads.

use std::sync::Mutex;

/// Run `work` over every item on up to `workers` threads, returning results
/// in input order. Items are pulled from a shared queue, so aggregation is
/// index-keyed and independent of completion order.
pub fn run_indexed<T, R, F>(items: Vec<T>, workers: usize, work: F) -> Vec<R>
where
    T: Send + Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let total = items.len();
    if total == 0 {
        return Vec::new();
    }
    let workers = workers.max(1).min(total);
    if workers == 1 {
        return items.iter().map(|item| work(item)).collect();
    }

    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..total).map(|_| None).collect());

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = {
                    let mut cursor = next.lock().expect("queue lock");
                    let index = *cursor;
                    if index >= total {
                        break;
                    }
                    *cursor += 1;
                    index
                };
                let result = work(&items[index]);
                results.lock().expect("results lock")[index] = Some(result);
            });
        }
    });

    results
        .into_inner()
        .expect("results lock")
        .into_iter()
        .map(|slot| slot.expect("every index produced a result"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_input_order() {
        let items: Vec<u32> = (0..100).collect();
        let results = run_indexed(items, 8, |&x| x * 2);
        assert_eq!(results, (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn handles_empty_and_single_worker() {
        let empty: Vec<u32> = vec![];
        assert!(run_indexed(empty, 4, |&x| x).is_empty());
        assert_eq!(run_indexed(vec![7], 1, |&x| x + 1), vec![8]);
    }
}
