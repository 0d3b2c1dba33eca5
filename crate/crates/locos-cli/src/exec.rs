//! Trial scheduling. Operations run their trials as independently
//! seeded units indexed 0..n, so spreading them over worker threads
//! cannot change any result: unit `i` always sees seed `base + i`, and
//! the reduction walks units in index order regardless of which thread
//! produced them.

use anyhow::Result;

pub fn run_indexed<T, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let jobs = jobs.clamp(1, n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let mut tagged: Vec<(usize, Result<T>)> = std::thread::scope(|scope| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|w| {
                scope.spawn(move || {
                    (w..n)
                        .step_by(jobs)
                        .map(|i| (i, f(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("trial worker panicked"))
            .collect()
    });
    tagged.sort_by_key(|(i, _)| *i);
    tagged.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_job_count() {
        let serial = run_indexed(17, 1, |i| Ok(i * i)).unwrap();
        let parallel = run_indexed(17, 4, |i| Ok(i * i)).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn first_failing_index_wins() {
        let err = run_indexed(10, 3, |i| {
            if i >= 4 {
                anyhow::bail!("unit {i}")
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert_eq!(err.to_string(), "unit 4");
    }
}
