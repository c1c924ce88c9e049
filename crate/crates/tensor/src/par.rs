//! Thin dispatch layer between the rayon-backed and sequential builds.
//! Every kernel that wants data parallelism goes through these helpers so
//! the `parallel` feature is the only place the decision is made.

/// Split `0..n` into roughly even ranges, one per worker.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_range<F>(n: usize, f: F)
where
    F: Fn(std::ops::Range<usize>) + Sync,
{
    if n == 0 {
        return;
    }
    let workers = rayon::current_num_threads().max(1).min(n);
    let step = n.div_ceil(workers);
    let ranges: Vec<_> = (0..workers)
        .map(|i| (i * step)..((i + 1) * step).min(n))
        .filter(|r| !r.is_empty())
        .collect();
    rayon::scope(|s| {
        for r in ranges {
            let f = &f;
            s.spawn(move |_| f(r));
        }
    });
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn for_each_range<F>(n: usize, f: F)
where
    F: Fn(std::ops::Range<usize>),
{
    if n > 0 {
        f(0..n);
    }
}
