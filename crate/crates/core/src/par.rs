//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature these run on the current rayon pool; without it
//! they fall back to plain iterators. Results are always collected in input
//! order so outputs do not depend on thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving order.
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Fallible variant of [`map`]; the first error in input order wins.
pub fn try_map<T, U, E, F>(items: &[T], f: F) -> Result<Vec<U>, E>
where
    T: Sync,
    U: Send,
    E: Send,
    F: Fn(&T) -> Result<U, E> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

/// Runs `f` with at most `threads` workers (0 = library default).
///
/// Without the `parallel` feature this simply calls `f`.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if threads == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Vec<usize> = (0..1000).collect();
        let out = with_threads(3, || map(&v, |x| x * 2));
        assert_eq!(out, v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(map_range(5, |i| i + 1), vec![1, 2, 3, 4, 5]);
    }

    #[test]
    fn try_map_reports_first_error() {
        let v = [1, 2, 3, 4];
        let r: Result<Vec<i32>, i32> = try_map(&v, |&x| if x >= 3 { Err(x) } else { Ok(x) });
        assert_eq!(r, Err(3));
    }
}
