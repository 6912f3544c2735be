//! Data-parallel helpers. With the `parallel` feature the `Parallel` mode maps
//! over rayon's pool; without it every mode runs sequentially. Results always
//! come back in index order.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

pub fn map_indexed<U, F>(count: usize, mode: ExecMode, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..count).into_par_iter().map(f).collect()
        }
        _ => (0..count).map(f).collect(),
    }
}

pub fn map_slice<T, U, F>(items: &[T], mode: ExecMode, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    map_indexed(items.len(), mode, |i| f(&items[i]))
}

/// Runs `f` on a pool of `workers` threads (0 = rayon's default).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: usize, f: impl FnOnce() -> R + Send) -> R {
    f()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let a = map_indexed(100, ExecMode::Sequential, |i| i * i);
        let b = map_indexed(100, ExecMode::Parallel, |i| i * i);
        assert_eq!(a, b);
        assert_eq!(
            with_workers(2, || map_slice(&[1, 2, 3], ExecMode::Parallel, |x| x + 1)),
            vec![2, 3, 4]
        );
    }
}
