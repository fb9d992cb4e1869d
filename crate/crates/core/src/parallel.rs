//! Data-parallel helpers. With the `parallel` feature, work is spread over a
//! rayon pool; without it every call runs sequentially.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    #[default]
    Sequential,
    /// Worker count; 0 means one per available core.
    Threads(usize),
}

impl Parallelism {
    /// `0` or `1` requests are mapped to the obvious variants.
    pub fn from_count(n: usize) -> Self {
        if n == 1 {
            Parallelism::Sequential
        } else {
            Parallelism::Threads(n)
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Parallelism::Sequential)
    }
}

/// Map `f` over `items`, returning results in input order.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if let Parallelism::Threads(n) = parallelism {
            if n == 0 {
                return items.par_iter().map(&f).collect();
            }
            match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => log::warn!("cannot start {n} worker threads ({e}); running sequentially"),
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallelism;
    items.iter().map(f).collect()
}
