//! Row-parallel loops over particle arrays.
//!
//! With the `std` feature these run on the rayon pool; otherwise sequentially.
//! Each row is written by exactly one call, so the output never depends on the
//! thread count.

/// Below this many items a loop runs inline; handing it to the pool costs more
/// than it saves.
#[cfg(feature = "std")]
const PARALLEL_MIN: usize = 512;

/// Calls `body(i, state_i, row_i)` for every row of `rows` (width `width`).
pub(crate) fn zip_rows<S, F>(states: &mut [S], rows: &mut [f64], width: usize, body: F)
where
    S: Send,
    F: Fn(usize, &mut S, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(states.len() * width, rows.len());
    if width == 0 {
        return;
    }
    #[cfg(feature = "std")]
    if states.len() >= PARALLEL_MIN {
        use rayon::prelude::*;
        states
            .par_iter_mut()
            .zip(rows.par_chunks_mut(width))
            .enumerate()
            .for_each(|(i, (s, r))| body(i, s, r));
        return;
    }
    for (i, (s, r)) in states.iter_mut().zip(rows.chunks_mut(width)).enumerate() {
        body(i, s, r);
    }
}

/// Calls `body(workspace, i, row_i, scalar_i)` over `rows` (width `width`) and `scalars`.
pub(crate) fn map_rows<W, I, F>(rows: &mut [f64], width: usize, scalars: &mut [f64], init: I, body: F)
where
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize, &mut [f64], &mut f64) + Sync + Send,
{
    debug_assert_eq!(scalars.len() * width, rows.len());
    #[cfg(feature = "std")]
    if scalars.len() >= PARALLEL_MIN {
        use rayon::prelude::*;
        rows.par_chunks_mut(width.max(1))
            .zip(scalars.par_iter_mut())
            .enumerate()
            .for_each_init(&init, |w, (i, (r, s))| body(w, i, r, s));
        return;
    }
    {
        let mut w = init();
        for (i, (r, s)) in rows.chunks_mut(width.max(1)).zip(scalars.iter_mut()).enumerate() {
            body(&mut w, i, r, s);
        }
    }
}

/// Order-preserving parallel map over `0..n`. Each index is treated as a
/// sizeable unit of work.
pub(crate) fn map_indexed<T, W, I, F>(n: usize, init: I, f: F) -> alloc::vec::Vec<T>
where
    T: Send,
    I: Fn() -> W + Sync + Send,
    F: Fn(&mut W, usize) -> T + Sync + Send,
{
    #[cfg(feature = "std")]
    if n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map_init(&init, |w, i| f(w, i)).collect();
    }
    {
        let mut w = init();
        (0..n).map(|i| f(&mut w, i)).collect()
    }
}
