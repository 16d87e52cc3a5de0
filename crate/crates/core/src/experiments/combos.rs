//! Family combinations: lexicographic enumeration and seeded sampling.

use crate::error::{Error, Result};
use crate::seed::{fisher_yates, rng_from};

/// C(f, n), saturating at `u128::MAX`.
pub fn binomial(f: usize, n: usize) -> u128 {
    if n > f {
        return 0;
    }
    let k = n.min(f - n) as u128;
    let f = f as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (f - i) is divisible by (i + 1) because acc = C(f, i)
        acc = match acc.checked_mul(f - i) {
            Some(v) => v / (i + 1),
            None => return u128::MAX,
        };
    }
    acc
}

fn check_level(f: usize, n: usize) -> Result<()> {
    if n == 0 || n > f {
        return Err(Error::config(format!("level {n} is outside 1..={f}")));
    }
    Ok(())
}

/// Every n-subset of `0..f`, each ascending, in lexicographic order.
pub fn enumerate_combinations(f: usize, n: usize) -> Result<Vec<Vec<usize>>> {
    check_level(f, n)?;
    let total = usize::try_from(binomial(f, n))
        .map_err(|_| Error::config(format!("C({f},{n}) is too large to enumerate")))?;
    let mut out = Vec::with_capacity(total);
    let mut c: Vec<usize> = (0..n).collect();
    loop {
        out.push(c.clone());
        // rightmost position that can still advance
        let Some(i) = (0..n).rev().find(|&i| c[i] < f - n + i) else {
            break;
        };
        c[i] += 1;
        for j in i + 1..n {
            c[j] = c[j - 1] + 1;
        }
    }
    Ok(out)
}

/// min(max_models, C(f, n)).
pub fn models_to_run(f: usize, n: usize, max_models: usize) -> Result<usize> {
    check_level(f, n)?;
    Ok(binomial(f, n).min(max_models as u128) as usize)
}

/// All items if they fit, otherwise the first `max_models` after a seeded
/// Fisher–Yates shuffle. Never repeats an item.
pub fn sample_combinations<C: Clone>(all: &[C], max_models: usize, seed: u64) -> Result<Vec<C>> {
    if max_models == 0 {
        return Err(Error::config("max_models must be at least 1"));
    }
    if all.len() <= max_models {
        return Ok(all.to_vec());
    }
    let mut items = all.to_vec();
    fisher_yates(&mut items, &mut rng_from(seed));
    items.truncate(max_models);
    Ok(items)
}
