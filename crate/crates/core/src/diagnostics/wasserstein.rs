use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config, Error, Result};

pub const DEFAULT_PROJECTIONS: usize = 128;

/// Exact 1-D Wasserstein-1 between equal-size samples: mean absolute
/// difference of the order statistics.
pub fn wasserstein1_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return config(format!("sample sizes {} and {} must be equal and non-zero", x.len(), y.len()));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    Ok(a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64)
}

fn check_clouds(x: &Array2<f64>, y: &Array2<f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(Error::Shape(format!("dimension {} vs {}", x.ncols(), y.ncols())));
    }
    if x.nrows() != y.nrows() || x.nrows() == 0 {
        return config(format!("sample counts {} and {} must be equal and non-zero", x.nrows(), y.nrows()));
    }
    Ok(())
}

/// Seeded unit directions, one per row.
pub fn unit_directions(count: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Array2<f64> = Array2::from_shape_fn((count, dim), |_| StandardNormal.sample(&mut rng));
    for mut row in u.rows_mut() {
        let n = row.dot(&row).sqrt();
        row /= n;
    }
    u
}

/// Mean over random unit directions of the 1-D distance between the
/// projected clouds.
pub fn sliced_wasserstein(x: &Array2<f64>, y: &Array2<f64>, n_proj: usize, seed: u64) -> Result<f64> {
    check_clouds(x, y)?;
    if n_proj == 0 {
        return config("at least one projection is required");
    }
    let dirs = unit_directions(n_proj, x.ncols(), seed);
    let px = x.dot(&dirs.t());
    let py = y.dot(&dirs.t());
    let mut total = 0.0;
    for j in 0..n_proj {
        total += wasserstein1_1d(&px.column(j).to_vec(), &py.column(j).to_vec())?;
    }
    Ok(total / n_proj as f64)
}

/// Minimum-cost perfect matching of a square cost matrix (Hungarian method
/// with potentials). Returns `assign[row] = column`.
pub fn min_cost_assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols());
    // 1-based arrays; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

/// Optimal matching `(i, j)` pairs between two equal-size clouds under
/// Euclidean cost, with the exact empirical Wasserstein-1 it attains.
pub fn optimal_matching(x: &Array2<f64>, y: &Array2<f64>) -> Result<(Vec<(usize, usize)>, f64)> {
    check_clouds(x, y)?;
    let n = x.nrows();
    let cost = |i: usize, j: usize| {
        let d: Array1<f64> = &x.row(i) - &y.row(j);
        d.dot(&d).sqrt()
    };
    let pairs: Vec<(usize, usize)> = if x.ncols() == 1 {
        let order = |m: &Array2<f64>| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| m[[a, 0]].total_cmp(&m[[b, 0]]));
            idx
        };
        order(x).into_iter().zip(order(y)).collect()
    } else {
        let c = Array2::from_shape_fn((n, n), |(i, j)| cost(i, j));
        min_cost_assignment(&c).into_iter().enumerate().collect()
    };
    let total: f64 = pairs.iter().map(|&(i, j)| cost(i, j)).sum();
    Ok((pairs, total / n as f64))
}

/// Exact empirical Wasserstein-1 with Euclidean ground cost between two
/// equal-size clouds.
pub fn wasserstein1_exact(x: &Array2<f64>, y: &Array2<f64>) -> Result<f64> {
    if x.ncols() == 1 && y.ncols() == 1 {
        return wasserstein1_1d(&x.column(0).to_vec(), &y.column(0).to_vec());
    }
    Ok(optimal_matching(x, y)?.1)
}
