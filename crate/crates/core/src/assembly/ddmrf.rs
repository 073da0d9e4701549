//! Dual decomposition of a grid MRF into row and column chains.

/// Pairwise grid MRF over `nx × ny` nodes, node `j * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMrf {
    pub nx: usize,
    pub ny: usize,
    /// Per node, the cost of each label.
    pub unary: Vec<Vec<f64>>,
    /// Edge `(i, j)–(i+1, j)`, indexed `j * (nx − 1) + i`, row-major `[left][right]`.
    pub horizontal: Vec<Vec<f64>>,
    /// Edge `(i, j)–(i, j+1)`, indexed `j * nx + i`, row-major `[lower][upper]`.
    pub vertical: Vec<Vec<f64>>,
}

impl GridMrf {
    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_labels(&self, node: usize) -> usize {
        self.unary[node].len()
    }

    pub fn h_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx - 1) + i
    }

    pub fn v_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Σθ_i + Σθ_ij of a complete labeling.
    pub fn energy(&self, labels: &[usize]) -> f64 {
        let mut e: f64 = labels.iter().enumerate().map(|(n, &l)| self.unary[n][l]).sum();
        for j in 0..self.ny {
            for i in 0..self.nx {
                let n = j * self.nx + i;
                if i + 1 < self.nx {
                    e += self.horizontal[self.h_index(i, j)][labels[n] * self.n_labels(n + 1) + labels[n + 1]];
                }
                if j + 1 < self.ny {
                    e += self.vertical[self.v_index(i, j)][labels[n] * self.n_labels(n + self.nx) + labels[n + self.nx]];
                }
            }
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdParams {
    pub max_iters: usize,
    /// Relative gap at which the labeling counts as certified.
    pub gap_tol: f64,
    /// Step multiplier decay after an iteration that does not raise the dual.
    pub decay: f64,
}

impl Default for DdParams {
    fn default() -> Self {
        Self { max_iters: 5000, gap_tol: 1e-9, decay: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdIteration {
    /// Sum of slave minima at this iteration.
    pub dual: f64,
    pub best_dual: f64,
    /// Energy of the labeling extracted at this iteration.
    pub primal: f64,
    pub best_primal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labeling {
    pub labels: Vec<usize>,
    pub energy: f64,
    /// Best lower bound on the optimum.
    pub dual: f64,
    pub iterations: usize,
    /// The gap closed, so `labels` is a global optimum.
    pub converged: bool,
    pub history: Vec<DdIteration>,
}

/// Exact min-sum on a chain: returns the minimum, an optimal labeling and the
/// min-marginals of every position.
pub fn solve_chain(unary: &[Vec<f64>], pair: &[&[f64]]) -> (f64, Vec<usize>, Vec<Vec<f64>>) {
    let len = unary.len();
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(len);
    let mut arg: Vec<Vec<usize>> = Vec::with_capacity(len);
    fwd.push(unary[0].clone());
    arg.push(vec![0; unary[0].len()]);
    for k in 1..len {
        let (prev, nl) = (&fwd[k - 1], unary[k].len());
        let mut f = vec![0.0; nl];
        let mut a = vec![0; nl];
        for l in 0..nl {
            let (mut best, mut bi) = (f64::INFINITY, 0);
            for (lp, &fp) in prev.iter().enumerate() {
                let v = fp + pair[k - 1][lp * nl + l];
                if v < best {
                    best = v;
                    bi = lp;
                }
            }
            f[l] = best + unary[k][l];
            a[l] = bi;
        }
        fwd.push(f);
        arg.push(a);
    }
    let mut bwd: Vec<Vec<f64>> = vec![Vec::new(); len];
    bwd[len - 1] = vec![0.0; unary[len - 1].len()];
    for k in (0..len - 1).rev() {
        let nl = unary[k + 1].len();
        bwd[k] = (0..unary[k].len())
            .map(|l| (0..nl).map(|ln| pair[k][l * nl + ln] + unary[k + 1][ln] + bwd[k + 1][ln]).fold(f64::INFINITY, f64::min))
            .collect();
    }
    let last = &fwd[len - 1];
    let mut l = (0..last.len()).min_by(|&a, &b| last[a].total_cmp(&last[b])).expect("labels");
    let min = last[l];
    let mut labels = vec![0; len];
    for k in (0..len).rev() {
        labels[k] = l;
        l = arg[k][l];
    }
    let marginals = (0..len).map(|k| fwd[k].iter().zip(&bwd[k]).map(|(f, b)| f + b).collect()).collect();
    (min, labels, marginals)
}

struct SlaveResult {
    value: f64,
    labels: Vec<usize>,
    marginals: Vec<Vec<f64>>,
}

/// Solves all row chains (`rows = true`) or all column chains, with the
/// per-node potentials `pot` in place of the unary terms.
fn solve_slaves(mrf: &GridMrf, pot: &[Vec<f64>], rows: bool) -> SlaveResult {
    let n = mrf.n_nodes();
    let mut out = SlaveResult { value: 0.0, labels: vec![0; n], marginals: vec![Vec::new(); n] };
    let (outer, inner) = if rows { (mrf.ny, mrf.nx) } else { (mrf.nx, mrf.ny) };
    for o in 0..outer {
        let nodes: Vec<usize> = (0..inner).map(|k| if rows { o * mrf.nx + k } else { k * mrf.nx + o }).collect();
        let unary: Vec<Vec<f64>> = nodes.iter().map(|&v| pot[v].clone()).collect();
        let pair: Vec<&[f64]> = (0..inner - 1)
            .map(|k| {
                if rows {
                    mrf.horizontal[mrf.h_index(k, o)].as_slice()
                } else {
                    mrf.vertical[mrf.v_index(o, k)].as_slice()
                }
            })
            .collect();
        let (v, labels, marg) = solve_chain(&unary, &pair);
        out.value += v;
        for (k, &node) in nodes.iter().enumerate() {
            out.labels[node] = labels[k];
            out.marginals[node] = marg[k].clone();
        }
    }
    out
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].total_cmp(&v[b])).expect("non-empty")
}

/// Projected subgradient ascent on the row/column decomposition.
///
/// Each node's unary term is split equally between its row and column chain;
/// `λ` shifts cost from one copy to the other. Primal labelings come from
/// summed min-marginals and from each slave family's own solution, and the
/// best one is kept.
pub fn dd_mrf_solve(mrf: &GridMrf, params: &DdParams) -> Labeling {
    let n = mrf.n_nodes();
    let mut lambda: Vec<Vec<f64>> = (0..n).map(|v| vec![0.0; mrf.n_labels(v)]).collect();
    let mut best = (f64::INFINITY, Vec::new());
    let mut best_dual = f64::NEG_INFINITY;
    let mut alpha = 1.0;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..params.max_iters.max(1) {
        iterations += 1;
        let row_pot: Vec<Vec<f64>> =
            (0..n).map(|v| mrf.unary[v].iter().zip(&lambda[v]).map(|(u, l)| 0.5 * u + l).collect()).collect();
        let col_pot: Vec<Vec<f64>> =
            (0..n).map(|v| mrf.unary[v].iter().zip(&lambda[v]).map(|(u, l)| 0.5 * u - l).collect()).collect();
        let rows = solve_slaves(mrf, &row_pot, true);
        let cols = solve_slaves(mrf, &col_pot, false);
        let dual = rows.value + cols.value;
        let improved = dual > best_dual;
        best_dual = best_dual.max(dual);

        let voted: Vec<usize> = (0..n)
            .map(|v| argmin(&rows.marginals[v].iter().zip(&cols.marginals[v]).map(|(a, b)| a + b).collect::<Vec<_>>()))
            .collect();
        let mut primal = f64::INFINITY;
        for cand in [voted, rows.labels.clone(), cols.labels.clone()] {
            let e = mrf.energy(&cand);
            primal = primal.min(e);
            if e < best.0 {
                best = (e, cand);
            }
        }
        history.push(DdIteration { dual, best_dual, primal, best_primal: best.0 });
        debug_assert!(best_dual <= best.0 + 1e-9 * (1.0 + best.0.abs()), "weak duality violated");

        if best.0 - best_dual <= params.gap_tol * (1.0 + best_dual.abs()) {
            converged = true;
            break;
        }
        let disagreements: usize = (0..n).filter(|&v| rows.labels[v] != cols.labels[v]).count();
        if disagreements == 0 {
            // slaves agree, so their common labeling attains the dual bound
            converged = true;
            break;
        }
        if !improved {
            alpha *= params.decay;
        }
        let step = alpha * (best.0 - dual).max(0.0) / (2 * disagreements) as f64;
        for v in 0..n {
            let (r, c) = (rows.labels[v], cols.labels[v]);
            if r != c {
                // raise the row copy of its chosen label, lower the column copy's
                lambda[v][r] += step;
                lambda[v][c] -= step;
            }
        }
    }
    Labeling { labels: best.1, energy: best.0, dual: best_dual, iterations, converged, history }
}

/// Minimum energy over all labelings, by enumeration.
pub fn brute_force(mrf: &GridMrf) -> (f64, Vec<usize>) {
    let n = mrf.n_nodes();
    let mut labels = vec![0; n];
    let mut best = (mrf.energy(&labels), labels.clone());
    loop {
        let mut k = 0;
        while k < n {
            labels[k] += 1;
            if labels[k] < mrf.n_labels(k) {
                break;
            }
            labels[k] = 0;
            k += 1;
        }
        if k == n {
            return best;
        }
        let e = mrf.energy(&labels);
        if e < best.0 {
            best = (e, labels.clone());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_mrf(nx: usize, ny: usize, labels: usize, rng: &mut ChaCha8Rng) -> GridMrf {
        let n = nx * ny;
        let unary = (0..n).map(|_| (0..labels).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let table = |rng: &mut ChaCha8Rng| (0..labels * labels).map(|_| rng.random_range(0.0..1.0)).collect();
        let horizontal = (0..(nx - 1) * ny).map(|_| table(rng)).collect();
        let vertical = (0..nx * (ny - 1)).map(|_| table(rng)).collect();
        GridMrf { nx, ny, unary, horizontal, vertical }
    }

    #[test]
    fn chain_solver_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..30 {
            let len = rng.random_range(1..5);
            let mrf = random_mrf(len, 1, rng.random_range(1..4), &mut rng);
            let pair: Vec<&[f64]> = mrf.horizontal.iter().map(|t| t.as_slice()).collect();
            let (min, labels, marg) = solve_chain(&mrf.unary, &pair);
            let (opt, _) = brute_force(&mrf);
            assert!((min - opt).abs() < 1e-12);
            assert!((mrf.energy(&labels) - opt).abs() < 1e-12);
            for m in &marg {
                assert!((m.iter().cloned().fold(f64::INFINITY, f64::min) - opt).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_node_is_its_argmin() {
        let mrf = GridMrf { nx: 1, ny: 1, unary: vec![vec![0.4, 0.1, 0.3]], horizontal: vec![], vertical: vec![] };
        let l = dd_mrf_solve(&mrf, &DdParams::default());
        assert_eq!(l.labels, vec![1]);
        assert_eq!(l.energy, 0.1);
        assert_eq!(l.dual, 0.1);
        assert!(l.converged);
    }

    #[test]
    fn energy_matches_naive_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mrf = random_mrf(3, 2, 3, &mut rng);
        let labels = vec![0, 2, 1, 1, 0, 2];
        let mut e = 0.0;
        for (v, &l) in labels.iter().enumerate() {
            e += mrf.unary[v][l];
        }
        // horizontal pairs (0,1) (1,2) (3,4) (4,5); vertical pairs (0,3) (1,4) (2,5)
        for (k, (a, b)) in [(0, 1), (1, 2), (3, 4), (4, 5)].into_iter().enumerate() {
            e += mrf.horizontal[k][labels[a] * 3 + labels[b]];
        }
        for (k, (a, b)) in [(0, 3), (1, 4), (2, 5)].into_iter().enumerate() {
            e += mrf.vertical[k][labels[a] * 3 + labels[b]];
        }
        assert!((mrf.energy(&labels) - e).abs() < 1e-14);
    }

    #[test]
    fn bounds_bracket_the_optimum_on_small_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut exact, mut total) = (0, 0);
        for inst in 0..20 {
            let (nx, ny) = if inst % 2 == 0 { (2, 2) } else { (3, 2) };
            let mrf = random_mrf(nx, ny, 2 + inst % 2, &mut rng);
            let (opt, _) = brute_force(&mrf);
            let l = dd_mrf_solve(&mrf, &DdParams::default());
            for h in &l.history {
                assert!(h.best_dual <= opt + 1e-9);
                assert!(opt <= h.primal + 1e-12);
            }
            assert!(l.history.windows(2).all(|w| w[1].best_dual >= w[0].best_dual));
            assert!(l.energy <= 1.05 * opt + 1e-12);
            if l.converged {
                assert!((l.energy - opt).abs() < 1e-9 * (1.0 + opt.abs()));
            }
            total += 1;
            if (l.energy - opt).abs() < 1e-12 {
                exact += 1;
            }
        }
        assert!(exact * 5 >= total * 4, "{exact}/{total} exact");
    }

    #[test]
    fn tree_structured_grids_converge() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let mrf = random_mrf(4, 1, 3, &mut rng);
            let l = dd_mrf_solve(&mrf, &DdParams::default());
            assert!(l.converged);
            assert!((l.energy - brute_force(&mrf).0).abs() < 1e-9);
        }
    }
}
