//! Method of moving asymptotes for `min f0(x)` subject to `f_i(x) ≤ 0`,
//! `x_min ≤ x ≤ x_max`, with the subproblem solved by a primal-dual
//! interior-point iteration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MmaError {
    #[error("MMA subproblem produced a non-finite point")]
    NonFinite,
    #[error("MMA subproblem linear system is singular")]
    Singular,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaParams {
    /// Initial asymptote distance as a fraction of the variable range.
    pub asy_init: f64,
    pub asy_shrink: f64,
    pub asy_expand: f64,
    /// Closest the asymptotes may approach the current point, as a fraction of
    /// the variable range.
    pub asy_min: f64,
    /// Largest step per iteration as a fraction of the variable range.
    pub move_limit: f64,
    pub a0: f64,
    /// Constraint weights `a_i`, penalties `c_i` and `d_i` shared by every constraint.
    pub a: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        Self { asy_init: 0.5, asy_shrink: 0.7, asy_expand: 1.2, asy_min: 1e-4, move_limit: 0.2, a0: 1.0, a: 0.0, c: 1000.0, d: 1.0 }
    }
}

/// Optimizer state carried between iterations.
#[derive(Debug, Clone)]
pub struct Mma {
    n: usize,
    m: usize,
    params: MmaParams,
    iter: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
}

impl Mma {
    pub fn new(n: usize, m: usize, params: MmaParams) -> Self {
        Self { n, m, params, iter: 0, low: vec![0.0; n], upp: vec![0.0; n], xold1: vec![], xold2: vec![] }
    }

    /// Forget the asymptote history; the next update re-initialises them.
    pub fn reset_asymptotes(&mut self) {
        self.iter = 0;
        self.xold1.clear();
        self.xold2.clear();
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// One MMA step from `x`. `dfdx` is row-major `m × n`.
    #[allow(clippy::too_many_arguments)]
    pub fn update(
        &mut self,
        x: &[f64],
        df0dx: &[f64],
        fval: &[f64],
        dfdx: &[f64],
        xmin: &[f64],
        xmax: &[f64],
    ) -> Result<Vec<f64>, MmaError> {
        let (n, m) = (self.n, self.m);
        if x.len() != n || df0dx.len() != n || fval.len() != m || dfdx.len() != m * n || xmin.len() != n || xmax.len() != n
        {
            return Err(MmaError::Dimension(format!("n = {n}, m = {m}")));
        }
        let p = self.params;
        let raa0 = 1e-5;
        let albefa = 0.1;
        let iter = self.iter + 1;

        let range: Vec<f64> = (0..n).map(|j| xmax[j] - xmin[j]).collect();
        if iter <= 2 || self.xold2.len() != n {
            for j in 0..n {
                self.low[j] = x[j] - p.asy_init * range[j];
                self.upp[j] = x[j] + p.asy_init * range[j];
            }
        } else {
            for j in 0..n {
                let zzz = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if zzz < 0.0 {
                    p.asy_shrink
                } else if zzz > 0.0 {
                    p.asy_expand
                } else {
                    1.0
                };
                let low = x[j] - factor * (self.xold1[j] - self.low[j]);
                let upp = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = low.clamp(x[j] - 10.0 * range[j], x[j] - p.asy_min * range[j]);
                self.upp[j] = upp.clamp(x[j] + p.asy_min * range[j], x[j] + 10.0 * range[j]);
            }
        }

        let mut alfa = vec![0.0; n];
        let mut beta = vec![0.0; n];
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut pm = vec![0.0; m * n];
        let mut qm = vec![0.0; m * n];
        let mut b = vec![0.0; m];
        for j in 0..n {
            alfa[j] = (self.low[j] + albefa * (x[j] - self.low[j])).max(x[j] - p.move_limit * range[j]).max(xmin[j]);
            beta[j] = (self.upp[j] - albefa * (self.upp[j] - x[j])).min(x[j] + p.move_limit * range[j]).min(xmax[j]);
            let xmamiinv = 1.0 / range[j].max(1e-5);
            let ux1 = self.upp[j] - x[j];
            let xl1 = x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            let pos = df0dx[j].max(0.0);
            let neg = (-df0dx[j]).max(0.0);
            let pq = 0.001 * (pos + neg) + raa0 * xmamiinv;
            p0[j] = (pos + pq) * ux2;
            q0[j] = (neg + pq) * xl2;
            for i in 0..m {
                let g = dfdx[i * n + j];
                let pos = g.max(0.0);
                let neg = (-g).max(0.0);
                let pq = 0.001 * (pos + neg) + raa0 * xmamiinv;
                pm[i * n + j] = (pos + pq) * ux2;
                qm[i * n + j] = (neg + pq) * xl2;
                b[i] += pm[i * n + j] / ux1 + qm[i * n + j] / xl1;
            }
        }
        for i in 0..m {
            b[i] -= fval[i];
        }

        let sub = Subproblem {
            n,
            m,
            low: &self.low,
            upp: &self.upp,
            alfa: &alfa,
            beta: &beta,
            p0: &p0,
            q0: &q0,
            pm: &pm,
            qm: &qm,
            b: &b,
            a0: p.a0,
            a: vec![p.a; m],
            c: vec![p.c; m],
            d: vec![p.d; m],
        };
        let xnew = sub.solve()?;
        if xnew.iter().any(|v| !v.is_finite()) {
            return Err(MmaError::NonFinite);
        }
        self.xold2 = std::mem::replace(&mut self.xold1, x.to_vec());
        if self.xold2.is_empty() {
            self.xold2 = x.to_vec();
        }
        self.iter = iter;
        Ok(xnew)
    }
}

struct Subproblem<'a> {
    n: usize,
    m: usize,
    low: &'a [f64],
    upp: &'a [f64],
    alfa: &'a [f64],
    beta: &'a [f64],
    p0: &'a [f64],
    q0: &'a [f64],
    pm: &'a [f64],
    qm: &'a [f64],
    b: &'a [f64],
    a0: f64,
    a: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
}

#[derive(Clone)]
struct Point {
    x: Vec<f64>,
    y: Vec<f64>,
    z: f64,
    lam: Vec<f64>,
    xsi: Vec<f64>,
    eta: Vec<f64>,
    mu: Vec<f64>,
    zet: f64,
    s: Vec<f64>,
}

impl Subproblem<'_> {
    fn plam_qlam(&self, lam: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, m) = (self.n, self.m);
        let mut plam = self.p0.to_vec();
        let mut qlam = self.q0.to_vec();
        for i in 0..m {
            for j in 0..n {
                plam[j] += self.pm[i * n + j] * lam[i];
                qlam[j] += self.qm[i * n + j] * lam[i];
            }
        }
        (plam, qlam)
    }

    fn gvec(&self, x: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        (0..m)
            .map(|i| {
                (0..n).map(|j| self.pm[i * n + j] / (self.upp[j] - x[j]) + self.qm[i * n + j] / (x[j] - self.low[j])).sum()
            })
            .collect()
    }

    fn residual(&self, pt: &Point, epsi: f64) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.plam_qlam(&pt.lam);
        let gvec = self.gvec(&pt.x);
        let mut r = Vec::with_capacity(3 * n + 4 * m + 2);
        for j in 0..n {
            let ux1 = self.upp[j] - pt.x[j];
            let xl1 = pt.x[j] - self.low[j];
            r.push(plam[j] / (ux1 * ux1) - qlam[j] / (xl1 * xl1) - pt.xsi[j] + pt.eta[j]);
        }
        for i in 0..m {
            r.push(self.c[i] + self.d[i] * pt.y[i] - pt.mu[i] - pt.lam[i]);
        }
        r.push(self.a0 - pt.zet - (0..m).map(|i| self.a[i] * pt.lam[i]).sum::<f64>());
        for i in 0..m {
            r.push(gvec[i] - self.a[i] * pt.z - pt.y[i] + pt.s[i] - self.b[i]);
        }
        for j in 0..n {
            r.push(pt.xsi[j] * (pt.x[j] - self.alfa[j]) - epsi);
        }
        for j in 0..n {
            r.push(pt.eta[j] * (self.beta[j] - pt.x[j]) - epsi);
        }
        for i in 0..m {
            r.push(pt.mu[i] * pt.y[i] - epsi);
        }
        r.push(pt.zet * pt.z - epsi);
        for i in 0..m {
            r.push(pt.lam[i] * pt.s[i] - epsi);
        }
        r
    }

    fn solve(&self) -> Result<Vec<f64>, MmaError> {
        let (n, m) = (self.n, self.m);
        let epsimin = 1e-7;
        let mut epsi = 1.0;
        let x: Vec<f64> = (0..n).map(|j| 0.5 * (self.alfa[j] + self.beta[j])).collect();
        let mut pt = Point {
            xsi: (0..n).map(|j| (1.0 / (x[j] - self.alfa[j])).max(1.0)).collect(),
            eta: (0..n).map(|j| (1.0 / (self.beta[j] - x[j])).max(1.0)).collect(),
            x,
            y: vec![1.0; m],
            z: 1.0,
            lam: vec![1.0; m],
            mu: (0..m).map(|i| (0.5 * self.c[i]).max(1.0)).collect(),
            zet: 1.0,
            s: vec![1.0; m],
        };
        while epsi > epsimin {
            let res = self.residual(&pt, epsi);
            let mut resnorm = norm(&res);
            let mut resmax = res.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let mut ittt = 0;
            while resmax > 0.9 * epsi && ittt < 200 {
                ittt += 1;
                let (dir, step) = self.newton_direction(&pt, epsi)?;
                let mut steg = step;
                let old = pt.clone();
                let mut itto = 0;
                let mut resnew = 2.0 * resnorm;
                while resnew > resnorm && itto < 50 {
                    itto += 1;
                    pt = old.clone();
                    pt.advance(&dir, steg);
                    let r = self.residual(&pt, epsi);
                    resnew = norm(&r);
                    resmax = r.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    steg /= 2.0;
                }
                if !resnew.is_finite() {
                    return Err(MmaError::NonFinite);
                }
                resnorm = resnew;
            }
            epsi *= 0.1;
        }
        Ok(pt.x)
    }

    /// Newton direction of the perturbed KKT system and the largest step that
    /// keeps every slack strictly positive (capped at one).
    fn newton_direction(&self, pt: &Point, epsi: f64) -> Result<(Point, f64), MmaError> {
        let (n, m) = (self.n, self.m);
        let (plam, qlam) = self.plam_qlam(&pt.lam);
        let gvec = self.gvec(&pt.x);
        let mut gg = vec![0.0; m * n];
        let mut delx = vec![0.0; n];
        let mut diagx = vec![0.0; n];
        for j in 0..n {
            let ux1 = self.upp[j] - pt.x[j];
            let xl1 = pt.x[j] - self.low[j];
            let (ux2, xl2) = (ux1 * ux1, xl1 * xl1);
            for i in 0..m {
                gg[i * n + j] = self.pm[i * n + j] / ux2 - self.qm[i * n + j] / xl2;
            }
            let dpsidx = plam[j] / ux2 - qlam[j] / xl2;
            delx[j] = dpsidx - epsi / (pt.x[j] - self.alfa[j]) + epsi / (self.beta[j] - pt.x[j]);
            diagx[j] = 2.0 * (plam[j] / (ux2 * ux1) + qlam[j] / (xl2 * xl1))
                + pt.xsi[j] / (pt.x[j] - self.alfa[j])
                + pt.eta[j] / (self.beta[j] - pt.x[j]);
        }
        let dely: Vec<f64> = (0..m).map(|i| self.c[i] + self.d[i] * pt.y[i] - pt.lam[i] - epsi / pt.y[i]).collect();
        let delz = self.a0 - (0..m).map(|i| self.a[i] * pt.lam[i]).sum::<f64>() - epsi / pt.z;
        let dellam: Vec<f64> =
            (0..m).map(|i| gvec[i] - self.a[i] * pt.z - pt.y[i] - self.b[i] + epsi / pt.lam[i]).collect();
        let diagy: Vec<f64> = (0..m).map(|i| self.d[i] + pt.mu[i] / pt.y[i]).collect();
        let diaglamyi: Vec<f64> = (0..m).map(|i| pt.s[i] / pt.lam[i] + 1.0 / diagy[i]).collect();

        let (dx, dlam, dz);
        if m < n {
            // reduced system in (λ, z)
            let mut aa = vec![0.0; (m + 1) * (m + 1)];
            let mut bb = vec![0.0; m + 1];
            for i in 0..m {
                bb[i] = dellam[i] + dely[i] / diagy[i]
                    - (0..n).map(|j| gg[i * n + j] * delx[j] / diagx[j]).sum::<f64>();
                for k in 0..m {
                    aa[i * (m + 1) + k] = (0..n).map(|j| gg[i * n + j] * gg[k * n + j] / diagx[j]).sum::<f64>();
                }
                aa[i * (m + 1) + i] += diaglamyi[i];
                aa[i * (m + 1) + m] = self.a[i];
                aa[m * (m + 1) + i] = self.a[i];
            }
            aa[m * (m + 1) + m] = -pt.zet / pt.z;
            bb[m] = delz;
            let sol = dense_solve(aa, bb, m + 1)?;
            dlam = sol[..m].to_vec();
            dz = sol[m];
            dx = (0..n)
                .map(|j| -delx[j] / diagx[j] - (0..m).map(|i| gg[i * n + j] * dlam[i]).sum::<f64>() / diagx[j])
                .collect::<Vec<f64>>();
        } else {
            // reduced system in (x, z)
            let dellamyi: Vec<f64> = (0..m).map(|i| dellam[i] + dely[i] / diagy[i]).collect();
            let mut aa = vec![0.0; (n + 1) * (n + 1)];
            let mut bb = vec![0.0; n + 1];
            for j in 0..n {
                for k in 0..n {
                    aa[j * (n + 1) + k] = (0..m).map(|i| gg[i * n + j] * gg[i * n + k] / diaglamyi[i]).sum::<f64>();
                }
                aa[j * (n + 1) + j] += diagx[j];
                let axz = -(0..m).map(|i| gg[i * n + j] * self.a[i] / diaglamyi[i]).sum::<f64>();
                aa[j * (n + 1) + n] = axz;
                aa[n * (n + 1) + j] = axz;
                bb[j] = -(delx[j] + (0..m).map(|i| gg[i * n + j] * dellamyi[i] / diaglamyi[i]).sum::<f64>());
            }
            aa[n * (n + 1) + n] = pt.zet / pt.z + (0..m).map(|i| self.a[i] * self.a[i] / diaglamyi[i]).sum::<f64>();
            bb[n] = -(delz - (0..m).map(|i| self.a[i] * dellamyi[i] / diaglamyi[i]).sum::<f64>());
            let sol = dense_solve(aa, bb, n + 1)?;
            dx = sol[..n].to_vec();
            dz = sol[n];
            dlam = (0..m)
                .map(|i| {
                    let gdx: f64 = (0..n).map(|j| gg[i * n + j] * dx[j]).sum();
                    gdx / diaglamyi[i] - dz * self.a[i] / diaglamyi[i] + dellamyi[i] / diaglamyi[i]
                })
                .collect();
        }
        let dy: Vec<f64> = (0..m).map(|i| -dely[i] / diagy[i] + dlam[i] / diagy[i]).collect();
        let dxsi: Vec<f64> = (0..n)
            .map(|j| {
                let g = pt.x[j] - self.alfa[j];
                -pt.xsi[j] + epsi / g - pt.xsi[j] * dx[j] / g
            })
            .collect();
        let deta: Vec<f64> = (0..n)
            .map(|j| {
                let g = self.beta[j] - pt.x[j];
                -pt.eta[j] + epsi / g + pt.eta[j] * dx[j] / g
            })
            .collect();
        let dmu: Vec<f64> = (0..m).map(|i| -pt.mu[i] + epsi / pt.y[i] - pt.mu[i] * dy[i] / pt.y[i]).collect();
        let dzet = -pt.zet + epsi / pt.z - pt.zet * dz / pt.z;
        let ds: Vec<f64> = (0..m).map(|i| -pt.s[i] + epsi / pt.lam[i] - pt.s[i] * dlam[i] / pt.lam[i]).collect();

        let mut stm = 1.0f64;
        let mut ratio = |v: f64, dv: f64| stm = stm.max(-1.01 * dv / v);
        for i in 0..m {
            ratio(pt.y[i], dy[i]);
            ratio(pt.lam[i], dlam[i]);
            ratio(pt.mu[i], dmu[i]);
            ratio(pt.s[i], ds[i]);
        }
        ratio(pt.z, dz);
        ratio(pt.zet, dzet);
        for j in 0..n {
            ratio(pt.xsi[j], dxsi[j]);
            ratio(pt.eta[j], deta[j]);
            ratio(pt.x[j] - self.alfa[j], dx[j]);
            ratio(self.beta[j] - pt.x[j], -dx[j]);
        }
        if !stm.is_finite() {
            return Err(MmaError::NonFinite);
        }
        let dir = Point { x: dx, y: dy, z: dz, lam: dlam, xsi: dxsi, eta: deta, mu: dmu, zet: dzet, s: ds };
        Ok((dir, 1.0 / stm))
    }
}

impl Point {
    fn advance(&mut self, d: &Point, t: f64) {
        let axpy = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += t * y);
        axpy(&mut self.x, &d.x);
        axpy(&mut self.y, &d.y);
        axpy(&mut self.lam, &d.lam);
        axpy(&mut self.xsi, &d.xsi);
        axpy(&mut self.eta, &d.eta);
        axpy(&mut self.mu, &d.mu);
        axpy(&mut self.s, &d.s);
        self.z += t * d.z;
        self.zet += t * d.zet;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Gaussian elimination with partial pivoting on a row-major `k × k` system.
fn dense_solve(mut a: Vec<f64>, mut b: Vec<f64>, k: usize) -> Result<Vec<f64>, MmaError> {
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&r, &s| a[r * k + col].abs().total_cmp(&a[s * k + col].abs()))
            .expect("non-empty range");
        if !(a[piv * k + col].abs() > 1e-300) {
            return Err(MmaError::Singular);
        }
        if piv != col {
            for c in 0..k {
                a.swap(piv * k + c, col * k + c);
            }
            b.swap(piv, col);
        }
        for r in col + 1..k {
            let f = a[r * k + col] / a[col * k + col];
            if f != 0.0 {
                for c in col..k {
                    a[r * k + c] -= f * a[col * k + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; k];
    for r in (0..k).rev() {
        let s: f64 = (r + 1..k).map(|c| a[r * k + c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r * k + r];
    }
    Ok(x)
}
