//! Dual active-set solver (Goldfarb–Idnani) for
//! `min ½‖x‖²  s.t.  nᵢ·x ≥ bᵢ` in four variables.
//!
//! The identity Hessian makes the factorization a plain QR of the active
//! normals, kept up to date with Givens rotations.

const N: usize = 4;
const VIOLATION_TOL: f64 = 1e-12;
const STEP_TOL: f64 = 1e-14;
const MAX_STEPS: usize = 20_000;

pub(crate) type Vec4 = [f64; N];

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Outcome {
    Optimal { x: Vec4, active: Vec<usize> },
    /// No point satisfies the listed constraints simultaneously.
    Infeasible { core: Vec<usize> },
}

pub(crate) fn dot4(a: &Vec4, b: &Vec4) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

struct Factor {
    /// Columns `0..q` span the active normals, `q..N` their complement.
    j: [[f64; N]; N],
    r: [[f64; N]; N],
    q: usize,
}

impl Factor {
    fn new() -> Self {
        let mut j = [[0.0; N]; N];
        for (k, row) in j.iter_mut().enumerate() {
            row[k] = 1.0;
        }
        Self { j, r: [[0.0; N]; N], q: 0 }
    }

    fn project(&self, n: &Vec4) -> Vec4 {
        let mut d = [0.0; N];
        for (k, dk) in d.iter_mut().enumerate() {
            *dk = (0..N).map(|row| self.j[row][k] * n[row]).sum();
        }
        d
    }

    fn rotate_cols(&mut self, a: usize, b: usize, c: f64, s: f64) {
        for row in self.j.iter_mut() {
            let (x, y) = (row[a], row[b]);
            row[a] = c * x + s * y;
            row[b] = -s * x + c * y;
        }
    }

    fn add(&mut self, mut d: Vec4) {
        for k in (self.q + 1..N).rev() {
            let h = d[k - 1].hypot(d[k]);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (d[k - 1] / h, d[k] / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_cols(k - 1, k, c, s);
        }
        for row in 0..=self.q {
            self.r[row][self.q] = d[row];
        }
        self.q += 1;
    }

    fn drop(&mut self, l: usize) {
        for col in l..self.q - 1 {
            for row in 0..N {
                self.r[row][col] = self.r[row][col + 1];
            }
        }
        for row in 0..N {
            self.r[row][self.q - 1] = 0.0;
        }
        for k in l..self.q - 1 {
            let (a, b) = (self.r[k][k], self.r[k + 1][k]);
            let h = a.hypot(b);
            if h == 0.0 {
                continue;
            }
            let (c, s) = (a / h, b / h);
            for col in k..self.q - 1 {
                let (x, y) = (self.r[k][col], self.r[k + 1][col]);
                self.r[k][col] = c * x + s * y;
                self.r[k + 1][col] = -s * x + c * y;
            }
            self.r[k + 1][k] = 0.0;
            self.rotate_cols(k, k + 1, c, s);
        }
        self.q -= 1;
    }

    fn solve_r(&self, d: &Vec4) -> Vec4 {
        let mut out = [0.0; N];
        for k in (0..self.q).rev() {
            let tail: f64 = (k + 1..self.q).map(|c| self.r[k][c] * out[c]).sum();
            out[k] = (d[k] - tail) / self.r[k][k];
        }
        out
    }
}

/// Solves the min-norm problem over the given constraints.
///
/// Constraints with a zero normal are either trivially satisfied
/// (`b ≤ 0`) or make the problem infeasible on their own.
pub(crate) fn min_norm(normals: &[Vec4], rhs: &[f64]) -> Outcome {
    debug_assert_eq!(normals.len(), rhs.len());
    let mut nn = Vec::with_capacity(normals.len());
    let mut bb = Vec::with_capacity(normals.len());
    for (i, (n, &b)) in normals.iter().zip(rhs).enumerate() {
        let len = dot4(n, n).sqrt();
        if len == 0.0 {
            if b > 0.0 {
                return Outcome::Infeasible { core: vec![i] };
            }
            nn.push([0.0; N]);
            bb.push(f64::NEG_INFINITY);
        } else {
            nn.push(n.map(|v| v / len));
            bb.push(b / len);
        }
    }

    let mut x = [0.0; N];
    let mut f = Factor::new();
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut steps = 0;

    loop {
        let mut p = None;
        let mut worst = -VIOLATION_TOL;
        for (i, n) in nn.iter().enumerate() {
            let s = dot4(n, &x) - bb[i];
            if s < worst {
                worst = s;
                p = Some(i);
            }
        }
        let Some(p) = p else {
            return Outcome::Optimal { x, active };
        };
        if active.contains(&p) {
            // rounding left an active row marginally violated
            return Outcome::Optimal { x, active };
        }
        let np = nn[p];
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            steps += 1;
            if steps > MAX_STEPS {
                return Outcome::Optimal { x, active };
            }
            let q = f.q;
            let d = f.project(&np);
            let mut z = [0.0; N];
            for k in q..N {
                for (row, zr) in z.iter_mut().enumerate() {
                    *zr += f.j[row][k] * d[k];
                }
            }
            let r = f.solve_r(&d);

            let mut t1 = f64::INFINITY;
            let mut l = usize::MAX;
            for k in 0..q {
                if r[k] > STEP_TOL {
                    let v = u_plus[k] / r[k];
                    if v < t1 {
                        t1 = v;
                        l = k;
                    }
                }
            }
            let zn = dot4(&z, &np);
            let t2 = if dot4(&z, &z).sqrt() <= STEP_TOL || zn <= STEP_TOL {
                f64::INFINITY
            } else {
                -(dot4(&np, &x) - bb[p]) / zn
            };

            if t1.is_infinite() && t2.is_infinite() {
                let mut core = active.clone();
                core.push(p);
                core.sort_unstable();
                return Outcome::Infeasible { core };
            }
            let t = t1.min(t2);
            if t2.is_finite() {
                for (xi, zi) in x.iter_mut().zip(&z) {
                    *xi += t * zi;
                }
            }
            for k in 0..q {
                u_plus[k] -= t * r[k];
            }
            u_plus[q] += t;

            if t2 <= t1 {
                f.add(d);
                active.push(p);
                u = u_plus;
                break;
            }
            f.drop(l);
            active.remove(l);
            u_plus.remove(l);
        }
    }
}
