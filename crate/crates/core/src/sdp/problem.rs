use crate::error::{Error, Result};
use crate::kernels::{block2x2, sym_sqrt, Mat, Vector};
use crate::lti::{check_pe_rank, CovariancePack, WeightSpec};

/// Strictness floor on `W`.
pub const EPS_W: f64 = 1e-8;

/// Packing of `(W, Z, S)` into one vector: upper triangle of `W` row by
/// row, `Z` column-major, upper triangle of `S` row by row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub dim_w: usize,
    pub rows_z: usize,
    pub dim_s: usize,
}

fn tri(n: usize) -> usize {
    n * (n + 1) / 2
}

impl VariableLayout {
    pub fn len(&self) -> usize {
        tri(self.dim_w) + self.rows_z * self.dim_w + tri(self.dim_s)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pack(&self, w: &Mat, z: &Mat, s: &Mat) -> Vector {
        let mut x = Vector::zeros(self.len());
        let mut k = 0;
        for i in 0..self.dim_w {
            for j in i..self.dim_w {
                x[k] = w[(i, j)];
                k += 1;
            }
        }
        for v in z.iter() {
            x[k] = *v;
            k += 1;
        }
        for i in 0..self.dim_s {
            for j in i..self.dim_s {
                x[k] = s[(i, j)];
                k += 1;
            }
        }
        x
    }

    pub fn unpack(&self, x: &Vector) -> (Mat, Mat, Mat) {
        let mut w = Mat::zeros(self.dim_w, self.dim_w);
        let mut k = 0;
        for i in 0..self.dim_w {
            for j in i..self.dim_w {
                w[(i, j)] = x[k];
                w[(j, i)] = x[k];
                k += 1;
            }
        }
        let nz = self.rows_z * self.dim_w;
        let z = Mat::from_column_slice(self.rows_z, self.dim_w, &x.as_slice()[k..k + nz]);
        k += nz;
        let mut s = Mat::zeros(self.dim_s, self.dim_s);
        for i in 0..self.dim_s {
            for j in i..self.dim_s {
                s[(i, j)] = x[k];
                s[(j, i)] = x[k];
                k += 1;
            }
        }
        (w, z, s)
    }
}

/// `F(x) = F0 + sum_i x_i F_i ⪰ 0`.
#[derive(Debug, Clone)]
pub struct AffineLmi {
    pub name: &'static str,
    pub f0: Mat,
    pub coeffs: Vec<Mat>,
}

impl AffineLmi {
    fn from_map(
        name: &'static str,
        layout: &VariableLayout,
        f0: Mat,
        linear: impl Fn(&Mat, &Mat, &Mat) -> Mat,
    ) -> Self {
        let coeffs = (0..layout.len())
            .map(|i| {
                let mut e = Vector::zeros(layout.len());
                e[i] = 1.0;
                let (w, z, s) = layout.unpack(&e);
                linear(&w, &z, &s)
            })
            .collect();
        Self { name, f0, coeffs }
    }

    pub fn size(&self) -> usize {
        self.f0.nrows()
    }

    pub fn eval(&self, x: &Vector) -> Mat {
        let mut f = self.f0.clone();
        for (xi, fi) in x.iter().zip(&self.coeffs) {
            if *xi != 0.0 {
                f += fi * *xi;
            }
        }
        f
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub layout: VariableLayout,
    pub lmis: Vec<AffineLmi>,
    /// Equality constraints `eq_matrix x = eq_rhs`.
    pub eq_matrix: Mat,
    pub eq_rhs: Vector,
    pub objective: Vector,
    pub pack: CovariancePack,
    pub qa: Mat,
    pub r_half: Mat,
    pub eps_w: f64,
}

impl SdpProblem {
    pub fn n(&self) -> usize {
        self.pack.n()
    }

    pub fn m(&self) -> usize {
        self.pack.m()
    }

    pub fn p(&self) -> usize {
        self.pack.p()
    }

    /// Sum of the cone sizes, the barrier's self-concordance parameter.
    pub fn cone_dimension(&self) -> usize {
        self.lmis.iter().map(AffineLmi::size).sum()
    }

    pub fn objective_value(&self, x: &Vector) -> f64 {
        self.objective.dot(x)
    }

    /// `[I_n, 0] W - Xbar Z`.
    pub fn equality_map(&self, w: &Mat, z: &Mat) -> Mat {
        let n = self.n();
        w.rows(0, n).into_owned() - &self.pack.xbar * z
    }
}

/// Build the LMI program for a covariance pack and LQI weights.
pub fn assemble_sdp(pack: &CovariancePack, weights: &WeightSpec) -> Result<SdpProblem> {
    let (n, m, p) = (pack.n(), pack.m(), pack.p());
    weights.check_against(n, m, p)?;
    if p > m {
        return Err(Error::Assumption(format!(
            "{p} tracked outputs exceed {m} inputs; the augmented pair cannot be stabilizable"
        )));
    }
    let pe = check_pe_rank(pack);
    if !pe.ok {
        return Err(Error::Rank {
            context: "stacked covariances [Ubar; Xbar]",
            rank: pe.rank,
            required: pe.required,
            threshold: pe.threshold,
        });
    }
    let big_n = n + p;
    let layout = VariableLayout {
        dim_w: big_n,
        rows_z: n + m,
        dim_s: m,
    };
    let r_half = sym_sqrt(weights.r(), "R")?;
    let qa = weights.qa();
    let xi = pack.closed_loop_data();
    let ru = &r_half * &pack.ubar;

    let epigraph = AffineLmi::from_map("epigraph", &layout, Mat::zeros(m + big_n, m + big_n), |w, z, s| {
        let off = &ru * z;
        block2x2(s, &off, &off.transpose(), w)
    });
    let stability = AffineLmi::from_map("stability", &layout, -Mat::identity(big_n, big_n), |_, z, _| {
        let xz = &xi * z;
        -(&xz + xz.transpose())
    });
    let floor = AffineLmi::from_map("W floor", &layout, -Mat::identity(big_n, big_n) * EPS_W, |w, _, _| {
        w.clone()
    });

    let nv = layout.len();
    let mut eq_matrix = Mat::zeros(n * big_n, nv);
    let mut objective = Vector::zeros(nv);
    for i in 0..nv {
        let mut e = Vector::zeros(nv);
        e[i] = 1.0;
        let (w, z, s) = layout.unpack(&e);
        let eq = w.rows(0, n).into_owned() - &pack.xbar * &z;
        eq_matrix.set_column(i, &Vector::from_column_slice(eq.as_slice()));
        objective[i] = (&qa * &w).trace() + s.trace();
    }

    Ok(SdpProblem {
        layout,
        lmis: vec![epigraph, stability, floor],
        eq_matrix,
        eq_rhs: Vector::zeros(n * big_n),
        objective,
        pack: pack.clone(),
        qa,
        r_half,
        eps_w: EPS_W,
    })
}
