use crate::numkernel::Matrix;

use super::RowGrads;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Dense Adam over a flat parameter slice.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(grads.len(), self.m.len(), "gradient length mismatch");
        self.t += 1;
        let (bc1, bc2) = bias_corrections(self.t);
        for k in 0..params.len() {
            params[k] -= update(&mut self.m[k], &mut self.v[k], grads[k], lr, bc1, bc2);
        }
    }
}

/// Row-sparse Adam for embedding tables: moments of untouched rows are left
/// alone; the bias correction uses the global step count.
#[derive(Debug, Clone)]
pub struct SparseAdam {
    m: Matrix,
    v: Matrix,
    t: u64,
}

impl SparseAdam {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { m: Matrix::zeros(rows, cols), v: Matrix::zeros(rows, cols), t: 0 }
    }

    pub fn step(&mut self, table: &mut Matrix, grads: &RowGrads, lr: f64) {
        assert_eq!(table.shape(), self.m.shape(), "table shape changed");
        self.t += 1;
        let (bc1, bc2) = bias_corrections(self.t);
        for (r, g) in grads.iter() {
            let p = table.row_mut(r);
            let m = self.m.row_mut(r);
            let v = self.v.row_mut(r);
            for k in 0..g.len() {
                p[k] -= update(&mut m[k], &mut v[k], g[k], lr, bc1, bc2);
            }
        }
    }
}

fn bias_corrections(t: u64) -> (f64, f64) {
    let t = t as i32;
    (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t))
}

#[inline]
fn update(m: &mut f64, v: &mut f64, g: f64, lr: f64, bc1: f64, bc2: f64) -> f64 {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    lr * m_hat / (v_hat.sqrt() + ADAM_EPS)
}
