//! Differentiable operations on graph variables.
//!
//! Every op records a backward closure capturing only `Rc` handles to the
//! values it needs, so closures stay `'static` with respect to the graph.
//! Correctness of each backward rule is pinned by the finite-difference
//! checks in `gradcheck`.

use ndarray::{concatenate, s, Array1, Axis};

use crate::error::{Result, SluError};
use crate::numerics::graph::{Mat, Var};

impl<'g> Var<'g> {
    fn assert_same_shape(&self, other: &Var<'g>, op: &str) {
        assert_eq!(self.dim(), other.dim(), "{op}: shape mismatch");
    }

    pub fn add(self, rhs: Var<'g>) -> Var<'g> {
        self.assert_same_shape(&rhs, "add");
        let out = &*self.value() + &*rhs.value();
        self.g.push(out, vec![self.id, rhs.id], Some(Box::new(|g: &Mat| vec![g.clone(), g.clone()])))
    }

    pub fn sub(self, rhs: Var<'g>) -> Var<'g> {
        self.assert_same_shape(&rhs, "sub");
        let out = &*self.value() - &*rhs.value();
        self.g.push(out, vec![self.id, rhs.id], Some(Box::new(|g: &Mat| vec![g.clone(), -g])))
    }

    /// Elementwise product.
    pub fn mul(self, rhs: Var<'g>) -> Var<'g> {
        self.assert_same_shape(&rhs, "mul");
        let a = self.value();
        let b = rhs.value();
        let out = &*a * &*b;
        self.g.push(
            out,
            vec![self.id, rhs.id],
            Some(Box::new(move |g: &Mat| vec![g * &*b, g * &*a])),
        )
    }

    pub fn neg(self) -> Var<'g> {
        let out = -&*self.value();
        self.g.push(out, vec![self.id], Some(Box::new(|g: &Mat| vec![-g])))
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        let out = &*self.value() * c;
        self.g.push(out, vec![self.id], Some(Box::new(move |g: &Mat| vec![g * c])))
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        let out = &*self.value() + c;
        self.g.push(out, vec![self.id], Some(Box::new(|g: &Mat| vec![g.clone()])))
    }

    /// Elementwise product with a constant mask (dropout, attention masks).
    pub fn mul_const(self, m: Mat) -> Var<'g> {
        assert_eq!(self.dim(), m.dim(), "mul_const: shape mismatch");
        let out = &*self.value() * &m;
        self.g.push(out, vec![self.id], Some(Box::new(move |g: &Mat| vec![g * &m])))
    }

    /// Elementwise sum with a constant (positional encodings, additive masks).
    pub fn add_const(self, m: &Mat) -> Var<'g> {
        assert_eq!(self.dim(), m.dim(), "add_const: shape mismatch");
        let out = &*self.value() + m;
        self.g.push(out, vec![self.id], Some(Box::new(|g: &Mat| vec![g.clone()])))
    }

    /// Matrix product: (m x k) . (k x n) -> (m x n).
    pub fn matmul(self, rhs: Var<'g>) -> Var<'g> {
        let a = self.value();
        let b = rhs.value();
        assert_eq!(a.dim().1, b.dim().0, "matmul: inner dims differ");
        let out = a.dot(&*b);
        self.g.push(
            out,
            vec![self.id, rhs.id],
            Some(Box::new(move |g: &Mat| vec![g.dot(&b.t()), a.t().dot(g)])),
        )
    }

    pub fn transpose(self) -> Var<'g> {
        let out = self.value().t().to_owned();
        self.g.push(out, vec![self.id], Some(Box::new(|g: &Mat| vec![g.t().to_owned()])))
    }

    /// Add a 1xC bias row to every row.
    pub fn add_row(self, bias: Var<'g>) -> Var<'g> {
        let b = bias.value();
        assert_eq!(b.dim().0, 1, "add_row: bias must be 1xC");
        assert_eq!(self.cols(), b.dim().1, "add_row: width mismatch");
        let out = &*self.value() + &b.row(0);
        self.g.push(
            out,
            vec![self.id, bias.id],
            Some(Box::new(|g: &Mat| {
                vec![g.clone(), g.sum_axis(Axis(0)).insert_axis(Axis(0))]
            })),
        )
    }

    /// Add an Rx1 column to every column.
    pub fn add_col(self, col: Var<'g>) -> Var<'g> {
        let c = col.value();
        assert_eq!(c.dim().1, 1, "add_col: column must be Rx1");
        assert_eq!(self.rows(), c.dim().0, "add_col: height mismatch");
        let out = &*self.value() + &c.column(0).insert_axis(Axis(1));
        self.g.push(
            out,
            vec![self.id, col.id],
            Some(Box::new(|g: &Mat| {
                vec![g.clone(), g.sum_axis(Axis(1)).insert_axis(Axis(1))]
            })),
        )
    }

    fn pointwise(
        self,
        f: impl Fn(f64) -> f64,
        // derivative as a function of (input, output)
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var<'g> {
        let x = self.value();
        let out = x.mapv(&f);
        let y = std::rc::Rc::new(out.clone());
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = g.clone();
                for ((gi, xi), yi) in dx.iter_mut().zip(x.iter()).zip(y.iter()) {
                    *gi *= df(*xi, *yi);
                }
                vec![dx]
            })),
        )
    }

    pub fn tanh(self) -> Var<'g> {
        self.pointwise(f64::tanh, |_, y| 1.0 - y * y)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.pointwise(|x| 1.0 / (1.0 + (-x).exp()), |_, y| y * (1.0 - y))
    }

    pub fn relu(self) -> Var<'g> {
        self.pointwise(|x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn exp(self) -> Var<'g> {
        self.pointwise(f64::exp, |_, y| y)
    }

    pub fn ln(self) -> Var<'g> {
        self.pointwise(f64::ln, |x, _| 1.0 / x)
    }

    pub fn sum_all(self) -> Var<'g> {
        let dim = self.dim();
        let out = Mat::from_elem((1, 1), self.value().sum());
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| vec![Mat::from_elem(dim, g[(0, 0)])])),
        )
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.value().len() as f64;
        self.sum_all().scale(1.0 / n)
    }

    /// Column sums: RxC -> 1xC.
    pub fn sum_axis0(self) -> Var<'g> {
        let rows = self.rows();
        let out = self.value().sum_axis(Axis(0)).insert_axis(Axis(0));
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((rows, g.dim().1));
                for mut r in dx.rows_mut() {
                    r.assign(&g.row(0));
                }
                vec![dx]
            })),
        )
    }

    /// Row sums: RxC -> Rx1.
    pub fn sum_axis1(self) -> Var<'g> {
        let cols = self.cols();
        let out = self.value().sum_axis(Axis(1)).insert_axis(Axis(1));
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((g.dim().0, cols));
                for (mut r, gv) in dx.rows_mut().into_iter().zip(g.column(0).iter()) {
                    r.fill(*gv);
                }
                vec![dx]
            })),
        )
    }

    /// Rows [r0, r1) as a new (r1-r0)xC matrix.
    pub fn slice_rows(self, r0: usize, r1: usize) -> Var<'g> {
        let (rows, cols) = self.dim();
        assert!(r0 < r1 && r1 <= rows, "slice_rows: bad range");
        let out = self.value().slice(s![r0..r1, ..]).to_owned();
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((rows, cols));
                dx.slice_mut(s![r0..r1, ..]).assign(g);
                vec![dx]
            })),
        )
    }

    pub fn row(self, i: usize) -> Var<'g> {
        self.slice_rows(i, i + 1)
    }

    /// Columns [c0, c1) as a new Rx(c1-c0) matrix.
    pub fn slice_cols(self, c0: usize, c1: usize) -> Var<'g> {
        let (rows, cols) = self.dim();
        assert!(c0 < c1 && c1 <= cols, "slice_cols: bad range");
        let out = self.value().slice(s![.., c0..c1]).to_owned();
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((rows, cols));
                dx.slice_mut(s![.., c0..c1]).assign(g);
                vec![dx]
            })),
        )
    }

    /// Embedding lookup: select rows of a table by index, duplicates allowed.
    /// Backward scatter-adds into the table gradient.
    pub fn gather_rows(self, indices: &[usize]) -> Var<'g> {
        let table = self.value();
        let (rows, cols) = table.dim();
        for &i in indices {
            assert!(i < rows, "gather_rows: index {i} out of range {rows}");
        }
        let mut out = Mat::zeros((indices.len(), cols));
        for (k, &i) in indices.iter().enumerate() {
            out.row_mut(k).assign(&table.row(i));
        }
        let idx = indices.to_vec();
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dt = Mat::zeros((rows, cols));
                for (k, &i) in idx.iter().enumerate() {
                    let mut r = dt.row_mut(i);
                    r += &g.row(k);
                }
                vec![dt]
            })),
        )
    }

    /// Column-wise max: RxC -> 1xC; gradient routes to the argmax rows
    /// (first occurrence on ties).
    pub fn max_axis0(self) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.dim();
        let mut out = Mat::zeros((1, cols));
        let mut argmax = vec![0usize; cols];
        for c in 0..cols {
            let mut best = f64::NEG_INFINITY;
            for r in 0..rows {
                if x[(r, c)] > best {
                    best = x[(r, c)];
                    argmax[c] = r;
                }
            }
            out[(0, c)] = best;
        }
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((rows, cols));
                for (c, &r) in argmax.iter().enumerate() {
                    dx[(r, c)] = g[(0, c)];
                }
                vec![dx]
            })),
        )
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(self) -> Var<'g> {
        let x = self.value();
        let mut out = x.as_ref().clone();
        for mut row in out.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let y = std::rc::Rc::new(out.clone());
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                // dx_i = y_i * (g_i - sum_j g_j y_j), per row
                let mut dx = g * &*y;
                for (mut dr, yr) in dx.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = dr.sum();
                    dr.zip_mut_with(&yr, |d, yv| *d -= dot * yv);
                }
                vec![dx]
            })),
        )
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(self) -> Var<'g> {
        let x = self.value();
        let mut out = x.as_ref().clone();
        let mut soft = x.as_ref().clone();
        for (mut row, mut srow) in out.rows_mut().into_iter().zip(soft.rows_mut()) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
            srow.assign(&row.mapv(f64::exp));
        }
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = g.clone();
                for (mut dr, sr) in dx.rows_mut().into_iter().zip(soft.rows()) {
                    let gsum: f64 = dr.sum();
                    dr.zip_mut_with(&sr, |d, sv| *d -= gsum * sv);
                }
                vec![dx]
            })),
        )
    }

    /// Column-wise log-sum-exp: RxC -> 1xC (the CRF forward recursion step).
    pub fn logsumexp_axis0(self) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.dim();
        let mut out = Mat::zeros((1, cols));
        let mut weights = Mat::zeros((rows, cols));
        for c in 0..cols {
            let m = (0..rows).map(|r| x[(r, c)]).fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = (0..rows).map(|r| (x[(r, c)] - m).exp()).sum();
            out[(0, c)] = m + s.ln();
            for r in 0..rows {
                weights[(r, c)] = (x[(r, c)] - m).exp() / s;
            }
        }
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = weights.clone();
                for c in 0..cols {
                    for r in 0..rows {
                        dx[(r, c)] *= g[(0, c)];
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Per-row layer normalization with learned gain and shift (both 1xC).
    pub fn layer_norm(self, gamma: Var<'g>, beta: Var<'g>, eps: f64) -> Var<'g> {
        let x = self.value();
        let gm = gamma.value();
        let (rows, cols) = x.dim();
        assert_eq!(gm.dim(), (1, cols), "layer_norm: gamma must be 1xC");
        assert_eq!(beta.dim(), (1, cols), "layer_norm: beta must be 1xC");
        let mut xhat = Mat::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for r in 0..rows {
            let row = x.row(r);
            let mean = row.mean().unwrap();
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[r] = istd;
            for c in 0..cols {
                xhat[(r, c)] = (x[(r, c)] - mean) * istd;
            }
        }
        let mut out = Mat::zeros((rows, cols));
        let bt = beta.value();
        for r in 0..rows {
            for c in 0..cols {
                out[(r, c)] = xhat[(r, c)] * gm[(0, c)] + bt[(0, c)];
            }
        }
        let xhat_rc = std::rc::Rc::new(xhat);
        let xh = xhat_rc.clone();
        self.g.push(
            out,
            vec![self.id, gamma.id, beta.id],
            Some(Box::new(move |g: &Mat| {
                let n = cols as f64;
                let mut dx = Mat::zeros((rows, cols));
                let mut dgamma = Mat::zeros((1, cols));
                let mut dbeta = Mat::zeros((1, cols));
                for r in 0..rows {
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for c in 0..cols {
                        let dxhat = g[(r, c)] * gm[(0, c)];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xh[(r, c)];
                        dgamma[(0, c)] += g[(r, c)] * xh[(r, c)];
                        dbeta[(0, c)] += g[(r, c)];
                    }
                    for c in 0..cols {
                        let dxhat = g[(r, c)] * gm[(0, c)];
                        dx[(r, c)] = inv_std[r]
                            * (dxhat - sum_dxhat / n - xh[(r, c)] * sum_dxhat_xhat / n);
                    }
                }
                vec![dx, dgamma, dbeta]
            })),
        )
    }

    /// Unfold for width-w 1-d convolution with same-length output.
    /// Output row t is the concatenation of input rows t-pad_left .. t-pad_left+w-1,
    /// zero-padded outside the sequence.
    pub fn unfold(self, w: usize, pad_left: usize) -> Var<'g> {
        let x = self.value();
        let (rows, cols) = x.dim();
        assert!(w >= 1 && pad_left < w, "unfold: bad window");
        let mut out = Mat::zeros((rows, w * cols));
        for t in 0..rows {
            for j in 0..w {
                let src = t as isize + j as isize - pad_left as isize;
                if src >= 0 && (src as usize) < rows {
                    out.slice_mut(s![t, j * cols..(j + 1) * cols])
                        .assign(&x.row(src as usize));
                }
            }
        }
        self.g.push(
            out,
            vec![self.id],
            Some(Box::new(move |g: &Mat| {
                let mut dx = Mat::zeros((rows, cols));
                for t in 0..rows {
                    for j in 0..w {
                        let src = t as isize + j as isize - pad_left as isize;
                        if src >= 0 && (src as usize) < rows {
                            let mut dr = dx.row_mut(src as usize);
                            dr += &g.slice(s![t, j * cols..(j + 1) * cols]);
                        }
                    }
                }
                vec![dx]
            })),
        )
    }
}

/// Horizontal concatenation of same-height matrices.
pub fn concat_cols<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "concat_cols: empty input");
    let g = parts[0].g;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = concatenate(Axis(1), &views).expect("concat_cols: height mismatch");
    let widths: Vec<usize> = values.iter().map(|v| v.dim().1).collect();
    g.push(
        out,
        parts.iter().map(|p| p.id).collect(),
        Some(Box::new(move |grad: &Mat| {
            let mut offset = 0;
            widths
                .iter()
                .map(|&w| {
                    let part = grad.slice(s![.., offset..offset + w]).to_owned();
                    offset += w;
                    part
                })
                .collect()
        })),
    )
}

/// Vertical concatenation of same-width matrices.
pub fn concat_rows<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "concat_rows: empty input");
    let g = parts[0].g;
    let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
    let views: Vec<_> = values.iter().map(|v| v.view()).collect();
    let out = concatenate(Axis(0), &views).expect("concat_rows: width mismatch");
    let heights: Vec<usize> = values.iter().map(|v| v.dim().0).collect();
    g.push(
        out,
        parts.iter().map(|p| p.id).collect(),
        Some(Box::new(move |grad: &Mat| {
            let mut offset = 0;
            heights
                .iter()
                .map(|&h| {
                    let part = grad.slice(s![offset..offset + h, ..]).to_owned();
                    offset += h;
                    part
                })
                .collect()
        })),
    )
}

/// Mean of 1x1 scalars.
pub fn mean_of<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "mean_of: empty input");
    let n = parts.len() as f64;
    sum_of(parts).scale(1.0 / n)
}

/// Sum of 1x1 scalars.
pub fn sum_of<'g>(parts: &[Var<'g>]) -> Var<'g> {
    assert!(!parts.is_empty(), "sum_of: empty input");
    let mut acc = parts[0];
    for p in &parts[1..] {
        acc = acc.add(*p);
    }
    acc
}

/// Numerically stable softmax of a plain slice (non-autodiff convenience).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(SluError::InvalidArgument("softmax of empty vector".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|v| v / s).collect())
}

/// Label-smoothed cross entropy of a 1xK logit row against a gold class:
/// target q'_k = (1 - eps) * [k == gold] + eps / K.
pub fn cross_entropy_smoothed<'g>(
    logits: Var<'g>,
    gold: usize,
    epsilon: f64,
) -> Result<Var<'g>> {
    let (rows, k) = logits.dim();
    if rows != 1 || k == 0 {
        return Err(SluError::InvalidArgument(format!(
            "cross_entropy_smoothed: logits must be 1xK, got {rows}x{k}"
        )));
    }
    if gold >= k {
        return Err(SluError::InvalidArgument(format!(
            "cross_entropy_smoothed: gold class {gold} out of range for K={k}"
        )));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(SluError::InvalidArgument(format!(
            "cross_entropy_smoothed: epsilon {epsilon} outside [0, 1)"
        )));
    }
    let mut q = Mat::from_elem((1, k), epsilon / k as f64);
    q[(0, gold)] += 1.0 - epsilon;
    Ok(logits.log_softmax_rows().mul_const(q).sum_all().neg())
}

/// Same-length 1-d convolution: input TxD, kernel (w*D)xF laid out so the
/// rows for window offset j occupy j*D..(j+1)*D, bias 1xF. The window for
/// output position t covers positions t - floor((w-1)/2) .. t + ceil((w-1)/2);
/// even widths take one more position on the right.
pub fn conv1d_same<'g>(input: Var<'g>, kernel: Var<'g>, bias: Var<'g>, w: usize) -> Var<'g> {
    let d = input.cols();
    assert_eq!(kernel.rows(), w * d, "conv1d_same: kernel height != w*D");
    let pad_left = (w - 1) / 2;
    input.unfold(w, pad_left).matmul(kernel).add_row(bias)
}
