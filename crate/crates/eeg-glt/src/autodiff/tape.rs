//! The tape: a define-by-run graph of f64 arrays.
//!
//! Every operation pushes a node holding its value and, when the tape is
//! recording, a closure that maps the node's output gradient to gradient
//! contributions for its parents. `backward` walks the tape in reverse and
//! accumulates. Handles are plain indices; values use dynamic-dimensional
//! arrays with helpers to view them at fixed rank.

use ndarray::{ArrayD, ArrayView1, ArrayView2, ArrayView3, Ix1, Ix2, Ix3};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&ArrayD<f64>, &[ArrayD<f64>]) -> Vec<(usize, ArrayD<f64>)>>;

pub struct Tape {
    values: Vec<ArrayD<f64>>,
    backs: Vec<Option<BackFn>>,
    recording: bool,
}

pub(crate) fn as1(a: &ArrayD<f64>) -> ArrayView1<'_, f64> {
    a.view().into_dimensionality::<Ix1>().expect("rank-1 value")
}

pub(crate) fn as2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("rank-2 value")
}

pub(crate) fn as3(a: &ArrayD<f64>) -> ArrayView3<'_, f64> {
    a.view().into_dimensionality::<Ix3>().expect("rank-3 value")
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), backs: Vec::new(), recording: true }
    }

    /// A tape that only computes values; `backward` on it finds no paths.
    pub fn inference() -> Self {
        Tape { values: Vec::new(), backs: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.values[v.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, back: Option<BackFn>) -> Var {
        self.values.push(value);
        self.backs.push(if self.recording { back } else { None });
        Var(self.values.len() - 1)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, None)
    }

    /// A gradient sink: read its gradient out of [`Grads`] after `backward`.
    pub fn leaf(&mut self, value: ArrayD<f64>) -> Var {
        self.push(value, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] + &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |g, _| vec![(a.0, g.clone()), (b.0, g.clone())])),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] - &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |g, _| vec![(a.0, g.clone()), (b.0, g.mapv(|x| -x))])),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.values[a.0].mapv(|x| x * c);
        self.push(v, Some(Box::new(move |g, _| vec![(a.0, g.mapv(|x| x * c))])))
    }

    /// `alpha * a + beta * b`.
    pub fn lincomb(&mut self, alpha: f64, a: Var, beta: f64, b: Var) -> Var {
        let v = self.values[a.0].mapv(|x| x * alpha) + self.values[b.0].mapv(|x| x * beta);
        self.push(
            v,
            Some(Box::new(move |g, _| {
                vec![(a.0, g.mapv(|x| x * alpha)), (b.0, g.mapv(|x| x * beta))]
            })),
        )
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Var {
        let v = &self.values[a.0] * &self.values[b.0];
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                vec![(a.0, g * &vals[b.0]), (b.0, g * &vals[a.0])]
            })),
        )
    }

    /// Entrywise product with a fixed matrix (the usual way to gate a
    /// trainable value by a binary support).
    pub fn mul_const(&mut self, a: Var, c: &ArrayD<f64>) -> Var {
        let v = &self.values[a.0] * c;
        let c = c.clone();
        self.push(v, Some(Box::new(move |g, _| vec![(a.0, g * &c)])))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = as2(&self.values[a.0]).dot(&as2(&self.values[b.0]));
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, vals| {
                let g2 = as2(g);
                let da = g2.dot(&as2(&vals[b.0]).t());
                let db = as2(&vals[a.0]).t().dot(&g2);
                vec![(a.0, da.into_dyn()), (b.0, db.into_dyn())]
            })),
        )
    }

    /// Left-multiplies every batch slice: `out[b] = m . x[b]`,
    /// `m: N x N`, `x: B x N x F`.
    pub fn bmm_left(&mut self, m: Var, x: Var) -> Var {
        let mv = as2(&self.values[m.0]);
        let xv = as3(&self.values[x.0]);
        let (bsz, n, f) = xv.dim();
        assert_eq!(mv.dim(), (n, n), "bmm_left operand shapes");
        let mut out = ndarray::Array3::<f64>::zeros((bsz, n, f));
        for b in 0..bsz {
            out.index_axis_mut(ndarray::Axis(0), b)
                .assign(&mv.dot(&xv.index_axis(ndarray::Axis(0), b)));
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, vals| {
                let g3 = as3(g);
                let mv = as2(&vals[m.0]);
                let xv = as3(&vals[x.0]);
                let (bsz, n, f) = xv.dim();
                let mut dm = ndarray::Array2::<f64>::zeros((n, n));
                let mut dx = ndarray::Array3::<f64>::zeros((bsz, n, f));
                for b in 0..bsz {
                    let gb = g3.index_axis(ndarray::Axis(0), b);
                    let xb = xv.index_axis(ndarray::Axis(0), b);
                    dm = dm + gb.dot(&xb.t());
                    dx.index_axis_mut(ndarray::Axis(0), b).assign(&mv.t().dot(&gb));
                }
                vec![(m.0, dm.into_dyn()), (x.0, dx.into_dyn())]
            })),
        )
    }

    /// Right-multiplies every batch slice: `out[b] = x[b] . w`,
    /// `x: B x N x F`, `w: F x G`.
    pub fn bmm_right(&mut self, x: Var, w: Var) -> Var {
        let xv = as3(&self.values[x.0]);
        let wv = as2(&self.values[w.0]);
        let (bsz, n, f) = xv.dim();
        assert_eq!(wv.nrows(), f, "bmm_right operand shapes");
        let g_out = wv.ncols();
        let mut out = ndarray::Array3::<f64>::zeros((bsz, n, g_out));
        for b in 0..bsz {
            out.index_axis_mut(ndarray::Axis(0), b)
                .assign(&xv.index_axis(ndarray::Axis(0), b).dot(&wv));
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, vals| {
                let g3 = as3(g);
                let xv = as3(&vals[x.0]);
                let wv = as2(&vals[w.0]);
                let (bsz, n, f) = xv.dim();
                let mut dw = ndarray::Array2::<f64>::zeros((f, wv.ncols()));
                let mut dx = ndarray::Array3::<f64>::zeros((bsz, n, f));
                for b in 0..bsz {
                    let gb = g3.index_axis(ndarray::Axis(0), b);
                    let xb = xv.index_axis(ndarray::Axis(0), b);
                    dw = dw + xb.t().dot(&gb);
                    dx.index_axis_mut(ndarray::Axis(0), b).assign(&gb.dot(&wv.t()));
                }
                vec![(w.0, dw.into_dyn()), (x.0, dx.into_dyn())]
            })),
        )
    }

    /// Slice `theta[k]` out of a `K x F_in x F_out` coefficient stack.
    pub fn slice_k(&mut self, theta: Var, k: usize) -> Var {
        let tv = as3(&self.values[theta.0]);
        let v = tv.index_axis(ndarray::Axis(0), k).to_owned();
        let full_shape = tv.raw_dim();
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, _| {
                let mut dt = ndarray::Array3::<f64>::zeros(full_shape);
                dt.index_axis_mut(ndarray::Axis(0), k).assign(&as2(g));
                vec![(theta.0, dt.into_dyn())]
            })),
        )
    }

    /// Adds a per-node bias `N x F` to every batch slice of `B x N x F`.
    pub fn add_bias_nf(&mut self, x: Var, bias: Var) -> Var {
        let xv = as3(&self.values[x.0]);
        let bv = as2(&self.values[bias.0]);
        let (bsz, n, f) = xv.dim();
        assert_eq!(bv.dim(), (n, f), "bias shape");
        let mut out = xv.to_owned();
        for b in 0..bsz {
            let mut slice = out.index_axis_mut(ndarray::Axis(0), b);
            slice += &bv;
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| {
                let g3 = as3(g);
                let db = g3.sum_axis(ndarray::Axis(0));
                vec![(x.0, g.clone()), (bias.0, db.into_dyn())]
            })),
        )
    }

    /// Adds a per-feature bias `F` to every node of every batch slice of
    /// `B x N x F`.
    pub fn add_bias_feat(&mut self, x: Var, bias: Var) -> Var {
        let xv = as3(&self.values[x.0]);
        let bv = as1(&self.values[bias.0]);
        let (bsz, n, f) = xv.dim();
        assert_eq!(bv.len(), f, "bias shape");
        let mut out = xv.to_owned();
        for b in 0..bsz {
            for i in 0..n {
                for j in 0..f {
                    out[[b, i, j]] += bv[j];
                }
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| {
                let g3 = as3(g);
                let db = g3.sum_axis(ndarray::Axis(0)).sum_axis(ndarray::Axis(0));
                vec![(x.0, g.clone()), (bias.0, db.into_dyn())]
            })),
        )
    }

    /// Adds a row vector `D` to every row of `B x D`.
    pub fn add_bias_row(&mut self, x: Var, bias: Var) -> Var {
        let xv = as2(&self.values[x.0]);
        let bv = as1(&self.values[bias.0]);
        assert_eq!(xv.ncols(), bv.len(), "bias shape");
        let out = &xv + &bv;
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| {
                let db = as2(g).sum_axis(ndarray::Axis(0));
                vec![(x.0, g.clone()), (bias.0, db.into_dyn())]
            })),
        )
    }

    /// Row sums of a square matrix (degrees of an adjacency).
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = as2(&self.values[a.0]);
        let v = av.sum_axis(ndarray::Axis(1));
        let n = av.nrows();
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, _| {
                let g1 = as1(g);
                let mut da = ndarray::Array2::<f64>::zeros((n, n));
                for i in 0..n {
                    da.row_mut(i).fill(g1[i]);
                }
                vec![(a.0, da.into_dyn())]
            })),
        )
    }

    /// `d -> d^[-1/2]` with non-positive entries mapped to zero.
    ///
    /// A zero (or pruned-to-negative) row sum means the node contributes
    /// nothing to the normalized adjacency; its gradient is zero too.
    pub fn rsqrt_or_zero(&mut self, d: Var) -> Var {
        let dv = &self.values[d.0];
        let v = dv.mapv(|x| if x > 1e-12 { 1.0 / x.sqrt() } else { 0.0 });
        let saved = dv.clone();
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, _| {
                let dd = ndarray::Zip::from(g).and(&saved).map_collect(|&gi, &di| {
                    if di > 1e-12 {
                        -0.5 * gi * di.powf(-1.5)
                    } else {
                        0.0
                    }
                });
                vec![(d.0, dd)]
            })),
        )
    }

    /// `out[i][j] = u[i] * a[i][j] * u[j]` — the symmetric degree scaling.
    pub fn scale_sym(&mut self, a: Var, u: Var) -> Var {
        let av = as2(&self.values[a.0]);
        let uv = as1(&self.values[u.0]);
        let n = av.nrows();
        let mut out = ndarray::Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                out[[i, j]] = uv[i] * av[[i, j]] * uv[j];
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, vals| {
                let g2 = as2(g);
                let av = as2(&vals[a.0]);
                let uv = as1(&vals[u.0]);
                let n = av.nrows();
                let mut da = ndarray::Array2::<f64>::zeros((n, n));
                let mut du = ndarray::Array1::<f64>::zeros(n);
                for i in 0..n {
                    for j in 0..n {
                        da[[i, j]] = g2[[i, j]] * uv[i] * uv[j];
                        du[i] += g2[[i, j]] * av[[i, j]] * uv[j];
                        du[j] += g2[[i, j]] * av[[i, j]] * uv[i];
                    }
                }
                vec![(a.0, da.into_dyn()), (u.0, du.into_dyn())]
            })),
        )
    }

    /// `alpha * a + beta * I` for a square matrix.
    pub fn affine_identity(&mut self, a: Var, alpha: f64, beta: f64) -> Var {
        let av = as2(&self.values[a.0]);
        let n = av.nrows();
        let mut out = av.mapv(|x| x * alpha);
        for i in 0..n {
            out[[i, i]] += beta;
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| vec![(a.0, g.mapv(|x| x * alpha))])),
        )
    }

    /// Elementwise `max(0, x)`; the subgradient at exactly 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.values[x.0].mapv(|a| a.max(0.0));
        let mask = self.values[x.0].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
        self.push(v, Some(Box::new(move |g, _| vec![(x.0, g * &mask)])))
    }

    /// Applies a precomputed dropout mask (already scaled by `1/(1-rate)`).
    pub fn apply_mask(&mut self, x: Var, mask: ArrayD<f64>) -> Var {
        let v = &self.values[x.0] * &mask;
        self.push(v, Some(Box::new(move |g, _| vec![(x.0, g * &mask)])))
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.values[x.0].iter().sum();
        let shape = self.values[x.0].raw_dim();
        self.push(
            ArrayD::from_elem(ndarray::IxDyn(&[]), total),
            Some(Box::new(move |g, _| {
                let gs = g.iter().next().copied().unwrap_or(1.0);
                vec![(x.0, ArrayD::from_elem(shape.clone(), gs))]
            })),
        )
    }

    /// Mean over the node axis: `B x N x F -> B x F`.
    pub fn mean_nodes(&mut self, x: Var) -> Var {
        let xv = as3(&self.values[x.0]);
        let (bsz, n, f) = xv.dim();
        let v = xv.mean_axis(ndarray::Axis(1)).expect("nonempty node axis");
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, _| {
                let g2 = as2(g);
                let mut dx = ndarray::Array3::<f64>::zeros((bsz, n, f));
                let inv = 1.0 / n as f64;
                for b in 0..bsz {
                    for i in 0..n {
                        for j in 0..f {
                            dx[[b, i, j]] = g2[[b, j]] * inv;
                        }
                    }
                }
                vec![(x.0, dx.into_dyn())]
            })),
        )
    }

    /// Pushes a node with an arbitrary value and backward closure; used by
    /// the composite layers (batch norm, losses) in `ops`.
    pub(crate) fn push_custom(&mut self, value: ArrayD<f64>, back: Option<BackFn>) -> Var {
        self.push(value, back)
    }

    /// Reverse pass from a scalar root. Returns per-node gradients; read
    /// leaves out by their `Var`.
    pub fn backward(&mut self, root: Var) -> Grads {
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.values.len()];
        grads[root.0] = Some(ArrayD::from_elem(self.values[root.0].raw_dim(), 1.0));
        for i in (0..=root.0).rev() {
            let Some(back) = &self.backs[i] else { continue };
            let Some(g) = grads[i].take() else { continue };
            for (parent, contrib) in back(&g, &self.values) {
                match &mut grads[parent] {
                    Some(acc) => *acc += &contrib,
                    slot => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        Grads(grads)
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Grads(Vec<Option<ArrayD<f64>>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<ArrayD<f64>> {
        self.0.get_mut(v.0).and_then(|g| g.take())
    }
}
