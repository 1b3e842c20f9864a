//! Vector-valued reverse-mode tape.
//!
//! Every node holds a dense `f64` vector. Parameters live in one flat slice
//! owned by the caller; ops that read parameters remember offsets into it so
//! `backward` can accumulate gradients aligned with that slice.

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param {
        offset: usize,
    },
    /// `W x + b` with `W` row-major `rows x cols` at `weights`, `b` at `bias`.
    Affine {
        x: Var,
        weights: usize,
        bias: Option<usize>,
        rows: usize,
        cols: usize,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Mean {
        xs: Vec<Var>,
    },
    Concat {
        xs: Vec<Var>,
    },
    Dot {
        a: Var,
        b: Var,
    },
    AddScalarParam {
        x: Var,
        offset: usize,
    },
}

/// `out[r] = sum_c w[r, c] x[c] + b[r]`, the one affine kernel shared by
/// tape and tape-free evaluation.
pub fn affine(weights: &[f64], bias: Option<&[f64]>, x: &[f64], rows: usize, out: &mut Vec<f64>) {
    let cols = x.len();
    out.clear();
    out.extend(weights[..rows * cols].chunks_exact(cols).enumerate().map(|(r, row)| {
        let acc = dot(row, x);
        match bias {
            Some(b) => acc + b[r],
            None => acc,
        }
    }));
}

/// Sum of `values` in ascending order, so the result does not depend on the
/// order the caller lists them in.
fn order_free_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    values: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn clear(&mut self) {
        self.values.clear();
        self.ops.clear();
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.values[v.0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.values.len() - 1)
    }

    /// A constant leaf; receives no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// A leaf reading `len` parameters starting at `offset`.
    pub fn param(&mut self, params: &[f64], offset: usize, len: usize) -> Var {
        self.push(params[offset..offset + len].to_vec(), Op::Param { offset })
    }

    pub fn affine(
        &mut self,
        params: &[f64],
        x: Var,
        weights: usize,
        bias: Option<usize>,
        rows: usize,
    ) -> Result<Var, NnError> {
        let cols = self.values[x.0].len();
        if weights + rows * cols > params.len() {
            return Err(NnError::Dimension {
                expected: params.len(),
                got: weights + rows * cols,
            });
        }
        let mut out = Vec::with_capacity(rows);
        affine(
            &params[weights..],
            bias.map(|b| &params[b..b + rows]),
            &self.values[x.0],
            rows,
            &mut out,
        );
        Ok(self.push(
            out,
            Op::Affine {
                x,
                weights,
                bias,
                rows,
                cols,
            },
        ))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.values[x.0].iter().map(|v| v.tanh()).collect();
        self.push(out, Op::Tanh { x })
    }

    fn same_len(&self, a: Var, b: Var) -> Result<usize, NnError> {
        let (la, lb) = (self.values[a.0].len(), self.values[b.0].len());
        if la != lb {
            return Err(NnError::Dimension { expected: la, got: lb });
        }
        Ok(la)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let out = self.values[a.0].iter().zip(&self.values[b.0]).map(|(x, y)| x + y).collect();
        Ok(self.push(out, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let out = self.values[a.0].iter().zip(&self.values[b.0]).map(|(x, y)| x * y).collect();
        Ok(self.push(out, Op::Mul { a, b }))
    }

    /// Elementwise mean of `xs`; the mean of no vectors is the zero vector of length `dim`.
    pub fn mean(&mut self, xs: &[Var], dim: usize) -> Result<Var, NnError> {
        if xs.is_empty() {
            return Ok(self.input(vec![0.0; dim]));
        }
        for &x in xs {
            let got = self.values[x.0].len();
            if got != dim {
                return Err(NnError::Dimension { expected: dim, got });
            }
        }
        let n = xs.len() as f64;
        let mut column = Vec::with_capacity(xs.len());
        let out = (0..dim)
            .map(|i| {
                column.clear();
                column.extend(xs.iter().map(|x| self.values[x.0][i]));
                order_free_sum(&mut column) / n
            })
            .collect();
        Ok(self.push(out, Op::Mean { xs: xs.to_vec() }))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let out = xs.iter().flat_map(|x| self.values[x.0].iter().copied()).collect();
        self.push(out, Op::Concat { xs: xs.to_vec() })
    }

    /// Inner product; a length-1 node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        self.same_len(a, b)?;
        let s = dot(&self.values[a.0], &self.values[b.0]);
        Ok(self.push(vec![s], Op::Dot { a, b }))
    }

    pub fn add_scalar_param(&mut self, params: &[f64], x: Var, offset: usize) -> Result<Var, NnError> {
        if self.values[x.0].len() != 1 {
            return Err(NnError::Dimension {
                expected: 1,
                got: self.values[x.0].len(),
            });
        }
        let out = vec![self.values[x.0][0] + params[offset]];
        Ok(self.push(out, Op::AddScalarParam { x, offset }))
    }

    /// Gradient of `<seed, output>` with respect to all of `params`.
    ///
    /// `params` must be the slice the forward pass read from.
    pub fn backward(&self, params: &[f64], output: Var, seed: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut grads = vec![0.0; params.len()];
        self.backward_into(params, &[(output, seed)], &mut grads)?;
        Ok(grads)
    }

    /// Accumulates the gradient of `sum_k <seed_k, output_k>` into `grads`.
    pub fn backward_into(
        &self,
        params: &[f64],
        seeds: &[(Var, &[f64])],
        grads: &mut [f64],
    ) -> Result<(), NnError> {
        if grads.len() != params.len() {
            return Err(NnError::Dimension {
                expected: params.len(),
                got: grads.len(),
            });
        }
        if self.ops.is_empty() {
            return Err(NnError::EmptyTape);
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.values.len()];
        let mut last = 0;
        for &(v, seed) in seeds {
            let len = self.values[v.0].len();
            if seed.len() != len {
                return Err(NnError::Dimension {
                    expected: len,
                    got: seed.len(),
                });
            }
            accumulate(&mut adj[v.0], seed);
            last = last.max(v.0);
        }

        for i in (0..=last).rev() {
            let Some(g) = adj[i].take() else { continue };
            match &self.ops[i] {
                Op::Input => {}
                Op::Param { offset } => {
                    for (dst, gi) in grads[*offset..*offset + g.len()].iter_mut().zip(&g) {
                        *dst += gi;
                    }
                }
                Op::Affine {
                    x,
                    weights,
                    bias,
                    rows,
                    cols,
                } => {
                    let xv = &self.values[x.0];
                    let gw = &mut grads[*weights..*weights + rows * cols];
                    for (row, &gr) in gw.chunks_exact_mut(*cols).zip(g.iter()) {
                        if gr == 0.0 {
                            continue;
                        }
                        for (d, xi) in row.iter_mut().zip(xv) {
                            *d += gr * xi;
                        }
                    }
                    if let Some(b) = bias {
                        for (d, gr) in grads[*b..*b + rows].iter_mut().zip(g.iter()) {
                            *d += gr;
                        }
                    }
                    if needs_grad(&self.ops, *x) {
                        let mut gx = vec![0.0; *cols];
                        let w = &params[*weights..*weights + rows * cols];
                        for (wrow, &gr) in w.chunks_exact(*cols).zip(g.iter()) {
                            for (d, wc) in gx.iter_mut().zip(wrow) {
                                *d += wc * gr;
                            }
                        }
                        accumulate(&mut adj[x.0], &gx);
                    }
                }
                Op::Tanh { x } => {
                    let y = &self.values[i];
                    let gx: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    accumulate(&mut adj[x.0], &gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::Mul { a, b } => {
                    let ga: Vec<f64> = g.iter().zip(&self.values[b.0]).map(|(gi, bi)| gi * bi).collect();
                    let gb: Vec<f64> = g.iter().zip(&self.values[a.0]).map(|(gi, ai)| gi * ai).collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::Mean { xs } => {
                    let n = xs.len() as f64;
                    let gx: Vec<f64> = g.iter().map(|gi| gi / n).collect();
                    for x in xs {
                        accumulate(&mut adj[x.0], &gx);
                    }
                }
                Op::Concat { xs } => {
                    let mut start = 0;
                    for x in xs {
                        let len = self.values[x.0].len();
                        accumulate(&mut adj[x.0], &g[start..start + len]);
                        start += len;
                    }
                }
                Op::Dot { a, b } => {
                    let s = g[0];
                    let ga: Vec<f64> = self.values[b.0].iter().map(|bi| s * bi).collect();
                    let gb: Vec<f64> = self.values[a.0].iter().map(|ai| s * ai).collect();
                    accumulate(&mut adj[a.0], &ga);
                    accumulate(&mut adj[b.0], &gb);
                }
                Op::AddScalarParam { x, offset } => {
                    grads[*offset] += g[0];
                    accumulate(&mut adj[x.0], &g);
                }
            }
        }
        Ok(())
    }
}

fn needs_grad(ops: &[Op], v: Var) -> bool {
    !matches!(ops[v.0], Op::Input)
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += gi;
            }
        }
        None => *slot = Some(g.to_vec()),
    }
}

/// Inner product with four interleaved partial sums, combined in a fixed order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a4, a_tail) = a[..n].split_at(n - n % 4);
    let (b4, b_tail) = b[..n].split_at(n - n % 4);
    let mut acc = [0.0; 4];
    for (x, y) in a4.chunks_exact(4).zip(b4.chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a_tail.iter().zip(b_tail) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
