//! A small reverse-mode tape over dense `f64` arrays.
//!
//! Every node stores its primal value. Parameters are leaves that refer to an
//! index into the caller's parameter list; inputs are constant leaves.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayD, ArrayView2, Axis, Ix2, Ix3, IxDyn};

use crate::born::{shift_data, InterpMap};
use crate::butterfly::BlockLayout;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    /// `out[m, n] = a[(m + j) % N, (n + j) % N]`.
    ShiftGather(Var, usize),
    /// Scatter a `[blocks, rows, cols]` tensor into a dense matrix.
    Assemble(Var, Arc<BlockLayout>),
    /// Sum over rows: `(m, n) -> (1, n)`.
    ColumnSum(Var),
    /// Concatenate 2D arrays along an existing axis.
    Concat(Vec<Var>, usize),
    /// Stack 2D arrays into a `[k, m, n]` array.
    Stack(Vec<Var>),
    Interp(Var, Arc<InterpMap>),
    /// Same-padded cross-correlation: `x [cin, n, n]`, `w [cout, cin, k, k]`, `b [cout]`.
    Conv2d(Var, Var, Var),
    /// Mean of squared differences, a scalar.
    Mse(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: ArrayD<f64>,
    needs_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn as2(a: &ArrayD<f64>) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("two-dimensional operand")
}

fn add_into(slot: &mut Option<ArrayD<f64>>, g: ArrayD<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

fn same_shape(a: &ArrayD<f64>, b: &ArrayD<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn conv_forward(x: &ArrayD<f64>, w: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let x = x.view().into_dimensionality::<Ix3>().expect("conv input [c, n, n]");
    let w = w.view().into_dimensionality::<ndarray::Ix4>().expect("conv kernel [co, ci, k, k]");
    let (cout, cin, k, _) = w.dim();
    let (_, ny, nx) = x.dim();
    let p = k / 2;
    let mut out = ndarray::Array3::<f64>::zeros((cout, ny, nx));
    for co in 0..cout {
        out.index_axis_mut(Axis(0), co).fill(b[[co]]);
        for ci in 0..cin {
            for dy in 0..k {
                let (oy0, oy1) = (p.saturating_sub(dy), (ny + p).saturating_sub(dy).min(ny));
                if oy0 >= oy1 {
                    continue;
                }
                for dx in 0..k {
                    let (ox0, ox1) = (p.saturating_sub(dx), (nx + p).saturating_sub(dx).min(nx));
                    if ox0 >= ox1 {
                        continue;
                    }
                    let wv = w[[co, ci, dy, dx]];
                    let src = x.slice(s![ci, oy0 + dy - p..oy1 + dy - p, ox0 + dx - p..ox1 + dx - p]);
                    out.slice_mut(s![co, oy0..oy1, ox0..ox1]).scaled_add(wv, &src);
                }
            }
        }
    }
    out.into_dyn()
}

/// Gradients of the convolution with respect to input, kernel and bias.
fn conv_backward(x: &ArrayD<f64>, w: &ArrayD<f64>, g: &ArrayD<f64>) -> (ArrayD<f64>, ArrayD<f64>, ArrayD<f64>) {
    let x = x.view().into_dimensionality::<Ix3>().expect("conv input");
    let w = w.view().into_dimensionality::<ndarray::Ix4>().expect("conv kernel");
    let g = g.view().into_dimensionality::<Ix3>().expect("conv output gradient");
    let (cout, cin, k, _) = w.dim();
    let (_, ny, nx) = x.dim();
    let p = k / 2;
    let mut gx = ndarray::Array3::<f64>::zeros(x.raw_dim());
    let mut gw = ndarray::Array4::<f64>::zeros(w.raw_dim());
    let gb = g.sum_axis(Axis(2)).sum_axis(Axis(1));
    for co in 0..cout {
        for ci in 0..cin {
            for dy in 0..k {
                let (oy0, oy1) = (p.saturating_sub(dy), (ny + p).saturating_sub(dy).min(ny));
                if oy0 >= oy1 {
                    continue;
                }
                for dx in 0..k {
                    let (ox0, ox1) = (p.saturating_sub(dx), (nx + p).saturating_sub(dx).min(nx));
                    if ox0 >= ox1 {
                        continue;
                    }
                    let go = g.slice(s![co, oy0..oy1, ox0..ox1]);
                    let src = s![ci, oy0 + dy - p..oy1 + dy - p, ox0 + dx - p..ox1 + dx - p];
                    gw[[co, ci, dy, dx]] += (&go * &x.slice(src)).sum();
                    gx.slice_mut(src).scaled_add(w[[co, ci, dy, dx]], &go);
                }
            }
        }
    }
    (gx.into_dyn(), gw.into_dyn(), gb.into_dyn())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn value2(&self, v: Var) -> Array2<f64> {
        as2(self.value(v)).to_owned()
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: ArrayD<f64>) -> Var {
        self.push(Op::Input, value, false)
    }

    pub fn input2(&mut self, value: Array2<f64>) -> Var {
        self.input(value.into_dyn())
    }

    pub fn param(&mut self, index: usize, value: ArrayD<f64>) -> Var {
        self.push(Op::Param(index), value, true)
    }

    /// Records an operation, computing its value from the current node values.
    pub fn record(&mut self, op: Op) -> Result<Var> {
        let value = self.evaluate(&op, |v| &self.nodes[v.0].value)?;
        let needs_grad = self.operands(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(op, value, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Transpose(a))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }
    pub fn shift_gather(&mut self, a: Var, j: usize) -> Result<Var> {
        self.record(Op::ShiftGather(a, j))
    }
    pub fn assemble(&mut self, a: Var, layout: Arc<BlockLayout>) -> Result<Var> {
        self.record(Op::Assemble(a, layout))
    }
    pub fn column_sum(&mut self, a: Var) -> Result<Var> {
        self.record(Op::ColumnSum(a))
    }
    pub fn concat(&mut self, parts: Vec<Var>, axis: usize) -> Result<Var> {
        self.record(Op::Concat(parts, axis))
    }
    pub fn stack(&mut self, parts: Vec<Var>) -> Result<Var> {
        self.record(Op::Stack(parts))
    }
    pub fn interp(&mut self, a: Var, map: Arc<InterpMap>) -> Result<Var> {
        self.record(Op::Interp(a, map))
    }
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.record(Op::Conv2d(x, w, b))
    }
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.record(Op::Mse(pred, target))
    }

    fn operands(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Mse(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::ShiftGather(a, _)
            | Op::Assemble(a, _)
            | Op::ColumnSum(a)
            | Op::Interp(a, _) => vec![*a],
            Op::Concat(v, _) | Op::Stack(v) => v.clone(),
            Op::Conv2d(x, w, b) => vec![*x, *w, *b],
        }
    }

    fn evaluate<'a, F>(&'a self, op: &Op, val: F) -> Result<ArrayD<f64>>
    where
        F: Fn(Var) -> &'a ArrayD<f64>,
    {
        let out = match op {
            Op::Input | Op::Param(_) => return Err(Error::invalid("leaves are not recorded through evaluate")),
            Op::MatMul(a, b) => {
                let (a, b) = (val(*a), val(*b));
                if a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
                }
                as2(a).dot(&as2(b)).into_dyn()
            }
            Op::Transpose(a) => as2(val(*a)).t().to_owned().into_dyn(),
            Op::Add(a, b) => {
                same_shape(val(*a), val(*b), "add")?;
                val(*a) + val(*b)
            }
            Op::Sub(a, b) => {
                same_shape(val(*a), val(*b), "sub")?;
                val(*a) - val(*b)
            }
            Op::Mul(a, b) => {
                same_shape(val(*a), val(*b), "hadamard")?;
                val(*a) * val(*b)
            }
            Op::Scale(a, c) => val(*a) * *c,
            Op::Relu(a) => val(*a).mapv(|x| x.max(0.0)),
            Op::ShiftGather(a, j) => shift_data(&as2(val(*a)).to_owned(), *j).into_dyn(),
            Op::Assemble(a, layout) => {
                let blocks = val(*a).view().into_dimensionality::<Ix3>().map_err(|e| Error::shape(e.to_string()))?;
                if blocks.len_of(Axis(0)) != layout.blocks.len() {
                    return Err(Error::shape("block count differs from layout"));
                }
                let mut out = Array2::<f64>::zeros((layout.rows, layout.cols));
                for (b, spec) in layout.blocks.iter().enumerate() {
                    let src = blocks.index_axis(Axis(0), b);
                    if src.dim() != (spec.nrows, spec.ncols) {
                        return Err(Error::shape("block shape differs from layout"));
                    }
                    let mut dst = out.slice_mut(s![spec.row..spec.row + spec.nrows, spec.col..spec.col + spec.ncols]);
                    dst += &src;
                }
                out.into_dyn()
            }
            Op::ColumnSum(a) => as2(val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)).into_dyn(),
            Op::Concat(parts, axis) => {
                let views: Vec<_> = parts.iter().map(|v| as2(val(*v))).collect();
                ndarray::concatenate(Axis(*axis), &views).map_err(|e| Error::shape(e.to_string()))?.into_dyn()
            }
            Op::Stack(parts) => {
                let views: Vec<_> = parts.iter().map(|v| as2(val(*v))).collect();
                ndarray::stack(Axis(0), &views).map_err(|e| Error::shape(e.to_string()))?.into_dyn()
            }
            Op::Interp(a, map) => {
                if val(*a).shape() != [map.polar_dims().0, map.polar_dims().1] {
                    return Err(Error::shape("interpolation input is not on the polar grid"));
                }
                map.apply(as2(val(*a))).into_dyn()
            }
            Op::Conv2d(x, w, b) => {
                let (xs, ws, bs) = (val(*x).shape(), val(*w).shape(), val(*b).shape());
                if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 || ws[1] != xs[0] || ws[0] != bs[0] || ws[2] != ws[3] || ws[2] % 2 == 0 {
                    return Err(Error::shape(format!("conv2d input {xs:?}, kernel {ws:?}, bias {bs:?}")));
                }
                conv_forward(val(*x), val(*w), val(*b))
            }
            Op::Mse(a, b) => {
                same_shape(val(*a), val(*b), "mse")?;
                let n = val(*a).len().max(1) as f64;
                let d = val(*a) - val(*b);
                ArrayD::from_elem(IxDyn(&[]), d.iter().map(|x| x * x).sum::<f64>() / n)
            }
        };
        Ok(out)
    }

    /// Recomputes every node with new parameter values, keeping inputs fixed.
    /// Returns the value of `output`.
    pub fn replay(&self, params: &[ArrayD<f64>], output: Var) -> Result<ArrayD<f64>> {
        let mut values: Vec<ArrayD<f64>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => node.value.clone(),
                Op::Param(i) => params
                    .get(*i)
                    .ok_or_else(|| Error::shape(format!("tape refers to parameter {i}")))?
                    .clone(),
                op => self.evaluate(op, |v| &values[v.0])?,
            };
            values.push(v);
        }
        values
            .into_iter()
            .nth(output.0)
            .ok_or_else(|| Error::shape("output is not on the tape"))
    }

    /// Reverse sweep from a scalar `output`. Returns the gradient of every
    /// parameter index below `n_params` (zeros for unused parameters).
    pub fn backward(&self, output: Var, n_params: usize, param_shapes: &[&[usize]]) -> Result<Vec<ArrayD<f64>>> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(ArrayD::from_elem(self.nodes[output.0].value.raw_dim(), 1.0));
        let mut out: Vec<Option<ArrayD<f64>>> = vec![None; n_params];
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let val = |v: &Var| &self.nodes[v.0].value;
            let wants = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Input => {}
                Op::Param(i) => {
                    if *i >= n_params {
                        return Err(Error::shape(format!("tape refers to parameter {i}")));
                    }
                    add_into(&mut out[*i], g);
                }
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    if wants(a) {
                        add_into(&mut grads[a.0], g2.dot(&as2(val(b)).t()).into_dyn());
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], as2(val(a)).t().dot(&g2).into_dyn());
                    }
                }
                Op::Transpose(a) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], as2(&g).t().to_owned().into_dyn());
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], -g);
                    }
                }
                Op::Mul(a, b) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], &g * val(b));
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], &g * val(a));
                    }
                }
                Op::Scale(a, c) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], g * *c);
                    }
                }
                Op::Relu(a) => {
                    if wants(a) {
                        let mut ga = g;
                        ga.zip_mut_with(val(a), |gv, &x| {
                            if x <= 0.0 {
                                *gv = 0.0
                            }
                        });
                        add_into(&mut grads[a.0], ga);
                    }
                }
                Op::ShiftGather(a, j) => {
                    if wants(a) {
                        let n = g.shape()[0];
                        let back = (n - j % n.max(1)) % n.max(1);
                        add_into(&mut grads[a.0], shift_data(&as2(&g).to_owned(), back).into_dyn());
                    }
                }
                Op::Assemble(a, layout) => {
                    if wants(a) {
                        let g2 = as2(&g);
                        let mut ga = ndarray::Array3::<f64>::zeros(val(a).view().into_dimensionality::<Ix3>().expect("blocks").raw_dim());
                        for (b, spec) in layout.blocks.iter().enumerate() {
                            ga.index_axis_mut(Axis(0), b)
                                .assign(&g2.slice(s![spec.row..spec.row + spec.nrows, spec.col..spec.col + spec.ncols]));
                        }
                        add_into(&mut grads[a.0], ga.into_dyn());
                    }
                }
                Op::ColumnSum(a) => {
                    if wants(a) {
                        let rows = val(a).shape()[0];
                        let row = as2(&g).row(0).to_owned();
                        let ga = ndarray::stack(Axis(0), &vec![row.view(); rows]).expect("broadcast rows");
                        add_into(&mut grads[a.0], ga.into_dyn());
                    }
                }
                Op::Concat(parts, axis) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = val(p).shape()[*axis];
                        if wants(p) {
                            let piece = as2(&g).slice_axis(Axis(*axis), (offset..offset + len).into()).to_owned();
                            add_into(&mut grads[p.0], piece.into_dyn());
                        }
                        offset += len;
                    }
                }
                Op::Stack(parts) => {
                    for (k, p) in parts.iter().enumerate() {
                        if wants(p) {
                            add_into(&mut grads[p.0], g.index_axis(Axis(0), k).to_owned());
                        }
                    }
                }
                Op::Interp(a, map) => {
                    if wants(a) {
                        add_into(&mut grads[a.0], map.apply_transpose(as2(&g)).into_dyn());
                    }
                }
                Op::Conv2d(x, w, b) => {
                    let (gx, gw, gb) = conv_backward(val(x), val(w), &g);
                    if wants(x) {
                        add_into(&mut grads[x.0], gx);
                    }
                    if wants(w) {
                        add_into(&mut grads[w.0], gw);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Mse(a, b) => {
                    let n = val(a).len().max(1) as f64;
                    let scale = g.iter().next().copied().unwrap_or(0.0) * 2.0 / n;
                    let d = (val(a) - val(b)) * scale;
                    if wants(b) {
                        add_into(&mut grads[b.0], -d.clone());
                    }
                    if wants(a) {
                        add_into(&mut grads[a.0], d);
                    }
                }
            }
        }
        Ok(out
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| ArrayD::zeros(IxDyn(param_shapes.get(i).copied().unwrap_or(&[])))))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::butterfly::BlockSpec;
    use crate::grid::Grids;
    use crate::rng::Rng;

    fn rand(shape: &[usize], rng: &mut Rng) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.uniform(-1.0, 1.0))
    }

    /// Checks every parameter coordinate against central differences.
    fn check<F>(params: Vec<ArrayD<f64>>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().enumerate().map(|(i, p)| tape.param(i, p.clone())).collect();
        let out = build(&mut tape, &vars);
        let shapes: Vec<&[usize]> = params.iter().map(|p| p.shape()).collect();
        let grads = tape.backward(out, params.len(), &shapes).unwrap();
        let h = 1e-6;
        for (i, p) in params.iter().enumerate() {
            for k in 0..p.len() {
                let mut plus = params.clone();
                plus[i].as_slice_mut().unwrap()[k] += h;
                let mut minus = params.clone();
                minus[i].as_slice_mut().unwrap()[k] -= h;
                let fd = (tape.replay(&plus, out).unwrap().sum() - tape.replay(&minus, out).unwrap().sum()) / (2.0 * h);
                let ad = grads[i].as_slice().unwrap()[k];
                assert!((fd - ad).abs() <= 1e-6 * fd.abs().max(ad.abs()).max(1.0), "param {i}[{k}]: fd {fd} ad {ad}");
            }
        }
    }

    #[test]
    fn linear_algebra_ops() {
        let mut rng = Rng::new(1);
        let params = vec![rand(&[3, 4], &mut rng), rand(&[4, 3], &mut rng), rand(&[3, 3], &mut rng)];
        check(params, |t, v| {
            let ab = t.matmul(v[0], v[1]).unwrap();
            let c = t.transpose(v[2]).unwrap();
            let d = t.mul(ab, c).unwrap();
            let e = t.sub(d, v[2]).unwrap();
            let f = t.scale(e, -1.5).unwrap();
            let g = t.add(f, ab).unwrap();
            let h = t.shift_gather(g, 2).unwrap();
            let target = t.input2(Array2::from_elem((3, 3), 0.25));
            let m = t.mse(h, target).unwrap();
            let cs = t.column_sum(h).unwrap();
            let r = t.relu(cs).unwrap();
            let rt = t.transpose(r).unwrap();
            let outer = t.matmul(rt, r).unwrap();
            let both = t.concat(vec![outer, h], 1).unwrap();
            let stacked = t.stack(vec![both, both]).unwrap();
            let zero = t.input(ArrayD::zeros(IxDyn(&[2, 3, 6])));
            let m2 = t.mse(stacked, zero).unwrap();
            t.add(m, m2).unwrap()
        });
    }

    #[test]
    fn assemble_and_interp() {
        let mut rng = Rng::new(2);
        let layout = Arc::new(BlockLayout {
            rows: 4,
            cols: 6,
            blocks: vec![
                BlockSpec { row: 0, col: 0, nrows: 2, ncols: 3 },
                BlockSpec { row: 2, col: 3, nrows: 2, ncols: 3 },
            ],
        });
        let grids = Grids::new(8, 6, 4, 0.9).unwrap();
        let map = Arc::new(InterpMap::new(&grids));
        let params = vec![rand(&[2, 2, 3], &mut rng), rand(&[6, 4], &mut rng)];
        check(params, |t, v| {
            let a = t.assemble(v[0], layout.clone()).unwrap();
            let b = t.matmul(a, v[1]).unwrap();
            let c = t.concat(vec![b, b], 0).unwrap();
            let img = t.interp(c, map.clone()).unwrap();
            let target = t.input2(Array2::zeros((6, 6)));
            t.mse(img, target).unwrap()
        });
    }

    #[test]
    fn convolution() {
        let mut rng = Rng::new(3);
        let params = vec![rand(&[2, 5, 5], &mut rng), rand(&[3, 2, 3, 3], &mut rng), rand(&[3], &mut rng), rand(&[1, 3, 5, 5], &mut rng), rand(&[1], &mut rng)];
        check(params, |t, v| {
            let h = t.conv2d(v[0], v[1], v[2]).unwrap();
            let h = t.relu(h).unwrap();
            let y = t.conv2d(h, v[3], v[4]).unwrap();
            let target = t.input(ArrayD::from_elem(IxDyn(&[1, 5, 5]), 0.3));
            t.mse(y, target).unwrap()
        });
    }

    #[test]
    fn conv_identity_and_translation() {
        let mut rng = Rng::new(4);
        let x = rand(&[1, 9, 9], &mut rng);
        let mut w = ArrayD::zeros(IxDyn(&[1, 1, 1, 1]));
        w[[0, 0, 0, 0]] = 1.0;
        let b = ArrayD::zeros(IxDyn(&[1]));
        assert_eq!(conv_forward(&x, &w, &b), x);
        let zero_w = ArrayD::zeros(IxDyn(&[2, 1, 3, 3]));
        let bias = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0.5, -2.0]).unwrap();
        let out = conv_forward(&x, &zero_w, &bias);
        assert!(out.index_axis(Axis(0), 0).iter().all(|&v| v == 0.5));
        assert!(out.index_axis(Axis(0), 1).iter().all(|&v| v == -2.0));
        let k = rand(&[1, 1, 3, 3], &mut rng);
        let base = conv_forward(&x, &k, &b);
        let mut shifted = ArrayD::zeros(x.raw_dim());
        shifted.slice_mut(s![.., 1.., ..]).assign(&x.slice(s![.., ..8, ..]));
        let moved = conv_forward(&shifted, &k, &b);
        for y in 2..8 {
            for xx in 1..8 {
                assert!((moved[[0, y, xx]] - base[[0, y - 1, xx]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut rng = Rng::new(5);
        let params = vec![rand(&[4, 4], &mut rng), rand(&[4, 4], &mut rng)];
        let mut t = Tape::new();
        let a = t.param(0, params[0].clone());
        let b = t.param(1, params[1].clone());
        let c = t.matmul(a, b).unwrap();
        let d = t.relu(c).unwrap();
        let e = t.shift_gather(d, 3).unwrap();
        assert_eq!(&t.replay(&params, e).unwrap(), t.value(e));
        assert!(t.mul(a, c).is_ok());
        let bad = t.input2(Array2::zeros((3, 3)));
        assert!(t.matmul(a, bad).is_err());
        assert!(t.add(a, bad).is_err());
    }

    #[test]
    fn mse_minimum_has_zero_gradient() {
        let mut rng = Rng::new(6);
        let p = rand(&[3, 3], &mut rng);
        let mut t = Tape::new();
        let a = t.param(0, p.clone());
        let target = t.input(p.clone());
        let m = t.mse(a, target).unwrap();
        assert_eq!(t.value(m).sum(), 0.0);
        let g = t.backward(m, 1, &[&[3, 3]]).unwrap();
        assert!(g[0].iter().all(|&v| v == 0.0));
        let p2 = p.mapv(|v| v + 0.1);
        let mut t2 = Tape::new();
        let a2 = t2.param(0, p2);
        let tg = t2.input(p);
        let m2 = t2.mse(a2, tg).unwrap();
        let s2 = t2.scale(m2, 7.0).unwrap();
        let g1 = t2.backward(m2, 1, &[&[3, 3]]).unwrap();
        let g7 = t2.backward(s2, 1, &[&[3, 3]]).unwrap();
        for (x, y) in g1[0].iter().zip(g7[0].iter()) {
            assert!((7.0 * x - y).abs() < 1e-15);
        }
    }
}
