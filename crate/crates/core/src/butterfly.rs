//! Butterfly factorisation of complementary low-rank matrices.
//!
//! An `N1 x N2` matrix with `N1 = 2^L s1` and `N2 = 2^L s2` is written as
//!
//! ```text
//! K ~ U^L G^{L-1} ... G^{L/2} M^{L/2} (H^{L/2})^* ... (H^{L-1})^* (V^L)^*
//! ```
//!
//! At level `l` the rows are split into `2^l` blocks and the columns into
//! `2^{L-l}` blocks; block `(i, j)` of that partition is the group
//! `i * 2^{L-l} + j` and owns `r` consecutive columns of the factor
//! coordinates. The middle level is compressed by truncated SVDs, and the
//! bases are then merged outwards one level at a time on both sides.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::born::Kernel;
use crate::error::{Error, Result};
use crate::grid::Grids;
use crate::par;
use crate::svd::svd;
use crate::tensor::{read_tensor, write_tensor, Tensor};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Position and shape of one dense block inside a block-sparse matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub row: usize,
    pub col: usize,
    pub nrows: usize,
    pub ncols: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub rows: usize,
    pub cols: usize,
    pub blocks: Vec<BlockSpec>,
}

impl BlockLayout {
    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.nrows * b.ncols).sum()
    }

    fn block_diagonal(n_blocks: usize, nrows: usize, ncols: usize) -> Self {
        BlockLayout {
            rows: n_blocks * nrows,
            cols: n_blocks * ncols,
            blocks: (0..n_blocks)
                .map(|i| BlockSpec {
                    row: i * nrows,
                    col: i * ncols,
                    nrows,
                    ncols,
                })
                .collect(),
        }
    }
}

/// Block shapes of every butterfly factor for given `(L, s1, s2, r)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ButterflyLayout {
    pub levels: usize,
    pub s_rows: usize,
    pub s_cols: usize,
    pub rank: usize,
    pub u: BlockLayout,
    /// `G^l` for `l = L/2 .. L-1`.
    pub g: Vec<BlockLayout>,
    pub m: BlockLayout,
    /// `H^l` for `l = L/2 .. L-1`.
    pub h: Vec<BlockLayout>,
    pub v: BlockLayout,
}

impl ButterflyLayout {
    pub fn new(levels: usize, s_rows: usize, s_cols: usize, rank: usize) -> Result<Self> {
        if levels % 2 != 0 {
            return Err(Error::invalid(format!("butterfly depth L = {levels} must be even")));
        }
        if s_rows == 0 || s_cols == 0 || rank == 0 {
            return Err(Error::invalid("leaf sizes and rank must be positive"));
        }
        let n_groups = 1usize << levels;
        let half = levels / 2;
        let dim = n_groups * rank;
        let transfer = |l: usize| {
            let mut blocks = Vec::with_capacity(n_groups);
            for ip in 0..(1usize << (l + 1)) {
                for jp in 0..(1usize << (levels - l - 1)) {
                    let i = ip / 2;
                    blocks.push(BlockSpec {
                        row: (ip * (1 << (levels - l - 1)) + jp) * rank,
                        col: (i * (1 << (levels - l)) + 2 * jp) * rank,
                        nrows: rank,
                        ncols: 2 * rank,
                    });
                }
            }
            BlockLayout {
                rows: dim,
                cols: dim,
                blocks,
            }
        };
        let side = 1usize << half;
        let mut m_blocks = Vec::with_capacity(n_groups);
        for i in 0..side {
            for j in 0..side {
                m_blocks.push(BlockSpec {
                    row: (i * side + j) * rank,
                    col: (j * side + i) * rank,
                    nrows: rank,
                    ncols: rank,
                });
            }
        }
        Ok(ButterflyLayout {
            levels,
            s_rows,
            s_cols,
            rank,
            u: BlockLayout::block_diagonal(n_groups, s_rows, rank),
            g: (half..levels).map(transfer).collect(),
            m: BlockLayout {
                rows: dim,
                cols: dim,
                blocks: m_blocks,
            },
            h: (half..levels).map(transfer).collect(),
            v: BlockLayout::block_diagonal(n_groups, s_cols, rank),
        })
    }

    pub fn n_rows(&self) -> usize {
        (1 << self.levels) * self.s_rows
    }

    pub fn n_cols(&self) -> usize {
        (1 << self.levels) * self.s_cols
    }

    /// Width of the factor coordinates, `2^L r`.
    pub fn inner_dim(&self) -> usize {
        (1 << self.levels) * self.rank
    }

    pub fn factor_count(&self) -> usize {
        2 + self.g.len() + 1 + self.h.len()
    }

    pub fn nnz(&self) -> usize {
        self.u.nnz()
            + self.v.nnz()
            + self.m.nnz()
            + self.g.iter().chain(&self.h).map(BlockLayout::nnz).sum::<usize>()
    }

    /// The bound `4 (2 s r 2^L + 2 L r^2 2^L)` with `s = max(s1, s2)`.
    pub fn nnz_bound(&self) -> usize {
        let n = 1usize << self.levels;
        let s = self.s_rows.max(self.s_cols);
        4 * (2 * s * self.rank * n + 2 * self.levels * self.rank * self.rank * n)
    }
}

/// Complex block-sparse matrix over a [`BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSparse {
    pub layout: BlockLayout,
    pub blocks: Vec<Array2<Complex64>>,
}

impl BlockSparse {
    pub fn new(layout: BlockLayout, blocks: Vec<Array2<Complex64>>) -> Result<Self> {
        if layout.blocks.len() != blocks.len() {
            return Err(Error::shape(format!(
                "{} blocks for a layout with {}",
                blocks.len(),
                layout.blocks.len()
            )));
        }
        for (spec, b) in layout.blocks.iter().zip(&blocks) {
            if b.dim() != (spec.nrows, spec.ncols) {
                return Err(Error::shape(format!(
                    "block is {:?}, layout expects ({}, {})",
                    b.dim(),
                    spec.nrows,
                    spec.ncols
                )));
            }
        }
        Ok(BlockSparse { layout, blocks })
    }

    pub fn nnz(&self) -> usize {
        self.layout.nnz()
    }

    pub fn rows(&self) -> usize {
        self.layout.rows
    }

    pub fn cols(&self) -> usize {
        self.layout.cols
    }

    /// `A x` or `A^* x` for a matrix of column vectors; adds the multiply-add
    /// count to `flops`.
    pub fn apply(&self, x: ArrayView2<Complex64>, adjoint: bool, flops: &mut u64) -> Array2<Complex64> {
        let (in_dim, out_dim) = if adjoint {
            (self.rows(), self.cols())
        } else {
            (self.cols(), self.rows())
        };
        assert_eq!(x.nrows(), in_dim, "block-sparse apply: dimension mismatch");
        let k = x.ncols();
        let mut out = Array2::from_elem((out_dim, k), ZERO);
        for (spec, b) in self.layout.blocks.iter().zip(&self.blocks) {
            *flops += (spec.nrows * spec.ncols * k) as u64;
            if adjoint {
                let xin = x.slice(s![spec.row..spec.row + spec.nrows, ..]);
                let y = b.t().mapv(|z| z.conj()).dot(&xin);
                let mut o = out.slice_mut(s![spec.col..spec.col + spec.ncols, ..]);
                o += &y;
            } else {
                let xin = x.slice(s![spec.col..spec.col + spec.ncols, ..]);
                let y = b.dot(&xin);
                let mut o = out.slice_mut(s![spec.row..spec.row + spec.nrows, ..]);
                o += &y;
            }
        }
        out
    }

    /// `x A` or `x A^*` for a matrix of row vectors.
    pub fn apply_right(&self, x: ArrayView2<Complex64>, adjoint: bool, flops: &mut u64) -> Array2<Complex64> {
        // x A = (A^T x^T)^T; work on the transpose to reuse the column form
        let (in_dim, out_dim) = if adjoint {
            (self.cols(), self.rows())
        } else {
            (self.rows(), self.cols())
        };
        assert_eq!(x.ncols(), in_dim, "block-sparse right apply: dimension mismatch");
        let k = x.nrows();
        let mut out = Array2::from_elem((k, out_dim), ZERO);
        for (spec, b) in self.layout.blocks.iter().zip(&self.blocks) {
            *flops += (spec.nrows * spec.ncols * k) as u64;
            if adjoint {
                let xin = x.slice(s![.., spec.col..spec.col + spec.ncols]);
                let y = xin.dot(&b.t().mapv(|z| z.conj()));
                let mut o = out.slice_mut(s![.., spec.row..spec.row + spec.nrows]);
                o += &y;
            } else {
                let xin = x.slice(s![.., spec.row..spec.row + spec.nrows]);
                let y = xin.dot(b);
                let mut o = out.slice_mut(s![.., spec.col..spec.col + spec.ncols]);
                o += &y;
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        let mut out = Array2::from_elem((self.rows(), self.cols()), ZERO);
        for (spec, b) in self.layout.blocks.iter().zip(&self.blocks) {
            let mut o = out.slice_mut(s![spec.row..spec.row + spec.nrows, spec.col..spec.col + spec.ncols]);
            o += b;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterflyFactors {
    pub layout: ButterflyLayout,
    pub u: BlockSparse,
    /// `G^l` for `l = L/2 .. L-1`.
    pub g: Vec<BlockSparse>,
    pub m: BlockSparse,
    /// `H^l` for `l = L/2 .. L-1`.
    pub h: Vec<BlockSparse>,
    pub v: BlockSparse,
}

/// One factor of the product together with whether it enters as its adjoint.
pub struct FactorRef<'a> {
    pub name: String,
    pub matrix: &'a BlockSparse,
    pub adjoint: bool,
}

impl ButterflyFactors {
    pub fn levels(&self) -> usize {
        self.layout.levels
    }

    pub fn rank(&self) -> usize {
        self.layout.rank
    }

    /// Factors in product order: `U, G^{L-1}, ..., G^{L/2}, M, H^{L/2}*, ..., H^{L-1}*, V*`.
    pub fn factors(&self) -> Vec<FactorRef<'_>> {
        let half = self.levels() / 2;
        let mut out = vec![FactorRef {
            name: "U".into(),
            matrix: &self.u,
            adjoint: false,
        }];
        for (k, g) in self.g.iter().enumerate().rev() {
            out.push(FactorRef {
                name: format!("G{}", half + k),
                matrix: g,
                adjoint: false,
            });
        }
        out.push(FactorRef {
            name: "M".into(),
            matrix: &self.m,
            adjoint: false,
        });
        for (k, h) in self.h.iter().enumerate() {
            out.push(FactorRef {
                name: format!("H{}", half + k),
                matrix: h,
                adjoint: true,
            });
        }
        out.push(FactorRef {
            name: "V".into(),
            matrix: &self.v,
            adjoint: true,
        });
        out
    }

    pub fn nnz(&self) -> usize {
        self.layout.nnz()
    }

    /// `K x` applied factor by factor, right to left.
    pub fn apply(&self, x: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
        Ok(self.apply_counted(x)?.0)
    }

    /// As [`ButterflyFactors::apply`], also returning the number of complex multiply-adds.
    pub fn apply_counted(&self, x: ArrayView2<Complex64>) -> Result<(Array2<Complex64>, u64)> {
        if x.nrows() != self.layout.n_cols() {
            return Err(Error::shape(format!(
                "input has {} rows, factors expect {}",
                x.nrows(),
                self.layout.n_cols()
            )));
        }
        let mut flops = 0u64;
        let mut y = x.to_owned();
        for f in self.factors().iter().rev() {
            y = f.matrix.apply(y.view(), f.adjoint, &mut flops);
        }
        Ok((y, flops))
    }

    pub fn to_dense(&self) -> Array2<Complex64> {
        let n = self.layout.n_cols();
        let eye = Array2::from_shape_fn((n, n), |(i, j)| if i == j { Complex64::new(1.0, 0.0) } else { ZERO });
        self.apply(eye.view()).expect("identity has matching rows")
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io_at(dir, e))?;
        let mut entries = Vec::new();
        let mut all = vec![("U".to_string(), &self.u)];
        let half = self.levels() / 2;
        all.extend(self.g.iter().enumerate().map(|(k, g)| (format!("G{}", half + k), g)));
        all.push(("M".to_string(), &self.m));
        all.extend(self.h.iter().enumerate().map(|(k, h)| (format!("H{}", half + k), h)));
        all.push(("V".to_string(), &self.v));
        for (name, f) in all {
            let mut files = Vec::new();
            for (b, block) in f.blocks.iter().enumerate() {
                let file = format!("{name}_{b:05}.wbt");
                write_tensor(dir.join(&file), &Tensor::from_complex_array(block)?)?;
                files.push(file);
            }
            entries.push(FactorIndex {
                name,
                layout: f.layout.clone(),
                files,
            });
        }
        let index = ButterflyIndex {
            levels: self.layout.levels,
            s_rows: self.layout.s_rows,
            s_cols: self.layout.s_cols,
            rank: self.layout.rank,
            factors: entries,
        };
        let path = dir.join("index.json");
        fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io_at(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("index.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io_at(&path, e))?;
        let index: ButterflyIndex = serde_json::from_str(&text)?;
        let layout = ButterflyLayout::new(index.levels, index.s_rows, index.s_cols, index.rank)?;
        let mut loaded = Vec::new();
        for entry in &index.factors {
            let blocks = entry
                .files
                .iter()
                .map(|f| {
                    let t = read_tensor(dir.join(f))?;
                    t.to_complex_array()?
                        .into_dimensionality::<ndarray::Ix2>()
                        .map_err(|e| Error::shape(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            loaded.push(BlockSparse::new(entry.layout.clone(), blocks)?);
        }
        let n_transfer = layout.g.len();
        if loaded.len() != 2 * n_transfer + 3 {
            return Err(Error::shape(format!(
                "index lists {} factors, expected {}",
                loaded.len(),
                2 * n_transfer + 3
            )));
        }
        let mut it = loaded.into_iter();
        let u = it.next().expect("U");
        let g: Vec<_> = it.by_ref().take(n_transfer).collect();
        let m = it.next().expect("M");
        let h: Vec<_> = it.by_ref().take(n_transfer).collect();
        let v = it.next().expect("V");
        let f = ButterflyFactors { layout, u, g, m, h, v };
        if f.u.layout != f.layout.u || f.m.layout != f.layout.m || f.v.layout != f.layout.v {
            return Err(Error::shape("factor layouts disagree with the index metadata"));
        }
        Ok(f)
    }
}

#[derive(Serialize, Deserialize)]
struct FactorIndex {
    name: String,
    layout: BlockLayout,
    files: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ButterflyIndex {
    levels: usize,
    s_rows: usize,
    s_cols: usize,
    rank: usize,
    factors: Vec<FactorIndex>,
}

pub fn build_kernel_matrix(omega: f64, grids: &Grids) -> Array2<Complex64> {
    Kernel::new(omega, grids).values
}

fn svd_sorted(a: ArrayView2<Complex64>) -> (Vec<f64>, Array2<Complex64>, Array2<Complex64>) {
    let d = svd(a);
    (d.sigma, d.u, d.v)
}

/// Numerical rank: singular values above `tol` times the largest one.
pub fn numerical_rank(a: ArrayView2<Complex64>, tol: f64) -> usize {
    let (sigma, _, _) = svd_sorted(a);
    match sigma.first() {
        Some(&top) if top > 0.0 => sigma.iter().filter(|&&v| v > tol * top).count(),
        _ => 0,
    }
}

/// Ranks of every block when rows are split `row_splits` ways and columns `col_splits` ways.
pub fn block_ranks(matrix: ArrayView2<Complex64>, row_splits: usize, col_splits: usize, tol: f64) -> Result<Array2<usize>> {
    let (n1, n2) = matrix.dim();
    if row_splits == 0 || col_splits == 0 || n1 % row_splits != 0 || n2 % col_splits != 0 {
        return Err(Error::invalid(format!(
            "cannot split a {n1} x {n2} matrix into {row_splits} x {col_splits} equal blocks"
        )));
    }
    let (br, bc) = (n1 / row_splits, n2 / col_splits);
    let ranks = par::map_range(row_splits * col_splits, |t| {
        let (i, j) = (t / col_splits, t % col_splits);
        numerical_rank(matrix.slice(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]), tol)
    });
    Ok(Array2::from_shape_vec((row_splits, col_splits), ranks).expect("split grid"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRank {
    pub level: usize,
    pub row_splits: usize,
    pub col_splits: usize,
    pub max_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankReport {
    pub depth: usize,
    pub tol: f64,
    pub levels: Vec<LevelRank>,
    pub max_rank: usize,
}

/// Ranks of the balanced partitions `2^l x 2^{depth-l}` for `l = 0..=depth`.
pub fn check_complementary_lowrank(matrix: ArrayView2<Complex64>, depth: usize, tol: f64) -> Result<LowRankReport> {
    let (n1, n2) = matrix.dim();
    let parts = 1usize << depth;
    if n1 % parts != 0 || n2 % parts != 0 {
        return Err(Error::invalid(format!(
            "a {n1} x {n2} matrix does not split into 2^{depth} blocks per side"
        )));
    }
    let levels = (0..=depth)
        .map(|l| {
            let (rs, cs) = (1usize << l, 1usize << (depth - l));
            let ranks = block_ranks(matrix, rs, cs, tol)?;
            Ok(LevelRank {
                level: l,
                row_splits: rs,
                col_splits: cs,
                max_rank: ranks.iter().copied().max().unwrap_or(0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let max_rank = levels.iter().map(|l| l.max_rank).max().unwrap_or(0);
    Ok(LowRankReport {
        depth,
        tol,
        levels,
        max_rank,
    })
}

/// A basis (orthonormal columns, zero-padded to `r`) and the weight of each column.
struct Basis {
    vectors: Array2<Complex64>,
    weights: Vec<f64>,
}

fn truncate(sigma: &[f64], vecs: &Array2<Complex64>, r: usize) -> Basis {
    let rows = vecs.nrows();
    let keep = r.min(vecs.ncols());
    let mut vectors = Array2::from_elem((rows, r), ZERO);
    vectors.slice_mut(s![.., ..keep]).assign(&vecs.slice(s![.., ..keep]));
    let mut weights = vec![0.0; r];
    weights[..keep].copy_from_slice(&sigma[..keep]);
    Basis { vectors, weights }
}

/// Merges level-`h` bases outwards to level `L`. `bases[g]` is indexed by the
/// level-`h` group `a * 2^{L-h} + b` with `a` the block along this side.
/// Returns the transfer blocks of every level (layout order) and the leaf bases.
fn merge_side(mut bases: Vec<Basis>, levels: usize, rank: usize) -> (Vec<Vec<Array2<Complex64>>>, Vec<Array2<Complex64>>) {
    let half = levels / 2;
    let mut transfers = Vec::with_capacity(levels - half);
    for l in half..levels {
        let n_child_b = 1usize << (levels - l - 1);
        let n_parent_b = 1usize << (levels - l);
        let results = par::map_range(1usize << levels, |g| {
            let (ap, bp) = (g / n_child_b, g % n_child_b);
            let (a, t) = (ap / 2, ap % 2);
            let left = &bases[a * n_parent_b + 2 * bp];
            let right = &bases[a * n_parent_b + 2 * bp + 1];
            let rows = left.vectors.nrows() / 2;
            let lt = left.vectors.slice(s![t * rows..(t + 1) * rows, ..]);
            let rt = right.vectors.slice(s![t * rows..(t + 1) * rows, ..]);
            let mut w = Array2::from_elem((rows, 2 * rank), ZERO);
            w.slice_mut(s![.., ..rank]).assign(&lt);
            w.slice_mut(s![.., rank..]).assign(&rt);
            let mut weighted = w.clone();
            for c in 0..rank {
                weighted.column_mut(c).mapv_inplace(|z| z * left.weights[c]);
                weighted.column_mut(rank + c).mapv_inplace(|z| z * right.weights[c]);
            }
            let (sigma, q, _) = svd_sorted(weighted.view());
            let basis = truncate(&sigma, &q, rank);
            let transfer = basis.vectors.t().mapv(|z| z.conj()).dot(&w);
            (basis, transfer)
        });
        let (next, blocks): (Vec<Basis>, Vec<Array2<Complex64>>) = results.into_iter().unzip();
        transfers.push(blocks);
        bases = next;
    }
    let leaves = bases.into_iter().map(|b| b.vectors).collect();
    (transfers, leaves)
}

/// Two-stage butterfly factorisation with fixed rank `rank` per block.
pub fn butterfly_factorize(matrix: ArrayView2<Complex64>, levels: usize, rank: usize) -> Result<ButterflyFactors> {
    let (n1, n2) = matrix.dim();
    let parts = 1usize << levels;
    if levels % 2 != 0 || n1 % parts != 0 || n2 % parts != 0 || n1 == 0 || n2 == 0 {
        return Err(Error::invalid(format!(
            "a {n1} x {n2} matrix is not of the form 2^L s with even L = {levels}"
        )));
    }
    let layout = ButterflyLayout::new(levels, n1 / parts, n2 / parts, rank)?;
    let half = levels / 2;
    let side = 1usize << half;
    let (br, bc) = (n1 / side, n2 / side);
    if rank > br.min(bc) {
        return Err(Error::invalid(format!(
            "rank {rank} exceeds the middle-level block size {}",
            br.min(bc)
        )));
    }
    let middle = par::map_range(side * side, |t| {
        let (i, j) = (t / side, t % side);
        let block = matrix.slice(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
        let (sigma, u, v) = svd_sorted(block);
        (truncate(&sigma, &u, rank), truncate(&sigma, &v, rank))
    });
    let mut m_blocks = vec![Array2::from_elem((rank, rank), ZERO); side * side];
    let mut row_side = Vec::with_capacity(side * side);
    let mut col_side: Vec<Option<Basis>> = (0..side * side).map(|_| None).collect();
    for (t, (ub, vb)) in middle.into_iter().enumerate() {
        let (i, j) = (t / side, t % side);
        let mut sdiag = Array2::from_elem((rank, rank), ZERO);
        for c in 0..rank {
            sdiag[[c, c]] = Complex64::new(ub.weights[c], 0.0);
        }
        // M blocks are listed in U-group order, i * side + j
        m_blocks[t] = sdiag;
        row_side.push(ub);
        col_side[j * side + i] = Some(vb);
    }
    let col_side: Vec<Basis> = col_side.into_iter().map(|b| b.expect("every group filled")).collect();
    let (g_blocks, u_leaves) = merge_side(row_side, levels, rank);
    let (h_blocks, v_leaves) = merge_side(col_side, levels, rank);
    let g = g_blocks
        .into_iter()
        .zip(&layout.g)
        .map(|(b, l)| BlockSparse::new(l.clone(), b))
        .collect::<Result<Vec<_>>>()?;
    let h = h_blocks
        .into_iter()
        .zip(&layout.h)
        .map(|(b, l)| BlockSparse::new(l.clone(), b))
        .collect::<Result<Vec<_>>>()?;
    Ok(ButterflyFactors {
        u: BlockSparse::new(layout.u.clone(), u_leaves)?,
        g,
        m: BlockSparse::new(layout.m.clone(), m_blocks)?,
        h,
        v: BlockSparse::new(layout.v.clone(), v_leaves)?,
        layout,
    })
}

pub fn butterfly_apply(factors: &ButterflyFactors, x: ArrayView2<Complex64>) -> Result<Array2<Complex64>> {
    factors.apply(x)
}

/// One row of Implementation II through the factored kernel:
/// `w diag(K^* Lambda_j K)` with `K` replaced by its butterfly factors.
/// `lam_shifted` must already be `shift_data(Lambda, j)`.
pub fn sandwich_apply(factors: &ButterflyFactors, lam_shifted: &Array2<Complex64>, grids: &Grids) -> Result<Array1<Complex64>> {
    let n = factors.layout.n_rows();
    if lam_shifted.dim() != (n, n) {
        return Err(Error::shape(format!(
            "far field is {:?}, factors expect ({n}, {n})",
            lam_shifted.dim()
        )));
    }
    let mut flops = 0;
    // core = U^* Lambda U
    let mut core = factors.u.apply(lam_shifted.view(), true, &mut flops);
    core = factors.u.apply_right(core.view(), false, &mut flops);
    for g in factors.g.iter().rev() {
        core = g.apply(core.view(), true, &mut flops);
        core = g.apply_right(core.view(), false, &mut flops);
    }
    core = factors.m.apply(core.view(), true, &mut flops);
    core = factors.m.apply_right(core.view(), false, &mut flops);
    for h in &factors.h {
        core = h.apply(core.view(), false, &mut flops);
        core = h.apply_right(core.view(), true, &mut flops);
    }
    // diag(V core V^*) without forming the outer product
    let vc = factors.v.apply(core.view(), false, &mut flops);
    let vd = factors.v.to_dense();
    let w = grids.angular_weight();
    Ok(Array1::from_shape_fn(vc.nrows(), |i| {
        vc.row(i).iter().zip(vd.row(i)).map(|(a, b)| a * b.conj()).sum::<Complex64>() * w
    }))
}
