//! Structured-sparsity analysis, compaction of masked models into smaller
//! dense kernels, and inference benchmarks.
//!
//! A compact layer keeps the surviving rows and columns of a weight matrix.
//! Dense-enough columns go into a contiguous core matrix; the remaining
//! surviving entries are applied as a coordinate list after the core
//! product. Entries whose row or column was removed because a neighbouring
//! layer never reads or feeds them are kept aside so the original weights
//! can still be reconstructed exactly.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::gcn::{Activation, GcnConfig, GcnModel, LayerWeights, ATTENTION, CONV, DENSE, LAYER_NAMES};
use crate::mask::ChannelLayout;
use crate::tensor::{gemm_acc, gemm_acc_par, Tensor};

/// A compact column with at most this share of non-zeros (relative to the
/// kept rows) is executed from the coordinate list instead of the core.
pub const RESIDUAL_DENSITY: f64 = 0.25;

/// Classification of the zeros of one binary mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSummary {
    pub shape: (usize, usize),
    /// Blocks whose entries are all zero.
    pub dead_blocks: Vec<usize>,
    /// Fully-zero columns not already covered by dead blocks.
    pub dead_cols: Vec<usize>,
    /// Fully-zero rows not already covered by dead blocks or columns.
    pub dead_rows: Vec<usize>,
    /// Surviving entries lying in partially alive rows or columns.
    pub residual_entries: Vec<(usize, usize)>,
    pub zeros_in_blocks: usize,
    pub zeros_in_cols: usize,
    pub zeros_in_rows: usize,
    /// Zeros not explained by any structured group.
    pub residual_zeros: usize,
}

impl LayerSummary {
    pub fn zeros(&self) -> usize {
        self.zeros_in_blocks + self.zeros_in_cols + self.zeros_in_rows + self.residual_zeros
    }

    pub fn structured_zeros(&self) -> usize {
        self.zeros_in_blocks + self.zeros_in_cols + self.zeros_in_rows
    }

    /// True when the mask keeps every entry.
    pub fn no_pruning(&self) -> bool {
        self.zeros() == 0
    }

    /// Share of zeros removed by block, column or row deletion; 0 when
    /// nothing was pruned (see [`LayerSummary::no_pruning`]).
    pub fn structured_fraction(&self) -> f64 {
        structured_fraction(std::slice::from_ref(self))
    }
}

/// Pooled structured fraction over several layers.
pub fn structured_fraction(summaries: &[LayerSummary]) -> f64 {
    let zeros: usize = summaries.iter().map(LayerSummary::zeros).sum();
    if zeros == 0 {
        return 0.0;
    }
    summaries.iter().map(LayerSummary::structured_zeros).sum::<usize>() as f64 / zeros as f64
}

/// Greedy zero classification in priority order: blocks, then columns,
/// then rows; whatever remains is residual.
pub fn analyze_mask(mask: &Tensor, layout: &ChannelLayout) -> Result<LayerSummary> {
    if mask.shape() != layout.shape() {
        return Err(Error::dim("analyze_mask", mask.shape(), layout.shape()));
    }
    if let Some(v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input(format!("mask is not binary (found {v})")));
    }
    let (rows, cols) = mask.shape();
    let zero = |r: usize, c: usize| mask.get(r, c) == 0.0;

    let dead_blocks: Vec<usize> = (0..layout.n_blocks())
        .filter(|&b| {
            let (rr, cr) = layout.block_rect(b);
            rr.clone().all(|r| cr.clone().all(|c| zero(r, c)))
        })
        .collect();
    let mut in_block = vec![false; rows * cols];
    for &b in &dead_blocks {
        let (rr, cr) = layout.block_rect(b);
        for r in rr {
            for c in cr.clone() {
                in_block[r * cols + c] = true;
            }
        }
    }

    let col_zero: Vec<bool> = (0..cols).map(|c| (0..rows).all(|r| zero(r, c))).collect();
    let row_zero: Vec<bool> = (0..rows).map(|r| (0..cols).all(|c| zero(r, c))).collect();
    let dead_cols: Vec<usize> = (0..cols)
        .filter(|&c| col_zero[c] && (0..rows).any(|r| !in_block[r * cols + c]))
        .collect();
    let dead_rows: Vec<usize> = (0..rows)
        .filter(|&r| row_zero[r] && (0..cols).any(|c| !in_block[r * cols + c] && !col_zero[c]))
        .collect();

    let mut s = LayerSummary {
        shape: (rows, cols),
        dead_blocks,
        dead_cols,
        dead_rows,
        residual_entries: Vec::new(),
        zeros_in_blocks: 0,
        zeros_in_cols: 0,
        zeros_in_rows: 0,
        residual_zeros: 0,
    };
    for r in 0..rows {
        for c in 0..cols {
            if !zero(r, c) {
                if (0..cols).any(|j| zero(r, j)) || (0..rows).any(|i| zero(i, c)) {
                    s.residual_entries.push((r, c));
                }
            } else if in_block[r * cols + c] {
                s.zeros_in_blocks += 1;
            } else if col_zero[c] {
                s.zeros_in_cols += 1;
            } else if row_zero[r] {
                s.zeros_in_rows += 1;
            } else {
                s.residual_zeros += 1;
            }
        }
    }
    Ok(s)
}

/// Summaries for the three binary masks of a model.
pub fn analyze_model(config: &GcnConfig, masks: &[Tensor; 3]) -> Result<[LayerSummary; 3]> {
    let mut out = Vec::with_capacity(3);
    for (l, m) in masks.iter().enumerate() {
        out.push(analyze_mask(m, &config.layout(l)?)?);
    }
    Ok(out.try_into().expect("three layers"))
}

/// One weight matrix restricted to kept rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactLayer {
    pub shape: (usize, usize),
    /// Original row index of each compact row.
    pub rows: Vec<usize>,
    /// Original column index of each compact column.
    pub cols: Vec<usize>,
    /// Compact column indices stored densely in `core`, ascending.
    pub core_cols: Vec<usize>,
    /// Row-major `rows.len() × core_cols.len()` dense core (may be empty).
    pub core: Vec<f64>,
    /// `(compact row, compact col, value)` for columns outside the core.
    pub residual: Vec<(usize, usize, f64)>,
    /// Non-zero `(row, col, value)` entries, in original coordinates, whose
    /// row or column was removed; they never influence the output.
    pub detached: Vec<(usize, usize, f64)>,
}

impl CompactLayer {
    /// Keeps the given rows and columns of `w`.
    pub fn build(w: &Tensor, rows: Vec<usize>, cols: Vec<usize>) -> Result<Self> {
        let (r0, c0) = w.shape();
        let ascending = |v: &[usize], lim: usize| v.windows(2).all(|p| p[0] < p[1]) && v.last().map_or(true, |&x| x < lim);
        if !ascending(&rows, r0) || !ascending(&cols, c0) {
            return Err(Error::Contract("compact index maps must be ascending and in range".into()));
        }
        let mut row_kept = vec![false; r0];
        let mut col_kept = vec![false; c0];
        rows.iter().for_each(|&r| row_kept[r] = true);
        cols.iter().for_each(|&c| col_kept[c] = true);

        let mut core_cols = Vec::new();
        let mut residual = Vec::new();
        for (cc, &c) in cols.iter().enumerate() {
            let nnz = rows.iter().filter(|&&r| w.get(r, c) != 0.0).count();
            if (nnz as f64) <= RESIDUAL_DENSITY * rows.len() as f64 {
                for (rr, &r) in rows.iter().enumerate() {
                    let v = w.get(r, c);
                    if v != 0.0 {
                        residual.push((rr, cc, v));
                    }
                }
            } else {
                core_cols.push(cc);
            }
        }
        let mut core = Vec::with_capacity(rows.len() * core_cols.len());
        for &r in &rows {
            core.extend(core_cols.iter().map(|&cc| w.get(r, cols[cc])));
        }
        let mut detached = Vec::new();
        for r in 0..r0 {
            for c in 0..c0 {
                let v = w.get(r, c);
                if v != 0.0 && !(row_kept[r] && col_kept[c]) {
                    detached.push((r, c, v));
                }
            }
        }
        Ok(CompactLayer {
            shape: (r0, c0),
            rows,
            cols,
            core_cols,
            core,
            residual,
            detached,
        })
    }

    /// Drops the all-zero rows and columns of `w`.
    pub fn from_weights(w: &Tensor) -> Result<Self> {
        let (r0, c0) = w.shape();
        let rows = (0..r0).filter(|&r| w.row(r).iter().any(|&v| v != 0.0)).collect();
        let cols = (0..c0).filter(|&c| (0..r0).any(|r| w.get(r, c) != 0.0)).collect();
        Self::build(w, rows, cols)
    }

    /// The dense core as a tensor, `None` when every column is residual.
    pub fn core_tensor(&self) -> Option<Tensor> {
        if self.core.is_empty() {
            return None;
        }
        Tensor::new(self.rows.len(), self.core_cols.len(), self.core.clone()).ok()
    }

    pub fn compact_shape(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    /// True when no row or column was removed.
    pub fn is_full(&self) -> bool {
        self.compact_shape() == self.shape
    }

    /// Rebuilds the original matrix.
    pub fn expand(&self) -> Tensor {
        let mut w = Tensor::zeros(self.shape.0, self.shape.1);
        for (rr, &r) in self.rows.iter().enumerate() {
            for (k, &cc) in self.core_cols.iter().enumerate() {
                w.set(r, self.cols[cc], self.core[rr * self.core_cols.len() + k]);
            }
        }
        for &(rr, cc, v) in &self.residual {
            w.set(self.rows[rr], self.cols[cc], v);
        }
        for &(r, c, v) in &self.detached {
            w.set(r, c, v);
        }
        w
    }

    /// `x · W` on compact coordinates: `x` is `m × rows.len()`, the result
    /// `m × cols.len()`.
    pub fn apply(&self, x: &[f64], m: usize, parallel: bool) -> Vec<f64> {
        let (kr, kc) = self.compact_shape();
        debug_assert_eq!(x.len(), m * kr);
        let nc = self.core_cols.len();
        let mut out = vec![0.0; m * kc];
        if nc == kc {
            matmul_into(m, kr, kc, x, &self.core, &mut out, parallel);
        } else if nc > 0 {
            let mut tmp = vec![0.0; m * nc];
            matmul_into(m, kr, nc, x, &self.core, &mut tmp, parallel);
            for i in 0..m {
                for (k, &cc) in self.core_cols.iter().enumerate() {
                    out[i * kc + cc] = tmp[i * nc + k];
                }
            }
        }
        for &(rr, cc, v) in &self.residual {
            for i in 0..m {
                out[i * kc + cc] += x[i * kr + rr] * v;
            }
        }
        out
    }

    /// `x · W` on original coordinates (`x` is `m × shape.0`).
    pub fn apply_full(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.shape.0 {
            return Err(Error::dim("compact layer", x.shape(), self.shape));
        }
        let m = x.rows();
        let xc: Vec<f64> = (0..m).flat_map(|i| self.rows.iter().map(move |&r| x.get(i, r))).collect();
        let yc = self.apply(&xc, m, false);
        let mut y = Tensor::zeros(m, self.shape.1);
        let kc = self.cols.len();
        for i in 0..m {
            for (cc, &c) in self.cols.iter().enumerate() {
                y.set(i, c, yc[i * kc + cc]);
            }
        }
        Ok(y)
    }

    /// Multiply-add FLOPs for `m` input rows.
    pub fn flops(&self, m: usize) -> u64 {
        2 * m as u64 * (self.core.len() + self.residual.len()) as u64
    }
}

fn matmul_into(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], parallel: bool) {
    if parallel {
        gemm_acc_par(m, k, n, a, b, c);
    } else {
        gemm_acc(m, k, n, a, k, b, n, c, n);
    }
}

/// Compacted GCN: per-layer compact kernels plus the index plumbing that
/// links them.
///
/// The attention layer keeps input nodes `u` and output columns `(h, v)`;
/// the convolution keeps rows `(h, f)` and filters `c`; the classifier keeps
/// rows `(v, c)` for surviving nodes and filters. Only features `f` read by
/// some surviving convolution row are gathered from the input.
#[derive(Debug, Clone)]
pub struct CompactModel {
    pub config: GcnConfig,
    pub layers: [CompactLayer; 3],
    /// Gathered input features.
    pub features: Vec<usize>,
    /// Surviving output nodes.
    pub nodes: Vec<usize>,
    /// For each (compact node, compact conv row): the compact
    /// (feature, attention column) it reads, or `None` when that head's
    /// column was removed for the node.
    regroup: Vec<Option<(u32, u32)>>,
    /// Free-form origin, e.g. the checkpoint digest.
    pub provenance: String,
}

impl CompactModel {
    /// Compacts `weights` (already masked) for the architecture `config`.
    pub fn build(config: &GcnConfig, weights: &LayerWeights, provenance: impl Into<String>) -> Result<Self> {
        config.validate()?;
        for l in 0..3 {
            if weights.0[l].shape() != config.layer_shape(l) {
                return Err(Error::dim(LAYER_NAMES[l], weights.0[l].shape(), config.layer_shape(l)));
            }
        }
        let (n, s, k, c) = (config.nodes, config.features, config.heads, config.filters);
        let [att, conv, dense] = &weights.0;
        let nz = |t: &Tensor, r: usize, col: usize| t.get(r, col) != 0.0;

        // Backward from the classifier.
        let filters: Vec<usize> = (0..c)
            .filter(|&f| (0..k * s).any(|r| nz(conv, r, f)) && (0..n).any(|v| dense.row(v * c + f).iter().any(|&x| x != 0.0)))
            .collect();
        let live_v = |v: usize| filters.iter().any(|&f| dense.row(v * c + f).iter().any(|&x| x != 0.0));
        let conv_row_live = |r: usize| filters.iter().any(|&f| nz(conv, r, f));
        let head_feeds = |h: usize| (0..s).any(|f| conv_row_live(h * s + f));
        // Forward-consistent node and attention-column sets.
        let att_cols: Vec<usize> = (0..k)
            .flat_map(|h| (0..n).map(move |v| (h, v)))
            .filter(|&(h, v)| live_v(v) && head_feeds(h) && (0..n).any(|u| nz(att, u, h * n + v)))
            .map(|(h, v)| h * n + v)
            .collect();
        let nodes: Vec<usize> = (0..n).filter(|&v| att_cols.iter().any(|&col| col % n == v)).collect();
        let head_live = |h: usize| att_cols.iter().any(|&col| col / n == h);
        let conv_rows: Vec<usize> = (0..k * s).filter(|&r| head_live(r / s) && conv_row_live(r)).collect();
        let features: Vec<usize> = (0..s).filter(|&f| conv_rows.iter().any(|&r| r % s == f)).collect();
        let inputs: Vec<usize> = (0..n).filter(|&u| att_cols.iter().any(|&col| nz(att, u, col))).collect();
        if inputs.is_empty() || nodes.is_empty() || filters.is_empty() {
            return Err(Error::Structural(format!(
                "mask disconnects the network ({} input nodes, {} output nodes, {} filters survive)",
                inputs.len(),
                nodes.len(),
                filters.len()
            )));
        }
        let dense_rows: Vec<usize> = nodes.iter().flat_map(|&v| filters.iter().map(move |&f| v * c + f)).collect();

        let att_l = CompactLayer::build(att, inputs, att_cols.clone())?;
        let conv_l = CompactLayer::build(conv, conv_rows.clone(), filters)?;
        let dense_l = CompactLayer::build(dense, dense_rows, (0..config.classes).collect())?;

        let mut f_idx = vec![u32::MAX; s];
        features.iter().enumerate().for_each(|(i, &f)| f_idx[f] = i as u32);
        let mut col_idx = vec![u32::MAX; k * n];
        att_cols.iter().enumerate().for_each(|(i, &col)| col_idx[col] = i as u32);
        let mut regroup = Vec::with_capacity(nodes.len() * conv_rows.len());
        for &v in &nodes {
            for &r in &conv_rows {
                let (h, f) = (r / s, r % s);
                let ci = col_idx[h * n + v];
                regroup.push((ci != u32::MAX).then(|| (f_idx[f], ci)));
            }
        }
        Ok(CompactModel {
            config: config.clone(),
            layers: [att_l, conv_l, dense_l],
            features,
            nodes,
            regroup,
            provenance: provenance.into(),
        })
    }

    /// Compacts the deployed (binarized) weights of `model`.
    pub fn from_model(model: &GcnModel, threshold: f64, provenance: impl Into<String>) -> Result<Self> {
        let (weights, _) = model.deployed_weights(threshold)?;
        Self::build(&model.config, &weights, provenance)
    }

    /// Exact reconstruction of the weights the model was built from.
    pub fn expand(&self) -> LayerWeights {
        LayerWeights([self.layers[0].expand(), self.layers[1].expand(), self.layers[2].expand()])
    }

    /// True when no layer lost a row or column, i.e. the compact kernels
    /// have the original shapes and no real speedup is possible.
    pub fn shapes_unchanged(&self) -> bool {
        self.layers.iter().all(CompactLayer::is_full) && self.features.len() == self.config.features
    }

    pub fn forward(&self, x: &Tensor, parallel: bool) -> Result<Tensor> {
        let cfg = &self.config;
        let (s, n) = (cfg.features, cfg.nodes);
        if x.cols() != n || x.rows() % s != 0 || x.rows() == 0 {
            return Err(Error::dim("compact input", x.shape(), (s, n)));
        }
        let batch = x.rows() / s;
        let [att, conv, dense] = &self.layers;
        let (nf, nu) = (self.features.len(), att.rows.len());
        let na = att.cols.len();
        let (nv, nr) = (self.nodes.len(), conv.rows.len());

        let mut xc = Vec::with_capacity(batch * nf * nu);
        for i in 0..batch {
            for &f in &self.features {
                let row = x.row(i * s + f);
                xc.extend(att.rows.iter().map(|&u| row[u]));
            }
        }
        let g = att.apply(&xc, batch * nf, parallel);

        let mut g2 = vec![0.0; batch * nv * nr];
        for i in 0..batch {
            for (p, slot) in self.regroup.iter().enumerate() {
                if let Some((fi, ci)) = *slot {
                    g2[i * nv * nr + p] = g[(i * nf + fi as usize) * na + ci as usize];
                }
            }
        }
        let mut z = conv.apply(&g2, batch * nv, parallel);
        if cfg.activation != Activation::Identity {
            z.iter_mut().for_each(|v| *v = cfg.activation.apply(*v));
        }
        let logits = dense.apply(&z, batch, parallel);
        Tensor::new(batch, cfg.classes, logits)
    }

    /// Portable text form: a header, the architecture, the gathered feature
    /// and node lists, then per layer its index maps, dense core, residual
    /// and detached coordinate lists.
    pub fn to_text(&self) -> String {
        use std::fmt::Write as _;
        let c = &self.config;
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::from("ctf-prune-compact 1\n");
        let _ = writeln!(s, "provenance={}", self.provenance);
        let _ = writeln!(
            s,
            "nodes={} features={} heads={} filters={} classes={} activation={}",
            c.nodes,
            c.features,
            c.heads,
            c.filters,
            c.classes,
            c.activation.as_str()
        );
        let _ = writeln!(s, "gathered_features {}", list(&self.features));
        let _ = writeln!(s, "output_nodes {}", list(&self.nodes));
        for (name, l) in LAYER_NAMES.iter().zip(&self.layers) {
            let _ = writeln!(s, "layer {name} {} {}", l.shape.0, l.shape.1);
            let _ = writeln!(s, "rows {}", list(&l.rows));
            let _ = writeln!(s, "cols {}", list(&l.cols));
            let _ = writeln!(s, "core_cols {}", list(&l.core_cols));
            let nc = l.core_cols.len();
            let _ = writeln!(s, "core {} {nc}", l.rows.len());
            if nc > 0 {
                for row in l.core.chunks(nc) {
                    let row: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                    let _ = writeln!(s, "{}", row.join(" "));
                }
            }
            for (tag, list) in [("residual", &l.residual), ("detached", &l.detached)] {
                let _ = writeln!(s, "{tag} {}", list.len());
                for (r, cc, v) in list {
                    let _ = writeln!(s, "{r} {cc} {v:?}");
                }
            }
        }
        s
    }

    pub fn flops(&self, batch: usize) -> u64 {
        self.layers[ATTENTION].flops(batch * self.features.len())
            + self.layers[CONV].flops(batch * self.nodes.len())
            + self.layers[DENSE].flops(batch)
    }
}

/// Multiply-add FLOPs of the uncompacted forward pass.
pub fn dense_flops(config: &GcnConfig, batch: usize) -> u64 {
    let (n, s, k, c) = (config.nodes as u64, config.features as u64, config.heads as u64, config.filters as u64);
    let b = batch as u64;
    2 * (b * s * n * k * n + b * n * k * s * c + b * n * c * config.classes as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub dense_ms: f64,
    pub compact_ms: f64,
    pub wallclock_speedup: Option<f64>,
    pub flop_speedup: Option<f64>,
    pub flops_dense: u64,
    pub flops_compact: u64,
    pub parallel: bool,
}

impl BenchResult {
    pub fn wallclock_label(&self) -> String {
        speedup_label(self.wallclock_speedup)
    }

    pub fn flop_label(&self) -> String {
        speedup_label(self.flop_speedup)
    }
}

/// Formats a speedup; `None` prints as `none`.
pub fn speedup_label(s: Option<f64>) -> String {
    s.map_or("none".to_string(), |v| format!("{v:.3}"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub repetitions: usize,
    pub warmup: usize,
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            repetitions: 30,
            warmup: 3,
            parallel: false,
        }
    }
}

fn median_ms(mut f: impl FnMut() -> Result<()>, opts: &BenchOptions) -> Result<f64> {
    for _ in 0..opts.warmup {
        f()?;
    }
    let mut times = Vec::with_capacity(opts.repetitions);
    for _ in 0..opts.repetitions {
        let t0 = Instant::now();
        f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let m = times.len();
    Ok(if m % 2 == 1 { times[m / 2] } else { 0.5 * (times[m / 2 - 1] + times[m / 2]) })
}

/// Median wall-clock (ms) of the dense forward alone.
pub fn time_dense(model: &GcnModel, weights: &LayerWeights, x: &Tensor, opts: &BenchOptions) -> Result<f64> {
    median_ms(
        || {
            std::hint::black_box(model.dense_forward(weights, x, opts.parallel)?);
            Ok(())
        },
        opts,
    )
}

/// Median wall-clock of the masked dense forward (original shapes) versus
/// the compact forward on the batch `x`. Speedups are `None` when the
/// compact kernels kept every original shape.
pub fn benchmark(model: &GcnModel, weights: &LayerWeights, cm: &CompactModel, x: &Tensor, opts: &BenchOptions) -> Result<BenchResult> {
    if opts.repetitions < 10 {
        return Err(Error::Config(format!("benchmark needs at least 10 repetitions, got {}", opts.repetitions)));
    }
    let batch = x.rows() / model.config.features.max(1);
    let dense_ms = time_dense(model, weights, x, opts)?;
    let compact_ms = median_ms(
        || {
            std::hint::black_box(cm.forward(x, opts.parallel)?);
            Ok(())
        },
        opts,
    )?;
    let flops_dense = dense_flops(&model.config, batch);
    let flops_compact = cm.flops(batch);
    let structured = !cm.shapes_unchanged();
    Ok(BenchResult {
        dense_ms,
        compact_ms,
        wallclock_speedup: structured.then(|| dense_ms / compact_ms.max(f64::MIN_POSITIVE)),
        flop_speedup: structured.then(|| flops_dense as f64 / flops_compact.max(1) as f64),
        flops_dense,
        flops_compact,
        parallel: opts.parallel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::PruneMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_masked(cfg: &GcnConfig, keep: f64, rng: &mut ChaCha8Rng) -> LayerWeights {
        let mut ws = Vec::new();
        for l in 0..3 {
            let (r, c) = cfg.layer_shape(l);
            let mut w = Tensor::uniform(r, c, 1.0, rng);
            for v in w.data_mut() {
                if rng.gen::<f64>() > keep {
                    *v = 0.0;
                }
            }
            ws.push(w);
        }
        LayerWeights(ws.try_into().unwrap())
    }

    fn model_for(cfg: &GcnConfig) -> GcnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        GcnModel::init(cfg.clone(), PruneMode::None, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn all_ones_mask_reports_no_pruning() {
        let s = analyze_mask(&Tensor::ones(4, 6), &ChannelLayout::grid(4, 6, 2, 2).unwrap()).unwrap();
        assert!(s.no_pruning());
        assert_eq!(s.structured_fraction(), 0.0);
        assert!(s.dead_blocks.is_empty() && s.dead_rows.is_empty() && s.dead_cols.is_empty());
        assert!(s.residual_entries.is_empty());
    }

    #[test]
    fn zero_block_is_detected() {
        let mut m = Tensor::ones(4, 4);
        for r in 2..4 {
            for c in 0..2 {
                m.set(r, c, 0.0);
            }
        }
        let layout = ChannelLayout::grid(4, 4, 2, 2).unwrap();
        let s = analyze_mask(&m, &layout).unwrap();
        assert_eq!(s.dead_blocks, vec![layout.block_of(2, 0)]);
        assert_eq!((s.zeros_in_blocks, s.residual_zeros), (4, 0));
        assert_eq!(s.structured_fraction(), 1.0);
    }

    #[test]
    fn dead_row_plus_isolated_zero() {
        let mut m = Tensor::ones(4, 4);
        (0..4).for_each(|c| m.set(2, c, 0.0));
        m.set(0, 3, 0.0);
        let s = analyze_mask(&m, &ChannelLayout::single(4, 4).unwrap()).unwrap();
        assert_eq!(s.dead_rows, vec![2]);
        assert!(s.dead_cols.is_empty() && s.dead_blocks.is_empty());
        assert_eq!((s.zeros_in_rows, s.residual_zeros), (4, 1));
        // Survivors sharing a row or column with a zero.
        assert_eq!(s.residual_entries.len(), 11);
        assert!((s.structured_fraction() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn non_binary_and_mismatched_masks_are_rejected() {
        let layout = ChannelLayout::single(2, 2).unwrap();
        assert!(matches!(analyze_mask(&Tensor::full(2, 2, 0.5), &layout), Err(Error::Input(_))));
        assert!(matches!(analyze_mask(&Tensor::ones(2, 3), &layout), Err(Error::Dimension { .. })));
    }

    #[test]
    fn eight_by_eight_core() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut w = Tensor::uniform(8, 8, 1.0, &mut rng);
        for v in w.data_mut() {
            if *v == 0.0 {
                *v = 0.5;
            }
        }
        for &r in &[1, 4, 6] {
            (0..8).for_each(|c| w.set(r, c, 0.0));
        }
        for &c in &[0, 5] {
            (0..8).for_each(|r| w.set(r, c, 0.0));
        }
        let cl = CompactLayer::from_weights(&w).unwrap();
        assert_eq!(cl.core_tensor().unwrap().shape(), (5, 6));
        assert!(cl.residual.is_empty() && cl.detached.is_empty());
        assert_eq!(cl.expand(), w);
        let x = Tensor::uniform(20, 8, 2.0, &mut rng);
        assert!(cl.apply_full(&x).unwrap().max_abs_diff(&x.matmul(&w).unwrap()) < 1e-10);
    }

    #[test]
    fn sparse_columns_run_from_residual_list() {
        let mut w = Tensor::zeros(8, 3);
        (0..8).for_each(|r| w.set(r, 0, r as f64 + 1.0));
        w.set(3, 1, -2.0);
        w.set(5, 2, 0.75);
        let cl = CompactLayer::from_weights(&w).unwrap();
        assert_eq!(cl.core_cols, vec![0]);
        assert_eq!(cl.residual.len(), 2);
        assert_eq!(cl.expand(), w);
        let x = Tensor::from_rows(&[&[1.0, -1.0, 0.5, 2.0, 0.0, 3.0, 1.0, 1.0]]).unwrap();
        assert!(cl.apply_full(&x).unwrap().max_abs_diff(&x.matmul(&w).unwrap()) < 1e-12);
    }

    #[test]
    fn all_residual_layer_is_a_scatter_product() {
        let mut w = Tensor::zeros(6, 6);
        for i in 0..6 {
            w.set(i, (i * 5 + 1) % 6, i as f64 - 2.5);
        }
        let cl = CompactLayer::from_weights(&w).unwrap();
        assert!(cl.core_cols.is_empty() && cl.core_tensor().is_none());
        assert_eq!(cl.residual.len(), 6);
        assert_eq!(cl.expand(), w);
        let x = Tensor::uniform(4, 6, 1.0, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(cl.apply_full(&x).unwrap().max_abs_diff(&x.matmul(&w).unwrap()) < 1e-12);
        assert_eq!(cl.flops(4), 2 * 4 * 6);
    }

    #[test]
    fn unpruned_model_keeps_shapes() {
        let cfg = GcnConfig::new(3, 4, 2, 3, 2);
        let m = model_for(&cfg);
        let w = m.effective_weights().unwrap();
        let cm = CompactModel::build(&cfg, &w, "").unwrap();
        assert!(cm.shapes_unchanged());
        assert_eq!(cm.flops(5), dense_flops(&cfg, 5));
        for l in 0..3 {
            assert_eq!(cm.layers[l].core_tensor().unwrap(), w.0[l]);
        }
    }

    #[test]
    fn dead_filter_shrinks_classifier_input() {
        let cfg = GcnConfig::new(3, 4, 1, 3, 2);
        let m = model_for(&cfg);
        let mut w = m.effective_weights().unwrap();
        (0..4).for_each(|r| w.0[CONV].set(r, 1, 0.0));
        let cm = CompactModel::build(&cfg, &w, "").unwrap();
        assert_eq!(cm.layers[CONV].cols, vec![0, 2]);
        assert_eq!(cm.layers[DENSE].rows.len(), 3 * 2);
        // Classifier rows reading the dead filter are detached, not lost.
        assert_eq!(cm.layers[DENSE].detached.len(), 3 * 2);
        assert_eq!(cm.expand().0[DENSE], w.0[DENSE]);
        let x = Tensor::uniform(12, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(1));
        let want = m.dense_forward(&w, &x, false).unwrap();
        assert!(cm.forward(&x, false).unwrap().max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn disconnected_network_is_structural_error() {
        let cfg = GcnConfig::new(3, 4, 2, 3, 2);
        let m = model_for(&cfg);
        let mut w = m.effective_weights().unwrap();
        w.0[DENSE] = Tensor::zeros(9, 2);
        assert!(matches!(CompactModel::build(&cfg, &w, ""), Err(Error::Structural(_))));
    }

    #[test]
    fn bench_reports_none_for_unchanged_shapes() {
        let cfg = GcnConfig::new(3, 4, 2, 3, 2);
        let m = model_for(&cfg);
        let w = m.effective_weights().unwrap();
        let cm = CompactModel::build(&cfg, &w, "").unwrap();
        let x = Tensor::uniform(8, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let opts = BenchOptions { repetitions: 10, warmup: 1, parallel: false };
        let r = benchmark(&m, &w, &cm, &x, &opts).unwrap();
        assert_eq!((r.wallclock_label(), r.flop_label()), ("none".to_string(), "none".to_string()));
        assert!(benchmark(&m, &w, &cm, &x, &BenchOptions { repetitions: 3, ..opts }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(60))]

        #[test]
        fn compact_forward_matches_masked_dense(
            n in 1usize..5, s in 1usize..5, k in 1usize..4, c in 1usize..5, classes in 2usize..4,
            keep in 0.2f64..1.0, seed in any::<u64>(), parallel in any::<bool>(),
            act in prop_oneof![Just(Activation::Relu), Just(Activation::Tanh), Just(Activation::Identity)],
        ) {
            let mut cfg = GcnConfig::new(n, s, k, c, classes);
            cfg.activation = act;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_masked(&cfg, keep, &mut rng);
            let m = model_for(&cfg);
            match CompactModel::build(&cfg, &w, "") {
                Ok(cm) => {
                    for l in 0..3 {
                        prop_assert_eq!(&cm.expand().0[l], &w.0[l]);
                    }
                    let x = Tensor::uniform(3 * s, n, 1.0, &mut rng);
                    let want = m.dense_forward(&w, &x, false).unwrap();
                    prop_assert!(cm.forward(&x, parallel).unwrap().max_abs_diff(&want) < 1e-9);
                    prop_assert!(cm.flops(3) <= dense_flops(&cfg, 3));
                }
                Err(Error::Structural(_)) => {
                    // Disconnected: the dense output must be identically zero.
                    let x = Tensor::uniform(2 * s, n, 1.0, &mut rng);
                    let out = m.dense_forward(&w, &x, false).unwrap();
                    prop_assert!(out.data().iter().all(|&v| v == 0.0));
                }
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }

        #[test]
        fn zero_accounting_covers_every_entry(
            rows in 1usize..9, cols in 1usize..9, br in 1usize..4, bc in 1usize..4,
            keep in 0.0f64..1.0, seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Tensor::new(rows, cols, (0..rows * cols).map(|_| if rng.gen::<f64>() < keep { 1.0 } else { 0.0 }).collect()).unwrap();
            let s = analyze_mask(&m, &ChannelLayout::grid(rows, cols, br, bc).unwrap()).unwrap();
            let zeros = m.data().iter().filter(|&&v| v == 0.0).count();
            prop_assert_eq!(s.zeros(), zeros);
            let f = s.structured_fraction();
            prop_assert!((0.0..=1.0).contains(&f));
        }
    }
}
