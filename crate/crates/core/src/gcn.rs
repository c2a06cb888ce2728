//! Graph convolutional network with mask-parametrized layers.
//!
//! All three layers are stored as 2-D tensors so that a single
//! [`ChannelLayout`] describes their group structure:
//!
//! * attention, `n × K·n`: entry `(u, k·n + v)` holds `A^k[v, u]`;
//! * convolution, `K·s × C`: the filters `W^k` stacked vertically;
//! * dense classifier, `n·C × classes`.
//!
//! For a batch of `B` node signals stacked as `(B·s) × n`, the forward pass
//! is `G = U·Att`, a regroup of `G` into `(B·n) × (K·s)`, `Z = f(G'·Conv)`,
//! a row-major reshape to `B × n·C`, and `logits = Z'·Dense`. Per sample
//! this is `f(Σ_k A^k Uᵀ W^k)` followed by the classifier.

use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::mask::{self, BinaryMask, ChannelLayout, LatentLayer, MaskVars, PruneMode};
use crate::tensor::{gemm_acc, gemm_acc_par, Tensor};

pub const ATTENTION: usize = 0;
pub const CONV: usize = 1;
pub const DENSE: usize = 2;
pub const LAYER_NAMES: [&str; 3] = ["attention", "conv", "dense"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected relu, identity or tanh)"
            ))),
        }
    }
}

/// Default uniform init bound. The fan-based bound leaves the wide dense
/// layer with the smallest latents, so the budget removes it first.
pub const DEFAULT_INIT_SCALE: f64 = 0.5;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnConfig {
    /// Graph nodes (joints), `n`.
    pub nodes: usize,
    /// Features per node, `s`.
    pub features: usize,
    /// Attention heads, `K`.
    pub heads: usize,
    /// Convolution filters, `C`.
    pub filters: usize,
    pub classes: usize,
    pub activation: Activation,
    /// Column-wise softmax over each attention head before masking.
    pub attention_softmax: bool,
    /// Which of attention, conv and dense carry masks.
    pub prunable: [bool; 3],
    /// Block grid used for layers without head structure.
    pub block_rows: usize,
    pub block_cols: usize,
    /// Uniform init bound shared by every layer; `None` uses the fan-based
    /// bound of [`GcnConfig::init_bound`].
    pub init_scale: Option<f64>,
}

impl GcnConfig {
    pub fn new(nodes: usize, features: usize, heads: usize, filters: usize, classes: usize) -> Self {
        GcnConfig {
            nodes,
            features,
            heads,
            filters,
            classes,
            activation: Activation::Relu,
            attention_softmax: false,
            prunable: [true; 3],
            block_rows: 4,
            block_cols: 4,
            init_scale: Some(DEFAULT_INIT_SCALE),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("nodes", self.nodes),
            ("features", self.features),
            ("heads", self.heads),
            ("filters", self.filters),
            ("classes", self.classes),
            ("block_rows", self.block_rows),
            ("block_cols", self.block_cols),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if let Some(b) = self.init_scale {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!("init_scale must be positive, got {b}")));
            }
        }
        if self.classes < 2 {
            return Err(Error::Config("at least 2 classes are required".into()));
        }
        Ok(())
    }

    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        let (n, s, k, c) = (self.nodes, self.features, self.heads, self.filters);
        match layer {
            ATTENTION => (n, k * n),
            CONV => (k * s, c),
            DENSE => (n * c, self.classes),
            _ => panic!("layer index {layer} out of range"),
        }
    }

    /// Group structure of each layer. The attention layer splits columns by
    /// head; the convolution layer uses head channels when `K > 1`.
    pub fn layout(&self, layer: usize) -> Result<ChannelLayout> {
        let (rows, cols) = self.layer_shape(layer);
        let (n, k) = (self.nodes, self.heads);
        match layer {
            ATTENTION if k > 1 => {
                let row_spans = even(rows, self.block_rows.min(rows));
                let col_spans = (0..k).map(|h| h * n..(h + 1) * n).collect();
                ChannelLayout::from_spans(rows, cols, row_spans, col_spans)
            }
            CONV if k > 1 && k <= self.filters => ChannelLayout::headed(rows, cols, k),
            DENSE => ChannelLayout::grid(rows, cols, self.block_rows, self.block_cols.min(self.classes)),
            _ => ChannelLayout::grid(rows, cols, self.block_rows, self.block_cols),
        }
    }

    /// Init bound: `init_scale` if set, else `sqrt(6 / (fan_in + fan_out))` using the per-head shape
    /// of attention (`n × n`) and convolution (`s × C`) layers.
    pub fn init_bound(&self, layer: usize) -> f64 {
        if let Some(b) = self.init_scale {
            return b;
        }
        let (fi, fo) = match layer {
            ATTENTION => (self.nodes, self.nodes),
            CONV => (self.features, self.filters),
            _ => self.layer_shape(layer),
        };
        (6.0 / (fi + fo) as f64).sqrt()
    }
}

fn even(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    (0..parts).map(|p| p * len / parts..(p + 1) * len / parts).collect()
}

/// Parameter counts; `prunable` covers only mask-parametrized layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub prunable: usize,
}

impl ParamCount {
    /// Surviving-entry budget `round((1 − rate) · prunable)`.
    pub fn budget(&self, rate: f64) -> usize {
        ((1.0 - rate) * self.prunable as f64).round() as usize
    }
}

#[derive(Debug, Clone)]
pub struct GcnModel {
    pub config: GcnConfig,
    pub layers: Vec<LatentLayer>,
    pub mode: PruneMode,
    pub epoch: usize,
}

/// Handles produced by one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Var,
    pub params: [Var; 3],
    pub masks: [Option<MaskVars>; 3],
}

/// Weights actually used by a forward pass, one per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights(pub [Tensor; 3]);

impl GcnModel {
    pub fn init<R: Rng + ?Sized>(config: GcnConfig, mode: PruneMode, sigma: f64, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(3);
        for l in 0..3 {
            let (r, c) = config.layer_shape(l);
            let latent = Tensor::uniform(r, c, config.init_bound(l), rng);
            layers.push(LatentLayer::new(latent, config.layout(l)?, sigma)?);
        }
        Ok(GcnModel {
            config,
            layers,
            mode,
            epoch: 0,
        })
    }

    pub fn from_tensors(config: GcnConfig, mode: PruneMode, sigma: f64, tensors: [Tensor; 3]) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(3);
        for (l, t) in tensors.into_iter().enumerate() {
            if t.shape() != config.layer_shape(l) {
                return Err(Error::dim(LAYER_NAMES[l], t.shape(), config.layer_shape(l)));
            }
            layers.push(LatentLayer::new(t, config.layout(l)?, sigma)?);
        }
        Ok(GcnModel {
            config,
            layers,
            mode,
            epoch: 0,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.layers[0].sigma()
    }

    pub fn anneal_to(&mut self, sigma: f64) -> Result<()> {
        for l in &mut self.layers {
            l.anneal_to(sigma)?;
        }
        Ok(())
    }

    pub(crate) fn restore_sigma(&mut self, sigma: f64) {
        for l in &mut self.layers {
            l.set_sigma_unchecked(sigma);
        }
    }

    /// Whether layer `l` carries a mask under the model's mode.
    pub fn is_masked(&self, l: usize) -> bool {
        self.mode.is_masked() && self.config.prunable[l]
    }

    pub fn count_params(&self) -> ParamCount {
        let sizes = (0..3).map(|l| {
            let (r, c) = self.config.layer_shape(l);
            (r * c, self.config.prunable[l])
        });
        let (mut total, mut prunable) = (0, 0);
        for (n, p) in sizes {
            total += n;
            if p {
                prunable += n;
            }
        }
        ParamCount { total, prunable }
    }

    fn check_input(&self, x: &Tensor) -> Result<usize> {
        let (s, n) = (self.config.features, self.config.nodes);
        if x.cols() != n || x.rows() % s != 0 {
            return Err(Error::dim("gcn input", x.shape(), (s, n)));
        }
        Ok(x.rows() / s)
    }

    /// Records the masked forward pass on `tape`; latent tensors enter as
    /// trainable leaves.
    pub fn forward_tape(&self, tape: &mut Tape, x: &Tensor) -> Result<Forward> {
        let batch = self.check_input(x)?;
        let xv = tape.constant(x.clone());
        let mut params = Vec::with_capacity(3);
        let mut masks = [None; 3];
        let mut eff = Vec::with_capacity(3);
        for l in 0..3 {
            let layer = &self.layers[l];
            let w = tape.param(layer.latent.clone());
            params.push(w);
            let base = if l == ATTENTION && self.config.attention_softmax {
                let t = tape.transpose(w)?;
                let sm = tape.row_softmax(t)?;
                tape.transpose(sm)?
            } else {
                w
            };
            eff.push(if self.is_masked(l) {
                let m = mask::mode_masks(tape, w, layer, self.mode)?.expect("masked mode");
                masks[l] = Some(m);
                tape.hadamard(base, m.composed)?
            } else {
                base
            });
        }
        let eff: [Var; 3] = eff.try_into().expect("three layers");
        let logits = self.forward_from_weights(tape, xv, batch, eff)?;
        Ok(Forward {
            logits,
            params: params.try_into().expect("three layers"),
            masks,
        })
    }

    /// Forward pass with fixed weights recorded as tape constants.
    pub fn forward_weights_tape(&self, tape: &mut Tape, x: &Tensor, weights: &LayerWeights) -> Result<Var> {
        let batch = self.check_input(x)?;
        let xv = tape.constant(x.clone());
        let eff = [
            tape.constant(weights.0[0].clone()),
            tape.constant(weights.0[1].clone()),
            tape.constant(weights.0[2].clone()),
        ];
        self.forward_from_weights(tape, xv, batch, eff)
    }

    fn forward_from_weights(&self, tape: &mut Tape, x: Var, batch: usize, eff: [Var; 3]) -> Result<Var> {
        let cfg = &self.config;
        let (n, s, k, c) = (cfg.nodes, cfg.features, cfg.heads, cfg.filters);
        let g = tape.matmul(x, eff[ATTENTION])?;
        let g2 = tape.gather(g, batch * n, k * s, regroup_index(batch, s, n, k))?;
        let z = tape.matmul(g2, eff[CONV])?;
        let h = cfg.activation.on_tape(tape, z)?;
        let h2 = tape.reshape(h, batch, n * c)?;
        tape.matmul(h2, eff[DENSE])
    }

    /// Soft effective weights `base ⊙ composed` (or `base` for unmasked
    /// layers), computed exactly as in [`GcnModel::forward_tape`].
    pub fn effective_weights(&self) -> Result<LayerWeights> {
        let mut tape = Tape::new();
        let x = Tensor::zeros(self.config.features, self.config.nodes);
        let fwd = self.forward_tape(&mut tape, &x)?;
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            let base = if l == ATTENTION && self.config.attention_softmax {
                let mut t2 = Tape::new();
                let w = t2.constant(self.layers[l].latent.clone());
                let t = t2.transpose(w)?;
                let sm = t2.row_softmax(t)?;
                let back = t2.transpose(sm)?;
                t2.value(back).clone()
            } else {
                self.layers[l].latent.clone()
            };
            out.push(match fwd.masks[l] {
                Some(m) => base.hadamard(tape.value(m.composed))?,
                None => base,
            });
        }
        Ok(LayerWeights(out.try_into().expect("three layers")))
    }

    /// Soft composed masks of each layer (all ones for unmasked layers).
    pub fn composed_masks(&self) -> Result<[Tensor; 3]> {
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            let (r, c) = self.config.layer_shape(l);
            out.push(if self.is_masked(l) {
                mask::mask_values(&self.layers[l], self.mode)?
                    .expect("masked mode")
                    .composed
            } else {
                Tensor::ones(r, c)
            });
        }
        Ok(out.try_into().expect("three layers"))
    }

    /// Binarized composed masks at `threshold`.
    pub fn binary_masks(&self, threshold: f64) -> Result<[BinaryMask; 3]> {
        let soft = self.composed_masks()?;
        let mut out = Vec::with_capacity(3);
        for (l, m) in soft.iter().enumerate() {
            out.push(if self.is_masked(l) {
                mask::binarize(m, threshold)?
            } else {
                BinaryMask::all_ones(m.rows(), m.cols())
            });
        }
        Ok(out.try_into().expect("three layers"))
    }

    /// Weights of the pruned network: soft effective weights with every
    /// entry whose mask binarizes to 0 removed.
    pub fn deployed_weights(&self, threshold: f64) -> Result<(LayerWeights, [BinaryMask; 3])> {
        let eff = self.effective_weights()?;
        let bins = self.binary_masks(threshold)?;
        let mut out = Vec::with_capacity(3);
        for l in 0..3 {
            out.push(eff.0[l].hadamard(&bins[l].mask)?);
        }
        Ok((LayerWeights(out.try_into().expect("three layers")), bins))
    }

    /// `|1 − kept / prunable|` over the binarized masks of prunable layers.
    pub fn achieved_rate(&self, bins: &[BinaryMask; 3]) -> f64 {
        let prunable = self.count_params().prunable;
        if prunable == 0 {
            return 0.0;
        }
        let kept: usize = (0..3)
            .filter(|&l| self.config.prunable[l])
            .map(|l| bins[l].kept())
            .sum();
        (1.0 - kept as f64 / prunable as f64).abs()
    }

    /// Plain (tape-free) forward pass with the given weights.
    pub fn dense_forward(&self, weights: &LayerWeights, x: &Tensor, parallel: bool) -> Result<Tensor> {
        let batch = self.check_input(x)?;
        for l in 0..3 {
            if weights.0[l].shape() != self.config.layer_shape(l) {
                return Err(Error::dim(LAYER_NAMES[l], weights.0[l].shape(), self.config.layer_shape(l)));
            }
        }
        let cfg = &self.config;
        let (n, s, k, c, classes) = (cfg.nodes, cfg.features, cfg.heads, cfg.filters, cfg.classes);
        let mm = |m: usize, kk: usize, nn: usize, a: &[f64], b: &[f64]| {
            let mut out = vec![0.0; m * nn];
            if parallel {
                gemm_acc_par(m, kk, nn, a, b, &mut out);
            } else {
                gemm_acc(m, kk, nn, a, kk, b, nn, &mut out, nn);
            }
            out
        };
        let g = mm(batch * s, n, k * n, x.data(), weights.0[ATTENTION].data());
        let idx = regroup_index(batch, s, n, k);
        let g2: Vec<f64> = idx.iter().map(|&i| g[i as usize]).collect();
        let mut z = mm(batch * n, k * s, c, &g2, weights.0[CONV].data());
        for v in &mut z {
            *v = cfg.activation.apply(*v);
        }
        let logits = mm(batch, n * c, classes, &z, weights.0[DENSE].data());
        Tensor::new(batch, classes, logits)
    }

    pub fn latents(&self) -> [&Tensor; 3] {
        [&self.layers[0].latent, &self.layers[1].latent, &self.layers[2].latent]
    }
}

/// Flat source index for regrouping `G` (`(B·s) × (K·n)`) into `G'`
/// (`(B·n) × (K·s)`) with `G'[(i,v),(k,f)] = G[(i,f),(k,v)]`.
pub fn regroup_index(batch: usize, s: usize, n: usize, k: usize) -> Arc<[u32]> {
    let mut idx = Vec::with_capacity(batch * n * k * s);
    for i in 0..batch {
        for v in 0..n {
            for h in 0..k {
                for f in 0..s {
                    idx.push(((i * s + f) * k * n + h * n + v) as u32);
                }
            }
        }
    }
    idx.into()
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn predict(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    hits as f64 / labels.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(n: usize, s: usize, k: usize, c: usize, classes: usize) -> GcnConfig {
        let mut cfg = GcnConfig::new(n, s, k, c, classes);
        cfg.block_rows = 2;
        cfg.block_cols = 2;
        cfg
    }

    /// Heads and filters unpacked from the stacked layer tensors.
    fn unpack(model: &GcnModel, w: &LayerWeights) -> (Vec<Tensor>, Vec<Tensor>) {
        let cfg = &model.config;
        let (n, s, k, c) = (cfg.nodes, cfg.features, cfg.heads, cfg.filters);
        let heads = (0..k)
            .map(|h| {
                let mut a = Tensor::zeros(n, n);
                for v in 0..n {
                    for u in 0..n {
                        a.set(v, u, w.0[ATTENTION].get(u, h * n + v));
                    }
                }
                a
            })
            .collect();
        let filters = (0..k)
            .map(|h| {
                let mut f = Tensor::zeros(s, c);
                for r in 0..s {
                    for cc in 0..c {
                        f.set(r, cc, w.0[CONV].get(h * s + r, cc));
                    }
                }
                f
            })
            .collect();
        (heads, filters)
    }

    /// `f(Σ_k A^k Uᵀ W^k)` by scalar loops.
    fn naive_block(heads: &[Tensor], filters: &[Tensor], u: &Tensor, act: Activation) -> Tensor {
        let (s, n) = u.shape();
        let c = filters[0].cols();
        let mut out = Tensor::zeros(n, c);
        for v in 0..n {
            for cc in 0..c {
                let mut acc = 0.0;
                for (a, w) in heads.iter().zip(filters) {
                    for f in 0..s {
                        let mut au = 0.0;
                        for j in 0..n {
                            au += a.get(v, j) * u.get(f, j);
                        }
                        acc += au * w.get(f, cc);
                    }
                }
                out.set(v, cc, act.apply(acc));
            }
        }
        out
    }

    fn block_via_model(model: &GcnModel, w: &LayerWeights, u: &Tensor) -> Tensor {
        // identity classifier over n·C exposes the block output
        let cfg = &model.config;
        let nc = cfg.nodes * cfg.filters;
        let mut probe_cfg = cfg.clone();
        probe_cfg.classes = nc.max(2);
        let mut eye = Tensor::zeros(nc, nc.max(2));
        for i in 0..nc {
            eye.set(i, i, 1.0);
        }
        let probe =
            GcnModel::from_tensors(probe_cfg, PruneMode::None, 1.0, [w.0[0].clone(), w.0[1].clone(), eye.clone()])
                .unwrap();
        let ws = LayerWeights([w.0[0].clone(), w.0[1].clone(), eye]);
        let out = probe.dense_forward(&ws, u, false).unwrap();
        Tensor::new(cfg.nodes, cfg.filters, out.row(0)[..nc].to_vec()).unwrap()
    }

    #[test]
    fn identity_block_returns_transposed_signal() {
        let cfg = {
            let mut c = tiny(3, 3, 1, 3, 2);
            c.activation = Activation::Identity;
            c
        };
        let model = GcnModel::from_tensors(
            cfg,
            PruneMode::None,
            1.0,
            [Tensor::eye(3), Tensor::eye(3), Tensor::zeros(9, 2)],
        )
        .unwrap();
        let u = Tensor::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]).unwrap();
        let w = model.effective_weights().unwrap();
        assert_eq!(block_via_model(&model, &w, &u), u.transpose());
    }

    #[test]
    fn zero_adjacency_gives_activation_of_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = tiny(3, 2, 2, 2, 2);
        let model = GcnModel::from_tensors(
            cfg,
            PruneMode::None,
            1.0,
            [Tensor::zeros(3, 6), Tensor::uniform(4, 2, 1.0, &mut rng), Tensor::zeros(6, 2)],
        )
        .unwrap();
        let u = Tensor::uniform(2, 3, 1.0, &mut rng);
        let w = model.effective_weights().unwrap();
        assert_eq!(block_via_model(&model, &w, &u), Tensor::zeros(3, 2));
    }

    #[test]
    fn block_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = rng.gen_range(1..=5);
            let s = rng.gen_range(1..=4);
            let k = rng.gen_range(1..=3);
            let c = rng.gen_range(1..=4);
            let mut cfg = tiny(n, s, k, c, 2);
            cfg.activation = [Activation::Relu, Activation::Tanh, Activation::Identity][trial % 3];
            let model = GcnModel::init(cfg, PruneMode::Ctf, 2.0, &mut rng).unwrap();
            let w = model.effective_weights().unwrap();
            let u = Tensor::uniform(s, n, 1.0, &mut rng);
            let (heads, filters) = unpack(&model, &w);
            let want = naive_block(&heads, &filters, &u, model.config.activation);
            let got = block_via_model(&model, &w, &u);
            assert!(got.max_abs_diff(&want) < 1e-10, "trial {trial}");
        }
    }

    #[test]
    fn output_shape_and_tape_agree_with_plain_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = GcnModel::init(tiny(4, 3, 2, 3, 3), PruneMode::Ctf, 3.0, &mut rng).unwrap();
        let x = Tensor::uniform(5 * 3, 4, 1.0, &mut rng);
        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &x).unwrap();
        assert_eq!(tape.value(fwd.logits).shape(), (5, 3));
        let plain = model.dense_forward(&model.effective_weights().unwrap(), &x, false).unwrap();
        assert_eq!(&plain, tape.value(fwd.logits));
        let par = model.dense_forward(&model.effective_weights().unwrap(), &x, true).unwrap();
        assert_eq!(plain, par);
        assert!(matches!(
            model.dense_forward(&model.effective_weights().unwrap(), &Tensor::zeros(4, 4), false),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn all_ones_masks_are_bit_identical_to_unpruned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = GcnModel::init(tiny(3, 3, 2, 2, 2), PruneMode::None, 1.0, &mut rng).unwrap();
        let x = Tensor::uniform(6, 3, 1.0, &mut rng);
        let w = model.effective_weights().unwrap();
        let unpruned = model.dense_forward(&w, &x, false).unwrap();
        let ones = LayerWeights([
            w.0[0].hadamard(&Tensor::ones(3, 6)).unwrap(),
            w.0[1].hadamard(&Tensor::ones(6, 2)).unwrap(),
            w.0[2].hadamard(&Tensor::ones(6, 2)).unwrap(),
        ]);
        assert_eq!(model.dense_forward(&ones, &x, false).unwrap(), unpruned);
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut cfg = tiny(3, 2, 2, 2, 2);
        cfg.activation = Activation::Tanh;
        cfg.attention_softmax = true;
        let model = GcnModel::init(cfg, PruneMode::Ctf, 2.0, &mut rng).unwrap();
        let x = Tensor::uniform(2 * 2, 3, 1.0, &mut rng);
        let labels = [0usize, 1];
        let loss = |m: &GcnModel| {
            let mut t = Tape::new();
            let f = m.forward_tape(&mut t, &x).unwrap();
            let l = t.cross_entropy(f.logits, &labels).unwrap();
            t.scalar(l)
        };
        let mut tape = Tape::new();
        let fwd = model.forward_tape(&mut tape, &x).unwrap();
        let l = tape.cross_entropy(fwd.logits, &labels).unwrap();
        tape.backward(l).unwrap();
        for layer in 0..3 {
            let grad = tape.grad(fwd.params[layer]).unwrap().to_vec();
            for i in 0..grad.len() {
                let h = 1e-5;
                let mut p = model.clone();
                p.layers[layer].latent.data_mut()[i] += h;
                let mut m = model.clone();
                m.layers[layer].latent.data_mut()[i] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
                assert!(err < 1e-4, "layer {layer} entry {i}: fd {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn predict_argmax_and_ties() {
        let l = Tensor::from_rows(&[&[0.1, 0.9], &[0.5, 0.5], &[2.0, -1.0]]).unwrap();
        assert_eq!(predict(&l), vec![1, 0, 0]);
        assert_eq!(accuracy(&[1, 0, 1], &[1, 0, 0]), 2.0 / 3.0);
    }

    #[test]
    fn parameter_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // single head, 8 filters, 15 joints, 8 frames, 8 classes
        let cfg = GcnConfig::new(15, 24, 1, 8, 8);
        let m = GcnModel::init(cfg.clone(), PruneMode::Ctf, 1.0, &mut rng).unwrap();
        let want = 15 * 15 + 24 * 8 + 15 * 8 * 8;
        assert_eq!(m.count_params(), ParamCount { total: want, prunable: want });

        let mut none = cfg;
        none.prunable = [false; 3];
        let m = GcnModel::init(none, PruneMode::Ctf, 1.0, &mut rng).unwrap();
        assert_eq!(m.count_params().prunable, 0);

        let desk = GcnModel::init(GcnConfig::new(6, 24, 16, 32, 2), PruneMode::Ctf, 1.0, &mut rng).unwrap();
        assert_eq!(desk.count_params().prunable, 576 + 12288 + 384);
        let pc = ParamCount { total: 1000, prunable: 1000 };
        assert_eq!(pc.budget(0.98), 20);
    }

    #[test]
    fn layouts_follow_head_structure() {
        let cfg = GcnConfig::new(6, 24, 16, 32, 2);
        let att = cfg.layout(ATTENTION).unwrap();
        assert_eq!(att.col_spans().len(), 16);
        assert_eq!(att.row_spans().len(), 4);
        let conv = cfg.layout(CONV).unwrap();
        assert!(conv.is_headed());
        assert_eq!(conv.n_blocks(), 256);
        let dense = cfg.layout(DENSE).unwrap();
        assert_eq!(dense.col_spans().len(), 2);
    }
}
