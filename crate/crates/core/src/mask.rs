//! Coarse-to-fine mask parametrization.
//!
//! A latent tensor `Ŵ` is turned into a mask in three stages:
//!
//! * the fine (band-stop) mask `2·sigmoid(σ·Ŵ²) − 1`, entry-wise;
//! * the coarse mask, the product of three group aggregates of the fine
//!   mask: the mean of the entry's row segment inside its block, the mean
//!   of its column segment inside its block, and the mean of its block;
//! * the composed mask `coarse ⊙ fine`.
//!
//! The effective weight of a pruned layer is `Ŵ ⊙ composed`.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use crate::autodiff::{Grouping, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default binarization threshold for final masks.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Values inside this closed band count as "not yet crisp".
pub const AMBIGUOUS_BAND: (f64, f64) = (0.05, 0.95);

/// Which mask field drives the effective weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PruneMode {
    /// No mask; effective weights are the latent weights.
    None,
    /// Fine mask only (unstructured).
    Fine,
    /// `coarse(fine(Ŵ))` alone (structured).
    Coarse,
    /// `coarse(fine(Ŵ)) ⊙ fine(Ŵ)`.
    Ctf,
}

impl PruneMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneMode::None => "none",
            PruneMode::Fine => "fine",
            PruneMode::Coarse => "coarse",
            PruneMode::Ctf => "ctf",
        }
    }

    pub fn is_masked(self) -> bool {
        self != PruneMode::None
    }

    /// Whether zeros produced by this mode come from group decisions that
    /// an executor may delete structurally.
    pub fn is_structured(self) -> bool {
        matches!(self, PruneMode::Coarse | PruneMode::Ctf)
    }
}

impl FromStr for PruneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PruneMode::None),
            "fine" => Ok(PruneMode::Fine),
            "coarse" => Ok(PruneMode::Coarse),
            "ctf" => Ok(PruneMode::Ctf),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected none, fine, coarse or ctf)"
            ))),
        }
    }
}

impl std::fmt::Display for PruneMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug)]
struct LayoutGroups {
    row: Arc<Grouping>,
    col: Arc<Grouping>,
    block: Arc<Grouping>,
}

/// Partition of a `rows × cols` tensor into contiguous row spans and column
/// spans. Every (row span, column span) rectangle is a block; block ids are
/// `row_span * n_col_spans + col_span`.
#[derive(Debug, Clone)]
pub struct ChannelLayout {
    rows: usize,
    cols: usize,
    row_spans: Vec<Range<usize>>,
    col_spans: Vec<Range<usize>>,
    row_span_of: Vec<u32>,
    col_span_of: Vec<u32>,
    headed: bool,
    groups: Arc<LayoutGroups>,
}

impl PartialEq for ChannelLayout {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.row_spans == other.row_spans
            && self.col_spans == other.col_spans
            && self.headed == other.headed
    }
}

impl ChannelLayout {
    pub fn from_spans(
        rows: usize,
        cols: usize,
        row_spans: Vec<Range<usize>>,
        col_spans: Vec<Range<usize>>,
    ) -> Result<Self> {
        check_partition("row", rows, &row_spans)?;
        check_partition("column", cols, &col_spans)?;
        let row_span_of = span_index(rows, &row_spans);
        let col_span_of = span_index(cols, &col_spans);
        let (nrs, ncs) = (row_spans.len() as u32, col_spans.len() as u32);

        let mut row_ids = Vec::with_capacity(rows * cols);
        let mut col_ids = Vec::with_capacity(rows * cols);
        let mut block_ids = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let (ri, ci) = (row_span_of[i], col_span_of[j]);
                row_ids.push(i as u32 * ncs + ci);
                col_ids.push(j as u32 * nrs + ri);
                block_ids.push(ri * ncs + ci);
            }
        }
        Ok(ChannelLayout {
            rows,
            cols,
            row_spans,
            col_spans,
            row_span_of,
            col_span_of,
            headed: false,
            groups: Arc::new(LayoutGroups {
                row: Arc::new(Grouping::new(row_ids)),
                col: Arc::new(Grouping::new(col_ids)),
                block: Arc::new(Grouping::new(block_ids)),
            }),
        })
    }

    /// Whole tensor as one block.
    pub fn single(rows: usize, cols: usize) -> Result<Self> {
        Self::grid(rows, cols, 1, 1)
    }

    /// `row_blocks × col_blocks` grid of near-equal spans, clamped to the
    /// tensor shape.
    pub fn grid(rows: usize, cols: usize, row_blocks: usize, col_blocks: usize) -> Result<Self> {
        if row_blocks == 0 || col_blocks == 0 {
            return Err(Error::Config("block grid needs at least one span per axis".into()));
        }
        Self::from_spans(
            rows,
            cols,
            even_spans(rows, row_blocks.min(rows)),
            even_spans(cols, col_blocks.min(cols)),
        )
    }

    /// Multi-head layout: `heads` row spans and `heads` column spans; the
    /// diagonal blocks are the channels.
    pub fn headed(rows: usize, cols: usize, heads: usize) -> Result<Self> {
        if heads == 0 || heads > rows || heads > cols {
            return Err(Error::Config(format!(
                "cannot split a {rows}x{cols} tensor into {heads} head channels"
            )));
        }
        let mut layout = Self::from_spans(rows, cols, even_spans(rows, heads), even_spans(cols, heads))?;
        layout.headed = true;
        Ok(layout)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row_spans(&self) -> &[Range<usize>] {
        &self.row_spans
    }

    pub fn col_spans(&self) -> &[Range<usize>] {
        &self.col_spans
    }

    pub fn is_headed(&self) -> bool {
        self.headed
    }

    pub fn n_blocks(&self) -> usize {
        self.row_spans.len() * self.col_spans.len()
    }

    pub fn block_of(&self, row: usize, col: usize) -> usize {
        self.row_span_of[row] as usize * self.col_spans.len() + self.col_span_of[col] as usize
    }

    pub fn block_rect(&self, block: usize) -> (Range<usize>, Range<usize>) {
        let ncs = self.col_spans.len();
        (
            self.row_spans[block / ncs].clone(),
            self.col_spans[block % ncs].clone(),
        )
    }

    /// Diagonal blocks of a headed layout (one per head).
    pub fn is_channel(&self, block: usize) -> bool {
        let ncs = self.col_spans.len();
        self.headed && block / ncs == block % ncs
    }

    pub fn row_groups(&self) -> Arc<Grouping> {
        self.groups.row.clone()
    }

    pub fn col_groups(&self) -> Arc<Grouping> {
        self.groups.col.clone()
    }

    pub fn block_groups(&self) -> Arc<Grouping> {
        self.groups.block.clone()
    }

    fn check_shape(&self, t: &Tensor, op: &'static str) -> Result<()> {
        if t.shape() != self.shape() {
            return Err(Error::dim(op, t.shape(), self.shape()));
        }
        Ok(())
    }
}

fn even_spans(len: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts).map(|p| p * len / parts..(p + 1) * len / parts).collect()
}

fn check_partition(axis: &str, len: usize, spans: &[Range<usize>]) -> Result<()> {
    if len == 0 {
        return Err(Error::Config(format!("{axis} count must be positive")));
    }
    let mut next = 0;
    for s in spans {
        if s.start != next || s.end <= s.start {
            return Err(Error::Config(format!(
                "{axis} spans must be non-empty and contiguous, got {spans:?}"
            )));
        }
        next = s.end;
    }
    if next != len {
        return Err(Error::Config(format!(
            "{axis} spans {spans:?} do not cover 0..{len}"
        )));
    }
    Ok(())
}

fn span_index(len: usize, spans: &[Range<usize>]) -> Vec<u32> {
    let mut of = vec![0u32; len];
    for (k, s) in spans.iter().enumerate() {
        of[s.clone()].fill(k as u32);
    }
    of
}

/// Latent weights of one prunable layer plus its group structure and the
/// current crispness scale.
#[derive(Debug, Clone)]
pub struct LatentLayer {
    pub latent: Tensor,
    pub layout: ChannelLayout,
    sigma: f64,
}

impl LatentLayer {
    pub fn new(latent: Tensor, layout: ChannelLayout, sigma: f64) -> Result<Self> {
        layout.check_shape(&latent, "latent layer")?;
        check_sigma(sigma)?;
        Ok(LatentLayer { latent, layout, sigma })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Raises σ; σ never decreases during a run.
    pub fn anneal_to(&mut self, sigma: f64) -> Result<()> {
        check_sigma(sigma)?;
        if sigma < self.sigma {
            return Err(Error::Contract(format!(
                "sigma must not decrease ({} -> {sigma})",
                self.sigma
            )));
        }
        self.sigma = sigma;
        Ok(())
    }

    pub(crate) fn set_sigma_unchecked(&mut self, sigma: f64) {
        self.sigma = sigma;
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("sigma must be positive and finite, got {sigma}")));
    }
    Ok(())
}

/// Fine, coarse and composed mask values of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTriple {
    pub fine: Tensor,
    pub coarse: Tensor,
    pub composed: Tensor,
}

/// Tape handles of the three mask fields.
#[derive(Debug, Clone, Copy)]
pub struct MaskVars {
    pub fine: Var,
    pub coarse: Var,
    pub composed: Var,
}

impl MaskVars {
    pub fn values(&self, tape: &Tape) -> MaskTriple {
        MaskTriple {
            fine: tape.value(self.fine).clone(),
            coarse: tape.value(self.coarse).clone(),
            composed: tape.value(self.composed).clone(),
        }
    }
}

/// `2·sigmoid(σ·w²) − 1`, entry-wise.
pub fn fine_mask(tape: &mut Tape, latent: Var, sigma: f64) -> Result<Var> {
    check_sigma(sigma)?;
    let sq = tape.square(latent)?;
    let scaled = tape.scale(sq, sigma)?;
    let s = tape.sigmoid(scaled)?;
    let doubled = tape.scale(s, 2.0)?;
    tape.sub_scalar(doubled, 1.0)
}

/// Product of the row-segment, column-segment and block means of `fine`.
pub fn coarse_mask(tape: &mut Tape, fine: Var, layout: &ChannelLayout) -> Result<Var> {
    layout.check_shape(tape.value(fine), "coarse_mask")?;
    let r = tape.group_mean(fine, layout.row_groups())?;
    let c = tape.group_mean(fine, layout.col_groups())?;
    let b = tape.group_mean(fine, layout.block_groups())?;
    let rc = tape.hadamard(r, c)?;
    tape.hadamard(rc, b)
}

/// Mask fields for `mode`; `None` for unmasked layers.
///
/// In fine mode the coarse field is a constant all-ones tensor, and in
/// coarse mode the composed field is the coarse mask itself.
pub fn mode_masks(
    tape: &mut Tape,
    latent: Var,
    layer: &LatentLayer,
    mode: PruneMode,
) -> Result<Option<MaskVars>> {
    layer.layout.check_shape(tape.value(latent), "mode_masks")?;
    let vars = match mode {
        PruneMode::None => return Ok(None),
        PruneMode::Fine => {
            let fine = fine_mask(tape, latent, layer.sigma)?;
            let (r, c) = layer.layout.shape();
            let coarse = tape.constant(Tensor::ones(r, c));
            MaskVars {
                fine,
                coarse,
                composed: fine,
            }
        }
        PruneMode::Coarse => {
            let fine = fine_mask(tape, latent, layer.sigma)?;
            let coarse = coarse_mask(tape, fine, &layer.layout)?;
            MaskVars {
                fine,
                coarse,
                composed: coarse,
            }
        }
        PruneMode::Ctf => {
            let fine = fine_mask(tape, latent, layer.sigma)?;
            let coarse = coarse_mask(tape, fine, &layer.layout)?;
            let composed = tape.hadamard(coarse, fine)?;
            MaskVars {
                fine,
                coarse,
                composed,
            }
        }
    };
    Ok(Some(vars))
}

/// Full coarse-to-fine mask on the tape.
pub fn ctf_mask_vars(tape: &mut Tape, latent: Var, layer: &LatentLayer) -> Result<MaskVars> {
    Ok(mode_masks(tape, latent, layer, PruneMode::Ctf)?.expect("ctf is masked"))
}

/// Coarse-to-fine mask values for a layer.
pub fn ctf_mask(layer: &LatentLayer) -> Result<MaskTriple> {
    mask_values(layer, PruneMode::Ctf).map(|m| m.expect("ctf is masked"))
}

/// Mask values for `mode`, evaluated on a scratch tape.
pub fn mask_values(layer: &LatentLayer, mode: PruneMode) -> Result<Option<MaskTriple>> {
    let mut tape = Tape::new();
    let latent = tape.constant(layer.latent.clone());
    Ok(mode_masks(&mut tape, latent, layer, mode)?.map(|m| m.values(&tape)))
}

pub fn fine_mask_values(latent: &Tensor, sigma: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(latent.clone());
    let f = fine_mask(&mut tape, v, sigma)?;
    Ok(tape.value(f).clone())
}

pub fn coarse_mask_values(fine: &Tensor, layout: &ChannelLayout) -> Result<Tensor> {
    let mut tape = Tape::new();
    let v = tape.constant(fine.clone());
    let c = coarse_mask(&mut tape, v, layout)?;
    Ok(tape.value(c).clone())
}

/// `Ŵ ⊙ composed`.
pub fn effective_weights(layer: &LatentLayer, mask: &MaskTriple) -> Result<Tensor> {
    layer.latent.hadamard(&mask.composed)
}

/// Geometric σ schedule from `sigma0` at epoch 0 to `sigma_max` at
/// `total_epochs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSchedule {
    pub sigma0: f64,
    pub sigma_max: f64,
    pub total_epochs: usize,
}

impl SigmaSchedule {
    pub fn new(sigma0: f64, sigma_max: f64, total_epochs: usize) -> Result<Self> {
        let s = SigmaSchedule {
            sigma0,
            sigma_max,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0 > 0.0 && self.sigma0 <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::Config(format!(
                "sigma schedule needs 0 < sigma0 <= sigma_max, got {} and {}",
                self.sigma0, self.sigma_max
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::Config("sigma schedule needs total_epochs >= 1".into()));
        }
        Ok(())
    }

    pub fn at(&self, epoch: usize) -> Result<f64> {
        self.validate()?;
        if epoch > self.total_epochs {
            return Err(Error::Config(format!(
                "epoch {epoch} beyond schedule length {}",
                self.total_epochs
            )));
        }
        if epoch == 0 {
            return Ok(self.sigma0);
        }
        if epoch == self.total_epochs {
            return Ok(self.sigma_max);
        }
        let t = epoch as f64 / self.total_epochs as f64;
        let s = self.sigma0 * (self.sigma_max / self.sigma0).powf(t);
        Ok(s.clamp(self.sigma0, self.sigma_max))
    }
}

/// Hard 0/1 mask plus a crispness diagnostic of the soft mask it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub mask: Tensor,
    /// Fraction of soft entries inside [`AMBIGUOUS_BAND`].
    pub ambiguous_fraction: f64,
}

impl BinaryMask {
    pub fn kept(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn all_ones(rows: usize, cols: usize) -> Self {
        BinaryMask {
            mask: Tensor::ones(rows, cols),
            ambiguous_fraction: 0.0,
        }
    }
}

pub fn binarize(mask: &Tensor, threshold: f64) -> Result<BinaryMask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if let Some(v) = mask.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("mask value {v} outside [0, 1]")));
    }
    let (lo, hi) = AMBIGUOUS_BAND;
    let ambiguous = mask.data().iter().filter(|&&v| v >= lo && v <= hi).count();
    Ok(BinaryMask {
        mask: mask.map(|v| if v >= threshold { 1.0 } else { 0.0 }),
        ambiguous_fraction: ambiguous as f64 / mask.len() as f64,
    })
}

/// Text grid: a `rows cols` header line, then one line per row of
/// space-separated values. Binary grids hold `0`/`1`; real grids hold
/// round-trippable decimals.
pub fn format_mask(mask: &Tensor, binary: bool) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", mask.rows(), mask.cols());
    for r in 0..mask.rows() {
        for (c, &v) in mask.row(r).iter().enumerate() {
            if c > 0 {
                out.push(' ');
            }
            if binary {
                match v {
                    0.0 => out.push('0'),
                    1.0 => out.push('1'),
                    _ => return Err(Error::Input(format!("non-binary mask value {v} at ({r}, {c})"))),
                }
            } else {
                let _ = write!(out, "{v:?}");
            }
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_mask(text: &str) -> Result<Tensor> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Format {
        line: 1,
        msg: "empty mask file".into(),
    })?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Format {
            line: 1,
            msg: format!("bad header '{header}': {e}"),
        })?;
    let [rows, cols] = dims[..] else {
        return Err(Error::Format {
            line: 1,
            msg: format!("header must be 'rows cols', got '{header}'"),
        });
    };
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Format {
                line: lineno,
                msg: format!("bad value '{tok}'"),
            })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Format {
                line: lineno,
                msg: format!("expected {cols} values, got {}", data.len() - before),
            });
        }
        seen += 1;
    }
    if seen != rows {
        return Err(Error::Format {
            line: seen + 1,
            msg: format!("expected {rows} rows, got {seen}"),
        });
    }
    Tensor::new(rows, cols, data).map_err(|e| Error::Format {
        line: 1,
        msg: e.to_string(),
    })
}

pub fn write_mask_file(path: &Path, mask: &Tensor, binary: bool) -> Result<()> {
    std::fs::write(path, format_mask(mask, binary)?).map_err(|e| Error::io(path, e))
}

pub fn read_mask_file(path: &Path) -> Result<Tensor> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mask(&text)
}
