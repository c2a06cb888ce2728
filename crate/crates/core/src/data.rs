//! Skeleton sequences: CSV ingestion, temporal resampling, synthetic
//! generation, stratified splitting and conversion to node-signal matrices.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CSV_HEADER: [&str; 7] = ["sample_id", "frame", "joint", "x", "y", "z", "label"];

/// One labelled sequence; each frame holds `joints × 3` coordinates laid out
/// joint-major (`x0 y0 z0 x1 y1 z1 ...`).
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub id: String,
    pub joints: usize,
    pub frames: Vec<Vec<f64>>,
    pub label: usize,
}

impl SkeletonSequence {
    pub fn new(id: impl Into<String>, joints: usize, frames: Vec<Vec<f64>>, label: usize) -> Result<Self> {
        let seq = SkeletonSequence {
            id: id.into(),
            joints,
            frames,
            label,
        };
        seq.validate()?;
        Ok(seq)
    }

    fn validate(&self) -> Result<()> {
        if self.joints == 0 {
            return Err(Error::Input(format!("sequence {}: zero joints", self.id)));
        }
        for (f, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.joints * 3 {
                return Err(Error::Input(format!(
                    "sequence {} frame {f}: expected {} values, got {}",
                    self.id,
                    self.joints * 3,
                    frame.len()
                )));
            }
            if frame.iter().any(|v| !v.is_finite()) {
                return Err(Error::Input(format!("sequence {} frame {f}: non-finite coordinate", self.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<SkeletonSequence>,
    pub classes: usize,
    pub joints: usize,
    /// Free-text provenance, written as `#` comment lines.
    pub manifest: Vec<String>,
}

impl Dataset {
    pub fn new(sequences: Vec<SkeletonSequence>, classes: usize) -> Result<Self> {
        let joints = sequences
            .first()
            .ok_or_else(|| Error::Input("dataset has no sequences".into()))?
            .joints;
        for s in &sequences {
            if s.joints != joints {
                return Err(Error::Input(format!(
                    "sequence {} has {} joints, dataset has {joints}",
                    s.id, s.joints
                )));
            }
            if s.label >= classes {
                return Err(Error::Input(format!(
                    "sequence {} label {} outside 0..{classes}",
                    s.id, s.label
                )));
            }
            if s.frames.is_empty() {
                return Err(Error::Input(format!("sequence {} has no frames", s.id)));
            }
        }
        Ok(Dataset {
            sequences,
            classes,
            joints,
            manifest: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.sequences.iter().map(|s| s.label).collect()
    }

    /// Node-signal samples for the given sequence indices.
    pub fn samples(&self, indices: &[usize], frames: usize) -> Result<Samples> {
        Samples::from_sequences(indices.iter().map(|&i| &self.sequences[i]), self.joints, frames)
    }

    pub fn all_samples(&self, frames: usize) -> Result<Samples> {
        Samples::from_sequences(self.sequences.iter(), self.joints, frames)
    }
}

/// Linear interpolation along the frame axis to exactly `target` frames.
pub fn resample(frames: &[Vec<f64>], target: usize) -> Result<Vec<Vec<f64>>> {
    if target == 0 {
        return Err(Error::Config("resample target must be at least 1 frame".into()));
    }
    if frames.is_empty() {
        return Err(Error::Input("cannot resample an empty sequence".into()));
    }
    if frames.len() == target {
        return Ok(frames.to_vec());
    }
    let last = frames.len() - 1;
    Ok((0..target)
        .map(|t| {
            if target == 1 || last == 0 {
                return frames[0].clone();
            }
            let pos = (t * last) as f64 / (target - 1) as f64;
            let lo = (pos.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = pos - lo as f64;
            frames[lo]
                .iter()
                .zip(&frames[hi])
                .map(|(&a, &b)| a + frac * (b - a))
                .collect()
        })
        .collect())
}

/// Centres a frame on its joint centroid and scales it to unit RMS radius.
/// Frames whose joints coincide are only centred.
pub fn normalize_frame(frame: &mut [f64]) {
    let joints = frame.len() / 3;
    let mut centroid = [0.0; 3];
    for j in 0..joints {
        for d in 0..3 {
            centroid[d] += frame[j * 3 + d];
        }
    }
    for c in &mut centroid {
        *c /= joints as f64;
    }
    let mut sq = 0.0;
    for j in 0..joints {
        for d in 0..3 {
            frame[j * 3 + d] -= centroid[d];
            sq += frame[j * 3 + d] * frame[j * 3 + d];
        }
    }
    let rms = (sq / joints as f64).sqrt();
    if rms > 1e-12 {
        for v in frame.iter_mut() {
            *v /= rms;
        }
    }
}

/// `s × n` node-signal matrix with `s = 3·frames`: entry `(t·3 + d, j)` is
/// coordinate `d` of joint `j` at resampled, normalized frame `t`.
pub fn node_signal(seq: &SkeletonSequence, frames: usize) -> Result<Tensor> {
    let resampled = resample(&seq.frames, frames)?;
    let n = seq.joints;
    let mut u = Tensor::zeros(3 * frames, n);
    for (t, mut frame) in resampled.into_iter().enumerate() {
        normalize_frame(&mut frame);
        for j in 0..n {
            for d in 0..3 {
                u.set(t * 3 + d, j, frame[j * 3 + d]);
            }
        }
    }
    Ok(u)
}

/// Batch of node signals stacked vertically: sample `i` occupies rows
/// `i·s .. (i+1)·s` of an `(N·s) × n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub signals: Tensor,
    pub labels: Vec<usize>,
    /// Features per node.
    pub features: usize,
    pub nodes: usize,
}

impl Samples {
    fn from_sequences<'a>(
        seqs: impl Iterator<Item = &'a SkeletonSequence>,
        joints: usize,
        frames: usize,
    ) -> Result<Self> {
        let features = 3 * frames;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for seq in seqs {
            data.extend_from_slice(node_signal(seq, frames)?.data());
            labels.push(seq.label);
        }
        if labels.is_empty() {
            return Err(Error::Input("empty sample batch".into()));
        }
        Ok(Samples {
            signals: Tensor::new(labels.len() * features, joints, data)?,
            labels,
            features,
            nodes: joints,
        })
    }

    pub fn from_signals(signals: Tensor, labels: Vec<usize>, features: usize) -> Result<Self> {
        if labels.is_empty() || signals.rows() != labels.len() * features {
            return Err(Error::dim("samples", signals.shape(), (labels.len() * features, signals.cols())));
        }
        let nodes = signals.cols();
        Ok(Samples {
            signals,
            labels,
            features,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Result<Samples> {
        let block = self.features * self.nodes;
        let mut data = Vec::with_capacity(indices.len() * block);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Input(format!("sample index {i} out of range")));
            }
            data.extend_from_slice(&self.signals.data()[i * block..(i + 1) * block]);
        }
        Samples::from_signals(
            Tensor::new(indices.len() * self.features, self.nodes, data)?,
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.features,
        )
    }
}

/// Parameters of the synthetic generator, also recorded in the CSV manifest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub joints: usize,
    pub frames: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn manifest_line(&self) -> String {
        format!(
            "synth classes={} samples_per_class={} joints={} frames={} noise={} seed={}",
            self.classes, self.samples_per_class, self.joints, self.frames, self.noise, self.seed
        )
    }
}

/// Each class gets a smooth prototype trajectory per joint (rest pose plus a
/// sinusoidal motion); samples add i.i.d. Gaussian noise to it.
pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.classes == 0 || spec.samples_per_class == 0 || spec.joints == 0 || spec.frames == 0 {
        return Err(Error::Config("synthetic counts must be positive".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be >= 0, got {}", spec.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (j, tn) = (spec.joints, spec.frames);
    let prototypes: Vec<Vec<Vec<f64>>> = (0..spec.classes)
        .map(|_| {
            let params: Vec<[f64; 4]> = (0..j * 3)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.2..0.8),
                        rng.gen_range(0.5..2.0),
                        rng.gen_range(0.0..std::f64::consts::TAU),
                    ]
                })
                .collect();
            (0..tn)
                .map(|t| {
                    let phase = t as f64 / tn as f64;
                    params
                        .iter()
                        .map(|&[base, amp, freq, off]| {
                            base + amp * (std::f64::consts::TAU * freq * phase + off).sin()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let normal = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
    let mut sequences = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for (label, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let frames = proto
                .iter()
                .map(|frame| {
                    frame
                        .iter()
                        .map(|&v| if spec.noise > 0.0 { v + normal.sample(&mut rng) } else { v })
                        .collect()
                })
                .collect();
            let id = sequences.len().to_string();
            sequences.push(SkeletonSequence::new(id, j, frames, label)?);
        }
    }
    let mut ds = Dataset::new(sequences, spec.classes)?;
    ds.manifest.push(spec.manifest_line());
    Ok(ds)
}

/// Train/test indices into a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified split: each class contributes `round(fraction · n_c)` samples
/// (at least one, leaving at least one) to the training side.
pub fn split(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Split> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes];
    for (i, s) in dataset.sequences.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Split {
        train: Vec::new(),
        test: Vec::new(),
    };
    for (c, mut idx) in by_class.into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Input(format!("class {c} has fewer than 2 samples")));
        }
        idx.shuffle(&mut rng);
        let n_train = ((fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        out.train.extend_from_slice(&idx[..n_train]);
        out.test.extend_from_slice(&idx[n_train..]);
    }
    out.train.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

fn fmt_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Format {
        line: line as usize,
        msg: msg.into(),
    }
}

/// Parses the `sample_id,frame,joint,x,y,z,label` schema. Leading `#` lines
/// are kept as the manifest.
pub fn parse_csv<R: Read>(mut reader: R) -> Result<Dataset> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|e| fmt_err(0, format!("unreadable input: {e}")))?;
    let manifest = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| fmt_err(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        let unknown: Vec<&str> = header.iter().filter(|h| !CSV_HEADER.contains(h)).collect();
        return Err(fmt_err(
            header.position().map_or(1, |p| p.line()),
            format!("header must be {}; unknown columns {unknown:?}", CSV_HEADER.join(",")),
        ));
    }

    struct Partial {
        label: usize,
        frames: Vec<Option<Vec<Option<[f64; 3]>>>>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut partial: HashMap<String, Partial> = HashMap::new();
    let mut joints: Option<usize> = None;
    let mut max_joint = 0usize;
    let mut max_label = 0usize;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| fmt_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| -> Result<usize> {
            field(i)
                .parse()
                .map_err(|_| fmt_err(line, format!("{} '{}' is not a non-negative integer", CSV_HEADER[i], field(i))))
        };
        let real = |i: usize| -> Result<f64> {
            let v: f64 = field(i)
                .parse()
                .map_err(|_| fmt_err(line, format!("{} '{}' is not a number", CSV_HEADER[i], field(i))))?;
            if !v.is_finite() {
                return Err(fmt_err(line, format!("{} is not finite", CSV_HEADER[i])));
            }
            Ok(v)
        };
        let (frame, joint, label) = (int(1)?, int(2)?, int(6)?);
        let xyz = [real(3)?, real(4)?, real(5)?];
        max_joint = max_joint.max(joint);
        max_label = max_label.max(label);
        rows.push((field(0).to_string(), frame, joint, xyz, label, line));
    }
    if rows.is_empty() {
        return Err(fmt_err(1, "no data rows"));
    }

    for (id, frame, joint, xyz, label, line) in rows {
        let p = partial.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Partial {
                label,
                frames: Vec::new(),
            }
        });
        if p.label != label {
            return Err(fmt_err(line, format!("sample {id} changes label {} -> {label}", p.label)));
        }
        if p.frames.len() <= frame {
            p.frames.resize(frame + 1, None);
        }
        let slots = p.frames[frame].get_or_insert_with(|| vec![None; max_joint + 1]);
        if slots[joint].replace(xyz).is_some() {
            return Err(fmt_err(line, format!("sample {id} frame {frame} joint {joint} repeated")));
        }
    }

    let mut sequences = Vec::with_capacity(order.len());
    for id in order {
        let p = partial.remove(&id).expect("recorded sample");
        let mut frames = Vec::with_capacity(p.frames.len());
        for (f, slots) in p.frames.into_iter().enumerate() {
            let slots = slots.ok_or_else(|| fmt_err(0, format!("sample {id}: missing frame {f}")))?;
            let present = slots.iter().take_while(|s| s.is_some()).count();
            if slots[present..].iter().any(Option::is_some) {
                return Err(fmt_err(0, format!("sample {id} frame {f}: missing joint {present}")));
            }
            match joints {
                None => joints = Some(present),
                Some(j) if j != present => {
                    return Err(fmt_err(
                        0,
                        format!("sample {id} frame {f}: {present} joints, expected {j}"),
                    ))
                }
                _ => {}
            }
            frames.push(slots.into_iter().take(present).flat_map(|s| s.expect("present")).collect());
        }
        sequences.push(SkeletonSequence::new(id, joints.expect("set"), frames, p.label)?);
    }
    let mut ds = Dataset::new(sequences, max_label + 1)?;
    ds.manifest = manifest;
    Ok(ds)
}

pub fn load_csv(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_csv(std::io::BufReader::new(file))
}

pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Input(format!("csv write failed: {e}"));
    for line in &dataset.manifest {
        writeln!(out, "# {line}").map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Input(format!("csv write failed: {e}"));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for s in &dataset.sequences {
        for (f, frame) in s.frames.iter().enumerate() {
            for j in 0..s.joints {
                w.write_record([
                    s.id.clone(),
                    f.to_string(),
                    j.to_string(),
                    frame[j * 3].to_string(),
                    frame[j * 3 + 1].to_string(),
                    frame[j * 3 + 2].to_string(),
                    s.label.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush().map_err(io)
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn small_spec(noise: f64, seed: u64) -> SynthSpec {
        SynthSpec {
            classes: 2,
            samples_per_class: 20,
            joints: 6,
            frames: 8,
            noise,
            seed,
        }
    }

    #[test]
    fn loads_one_sample_with_ordered_frames() {
        let text = "sample_id,frame,joint,x,y,z,label\n\
                    a,1,0,5,6,7,0\na,1,1,8,9,10,0\na,0,1,2,3,4,0\na,0,0,-1,0,1,0\n";
        let ds = parse_csv(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.joints, 2);
        let s = &ds.sequences[0];
        assert_eq!(s.frames[0], vec![-1.0, 0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.frames[1], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]);
    }

    #[test]
    fn csv_format_errors() {
        let missing_frame = "sample_id,frame,joint,x,y,z,label\na,0,0,0,0,0,0\na,2,0,0,0,0,0\n";
        assert!(matches!(parse_csv(missing_frame.as_bytes()), Err(Error::Format { .. })));
        let unknown = "sample_id,frame,joint,x,y,z,label,extra\na,0,0,0,0,0,0,1\n";
        assert!(matches!(parse_csv(unknown.as_bytes()), Err(Error::Format { .. })));
        let ragged = "sample_id,frame,joint,x,y,z,label\na,0,0,0,0,0,0\na,0,1,0,0,0,0\na,1,0,0,0,0,0\n";
        assert!(matches!(parse_csv(ragged.as_bytes()), Err(Error::Format { .. })));
        let bad_num = "sample_id,frame,joint,x,y,z,label\na,0,0,zz,0,0,0\n";
        match parse_csv(bad_num.as_bytes()) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn synthetic_round_trip_is_lossless() {
        let ds = synth_generate(&small_spec(0.05, 3)).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert!(buf.starts_with(b"# synth classes=2"));
        let back = parse_csv(&buf[..]).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn resample_cases() {
        let ramp: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64]).collect();
        let r = resample(&ramp, 6).unwrap();
        assert_eq!(r.iter().map(|f| f[0]).collect::<Vec<_>>(), vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
        assert_eq!(resample(&ramp, 11).unwrap(), ramp);
        let constant = vec![vec![3.5, -1.0]; 4];
        assert!(resample(&constant, 9).unwrap().iter().all(|f| f == &constant[0]));
        assert!(matches!(resample(&[], 3), Err(Error::Input(_))));
        assert_eq!(resample(&ramp, 1).unwrap(), vec![vec![0.0]]);
    }

    #[test]
    fn synth_determinism_and_noise_free_classes() {
        assert_eq!(synth_generate(&small_spec(0.05, 9)).unwrap(), synth_generate(&small_spec(0.05, 9)).unwrap());
        let clean = synth_generate(&small_spec(0.0, 9)).unwrap();
        for s in &clean.sequences {
            let first = clean.sequences.iter().find(|o| o.label == s.label).unwrap();
            assert_eq!(s.frames, first.frames);
        }
        assert_ne!(clean.sequences[0].frames, clean.sequences[20].frames);
    }

    #[test]
    fn split_cases() {
        let ds = synth_generate(&small_spec(0.05, 1)).unwrap();
        let sp = split(&ds, 0.5, 4).unwrap();
        for c in 0..2 {
            assert_eq!(sp.train.iter().filter(|&&i| ds.sequences[i].label == c).count(), 10);
            assert_eq!(sp.test.iter().filter(|&&i| ds.sequences[i].label == c).count(), 10);
        }
        assert_eq!(sp, split(&ds, 0.5, 4).unwrap());
        assert!(matches!(split(&ds, 1.0, 4), Err(Error::Config(_))));

        let lone = Dataset::new(
            vec![SkeletonSequence::new("x", 1, vec![vec![0.0; 3]], 0).unwrap()],
            1,
        )
        .unwrap();
        assert!(matches!(split(&lone, 0.5, 0), Err(Error::Input(_))));
    }

    #[test]
    fn node_signal_layout_and_normalization() {
        let ds = synth_generate(&small_spec(0.0, 2)).unwrap();
        let u = node_signal(&ds.sequences[0], 8).unwrap();
        assert_eq!(u.shape(), (24, 6));
        for t in 0..8 {
            let mut sq = 0.0;
            for d in 0..3 {
                let row = u.row(t * 3 + d);
                assert!(row.iter().sum::<f64>().abs() < 1e-12);
                sq += row.iter().map(|v| v * v).sum::<f64>();
            }
            assert!((sq / 6.0 - 1.0).abs() < 1e-12);
        }
        let samples = ds.all_samples(8).unwrap();
        assert_eq!(samples.signals.shape(), (40 * 24, 6));
        let sub = samples.select(&[1, 0]).unwrap();
        assert_eq!(sub.signals.row(0), samples.signals.row(24));
    }

    proptest! {
        #[test]
        fn resample_is_idempotent(len in 1usize..20, target in 1usize..20, seed in 0u64..100) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames: Vec<Vec<f64>> = (0..len).map(|_| vec![rng.gen_range(-1.0..1.0); 3]).collect();
            let once = resample(&frames, target).unwrap();
            prop_assert_eq!(resample(&once, target).unwrap(), once);
        }

        #[test]
        fn split_is_disjoint_covering_and_proportional(per_class in 2usize..15, classes in 1usize..4, frac in 0.1f64..0.9, seed in 0u64..50) {
            let ds = synth_generate(&SynthSpec { classes, samples_per_class: per_class, joints: 2, frames: 2, noise: 0.1, seed }).unwrap();
            let sp = split(&ds, frac, seed).unwrap();
            let mut all: Vec<usize> = sp.train.iter().chain(&sp.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
            for c in 0..classes {
                let n = sp.train.iter().filter(|&&i| ds.sequences[i].label == c).count() as f64;
                prop_assert!((n - frac * per_class as f64).abs() <= 1.0);
            }
        }
    }
}
