//! Skeleton sequences and the transformations that turn them into model
//! inputs: causal windowing for per-frame labels, temporal resampling for
//! per-sequence labels, class-balanced batch sampling, meta-keyed splits and
//! a synthetic gesture generator.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::model::{flatten_frames, ModelConfig};
use crate::tensor::Matrix;

pub type Joint = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonFrame {
    pub joints: Vec<Joint>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<Joint>) -> Self {
        Self { joints }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// One class for the whole sequence.
    Sequence(usize),
    /// One class per frame.
    Frames(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceMeta {
    pub subject: String,
    pub view: String,
    pub dataset: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSequence {
    pub frames: Vec<SkeletonFrame>,
    pub labels: Labels,
    pub meta: SequenceMeta,
}

impl SkeletonSequence {
    /// Checks joint counts, finiteness and label ranges.
    pub fn validate(&self, joints: usize, classes: Option<usize>) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("sequence has no frames".into()));
        }
        for (t, f) in self.frames.iter().enumerate() {
            if f.joints.len() != joints {
                return Err(Error::Data(format!(
                    "frame {t} has {} joints, expected {joints}",
                    f.joints.len()
                )));
            }
            for (j, p) in f.joints.iter().enumerate() {
                if p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Data(format!("frame {t} joint {j} has a non-finite coordinate")));
                }
            }
        }
        let check = |c: usize| match classes {
            Some(n) if c >= n => Err(Error::Data(format!("label {c} is not one of the {n} classes"))),
            _ => Ok(()),
        };
        match &self.labels {
            Labels::Sequence(c) => check(*c)?,
            Labels::Frames(ls) => {
                if ls.len() != self.frames.len() {
                    return Err(Error::Data(format!(
                        "{} frame labels for {} frames",
                        ls.len(),
                        self.frames.len()
                    )));
                }
                ls.iter().try_for_each(|&c| check(c))?;
            }
        }
        Ok(())
    }

    /// Subtracts joint `root` from every joint of every frame.
    pub fn subtract_root(&mut self, root: usize) -> Result<()> {
        for f in &mut self.frames {
            let r = *f
                .joints
                .get(root)
                .ok_or_else(|| Error::Input(format!("root joint {root} out of range")))?;
            for j in &mut f.joints {
                for c in 0..3 {
                    j[c] -= r[c];
                }
            }
        }
        Ok(())
    }

    /// Applies `p ↦ R·p + t` to every joint.
    pub fn apply_affine(&mut self, transform: &AffineTransform) {
        for f in &mut self.frames {
            for j in &mut f.joints {
                *j = transform.apply(*j);
            }
        }
    }
}

/// A 3×4 matrix `[R | t]`, e.g. a world-to-camera extrinsic calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineTransform(pub [[f64; 4]; 3]);

impl AffineTransform {
    pub fn identity() -> Self {
        Self([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    }

    pub fn apply(&self, p: Joint) -> Joint {
        let m = &self.0;
        core::array::from_fn(|r| m[r][0] * p[0] + m[r][1] * p[1] + m[r][2] * p[2] + m[r][3])
    }
}

/// One causal window of `T` frames ending at every frame, labeled with that
/// frame's class. Windows that would start before frame 0 are left-padded by
/// repeating frame 0.
pub fn window_frames(seq: &SkeletonSequence, t: usize) -> Result<Vec<(Vec<SkeletonFrame>, usize)>> {
    if t == 0 {
        return Err(Error::Input("window length must be at least 1".into()));
    }
    if seq.frames.is_empty() {
        return Err(Error::Data("cannot window an empty sequence".into()));
    }
    let labels = match &seq.labels {
        Labels::Frames(ls) if ls.len() == seq.frames.len() => ls,
        Labels::Frames(ls) => {
            return Err(Error::Data(format!("{} frame labels for {} frames", ls.len(), seq.frames.len())))
        }
        Labels::Sequence(_) => return Err(Error::Data("windowing needs per-frame labels".into())),
    };
    Ok((0..seq.frames.len())
        .map(|end| (causal_window(&seq.frames, end, t), labels[end]))
        .collect())
}

/// The `t` frames ending at `end`, left-padded with `frames[0]`.
pub fn causal_window(frames: &[SkeletonFrame], end: usize, t: usize) -> Vec<SkeletonFrame> {
    (0..t)
        .map(|i| {
            let back = t - 1 - i;
            &frames[end.saturating_sub(back)]
        })
        .cloned()
        .collect()
}

/// Linear interpolation at `t` equally spaced points from the first to the
/// last frame.
pub fn resample_sequence(seq: &SkeletonSequence, t: usize) -> Result<SkeletonSequence> {
    if seq.frames.is_empty() {
        return Err(Error::Data("cannot resample an empty sequence".into()));
    }
    if t == 0 {
        return Err(Error::Input("target length must be at least 1".into()));
    }
    let n = seq.frames.len();
    let frames = (0..t)
        .map(|i| {
            let pos = if t == 1 { 0.0 } else { (i * (n - 1)) as f64 / (t - 1) as f64 };
            let lo = (math::floor(pos) as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            let (a, b) = (&seq.frames[lo], &seq.frames[hi]);
            SkeletonFrame {
                joints: a
                    .joints
                    .iter()
                    .zip(&b.joints)
                    .map(|(p, q)| core::array::from_fn(|c| if frac == 0.0 { p[c] } else { p[c] + frac * (q[c] - p[c]) }))
                    .collect(),
            }
        })
        .collect();
    let labels = match &seq.labels {
        Labels::Sequence(c) => Labels::Sequence(*c),
        Labels::Frames(ls) => Labels::Frames(
            (0..t)
                .map(|i| {
                    let pos = if t == 1 { 0 } else { (i * (n - 1) + (t - 1) / 2) / (t - 1) };
                    ls[pos.min(n - 1)]
                })
                .collect(),
        ),
    };
    Ok(SkeletonSequence { frames, labels, meta: seq.meta.clone() })
}

/// A model-ready input window and its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `T × 3K`
    pub input: Matrix,
    pub label: usize,
}

/// Turns sequences into `T`-frame samples: per-frame labeled sequences yield
/// one causal window per frame, per-sequence labeled ones are resampled.
pub fn make_samples(cfg: &ModelConfig, seqs: &[SkeletonSequence]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, seq) in seqs.iter().enumerate() {
        seq.validate(cfg.joints, Some(cfg.classes))
            .map_err(|e| Error::Data(format!("sequence {i}: {e}")))?;
        match &seq.labels {
            Labels::Frames(_) => {
                for (window, label) in window_frames(seq, cfg.time_steps)? {
                    out.push(Sample { input: flatten_frames(&window, cfg.joints)?, label });
                }
            }
            Labels::Sequence(label) => {
                let input = if seq.frames.len() == cfg.time_steps {
                    flatten_frames(&seq.frames, cfg.joints)?
                } else {
                    flatten_frames(&resample_sequence(seq, cfg.time_steps)?.frames, cfg.joints)?
                };
                out.push(Sample { input, label: *label });
            }
        }
    }
    Ok(out)
}

/// Endless stream of index batches with equal class probability per slot:
/// each slot picks a class uniformly, then a member of that class uniformly,
/// with replacement.
#[derive(Debug, Clone)]
pub struct BalancedBatches {
    by_class: Vec<Vec<usize>>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BalancedBatches {
    pub fn new(labels: &[usize], classes: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Input("batch size must be at least 1".into()));
        }
        let mut by_class = vec![Vec::new(); classes];
        for (i, &l) in labels.iter().enumerate() {
            by_class
                .get_mut(l)
                .ok_or_else(|| Error::Data(format!("label {l} at index {i} exceeds {classes} classes")))?
                .push(i);
        }
        if let Some(c) = by_class.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("class {c} has no samples")));
        }
        Ok(Self { by_class, batch_size, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|_| {
                let members = &self.by_class[self.rng.random_range(0..self.by_class.len())];
                members[self.rng.random_range(0..members.len())]
            })
            .collect()
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

pub fn balanced_batches(labels: &[usize], classes: usize, batch_size: usize, seed: u64) -> Result<BalancedBatches> {
    BalancedBatches::new(labels, classes, batch_size, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKey {
    Subject,
    View,
}

impl SplitKey {
    fn of<'a>(&self, meta: &'a SequenceMeta) -> &'a str {
        match self {
            SplitKey::Subject => &meta.subject,
            SplitKey::View => &meta.view,
        }
    }
}

/// Index sets into the dataset; disjoint and covering it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Held-out values that matched no sequence.
    pub unmatched: Vec<String>,
}

/// Sequences whose `key` is in `test_values` go to test, those in
/// `val_values` to validation, the rest to train. Test wins over validation.
pub fn split_by(seqs: &[SkeletonSequence], key: SplitKey, test_values: &[String], val_values: &[String]) -> DatasetSplit {
    let test: BTreeSet<&str> = test_values.iter().map(String::as_str).collect();
    let val: BTreeSet<&str> = val_values.iter().map(String::as_str).collect();
    let mut split = DatasetSplit::default();
    let mut seen = BTreeSet::new();
    for (i, s) in seqs.iter().enumerate() {
        let v = key.of(&s.meta);
        seen.insert(v);
        if test.contains(v) {
            split.test.push(i);
        } else if val.contains(v) {
            split.val.push(i);
        } else {
            split.train.push(i);
        }
    }
    split.unmatched = test
        .union(&val)
        .filter(|v| !seen.contains(*v))
        .map(|v| v.to_string())
        .collect();
    split
}

/// Parameters of the synthetic gesture corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub classes: usize,
    pub samples: usize,
    pub joints: usize,
    pub frames: usize,
    /// Standard deviation of the Gaussian noise added to every coordinate.
    pub noise: f64,
    pub seed: u64,
    /// Per-sample phase offset is drawn from `±phase_jitter` radians.
    pub phase_jitter: f64,
    pub amplitude: f64,
    /// Emit per-frame labels instead of one label per sequence.
    pub frame_labels: bool,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            classes: 4,
            samples: 400,
            joints: 5,
            frames: 16,
            noise: 0.05,
            seed: 0,
            phase_jitter: core::f64::consts::FRAC_PI_8,
            amplitude: 1.0,
            frame_labels: false,
        }
    }
}

/// Rest position of joint `j` out of `k`: a ring of radius 0.5 rising in y.
fn rest_joint(j: usize, k: usize) -> Joint {
    let a = 2.0 * core::f64::consts::PI * j as f64 / k as f64;
    [0.5 * math::cos(a), 0.1 * j as f64, 0.5 * math::sin(a)]
}

/// Sample `i` belongs to class `i mod C`. Class `c` moves joint `c mod K`
/// along axis `(c / K) mod 3` with `1 + c` cycles per sequence and base phase
/// `c·π/4`; every other joint rests. Meta: subject `s{i mod 5}`, view
/// `v{(i / 5) mod 2}`.
pub fn synth_gestures(opts: &SynthOptions) -> Result<Vec<SkeletonSequence>> {
    if opts.classes < 2 {
        return Err(Error::Input("synthetic corpus needs at least 2 classes".into()));
    }
    if opts.joints == 0 || opts.frames == 0 {
        return Err(Error::Input("synthetic corpus needs at least 1 joint and 1 frame".into()));
    }
    if !(opts.noise >= 0.0 && opts.noise.is_finite()) {
        return Err(Error::Input(format!("noise must be finite and non-negative, got {}", opts.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise).map_err(|e| Error::Input(format!("noise: {e}")))?;
    let tau = 2.0 * core::f64::consts::PI;
    let mut out = Vec::with_capacity(opts.samples);
    for i in 0..opts.samples {
        let c = i % opts.classes;
        let joint = c % opts.joints;
        let axis = (c / opts.joints) % 3;
        let cycles = 1.0 + c as f64;
        let jitter = if opts.phase_jitter > 0.0 {
            rng.random_range(-opts.phase_jitter..=opts.phase_jitter)
        } else {
            0.0
        };
        let phase = c as f64 * core::f64::consts::FRAC_PI_4 + jitter;
        let frames = (0..opts.frames)
            .map(|t| {
                let mut joints: Vec<Joint> = (0..opts.joints).map(|j| rest_joint(j, opts.joints)).collect();
                joints[joint][axis] += opts.amplitude * math::sin(tau * cycles * t as f64 / opts.frames as f64 + phase);
                if opts.noise > 0.0 {
                    for p in &mut joints {
                        for v in p.iter_mut() {
                            *v += noise.sample(&mut rng);
                        }
                    }
                }
                SkeletonFrame { joints }
            })
            .collect();
        let labels = if opts.frame_labels { Labels::Frames(vec![c; opts.frames]) } else { Labels::Sequence(c) };
        out.push(SkeletonSequence {
            frames,
            labels,
            meta: SequenceMeta {
                subject: format!("s{}", i % 5),
                view: format!("v{}", (i / 5) % 2),
                dataset: "synth".to_string(),
            },
        });
    }
    Ok(out)
}
