//! Evaluation: certified-accuracy sweeps, union/complement set metrics,
//! verifier-midpoint approximation error, a brute-force range oracle for
//! soundness audits, and side-by-side training benchmarks.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::counter;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ibp::{ibp_certify, ibp_propagate, PerturbationSpec};
use crate::linear_bounds::{linear_verify, ConcreteBounds, RelaxMode};
use crate::network::{ArchSpec, Network};
use crate::tensor::Vector;
use crate::train::{train, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Which bound propagation backs a certification run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verifier {
    Ibp,
    Fastlin,
    Zero,
}

impl Verifier {
    pub fn name(self) -> &'static str {
        match self {
            Verifier::Ibp => "ibp",
            Verifier::Fastlin => "fastlin",
            Verifier::Zero => "zero",
        }
    }
}

impl fmt::Display for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Verifier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ibp" => Ok(Verifier::Ibp),
            "fastlin" => Ok(Verifier::Fastlin),
            "zero" => Ok(Verifier::Zero),
            other => Err(Error::InvalidConfig(format!(
                "unknown verifier {other:?}; expected ibp, fastlin, or zero"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    NotCertified,
    Misclassified,
}

/// One test point's verdicts across the ε grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationRecord {
    pub point_index: usize,
    pub true_label: usize,
    pub predicted_label: usize,
    /// (ε, verdict) pairs in ascending ε order.
    pub verdicts: Vec<(f64, Verdict)>,
    pub verifier: Verifier,
}

impl CertificationRecord {
    pub fn clean_correct(&self) -> bool {
        self.predicted_label == self.true_label
    }

    pub fn certified_at(&self, eps: f64) -> Result<bool> {
        self.verdicts
            .iter()
            .find(|(e, _)| *e == eps)
            .map(|(_, v)| *v == Verdict::Certified)
            .ok_or_else(|| Error::InvalidConfig(format!("ε = {eps} not in the record's grid")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub records: Vec<CertificationRecord>,
    /// (ε, certified fraction) per grid entry, ascending.
    pub summary: Vec<(f64, f64)>,
    pub clean_accuracy: f64,
}

fn certify_once(
    net: &Network,
    x: &Vector,
    eps: f64,
    verifier: Verifier,
    true_class: usize,
    clip_input: bool,
) -> Result<bool> {
    let pert = PerturbationSpec::new(eps)?;
    match verifier {
        Verifier::Ibp => {
            let bounds = ibp_propagate(net, x, &pert, clip_input)?;
            ibp_certify(&bounds, true_class)
        }
        Verifier::Fastlin => {
            Ok(linear_verify(net, x, &pert, RelaxMode::FastLin, true_class)?.certified)
        }
        Verifier::Zero => {
            Ok(linear_verify(net, x, &pert, RelaxMode::Zero, true_class)?.certified)
        }
    }
}

/// Certify a seeded random sample of `n_points` test points at every ε in
/// `eps_list`. A point misclassified at ε = 0 is never certified. The
/// input-box clamp applies to the IBP verifier only; the linear verifiers
/// bound the raw ℓ∞ ball.
pub fn certified_accuracy_sweep(
    net: &Network,
    test: &Dataset,
    eps_list: &[f64],
    verifier: Verifier,
    n_points: usize,
    seed: u64,
    clip_input: bool,
) -> Result<SweepResult> {
    if eps_list.is_empty() {
        return Err(Error::InvalidConfig("empty ε list".into()));
    }
    if eps_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "ε list must be strictly ascending".into(),
        ));
    }
    if test.len() == 0 {
        return Err(Error::InvalidConfig("empty test set".into()));
    }

    let mut indices: Vec<usize> = (0..test.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    indices.truncate(n_points.min(test.len()));
    indices.sort_unstable();

    let mut records = Vec::with_capacity(indices.len());
    for &i in &indices {
        let x = test.image(i);
        let truth = test.label(i);
        let predicted = net.forward(x)?.logits().argmax();
        let mut verdicts = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let verdict = if predicted != truth {
                Verdict::Misclassified
            } else if certify_once(net, x, eps, verifier, truth, clip_input)? {
                Verdict::Certified
            } else {
                Verdict::NotCertified
            };
            verdicts.push((eps, verdict));
        }
        records.push(CertificationRecord {
            point_index: i,
            true_label: truth,
            predicted_label: predicted,
            verdicts,
            verifier,
        });
    }

    let n = records.len() as f64;
    let summary = eps_list
        .iter()
        .enumerate()
        .map(|(k, &eps)| {
            let certified = records
                .iter()
                .filter(|r| r.verdicts[k].1 == Verdict::Certified)
                .count();
            (eps, certified as f64 / n)
        })
        .collect();
    let clean = records.iter().filter(|r| r.clean_correct()).count() as f64 / n;
    Ok(SweepResult {
        records,
        summary,
        clean_accuracy: clean,
    })
}

/// Set arithmetic between two certification runs over the same points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct UnionReport {
    pub frac_a: f64,
    pub frac_b: f64,
    pub frac_union: f64,
    /// Points classified correctly by both models.
    pub frac_both_correct: f64,
    /// Of the commonly correct points, the share certified by either model.
    pub frac_union_within_both_correct: f64,
}

pub fn complement_union(
    a: &[CertificationRecord],
    b: &[CertificationRecord],
    eps: f64,
) -> Result<UnionReport> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "record sets cover different points ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut in_a = 0usize;
    let mut in_b = 0usize;
    let mut in_union = 0usize;
    let mut both_correct = 0usize;
    let mut union_and_correct = 0usize;
    for (ra, rb) in a.iter().zip(b.iter()) {
        if ra.point_index != rb.point_index || ra.true_label != rb.true_label {
            return Err(Error::InvalidConfig(format!(
                "record sets disagree at point {}",
                ra.point_index
            )));
        }
        let ca = ra.certified_at(eps)?;
        let cb = rb.certified_at(eps)?;
        in_a += ca as usize;
        in_b += cb as usize;
        in_union += (ca || cb) as usize;
        let correct = ra.clean_correct() && rb.clean_correct();
        both_correct += correct as usize;
        union_and_correct += (correct && (ca || cb)) as usize;
    }
    let n = a.len() as f64;
    Ok(UnionReport {
        frac_a: in_a as f64 / n,
        frac_b: in_b as f64 / n,
        frac_union: in_union as f64 / n,
        frac_both_correct: both_correct as f64 / n,
        frac_union_within_both_correct: if both_correct == 0 {
            0.0
        } else {
            union_and_correct as f64 / both_correct as f64
        },
    })
}

/// How far the verifier's boxes sit from the nominal pre-activations:
/// per point, metric 1 averages |z_nom − midpoint| over every layer's
/// neurons and metric 2 averages the same offsets normalized by box
/// width, skipping widths below 1e-12.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ApproxErrorReport {
    pub metric1_mean: f64,
    pub metric1_std: f64,
    pub metric2_mean: f64,
    pub metric2_std: f64,
    pub points: usize,
}

const ZERO_GAP: f64 = 1e-12;

#[derive(Default)]
struct MidpointOffsets {
    offset_sum: f64,
    neurons: usize,
    ratio_sum: f64,
    ratio_neurons: usize,
}

impl MidpointOffsets {
    fn add_layer(&mut self, z_nom: &Vector, bounds: &ConcreteBounds) {
        for j in 0..z_nom.len() {
            let off = (z_nom[j] - bounds.midpoint[j]).abs();
            self.offset_sum += off;
            self.neurons += 1;
            let gap = bounds.upper[j] - bounds.lower[j];
            if gap >= ZERO_GAP {
                self.ratio_sum += off / gap;
                self.ratio_neurons += 1;
            }
        }
    }

    fn finish(&self) -> (f64, f64) {
        let m1 = if self.neurons == 0 {
            0.0
        } else {
            self.offset_sum / self.neurons as f64
        };
        let m2 = if self.ratio_neurons == 0 {
            0.0
        } else {
            self.ratio_sum / self.ratio_neurons as f64
        };
        (m1, m2)
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn approx_error_metrics(
    net: &Network,
    points: &[Vector],
    pert: &PerturbationSpec,
    mode: RelaxMode,
) -> Result<ApproxErrorReport> {
    if points.is_empty() {
        return Err(Error::InvalidConfig("no points to evaluate".into()));
    }
    let mut m1 = Vec::with_capacity(points.len());
    let mut m2 = Vec::with_capacity(points.len());
    for x in points {
        let trace = net.forward(x)?;
        // class argument does not affect the bounds, only the verdict
        let verification = linear_verify(net, x, pert, mode, 0)?;
        debug_assert_eq!(trace.pre_activations.len(), verification.layers.len());
        let mut acc = MidpointOffsets::default();
        for (z_nom, bounds) in trace.pre_activations.iter().zip(&verification.layers) {
            acc.add_layer(z_nom, bounds);
        }
        let (a, b) = acc.finish();
        m1.push(a);
        m2.push(b);
    }
    let (m1_mean, m1_std) = mean_std(&m1);
    let (m2_mean, m2_std) = mean_std(&m2);
    Ok(ApproxErrorReport {
        metric1_mean: m1_mean,
        metric1_std: m1_std,
        metric2_mean: m2_mean,
        metric2_std: m2_std,
        points: points.len(),
    })
}

/// Exhaustive forward evaluation over a regular grid of the ε-box around
/// `x_nom` (corners included). Ground truth for soundness audits.
pub fn brute_force_range(
    net: &Network,
    x_nom: &Vector,
    pert: &PerturbationSpec,
    grid_per_dim: usize,
) -> Result<Vec<(f64, f64)>> {
    let dim = net.input_dim();
    if dim > 4 {
        return Err(Error::DimensionTooLarge { dim, max: 4 });
    }
    if x_nom.len() != dim {
        return Err(Error::Shape {
            op: "brute_force_range",
            expected: format!("input dim {dim}"),
            got: format!("{}", x_nom.len()),
        });
    }
    if grid_per_dim < 2 {
        return Err(Error::InvalidConfig("grid_per_dim must be >= 2".into()));
    }
    let eps = pert.epsilon();
    let out = net.output_dim();
    let mut lo = vec![f64::INFINITY; out];
    let mut hi = vec![f64::NEG_INFINITY; out];

    let mut ticks = vec![0usize; dim];
    let mut x = Vector::zeros(dim);
    loop {
        for d in 0..dim {
            let frac = ticks[d] as f64 / (grid_per_dim - 1) as f64;
            x[d] = (x_nom[d] - eps) + 2.0 * eps * frac;
        }
        let trace = net.forward(&x)?;
        let z = trace.logits();
        for j in 0..out {
            lo[j] = lo[j].min(z[j]);
            hi[j] = hi[j].max(z[j]);
        }
        // odometer increment over the grid axes
        let mut d = 0;
        loop {
            if d == dim {
                return Ok(lo.into_iter().zip(hi).collect());
            }
            ticks[d] += 1;
            if ticks[d] < grid_per_dim {
                break;
            }
            ticks[d] = 0;
            d += 1;
        }
    }
}

/// Instrumented cost of one training run.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchReport {
    /// Forward-shaped propagations per example per optimizer step.
    pub fwd_passes_per_example_step: u64,
    /// Backward-shaped propagations per example per optimizer step.
    pub bwd_passes_per_example_step: u64,
    pub wallclock_per_epoch_s: f64,
    pub total_wallclock_s: f64,
    /// Rough resident-set estimate: parameters, Adam moments, and one
    /// batch of gradient accumulators. Informational only.
    pub peak_memory_estimate_bytes: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BenchPair {
    pub a: BenchReport,
    pub b: BenchReport,
    /// Wall-clock of run B divided by run A.
    pub wallclock_ratio_b_over_a: f64,
}

fn bench_one(arch: &ArchSpec, data: &Dataset, cfg: &TrainConfig, init_seed: u64) -> Result<BenchReport> {
    let net = Network::init(arch, init_seed)?;
    let params = net.param_count() as u64;
    let timer = Instant::now();
    let (outcome, _) = counter::delta(|| train(net, data, cfg));
    let outcome = outcome?;
    let total_wallclock_s = timer.elapsed().as_secs_f64();
    if let Some(fail) = &outcome.failure {
        return Err(Error::NumericFailure {
            context: "benchmark training run",
            layer: fail.epoch,
        });
    }

    // batch-loop counters only; validation passes are not part of a step
    let fwd: u64 = outcome.metrics.iter().map(|m| m.fwd_pass_count).sum();
    let bwd: u64 = outcome.metrics.iter().map(|m| m.bwd_pass_count).sum();
    let train_examples = (data.len() - cfg.val_split) as u64;
    let example_steps = train_examples * cfg.epochs as u64;
    debug_assert_eq!(fwd % example_steps, 0, "non-integral per-example pass count");
    let epoch_seconds: f64 = outcome.metrics.iter().map(|m| m.wallclock_s).sum();
    Ok(BenchReport {
        fwd_passes_per_example_step: fwd / example_steps,
        bwd_passes_per_example_step: bwd / example_steps,
        wallclock_per_epoch_s: epoch_seconds / cfg.epochs as f64,
        total_wallclock_s,
        peak_memory_estimate_bytes: params * 8 * 4 + (cfg.batch_size as u64) * 8 * 64,
    })
}

/// Train the same architecture on the same data under two configurations
/// and report instrumented costs side by side. Single-threaded.
pub fn benchmark(
    arch: &ArchSpec,
    data: &Dataset,
    cfg_a: &TrainConfig,
    cfg_b: &TrainConfig,
    init_seed: u64,
) -> Result<BenchPair> {
    if cfg_a.epochs != cfg_b.epochs
        || cfg_a.batch_size != cfg_b.batch_size
        || cfg_a.val_split != cfg_b.val_split
    {
        return Err(Error::InvalidConfig(
            "benchmark configs must share epochs, batch size, and split".into(),
        ));
    }
    let a = bench_one(arch, data, cfg_a, init_seed)?;
    let b = bench_one(arch, data, cfg_b, init_seed)?;
    Ok(BenchPair {
        a,
        b,
        wallclock_ratio_b_over_a: b.total_wallclock_s / a.total_wallclock_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::TrainVariant;
    use crate::network::{Activation, Layer};
    use crate::tensor::Matrix;
    use crate::train::{EpsSchedule, LambdaSchedule};
    use rand::Rng;

    fn eps(e: f64) -> PerturbationSpec {
        PerturbationSpec::new(e).unwrap()
    }

    fn toy_dataset(n: usize, dim: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let images = (0..n)
            .map(|_| Vector::new((0..dim).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let labels = (0..n).map(|i| i % classes).collect();
        Dataset::new(images, labels, classes).unwrap()
    }

    #[test]
    fn sweep_zero_eps_equals_clean_accuracy() {
        let net = Network::init(&ArchSpec::mlp(3, &[6, 4]), 3).unwrap();
        let data = toy_dataset(40, 3, 4, 4);
        for verifier in [Verifier::Ibp, Verifier::Fastlin, Verifier::Zero] {
            let sweep =
                certified_accuracy_sweep(&net, &data, &[0.0, 0.01], verifier, 40, 0, false)
                    .unwrap();
            assert_eq!(sweep.summary[0].1, sweep.clean_accuracy, "{verifier}");
        }
    }

    #[test]
    fn misclassified_points_are_never_certified() {
        let net = Network::init(&ArchSpec::mlp(3, &[6, 4]), 5).unwrap();
        let data = toy_dataset(60, 3, 4, 6);
        let sweep =
            certified_accuracy_sweep(&net, &data, &[0.0, 0.05, 0.1], Verifier::Ibp, 60, 0, false)
                .unwrap();
        let wrong = sweep.records.iter().filter(|r| !r.clean_correct()).count();
        assert!(wrong > 0, "untrained net should misclassify something");
        for r in &sweep.records {
            if !r.clean_correct() {
                assert!(r.verdicts.iter().all(|(_, v)| *v == Verdict::Misclassified));
            }
        }
    }

    #[test]
    fn sweep_verdicts_are_downward_closed() {
        let grid = [0.0, 0.005, 0.02, 0.05, 0.1];
        for seed in 0..8 {
            let net = Network::init(&ArchSpec::mlp(4, &[6, 5, 3]), seed).unwrap();
            let data = toy_dataset(20, 4, 3, seed + 100);
            for verifier in [Verifier::Ibp, Verifier::Fastlin, Verifier::Zero] {
                let sweep =
                    certified_accuracy_sweep(&net, &data, &grid, verifier, 20, 0, false).unwrap();
                for r in &sweep.records {
                    let mut seen_failure = false;
                    for (_, v) in &r.verdicts {
                        match v {
                            Verdict::Certified => {
                                assert!(!seen_failure, "{verifier}: certified after a failure")
                            }
                            _ => seen_failure = true,
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn sweep_sample_is_deterministic_and_sized() {
        let net = Network::init(&ArchSpec::mlp(3, &[4, 2]), 9).unwrap();
        let data = toy_dataset(50, 3, 2, 10);
        let a = certified_accuracy_sweep(&net, &data, &[0.01], Verifier::Zero, 10, 7, false)
            .unwrap();
        let b = certified_accuracy_sweep(&net, &data, &[0.01], Verifier::Zero, 10, 7, false)
            .unwrap();
        assert_eq!(a.records.len(), 10);
        let ia: Vec<usize> = a.records.iter().map(|r| r.point_index).collect();
        let ib: Vec<usize> = b.records.iter().map(|r| r.point_index).collect();
        assert_eq!(ia, ib);
        assert!(ia.windows(2).all(|w| w[0] < w[1]), "records in index order");
    }

    fn record(point: usize, certified: bool, correct: bool) -> CertificationRecord {
        CertificationRecord {
            point_index: point,
            true_label: 0,
            predicted_label: usize::from(!correct),
            verdicts: vec![(
                0.1,
                if !correct {
                    Verdict::Misclassified
                } else if certified {
                    Verdict::Certified
                } else {
                    Verdict::NotCertified
                },
            )],
            verifier: Verifier::Ibp,
        }
    }

    #[test]
    fn union_of_overlapping_certified_sets() {
        // A certifies {1, 2}, B certifies {2, 3} of points 0..4
        let a: Vec<_> = (0..4).map(|i| record(i, i == 1 || i == 2, true)).collect();
        let b: Vec<_> = (0..4).map(|i| record(i, i == 2 || i == 3, true)).collect();
        let u = complement_union(&a, &b, 0.1).unwrap();
        assert_eq!(u.frac_a, 0.5);
        assert_eq!(u.frac_b, 0.5);
        assert_eq!(u.frac_union, 0.75);
        assert_eq!(u.frac_both_correct, 1.0);
        assert_eq!(u.frac_union_within_both_correct, 0.75);
    }

    #[test]
    fn union_of_identical_sets_is_the_set() {
        let a: Vec<_> = (0..10).map(|i| record(i, i < 4, true)).collect();
        let u = complement_union(&a, &a, 0.1).unwrap();
        assert_eq!(u.frac_union, u.frac_a);
        assert!(u.frac_union >= u.frac_a && u.frac_union >= u.frac_b);
    }

    #[test]
    fn union_of_disjoint_sets_adds() {
        let a: Vec<_> = (0..10).map(|i| record(i, i < 3, true)).collect();
        let b: Vec<_> = (0..10).map(|i| record(i, (5..7).contains(&i), true)).collect();
        let u = complement_union(&a, &b, 0.1).unwrap();
        assert_eq!(u.frac_union, u.frac_a + u.frac_b);
    }

    #[test]
    fn union_rejects_mismatched_points() {
        let a: Vec<_> = (0..4).map(|i| record(i, true, true)).collect();
        let b: Vec<_> = (1..5).map(|i| record(i, true, true)).collect();
        assert!(complement_union(&a, &b, 0.1).is_err());
        let c: Vec<_> = (0..3).map(|i| record(i, true, true)).collect();
        assert!(complement_union(&a, &c, 0.1).is_err());
    }

    #[test]
    fn point_metric_hand_values() {
        let z = Vector::new(vec![1.0]);
        let bounds = ConcreteBounds {
            lower: Vector::new(vec![0.0]),
            upper: Vector::new(vec![3.0]),
            midpoint: Vector::new(vec![1.5]),
        };
        let mut acc = MidpointOffsets::default();
        acc.add_layer(&z, &bounds);
        let (m1, m2) = acc.finish();
        assert!((m1 - 0.5).abs() < 1e-15);
        assert!((m2 - 0.5 / 3.0).abs() < 1e-15);

        // degenerate box: metric 2 skips the neuron
        let tight = ConcreteBounds {
            lower: Vector::new(vec![1.0]),
            upper: Vector::new(vec![1.0]),
            midpoint: Vector::new(vec![1.0]),
        };
        let mut acc = MidpointOffsets::default();
        acc.add_layer(&z, &tight);
        let (m1, m2) = acc.finish();
        assert_eq!(m1, 0.0);
        assert_eq!(m2, 0.0);

        // two layers: offsets average over all neurons, ratios only over
        // the neurons with a real box
        let mut acc = MidpointOffsets::default();
        acc.add_layer(&z, &bounds);
        acc.add_layer(&z, &tight);
        let (m1, m2) = acc.finish();
        assert!((m1 - 0.25).abs() < 1e-15);
        assert!((m2 - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn linear_network_has_zero_approx_error() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let w = Matrix::new(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let b = Vector::new((0..3).map(|_| rng.gen_range(-0.5..0.5)).collect());
        let layer = Layer::dense(w, b, Activation::Identity).unwrap();
        let net = Network::from_dense_layers(4, vec![layer]).unwrap();
        let points: Vec<Vector> = (0..20)
            .map(|_| Vector::new((0..4).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
            let rep = approx_error_metrics(&net, &points, &eps(0.1), mode).unwrap();
            assert_eq!(rep.metric1_mean, 0.0, "{mode:?}");
            assert_eq!(rep.metric2_mean, 0.0, "{mode:?}");
        }
    }

    #[test]
    fn brute_force_zero_eps_collapses_to_nominal() {
        let net = Network::init(&ArchSpec::mlp(3, &[5, 2]), 13).unwrap();
        let x = Vector::new(vec![0.2, 0.8, 0.5]);
        let range = brute_force_range(&net, &x, &eps(0.0), 3).unwrap();
        let z = net.forward(&x).unwrap();
        for (j, (lo, hi)) in range.iter().enumerate() {
            assert_eq!(*lo, *hi);
            assert_eq!(*lo, z.logits()[j]);
        }
    }

    #[test]
    fn brute_force_matches_linear_closed_form() {
        let w = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let b = Vector::new(vec![0.1, -0.2]);
        let layer = Layer::dense(w.clone(), b.clone(), Activation::Identity).unwrap();
        let net = Network::from_dense_layers(3, vec![layer]).unwrap();
        let x = Vector::new(vec![0.3, 0.6, 0.9]);
        let e = 0.05;
        let range = brute_force_range(&net, &x, &eps(e), 5).unwrap();
        for j in 0..2 {
            let z = w.row(j).iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>() + b[j];
            let radius = e * w.row(j).iter().map(|v| v.abs()).sum::<f64>();
            // linear ⇒ extrema sit at sign-matched corners, which the grid hits
            assert!((range[j].0 - (z - radius)).abs() < 1e-12);
            assert!((range[j].1 - (z + radius)).abs() < 1e-12);
        }
    }

    #[test]
    fn brute_force_range_sits_inside_every_verifier() {
        for seed in 0..6 {
            let net = Network::init(&ArchSpec::mlp(3, &[5, 4, 2]), seed).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed + 50);
            let x = Vector::new((0..3).map(|_| rng.gen_range(0.0..1.0)).collect());
            let pert = eps(0.08);
            let range = brute_force_range(&net, &x, &pert, 7).unwrap();

            let ibp = ibp_propagate(&net, &x, &pert, false).unwrap();
            for mode in [RelaxMode::FastLin, RelaxMode::Zero] {
                let v = linear_verify(&net, &x, &pert, mode, 0).unwrap();
                for j in 0..2 {
                    assert!(v.output().lower[j] <= range[j].0 + 1e-9, "{mode:?} lower");
                    assert!(v.output().upper[j] >= range[j].1 - 1e-9, "{mode:?} upper");
                }
            }
            for j in 0..2 {
                assert!(ibp.output_lower()[j] <= range[j].0 + 1e-9);
                assert!(ibp.output_upper()[j] >= range[j].1 - 1e-9);
            }
        }
    }

    #[test]
    fn brute_force_guards_input_dimension() {
        let net = Network::init(&ArchSpec::mlp(5, &[4, 2]), 1).unwrap();
        let x = Vector::zeros(5);
        assert!(matches!(
            brute_force_range(&net, &x, &eps(0.1), 3),
            Err(Error::DimensionTooLarge { .. })
        ));
    }

    fn bench_cfg(variant: TrainVariant) -> TrainConfig {
        TrainConfig {
            variant,
            eps_schedule: EpsSchedule::constant(0.02),
            lambda_schedule: LambdaSchedule::Linear {
                start: 0.5,
                end: 0.5,
                ramp_steps: 0,
            },
            epochs: 2,
            batch_size: 4,
            learning_rate: 1e-3,
            lr_decay_milestones: vec![],
            seed: 3,
            clip_input: false,
            val_split: 4,
        }
    }

    #[test]
    fn benchmark_reports_exact_pass_counts() {
        let arch = ArchSpec::mlp(3, &[6, 3]);
        let data = toy_dataset(20, 3, 3, 77);
        let pair = benchmark(
            &arch,
            &data,
            &bench_cfg(TrainVariant::SinglePropZero),
            &bench_cfg(TrainVariant::Ibp),
            5,
        )
        .unwrap();
        assert_eq!(pair.a.fwd_passes_per_example_step, 2);
        assert_eq!(pair.a.bwd_passes_per_example_step, 2);
        assert_eq!(pair.b.fwd_passes_per_example_step, 3);
        assert_eq!(pair.b.bwd_passes_per_example_step, 3);
        assert!(pair.wallclock_ratio_b_over_a > 0.0);
    }

    #[test]
    fn benchmark_rejects_mismatched_shapes() {
        let arch = ArchSpec::mlp(3, &[6, 3]);
        let data = toy_dataset(20, 3, 3, 78);
        let mut other = bench_cfg(TrainVariant::Ibp);
        other.epochs = 3;
        assert!(benchmark(&arch, &data, &bench_cfg(TrainVariant::Standard), &other, 5).is_err());
    }
}
