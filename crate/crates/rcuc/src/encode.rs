//! Embeds a trained ReLU network into a MILP.
//!
//! Each hidden neuron gets a pre-activation variable `zh` (an affine row
//! over the previous layer) and an output variable `z`. How `z = max(zh, 0)`
//! is modeled depends on the neuron's interval bounds and the selection set:
//!
//! - `ub <= 0`: fixed to zero, no rows, no binary;
//! - `lb >= 0`: identity row `z = zh`, no binary;
//! - selected for linearization: the three-inequality triangle envelope,
//!   no binary;
//! - otherwise: exact big-M rows with one binary, M from the neuron's own
//!   bounds.
//!
//! Binaries saved this way are exactly what makes the selectively
//! linearized model cheaper than the fully encoded one.

use std::collections::BTreeSet;
use std::fmt;

use crate::milp::{Integrality, MilpModel, Sense, VarId};
use crate::mlp::MlpParams;

#[derive(Debug)]
pub enum EncodeError {
    Invalid(String),
    /// A selected neuron has an empty bound interval.
    EmptyInterval { layer: usize, neuron: usize },
}

impl fmt::Display for EncodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncodeError::Invalid(m) => write!(f, "{m}"),
            EncodeError::EmptyInterval { layer, neuron } => {
                write!(f, "neuron {layer}/{neuron} has ub <= lb; bounds are unusable")
            }
        }
    }
}

impl std::error::Error for EncodeError {}

/// Pre-activation interval bounds per layer (hidden layers, then the output
/// head) over a given input box.
#[derive(Debug, Clone)]
pub struct NeuronBounds {
    /// `lb[l][n]`, `ub[l][n]` for layer `l` (0-based, output last).
    pub lb: Vec<Vec<f64>>,
    pub ub: Vec<Vec<f64>>,
}

impl NeuronBounds {
    pub fn output_range(&self) -> (f64, f64) {
        (self.lb.last().expect("output layer")[0], self.ub.last().expect("output layer")[0])
    }
}

/// Interval propagation through the folded network: each affine map is
/// evaluated on the box with weights split by sign, then clamped at zero
/// through the ReLU.
pub fn compute_bounds(params: &MlpParams, input_box: &[(f64, f64)]) -> NeuronBounds {
    let p = params.fold_scaling();
    assert_eq!(
        input_box.len(),
        p.input_len(),
        "input box length must match the input layer"
    );
    for (lo, hi) in input_box {
        assert!(lo.is_finite() && hi.is_finite() && lo <= hi, "input box must be finite");
    }
    let mut lo: Vec<f64> = input_box.iter().map(|b| b.0).collect();
    let mut hi: Vec<f64> = input_box.iter().map(|b| b.1).collect();
    let mut lbs = Vec::new();
    let mut ubs = Vec::new();
    for l in 0..p.num_layers() {
        let n_in = p.layer_sizes[l];
        let n_out = p.layer_sizes[l + 1];
        let mut zlo = vec![0.0; n_out];
        let mut zhi = vec![0.0; n_out];
        for r in 0..n_out {
            let mut acc_lo = p.biases[l][r];
            let mut acc_hi = p.biases[l][r];
            for c in 0..n_in {
                let w = p.weights[l][r * n_in + c];
                if w >= 0.0 {
                    acc_lo += w * lo[c];
                    acc_hi += w * hi[c];
                } else {
                    acc_lo += w * hi[c];
                    acc_hi += w * lo[c];
                }
            }
            zlo[r] = acc_lo;
            zhi[r] = acc_hi;
        }
        lbs.push(zlo.clone());
        ubs.push(zhi.clone());
        if l + 1 < p.num_layers() {
            lo = zlo.into_iter().map(|v| v.max(0.0)).collect();
            hi = zhi.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    NeuronBounds { lb: lbs, ub: ubs }
}

/// Per-neuron fraction of samples with positive pre-activation.
#[derive(Debug, Clone)]
pub struct NeuronStats {
    /// `positivity[l][n]` in [0, 1] for hidden layer `l`.
    pub positivity: Vec<Vec<f64>>,
    pub samples: usize,
}

/// Positivity index over a sample set: the share of samples driving each
/// hidden neuron's pre-activation positive.
pub fn activation_stats(
    params: &MlpParams,
    features: &[Vec<f64>],
) -> Result<NeuronStats, EncodeError> {
    if features.is_empty() {
        return Err(EncodeError::Invalid("activation statistics need a non-empty dataset".into()));
    }
    let hidden_layers = params.num_layers() - 1;
    let mut counts: Vec<Vec<usize>> =
        (0..hidden_layers).map(|l| vec![0; params.layer_sizes[l + 1]]).collect();
    for x in features {
        let acts = params
            .pre_activations(x)
            .map_err(|e| EncodeError::Invalid(e.to_string()))?;
        for l in 0..hidden_layers {
            for (n, z) in acts[l].iter().enumerate() {
                if *z > 0.0 {
                    counts[l][n] += 1;
                }
            }
        }
    }
    let n = features.len() as f64;
    Ok(NeuronStats {
        positivity: counts
            .into_iter()
            .map(|layer| layer.into_iter().map(|c| c as f64 / n).collect())
            .collect(),
        samples: features.len(),
    })
}

/// The printed index variant `(1/N)(sum zh - sum |zh - mean(zh)|)`, kept for
/// comparison. It is not a percentage and can leave [0, 1]; the fraction
/// from [`activation_stats`] is what selection uses.
pub fn printed_positivity_index(
    params: &MlpParams,
    features: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, EncodeError> {
    if features.is_empty() {
        return Err(EncodeError::Invalid("activation statistics need a non-empty dataset".into()));
    }
    let hidden_layers = params.num_layers() - 1;
    let mut pre: Vec<Vec<Vec<f64>>> =
        (0..hidden_layers).map(|l| vec![Vec::new(); params.layer_sizes[l + 1]]).collect();
    for x in features {
        let acts = params
            .pre_activations(x)
            .map_err(|e| EncodeError::Invalid(e.to_string()))?;
        for l in 0..hidden_layers {
            for (n, z) in acts[l].iter().enumerate() {
                pre[l][n].push(*z);
            }
        }
    }
    let n = features.len() as f64;
    Ok(pre
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|zs| {
                    let mean = zs.iter().sum::<f64>() / n;
                    let sum: f64 = zs.iter().sum();
                    let dev: f64 = zs.iter().map(|z| (z - mean).abs()).sum();
                    (sum - dev) / n
                })
                .collect()
        })
        .collect())
}

/// Hidden neurons chosen for triangle linearization: `(layer, index)`.
pub type Selection = BTreeSet<(usize, usize)>;

/// Neurons whose positivity index reaches the threshold. Threshold 0 selects
/// everything (fully relaxed network); a threshold above 1 selects nothing
/// (exact encoding everywhere).
pub fn select_neurons(stats: &NeuronStats, threshold: f64) -> Selection {
    let mut h = Selection::new();
    for (l, layer) in stats.positivity.iter().enumerate() {
        for (n, eps) in layer.iter().enumerate() {
            if *eps >= threshold {
                h.insert((l, n));
            }
        }
    }
    h
}

/// How one neuron ended up encoded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NeuronMode {
    /// Exact big-M rows with one binary.
    BigM { big_m: f64 },
    /// Triangle envelope, no binary.
    Triangle,
    /// `ub <= 0`: output pinned to zero.
    FixedZero,
    /// `lb >= 0`: output equals the pre-activation.
    FixedIdentity,
}

/// Variable handles for one constrained period.
#[derive(Debug, Clone)]
pub struct PeriodEncoding {
    pub period: usize,
    /// `z_hat[l][n]`: pre-activation variables per hidden layer.
    pub z_hat: Vec<Vec<VarId>>,
    /// `z[l][n]`: post-activation variables.
    pub z: Vec<Vec<VarId>>,
    /// Binary activation indicators; `None` for binary-free neurons.
    pub a: Vec<Vec<Option<VarId>>>,
    /// Predicted RoCoF variable.
    pub output: VarId,
}

/// The embedded network: per-period variable handles plus the per-neuron
/// modes (shared across periods).
#[derive(Debug, Clone)]
pub struct EncodedNetwork {
    pub periods: Vec<PeriodEncoding>,
    pub modes: Vec<Vec<NeuronMode>>,
    pub selection: Selection,
    /// Binaries added per period.
    pub binaries_per_period: usize,
    /// Neurons fixed by one-sided bounds.
    pub fixed_neurons: usize,
    /// Neurons carrying the triangle envelope.
    pub triangle_neurons: usize,
}

impl EncodedNetwork {
    pub fn total_binaries(&self) -> usize {
        self.binaries_per_period * self.periods.len()
    }
}

/// Encodes the network once per period over the given input variables.
///
/// `x_vars[k]` are the model variables feeding the network in period `k`
/// (length = input layer). Neurons in `selection` get the triangle envelope;
/// one-sided neurons collapse to fixed forms regardless of selection; the
/// rest get exact big-M rows with per-neuron `M = max(|lb|, |ub|) + 1`.
/// `penalty_weight` adds `penalty_weight * z` to the objective for each
/// triangle neuron, pressing activations onto the envelope's lower edges.
pub fn encode(
    params: &MlpParams,
    bounds: &NeuronBounds,
    selection: &Selection,
    model: &mut MilpModel,
    x_vars: &[(usize, Vec<VarId>)],
    penalty_weight: f64,
) -> Result<EncodedNetwork, EncodeError> {
    let p = params.fold_scaling();
    let hidden_layers = p.num_layers() - 1;
    for (l, n) in selection {
        if *l >= hidden_layers || *n >= p.layer_sizes[l + 1] {
            return Err(EncodeError::Invalid(format!(
                "selection entry ({l}, {n}) is outside the network"
            )));
        }
        if bounds.ub[*l][*n] <= bounds.lb[*l][*n] {
            return Err(EncodeError::EmptyInterval { layer: *l, neuron: *n });
        }
    }

    // Modes are period-independent: decide once.
    let mut modes: Vec<Vec<NeuronMode>> = Vec::with_capacity(hidden_layers);
    let mut fixed_neurons = 0;
    let mut triangle_neurons = 0;
    let mut binaries_per_period = 0;
    for l in 0..hidden_layers {
        let mut layer_modes = Vec::with_capacity(p.layer_sizes[l + 1]);
        for n in 0..p.layer_sizes[l + 1] {
            let (lb, ub) = (bounds.lb[l][n], bounds.ub[l][n]);
            if ub <= lb {
                return Err(EncodeError::EmptyInterval { layer: l, neuron: n });
            }
            let mode = if ub <= 0.0 {
                fixed_neurons += 1;
                NeuronMode::FixedZero
            } else if lb >= 0.0 {
                fixed_neurons += 1;
                NeuronMode::FixedIdentity
            } else if selection.contains(&(l, n)) {
                triangle_neurons += 1;
                NeuronMode::Triangle
            } else {
                binaries_per_period += 1;
                NeuronMode::BigM { big_m: lb.abs().max(ub.abs()) + 1.0 }
            };
            layer_modes.push(mode);
        }
        modes.push(layer_modes);
    }

    let mut periods = Vec::with_capacity(x_vars.len());
    for (period, xs) in x_vars {
        if xs.len() != p.input_len() {
            return Err(EncodeError::Invalid(format!(
                "period {period}: {} input variables for an input layer of {}",
                xs.len(),
                p.input_len()
            )));
        }
        let mut z_hat_all = Vec::with_capacity(hidden_layers);
        let mut z_all = Vec::with_capacity(hidden_layers);
        let mut a_all = Vec::with_capacity(hidden_layers);
        let mut prev: Vec<VarId> = xs.clone();
        for l in 0..hidden_layers {
            let n_in = p.layer_sizes[l];
            let n_out = p.layer_sizes[l + 1];
            let mut zh_layer = Vec::with_capacity(n_out);
            let mut z_layer = Vec::with_capacity(n_out);
            let mut a_layer = Vec::with_capacity(n_out);
            for n in 0..n_out {
                let (lb, ub) = (bounds.lb[l][n], bounds.ub[l][n]);
                let zh = model.add_continuous(format!("zh_t{period}_l{l}_n{n}"), lb, ub);
                // zh - sum w * prev = bias
                let mut row: Vec<(VarId, f64)> = vec![(zh, 1.0)];
                for (c, &pv) in prev.iter().enumerate() {
                    row.push((pv, -p.weights[l][n * n_in + c]));
                }
                model.add_row(Sense::Eq, p.biases[l][n], &row);

                let z = model.add_continuous(
                    format!("z_t{period}_l{l}_n{n}"),
                    0.0,
                    ub.max(0.0),
                );
                let mut a_var = None;
                match modes[l][n] {
                    NeuronMode::FixedZero => {
                        // Bounds already pin z to [0, 0].
                    }
                    NeuronMode::FixedIdentity => {
                        model.add_row(Sense::Eq, 0.0, &[(z, 1.0), (zh, -1.0)]);
                    }
                    NeuronMode::Triangle => {
                        // z >= zh; (ub-lb) z - ub zh <= -ub lb; z >= 0 via bound.
                        model.add_row(Sense::Ge, 0.0, &[(z, 1.0), (zh, -1.0)]);
                        model.add_row(
                            Sense::Le,
                            -ub * lb,
                            &[(z, ub - lb), (zh, -ub)],
                        );
                        if penalty_weight > 0.0 {
                            model.add_obj(z, penalty_weight);
                        }
                    }
                    NeuronMode::BigM { big_m } => {
                        let a = model.add_var(
                            format!("a_t{period}_l{l}_n{n}"),
                            0.0,
                            1.0,
                            Integrality::Binary,
                        );
                        // z <= zh + M(1-a); z >= zh; z <= M a; z >= 0 (bound).
                        model.add_row(
                            Sense::Le,
                            big_m,
                            &[(z, 1.0), (zh, -1.0), (a, big_m)],
                        );
                        model.add_row(Sense::Ge, 0.0, &[(z, 1.0), (zh, -1.0)]);
                        model.add_row(Sense::Le, 0.0, &[(z, 1.0), (a, -big_m)]);
                        a_var = Some(a);
                    }
                }
                zh_layer.push(zh);
                z_layer.push(z);
                a_layer.push(a_var);
            }
            prev = z_layer.clone();
            z_hat_all.push(zh_layer);
            z_all.push(z_layer);
            a_all.push(a_layer);
        }

        // Linear output head.
        let (out_lb, out_ub) = bounds.output_range();
        let last = hidden_layers;
        let n_in = p.layer_sizes[last];
        let output = model.add_continuous(format!("rhat_t{period}"), out_lb, out_ub);
        let mut row: Vec<(VarId, f64)> = vec![(output, 1.0)];
        for (c, &zv) in prev.iter().enumerate() {
            row.push((zv, -p.weights[last][c]));
        }
        let _ = n_in;
        model.add_row(Sense::Eq, p.biases[last][0], &row);

        periods.push(PeriodEncoding {
            period: *period,
            z_hat: z_hat_all,
            z: z_all,
            a: a_all,
            output,
        });
    }

    Ok(EncodedNetwork {
        periods,
        modes,
        selection: selection.clone(),
        binaries_per_period,
        fixed_neurons,
        triangle_neurons,
    })
}

/// One row per encoded period: predicted RoCoF at most `rocof_lim`
/// (positive magnitude convention).
pub fn attach_rocof_constraint(
    model: &mut MilpModel,
    encoded: &EncodedNetwork,
    rocof_lim: f64,
) {
    assert!(rocof_lim > 0.0, "rocof limit is a positive magnitude");
    for pe in &encoded.periods {
        model.add_row(Sense::Le, rocof_lim, &[(pe.output, 1.0)]);
    }
}

/// Text table of per-neuron decisions: layer, index, positivity, bounds,
/// mode. The main artifact for debugging selective linearization.
pub fn selection_report(
    bounds: &NeuronBounds,
    stats: &NeuronStats,
    encoded: &EncodedNetwork,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>5} {:>6} {:>10} {:>12} {:>12}  mode\n",
        "layer", "neuron", "eps", "lb", "ub"
    ));
    for (l, layer_modes) in encoded.modes.iter().enumerate() {
        for (n, mode) in layer_modes.iter().enumerate() {
            let eps = stats.positivity.get(l).and_then(|v| v.get(n)).copied().unwrap_or(f64::NAN);
            let mode_txt = match mode {
                NeuronMode::BigM { big_m } => format!("exact (M={big_m:.3})"),
                NeuronMode::Triangle => "triangle".to_string(),
                NeuronMode::FixedZero => "fixed-zero".to_string(),
                NeuronMode::FixedIdentity => "fixed-identity".to_string(),
            };
            out.push_str(&format!(
                "{:>5} {:>6} {:>10.4} {:>12.5} {:>12.5}  {}\n",
                l, n, eps, bounds.lb[l][n], bounds.ub[l][n], mode_txt
            ));
        }
    }
    out.push_str(&format!(
        "binaries/period: {}  triangle: {}  fixed: {}\n",
        encoded.binaries_per_period, encoded.triangle_neurons, encoded.fixed_neurons
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{solve_milp, MilpOptions, MilpStatus};
    use crate::mlp::{forward, InputScaling, MlpParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_net(rng: &mut ChaCha8Rng, sizes: &[usize]) -> MlpParams {
        let weights: Vec<Vec<f64>> = (0..sizes.len() - 1)
            .map(|l| (0..sizes[l] * sizes[l + 1]).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let biases: Vec<Vec<f64>> = (0..sizes.len() - 1)
            .map(|l| (0..sizes[l + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect())
            .collect();
        MlpParams {
            layer_sizes: sizes.to_vec(),
            weights,
            biases,
            input_scaling: InputScaling::identity(sizes[0]),
        }
    }

    #[test]
    fn single_neuron_interval_by_hand() {
        let p = MlpParams {
            layer_sizes: vec![2, 1, 1],
            weights: vec![vec![1.0, -1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
            input_scaling: InputScaling::identity(2),
        };
        let b = compute_bounds(&p, &[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!((b.lb[0][0], b.ub[0][0]), (-1.0, 1.0));
        // Output sees the post-ReLU interval [0, 1].
        assert_eq!((b.lb[1][0], b.ub[1][0]), (0.0, 1.0));
    }

    #[test]
    fn zero_weights_bias_only() {
        let p = MlpParams {
            layer_sizes: vec![3, 2, 1],
            weights: vec![vec![0.0; 6], vec![0.0; 2]],
            biases: vec![vec![2.0, 2.0], vec![2.0]],
            input_scaling: InputScaling::identity(3),
        };
        let b = compute_bounds(&p, &[(0.0, 5.0); 3]);
        assert_eq!((b.lb[0][0], b.ub[0][0]), (2.0, 2.0));
        assert_eq!((b.lb[1][0], b.ub[1][0]), (2.0, 2.0));
    }

    #[test]
    fn grid_sampling_never_escapes_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let p = random_net(&mut rng, &[2, 6, 1]);
        let bx = [(-1.5, 2.0), (0.0, 3.0)];
        let b = compute_bounds(&p, &bx);
        for i in 0..50 {
            for j in 0..50 {
                let x = [
                    bx[0].0 + (bx[0].1 - bx[0].0) * i as f64 / 49.0,
                    bx[1].0 + (bx[1].1 - bx[1].0) * j as f64 / 49.0,
                ];
                let acts = p.pre_activations(&x).unwrap();
                for (l, layer) in acts.iter().enumerate() {
                    for (n, z) in layer.iter().enumerate() {
                        assert!(
                            *z >= b.lb[l][n] - 1e-9 && *z <= b.ub[l][n] + 1e-9,
                            "layer {l} neuron {n}: {z} outside [{}, {}]",
                            b.lb[l][n],
                            b.ub[l][n]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn bounds_hold_on_10k_random_box_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let p = random_net(&mut rng, &[4, 10, 10, 1]);
        let bx: Vec<(f64, f64)> = (0..4)
            .map(|_| {
                let lo = rng.gen_range(-2.0..0.0);
                (lo, lo + rng.gen_range(0.5..3.0))
            })
            .collect();
        let b = compute_bounds(&p, &bx);
        for _ in 0..10_000 {
            let x: Vec<f64> = bx.iter().map(|(lo, hi)| rng.gen_range(*lo..=*hi)).collect();
            let acts = p.pre_activations(&x).unwrap();
            for (l, layer) in acts.iter().enumerate() {
                for (n, z) in layer.iter().enumerate() {
                    assert!(*z >= b.lb[l][n] - 1e-9 && *z <= b.ub[l][n] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn stats_fraction_positive() {
        // One linear neuron z = x; samples 1, -1, 2, -2.
        let p = MlpParams {
            layer_sizes: vec![1, 1, 1],
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
            input_scaling: InputScaling::identity(1),
        };
        let feats: Vec<Vec<f64>> = [1.0, -1.0, 2.0, -2.0].iter().map(|v| vec![*v]).collect();
        let s = activation_stats(&p, &feats).unwrap();
        assert_eq!(s.positivity[0][0], 0.5);
        let all_pos: Vec<Vec<f64>> = [1.0, 3.0].iter().map(|v| vec![*v]).collect();
        assert_eq!(activation_stats(&p, &all_pos).unwrap().positivity[0][0], 1.0);
        assert!(activation_stats(&p, &[]).is_err());
    }

    #[test]
    fn stats_match_two_pass_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_net(&mut rng, &[5, 10, 10, 1]);
        let feats: Vec<Vec<f64>> =
            (0..500).map(|_| (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let s = activation_stats(&p, &feats).unwrap();
        // Naive recount.
        for l in 0..2 {
            for n in 0..10 {
                let mut count = 0usize;
                for x in &feats {
                    if p.pre_activations(x).unwrap()[l][n] > 0.0 {
                        count += 1;
                    }
                }
                assert_eq!(s.positivity[l][n], count as f64 / feats.len() as f64);
            }
        }
    }

    #[test]
    fn selection_thresholds() {
        let stats = NeuronStats { positivity: vec![vec![0.9, 0.4, 0.5]], samples: 10 };
        assert_eq!(select_neurons(&stats, 0.0).len(), 3, "threshold 0 selects all");
        assert!(select_neurons(&stats, 1.1).is_empty(), "threshold above 1 selects none");
        let h = select_neurons(&stats, 0.5);
        assert_eq!(h, Selection::from([(0, 0), (0, 2)]));
    }

    fn encode_fixed_input_model(
        p: &MlpParams,
        x: &[f64],
        selection: &Selection,
    ) -> (MilpModel, EncodedNetwork) {
        let bx: Vec<(f64, f64)> = (0..p.input_len()).map(|_| (-3.0, 3.0)).collect();
        let bounds = compute_bounds(p, &bx);
        let mut model = MilpModel::new();
        let xs: Vec<VarId> = x
            .iter()
            .enumerate()
            .map(|(i, v)| model.add_continuous(format!("x{i}"), *v, *v))
            .collect();
        let enc = encode(p, &bounds, selection, &mut model, &[(0, xs)], 0.0).unwrap();
        (model, enc)
    }

    #[test]
    fn exact_encoding_reproduces_forward_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for case in 0..5 {
            let p = random_net(&mut rng, &[4, 10, 10, 10, 1]);
            for _ in 0..3 {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let (mut model, enc) = encode_fixed_input_model(&p, &x, &Selection::new());
                model.set_obj(enc.periods[0].output, 1.0);
                let sol = solve_milp(&model, &MilpOptions::exact()).unwrap();
                assert_eq!(sol.status, MilpStatus::Optimal, "case {case}");
                let direct = forward(&p, &x).unwrap();
                let encoded = sol.values[enc.periods[0].output.0];
                assert!(
                    (encoded - direct).abs() < 1e-6,
                    "case {case}: encoded {encoded} vs forward {direct}"
                );
            }
        }
    }

    #[test]
    fn triangle_vertices_force_unique_output() {
        // Neuron with bounds [-2, 4] in triangle mode.
        let p = MlpParams {
            layer_sizes: vec![1, 1, 1],
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![vec![1.0], vec![0.0]],
            input_scaling: InputScaling::identity(1),
        };
        // x in [-3, 3] -> zh = x + 1 in [-2, 4].
        let bounds = compute_bounds(&p, &[(-3.0, 3.0)]);
        assert_eq!((bounds.lb[0][0], bounds.ub[0][0]), (-2.0, 4.0));
        let h = Selection::from([(0, 0)]);
        for (xfix, want_z) in [(-3.0, 0.0), (3.0, 4.0)] {
            let mut model = MilpModel::new();
            let xv = model.add_continuous("x", xfix, xfix);
            let enc = encode(&p, &bounds, &h, &mut model, &[(0, vec![xv])], 0.0).unwrap();
            let z = enc.periods[0].z[0][0];
            // Feasibility at the vertices pins z: minimize and maximize it.
            for sign in [1.0, -1.0] {
                let mut m2 = model.clone();
                m2.set_obj(z, sign);
                let sol = solve_milp(&m2, &MilpOptions::exact()).unwrap();
                assert_eq!(sol.status, MilpStatus::Optimal);
                assert!(
                    (sol.values[z.0] - want_z).abs() < 1e-7,
                    "zh={xfix}: z={} expected {want_z}",
                    sol.values[z.0]
                );
            }
        }
    }

    #[test]
    fn one_sided_neurons_lose_their_binaries() {
        // zh = x + 5 with x in [0, 1] is always positive: identity, no binary.
        let p = MlpParams {
            layer_sizes: vec![1, 2, 1],
            weights: vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            biases: vec![vec![5.0, -10.0], vec![0.0]],
            input_scaling: InputScaling::identity(1),
        };
        let bounds = compute_bounds(&p, &[(0.0, 1.0)]);
        let mut model = MilpModel::new();
        let xv = model.add_continuous("x", 0.0, 1.0);
        let enc =
            encode(&p, &bounds, &Selection::new(), &mut model, &[(0, vec![xv])], 0.0).unwrap();
        assert_eq!(enc.modes[0][0], NeuronMode::FixedIdentity);
        assert_eq!(enc.modes[0][1], NeuronMode::FixedZero);
        assert_eq!(enc.binaries_per_period, 0);
        assert_eq!(model.num_binaries(), 0);
        assert_eq!(enc.fixed_neurons, 2);
    }

    #[test]
    fn triangle_contains_exact_relu_graph() {
        // Dense sweep: (zh, max(zh, 0)) satisfies all three envelope rows.
        for (lb, ub) in [(-2.0, 4.0), (-5.0, 1.0), (-0.3, 0.7)] {
            for k in 0..=1000 {
                let zh = lb + (ub - lb) * k as f64 / 1000.0;
                let z = zh.max(0.0);
                assert!(z >= zh - 1e-12);
                assert!(z >= -1e-12);
                assert!(
                    (ub - lb) * z - ub * zh <= -ub * lb + 1e-9,
                    "violated at zh={zh} for [{lb}, {ub}]"
                );
            }
        }
    }

    #[test]
    fn binary_accounting_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let p = random_net(&mut rng, &[3, 10, 10, 1]);
        let bx = vec![(-2.0, 2.0); 3];
        let bounds = compute_bounds(&p, &bx);

        let build = |selection: &Selection| {
            let mut model = MilpModel::new();
            let xs: Vec<VarId> = (0..3)
                .map(|i| model.add_continuous(format!("x{i}"), -2.0, 2.0))
                .collect();
            let enc = encode(&p, &bounds, selection, &mut model, &[(0, xs)], 0.0).unwrap();
            (model.num_binaries(), enc)
        };

        let (dnn_binaries, dnn) = build(&Selection::new());
        let mut h = Selection::new();
        for l in 0..2 {
            for n in 0..10 {
                if (l + n) % 2 == 0 {
                    h.insert((l, n));
                }
            }
        }
        let (slnn_binaries, slnn) = build(&h);
        // Selected neurons that were not already fixed by one-sided bounds.
        let effective_h: usize = h
            .iter()
            .filter(|(l, n)| bounds.lb[*l][*n] < 0.0 && bounds.ub[*l][*n] > 0.0)
            .count();
        assert_eq!(slnn_binaries, dnn_binaries - effective_h);
        assert_eq!(dnn.binaries_per_period - slnn.binaries_per_period, effective_h);
        assert!(slnn_binaries < dnn_binaries, "selection must drop binaries");
    }

    #[test]
    fn enlarging_selection_never_raises_the_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..5 {
            let p = random_net(&mut rng, &[2, 6, 1]);
            let bx = vec![(-1.0, 1.0); 2];
            let bounds = compute_bounds(&p, &bx);
            let solve_with = |selection: &Selection| {
                let mut model = MilpModel::new();
                let xs: Vec<VarId> = (0..2)
                    .map(|i| model.add_continuous(format!("x{i}"), -1.0, 1.0))
                    .collect();
                let enc =
                    encode(&p, &bounds, selection, &mut model, &[(0, xs)], 0.0).unwrap();
                model.set_obj(enc.periods[0].output, 1.0);
                solve_milp(&model, &MilpOptions::exact()).unwrap().objective_value
            };
            let none = solve_with(&Selection::new());
            let mut h1 = Selection::new();
            h1.insert((0, 0));
            h1.insert((0, 3));
            let some = solve_with(&h1);
            let mut h2 = h1.clone();
            for n in 0..6 {
                h2.insert((0, n));
            }
            let all = solve_with(&h2);
            assert!(some <= none + 1e-9, "supersets only relax: {some} vs {none}");
            assert!(all <= some + 1e-9, "supersets only relax: {all} vs {some}");
        }
    }

    #[test]
    fn rocof_rows_attach_per_period() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_net(&mut rng, &[2, 4, 1]);
        let bounds = compute_bounds(&p, &[(-1.0, 1.0); 2]);
        let mut model = MilpModel::new();
        let mut xvars = Vec::new();
        for t in 0..3 {
            let xs: Vec<VarId> = (0..2)
                .map(|i| model.add_continuous(format!("x{i}_t{t}"), -1.0, 1.0))
                .collect();
            xvars.push((t, xs));
        }
        let rows_before = model.num_constraints();
        let enc = encode(&p, &bounds, &Selection::new(), &mut model, &xvars, 0.0).unwrap();
        attach_rocof_constraint(&mut model, &enc, 0.5);
        assert_eq!(model.num_constraints(), rows_before + 3 * (4 + 4 * 3 + 1) + 3);
        // The added rows reference the output variables with limit 0.5.
        let last = &model.constraints[model.num_constraints() - 1];
        assert_eq!(last.rhs, 0.5);
    }

    #[test]
    fn huge_limit_is_vacuous_tiny_limit_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_net(&mut rng, &[2, 5, 1]);
        let bounds = compute_bounds(&p, &[(0.0, 1.0); 2]);

        let build = |lim: Option<f64>| {
            let mut model = MilpModel::new();
            let xs: Vec<VarId> = (0..2)
                .map(|i| model.add_continuous(format!("x{i}"), 0.0, 1.0))
                .collect();
            let enc =
                encode(&p, &bounds, &Selection::new(), &mut model, &[(0, xs)], 0.0).unwrap();
            // Maximize the output so the limit matters.
            model.set_obj(enc.periods[0].output, -1.0);
            if let Some(l) = lim {
                attach_rocof_constraint(&mut model, &enc, l);
            }
            solve_milp(&model, &MilpOptions::exact()).unwrap()
        };

        let unconstrained = build(None);
        let vacuous = build(Some(1e9));
        assert_eq!(unconstrained.status, MilpStatus::Optimal);
        assert!((vacuous.objective_value - unconstrained.objective_value).abs() < 1e-7);

        // Find the attainable floor by minimizing, then demand less.
        let mut model = MilpModel::new();
        let xs: Vec<VarId> = (0..2)
            .map(|i| model.add_continuous(format!("x{i}"), 0.0, 1.0))
            .collect();
        let enc = encode(&p, &bounds, &Selection::new(), &mut model, &[(0, xs)], 0.0).unwrap();
        model.set_obj(enc.periods[0].output, 1.0);
        let floor = solve_milp(&model, &MilpOptions::exact()).unwrap();
        let impossible = floor.objective_value - 0.25 * floor.objective_value.abs().max(0.5);
        if impossible > 0.0 {
            let mut m2 = model.clone();
            attach_rocof_constraint(&mut m2, &enc, impossible);
            let sol = solve_milp(&m2, &MilpOptions::exact()).unwrap();
            assert_eq!(sol.status, MilpStatus::Infeasible);
        }
    }

    #[test]
    fn selection_report_lists_every_neuron() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_net(&mut rng, &[2, 4, 1]);
        let bounds = compute_bounds(&p, &[(-1.0, 1.0); 2]);
        let feats: Vec<Vec<f64>> =
            (0..50).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let stats = activation_stats(&p, &feats).unwrap();
        let h = select_neurons(&stats, 0.5);
        let mut model = MilpModel::new();
        let xs: Vec<VarId> =
            (0..2).map(|i| model.add_continuous(format!("x{i}"), -1.0, 1.0)).collect();
        let enc = encode(&p, &bounds, &h, &mut model, &[(0, xs)], 0.0).unwrap();
        let report = selection_report(&bounds, &stats, &enc);
        assert_eq!(report.lines().count(), 1 + 4 + 1, "header + neurons + summary");
        assert!(report.contains("binaries/period"));
    }

    #[test]
    fn printed_index_is_not_a_fraction() {
        // The printed variant can go negative; the stated semantic cannot.
        let p = MlpParams {
            layer_sizes: vec![1, 1, 1],
            weights: vec![vec![1.0], vec![1.0]],
            biases: vec![vec![0.0], vec![0.0]],
            input_scaling: InputScaling::identity(1),
        };
        let feats: Vec<Vec<f64>> = [-5.0, -1.0, 0.5].iter().map(|v| vec![*v]).collect();
        let printed = printed_positivity_index(&p, &feats).unwrap();
        assert!(printed[0][0] < 0.0);
        let stated = activation_stats(&p, &feats).unwrap();
        assert!((0.0..=1.0).contains(&stated.positivity[0][0]));
    }
}
