//! Forward pass and backpropagation for the hybrid network.
//!
//! The dynamic tensor is consumed timestep by timestep (oldest lag first) by
//! a standard LSTM with tanh cell activation; the static vector goes through
//! one ReLU feedforward layer. The final LSTM hidden state is concatenated
//! with the FNN hidden state, inverted dropout is applied to the
//! concatenation in train mode, then a ReLU final hidden layer feeds the
//! scalar sigmoid output.

use crate::error::{Error, Result};

use super::params::ModelParams;
use super::{sigmoid, PROB_CLAMP_HI, PROB_CLAMP_LO};

/// Dropout behavior for one forward pass. In train mode a pre-drawn keep
/// mask over the concatenated H+F units is scaled by 1/(1−rate) (inverted
/// dropout), so eval needs no rescaling.
#[derive(Debug, Clone)]
pub enum Dropout<'a> {
    Eval,
    Train { rate: f64, keep: &'a [bool] },
}

pub(crate) struct Cache {
    xs: Vec<Vec<f64>>,
    gate_i: Vec<Vec<f64>>,
    gate_f: Vec<Vec<f64>>,
    gate_g: Vec<Vec<f64>>,
    gate_o: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
    hidden: Vec<Vec<f64>>,
    stat: Vec<f64>,
    fnn_pre: Vec<f64>,
    /// Per-unit dropout multiplier (1 in eval mode, 0 or 1/(1−rate) in train).
    drop_scale: Vec<f64>,
    dropped: Vec<f64>,
    head_pre: Vec<f64>,
    head_h: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

/// Runs the network on one sample. `dynamic` is the flattened
/// (timesteps × channels) tensor with the oldest lag first.
pub(crate) fn forward(
    params: &ModelParams,
    dynamic: &[f64],
    stat: &[f64],
    dropout: &Dropout<'_>,
) -> Result<Cache> {
    let c = params.channels;
    let h = params.lstm_hidden;
    if c == 0 || dynamic.len() % c != 0 || dynamic.is_empty() {
        return Err(Error::shape(format!(
            "dynamic tensor of {} values does not divide into {c} channels",
            dynamic.len()
        )));
    }
    if stat.len() != params.static_dim {
        return Err(Error::shape(format!(
            "static vector has {} features, model expects {}",
            stat.len(),
            params.static_dim
        )));
    }
    let steps = dynamic.len() / c;

    let mut xs = Vec::with_capacity(steps);
    let mut gate_i = Vec::with_capacity(steps);
    let mut gate_f = Vec::with_capacity(steps);
    let mut gate_g = Vec::with_capacity(steps);
    let mut gate_o = Vec::with_capacity(steps);
    let mut cell = Vec::with_capacity(steps);
    let mut tanh_cell = Vec::with_capacity(steps);
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(steps);

    let zero_state = vec![0.0; h];
    for t in 0..steps {
        let x = dynamic[t * c..(t + 1) * c].to_vec();
        let h_prev = if t == 0 { &zero_state } else { &hidden[t - 1] };
        let c_prev = if t == 0 { &zero_state } else { &cell[t - 1] };

        let mut a_i = params.input_gate.w_x.matvec(&x);
        add_in_place(&mut a_i, &params.input_gate.w_h.matvec(h_prev));
        add_in_place(&mut a_i, &params.input_gate.b);
        let mut a_f = params.forget_gate.w_x.matvec(&x);
        add_in_place(&mut a_f, &params.forget_gate.w_h.matvec(h_prev));
        add_in_place(&mut a_f, &params.forget_gate.b);
        let mut a_g = params.cell_gate.w_x.matvec(&x);
        add_in_place(&mut a_g, &params.cell_gate.w_h.matvec(h_prev));
        add_in_place(&mut a_g, &params.cell_gate.b);
        let mut a_o = params.output_gate.w_x.matvec(&x);
        add_in_place(&mut a_o, &params.output_gate.w_h.matvec(h_prev));
        add_in_place(&mut a_o, &params.output_gate.b);

        let i_t: Vec<f64> = a_i.iter().map(|v| sigmoid(*v)).collect();
        let f_t: Vec<f64> = a_f.iter().map(|v| sigmoid(*v)).collect();
        let g_t: Vec<f64> = a_g.iter().map(|v| v.tanh()).collect();
        let o_t: Vec<f64> = a_o.iter().map(|v| sigmoid(*v)).collect();
        let c_t: Vec<f64> = (0..h).map(|j| f_t[j] * c_prev[j] + i_t[j] * g_t[j]).collect();
        let tc_t: Vec<f64> = c_t.iter().map(|v| v.tanh()).collect();
        let h_t: Vec<f64> = (0..h).map(|j| o_t[j] * tc_t[j]).collect();

        xs.push(x);
        gate_i.push(i_t);
        gate_f.push(f_t);
        gate_g.push(g_t);
        gate_o.push(o_t);
        cell.push(c_t);
        tanh_cell.push(tc_t);
        hidden.push(h_t);
    }

    let mut fnn_pre = params.fnn_w.matvec(stat);
    add_in_place(&mut fnn_pre, &params.fnn_b);
    let fnn_h = relu(&fnn_pre);

    let mut concat = hidden[steps - 1].clone();
    concat.extend_from_slice(&fnn_h);

    let drop_scale: Vec<f64> = match dropout {
        Dropout::Eval => vec![1.0; concat.len()],
        Dropout::Train { rate, keep } => {
            if *rate == 0.0 {
                vec![1.0; concat.len()]
            } else {
                if keep.len() != concat.len() {
                    return Err(Error::shape(format!(
                        "dropout mask has {} entries, expected {}",
                        keep.len(),
                        concat.len()
                    )));
                }
                let scale = 1.0 / (1.0 - rate);
                keep.iter().map(|k| if *k { scale } else { 0.0 }).collect()
            }
        }
    };
    let dropped: Vec<f64> = concat.iter().zip(&drop_scale).map(|(v, s)| v * s).collect();

    let mut head_pre = params.head_w.matvec(&dropped);
    add_in_place(&mut head_pre, &params.head_b);
    let head_h = relu(&head_pre);

    let logit = dot(&params.out_w, &head_h) + params.out_b;
    let prob = sigmoid(logit);

    Ok(Cache {
        xs,
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        cell,
        tanh_cell,
        hidden,
        stat: stat.to_vec(),
        fnn_pre,
        drop_scale,
        dropped,
        head_pre,
        head_h,
        logit,
        prob,
    })
}

fn add_in_place(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backpropagates `d_logit` through the cached forward pass. Parameter
/// gradients are accumulated into `grads` if provided; input gradients
/// (dynamic oldest-first, static) are returned if requested.
pub(crate) fn backward(
    params: &ModelParams,
    cache: &Cache,
    d_logit: f64,
    mut grads: Option<&mut ModelParams>,
    want_input_grads: bool,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let h = params.lstm_hidden;
    let f = params.fnn_hidden;
    let steps = cache.xs.len();

    // output layer
    let d_head_h: Vec<f64> = params.out_w.iter().map(|w| w * d_logit).collect();
    if let Some(g) = grads.as_deref_mut() {
        for (gw, hh) in g.out_w.iter_mut().zip(&cache.head_h) {
            *gw += d_logit * hh;
        }
        g.out_b += d_logit;
    }

    // final hidden layer (ReLU)
    let d_head_pre: Vec<f64> = d_head_h
        .iter()
        .zip(&cache.head_pre)
        .map(|(d, pre)| if *pre > 0.0 { *d } else { 0.0 })
        .collect();
    if let Some(g) = grads.as_deref_mut() {
        g.head_w.add_outer(&d_head_pre, &cache.dropped);
        add_in_place(&mut g.head_b, &d_head_pre);
    }
    let d_dropped = params.head_w.t_matvec(&d_head_pre);

    // dropout is a fixed per-unit scale during one pass
    let d_concat: Vec<f64> =
        d_dropped.iter().zip(&cache.drop_scale).map(|(d, s)| d * s).collect();

    let mut d_hidden: Vec<f64> = d_concat[..h].to_vec();
    let d_fnn_h: Vec<f64> = d_concat[h..h + f].to_vec();

    // static branch (ReLU)
    let d_fnn_pre: Vec<f64> = d_fnn_h
        .iter()
        .zip(&cache.fnn_pre)
        .map(|(d, pre)| if *pre > 0.0 { *d } else { 0.0 })
        .collect();
    if let Some(g) = grads.as_deref_mut() {
        g.fnn_w.add_outer(&d_fnn_pre, &cache.stat);
        add_in_place(&mut g.fnn_b, &d_fnn_pre);
    }
    let d_stat =
        if want_input_grads { params.fnn_w.t_matvec(&d_fnn_pre) } else { Vec::new() };

    // backpropagation through time
    let zero_state = vec![0.0; h];
    let mut d_cell = vec![0.0; h];
    let mut d_dynamic = if want_input_grads {
        vec![0.0; steps * params.channels]
    } else {
        Vec::new()
    };
    for t in (0..steps).rev() {
        let i_t = &cache.gate_i[t];
        let f_t = &cache.gate_f[t];
        let g_t = &cache.gate_g[t];
        let o_t = &cache.gate_o[t];
        let tc_t = &cache.tanh_cell[t];
        let c_prev = if t == 0 { &zero_state } else { &cache.cell[t - 1] };
        let h_prev = if t == 0 { &zero_state } else { &cache.hidden[t - 1] };

        let mut d_a_i = vec![0.0; h];
        let mut d_a_f = vec![0.0; h];
        let mut d_a_g = vec![0.0; h];
        let mut d_a_o = vec![0.0; h];
        for j in 0..h {
            let dh = d_hidden[j];
            d_a_o[j] = dh * tc_t[j] * o_t[j] * (1.0 - o_t[j]);
            d_cell[j] += dh * o_t[j] * (1.0 - tc_t[j] * tc_t[j]);
            d_a_i[j] = d_cell[j] * g_t[j] * i_t[j] * (1.0 - i_t[j]);
            d_a_f[j] = d_cell[j] * c_prev[j] * f_t[j] * (1.0 - f_t[j]);
            d_a_g[j] = d_cell[j] * i_t[j] * (1.0 - g_t[j] * g_t[j]);
        }

        if let Some(g) = grads.as_deref_mut() {
            g.input_gate.w_x.add_outer(&d_a_i, &cache.xs[t]);
            g.input_gate.w_h.add_outer(&d_a_i, h_prev);
            add_in_place(&mut g.input_gate.b, &d_a_i);
            g.forget_gate.w_x.add_outer(&d_a_f, &cache.xs[t]);
            g.forget_gate.w_h.add_outer(&d_a_f, h_prev);
            add_in_place(&mut g.forget_gate.b, &d_a_f);
            g.cell_gate.w_x.add_outer(&d_a_g, &cache.xs[t]);
            g.cell_gate.w_h.add_outer(&d_a_g, h_prev);
            add_in_place(&mut g.cell_gate.b, &d_a_g);
            g.output_gate.w_x.add_outer(&d_a_o, &cache.xs[t]);
            g.output_gate.w_h.add_outer(&d_a_o, h_prev);
            add_in_place(&mut g.output_gate.b, &d_a_o);
        }

        if want_input_grads {
            let mut dx = params.input_gate.w_x.t_matvec(&d_a_i);
            add_in_place(&mut dx, &params.forget_gate.w_x.t_matvec(&d_a_f));
            add_in_place(&mut dx, &params.cell_gate.w_x.t_matvec(&d_a_g));
            add_in_place(&mut dx, &params.output_gate.w_x.t_matvec(&d_a_o));
            let c = params.channels;
            d_dynamic[t * c..(t + 1) * c].copy_from_slice(&dx);
        }

        if t > 0 {
            let mut dh_prev = params.input_gate.w_h.t_matvec(&d_a_i);
            add_in_place(&mut dh_prev, &params.forget_gate.w_h.t_matvec(&d_a_f));
            add_in_place(&mut dh_prev, &params.cell_gate.w_h.t_matvec(&d_a_g));
            add_in_place(&mut dh_prev, &params.output_gate.w_h.t_matvec(&d_a_o));
            d_hidden = dh_prev;
            for j in 0..h {
                d_cell[j] *= f_t[j];
            }
        }
    }

    if want_input_grads {
        Some((d_dynamic, d_stat))
    } else {
        None
    }
}

/// Eval-mode predicted probability for one sample.
pub fn predict_probability(params: &ModelParams, dynamic: &[f64], stat: &[f64]) -> Result<f64> {
    Ok(forward(params, dynamic, stat, &Dropout::Eval)?.prob)
}

/// Mean clamped binary cross-entropy over a batch plus analytic gradients
/// for every parameter, via backpropagation through time and the static
/// branch. `masks` supplies one dropout keep-mask per sample for train mode;
/// pass `None` for eval-mode gradients.
pub fn loss_and_grads(
    params: &ModelParams,
    batch: &[super::train::TrainSample],
    dropout_rate: f64,
    masks: Option<&[Vec<bool>]>,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::data("loss_and_grads: empty batch"));
    }
    if let Some(m) = masks {
        if m.len() != batch.len() {
            return Err(Error::shape("one dropout mask per batch sample is required"));
        }
    }
    let n = batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for (idx, sample) in batch.iter().enumerate() {
        let dropout = match masks {
            Some(m) => Dropout::Train { rate: dropout_rate, keep: &m[idx] },
            None => Dropout::Eval,
        };
        let cache = forward(params, &sample.dynamic, &sample.stat, &dropout)?;
        let y = if sample.label { 1.0 } else { 0.0 };
        let p = cache.prob.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI);
        loss += if sample.label { -p.ln() } else { -(1.0 - p).ln() };
        // The clamp zeroes the gradient outside the interior, keeping the
        // analytic gradient consistent with the clamped loss.
        let d_logit = if cache.prob > PROB_CLAMP_LO && cache.prob < PROB_CLAMP_HI {
            (p - y) / n
        } else {
            0.0
        };
        backward(params, &cache, d_logit, Some(&mut grads), false);
    }
    Ok((loss / n, grads))
}

/// Logit and its gradient with respect to the inputs, in eval mode. Returns
/// (logit, d_logit/d_dynamic oldest-first, d_logit/d_static).
pub fn logit_and_input_grads(
    params: &ModelParams,
    dynamic: &[f64],
    stat: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let cache = forward(params, dynamic, stat, &Dropout::Eval)?;
    let (d_dyn, d_stat) =
        backward(params, &cache, 1.0, None, true).expect("input grads requested");
    Ok((cache.logit, d_dyn, d_stat))
}

#[cfg(test)]
mod tests {
    use super::super::train::TrainSample;
    use super::super::ModelConfig;
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig { lstm_hidden: 4, fnn_hidden: 3, final_hidden: 3, ..ModelConfig::default() }
    }

    fn random_sample(rng: &mut ChaCha8Rng, steps: usize, c: usize, s: usize) -> TrainSample {
        TrainSample {
            dynamic: (0..steps * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            stat: (0..s).map(|_| rng.random_range(-1.0..1.0)).collect(),
            label: rng.random::<f64>() < 0.5,
        }
    }

    #[test]
    fn zero_params_give_half_probability() {
        let p = ModelParams::init(&tiny_config(), 2, 2, 0).unwrap().zeros_like();
        let prob = predict_probability(&p, &[0.5, 0.5, 0.1, 0.9], &[0.3, 0.3]).unwrap();
        assert_eq!(prob, 0.5, "sigmoid(0) with all-zero weights");
    }

    #[test]
    fn eval_ignores_dropout_and_zero_rate_matches_eval() {
        let params = ModelParams::init(&tiny_config(), 3, 2, 7).unwrap();
        let dynamic: Vec<f64> = (0..9).map(|i| (i as f64) / 10.0).collect();
        let stat = vec![0.2, -0.4];
        let eval = forward(&params, &dynamic, &stat, &Dropout::Eval).unwrap().prob;
        let keep = vec![true; 4 + 3];
        let zero_rate =
            forward(&params, &dynamic, &stat, &Dropout::Train { rate: 0.0, keep: &keep })
                .unwrap()
                .prob;
        assert_eq!(eval, zero_rate);
    }

    #[test]
    fn bce_closed_form() {
        let loss = super::super::bce_loss(0.5, true);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn duplicated_batch_has_identical_mean_loss() {
        let params = ModelParams::init(&tiny_config(), 3, 2, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sample = random_sample(&mut rng, 5, 3, 2);
        let (single, _) = loss_and_grads(&params, &[sample.clone()], 0.0, None).unwrap();
        let batch = vec![sample.clone(), sample.clone(), sample];
        let (tripled, _) = loss_and_grads(&params, &batch, 0.0, None).unwrap();
        assert!((single - tripled).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let params = ModelParams::init(&tiny_config(), 3, 2, 7).unwrap();
        assert!(predict_probability(&params, &[0.0; 7], &[0.0; 2]).is_err());
        assert!(predict_probability(&params, &[0.0; 9], &[0.0; 3]).is_err());
    }

    /// Central finite differences over every parameter of a small model.
    #[test]
    fn gradients_match_finite_differences() {
        let cfg = tiny_config();
        let params = ModelParams::init(&cfg, 3, 2, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let batch: Vec<TrainSample> =
            (0..4).map(|_| random_sample(&mut rng, 5, 3, 2)).collect();

        let (_, grads) = loss_and_grads(&params, &batch, 0.0, None).unwrap();
        let g_flat = grads.to_vec();
        let p_flat = params.to_vec();
        let h_step = 1e-5;
        let mut max_rel: f64 = 0.0;
        for k in 0..p_flat.len() {
            let mut plus = p_flat.clone();
            plus[k] += h_step;
            let mut minus = p_flat.clone();
            minus[k] -= h_step;
            let (lp, _) =
                loss_and_grads(&params.from_vec(&plus).unwrap(), &batch, 0.0, None).unwrap();
            let (lm, _) =
                loss_and_grads(&params.from_vec(&minus).unwrap(), &batch, 0.0, None).unwrap();
            let fd = (lp - lm) / (2.0 * h_step);
            let rel = (fd - g_flat[k]).abs() / g_flat[k].abs().max(fd.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    /// Fixed dropout masks are part of the differentiated function, so the
    /// check also holds in train mode.
    #[test]
    fn gradients_match_finite_differences_with_dropout_masks() {
        let cfg = ModelConfig { dropout_rate: 0.5, ..tiny_config() };
        let params = ModelParams::init(&cfg, 2, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<TrainSample> =
            (0..3).map(|_| random_sample(&mut rng, 4, 2, 2)).collect();
        let masks: Vec<Vec<bool>> = (0..batch.len())
            .map(|_| (0..cfg.lstm_hidden + cfg.fnn_hidden).map(|_| rng.random::<f64>() < 0.7).collect())
            .collect();

        let (_, grads) = loss_and_grads(&params, &batch, 0.5, Some(&masks)).unwrap();
        let g_flat = grads.to_vec();
        let p_flat = params.to_vec();
        let h_step = 1e-5;
        for k in (0..p_flat.len()).step_by(3) {
            let mut plus = p_flat.clone();
            plus[k] += h_step;
            let mut minus = p_flat.clone();
            minus[k] -= h_step;
            let (lp, _) = loss_and_grads(&params.from_vec(&plus).unwrap(), &batch, 0.5, Some(&masks)).unwrap();
            let (lm, _) = loss_and_grads(&params.from_vec(&minus).unwrap(), &batch, 0.5, Some(&masks)).unwrap();
            let fd = (lp - lm) / (2.0 * h_step);
            let rel = (fd - g_flat[k]).abs() / g_flat[k].abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "coordinate {k}: rel {rel}");
        }
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let params = ModelParams::init(&tiny_config(), 3, 2, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sample = random_sample(&mut rng, 4, 3, 2);
        let (_, d_dyn, d_stat) =
            logit_and_input_grads(&params, &sample.dynamic, &sample.stat).unwrap();
        let h_step = 1e-5;
        for k in 0..sample.dynamic.len() {
            let mut plus = sample.dynamic.clone();
            plus[k] += h_step;
            let mut minus = sample.dynamic.clone();
            minus[k] -= h_step;
            let lp = forward(&params, &plus, &sample.stat, &Dropout::Eval).unwrap().logit;
            let lm = forward(&params, &minus, &sample.stat, &Dropout::Eval).unwrap().logit;
            let fd = (lp - lm) / (2.0 * h_step);
            assert!((fd - d_dyn[k]).abs() < 1e-6, "dyn coordinate {k}");
        }
        for k in 0..sample.stat.len() {
            let mut plus = sample.stat.clone();
            plus[k] += h_step;
            let mut minus = sample.stat.clone();
            minus[k] -= h_step;
            let lp = forward(&params, &sample.dynamic, &plus, &Dropout::Eval).unwrap().logit;
            let lm = forward(&params, &sample.dynamic, &minus, &Dropout::Eval).unwrap().logit;
            let fd = (lp - lm) / (2.0 * h_step);
            assert!((fd - d_stat[k]).abs() < 1e-6, "stat coordinate {k}");
        }
    }
}
