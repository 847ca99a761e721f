//! Batched LSTM forward pass with a recorded tape, and reverse-mode backward.
//!
//! Buffers are time-major: step `t` of a `[T, B, D]` buffer is the row block
//! `t * B * D .. (t + 1) * B * D`. Every sequence in a batch has the same length.

use super::linalg::{gemm, Mat};
use super::ModelParams;
use crate::error::{Error, Result};
use crate::fastmath::exp;
use crate::mdn;

struct LayerTape {
    in_dim: usize,
    /// `[T, B, in]`
    input: Vec<f64>,
    /// `[T + 1, B, H]`, step 0 is the zero initial state.
    hidden: Vec<f64>,
    /// `[T + 1, B, H]`
    cell: Vec<f64>,
    /// `[T, B, 4H]` activated gates i, f, g, o.
    gates: Vec<f64>,
    /// `[T, B, H]` tanh of the new cell state.
    cell_tanh: Vec<f64>,
}

pub(super) struct Tape {
    layers: Vec<LayerTape>,
    batch: usize,
    steps: usize,
    /// `[B, m * 6M]` head outputs before activation.
    pub raw: Vec<f64>,
}

#[inline(always)]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (1.0 + exp(2.0 * x))
}

/// Gate activations and state update for one time step of one layer.
#[inline(always)]
fn cell_step_body(
    z: &mut [f64],
    c_prev: &[f64],
    c_new: &mut [f64],
    tc: &mut [f64],
    h_new: &mut [f64],
    h: usize,
) {
    for (s, zr) in z.chunks_exact_mut(4 * h).enumerate() {
        let (ifg, og) = zr.split_at_mut(3 * h);
        let (if_, gg) = ifg.split_at_mut(2 * h);
        if_.iter_mut().for_each(|v| *v = sigmoid(*v));
        og.iter_mut().for_each(|v| *v = sigmoid(*v));
        gg.iter_mut().for_each(|v| *v = tanh(*v));
        let rows = s * h..(s + 1) * h;
        let (cn, cp) = (&mut c_new[rows.clone()], &c_prev[rows.clone()]);
        let (ig, fg) = if_.split_at(h);
        for j in 0..h {
            cn[j] = fg[j] * cp[j] + ig[j] * gg[j];
        }
        let t_row = &mut tc[rows.clone()];
        t_row
            .iter_mut()
            .zip(cn.iter())
            .for_each(|(t, c)| *t = tanh(*c));
        h_new[rows]
            .iter_mut()
            .zip(og.iter().zip(t_row.iter()))
            .for_each(|(hv, (o, t))| *hv = o * t);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn cell_step_avx2(
    z: &mut [f64],
    c_prev: &[f64],
    c_new: &mut [f64],
    tc: &mut [f64],
    h_new: &mut [f64],
    h: usize,
) {
    cell_step_body(z, c_prev, c_new, tc, h_new, h)
}

// Only wider vectors, no FMA: both paths give bit-identical results.
fn cell_step(
    z: &mut [f64],
    c_prev: &[f64],
    c_new: &mut [f64],
    tc: &mut [f64],
    h_new: &mut [f64],
    h: usize,
) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports AVX2.
        return unsafe { cell_step_avx2(z, c_prev, c_new, tc, h_new, h) };
    }
    cell_step_body(z, c_prev, c_new, tc, h_new, h)
}

pub(super) fn forward(params: &ModelParams, inputs: &[&[[f64; 4]]]) -> Tape {
    let cfg = params.config();
    let layout = params.layout();
    let w = params.values();
    let b = inputs.len();
    let steps = inputs[0].len();
    let h = cfg.hidden_dim;
    let g4 = 4 * h;

    let mut x = vec![0.0; steps * b * cfg.input_dim];
    for (s, seq) in inputs.iter().enumerate() {
        for (t, feat) in seq.iter().enumerate() {
            let at = (t * b + s) * cfg.input_dim;
            x[at..at + cfg.input_dim].copy_from_slice(feat);
        }
    }

    let mut layers = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let in_dim = cfg.layer_input_dim(l);
        let [w_ih, w_hh, bias] = layout.lstm(l).map(|spec| &w[spec.range()]);
        let mut hidden = vec![0.0; (steps + 1) * b * h];
        let mut cell = vec![0.0; (steps + 1) * b * h];
        let mut gates = vec![0.0; steps * b * g4];
        let mut cell_tanh = vec![0.0; steps * b * h];

        for row in gates.chunks_exact_mut(g4) {
            row.copy_from_slice(bias);
        }
        gemm(
            1.0,
            Mat::new(&x, steps * b, in_dim),
            Mat::new(w_ih, in_dim, g4),
            1.0,
            &mut gates,
        );

        for t in 0..steps {
            let z = &mut gates[t * b * g4..(t + 1) * b * g4];
            let (h_prev, h_rest) = hidden.split_at_mut((t + 1) * b * h);
            let h_prev = &h_prev[t * b * h..];
            gemm(1.0, Mat::new(h_prev, b, h), Mat::new(w_hh, h, g4), 1.0, z);

            let h_new = &mut h_rest[..b * h];
            let (c_prev, c_rest) = cell.split_at_mut((t + 1) * b * h);
            let c_prev = &c_prev[t * b * h..];
            let c_new = &mut c_rest[..b * h];
            let tc = &mut cell_tanh[t * b * h..(t + 1) * b * h];
            cell_step(z, c_prev, c_new, tc, h_new, h);
        }
        let next_input = hidden[b * h..].to_vec();
        layers.push(LayerTape {
            in_dim,
            input: std::mem::replace(&mut x, next_input),
            hidden,
            cell,
            gates,
            cell_tanh,
        });
    }

    let [head_w, head_b] = layout.head().map(|spec| &w[spec.range()]);
    let out = cfg.head_width();
    let mut raw = vec![0.0; b * out];
    for row in raw.chunks_exact_mut(out) {
        row.copy_from_slice(head_b);
    }
    let top = &layers[layers.len() - 1];
    let h_last = &top.hidden[steps * b * h..];
    gemm(
        1.0,
        Mat::new(h_last, b, h),
        Mat::new(head_w, h, out),
        1.0,
        &mut raw,
    );

    Tape {
        layers,
        batch: b,
        steps,
        raw,
    }
}

/// Head outputs `[B, m * 6M]` without recording a tape. Time is the outer
/// loop, so only the current state of each layer is held.
pub(super) fn infer(params: &ModelParams, inputs: &[&[[f64; 4]]]) -> Vec<f64> {
    let cfg = params.config();
    let layout = params.layout();
    let w = params.values();
    let b = inputs.len();
    let steps = inputs[0].len();
    let h = cfg.hidden_dim;
    let g4 = 4 * h;
    let bh = b * h;

    // Per layer: two ping-pong halves of `[B, H]`.
    let mut hidden = vec![vec![0.0; 2 * bh]; cfg.num_layers];
    let mut cell = vec![vec![0.0; 2 * bh]; cfg.num_layers];
    let mut tc = vec![0.0; bh];
    let mut z = vec![0.0; b * g4];
    let mut x = vec![0.0; b * cfg.input_dim];
    for t in 0..steps {
        for (s, seq) in inputs.iter().enumerate() {
            x[s * cfg.input_dim..(s + 1) * cfg.input_dim].copy_from_slice(&seq[t]);
        }
        let (cur, next) = if t % 2 == 0 { (0, bh) } else { (bh, 0) };
        for (l, cell_l) in cell.iter_mut().enumerate() {
            let [w_ih, w_hh, bias] = layout.lstm(l).map(|spec| &w[spec.range()]);
            for row in z.chunks_exact_mut(g4) {
                row.copy_from_slice(bias);
            }
            let (below, here) = hidden.split_at_mut(l);
            let input = match below.last() {
                Some(prev) => &prev[next..next + bh],
                None => &x[..],
            };
            gemm(
                1.0,
                Mat::new(input, b, cfg.layer_input_dim(l)),
                Mat::new(w_ih, cfg.layer_input_dim(l), g4),
                1.0,
                &mut z,
            );
            let (h_lo, h_hi) = here[0].split_at_mut(bh);
            let (h_prev, h_new) = if cur == 0 {
                (&*h_lo, h_hi)
            } else {
                (&*h_hi, h_lo)
            };
            gemm(
                1.0,
                Mat::new(h_prev, b, h),
                Mat::new(w_hh, h, g4),
                1.0,
                &mut z,
            );
            let (c_lo, c_hi) = cell_l.split_at_mut(bh);
            let (c_prev, c_new) = if cur == 0 {
                (&*c_lo, c_hi)
            } else {
                (&*c_hi, c_lo)
            };
            cell_step(&mut z, c_prev, c_new, &mut tc, h_new, h);
        }
    }

    let [head_w, head_b] = layout.head().map(|spec| &w[spec.range()]);
    let out = cfg.head_width();
    let mut raw = vec![0.0; b * out];
    for row in raw.chunks_exact_mut(out) {
        row.copy_from_slice(head_b);
    }
    let last = if steps % 2 == 0 { 0 } else { bh };
    let top = &hidden[cfg.num_layers - 1][last..last + bh];
    gemm(
        1.0,
        Mat::new(top, b, h),
        Mat::new(head_w, h, out),
        1.0,
        &mut raw,
    );
    raw
}

/// Summed per-sample NLL of the batch; accumulates `scale * gradient` into `grad`.
pub(super) fn loss_and_grad(
    params: &ModelParams,
    inputs: &[&[[f64; 4]]],
    gts: &[&[[f64; 2]]],
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let cfg = params.config();
    let layout = params.layout();
    let w = params.values();
    let tape = forward(params, inputs);
    let (b, steps, h) = (tape.batch, tape.steps, cfg.hidden_dim);
    let g4 = 4 * h;
    let out = cfg.head_width();
    let width = cfg.horizon_width();

    let mut d_raw = vec![0.0; b * out];
    let mut total = 0.0;
    for (s, gt) in gts.iter().enumerate() {
        let raw_row = &tape.raw[s * out..(s + 1) * out];
        let d_row = &mut d_raw[s * out..(s + 1) * out];
        for (hz, ((block, d_block), &p)) in raw_row
            .chunks_exact(width)
            .zip(d_row.chunks_exact_mut(width))
            .zip(gt.iter())
            .enumerate()
        {
            let l = mdn::horizon_nll_with_grad(block, p, &cfg.activation, scale, d_block);
            if !l.is_finite() {
                return Err(Error::NumericalDivergence { horizon: hz });
            }
            total += l;
        }
    }

    // Head.
    let [head_w, head_b] = layout.head();
    let top = &tape.layers[tape.layers.len() - 1];
    let h_last = &top.hidden[steps * b * h..];
    gemm(
        1.0,
        Mat::new(h_last, b, h).t(),
        Mat::new(&d_raw, b, out),
        1.0,
        &mut grad[head_w.range()],
    );
    let gb = &mut grad[head_b.range()];
    for row in d_raw.chunks_exact(out) {
        gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
    }
    let mut d_out = vec![0.0; steps * b * h];
    gemm(
        1.0,
        Mat::new(&d_raw, b, out),
        Mat::new(&w[head_w.range()], h, out).t(),
        0.0,
        &mut d_out[(steps - 1) * b * h..],
    );

    // LSTM layers, top to bottom, each through time.
    let mut dz = vec![0.0; steps * b * g4];
    let mut dh_next = vec![0.0; b * h];
    let mut dc_next = vec![0.0; b * h];
    for (l, lt) in tape.layers.iter().enumerate().rev() {
        let [w_ih, w_hh, bias] = layout.lstm(l);
        let w_hh_v = &w[w_hh.range()];
        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..steps).rev() {
            let gates = &lt.gates[t * b * g4..(t + 1) * b * g4];
            let tc = &lt.cell_tanh[t * b * h..(t + 1) * b * h];
            let c_prev = &lt.cell[t * b * h..(t + 1) * b * h];
            let d_o = &d_out[t * b * h..(t + 1) * b * h];
            let dz_t = &mut dz[t * b * g4..(t + 1) * b * g4];
            for s in 0..b {
                let gr = &gates[s * g4..(s + 1) * g4];
                let dzr = &mut dz_t[s * g4..(s + 1) * g4];
                for j in 0..h {
                    let k = s * h + j;
                    let (i_g, f_g, g_g, o_g) = (gr[j], gr[h + j], gr[2 * h + j], gr[3 * h + j]);
                    let dh = d_o[k] + dh_next[k];
                    let dc = dc_next[k] + dh * o_g * (1.0 - tc[k] * tc[k]);
                    dzr[j] = dc * g_g * i_g * (1.0 - i_g);
                    dzr[h + j] = dc * c_prev[k] * f_g * (1.0 - f_g);
                    dzr[2 * h + j] = dc * i_g * (1.0 - g_g * g_g);
                    dzr[3 * h + j] = dh * tc[k] * o_g * (1.0 - o_g);
                    dc_next[k] = dc * f_g;
                }
            }
            if t > 0 {
                gemm(
                    1.0,
                    Mat::new(dz_t, b, g4),
                    Mat::new(w_hh_v, h, g4).t(),
                    0.0,
                    &mut dh_next,
                );
            }
        }

        let h_prev_all = &lt.hidden[..steps * b * h];
        gemm(
            1.0,
            Mat::new(&lt.input, steps * b, lt.in_dim).t(),
            Mat::new(&dz, steps * b, g4),
            1.0,
            &mut grad[w_ih.range()],
        );
        gemm(
            1.0,
            Mat::new(h_prev_all, steps * b, h).t(),
            Mat::new(&dz, steps * b, g4),
            1.0,
            &mut grad[w_hh.range()],
        );
        let gb = &mut grad[bias.range()];
        for row in dz.chunks_exact(g4) {
            gb.iter_mut().zip(row).for_each(|(g, d)| *g += d);
        }
        if l > 0 {
            gemm(
                1.0,
                Mat::new(&dz, steps * b, g4),
                Mat::new(&w[w_ih.range()], lt.in_dim, g4).t(),
                0.0,
                &mut d_out,
            );
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infer_matches_tape_forward() {
        let cfg = super::super::ModelConfig {
            hidden_dim: 8,
            num_layers: 3,
            num_components: 2,
            num_horizons: 3,
            ..Default::default()
        };
        let params = ModelParams::init(cfg, 5).unwrap();
        for steps in [2, 5] {
            let seqs: Vec<Vec<[f64; 4]>> = (0..7)
                .map(|s| {
                    (0..steps)
                        .map(|t| {
                            [
                                (s * t) as f64 * 0.1,
                                -0.2 * s as f64,
                                1.0 - 0.1 * t as f64,
                                0.3,
                            ]
                        })
                        .collect()
                })
                .collect();
            let inputs: Vec<&[[f64; 4]]> = seqs.iter().map(|v| v.as_slice()).collect();
            let tape = forward(&params, &inputs);
            let raw = infer(&params, &inputs);
            assert_eq!(raw.len(), tape.raw.len());
            for (a, b) in raw.iter().zip(&tape.raw) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn activations_match_libm() {
        for i in -200_000..=200_000 {
            let x = i as f64 * 3.5e-3;
            assert!((tanh(x) - x.tanh()).abs() < 4e-16, "tanh {x}");
            assert!(
                (sigmoid(x) - 1.0 / (1.0 + (-x).exp())).abs() < 4e-16,
                "sigmoid {x}"
            );
        }
        assert!(tanh(f64::NAN).is_nan());
        assert_eq!(tanh(400.0), 1.0);
        assert_eq!(tanh(-400.0), -1.0);
    }
}
