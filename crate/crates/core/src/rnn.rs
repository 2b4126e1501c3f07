//! Word embeddings and a single-layer LSTM, built on the tape.
//!
//! Gate order inside the stacked 4H parameters is fixed: input, forget,
//! output, candidate. Hidden and cell state reset to zeros at every
//! sentence boundary; information crosses sentences only through the
//! context vector handled by the model layer.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Tape nodes for one LSTM cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmNodes {
    /// 4H x K input-to-gates weights.
    pub wx: NodeId,
    /// 4H x H hidden-to-gates weights.
    pub wh: NodeId,
    /// 4H gate biases.
    pub b: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct RecurrentState {
    pub h: NodeId,
    pub c_mem: NodeId,
}

/// Column `token` of the K x V embedding matrix node.
pub fn embed(tape: &mut Tape, embeddings: NodeId, token: usize) -> Result<NodeId> {
    tape.embed_col(embeddings, token)
}

pub fn zero_state(tape: &mut Tape, hidden: usize) -> RecurrentState {
    let h = tape.input(Tensor::zeros(hidden, 1));
    let c_mem = tape.input(Tensor::zeros(hidden, 1));
    RecurrentState { h, c_mem }
}

fn gate_views(tape: &mut Tape, gates: NodeId, hidden: usize) -> Result<[NodeId; 4]> {
    let i = tape.slice_rows(gates, 0, hidden)?;
    let f = tape.slice_rows(gates, hidden, hidden)?;
    let o = tape.slice_rows(gates, 2 * hidden, hidden)?;
    let g = tape.slice_rows(gates, 3 * hidden, hidden)?;
    Ok([i, f, o, g])
}

fn step_from_hidden(
    tape: &mut Tape,
    lstm: &LstmNodes,
    x: NodeId,
    h_in: NodeId,
    c_mem: NodeId,
) -> Result<RecurrentState> {
    let hidden = tape.value(h_in).rows();
    let from_x = tape.matmul(lstm.wx, x)?;
    let from_h = tape.matmul(lstm.wh, h_in)?;
    let pre = tape.add(from_x, from_h)?;
    let pre = tape.add(pre, lstm.b)?;
    let [i_pre, f_pre, o_pre, g_pre] = gate_views(tape, pre, hidden)?;
    let i = tape.sigmoid(i_pre)?;
    let f = tape.sigmoid(f_pre)?;
    let o = tape.sigmoid(o_pre)?;
    let g = tape.tanh(g_pre)?;
    let keep = tape.mul(f, c_mem)?;
    let write = tape.mul(i, g)?;
    let c_new = tape.add(keep, write)?;
    let c_act = tape.tanh(c_new)?;
    let h_new = tape.mul(o, c_act)?;
    Ok(RecurrentState {
        h: h_new,
        c_mem: c_new,
    })
}

/// One LSTM step.
pub fn lstm_step(
    tape: &mut Tape,
    lstm: &LstmNodes,
    x: NodeId,
    state: &RecurrentState,
) -> Result<RecurrentState> {
    step_from_hidden(tape, lstm, x, state.h, state.c_mem)
}

/// Relation-transformed step: the hidden input is replaced by
/// `trans * h` before the gates see it. With `trans` the identity this is
/// exactly `lstm_step`; with `trans` zero it is a step from a zero hidden
/// state.
pub fn lstm_step_transformed(
    tape: &mut Tape,
    lstm: &LstmNodes,
    trans: NodeId,
    x: NodeId,
    state: &RecurrentState,
) -> Result<RecurrentState> {
    let transformed = tape.matmul(trans, state.h)?;
    step_from_hidden(tape, lstm, x, transformed, state.c_mem)
}

/// Pre-sampled inverted-dropout masks for one sentence: one K mask per
/// consumed token and one H mask per produced hidden state. Entries are
/// 0 or 1/keep.
#[derive(Debug, Clone)]
pub struct SentenceMasks {
    pub x: Vec<Tensor>,
    pub h: Vec<Tensor>,
}

/// States produced by running one sentence.
pub struct SentenceRun {
    /// One state per consumed token, masked by the dropout `h` masks when
    /// given; this is what the output layer reads.
    pub output_states: Vec<NodeId>,
    /// Final state with no output mask applied; its `h` becomes the next
    /// context vector.
    pub final_state: RecurrentState,
}

/// Consumes `tokens` left to right from `init`, one state per token.
/// `trans` switches every step to the relation-transformed form.
pub fn run_sentence(
    tape: &mut Tape,
    lstm: &LstmNodes,
    embeddings: NodeId,
    tokens: &[usize],
    init: RecurrentState,
    masks: Option<&SentenceMasks>,
    trans: Option<NodeId>,
) -> Result<SentenceRun> {
    if tokens.is_empty() {
        return Err(Error::EmptySentence);
    }
    if let Some(m) = masks {
        if m.x.len() != tokens.len() || m.h.len() != tokens.len() {
            return Err(Error::InvalidShape {
                op: "run_sentence",
                shape: (m.x.len(), m.h.len()),
                expected: "one x and one h mask per token",
            });
        }
    }
    let mut state = init;
    let mut output_states = Vec::with_capacity(tokens.len());
    for (pos, &token) in tokens.iter().enumerate() {
        let mut x = embed(tape, embeddings, token)?;
        if let Some(m) = masks {
            let mask = tape.input(m.x[pos].clone());
            x = tape.dropout_mask_mul(x, mask)?;
        }
        state = match trans {
            Some(t) => lstm_step_transformed(tape, lstm, t, x, &state)?,
            None => lstm_step(tape, lstm, x, &state)?,
        };
        let visible = match masks {
            Some(m) => {
                let mask = tape.input(m.h[pos].clone());
                tape.dropout_mask_mul(state.h, mask)?
            }
            None => state.h,
        };
        output_states.push(visible);
    }
    Ok(SentenceRun {
        output_states,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_lstm(tape: &mut Tape, hidden: usize, input: usize, seed: u64) -> LstmNodes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wx = tape.param(Tensor::uniform(4 * hidden, input, -0.5, 0.5, &mut rng));
        let wh = tape.param(Tensor::uniform(4 * hidden, hidden, -0.5, 0.5, &mut rng));
        let b = tape.param(Tensor::uniform(4 * hidden, 1, -0.1, 0.1, &mut rng));
        LstmNodes { wx, wh, b }
    }

    #[test]
    fn zero_params_zero_state_gives_zero_hidden() {
        let mut tape = Tape::new();
        let wx = tape.param(Tensor::zeros(8, 3));
        let wh = tape.param(Tensor::zeros(8, 2));
        let b = tape.param(Tensor::zeros(8, 1));
        let lstm = LstmNodes { wx, wh, b };
        let x = tape.input(Tensor::vector(vec![0.4, -0.2, 1.0]));
        let init = zero_state(&mut tape, 2);
        let next = lstm_step(&mut tape, &lstm, x, &init).unwrap();
        assert_eq!(tape.value(next.h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell() {
        // forget bias 50 approximates the +inf limit: c' = sigma(50) * c
        let hidden = 3;
        let mut tape = Tape::new();
        let wx = tape.param(Tensor::zeros(4 * hidden, 2));
        let wh = tape.param(Tensor::zeros(4 * hidden, hidden));
        let mut bias = Tensor::zeros(4 * hidden, 1);
        for r in hidden..2 * hidden {
            bias.set(r, 0, 50.0);
        }
        let b = tape.param(bias);
        let lstm = LstmNodes { wx, wh, b };
        let x = tape.input(Tensor::vector(vec![0.3, 0.9]));
        let c0 = Tensor::vector(vec![0.2, -0.5, 0.7]);
        let h0 = tape.input(Tensor::zeros(hidden, 1));
        let c0n = tape.input(c0.clone());
        let next = lstm_step(&mut tape, &lstm, x, &RecurrentState { h: h0, c_mem: c0n }).unwrap();
        for (got, want) in tape.value(next.c_mem).data().iter().zip(c0.data()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn hidden_entries_stay_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new();
        let lstm = tiny_lstm(&mut tape, 4, 3, 3);
        let emb = tape.param(Tensor::uniform(3, 6, -2.0, 2.0, &mut rng));
        let mut state = zero_state(&mut tape, 4);
        for tok in [0usize, 5, 2, 3, 1, 4, 4, 0] {
            let x = embed(&mut tape, emb, tok).unwrap();
            state = lstm_step(&mut tape, &lstm, x, &state).unwrap();
            for &v in tape.value(state.h).data() {
                assert!(v > -1.0 && v < 1.0);
            }
        }
    }

    #[test]
    fn lstm_step_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let hidden = 3;
        let wx = Tensor::uniform(4 * hidden, 2, -0.6, 0.6, &mut rng);
        let wh = Tensor::uniform(4 * hidden, hidden, -0.6, 0.6, &mut rng);
        let b = Tensor::uniform(4 * hidden, 1, -0.2, 0.2, &mut rng);
        let x = Tensor::uniform(2, 1, -1.0, 1.0, &mut rng);
        let h0 = Tensor::uniform(hidden, 1, -0.5, 0.5, &mut rng);
        let c0 = Tensor::uniform(hidden, 1, -0.5, 0.5, &mut rng);
        let report =
            finite_difference_check(&[wx, wh, b], &["wx", "wh", "b"], 1e-5, move |tape, ids| {
                let lstm = LstmNodes {
                    wx: ids[0],
                    wh: ids[1],
                    b: ids[2],
                };
                let xn = tape.input(x.clone());
                let h = tape.input(h0.clone());
                let c = tape.input(c0.clone());
                let next = lstm_step(tape, &lstm, xn, &RecurrentState { h, c_mem: c })?;
                let ones = tape.input(Tensor::from_vec(1, hidden, vec![1.0; hidden]).unwrap());
                tape.matmul(ones, next.h)
            })
            .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn transformed_step_with_identity_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let lstm = tiny_lstm(&mut tape, 3, 2, 9);
        let x = tape.input(Tensor::uniform(2, 1, -1.0, 1.0, &mut rng));
        let h = tape.input(Tensor::uniform(3, 1, -0.9, 0.9, &mut rng));
        let c = tape.input(Tensor::uniform(3, 1, -0.9, 0.9, &mut rng));
        let state = RecurrentState { h, c_mem: c };
        let plain = lstm_step(&mut tape, &lstm, x, &state).unwrap();
        let eye = tape.param(Tensor::identity(3));
        let trans = lstm_step_transformed(&mut tape, &lstm, eye, x, &state).unwrap();
        for (a, b) in tape
            .value(plain.h)
            .data()
            .iter()
            .zip(tape.value(trans.h).data())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn transformed_step_with_zero_matches_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let lstm = tiny_lstm(&mut tape, 3, 2, 10);
        let x = tape.input(Tensor::uniform(2, 1, -1.0, 1.0, &mut rng));
        let h = tape.input(Tensor::uniform(3, 1, -0.9, 0.9, &mut rng));
        let c = tape.input(Tensor::uniform(3, 1, -0.9, 0.9, &mut rng));
        let zero_trans = tape.param(Tensor::zeros(3, 3));
        let via_trans = lstm_step_transformed(
            &mut tape,
            &lstm,
            zero_trans,
            x,
            &RecurrentState { h, c_mem: c },
        )
        .unwrap();
        let h0 = tape.input(Tensor::zeros(3, 1));
        let plain = lstm_step(&mut tape, &lstm, x, &RecurrentState { h: h0, c_mem: c }).unwrap();
        for (a, b) in tape
            .value(via_trans.h)
            .data()
            .iter()
            .zip(tape.value(plain.h).data())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn transformed_two_step_chain_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let hidden = 3;
        let wx = Tensor::uniform(4 * hidden, 2, -0.6, 0.6, &mut rng);
        let wh = Tensor::uniform(4 * hidden, hidden, -0.6, 0.6, &mut rng);
        let b = Tensor::uniform(4 * hidden, 1, -0.2, 0.2, &mut rng);
        let trans = Tensor::uniform(hidden, hidden, -0.7, 0.7, &mut rng);
        let x1 = Tensor::uniform(2, 1, -1.0, 1.0, &mut rng);
        let x2 = Tensor::uniform(2, 1, -1.0, 1.0, &mut rng);
        let report = finite_difference_check(
            &[wx, wh, b, trans],
            &["wx", "wh", "b", "trans"],
            1e-5,
            move |tape, ids| {
                let lstm = LstmNodes {
                    wx: ids[0],
                    wh: ids[1],
                    b: ids[2],
                };
                let mut state = zero_state(tape, hidden);
                for xv in [&x1, &x2] {
                    let x = tape.input(xv.clone());
                    state = lstm_step_transformed(tape, &lstm, ids[3], x, &state)?;
                }
                let ones = tape.input(Tensor::from_vec(1, hidden, vec![1.0; hidden]).unwrap());
                tape.matmul(ones, state.h)
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn run_sentence_single_token() {
        let mut tape = Tape::new();
        let lstm = tiny_lstm(&mut tape, 3, 2, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let emb = tape.param(Tensor::uniform(2, 5, -1.0, 1.0, &mut rng));
        let init = zero_state(&mut tape, 3);
        let run = run_sentence(&mut tape, &lstm, emb, &[2], init, None, None).unwrap();
        assert_eq!(run.output_states.len(), 1);
        assert_eq!(run.output_states[0], run.final_state.h);
    }

    #[test]
    fn run_sentence_rejects_empty() {
        let mut tape = Tape::new();
        let lstm = tiny_lstm(&mut tape, 3, 2, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let emb = tape.param(Tensor::uniform(2, 5, -1.0, 1.0, &mut rng));
        let init = zero_state(&mut tape, 3);
        assert!(matches!(
            run_sentence(&mut tape, &lstm, emb, &[], init, None, None),
            Err(Error::EmptySentence)
        ));
    }

    #[test]
    fn run_sentence_is_deterministic_and_prefix_consistent() {
        // same tokens -> identical states; changing a later token leaves
        // earlier states untouched.
        let build = |tokens: &[usize]| -> Vec<Vec<f64>> {
            let mut tape = Tape::new();
            let lstm = tiny_lstm(&mut tape, 3, 2, 42);
            let mut rng = ChaCha8Rng::seed_from_u64(43);
            let emb = tape.param(Tensor::uniform(2, 5, -1.0, 1.0, &mut rng));
            let init = zero_state(&mut tape, 3);
            let run = run_sentence(&mut tape, &lstm, emb, tokens, init, None, None).unwrap();
            run.output_states
                .iter()
                .map(|&s| tape.value(s).data().to_vec())
                .collect()
        };
        let a = build(&[1, 2, 3]);
        let b = build(&[1, 2, 3]);
        assert_eq!(a, b);
        let c = build(&[1, 2, 4]);
        assert_eq!(a[0], c[0]);
        assert_eq!(a[1], c[1]);
        assert_ne!(a[2], c[2]);
    }

    #[test]
    fn run_sentence_fd_through_three_tokens() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let hidden = 3;
        let wx = Tensor::uniform(4 * hidden, 2, -0.6, 0.6, &mut rng);
        let wh = Tensor::uniform(4 * hidden, hidden, -0.6, 0.6, &mut rng);
        let b = Tensor::uniform(4 * hidden, 1, -0.2, 0.2, &mut rng);
        let emb = Tensor::uniform(2, 5, -0.8, 0.8, &mut rng);
        let report = finite_difference_check(
            &[wx, wh, b, emb],
            &["wx", "wh", "b", "emb"],
            1e-5,
            |tape, ids| {
                let lstm = LstmNodes {
                    wx: ids[0],
                    wh: ids[1],
                    b: ids[2],
                };
                let init = zero_state(tape, hidden);
                let run = run_sentence(tape, &lstm, ids[3], &[1, 4, 2], init, None, None)?;
                let mut picks = Vec::new();
                for &s in &run.output_states {
                    for r in 0..hidden {
                        picks.push(tape.pick(s, r)?);
                    }
                }
                tape.scalar_sum(&picks)
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{}", report.max_rel_error);
    }

    #[test]
    fn embedding_grads_sum_over_repeated_tokens() {
        let mut tape = Tape::new();
        let emb = tape.param(Tensor::from_vec(2, 3, vec![1.0; 6]).unwrap());
        let a = embed(&mut tape, emb, 1).unwrap();
        let b = embed(&mut tape, emb, 1).unwrap();
        let s = tape.add(a, b).unwrap();
        let ones = tape.input(Tensor::from_vec(1, 2, vec![1.0, 1.0]).unwrap());
        let loss = tape.matmul(ones, s).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(emb);
        assert_eq!(g.get(0, 1), 2.0);
        assert_eq!(g.get(1, 1), 2.0);
        assert_eq!(g.get(0, 0), 0.0);
    }
}
