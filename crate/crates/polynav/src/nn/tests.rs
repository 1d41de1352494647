use super::*;
use crate::tensor::gradcheck::{central_diff_param, rel_err, DEFAULT_H};
use crate::tensor::{ParamSet, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// Attention params with explicit weight matrices.
fn explicit_attention(
    ps: &mut ParamSet,
    d: usize,
    heads: usize,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
) -> AttentionParams {
    AttentionParams {
        w_q: ps.register("attn.w_q", &[d, d], wq),
        w_k: ps.register("attn.w_k", &[d, d], wk),
        w_v: ps.register("attn.w_v", &[d, d], wv),
        w_o: ps.register("attn.w_o", &[d, d], wo),
        d,
        heads,
    }
}

#[test]
fn attend_single_key_passes_value_through() {
    // d = 1, identity projections: the only softmax weight is 1, so the
    // output is y itself.
    let mut ps = ParamSet::new();
    let attn = explicit_attention(&mut ps, 1, 1, vec![1.0], vec![1.0], vec![1.0], vec![1.0]);
    let tape = Tape::new();
    let x = tape.matrix(1, 1, vec![2.0]).unwrap();
    let y = tape.matrix(1, 1, vec![3.0]).unwrap();
    let out = attn.bind(&tape, &ps).attend(&tape, x, y, None).unwrap();
    assert!((out.data()[0] - 3.0).abs() < 1e-12);
}

#[test]
fn attend_identical_values_ignore_query() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 3;
    let mut ps = ParamSet::new();
    let attn = AttentionParams::register(&mut ps, "attn", d, 1, &mut rng);
    let tape = Tape::new();
    let v: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.2).collect();
    let y = tape
        .matrix(2, d, v.iter().chain(v.iter()).copied().collect())
        .unwrap();
    let bound = attn.bind(&tape, &ps);
    for xq in [[1.0, -2.0, 0.5], [0.0, 0.0, 7.0]] {
        let x = tape.matrix(1, d, xq.to_vec()).unwrap();
        let out = bound.attend(&tape, x, y, None).unwrap();
        // Expected: v W_v W_o, independent of the query.
        let vrow = tape.matrix(1, d, v.clone()).unwrap();
        let want = vrow
            .matmul(tape.param(&ps, attn.w_v))
            .unwrap()
            .matmul(tape.param(&ps, attn.w_o))
            .unwrap();
        for (a, b) in out.data().iter().zip(want.data().iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Independent step-by-step evaluation of the attention function with a
/// query row attending over context rows, including the output projection.
fn attention_oracle(
    x: &[f64],
    y: &[Vec<f64>],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    wo: &[f64],
    d: usize,
) -> Vec<f64> {
    let proj = |row: &[f64], w: &[f64]| -> Vec<f64> {
        (0..d)
            .map(|j| (0..d).map(|i| row[i] * w[i * d + j]).sum())
            .collect()
    };
    let q = proj(x, wq);
    let logits: Vec<f64> = y
        .iter()
        .map(|row| {
            let k = proj(row, wk);
            q.iter().zip(k.iter()).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()
        })
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut mixed = vec![0.0; d];
    for (w8, row) in exps.iter().zip(y.iter()) {
        let v = proj(row, wv);
        for j in 0..d {
            mixed[j] += (w8 / z) * v[j];
        }
    }
    proj(&mixed, wo)
}

#[test]
fn attend_matches_hand_evaluation_oracle() {
    let d = 2;
    let wq = vec![0.5, -0.1, 0.2, 0.3];
    let wk = vec![0.1, 0.4, -0.3, 0.2];
    let wv = vec![0.7, 0.0, 0.1, -0.5];
    let wo = vec![1.0, 0.2, -0.2, 0.9];
    let mut ps = ParamSet::new();
    let attn = explicit_attention(&mut ps, d, 1, wq.clone(), wk.clone(), wv.clone(), wo.clone());
    let tape = Tape::new();
    let xrow = [0.8, -0.6];
    let yrows = vec![vec![0.2, 0.9], vec![-0.4, 0.1]];
    let x = tape.matrix(1, 2, xrow.to_vec()).unwrap();
    let y = tape
        .matrix(2, 2, yrows.iter().flatten().copied().collect())
        .unwrap();
    let out = attn.bind(&tape, &ps).attend(&tape, x, y, None).unwrap();
    let want = attention_oracle(&xrow, &yrows, &wq, &wk, &wv, &wo, d);
    for (a, b) in out.data().iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn attend_rejects_fully_masked_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    let attn = AttentionParams::register(&mut ps, "attn", 2, 1, &mut rng);
    let tape = Tape::new();
    let x = tape.matrix(1, 2, vec![1.0, 0.0]).unwrap();
    let y = tape.matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let mask = Mask::new(1, 2, vec![false, false]);
    let err = attn
        .bind(&tape, &ps)
        .attend(&tape, x, y, Some(&mask))
        .unwrap_err();
    assert!(matches!(err, NnError::FullyMaskedRow { row: 0 }));
}

#[test]
fn attend_output_is_convex_combination_of_values() {
    // With the output projection pinned to identity, the attention output
    // must be the weights-weighted combination of the value-projected rows.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for d in 1..=3usize {
        let mut ps = ParamSet::new();
        let mut rand_mat = |ps: &mut ParamSet, name: &str| {
            ps.register(
                name,
                &[d, d],
                (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
        };
        let w_q = rand_mat(&mut ps, "w_q");
        let w_k = rand_mat(&mut ps, "w_k");
        let w_v = rand_mat(&mut ps, "w_v");
        let attn = AttentionParams {
            w_q,
            w_k,
            w_v,
            w_o: ps.register("w_o", &[d, d], identity(d)),
            d,
            heads: 1,
        };
        let tape = Tape::new();
        let m = 4;
        let x = tape
            .matrix(1, d, (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let y = tape
            .matrix(m, d, (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let (out, weights) = attn
            .bind(&tape, &ps)
            .attend_with_weights(&tape, x, y, None)
            .unwrap();
        let w = weights.data();
        assert!(w.iter().all(|v| *v >= 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let values = y.matmul(tape.param(&ps, attn.w_v)).unwrap();
        let vd = values.data();
        for c in 0..d {
            let combo: f64 = (0..m).map(|j| w[j] * vd[j * d + c]).sum();
            assert!((out.data()[c] - combo).abs() < 1e-12);
        }
    }
}

#[test]
fn multi_head_with_one_head_equals_attend_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let d = 4;
    let mut ps = ParamSet::new();
    let attn = AttentionParams::register(&mut ps, "attn", d, 1, &mut rng);
    let tape = Tape::new();
    let x = tape
        .matrix(3, d, (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let y = tape
        .matrix(5, d, (0..5 * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let bound = attn.bind(&tape, &ps);
    let a = bound.attend(&tape, x, y, None).unwrap();
    let b = bound.multi_head(&tape, x, y, None).unwrap();
    for (u, v) in a.data().iter().zip(b.data().iter()) {
        assert_eq!(u.to_bits(), v.to_bits());
    }
}

fn zeroed_block(ps: &mut ParamSet, d: usize, heads: usize, rng: &mut ChaCha8Rng) -> BlockParams {
    let mut block = BlockParams::register(ps, "blk", d, heads, rng);
    // Zero the attention value/output path and the MLP second affine map.
    for id in [block.attn.w_v, block.attn.w_o, block.w2, block.b2] {
        for v in ps.entry_mut(id).data.iter_mut() {
            *v = 0.0;
        }
    }
    block.d = d;
    block
}

#[test]
fn block_with_zeroed_paths_is_residual_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d = 4;
    let mut ps = ParamSet::new();
    let block = zeroed_block(&mut ps, d, 2, &mut rng);
    let tape = Tape::new();
    let x = tape
        .matrix(3, d, (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let z = block.bind(&tape, &ps).forward(&tape, x, x, None).unwrap();
    for (a, b) in z.data().iter().zip(x.data().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn block_single_token_attention_is_value_path() {
    // With one token the softmax weight is 1, so x' - x equals the token's
    // normalized value path through W_v then W_o.
    let mut rng = ChaCha8Rng::seed_from_u64(37);
    let d = 4;
    let mut ps = ParamSet::new();
    let mut block = BlockParams::register(&mut ps, "blk", d, 1, &mut rng);
    for id in [block.w2, block.b2] {
        for v in ps.entry_mut(id).data.iter_mut() {
            *v = 0.0;
        }
    }
    block.d = d;
    let tape = Tape::new();
    let x = tape
        .matrix(1, d, (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let z = block.bind(&tape, &ps).forward(&tape, x, x, None).unwrap();
    let g1 = tape.param(&ps, block.ln1_gain);
    let b1 = tape.param(&ps, block.ln1_bias);
    let value_path = x
        .layer_norm(g1, b1, 1e-5)
        .unwrap()
        .matmul(tape.param(&ps, block.attn.w_v))
        .unwrap()
        .matmul(tape.param(&ps, block.attn.w_o))
        .unwrap();
    for i in 0..d {
        let want = x.data()[i] + value_path.data()[i];
        assert!((z.data()[i] - want).abs() < 1e-12);
    }
}

#[test]
fn block_matches_composed_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let d = 4;
    let mut ps = ParamSet::new();
    let block = BlockParams::register(&mut ps, "blk", d, 2, &mut rng);
    let tape = Tape::new();
    let x = tape
        .matrix(3, d, (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .unwrap();
    let z = block.bind(&tape, &ps).forward(&tape, x, x, None).unwrap();

    // Same computation out of already-tested pieces.
    let bb = block.bind(&tape, &ps);
    let xq = x
        .layer_norm(
            tape.param(&ps, block.ln1_gain),
            tape.param(&ps, block.ln1_bias),
            1e-5,
        )
        .unwrap();
    let x1 = x.add(bb.attn.multi_head(&tape, xq, xq, None).unwrap()).unwrap();
    let h = x1
        .layer_norm(
            tape.param(&ps, block.ln2_gain),
            tape.param(&ps, block.ln2_bias),
            1e-5,
        )
        .unwrap();
    let mlp = h
        .matmul(tape.param(&ps, block.w1))
        .unwrap()
        .add_rowvec(tape.param(&ps, block.b1))
        .unwrap()
        .gelu()
        .matmul(tape.param(&ps, block.w2))
        .unwrap()
        .add_rowvec(tape.param(&ps, block.b2))
        .unwrap();
    let want = x1.add(mlp).unwrap();
    for (a, b) in z.data().iter().zip(want.data().iter()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn causal_mask_shapes() {
    let m1 = causal_mask(1);
    assert!(m1.allows(0, 0));
    let m3 = causal_mask(3);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(m3.allows(i, j), j <= i, "({i},{j})");
        }
    }
}

#[test]
fn causal_block_rows_ignore_future_tokens() {
    // Six tokens; every row i must be bit-for-bit stable (to 1e-12) under
    // randomization of rows > i.
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let d = 6;
    let t = 6;
    let mut ps = ParamSet::new();
    let block = BlockParams::register(&mut ps, "blk", d, 2, &mut rng);
    let base: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mask = causal_mask(t);
    let run = |data: Vec<f64>| -> Vec<f64> {
        let tape = Tape::new();
        let x = tape.matrix(t, d, data).unwrap();
        let z = block
            .bind(&tape, &ps)
            .forward(&tape, x, x, Some(&mask))
            .unwrap();
        z.data().to_vec()
    };
    let reference = run(base.clone());
    for i in 0..t {
        for _ in 0..4 {
            let mut perturbed = base.clone();
            for row in (i + 1)..t {
                for c in 0..d {
                    perturbed[row * d + c] = rng.random_range(-2.0..2.0);
                }
            }
            let out = run(perturbed);
            for c in 0..d {
                let delta = (out[i * d + c] - reference[i * d + c]).abs();
                assert!(delta <= 1e-12, "row {i} moved by {delta}");
            }
        }
    }
}

#[test]
fn avg_pool_cases() {
    let tape = Tape::new();
    let single = tape.matrix(1, 3, vec![4.0, 5.0, 6.0]).unwrap();
    assert_eq!(&*avg_pool(single).unwrap().data(), &[4.0, 5.0, 6.0]);

    let two = tape.matrix(2, 2, vec![1.0, 1.0, 3.0, 3.0]).unwrap();
    assert_eq!(&*avg_pool(two).unwrap().data(), &[2.0, 2.0]);

    // Permutation invariance.
    let a = tape
        .matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])
        .unwrap();
    let b = tape
        .matrix(3, 2, vec![5.0, 6.0, 1.0, 2.0, 3.0, 4.0])
        .unwrap();
    let pa = avg_pool(a).unwrap();
    let pb = avg_pool(b).unwrap();
    for (x, y) in pa.data().iter().zip(pb.data().iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn epoch_embedding_first_index() {
    let e = epoch_embedding_vec(1, 8);
    for i in 0..4 {
        assert_eq!(e[2 * i], 0.0);
        assert_eq!(e[2 * i + 1], 1.0);
    }
}

#[test]
fn epoch_embeddings_bounded_and_distinct_over_horizon() {
    let d = 16;
    let horizon = 500;
    let embeds: Vec<Vec<f64>> = (1..=horizon).map(|t| epoch_embedding_vec(t, d)).collect();
    for e in &embeds {
        assert!(e.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    for i in 0..horizon {
        for j in (i + 1)..horizon {
            let max_delta = embeds[i]
                .iter()
                .zip(embeds[j].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(
                max_delta > 1e-6,
                "epochs {} and {} collide",
                i + 1,
                j + 1
            );
        }
    }
}

#[test]
fn orientation_embeddings_distinct_for_subviews() {
    let d = 16;
    let views: Vec<Vec<f64>> = (0..12)
        .map(|k| orientation_embedding_vec(k as f64 * std::f64::consts::TAU / 12.0, d))
        .collect();
    for i in 0..12 {
        assert!(views[i].iter().all(|v| (-1.0..=1.0).contains(v)));
        for j in (i + 1)..12 {
            let max_delta: f64 = views[i]
                .iter()
                .zip(views[j].iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(max_delta > 1e-6);
        }
    }
}

#[test]
fn block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let d = 4;
    let mut ps = ParamSet::new();
    let block = BlockParams::register(&mut ps, "blk", d, 2, &mut rng);
    let input: Vec<f64> = (0..3 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |ps: &ParamSet| -> f64 {
        let tape = Tape::new();
        let x = tape.matrix(3, d, input.clone()).unwrap();
        let z = block.bind(&tape, ps).forward(&tape, x, x, None).unwrap();
        z.square().mean().item()
    };
    let tape = Tape::new();
    let x = tape.matrix(3, d, input.clone()).unwrap();
    let z = block.bind(&tape, &ps).forward(&tape, x, x, None).unwrap();
    let l = z.square().mean();
    let grads = tape.backward(&l).unwrap();
    let mut checked = 0;
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let n = ps.entry(id).data.len();
        for idx in [0, n / 2, n - 1] {
            let analytic = grads.param(id).map(|g| g[idx]).unwrap_or(0.0);
            let fd = central_diff_param(&mut ps, id, idx, DEFAULT_H, |p| loss(p));
            assert!(
                rel_err(analytic, fd) < 1e-6,
                "{} [{idx}]: {analytic} vs {fd}",
                ps.entry(id).path
            );
            checked += 1;
        }
    }
    assert!(checked > 20);
}

#[test]
fn bi_recurrent_shapes_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let (d_in, h, l) = (3, 2, 4);
    let mut ps = ParamSet::new();
    let enc = BiRecurrentParams::register(&mut ps, "lang", d_in, h, &mut rng);
    let input: Vec<f64> = (0..l * d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |ps: &ParamSet| -> f64 {
        let tape = Tape::new();
        let x = tape.matrix(l, d_in, input.clone()).unwrap();
        let out = enc.bind(&tape, ps).forward(&tape, x).unwrap();
        assert_eq!(out.shape(), vec![l, 2 * h]);
        out.square().mean().item()
    };
    let tape = Tape::new();
    let x = tape.matrix(l, d_in, input.clone()).unwrap();
    let out = enc.bind(&tape, &ps).forward(&tape, x).unwrap();
    let grads = tape.backward(&out.square().mean()).unwrap();
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let analytic = grads.param(id).map(|g| g[0]).unwrap_or(0.0);
        let fd = central_diff_param(&mut ps, id, 0, DEFAULT_H, |p| loss(p));
        assert!(
            rel_err(analytic, fd) < 1e-6,
            "{}: {analytic} vs {fd}",
            ps.entry(id).path
        );
    }
}
