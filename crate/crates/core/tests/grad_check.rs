//! Finite-difference validation of every differentiable op, plus an
//! end-to-end check through a full model forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{check_gradients, check_unary, random_tensor, rel_err, FD_H};

use sinoct::ctgeom::{apply_mask, radon, AngleGrid, MaskSpec};
use sinoct::diffcore::{Graph, NodeId};
use sinoct::diffcore::{ParamId, ParamStore, Tensor};
use sinoct::model::{visible_rows, HeadKind, Model, ModelConfig};
use sinoct::phantom::{generate_phantom, PhantomConfig};

#[test]
fn grad_add() {
    check_unary("add", vec![3, 4], |g, x| {
        let y = g.scale(x, 0.5).unwrap();
        g.add(x, y).unwrap()
    });
}

#[test]
fn grad_matmul_lhs_and_rhs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::new();
    let a = store.add("a", random_tensor(&mut rng, vec![3, 4]));
    let b = store.add("b", random_tensor(&mut rng, vec![4, 2]));
    let target = random_tensor(&mut rng, vec![3, 2]);
    check_gradients("matmul", &mut store, &[a, b], |g, store| {
        let la = g.leaf(store, a).unwrap();
        let lb = g.leaf(store, b).unwrap();
        let out = g.matmul(la, lb).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

#[test]
fn grad_add_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, vec![3, 4]));
    let r = store.add("r", random_tensor(&mut rng, vec![1, 4]));
    let target = random_tensor(&mut rng, vec![3, 4]);
    check_gradients("add_row", &mut store, &[x, r], |g, store| {
        let lx = g.leaf(store, x).unwrap();
        let lr = g.leaf(store, r).unwrap();
        let out = g.add_row(lx, lr).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

#[test]
fn grad_scale() {
    check_unary("scale", vec![2, 5], |g, x| g.scale(x, -1.7).unwrap());
}

#[test]
fn grad_transpose() {
    check_unary("transpose", vec![3, 5], |g, x| g.transpose(x).unwrap());
}

#[test]
fn grad_reshape() {
    check_unary("reshape", vec![3, 4], |g, x| g.reshape(x, vec![2, 6]).unwrap());
}

#[test]
fn grad_concat_rows_and_cols() {
    check_unary("concat_rows", vec![2, 3], |g, x| {
        let y = g.gelu(x).unwrap();
        g.concat_rows(&[x, y]).unwrap()
    });
    check_unary("concat_cols", vec![2, 3], |g, x| {
        let y = g.scale(x, 2.0).unwrap();
        g.concat_cols(&[x, y]).unwrap()
    });
}

#[test]
fn grad_slice_cols() {
    check_unary("slice_cols", vec![3, 6], |g, x| g.slice_cols(x, 2, 3).unwrap());
}

#[test]
fn grad_gather_rows() {
    // Repeated index exercises gradient accumulation into one source row.
    check_unary("gather_rows", vec![4, 3], |g, x| {
        g.gather_rows(x, &[2, 0, 2]).unwrap()
    });
}

#[test]
fn grad_repeat_row() {
    check_unary("repeat_row", vec![1, 4], |g, x| g.repeat_row(x, 5).unwrap());
}

#[test]
fn grad_row_scatter() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut store = ParamStore::new();
    let base = store.add("base", random_tensor(&mut rng, vec![5, 3]));
    let rows = store.add("rows", random_tensor(&mut rng, vec![2, 3]));
    let target = random_tensor(&mut rng, vec![5, 3]);
    check_gradients("row_scatter", &mut store, &[base, rows], |g, store| {
        let lb = g.leaf(store, base).unwrap();
        let lr = g.leaf(store, rows).unwrap();
        let out = g.row_scatter(lb, lr, &[1, 4]).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

#[test]
fn grad_layer_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, vec![3, 6]));
    let gain = store.add("gain", random_tensor(&mut rng, vec![1, 6]));
    let bias = store.add("bias", random_tensor(&mut rng, vec![1, 6]));
    let target = random_tensor(&mut rng, vec![3, 6]);
    check_gradients("layer_norm", &mut store, &[x, gain, bias], |g, store| {
        let lx = g.leaf(store, x).unwrap();
        let lg = g.leaf(store, gain).unwrap();
        let lb = g.leaf(store, bias).unwrap();
        let out = g.layer_norm(lx, lg, lb).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

#[test]
fn grad_softmax() {
    check_unary("softmax", vec![3, 5], |g, x| {
        let s = g.scale(x, 3.0).unwrap();
        g.softmax_lastdim(s).unwrap()
    });
}

#[test]
fn grad_gelu() {
    check_unary("gelu", vec![3, 4], |g, x| g.gelu(x).unwrap());
}

#[test]
fn grad_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, vec![3, 4]));
    let w = store.add("w", random_tensor(&mut rng, vec![4, 2]));
    let b = store.add("b", random_tensor(&mut rng, vec![1, 2]));
    let target = random_tensor(&mut rng, vec![3, 2]);
    check_gradients("linear", &mut store, &[x, w, b], |g, store| {
        let lx = g.leaf(store, x).unwrap();
        let lw = g.leaf(store, w).unwrap();
        let lb = g.leaf(store, b).unwrap();
        let out = g.linear(lx, lw, lb).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

#[test]
fn grad_mse_loss_input() {
    check_unary("mse_direct", vec![4, 4], |g, x| x);
}

/// End-to-end: the analytic gradient of the full MSM training loss must match
/// finite differences for a sample of parameters across every layer group.
#[test]
fn grad_end_to_end_tiny_msm() {
    let cfg = ModelConfig {
        token_dim: 16,
        d_model: 16,
        n_heads: 2,
        n_enc_layers: 1,
        n_dec_layers: 1,
        d_ff: 32,
        max_angles: 12,
        head_kind: HeadKind::SinoDecoder,
        patch_side: 4,
    };
    let mut model = Model::init(cfg, 42).unwrap();
    let phantom = generate_phantom(
        &PhantomConfig {
            image_side: 16,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    let sino = radon(&phantom, &AngleGrid::half_turn(12)).unwrap();
    let masked = apply_mask(&sino, &MaskSpec::random(0.5, 3)).unwrap();
    let norm = sino.max_abs();
    let rows = visible_rows(&masked, norm).unwrap();
    let target_data: Vec<f32> = sino.values.iter().map(|v| v / norm).collect();
    let target = Tensor::new(vec![12, 16], target_data).unwrap();
    let kept = masked.kept_indices.clone();
    let n_angles = sino.grid.n_angles;

    let loss_of = |g: &mut Graph, model: &Model| -> NodeId {
        let pred = model.forward(g, &rows, &kept, n_angles, None).unwrap();
        let t = g.input(&target).unwrap();
        g.mse_loss(pred, t).unwrap()
    };

    // Forward+backward once, then spot-check 10 random parameter entries
    // spread over distinct parameters (full FD over ~20k entries would take
    // minutes for no extra coverage).
    model.store.zero_grads();
    let mut g = Graph::new();
    let loss0 = loss_of(&mut g, &model);
    g.backward(loss0, &mut model.store).unwrap();

    let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut guard = 0;
    while checked < 10 && guard < 200 {
        guard += 1;
        let pid = ids[rng.gen_range(0..ids.len())];
        let n = model.store.value(pid).numel();
        let i = rng.gen_range(0..n);
        let analytic = model.store.grad(pid)[i] as f64;
        let orig = model.store.value(pid).data[i];
        let eval = |model: &Model| -> f64 {
            let mut g = Graph::new();
            let l = loss_of(&mut g, model);
            g.data(l)[0] as f64
        };
        model.store.value_mut(pid).data[i] = orig + FD_H;
        let up = eval(&model);
        model.store.value_mut(pid).data[i] = orig - FD_H;
        let down = eval(&model);
        model.store.value_mut(pid).data[i] = orig;
        let numeric = (up - down) / (2.0 * FD_H as f64);
        if numeric.abs() < 1e-3 && analytic.abs() < 1e-3 {
            continue; // below f32 finite-difference resolution
        }
        let err = rel_err(analytic, numeric);
        assert!(
            err < 1e-2 || (analytic - numeric).abs() < 2e-4,
            "end-to-end: {} idx {i}: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {err:.3e})",
            model.store.name(pid)
        );
        checked += 1;
    }
    assert!(checked >= 5, "too few resolvable gradient entries ({checked})");
}
