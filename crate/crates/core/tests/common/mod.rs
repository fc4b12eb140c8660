//! Helpers shared between the gradient and acceptance suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sinoct::diffcore::{Graph, NodeId, ParamId, ParamStore, Tensor};

pub const FD_H: f32 = 1e-3;
pub const REL_TOL: f64 = 1e-3;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs() + 1e-6)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

/// Checks d(loss)/d(param) for every element of every parameter against a
/// central finite difference of the scalar loss.
pub fn check_gradients(
    label: &str,
    store: &mut ParamStore,
    params: &[ParamId],
    loss_of: impl Fn(&mut Graph, &ParamStore) -> NodeId,
) {
    store.zero_grads();
    let mut g = Graph::new();
    let loss = loss_of(&mut g, store);
    g.backward(loss, store).unwrap();

    let eval = |store: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let loss = loss_of(&mut g, store);
        g.data(loss)[0] as f64
    };
    for &pid in params {
        let n = store.value(pid).numel();
        for i in 0..n {
            let analytic = store.grad(pid)[i] as f64;
            let orig = store.value(pid).data[i];
            store.value_mut(pid).data[i] = orig + FD_H;
            let up = eval(store);
            store.value_mut(pid).data[i] = orig - FD_H;
            let down = eval(store);
            store.value_mut(pid).data[i] = orig;
            let numeric = (up - down) / (2.0 * FD_H as f64);
            // Tiny true gradients drown in f32 evaluation noise; compare
            // only when the finite difference is resolvable.
            if numeric.abs() < 5e-4 && analytic.abs() < 5e-4 {
                continue;
            }
            // The loss node itself is f32, so the finite difference carries
            // roughly eps_f32 * loss / (2h) of absolute noise on top of the
            // truncation error; accept either bound.
            let err = rel_err(analytic, numeric);
            assert!(
                err < REL_TOL || (analytic - numeric).abs() < 1e-4,
                "{label}: param {} idx {i}: analytic {analytic:.6e} vs numeric {numeric:.6e} (rel {err:.3e})",
                store.name(pid)
            );
        }
    }
}

/// Single-parameter op check: loss = mse(op(x), target).
pub fn check_unary(label: &str, shape: Vec<usize>, op: impl Fn(&mut Graph, NodeId) -> NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ label.len() as u64);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, shape));
    // Probe the output shape once so the target matches it.
    let out_shape = {
        let mut g = Graph::new();
        let leaf = g.leaf(&store, x).unwrap();
        let out = op(&mut g, leaf);
        g.shape(out).to_vec()
    };
    let target = random_tensor(&mut rng, out_shape);
    check_gradients(label, &mut store, &[x], |g, store| {
        let leaf = g.leaf(store, x).unwrap();
        let out = op(g, leaf);
        let t = g.input(&target).unwrap();
        g.mse_loss(out, t).unwrap()
    });
}

/// Independent SSIM reference: separable Gaussian filtering over interior
/// windows, structured differently from the production per-window loop.
pub fn ssim_reference(a: &[f32], b: &[f32], side: usize, dynamic_range: f64) -> f64 {
    let half = 5usize; // 11x11 window
    let sigma = 1.5f64;
    let kernel: Vec<f64> = (0..11)
        .map(|i| {
            let d = i as f64 - half as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let ksum: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / ksum).collect();

    // Horizontal then vertical pass over five plane images.
    let planes: Vec<Vec<f64>> = {
        let af: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let aa: Vec<f64> = af.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = bf.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = af.iter().zip(&bf).map(|(x, y)| x * y).collect();
        vec![af, bf, aa, bb, ab]
    };
    let blur = |img: &[f64]| -> Vec<f64> {
        let mut h = vec![0.0; side * side];
        for y in 0..side {
            for x in half..side - half {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * img[y * side + x + k - half];
                }
                h[y * side + x] = acc;
            }
        }
        let mut v = vec![0.0; side * side];
        for y in half..side - half {
            for x in 0..side {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * h[(y + k - half) * side + x];
                }
                v[y * side + x] = acc;
            }
        }
        v
    };
    let mu_a = blur(&planes[0]);
    let mu_b = blur(&planes[1]);
    let e_aa = blur(&planes[2]);
    let e_bb = blur(&planes[3]);
    let e_ab = blur(&planes[4]);

    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in half..side - half {
        for x in half..side - half {
            let i = y * side + x;
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    sum / count as f64
}
