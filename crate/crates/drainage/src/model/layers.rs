//! Layer-wise forward/backward kernels: affine, rectifier, 3×3-style
//! same-padded convolution, and 2×2 max-pooling. Each backward routine is
//! the exact adjoint of its forward pass; the models compose them with
//! cached activations instead of a general tape.

/// y = W·x + b, with `w` laid out row-major as `out_dim × in_dim`.
pub fn affine_forward(x: &[f64], w: &[f64], b: &[f64], out: &mut [f64]) {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), out.len() * in_dim);
    debug_assert_eq!(b.len(), out.len());
    for (o, out_v) in out.iter_mut().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wv, xv) in row.iter().zip(x) {
            acc += wv * xv;
        }
        *out_v = acc;
    }
}

/// Accumulates dW += dy ⊗ x and db += dy.
pub fn affine_backward_params(x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let in_dim = x.len();
    for (o, &g) in dy.iter().enumerate() {
        db[o] += g;
        let row = &mut dw[o * in_dim..(o + 1) * in_dim];
        for (wv, xv) in row.iter_mut().zip(x) {
            *wv += g * xv;
        }
    }
}

/// dx = Wᵀ·dy.
pub fn affine_backward_input(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let in_dim = dx.len();
    dx.fill(0.0);
    for (o, &g) in dy.iter().enumerate() {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        for (dxv, wv) in dx.iter_mut().zip(row) {
            *dxv += g * wv;
        }
    }
}

/// max(0, x) in place; the subgradient at 0 is taken as 0.
pub fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes dy wherever the post-activation is not strictly positive.
pub fn relu_backward(post: &[f64], dy: &mut [f64]) {
    for (g, &a) in dy.iter_mut().zip(post) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Shape of a stride-1 convolution with same padding (`pad = k / 2`).
#[derive(Debug, Clone, Copy)]
pub struct ConvShape {
    pub in_ch: usize,
    pub out_ch: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn input_len(&self) -> usize {
        self.in_ch * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.out_ch * self.h * self.w
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.k * self.k
    }

    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }
}

/// x: `in_ch × h × w`, weights: `out_ch × in_ch × k × k`, out: `out_ch × h × w`.
pub fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], s: &ConvShape, out: &mut [f64]) {
    debug_assert_eq!(x.len(), s.input_len());
    debug_assert_eq!(out.len(), s.output_len());
    let (h, wd, k) = (s.h as isize, s.w as isize, s.k as isize);
    let pad = s.pad();
    let plane = (s.h * s.w) as isize;

    for oc in 0..s.out_ch {
        let w_oc = &w[oc * s.in_ch * s.k * s.k..(oc + 1) * s.in_ch * s.k * s.k];
        let out_oc = &mut out[oc * s.h * s.w..(oc + 1) * s.h * s.w];
        out_oc.fill(b[oc]);
        for ic in 0..s.in_ch {
            let x_ic = &x[(ic as isize * plane) as usize..((ic as isize + 1) * plane) as usize];
            let w_ic = &w_oc[ic * s.k * s.k..(ic + 1) * s.k * s.k];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = w_ic[(ky * k + kx) as usize];
                    if wv == 0.0 {
                        continue;
                    }
                    let dy = ky - pad;
                    let dx = kx - pad;
                    let y0 = 0.max(-dy);
                    let y1 = h.min(h - dy);
                    let x0 = 0.max(-dx);
                    let x1 = wd.min(wd - dx);
                    for y in y0..y1 {
                        let src = (y + dy) * wd + dx;
                        let dst = y * wd;
                        for xpos in x0..x1 {
                            out_oc[(dst + xpos) as usize] += wv * x_ic[(src + xpos) as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Accumulates dW, db and writes dx (when given) for the same-padded
/// convolution.
pub fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    s: &ConvShape,
    dx: Option<&mut [f64]>,
    dw: &mut [f64],
    db: &mut [f64],
) {
    let (h, wd, k) = (s.h as isize, s.w as isize, s.k as isize);
    let pad = s.pad();
    let plane = s.h * s.w;

    for oc in 0..s.out_ch {
        let dy_oc = &dy[oc * plane..(oc + 1) * plane];
        db[oc] += dy_oc.iter().sum::<f64>();
        for ic in 0..s.in_ch {
            let x_ic = &x[ic * plane..(ic + 1) * plane];
            let dw_ic =
                &mut dw[(oc * s.in_ch + ic) * s.k * s.k..(oc * s.in_ch + ic + 1) * s.k * s.k];
            for ky in 0..k {
                for kx in 0..k {
                    let dyk = ky - pad;
                    let dxk = kx - pad;
                    let y0 = 0.max(-dyk);
                    let y1 = h.min(h - dyk);
                    let x0 = 0.max(-dxk);
                    let x1 = wd.min(wd - dxk);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let src = (y + dyk) * wd + dxk;
                        let dst = y * wd;
                        for xpos in x0..x1 {
                            acc += dy_oc[(dst + xpos) as usize] * x_ic[(src + xpos) as usize];
                        }
                    }
                    dw_ic[(ky * k + kx) as usize] += acc;
                }
            }
        }
    }

    if let Some(dx) = dx {
        dx.fill(0.0);
        for oc in 0..s.out_ch {
            let dy_oc = &dy[oc * plane..(oc + 1) * plane];
            for ic in 0..s.in_ch {
                let dx_ic = &mut dx[ic * plane..(ic + 1) * plane];
                let w_ic =
                    &w[(oc * s.in_ch + ic) * s.k * s.k..(oc * s.in_ch + ic + 1) * s.k * s.k];
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = w_ic[(ky * k + kx) as usize];
                        if wv == 0.0 {
                            continue;
                        }
                        let dyk = ky - pad;
                        let dxk = kx - pad;
                        let y0 = 0.max(-dyk);
                        let y1 = h.min(h - dyk);
                        let x0 = 0.max(-dxk);
                        let x1 = wd.min(wd - dxk);
                        for y in y0..y1 {
                            let src = (y + dyk) * wd + dxk;
                            let dst = y * wd;
                            for xpos in x0..x1 {
                                dx_ic[(src + xpos) as usize] += wv * dy_oc[(dst + xpos) as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 max-pool with stride 2; trailing odd rows/columns are dropped.
/// `argmax` records the flat input index that won each output cell.
pub fn maxpool2_forward(
    x: &[f64],
    ch: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [f64],
) {
    let oh = h / 2;
    let ow = w / 2;
    debug_assert_eq!(out.len(), ch * oh * ow);
    for c in 0..ch {
        let x_c = &x[c * h * w..(c + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let candidates = [base, base + 1, base + w, base + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if x_c[idx] > x_c[best] {
                        best = idx;
                    }
                }
                let o = c * oh * ow + oy * ow + ox;
                out[o] = x_c[best];
                argmax[o] = (c * h * w + best) as f64;
            }
        }
    }
}

/// Routes each pooled gradient back to the recorded argmax position.
pub fn maxpool2_backward(dy: &[f64], argmax: &[f64], dx: &mut [f64]) {
    dx.fill(0.0);
    for (g, &idx) in dy.iter().zip(argmax) {
        dx[idx as usize] += g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn affine_round_trip_against_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (in_dim, out_dim) = (4, 3);
        let x: Vec<f64> = (0..in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..in_dim * out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..out_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // Scalar objective: dy · y.
        let objective = |w: &[f64], b: &[f64], x: &[f64]| {
            let mut y = vec![0.0; out_dim];
            affine_forward(x, w, b, &mut y);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut dx = vec![0.0; x.len()];
        affine_backward_params(&x, &dy, &mut dw, &mut db);
        affine_backward_input(&w, &dy, &mut dx);

        let h = 1e-6;
        for i in 0..w.len() {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let num = (objective(&wp, &b, &x) - objective(&wm, &b, &x)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-8);
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (objective(&w, &b, &xp) - objective(&w, &b, &xm)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = ConvShape {
            in_ch: 2,
            out_ch: 3,
            h: 5,
            w: 4,
            k: 3,
        };
        let x: Vec<f64> = (0..s.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..s.weight_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..s.out_ch).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..s.output_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let objective = |x: &[f64], w: &[f64], b: &[f64]| {
            let mut y = vec![0.0; s.output_len()];
            conv2d_forward(x, w, b, &s, &mut y);
            y.iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; b.len()];
        let mut dx = vec![0.0; x.len()];
        conv2d_backward(&x, &w, &dy, &s, Some(&mut dx), &mut dw, &mut db);

        let h = 1e-6;
        for i in (0..w.len()).step_by(7) {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let num = (objective(&x, &wp, &b) - objective(&x, &wm, &b)) / (2.0 * h);
            assert!((num - dw[i]).abs() < 1e-7, "dw[{i}]: {num} vs {}", dw[i]);
        }
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let num = (objective(&xp, &w, &b) - objective(&xm, &w, &b)) / (2.0 * h);
            assert!((num - dx[i]).abs() < 1e-7, "dx[{i}]: {num} vs {}", dx[i]);
        }
        for i in 0..b.len() {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[i] += h;
            bm[i] -= h;
            let num = (objective(&x, &w, &bp) - objective(&x, &w, &bm)) / (2.0 * h);
            assert!((num - db[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn maxpool_selects_and_routes() {
        // One channel, 3×4 input: pooled output is 1×2, trailing row dropped.
        let x = vec![
            1.0, 5.0, 2.0, 2.0, //
            3.0, 0.0, 8.0, 1.0, //
            9.0, 9.0, 9.0, 9.0,
        ];
        let mut out = vec![0.0; 2];
        let mut arg = vec![0.0; 2];
        maxpool2_forward(&x, 1, 3, 4, &mut out, &mut arg);
        assert_eq!(out, vec![5.0, 8.0]);
        assert_eq!(arg, vec![1.0, 6.0]);

        let mut dx = vec![0.0; x.len()];
        maxpool2_backward(&[0.5, -2.0], &arg, &mut dx);
        assert_eq!(dx[1], 0.5);
        assert_eq!(dx[6], -2.0);
        assert_eq!(dx.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn relu_masks_non_positive() {
        let mut x = vec![-1.0, 0.0, 2.0];
        relu_forward(&mut x);
        assert_eq!(x, vec![0.0, 0.0, 2.0]);
        let mut dy = vec![1.0, 1.0, 1.0];
        relu_backward(&x, &mut dy);
        assert_eq!(dy, vec![0.0, 0.0, 1.0]);
    }
}
