//! Slow, direct reference implementations for cross-checking texgram.
//!
//! Everything here is written from the textbook definitions with plain
//! loops in `f64`, sharing no code with the implementations under test.

use texgram_core::engine::{LayerKind, NetworkGraph, Window};

/// A `C×H×W` activation in `f64`.
#[derive(Debug, Clone)]
pub struct Act {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    fn at(&self, c: usize, y: isize, x: isize) -> Option<f64> {
        if y < 0 || x < 0 || y as usize >= self.h || x as usize >= self.w {
            return None;
        }
        Some(self.data[(c * self.h + y as usize) * self.w + x as usize])
    }
}

/// Tap activations plus a signature of every piecewise-linear branch taken
/// (ReLU signs and max-pool winners). Two points with equal signatures lie
/// in the same linear region of the network.
pub struct Reference {
    pub taps: Vec<Act>,
    pub signature: Vec<u64>,
}

fn out_extent(h: usize, k: usize, s: usize, p: usize) -> usize {
    (h + 2 * p - k) / s + 1
}

fn conv(x: &Act, weight: &[f32], shape: &[usize], bias: Option<&[f32]>, stride: [usize; 2], pad: [usize; 2]) -> Act {
    let (k, c, kh, kw) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(c, x.c);
    let oh = out_extent(x.h, kh, stride[0], pad[0]);
    let ow = out_extent(x.w, kw, stride[1], pad[1]);
    let mut data = vec![0.0; k * oh * ow];
    for o in 0..k {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias.map_or(0.0, |b| b[o] as f64);
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let y = (oy * stride[0] + ky) as isize - pad[0] as isize;
                            let xx = (ox * stride[1] + kx) as isize - pad[1] as isize;
                            if let Some(v) = x.at(ci, y, xx) {
                                s += v * weight[((o * c + ci) * kh + ky) * kw + kx] as f64;
                            }
                        }
                    }
                }
                data[(o * oh + oy) * ow + ox] = s;
            }
        }
    }
    Act { c: k, h: oh, w: ow, data }
}

fn maxpool(x: &Act, win: &Window, sig: &mut Vec<u64>) -> Act {
    let oh = out_extent(x.h, win.kernel[0], win.stride[0], win.padding[0]);
    let ow = out_extent(x.w, win.kernel[1], win.stride[1], win.padding[1]);
    let mut data = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best: Option<(f64, u64)> = None;
                for ky in 0..win.kernel[0] {
                    for kx in 0..win.kernel[1] {
                        let y = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                        let xx = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        if let Some(v) = x.at(c, y, xx) {
                            if best.is_none_or(|(b, _)| v > b) {
                                best = Some((v, (ky * win.kernel[1] + kx) as u64));
                            }
                        }
                    }
                }
                let (v, arg) = best.expect("window overlaps the input");
                sig.push(arg);
                data.push(v);
            }
        }
    }
    Act { c: x.c, h: oh, w: ow, data }
}

fn avgpool(x: &Act, win: &Window, include_pad: bool) -> Act {
    let oh = out_extent(x.h, win.kernel[0], win.stride[0], win.padding[0]);
    let ow = out_extent(x.w, win.kernel[1], win.stride[1], win.padding[1]);
    let mut data = Vec::with_capacity(x.c * oh * ow);
    for c in 0..x.c {
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut s, mut inside, mut padded) = (0.0, 0usize, 0usize);
                for ky in 0..win.kernel[0] {
                    for kx in 0..win.kernel[1] {
                        let y = (oy * win.stride[0] + ky) as isize - win.padding[0] as isize;
                        let xx = (ox * win.stride[1] + kx) as isize - win.padding[1] as isize;
                        // positions inside input-plus-padding count toward the divisor
                        let in_padded = y < (x.h + win.padding[0]) as isize && xx < (x.w + win.padding[1]) as isize;
                        if in_padded {
                            padded += 1;
                        }
                        if let Some(v) = x.at(c, y, xx) {
                            s += v;
                            inside += 1;
                        }
                    }
                }
                let d = if include_pad { padded } else { inside };
                data.push(if d > 0 { s / d as f64 } else { 0.0 });
            }
        }
    }
    Act { c: x.c, h: oh, w: ow, data }
}

/// Runs every node of `net` on `image` (normalized pixels, `C×H×W`).
pub fn reference_forward(net: &NetworkGraph, image: &[f64]) -> Reference {
    let [c, h, w] = net.input_spec().shape;
    let input = Act { c, h, w, data: image.to_vec() };
    let mut values: Vec<(String, Act)> = Vec::new();
    let mut sig = Vec::new();
    let lookup = |values: &Vec<(String, Act)>, name: &str| -> Act {
        if name == "input" {
            return input.clone();
        }
        values.iter().find(|(n, _)| n == name).expect("topological order").1.clone()
    };
    for node in net.nodes() {
        let ins: Vec<Act> = node.inputs.iter().map(|n| lookup(&values, n)).collect();
        let out = match &node.kind {
            LayerKind::Conv2d { weight, bias, stride, padding } => {
                conv(&ins[0], weight.data(), weight.shape(), bias.as_deref(), *stride, *padding)
            }
            LayerKind::Relu => {
                let mut a = ins[0].clone();
                for v in a.data.iter_mut() {
                    sig.push((*v > 0.0) as u64);
                    *v = v.max(0.0);
                }
                a
            }
            LayerKind::MaxPool(win) => maxpool(&ins[0], win, &mut sig),
            LayerKind::AvgPool { window, count_include_pad } => avgpool(&ins[0], window, *count_include_pad),
            LayerKind::BatchNorm { mean, var, weight, bias, eps } => {
                let mut a = ins[0].clone();
                let plane = a.h * a.w;
                for ci in 0..a.c {
                    let denom = (var[ci] as f64 + eps).sqrt();
                    for v in &mut a.data[ci * plane..(ci + 1) * plane] {
                        *v = (*v - mean[ci] as f64) / denom * weight[ci] as f64 + bias[ci] as f64;
                    }
                }
                a
            }
            LayerKind::Add => {
                let mut a = ins[0].clone();
                for other in &ins[1..] {
                    for (x, y) in a.data.iter_mut().zip(&other.data) {
                        *x += y;
                    }
                }
                a
            }
            LayerKind::Concat => {
                let mut a = ins[0].clone();
                for other in &ins[1..] {
                    a.c += other.c;
                    a.data.extend_from_slice(&other.data);
                }
                a
            }
        };
        values.push((node.name.clone(), out));
    }
    let taps = net.taps().iter().map(|t| lookup(&values, t)).collect();
    Reference { taps, signature: sig }
}

/// Gram matrix `F Fᵀ` of an activation, row-major `C×C`.
pub fn reference_gram(a: &Act) -> Vec<f64> {
    let m = a.h * a.w;
    let mut g = vec![0.0; a.c * a.c];
    for i in 0..a.c {
        for j in 0..a.c {
            let mut s = 0.0;
            for k in 0..m {
                s += a.data[i * m + k] * a.data[j * m + k];
            }
            g[i * a.c + j] = s;
        }
    }
    g
}

/// `Σ_l w_l ‖G_l(image) − T_l‖² / (4 M_l N_l²)` and the branch signature at `image`.
pub fn reference_gram_loss(net: &NetworkGraph, image: &[f64], targets: &[Vec<f64>], weights: &[f64]) -> (f64, Vec<u64>) {
    let r = reference_forward(net, image);
    let mut total = 0.0;
    for ((a, t), w) in r.taps.iter().zip(targets).zip(weights) {
        let g = reference_gram(a);
        let sq: f64 = g.iter().zip(t).map(|(x, y)| (x - y) * (x - y)).sum();
        let n = a.c as f64;
        total += w * sq / (4.0 * (a.h * a.w) as f64 * n * n);
    }
    (total, r.signature)
}

/// One step of [`ward_brute_force`]: the two merged clusters (as sorted item
/// lists) and the merge height.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteMerge {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub height: f64,
}

fn ess(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let d = points[0].len();
    let n = members.len() as f64;
    let mut total = 0.0;
    for k in 0..d {
        let mean = members.iter().map(|&i| points[i][k]).sum::<f64>() / n;
        total += members.iter().map(|&i| (points[i][k] - mean).powi(2)).sum::<f64>();
    }
    total
}

/// Ward clustering straight from its definition: at every step merge the
/// pair of clusters whose union increases the total within-cluster sum of
/// squares the least. The height is `sqrt(2 Δ)`.
pub fn ward_brute_force(points: &[Vec<f64>]) -> Vec<BruteMerge> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let mut u = clusters[i].clone();
                u.extend(&clusters[j]);
                let delta = ess(points, &u) - ess(points, &clusters[i]) - ess(points, &clusters[j]);
                if delta < best.2 {
                    best = (i, j, delta);
                }
            }
        }
        let (i, j, delta) = best;
        let b = clusters.remove(j);
        let a = clusters.remove(i);
        let mut u = a.clone();
        u.extend(&b);
        u.sort_unstable();
        out.push(BruteMerge { a, b, height: (2.0 * delta.max(0.0)).sqrt() });
        clusters.push(u);
    }
    out
}

/// Condensed Euclidean distances (`i < j`, row-major) between points.
pub fn condensed_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let mut s = 0.0;
            for k in 0..points[i].len() {
                s += (points[i][k] - points[j][k]).powi(2);
            }
            out.push(s.sqrt());
        }
    }
    out
}

/// Full `S×S` Euclidean distance matrix, every entry computed on its own.
pub fn naive_rdm(vectors: &[Vec<f64>]) -> Vec<f32> {
    let s = vectors.len();
    let mut out = vec![0f32; s * s];
    for i in 0..s {
        for j in 0..s {
            if i == j {
                continue;
            }
            let mut acc = 0.0f64;
            for k in 0..vectors[i].len() {
                let d = vectors[i][k] - vectors[j][k];
                acc += d * d;
            }
            out[i * s + j] = acc.sqrt() as f32;
        }
    }
    out
}

/// Antialiased bilinear (triangle filter) resampling of one `h×w` plane to
/// `oh×ow`: each output sample averages the input with a tent whose support
/// widens by the downscale ratio, weights renormalized to sum to one.
pub fn triangle_resize(plane: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let axis = |n_in: usize, n_out: usize| -> Vec<Vec<(usize, f64)>> {
        let ratio = n_in as f64 / n_out as f64;
        let scale = ratio.max(1.0);
        (0..n_out)
            .map(|o| {
                let centre = (o as f64 + 0.5) * ratio;
                let mut taps = Vec::new();
                for i in 0..n_in {
                    let t = ((i as f64 + 0.5) - centre).abs() / scale;
                    if t < 1.0 {
                        taps.push((i, 1.0 - t));
                    }
                }
                let z: f64 = taps.iter().map(|t| t.1).sum();
                taps.iter().map(|&(i, v)| (i, v / z)).collect()
            })
            .collect()
    };
    let ry = axis(h, oh);
    let rx = axis(w, ow);
    let mut out = vec![0.0; oh * ow];
    for (oy, ty) in ry.iter().enumerate() {
        for (ox, tx) in rx.iter().enumerate() {
            let mut s = 0.0;
            for &(iy, wy) in ty {
                for &(ix, wx) in tx {
                    s += wy * wx * plane[iy * w + ix];
                }
            }
            out[oy * ow + ox] = s;
        }
    }
    out
}

/// Finite-difference check of one input pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Compares `analytic` (the gradient of the weighted Gram loss at `image`)
/// against central differences of [`reference_gram_loss`] with step `h`.
/// Pixels whose ±h perturbation changes a ReLU sign or a max-pool winner
/// are skipped. Pixels are visited in a scrambled order until `wanted`
/// valid checks are collected.
pub fn gradient_check(
    net: &NetworkGraph,
    image: &[f64],
    targets: &[Vec<f64>],
    weights: &[f64],
    analytic: &[f64],
    h: f64,
    wanted: usize,
) -> Vec<PixelCheck> {
    let (_, base_sig) = reference_gram_loss(net, image, targets, weights);
    let n = image.len();
    // multiplicative stride coprime to n scrambles the visiting order
    let mut stride = (n as f64 * 0.618_033_988_7) as usize | 1;
    while gcd(stride, n) != 1 {
        stride += 2;
    }
    let mut out = Vec::new();
    for t in 0..n {
        if out.len() == wanted {
            break;
        }
        let i = (t * stride + 7) % n;
        let mut x = image.to_vec();
        x[i] = image[i] + h;
        let (fp, sp) = reference_gram_loss(net, &x, targets, weights);
        x[i] = image[i] - h;
        let (fm, sm) = reference_gram_loss(net, &x, targets, weights);
        if sp != base_sig || sm != base_sig {
            continue;
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic[i];
        let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-300);
        out.push(PixelCheck { index: i, analytic: a, numeric, rel_error });
    }
    out
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Member lists `(left, right)` of every merge in a scipy-style linkage
/// where `n + i` names the cluster formed by merge `i`.
pub fn merge_members(n: usize, merges: &[(usize, usize)]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut out = Vec::new();
    for &(l, r) in merges {
        let (a, b) = (members[l].clone(), members[r].clone());
        let mut u = a.clone();
        u.extend(&b);
        u.sort_unstable();
        members.push(u);
        out.push((a, b));
    }
    out
}

/// Whether a linkage performs the same merges, in the same order, as the
/// brute-force sequence, with heights equal to within `rel_tol`.
pub fn same_merges(n: usize, merges: &[(usize, usize, f64)], brute: &[BruteMerge], rel_tol: f64) -> Result<(), String> {
    if merges.len() != brute.len() {
        return Err(format!("{} merges vs {}", merges.len(), brute.len()));
    }
    let pairs: Vec<(usize, usize)> = merges.iter().map(|m| (m.0, m.1)).collect();
    for (step, ((l, r), (m, b))) in merge_members(n, &pairs).into_iter().zip(merges.iter().zip(brute)).enumerate() {
        let mut got = [l, r];
        let mut want = [b.a.clone(), b.b.clone()];
        for v in got.iter_mut().chain(want.iter_mut()) {
            v.sort_unstable();
        }
        got.sort();
        want.sort();
        if got != want {
            return Err(format!("step {step}: merged {got:?}, brute force merged {want:?}"));
        }
        if (m.2 - b.height).abs() > rel_tol * b.height.abs().max(f64::MIN_POSITIVE) {
            return Err(format!("step {step}: height {} vs {}", m.2, b.height));
        }
    }
    Ok(())
}
