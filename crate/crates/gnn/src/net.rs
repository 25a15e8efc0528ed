//! Forward pass with an optional activation cache, and its exact reverse pass.

use crate::batch::{GraphBatch, FEATURE_WIDTH};
use crate::config::Pooling;
use crate::params::{Params, Tensor, EDGE_TYPES};
use crate::scalar::{axpy, dot, leaky, leaky_grad, matmul, Scalar};
use crate::GnnError;

/// Slope of the attention nonlinearity.
const ATT_SLOPE: f64 = 0.2;
/// Slope of every other hidden activation.
const ACT_SLOPE: f64 = 0.01;

struct LayerCache<S> {
    s: Vec<S>,
    t: Vec<S>,
    alpha: Vec<S>,
    agg: Vec<S>,
    pre1: Vec<S>,
    u: Vec<S>,
}

struct Cache<S> {
    emb_in: Vec<Vec<S>>,
    emb_pre: Vec<Vec<S>>,
    hs: Vec<Vec<S>>,
    layers: Vec<LayerCache<S>>,
    pools: Vec<Vec<S>>,
    argmax: Vec<Vec<usize>>,
    vin: Vec<S>,
    vpre: Vec<S>,
    vact: Vec<S>,
}

/// Raw network outputs: one logit per operation node and one value per graph.
pub struct Forward<S> {
    pub logits: Vec<S>,
    pub values: Vec<S>,
    cache: Option<Cache<S>>,
}

impl<S> Forward<S> {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

fn linear<S: Scalar>(x: &[S], n: usize, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Vec<S> {
    let mut y = vec![S::zero(); n * w.cols];
    matmul(n, w.rows, w.cols, x, false, &w.data, false, &mut y, false);
    if let Some(b) = b {
        for row in y.chunks_mut(w.cols) {
            for (v, bb) in row.iter_mut().zip(&b.data) {
                *v = *v + *bb;
            }
        }
    }
    y
}

fn col_sum_into<S: Scalar>(acc: &mut [S], dy: &[S]) {
    for row in dy.chunks(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a = *a + *v;
        }
    }
}

/// Adds `x^T dy` to the weight gradient and returns `dy W^T` added to `dx`.
fn linear_back<S: Scalar>(x: &[S], n: usize, w: &Tensor<S>, dy: &[S], gw: &mut [S], dx: Option<&mut [S]>) {
    matmul(w.rows, n, w.cols, x, true, dy, false, gw, true);
    if let Some(dx) = dx {
        matmul(n, w.cols, w.rows, dy, false, &w.data, true, dx, true);
    }
}

fn check_finite<S: Scalar>(x: &[S], layer: usize) -> Result<(), GnnError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(GnnError::NonFinite { layer })
    }
}

/// Runs the network on a batch. With `keep` the activations needed by
/// [`backward`] are retained.
///
/// Layer 0 in [`GnnError::NonFinite`] is the node embedder; layers `1..=L`
/// are the message-passing layers, and `L + 1` the output heads.
pub fn forward<S: Scalar>(p: &Params<S>, batch: &GraphBatch, keep: bool) -> Result<Forward<S>, GnnError> {
    let c = p.config();
    let (n, d, heads) = (batch.n_nodes, c.hidden_dim, c.n_heads);
    let kd = heads * d;
    let lay = &p.layout;
    let t = &p.tensors;
    let act = S::from_f64(ACT_SLOPE);
    let att_slope = S::from_f64(ATT_SLOPE);
    let n_graphs = batch.n_graphs();
    if c.pooling == Pooling::LearnedNode && batch.graphs.iter().any(|g| g.global.is_none()) {
        return Err(GnnError::BadGraph(
            "learned_node pooling needs graphs built with the global node".into(),
        ));
    }

    let in_w = FEATURE_WIDTH + c.machine_dim;
    let mut x = vec![S::zero(); n * in_w];
    let memb = &t[lay.machine].data;
    for i in 0..n {
        let m = batch.machine[i];
        if m >= c.max_machines {
            return Err(GnnError::MachineOutOfRange {
                machine: m,
                max: c.max_machines,
            });
        }
        let row = &mut x[i * in_w..(i + 1) * in_w];
        for (r, f) in row.iter_mut().zip(&batch.features[i * FEATURE_WIDTH..(i + 1) * FEATURE_WIDTH]) {
            *r = S::from_f64(*f);
        }
        row[FEATURE_WIDTH..].copy_from_slice(&memb[m * c.machine_dim..(m + 1) * c.machine_dim]);
    }
    let mut emb_in = Vec::new();
    let mut emb_pre = Vec::new();
    for (k, &(w, b)) in lay.embed.iter().enumerate() {
        let pre = linear(&x, n, &t[w], Some(&t[b]));
        let out = if k + 1 == lay.embed.len() {
            pre.clone()
        } else {
            pre.iter().map(|&v| leaky(v, act)).collect()
        };
        emb_in.push(std::mem::replace(&mut x, out));
        emb_pre.push(pre);
    }
    if let Some(gi) = lay.global {
        for g in &batch.graphs {
            if let Some(node) = g.global {
                x[node * d..(node + 1) * d].copy_from_slice(&t[gi].data);
            }
        }
    }
    check_finite(&x, 0)?;
    let mut hs = vec![x];

    let etab = &t[lay.edge].data;
    let mut layers = Vec::new();
    for (l, li) in lay.layers.iter().enumerate() {
        let h = hs.last().unwrap();
        let s = linear(h, n, &t[li.w_src], Some(&t[li.b_src]));
        let tt = linear(h, n, &t[li.w_dst], None);
        let pe = linear(etab, EDGE_TYPES, &t[li.w_edge], None);
        let att = &t[li.att].data;
        let ne = batch.n_edges();
        let mut alpha = vec![S::zero(); ne * heads];
        let mut agg = vec![S::zero(); n * kd];
        let mut buf = vec![S::zero(); kd];
        for i in 0..n {
            let (e0, e1) = (batch.dst_offsets[i], batch.dst_offsets[i + 1]);
            if e0 == e1 {
                continue;
            }
            let ti = &tt[i * kd..(i + 1) * kd];
            for e in e0..e1 {
                let (j, ty) = (batch.edge_src[e], batch.edge_ty[e]);
                let sj = &s[j * kd..(j + 1) * kd];
                let pt = &pe[ty * kd..(ty + 1) * kd];
                for (((f, &a), &b), &c) in buf.iter_mut().zip(sj).zip(ti).zip(pt) {
                    *f = leaky(a + b + c, att_slope);
                }
                for (k, (fk, ak)) in buf.chunks_exact(d).zip(att.chunks_exact(d)).enumerate() {
                    alpha[e * heads + k] = dot(fk, ak);
                }
            }
            for k in 0..heads {
                let mx = (e0..e1)
                    .map(|e| alpha[e * heads + k])
                    .fold(S::neg_infinity(), S::max);
                let mut sum = S::zero();
                for e in e0..e1 {
                    let v = (alpha[e * heads + k] - mx).exp();
                    alpha[e * heads + k] = v;
                    sum = sum + v;
                }
                for e in e0..e1 {
                    alpha[e * heads + k] = alpha[e * heads + k] / sum;
                }
            }
            let out = &mut agg[i * kd..(i + 1) * kd];
            for e in e0..e1 {
                let (j, ty) = (batch.edge_src[e], batch.edge_ty[e]);
                let sj = &s[j * kd..(j + 1) * kd];
                let pt = &pe[ty * kd..(ty + 1) * kd];
                for ((m, &a), &b) in buf.iter_mut().zip(sj).zip(pt) {
                    *m = a + b;
                }
                for (k, (ok, mk)) in out.chunks_exact_mut(d).zip(buf.chunks_exact(d)).enumerate() {
                    axpy(ok, alpha[e * heads + k], mk);
                }
            }
        }
        let pre1 = linear(&agg, n, &t[li.w1], Some(&t[li.b1]));
        let u: Vec<S> = pre1.iter().map(|&v| leaky(v, act)).collect();
        let v = linear(&u, n, &t[li.w2], Some(&t[li.b2]));
        let next: Vec<S> = if c.residual {
            h.iter().zip(&v).map(|(a, b)| *a + *b).collect()
        } else {
            v
        };
        check_finite(&next, l + 1)?;
        if keep {
            layers.push(LayerCache {
                s,
                t: tt,
                alpha,
                agg,
                pre1,
                u,
            });
        }
        hs.push(next);
    }

    let mut pools = Vec::with_capacity(hs.len());
    let mut argmax = Vec::with_capacity(hs.len());
    for h in &hs {
        let mut g = vec![S::zero(); n_graphs * d];
        let mut am = vec![0usize; n_graphs * d];
        for (gi, span) in batch.graphs.iter().enumerate() {
            let out = &mut g[gi * d..(gi + 1) * d];
            match c.pooling {
                Pooling::LearnedNode => {
                    let node = span.global.unwrap();
                    out.copy_from_slice(&h[node * d..(node + 1) * d]);
                }
                Pooling::MeanMax => {
                    let inv = S::one() / S::from_f64(span.n_ops as f64);
                    for ch in 0..d {
                        let mut sum = S::zero();
                        let mut best = span.node_start;
                        for node in span.node_start..span.node_start + span.n_ops {
                            let v = h[node * d + ch];
                            sum = sum + v;
                            if v > h[best * d + ch] {
                                best = node;
                            }
                        }
                        out[ch] = sum * inv + h[best * d + ch];
                        am[gi * d + ch] = best;
                    }
                }
            }
        }
        pools.push(g);
        argmax.push(am);
    }

    let aw = &t[lay.action_w].data;
    let ab = t[lay.action_b].data[0];
    let mut logits = vec![S::zero(); batch.n_logits()];
    for (gi, span) in batch.graphs.iter().enumerate() {
        let mut shared = ab;
        for (l, g) in pools.iter().enumerate() {
            let wg = &aw[l * 2 * d + d..(l + 1) * 2 * d];
            shared = shared + g[gi * d..(gi + 1) * d].iter().zip(wg).map(|(a, b)| *a * *b).sum();
        }
        for idx in span.logit_start..span.logit_start + span.n_ops {
            let node = batch.op_node[idx];
            let mut v = shared;
            for (l, h) in hs.iter().enumerate() {
                let wh = &aw[l * 2 * d..l * 2 * d + d];
                v = v + h[node * d..(node + 1) * d].iter().zip(wh).map(|(a, b)| *a * *b).sum();
            }
            logits[idx] = v;
        }
    }

    let width = hs.len() * d;
    let mut vin = vec![S::zero(); n_graphs * width];
    for gi in 0..n_graphs {
        for (l, g) in pools.iter().enumerate() {
            vin[gi * width + l * d..gi * width + (l + 1) * d].copy_from_slice(&g[gi * d..(gi + 1) * d]);
        }
    }
    let vpre = linear(&vin, n_graphs, &t[lay.value_w1], Some(&t[lay.value_b1]));
    let vact: Vec<S> = vpre.iter().map(|&v| leaky(v, act)).collect();
    let values = linear(&vact, n_graphs, &t[lay.value_w2], Some(&t[lay.value_b2]));
    check_finite(&logits, c.n_layers + 1)?;
    check_finite(&values, c.n_layers + 1)?;

    let cache = keep.then_some(Cache {
        emb_in,
        emb_pre,
        hs,
        layers,
        pools,
        argmax,
        vin,
        vpre,
        vact,
    });
    Ok(Forward {
        logits,
        values,
        cache,
    })
}

/// Gradient of `sum(dlogits * logits) + sum(dvalues * values)` with respect
/// to every parameter.
///
/// Panics if `fwd` was computed without the cache or for another batch.
pub fn backward<S: Scalar>(
    p: &Params<S>,
    batch: &GraphBatch,
    fwd: &Forward<S>,
    dlogits: &[S],
    dvalues: &[S],
) -> Params<S> {
    let cache = fwd.cache.as_ref().expect("forward must be run with keep = true");
    let c = p.config();
    let (n, d, heads) = (batch.n_nodes, c.hidden_dim, c.n_heads);
    let kd = heads * d;
    let lay = &p.layout;
    let t = &p.tensors;
    let act = S::from_f64(ACT_SLOPE);
    let att_slope = S::from_f64(ATT_SLOPE);
    let n_graphs = batch.n_graphs();
    assert_eq!(dlogits.len(), batch.n_logits());
    assert_eq!(dvalues.len(), n_graphs);
    let mut grads = p.zeros_like();
    let g = &mut grads.tensors;
    let levels = cache.hs.len();
    let mut dpools = vec![vec![S::zero(); n_graphs * d]; levels];
    let mut dhs = vec![vec![S::zero(); n * d]; levels];

    // Value head.
    g[lay.value_b2].data[0] = dvalues.iter().copied().sum();
    linear_back(&cache.vact, n_graphs, &t[lay.value_w2], dvalues, &mut g[lay.value_w2].data, None);
    let mut dvact = vec![S::zero(); n_graphs * d];
    matmul(n_graphs, 1, d, dvalues, false, &t[lay.value_w2].data, true, &mut dvact, false);
    for (dv, pre) in dvact.iter_mut().zip(&cache.vpre) {
        *dv = *dv * leaky_grad(*pre, act);
    }
    col_sum_into(&mut g[lay.value_b1].data, &dvact);
    let width = levels * d;
    let mut dvin = vec![S::zero(); n_graphs * width];
    linear_back(
        &cache.vin,
        n_graphs,
        &t[lay.value_w1],
        &dvact,
        &mut g[lay.value_w1].data,
        Some(&mut dvin),
    );
    for gi in 0..n_graphs {
        for (l, dp) in dpools.iter_mut().enumerate() {
            for ch in 0..d {
                dp[gi * d + ch] = dp[gi * d + ch] + dvin[gi * width + l * d + ch];
            }
        }
    }

    // Action head.
    let aw = &t[lay.action_w].data;
    let gaw = &mut g[lay.action_w].data;
    let mut gab = S::zero();
    for (gi, span) in batch.graphs.iter().enumerate() {
        for idx in span.logit_start..span.logit_start + span.n_ops {
            let dl = dlogits[idx];
            if dl == S::zero() {
                continue;
            }
            gab = gab + dl;
            let node = batch.op_node[idx];
            for l in 0..levels {
                let base = l * 2 * d;
                let h = &cache.hs[l][node * d..(node + 1) * d];
                let pool = &cache.pools[l][gi * d..(gi + 1) * d];
                for ch in 0..d {
                    gaw[base + ch] = gaw[base + ch] + dl * h[ch];
                    dhs[l][node * d + ch] = dhs[l][node * d + ch] + dl * aw[base + ch];
                    gaw[base + d + ch] = gaw[base + d + ch] + dl * pool[ch];
                    dpools[l][gi * d + ch] = dpools[l][gi * d + ch] + dl * aw[base + d + ch];
                }
            }
        }
    }
    g[lay.action_b].data[0] = gab;

    // Pooling.
    for l in 0..levels {
        for (gi, span) in batch.graphs.iter().enumerate() {
            let dg = &dpools[l][gi * d..(gi + 1) * d];
            match c.pooling {
                Pooling::LearnedNode => {
                    let node = span.global.unwrap();
                    for ch in 0..d {
                        dhs[l][node * d + ch] = dhs[l][node * d + ch] + dg[ch];
                    }
                }
                Pooling::MeanMax => {
                    let inv = S::one() / S::from_f64(span.n_ops as f64);
                    for ch in 0..d {
                        let share = dg[ch] * inv;
                        for node in span.node_start..span.node_start + span.n_ops {
                            dhs[l][node * d + ch] = dhs[l][node * d + ch] + share;
                        }
                        let best = cache.argmax[l][gi * d + ch];
                        dhs[l][best * d + ch] = dhs[l][best * d + ch] + dg[ch];
                    }
                }
            }
        }
    }

    // Message-passing layers, top down.
    let etab = &t[lay.edge].data;
    let mut dseg: Vec<S> = Vec::new();
    for l in (0..lay.layers.len()).rev() {
        let li = &lay.layers[l];
        let lc = &cache.layers[l];
        let h = &cache.hs[l];
        let dout = std::mem::take(&mut dhs[l + 1]);
        let dh = &mut dhs[l];
        if c.residual {
            for (a, b) in dh.iter_mut().zip(&dout) {
                *a = *a + *b;
            }
        }

        col_sum_into(&mut g[li.b2].data, &dout);
        let mut du = vec![S::zero(); n * d];
        linear_back(&lc.u, n, &t[li.w2], &dout, &mut g[li.w2].data, Some(&mut du));
        for (v, pre) in du.iter_mut().zip(&lc.pre1) {
            *v = *v * leaky_grad(*pre, act);
        }
        col_sum_into(&mut g[li.b1].data, &du);
        let mut dagg = vec![S::zero(); n * kd];
        linear_back(&lc.agg, n, &t[li.w1], &du, &mut g[li.w1].data, Some(&mut dagg));

        let pe = linear(etab, EDGE_TYPES, &t[li.w_edge], None);
        let att = &t[li.att].data;
        let mut ds = vec![S::zero(); n * kd];
        let mut dt = vec![S::zero(); n * kd];
        let mut dp = vec![S::zero(); EDGE_TYPES * kd];
        let gatt = &mut g[li.att].data;
        let mut m = vec![S::zero(); kd];
        let mut dz = vec![S::zero(); kd];
        for i in 0..n {
            let (e0, e1) = (batch.dst_offsets[i], batch.dst_offsets[i + 1]);
            if e0 == e1 {
                continue;
            }
            let da_i = &dagg[i * kd..(i + 1) * kd];
            let ti = &lc.t[i * kd..(i + 1) * kd];
            dseg.clear();
            dseg.resize((e1 - e0) * heads, S::zero());
            for e in e0..e1 {
                let (j, ty) = (batch.edge_src[e], batch.edge_ty[e]);
                let sj = &lc.s[j * kd..(j + 1) * kd];
                let pt = &pe[ty * kd..(ty + 1) * kd];
                for ((v, &a), &b) in m.iter_mut().zip(sj).zip(pt) {
                    *v = a + b;
                }
                for k in 0..heads {
                    let a = lc.alpha[e * heads + k];
                    let h = k * d..(k + 1) * d;
                    dseg[(e - e0) * heads + k] = dot(&da_i[h.clone()], &m[h.clone()]);
                    axpy(&mut ds[j * kd..(j + 1) * kd][h.clone()], a, &da_i[h.clone()]);
                    axpy(&mut dp[ty * kd..(ty + 1) * kd][h.clone()], a, &da_i[h]);
                }
            }
            let mut means = [S::zero(); 16];
            let mut means_vec;
            let means: &mut [S] = if heads <= 16 {
                &mut means[..heads]
            } else {
                means_vec = vec![S::zero(); heads];
                &mut means_vec
            };
            for (k, mk) in means.iter_mut().enumerate() {
                *mk = (e0..e1)
                    .map(|e| lc.alpha[e * heads + k] * dseg[(e - e0) * heads + k])
                    .sum();
            }
            for e in e0..e1 {
                let (j, ty) = (batch.edge_src[e], batch.edge_ty[e]);
                let sj = &lc.s[j * kd..(j + 1) * kd];
                let pt = &pe[ty * kd..(ty + 1) * kd];
                let mut any = false;
                for k in 0..heads {
                    let dscore = lc.alpha[e * heads + k] * (dseg[(e - e0) * heads + k] - means[k]);
                    let h = k * d..(k + 1) * d;
                    if dscore == S::zero() {
                        dz[h].fill(S::zero());
                        continue;
                    }
                    any = true;
                    let zsum = sj[h.clone()].iter().zip(&ti[h.clone()]).zip(&pt[h.clone()]);
                    for (((dzq, ga), &aq), ((&a, &b), &c)) in
                        dz[h.clone()].iter_mut().zip(&mut gatt[h.clone()]).zip(&att[h]).zip(zsum)
                    {
                        let zq = a + b + c;
                        *ga = *ga + dscore * leaky(zq, att_slope);
                        *dzq = dscore * aq * leaky_grad(zq, att_slope);
                    }
                }
                if any {
                    axpy(&mut ds[j * kd..(j + 1) * kd], S::one(), &dz);
                    axpy(&mut dt[i * kd..(i + 1) * kd], S::one(), &dz);
                    axpy(&mut dp[ty * kd..(ty + 1) * kd], S::one(), &dz);
                }
            }
        }
        col_sum_into(&mut g[li.b_src].data, &ds);
        linear_back(h, n, &t[li.w_src], &ds, &mut g[li.w_src].data, Some(dh));
        linear_back(h, n, &t[li.w_dst], &dt, &mut g[li.w_dst].data, Some(dh));
        linear_back(etab, EDGE_TYPES, &t[li.w_edge], &dp, &mut g[li.w_edge].data, None);
        matmul(EDGE_TYPES, kd, d, &dp, false, &t[li.w_edge].data, true, &mut g[lay.edge].data, true);
    }

    // Node embedder.
    let mut dx = std::mem::take(&mut dhs[0]);
    if let Some(gi) = lay.global {
        for span in &batch.graphs {
            if let Some(node) = span.global {
                for ch in 0..d {
                    g[gi].data[ch] = g[gi].data[ch] + dx[node * d + ch];
                    dx[node * d + ch] = S::zero();
                }
            }
        }
    }
    for k in (0..lay.embed.len()).rev() {
        let (w, b) = lay.embed[k];
        if k + 1 != lay.embed.len() {
            for (v, pre) in dx.iter_mut().zip(&cache.emb_pre[k]) {
                *v = *v * leaky_grad(*pre, act);
            }
        }
        col_sum_into(&mut g[b].data, &dx);
        let mut dprev = vec![S::zero(); n * t[w].rows];
        linear_back(&cache.emb_in[k], n, &t[w], &dx, &mut g[w].data, Some(&mut dprev));
        dx = dprev;
    }
    let in_w = FEATURE_WIDTH + c.machine_dim;
    let gm = &mut g[lay.machine].data;
    for i in 0..n {
        let m = batch.machine[i];
        for ch in 0..c.machine_dim {
            gm[m * c.machine_dim + ch] = gm[m * c.machine_dim + ch] + dx[i * in_w + FEATURE_WIDTH + ch];
        }
    }
    grads
}
